//! Agents, pairwise transactions, and their aggregation into field densities.
//!
//! Distribution-function averages are realized empirically: each stochastic
//! realization is binned to the nearest grid node with mass / cell-volume
//! normalization (so quadrature reproduces plain sums exactly), and ensemble
//! quantities are arithmetic means over realizations.

use std::sync::Arc;

use thiserror::Error;

use crate::espace::{integrate_all, integrate_over, Grid, GridError, ScalarField, VectorField};

/// Densities below this threshold are treated as vacuum: velocities are set
/// to zero instead of dividing.
pub const EPS_DENSITY: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum KineticError {
    #[error("particle {index}: {source}")]
    ParticleOutOfBounds { index: usize, source: GridError },
    #[error("transaction {index}: {source}")]
    TransactionOutOfBounds { index: usize, source: GridError },
    #[error("particle {index} has {got} variables, expected index {wanted} to exist")]
    MissingVariable {
        index: usize,
        got: usize,
        wanted: usize,
    },
    #[error("transaction {index} has negative amount {amount}")]
    NegativeAmount { index: usize, amount: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("ensemble has no realizations")]
    EmptyEnsemble,
    #[error("expected a grid over coordinate pairs (even axis count), got {0} axes")]
    OddAxisCount(usize),
}

/// An economic agent: risk coordinates, risk velocity, and its list of
/// economic variable values.
#[derive(Debug, Clone, PartialEq)]
pub struct EParticle {
    pub id: u64,
    pub coords: Vec<f64>,
    pub velocity: Vec<f64>,
    pub variables: Vec<f64>,
}

/// One pairwise exchange: the debtor at `x` receives `amount` per unit time
/// from the creditor at `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionRecord {
    pub debtor_id: u64,
    pub creditor_id: u64,
    pub debtor_coords: Vec<f64>,
    pub creditor_coords: Vec<f64>,
    pub amount: f64,
    pub debtor_velocity: Vec<f64>,
    pub creditor_velocity: Vec<f64>,
}

/// Seeded stochastic realizations standing in for the (unknown) underlying
/// distribution function; averages over it become arithmetic means here.
#[derive(Debug, Clone)]
pub struct EmpiricalEnsemble {
    pub realizations: Vec<Vec<TransactionRecord>>,
    pub seeds: Vec<u64>,
}

impl EmpiricalEnsemble {
    pub fn single(records: Vec<TransactionRecord>) -> Self {
        Self {
            realizations: vec![records],
            seeds: vec![0],
        }
    }
}

/// Per-variable densities, impulse densities, and velocities on a space grid.
#[derive(Debug, Clone)]
pub struct MacroState {
    pub densities: Vec<ScalarField>,
    pub impulses: Vec<VectorField>,
    pub velocities: Vec<VectorField>,
}

impl MacroState {
    /// Aggregate every economic variable carried by the particles.
    pub fn aggregate(particles: &[EParticle], grid: &Arc<Grid>) -> Result<Self, KineticError> {
        let nvars = particles.first().map_or(0, |p| p.variables.len());
        let mut densities = Vec::with_capacity(nvars);
        let mut impulses = Vec::with_capacity(nvars);
        let mut velocities = Vec::with_capacity(nvars);
        for j in 0..nvars {
            let u = macro_density(particles, j, grid)?;
            let p = macro_impulse(particles, j, grid)?;
            let v = macro_velocity(&u, &p)?;
            densities.push(u);
            impulses.push(p);
            velocities.push(v);
        }
        Ok(Self {
            densities,
            impulses,
            velocities,
        })
    }
}

fn bin_particle(
    grid: &Grid,
    coords: &[f64],
    index: usize,
) -> Result<usize, KineticError> {
    grid.nearest_node(coords)
        .map_err(|source| KineticError::ParticleOutOfBounds { index, source })
}

/// Density of economic variable `j`: nearest-node binning of per-particle
/// values, normalized by cell volume so the domain integral is the plain sum.
pub fn macro_density(
    particles: &[EParticle],
    j: usize,
    grid: &Arc<Grid>,
) -> Result<ScalarField, KineticError> {
    let mut field = ScalarField::zeros(grid.clone());
    for (index, p) in particles.iter().enumerate() {
        let value = *p
            .variables
            .get(j)
            .ok_or(KineticError::MissingVariable {
                index,
                got: p.variables.len(),
                wanted: j,
            })?;
        let node = bin_particle(grid, &p.coords, index)?;
        field.values_mut()[node] += value;
    }
    for node in 0..grid.node_count() {
        field.values_mut()[node] /= grid.quad_weight(node);
    }
    Ok(field)
}

/// Impulse density of variable `j`: values weighted by particle velocity.
pub fn macro_impulse(
    particles: &[EParticle],
    j: usize,
    grid: &Arc<Grid>,
) -> Result<VectorField, KineticError> {
    let naxes = grid.num_axes();
    let mut field = VectorField::zeros(grid.clone());
    for (index, p) in particles.iter().enumerate() {
        let value = *p
            .variables
            .get(j)
            .ok_or(KineticError::MissingVariable {
                index,
                got: p.variables.len(),
                wanted: j,
            })?;
        let node = bin_particle(grid, &p.coords, index)?;
        for c in 0..naxes {
            let vel = p.velocity.get(c).copied().unwrap_or(0.0);
            field.values_mut()[node * naxes + c] += value * vel;
        }
    }
    for node in 0..grid.node_count() {
        let w = grid.quad_weight(node);
        for c in 0..naxes {
            field.values_mut()[node * naxes + c] /= w;
        }
    }
    Ok(field)
}

/// Velocity of a macro density: impulse / density where the density is above
/// [`EPS_DENSITY`], zero elsewhere.
pub fn macro_velocity(u: &ScalarField, p: &VectorField) -> Result<VectorField, KineticError> {
    if !(Arc::ptr_eq(u.grid(), p.grid()) || u.grid() == p.grid()) {
        return Err(KineticError::GridMismatch);
    }
    let grid = u.grid().clone();
    let naxes = grid.num_axes();
    let mut v = VectorField::zeros(grid.clone());
    for node in 0..grid.node_count() {
        let density = u.values()[node];
        for c in 0..naxes {
            let val = if density > EPS_DENSITY {
                p.component(node, c) / density
            } else {
                0.0
            };
            v.set_component(node, c, val);
        }
    }
    Ok(v)
}

/// Total rate received by a creditor across all its transactions.
pub fn loans_received(transactions: &[TransactionRecord], creditor_id: u64) -> f64 {
    transactions
        .iter()
        .filter(|t| t.creditor_id == creditor_id)
        .map(|t| t.amount)
        .sum()
}

/// Total rate issued by a debtor-side counterparty id.
pub fn credits_issued(transactions: &[TransactionRecord], debtor_id: u64) -> f64 {
    transactions
        .iter()
        .filter(|t| t.debtor_id == debtor_id)
        .map(|t| t.amount)
        .sum()
}

fn pair_node(
    grid: &Grid,
    record: &TransactionRecord,
    index: usize,
) -> Result<usize, KineticError> {
    let mut z = Vec::with_capacity(grid.num_axes());
    z.extend_from_slice(&record.debtor_coords);
    z.extend_from_slice(&record.creditor_coords);
    grid.nearest_node(&z)
        .map_err(|source| KineticError::TransactionOutOfBounds { index, source })
}

fn check_amounts(transactions: &[TransactionRecord]) -> Result<(), KineticError> {
    for (index, t) in transactions.iter().enumerate() {
        if !(t.amount >= 0.0) {
            return Err(KineticError::NegativeAmount {
                index,
                amount: t.amount,
            });
        }
    }
    Ok(())
}

/// Transaction-amount density on the pair grid: sum of amounts binned to the
/// (debtor-node, creditor-node) pair, normalized so the full-domain integral
/// equals the total transacted amount.
pub fn field_sample(
    transactions: &[TransactionRecord],
    grid: &Arc<Grid>,
) -> Result<ScalarField, KineticError> {
    if grid.num_axes() % 2 != 0 {
        return Err(KineticError::OddAxisCount(grid.num_axes()));
    }
    check_amounts(transactions)?;
    let mut field = ScalarField::zeros(grid.clone());
    for (index, t) in transactions.iter().enumerate() {
        let node = pair_node(grid, t, index)?;
        field.values_mut()[node] += t.amount;
    }
    for node in 0..grid.node_count() {
        field.values_mut()[node] /= grid.quad_weight(node);
    }
    Ok(field)
}

/// Impulse densities of the transaction field: amounts weighted by debtor
/// velocity in the x-block components, and by creditor velocity in the
/// y-block components.
pub fn field_impulses(
    transactions: &[TransactionRecord],
    grid: &Arc<Grid>,
) -> Result<(VectorField, VectorField), KineticError> {
    let naxes = grid.num_axes();
    if naxes % 2 != 0 {
        return Err(KineticError::OddAxisCount(naxes));
    }
    check_amounts(transactions)?;
    let n = naxes / 2;
    let mut p_x = VectorField::zeros(grid.clone());
    let mut p_y = VectorField::zeros(grid.clone());
    for (index, t) in transactions.iter().enumerate() {
        let node = pair_node(grid, t, index)?;
        for c in 0..n {
            let vx = t.debtor_velocity.get(c).copied().unwrap_or(0.0);
            let vy = t.creditor_velocity.get(c).copied().unwrap_or(0.0);
            p_x.values_mut()[node * naxes + c] += t.amount * vx;
            p_y.values_mut()[node * naxes + n + c] += t.amount * vy;
        }
    }
    for node in 0..grid.node_count() {
        let w = grid.quad_weight(node);
        for c in 0..naxes {
            p_x.values_mut()[node * naxes + c] /= w;
            p_y.values_mut()[node * naxes + c] /= w;
        }
    }
    Ok((p_x, p_y))
}

/// Ensemble-mean field density with impulses and velocities.
#[derive(Debug, Clone)]
pub struct FieldDensity {
    pub cl: ScalarField,
    pub p_x: VectorField,
    pub p_y: VectorField,
    pub v_x: VectorField,
    pub v_y: VectorField,
}

/// Mean of per-realization samples and impulses; velocities divide impulse by
/// density above [`EPS_DENSITY`] and are zero elsewhere.
pub fn field_density(
    ensemble: &EmpiricalEnsemble,
    grid: &Arc<Grid>,
) -> Result<FieldDensity, KineticError> {
    if ensemble.realizations.is_empty() {
        return Err(KineticError::EmptyEnsemble);
    }
    let naxes = grid.num_axes();
    let mut cl = ScalarField::zeros(grid.clone());
    let mut p_x = VectorField::zeros(grid.clone());
    let mut p_y = VectorField::zeros(grid.clone());
    for records in &ensemble.realizations {
        let sample = field_sample(records, grid)?;
        let (ix, iy) = field_impulses(records, grid)?;
        for node in 0..grid.node_count() {
            cl.values_mut()[node] += sample.values()[node];
            for c in 0..naxes {
                p_x.values_mut()[node * naxes + c] += ix.values()[node * naxes + c];
                p_y.values_mut()[node * naxes + c] += iy.values()[node * naxes + c];
            }
        }
    }
    let count = ensemble.realizations.len() as f64;
    for v in cl.values_mut() {
        *v /= count;
    }
    for v in p_x.values_mut() {
        *v /= count;
    }
    for v in p_y.values_mut() {
        *v /= count;
    }
    let v_x = macro_velocity(&cl, &p_x)?;
    let v_y = macro_velocity(&cl, &p_y)?;
    Ok(FieldDensity {
        cl,
        p_x,
        p_y,
        v_x,
        v_y,
    })
}

/// Marginals of a pair-grid density: `loans` integrates out the creditor
/// block (a function of debtor position), `credits` integrates out the
/// debtor block, and `total` is the full-domain integral.
#[derive(Debug, Clone)]
pub struct CounterpartyIntegrals {
    pub loans: ScalarField,
    pub credits: ScalarField,
    pub total: f64,
}

pub fn counterparty_integrals(cl: &ScalarField) -> Result<CounterpartyIntegrals, KineticError> {
    let naxes = cl.grid().num_axes();
    if naxes % 2 != 0 {
        return Err(KineticError::OddAxisCount(naxes));
    }
    let n = naxes / 2;
    let y_axes: Vec<usize> = (n..naxes).collect();
    let x_axes: Vec<usize> = (0..n).collect();
    let loans = integrate_over(cl, &y_axes).expect("axis subset is valid");
    let credits = integrate_over(cl, &x_axes).expect("axis subset is valid");
    let total = integrate_all(cl);
    Ok(CounterpartyIntegrals {
        loans,
        credits,
        total,
    })
}
