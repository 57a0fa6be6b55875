//! The closed two-conjugate-field system: transport of the credit field by
//! its own velocity, with each field's continuity and motion equations
//! sourced by its conjugate partner. Time integration is classical
//! fourth-order Runge-Kutta under an explicit CFL bound.

use std::sync::Arc;

use thiserror::Error;

use crate::espace::{advect, divergence, gradient, Grid, ScalarField, VectorField};
use crate::kinetic::EPS_DENSITY;
use crate::waves;

/// Floor for the speed scale in the CFL bound so an all-zero state still
/// yields a finite (large) step.
pub const EPS_SPEED: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum HydroError {
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("dt = {dt} exceeds the stability bound {max_dt}")]
    CflExceeded { dt: f64, max_dt: f64 },
    #[error("solution blew up at t = {time}")]
    BlowUp { time: f64 },
}

/// Source-term gains of the coupled system. The continuity equation of each
/// field is driven by `a_i` times the conjugate flux divergence; the motion
/// equation by `b_i` times the conjugate gradient. Signs are free inputs.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CouplingParams {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
}

impl CouplingParams {
    pub fn new(a1: f64, a2: f64, b1: f64, b2: f64) -> Self {
        Self { a1, a2, b1, b2 }
    }
}

/// The coupled field configuration at one instant: credit-loans density,
/// payments-on-credits density, and their velocities, all on one pair grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub time: f64,
    pub cl: ScalarField,
    pub pc: ScalarField,
    pub v: VectorField,
    pub u: VectorField,
}

impl FieldState {
    /// Spatially uniform state with zero velocities.
    pub fn uniform(grid: Arc<Grid>, cl0: f64, pc0: f64) -> Self {
        Self {
            time: 0.0,
            cl: ScalarField::constant(grid.clone(), cl0),
            pc: ScalarField::constant(grid.clone(), pc0),
            v: VectorField::zeros(grid.clone()),
            u: VectorField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.cl.grid()
    }

    pub fn check_shapes(&self) -> Result<(), HydroError> {
        let g = self.cl.grid();
        if !self.cl.same_grid(&self.pc)
            || self.v.grid() != g && !Arc::ptr_eq(self.v.grid(), g)
            || self.u.grid() != g && !Arc::ptr_eq(self.u.grid(), g)
        {
            return Err(HydroError::GridMismatch);
        }
        Ok(())
    }

    /// First node holding a non-finite value in any field, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.cl
            .first_non_finite()
            .or_else(|| self.pc.first_non_finite())
            .or_else(|| self.v.first_non_finite())
            .or_else(|| self.u.first_non_finite())
    }

    /// Number of nodes where a density is negative, per field.
    pub fn negative_nodes(&self) -> (usize, usize) {
        let neg = |f: &ScalarField| f.values().iter().filter(|v| **v < 0.0).count();
        (neg(&self.cl), neg(&self.pc))
    }
}

/// Time derivative of a density under its transport flux plus a source:
/// -div(w * density) + q1.
pub fn continuity_rhs(
    density: &ScalarField,
    w: &VectorField,
    q1: &ScalarField,
) -> Result<ScalarField, HydroError> {
    if !density.same_grid(q1) || density.grid() != w.grid() && !Arc::ptr_eq(density.grid(), w.grid())
    {
        return Err(HydroError::GridMismatch);
    }
    let grid = density.grid().clone();
    let naxes = grid.num_axes();
    let mut flux = VectorField::zeros(grid.clone());
    for node in 0..grid.node_count() {
        for c in 0..naxes {
            flux.values_mut()[node * naxes + c] = w.values()[node * naxes + c] * density.values()[node];
        }
    }
    let mut out = divergence(&flux);
    for (node, v) in out.values_mut().iter_mut().enumerate() {
        *v = -*v + q1.values()[node];
    }
    Ok(out)
}

/// Time derivative of a velocity: -(w . grad)w plus the force density q2
/// divided by the transported density. Below [`EPS_DENSITY`] the forcing is
/// dropped instead of dividing.
pub fn motion_rhs(
    density: &ScalarField,
    w: &VectorField,
    q2: &VectorField,
) -> Result<VectorField, HydroError> {
    if density.grid() != w.grid() && !Arc::ptr_eq(density.grid(), w.grid())
        || w.grid() != q2.grid() && !Arc::ptr_eq(w.grid(), q2.grid())
    {
        return Err(HydroError::GridMismatch);
    }
    let grid = density.grid().clone();
    let naxes = grid.num_axes();
    let mut out = advect(w);
    for node in 0..grid.node_count() {
        let a = density.values()[node];
        for c in 0..naxes {
            let idx = node * naxes + c;
            let forcing = if a > EPS_DENSITY {
                q2.values()[idx] / a
            } else {
                0.0
            };
            out.values_mut()[idx] = -out.values()[idx] + forcing;
        }
    }
    Ok(out)
}

/// Source terms of the coupled system at a given state.
#[derive(Debug, Clone)]
pub struct SourceTerms {
    pub q1_cl: ScalarField,
    pub q1_pc: ScalarField,
    pub q2_cl: VectorField,
    pub q2_pc: VectorField,
}

/// Conjugate-field closures: each continuity source is the partner's flux
/// divergence scaled by its density, each motion source the partner's
/// gradient.
pub fn clpc_sources(state: &FieldState, params: &CouplingParams) -> SourceTerms {
    let grid = state.grid().clone();
    let div_u = divergence(&state.u);
    let div_v = divergence(&state.v);
    let mut q1_cl = ScalarField::zeros(grid.clone());
    let mut q1_pc = ScalarField::zeros(grid.clone());
    for node in 0..grid.node_count() {
        q1_cl.values_mut()[node] = params.a2 * state.pc.values()[node] * div_u.values()[node];
        q1_pc.values_mut()[node] = params.a1 * state.cl.values()[node] * div_v.values()[node];
    }
    let mut q2_cl = gradient(&state.pc);
    for v in q2_cl.values_mut() {
        *v *= params.b2;
    }
    let mut q2_pc = gradient(&state.cl);
    for v in q2_pc.values_mut() {
        *v *= params.b1;
    }
    SourceTerms {
        q1_cl,
        q1_pc,
        q2_cl,
        q2_pc,
    }
}

/// Stable explicit step size: `cfl_factor * dx_min / s_max`, where the speed
/// scale is the largest of both velocity fields' sup norms, the linear wave
/// speeds of the couplings, and [`EPS_SPEED`].
pub fn cfl_dt(state: &FieldState, params: &CouplingParams, cfl_factor: f64) -> f64 {
    let (a, b) = waves::biwave_coeffs(params);
    let speeds = waves::wave_speeds(a, b);
    let s_max = state
        .v
        .max_abs()
        .max(state.u.max_abs())
        .max(speeds.speed_scale())
        .max(EPS_SPEED);
    cfl_factor * state.grid().spacing_min() / s_max
}

struct StateDelta {
    d_cl: ScalarField,
    d_pc: ScalarField,
    d_v: VectorField,
    d_u: VectorField,
}

fn rhs(state: &FieldState, params: &CouplingParams) -> Result<StateDelta, HydroError> {
    let sources = clpc_sources(state, params);
    Ok(StateDelta {
        d_cl: continuity_rhs(&state.cl, &state.v, &sources.q1_cl)?,
        d_pc: continuity_rhs(&state.pc, &state.u, &sources.q1_pc)?,
        d_v: motion_rhs(&state.cl, &state.v, &sources.q2_cl)?,
        d_u: motion_rhs(&state.pc, &state.u, &sources.q2_pc)?,
    })
}

fn add_scaled(state: &FieldState, delta: &StateDelta, h: f64) -> FieldState {
    let mut out = state.clone();
    for (o, d) in out.cl.values_mut().iter_mut().zip(delta.d_cl.values()) {
        *o += h * d;
    }
    for (o, d) in out.pc.values_mut().iter_mut().zip(delta.d_pc.values()) {
        *o += h * d;
    }
    for (o, d) in out.v.values_mut().iter_mut().zip(delta.d_v.values()) {
        *o += h * d;
    }
    for (o, d) in out.u.values_mut().iter_mut().zip(delta.d_u.values()) {
        *o += h * d;
    }
    out
}

fn rk4_combine(state: &FieldState, ks: [&StateDelta; 4], dt: f64) -> FieldState {
    let mut out = state.clone();
    let w = [dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0];
    for (i, k) in ks.iter().enumerate() {
        for (o, d) in out.cl.values_mut().iter_mut().zip(k.d_cl.values()) {
            *o += w[i] * d;
        }
        for (o, d) in out.pc.values_mut().iter_mut().zip(k.d_pc.values()) {
            *o += w[i] * d;
        }
        for (o, d) in out.v.values_mut().iter_mut().zip(k.d_v.values()) {
            *o += w[i] * d;
        }
        for (o, d) in out.u.values_mut().iter_mut().zip(k.d_u.values()) {
            *o += w[i] * d;
        }
    }
    out.time = state.time + dt;
    out
}

/// One classical RK4 step of the coupled system. Rejects steps beyond the
/// stability bound and reports blow-up (non-finite values) with the step
/// time.
pub fn step(state: &FieldState, params: &CouplingParams, dt: f64) -> Result<FieldState, HydroError> {
    state.check_shapes()?;
    let max_dt = cfl_dt(state, params, 1.0);
    if dt > max_dt * (1.0 + 1e-12) {
        return Err(HydroError::CflExceeded { dt, max_dt });
    }
    let k1 = rhs(state, params)?;
    let s2 = add_scaled(state, &k1, dt / 2.0);
    let k2 = rhs(&s2, params)?;
    let s3 = add_scaled(state, &k2, dt / 2.0);
    let k3 = rhs(&s3, params)?;
    let s4 = add_scaled(state, &k3, dt);
    let k4 = rhs(&s4, params)?;
    let next = rk4_combine(state, [&k1, &k2, &k3, &k4], dt);
    if next.first_non_finite().is_some() {
        return Err(HydroError::BlowUp { time: next.time });
    }
    Ok(next)
}
