//! Risk-coordinate space, uniform grids, and discrete calculus.
//!
//! An [`EconomicSpace`] is an n-dimensional box of risk grades. Transaction
//! fields live on the doubled space of (debtor, creditor) coordinate pairs,
//! so a [`Grid`] can be built either over the space itself (n axes) or over
//! pairs (2n axes). All differential operators are second-order central
//! stencils with periodic wrap or one-sided closures at reflective edges.

use std::sync::Arc;

use thiserror::Error;

/// Relative tolerance for "exact" floating-point identities (sums, constants).
pub const EXACT_REL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("space must have at least one axis")]
    EmptySpace,
    #[error("axis {axis}: bounds [{min}, {max}] are degenerate or unordered")]
    BadBounds { axis: usize, min: f64, max: f64 },
    #[error("nodes_per_axis must be at least 3, got {0}")]
    TooFewNodes(usize),
    #[error("point component {axis} = {value} lies outside [{min}, {max}]")]
    OutOfBounds {
        axis: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("expected a point with {expected} components, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("fields are defined on different grids")]
    GridMismatch,
    #[error("value count {got} does not match grid ({expected})")]
    BadLength { expected: usize, got: usize },
    #[error("axis index {axis} out of range for a grid with {axes} axes")]
    BadAxis { axis: usize, axes: usize },
    #[error("field contains a non-finite value at node {node}")]
    NonFinite { node: usize },
}

/// The n-dimensional space of simultaneously measured risk grades.
#[derive(Debug, Clone, PartialEq)]
pub struct EconomicSpace {
    bounds: Vec<(f64, f64)>,
}

impl EconomicSpace {
    /// One closed interval per risk axis; every interval must be non-degenerate.
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self, GridError> {
        if bounds.is_empty() {
            return Err(GridError::EmptySpace);
        }
        for (axis, &(min, max)) in bounds.iter().enumerate() {
            if !(min < max) || !min.is_finite() || !max.is_finite() {
                return Err(GridError::BadBounds { axis, min, max });
            }
        }
        Ok(Self { bounds })
    }

    /// Number of risks measured simultaneously.
    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }
}

/// Edge treatment for stencils and quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    /// Nodes cover [min, max) and wrap; spacing = width / m.
    Periodic,
    /// Nodes cover [min, max] inclusive; spacing = width / (m - 1).
    Reflective,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub nodes: usize,
    pub spacing: f64,
}

/// Uniform tensor grid over one or more axes, with row-major (last axis
/// fastest) node ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
    boundary: BoundaryKind,
    strides: Vec<usize>,
    node_count: usize,
}

impl Grid {
    /// Grid over coordinate pairs z = (x, y): 2n axes, the natural home of
    /// transaction fields.
    pub fn over_pairs(
        space: &EconomicSpace,
        nodes_per_axis: usize,
        boundary: BoundaryKind,
    ) -> Result<Arc<Grid>, GridError> {
        let mut bounds = space.bounds().to_vec();
        bounds.extend_from_slice(space.bounds());
        Self::from_bounds(&bounds, nodes_per_axis, boundary)
    }

    /// Grid over the space itself: n axes, used by per-agent aggregates.
    pub fn over_space(
        space: &EconomicSpace,
        nodes_per_axis: usize,
        boundary: BoundaryKind,
    ) -> Result<Arc<Grid>, GridError> {
        Self::from_bounds(space.bounds(), nodes_per_axis, boundary)
    }

    pub fn from_bounds(
        bounds: &[(f64, f64)],
        nodes_per_axis: usize,
        boundary: BoundaryKind,
    ) -> Result<Arc<Grid>, GridError> {
        if bounds.is_empty() {
            return Err(GridError::EmptySpace);
        }
        if nodes_per_axis < 3 {
            return Err(GridError::TooFewNodes(nodes_per_axis));
        }
        let mut axes = Vec::with_capacity(bounds.len());
        for (axis, &(min, max)) in bounds.iter().enumerate() {
            if !(min < max) || !min.is_finite() || !max.is_finite() {
                return Err(GridError::BadBounds { axis, min, max });
            }
            let width = max - min;
            let spacing = match boundary {
                BoundaryKind::Periodic => width / nodes_per_axis as f64,
                BoundaryKind::Reflective => width / (nodes_per_axis - 1) as f64,
            };
            axes.push(Axis {
                min,
                max,
                nodes: nodes_per_axis,
                spacing,
            });
        }
        let mut strides = vec![1usize; axes.len()];
        for a in (0..axes.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * axes[a + 1].nodes;
        }
        let node_count = axes.iter().map(|ax| ax.nodes).product();
        Ok(Arc::new(Grid {
            axes,
            boundary,
            strides,
            node_count,
        }))
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn num_axes(&self) -> usize {
        self.axes.len()
    }

    pub fn boundary(&self) -> BoundaryKind {
        self.boundary
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn spacing_min(&self) -> f64 {
        self.axes
            .iter()
            .map(|ax| ax.spacing)
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of this node along `axis`.
    #[inline]
    pub fn index_on_axis(&self, node: usize, axis: usize) -> usize {
        (node / self.strides[axis]) % self.axes[axis].nodes
    }

    /// Coordinate of this node along `axis`.
    #[inline]
    pub fn coord_on_axis(&self, node: usize, axis: usize) -> f64 {
        let ax = &self.axes[axis];
        ax.min + self.index_on_axis(node, axis) as f64 * ax.spacing
    }

    /// Full coordinate tuple of a node.
    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        (0..self.num_axes())
            .map(|a| self.coord_on_axis(node, a))
            .collect()
    }

    /// Flat index of the node nearest to `point`, wrapping on periodic axes
    /// and clamping on reflective ones. Rejects points outside the closed
    /// bounds.
    pub fn nearest_node(&self, point: &[f64]) -> Result<usize, GridError> {
        if point.len() != self.num_axes() {
            return Err(GridError::DimensionMismatch {
                expected: self.num_axes(),
                got: point.len(),
            });
        }
        let mut flat = 0usize;
        for (axis, (&value, ax)) in point.iter().zip(&self.axes).enumerate() {
            if !(value >= ax.min && value <= ax.max) {
                return Err(GridError::OutOfBounds {
                    axis,
                    value,
                    min: ax.min,
                    max: ax.max,
                });
            }
            let rel = ((value - ax.min) / ax.spacing).round() as isize;
            let idx = match self.boundary {
                BoundaryKind::Periodic => rel.rem_euclid(ax.nodes as isize) as usize,
                BoundaryKind::Reflective => rel.clamp(0, ax.nodes as isize - 1) as usize,
            };
            flat += idx * self.strides[axis];
        }
        Ok(flat)
    }

    /// Quadrature weight of a node: product of the per-axis node widths
    /// (trapezoidal on reflective axes, rectangle rule on periodic ones).
    /// This is also the volume of the node's cell, so binned masses divided
    /// by it integrate back to plain sums.
    pub fn quad_weight(&self, node: usize) -> f64 {
        let mut w = 1.0;
        for (axis, ax) in self.axes.iter().enumerate() {
            w *= self.axis_weight(ax, self.index_on_axis(node, axis));
        }
        w
    }

    #[inline]
    fn axis_weight(&self, ax: &Axis, idx: usize) -> f64 {
        match self.boundary {
            BoundaryKind::Periodic => ax.spacing,
            BoundaryKind::Reflective => {
                if idx == 0 || idx == ax.nodes - 1 {
                    0.5 * ax.spacing
                } else {
                    ax.spacing
                }
            }
        }
    }

    /// Grid over a subset of this grid's axes (same boundary and node count
    /// per axis).
    pub fn sub_grid(&self, keep: &[usize]) -> Arc<Grid> {
        let bounds: Vec<(f64, f64)> = keep
            .iter()
            .map(|&a| (self.axes[a].min, self.axes[a].max))
            .collect();
        let m = self.axes[keep.first().copied().unwrap_or(0)].nodes;
        Self::from_bounds(&bounds, m, self.boundary).expect("subset of a valid grid is valid")
    }
}

/// Builds the discretization of the doubled space R^{2n} used by transaction
/// fields. Spacing follows the boundary convention of [`BoundaryKind`].
pub fn build_grid(
    space: &EconomicSpace,
    nodes_per_axis: usize,
    boundary: BoundaryKind,
) -> Result<Arc<Grid>, GridError> {
    Grid::over_pairs(space, nodes_per_axis, boundary)
}

/// One real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

/// One value per node per grid axis, stored node-major: component `c` of
/// node `i` lives at `values[i * num_axes + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.node_count();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Self {
        let n = grid.node_count();
        Self {
            grid,
            values: vec![value; n],
        }
    }

    pub fn from_values(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.node_count() {
            return Err(FieldError::BadLength {
                expected: grid.node_count(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    /// Sample a function of the node coordinates.
    pub fn from_fn(grid: Arc<Grid>, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = (0..grid.node_count())
            .map(|i| f(&grid.node_coords(i)))
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Index of the first non-finite node, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid
    }
}

impl VectorField {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.node_count() * grid.num_axes();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self, FieldError> {
        let expected = grid.node_count() * grid.num_axes();
        if values.len() != expected {
            return Err(FieldError::BadLength {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    /// Sample a per-component function of the node coordinates.
    pub fn from_fn(grid: Arc<Grid>, mut f: impl FnMut(&[f64], usize) -> f64) -> Self {
        let naxes = grid.num_axes();
        let mut values = Vec::with_capacity(grid.node_count() * naxes);
        for i in 0..grid.node_count() {
            let coords = grid.node_coords(i);
            for c in 0..naxes {
                values.push(f(&coords, c));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn component(&self, node: usize, comp: usize) -> f64 {
        self.values[node * self.grid.num_axes() + comp]
    }

    #[inline]
    pub fn set_component(&mut self, node: usize, comp: usize, value: f64) {
        let naxes = self.grid.num_axes();
        self.values[node * naxes + comp] = value;
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| i / self.grid.num_axes())
    }

    /// Largest component magnitude.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// First derivative of `values` along `axis`, written into `out`.
///
/// Interior and periodic nodes use the 3-point central stencil; reflective
/// edges use 3-point one-sided stencils, all second order.
fn derivative_axis(grid: &Grid, values: &[f64], axis: usize, out: &mut dyn FnMut(usize, f64)) {
    let ax = &grid.axes()[axis];
    let m = ax.nodes;
    let h = ax.spacing;
    let stride = grid.strides[axis];
    let periodic = grid.boundary() == BoundaryKind::Periodic;
    for node in 0..grid.node_count() {
        let i = grid.index_on_axis(node, axis);
        let d = if periodic {
            let prev = if i == 0 {
                node + (m - 1) * stride
            } else {
                node - stride
            };
            let next = if i == m - 1 {
                node - (m - 1) * stride
            } else {
                node + stride
            };
            (values[next] - values[prev]) / (2.0 * h)
        } else if i == 0 {
            (-3.0 * values[node] + 4.0 * values[node + stride] - values[node + 2 * stride])
                / (2.0 * h)
        } else if i == m - 1 {
            (3.0 * values[node] - 4.0 * values[node - stride] + values[node - 2 * stride])
                / (2.0 * h)
        } else {
            (values[node + stride] - values[node - stride]) / (2.0 * h)
        };
        out(node, d);
    }
}

/// Second derivative along `axis`, 3-point central; reflective edges use the
/// 4-point one-sided stencil (second order) when the axis has at least four
/// nodes, otherwise the nearest 3-point stencil.
fn second_derivative_axis(grid: &Grid, values: &[f64], axis: usize, out: &mut dyn FnMut(usize, f64)) {
    let ax = &grid.axes()[axis];
    let m = ax.nodes;
    let h2 = ax.spacing * ax.spacing;
    let stride = grid.strides[axis];
    let periodic = grid.boundary() == BoundaryKind::Periodic;
    for node in 0..grid.node_count() {
        let i = grid.index_on_axis(node, axis);
        let d = if periodic {
            let prev = if i == 0 {
                node + (m - 1) * stride
            } else {
                node - stride
            };
            let next = if i == m - 1 {
                node - (m - 1) * stride
            } else {
                node + stride
            };
            (values[next] - 2.0 * values[node] + values[prev]) / h2
        } else if i == 0 {
            if m >= 4 {
                (2.0 * values[node] - 5.0 * values[node + stride]
                    + 4.0 * values[node + 2 * stride]
                    - values[node + 3 * stride])
                    / h2
            } else {
                (values[node] - 2.0 * values[node + stride] + values[node + 2 * stride]) / h2
            }
        } else if i == m - 1 {
            if m >= 4 {
                (2.0 * values[node] - 5.0 * values[node - stride]
                    + 4.0 * values[node - 2 * stride]
                    - values[node - 3 * stride])
                    / h2
            } else {
                (values[node] - 2.0 * values[node - stride] + values[node - 2 * stride]) / h2
            }
        } else {
            (values[node + stride] - 2.0 * values[node] + values[node - stride]) / h2
        };
        out(node, d);
    }
}

/// Central-difference gradient of a scalar field.
pub fn gradient(f: &ScalarField) -> VectorField {
    let grid = f.grid().clone();
    let naxes = grid.num_axes();
    let mut result = VectorField::zeros(grid.clone());
    for axis in 0..naxes {
        derivative_axis(&grid, f.values(), axis, &mut |node, d| {
            result.values[node * naxes + axis] = d;
        });
    }
    result
}

/// Sum of component derivatives along their own axes.
pub fn divergence(w: &VectorField) -> ScalarField {
    let grid = w.grid().clone();
    let naxes = grid.num_axes();
    let mut result = ScalarField::zeros(grid.clone());
    let mut comp = vec![0.0; grid.node_count()];
    for axis in 0..naxes {
        for node in 0..grid.node_count() {
            comp[node] = w.values()[node * naxes + axis];
        }
        derivative_axis(&grid, &comp, axis, &mut |node, d| {
            result.values[node] += d;
        });
    }
    result
}

/// Direct 3-point-per-axis Laplacian.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let grid = f.grid().clone();
    let mut result = ScalarField::zeros(grid.clone());
    for axis in 0..grid.num_axes() {
        second_derivative_axis(&grid, f.values(), axis, &mut |node, d| {
            result.values[node] += d;
        });
    }
    result
}

/// Self-advection (w · ∇)w: component c of the result is Σ_d w_d ∂_d w_c.
pub fn advect(w: &VectorField) -> VectorField {
    let grid = w.grid().clone();
    let naxes = grid.num_axes();
    let mut result = VectorField::zeros(grid.clone());
    let mut comp = vec![0.0; grid.node_count()];
    for c in 0..naxes {
        for node in 0..grid.node_count() {
            comp[node] = w.values()[node * naxes + c];
        }
        for d in 0..naxes {
            derivative_axis(&grid, &comp, d, &mut |node, deriv| {
                result.values[node * naxes + c] += w.values()[node * naxes + d] * deriv;
            });
        }
    }
    result
}

/// Quadrature over a subset of axes; the result lives on the remaining axes.
/// An empty axis set is the identity. Trapezoidal weights on reflective
/// grids, rectangle rule on periodic ones.
pub fn integrate_over(f: &ScalarField, axes: &[usize]) -> Result<ScalarField, FieldError> {
    let grid = f.grid();
    let naxes = grid.num_axes();
    for &a in axes {
        if a >= naxes {
            return Err(FieldError::BadAxis { axis: a, axes: naxes });
        }
    }
    if axes.is_empty() {
        return Ok(f.clone());
    }
    let mut keep: Vec<usize> = (0..naxes).filter(|a| !axes.contains(a)).collect();
    if keep.is_empty() {
        // Total integral as a single-node field on the first axis collapsed
        // is meaningless; callers wanting a scalar use `integrate_all`.
        keep.push(0);
        let total = integrate_all(f);
        let sub = grid.sub_grid(&keep);
        let mut out = ScalarField::zeros(sub);
        // Store the total in every node so the caller can read it anywhere;
        // integrate_all is the supported entry point for full reduction.
        for v in out.values_mut() {
            *v = total;
        }
        return Ok(out);
    }
    let sub = grid.sub_grid(&keep);
    let mut out = ScalarField::zeros(sub.clone());
    for node in 0..grid.node_count() {
        let mut w = 1.0;
        for &a in axes {
            w *= grid.axis_weight(&grid.axes()[a], grid.index_on_axis(node, a));
        }
        let mut reduced = 0usize;
        for (pos, &a) in keep.iter().enumerate() {
            reduced += grid.index_on_axis(node, a) * sub.strides[pos];
        }
        out.values[reduced] += f.values[node] * w;
    }
    Ok(out)
}

/// Quadrature over every axis.
pub fn integrate_all(f: &ScalarField) -> f64 {
    let grid = f.grid();
    f.values()
        .iter()
        .enumerate()
        .map(|(node, v)| v * grid.quad_weight(node))
        .sum()
}

/// Trapezoidal quadrature over the node-aligned box `[lo, hi]` of the
/// field's grid. Bounds snap to the nearest node on each axis.
pub fn integrate_box(f: &ScalarField, lo: &[f64], hi: &[f64]) -> Result<f64, FieldError> {
    let grid = f.grid();
    let naxes = grid.num_axes();
    if lo.len() != naxes || hi.len() != naxes {
        return Err(FieldError::BadAxis {
            axis: lo.len().max(hi.len()),
            axes: naxes,
        });
    }
    let mut ranges = Vec::with_capacity(naxes);
    for (axis, ax) in grid.axes().iter().enumerate() {
        let i_lo = ((lo[axis] - ax.min) / ax.spacing).round().max(0.0) as usize;
        let i_hi = (((hi[axis] - ax.min) / ax.spacing).round() as usize).min(ax.nodes - 1);
        if i_hi <= i_lo {
            return Ok(0.0);
        }
        ranges.push((i_lo, i_hi));
    }
    let mut total = 0.0;
    for node in 0..grid.node_count() {
        let mut w = 1.0;
        let mut inside = true;
        for (axis, ax) in grid.axes().iter().enumerate() {
            let i = grid.index_on_axis(node, axis);
            let (i_lo, i_hi) = ranges[axis];
            if i < i_lo || i > i_hi {
                inside = false;
                break;
            }
            w *= if i == i_lo || i == i_hi {
                0.5 * ax.spacing
            } else {
                ax.spacing
            };
        }
        if inside {
            total += f.values[node] * w;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit_space(n: usize) -> EconomicSpace {
        EconomicSpace::new(vec![(0.0, 1.0); n]).unwrap()
    }

    #[test]
    fn spacing_reflective() {
        let g = Grid::over_space(&unit_space(1), 4, BoundaryKind::Reflective).unwrap();
        assert!((g.axes()[0].spacing - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn spacing_periodic() {
        let g = Grid::over_space(&unit_space(1), 4, BoundaryKind::Periodic).unwrap();
        assert!((g.axes()[0].spacing - 0.25).abs() < 1e-15);
    }

    #[test]
    fn degenerate_bounds_rejected() {
        assert!(matches!(
            EconomicSpace::new(vec![(0.0, 0.0)]),
            Err(GridError::BadBounds { .. })
        ));
        let space = unit_space(1);
        assert!(matches!(
            build_grid(&space, 2, BoundaryKind::Periodic),
            Err(GridError::TooFewNodes(2))
        ));
    }

    #[test]
    fn pair_grid_doubles_axes() {
        let g = build_grid(&unit_space(2), 5, BoundaryKind::Periodic).unwrap();
        assert_eq!(g.num_axes(), 4);
        assert_eq!(g.node_count(), 625);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = build_grid(&unit_space(1), 8, BoundaryKind::Periodic).unwrap();
        let f = ScalarField::constant(g, 7.0);
        let grad = gradient(&f);
        assert!(grad.max_abs() < 1e-14);
    }

    #[test]
    fn gradient_linear_exact_interior() {
        let g = build_grid(&unit_space(1), 8, BoundaryKind::Reflective).unwrap();
        let f = ScalarField::from_fn(g.clone(), |z| z[0]);
        let grad = gradient(&f);
        for node in 0..g.node_count() {
            assert!(
                (grad.component(node, 0) - 1.0).abs() < 1e-12,
                "node {node}"
            );
            assert!(grad.component(node, 1).abs() < 1e-12);
        }
    }

    fn grad_max_err(m: usize) -> f64 {
        let g = build_grid(&unit_space(1), m, BoundaryKind::Periodic).unwrap();
        let f = ScalarField::from_fn(g.clone(), |z| (2.0 * PI * z[0]).sin());
        let grad = gradient(&f);
        (0..g.node_count())
            .map(|i| {
                let x = g.coord_on_axis(i, 0);
                (grad.component(i, 0) - 2.0 * PI * (2.0 * PI * x).cos()).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradient_second_order_convergence() {
        let slope = (grad_max_err(16) / grad_max_err(32)).log2();
        assert!(
            (slope - 2.0).abs() <= 0.3,
            "observed gradient order {slope}"
        );
    }

    #[test]
    fn divergence_constant_and_linear() {
        let g = build_grid(&unit_space(1), 8, BoundaryKind::Reflective).unwrap();
        let c = VectorField::from_fn(g.clone(), |_, _| 3.0);
        assert!(divergence(&c).values().iter().all(|v| v.abs() < 1e-13));

        let w = VectorField::from_fn(g.clone(), |z, comp| z[comp]);
        let div = divergence(&w);
        for node in 0..g.node_count() {
            assert!((div.values()[node] - 2.0).abs() < 1e-12, "node {node}");
        }
    }

    fn div_max_err(m: usize) -> f64 {
        let g = build_grid(&unit_space(1), m, BoundaryKind::Periodic).unwrap();
        let w = VectorField::from_fn(g.clone(), |z, comp| {
            if comp == 0 {
                (2.0 * PI * z[0]).sin()
            } else {
                0.0
            }
        });
        let div = divergence(&w);
        (0..g.node_count())
            .map(|i| {
                let x = g.coord_on_axis(i, 0);
                (div.values()[i] - 2.0 * PI * (2.0 * PI * x).cos()).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn divergence_second_order_convergence() {
        let slope = (div_max_err(16) / div_max_err(32)).log2();
        assert!((slope - 2.0).abs() <= 0.3, "observed order {slope}");
    }

    #[test]
    fn laplacian_quadratic_exact_interior() {
        let g = build_grid(&unit_space(1), 9, BoundaryKind::Reflective).unwrap();
        let f = ScalarField::from_fn(g.clone(), |z| z[0] * z[0] + z[1] * z[1]);
        let lap = laplacian(&f);
        for node in 0..g.node_count() {
            assert!((lap.values()[node] - 4.0).abs() < 1e-10, "node {node}");
        }
        let c = ScalarField::constant(g, 5.0);
        assert!(laplacian(&c).values().iter().all(|v| v.abs() < 1e-12));
    }

    fn lap_max_err(m: usize) -> f64 {
        let k = [2.0 * PI, 4.0 * PI];
        let ksq = k[0] * k[0] + k[1] * k[1];
        let g = build_grid(&unit_space(1), m, BoundaryKind::Periodic).unwrap();
        let f = ScalarField::from_fn(g.clone(), |z| (k[0] * z[0] + k[1] * z[1]).cos());
        let lap = laplacian(&f);
        (0..g.node_count())
            .map(|i| {
                let z = g.node_coords(i);
                (lap.values()[i] + ksq * (k[0] * z[0] + k[1] * z[1]).cos()).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn laplacian_second_order_convergence() {
        let slope = (lap_max_err(16) / lap_max_err(32)).log2();
        assert!((slope - 2.0).abs() <= 0.3, "observed order {slope}");
    }

    #[test]
    fn laplacian_matches_div_grad_on_periodic() {
        // Both routes are second order; their gap shrinks at O(dx^2).
        let gap = |m: usize| {
            let g = build_grid(&unit_space(1), m, BoundaryKind::Periodic).unwrap();
            let f = ScalarField::from_fn(g.clone(), |z| {
                (2.0 * PI * z[0]).sin() * (2.0 * PI * z[1]).cos()
            });
            let direct = laplacian(&f);
            let composed = divergence(&gradient(&f));
            direct
                .values()
                .iter()
                .zip(composed.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let slope = (gap(16) / gap(32)).log2();
        assert!((slope - 2.0).abs() <= 0.3, "observed order {slope}");
    }

    #[test]
    fn integrate_constant_exact() {
        let space = EconomicSpace::new(vec![(0.0, 2.0)]).unwrap();
        for bc in [BoundaryKind::Reflective, BoundaryKind::Periodic] {
            let g = build_grid(&space, 7, bc).unwrap();
            let f = ScalarField::constant(g, 3.0);
            let total = integrate_all(&f);
            assert!(
                (total - 12.0).abs() <= 12.0 * EXACT_REL,
                "{bc:?}: {total}"
            );
        }
        let g = build_grid(&space, 7, BoundaryKind::Reflective).unwrap();
        assert_eq!(integrate_all(&ScalarField::zeros(g)), 0.0);
    }

    /// Independent composite-Simpson quadrature for the separable oracle
    /// integral of cos(pi x + pi y) over the unit square:
    /// (int cos)^2 - (int sin)^2.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
        let n = intervals + intervals % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn integrate_cosine_matches_fine_quadrature_oracle() {
        let ic = simpson(|x| (PI * x).cos(), 0.0, 1.0, 4096);
        let is = simpson(|x| (PI * x).sin(), 0.0, 1.0, 4096);
        let oracle = ic * ic - is * is;
        // Analytic value -4/pi^2; the Simpson oracle should agree closely.
        assert!((oracle + 4.0 / (PI * PI)).abs() < 1e-12);

        let g = build_grid(&unit_space(1), 257, BoundaryKind::Reflective).unwrap();
        let f = ScalarField::from_fn(g, |z| (PI * z[0] + PI * z[1]).cos());
        let total = integrate_all(&f);
        assert!(
            (total - oracle).abs() < 2e-5,
            "quadrature {total} vs oracle {oracle}"
        );
    }

    #[test]
    fn integrate_over_partial_axes() {
        let space = EconomicSpace::new(vec![(0.0, 2.0)]).unwrap();
        let g = build_grid(&space, 9, BoundaryKind::Reflective).unwrap();
        // f(x, y) = x: integrating over y gives 2x on the x axis.
        let f = ScalarField::from_fn(g.clone(), |z| z[0]);
        let fx = integrate_over(&f, &[1]).unwrap();
        assert_eq!(fx.grid().num_axes(), 1);
        for node in 0..fx.grid().node_count() {
            let x = fx.grid().coord_on_axis(node, 0);
            assert!((fx.values()[node] - 2.0 * x).abs() < 1e-12);
        }
        // Empty axis set is the identity.
        let same = integrate_over(&f, &[]).unwrap();
        assert_eq!(same, f);
    }

    #[test]
    fn integrate_box_sub_domain() {
        let space = EconomicSpace::new(vec![(0.0, 2.0)]).unwrap();
        let g = build_grid(&space, 64, BoundaryKind::Periodic).unwrap();
        let f = ScalarField::constant(g, 1.5);
        let part = integrate_box(&f, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((part - 1.5).abs() < 1e-12, "{part}");
    }

    #[test]
    fn out_of_bounds_point_rejected() {
        let g = Grid::over_space(&unit_space(1), 4, BoundaryKind::Reflective).unwrap();
        assert!(matches!(
            g.nearest_node(&[1.5]),
            Err(GridError::OutOfBounds { axis: 0, .. })
        ));
        assert!(g.nearest_node(&[1.0]).is_ok());
    }
}
