//! Tensor-product B-spline bases over rectangular grids.
//!
//! Grid points and basis coefficients are both flattened with the first
//! declared axis varying slowest. A row of an assembled matrix is the
//! Kronecker product (in declared axis order) of the univariate basis rows,
//! so at most `Π o_axis` entries per row are nonzero and every derivative
//! matrix built on the same points shares one sparsity pattern.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{RowPattern, SparseRows};
use crate::splines::{make_uniform_knots, KnotVector};

/// One named coordinate axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub coords: Vec<f64>,
}

impl Axis {
    pub fn new(name: impl Into<String>, coords: Vec<f64>) -> Self {
        Self { name: name.into(), coords }
    }

    /// `count` equally spaced coordinates from `a` to `b` inclusive.
    pub fn uniform(name: impl Into<String>, a: f64, b: f64, count: usize) -> Self {
        let coords = uniform_coords(a, b, count);
        Self { name: name.into(), coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn lower(&self) -> f64 {
        self.coords[0]
    }

    pub fn upper(&self) -> f64 {
        *self.coords.last().unwrap()
    }
}

/// `count` equally spaced values from `a` to `b`, the last one exactly `b`.
pub fn uniform_coords(a: f64, b: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![a];
    }
    let h = (b - a) / (count - 1) as f64;
    let mut v: Vec<f64> = (0..count).map(|i| a + h * i as f64).collect();
    if let Some(last) = v.last_mut() {
        *last = b;
    }
    v
}

/// Rectangular grid of observation sites.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::argument("grid needs at least one axis"));
        }
        let mut seen = HashSet::new();
        for axis in &axes {
            if !seen.insert(axis.name.as_str()) {
                return Err(Error::argument(format!("duplicate axis name `{}`", axis.name)));
            }
            if axis.coords.len() < 2 {
                return Err(Error::argument(format!("axis `{}` needs at least 2 coordinates", axis.name)));
            }
            if axis.coords.iter().any(|c| !c.is_finite()) {
                return Err(Error::argument(format!("axis `{}` has non-finite coordinates", axis.name)));
            }
            if axis.coords.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::argument(format!("axis `{}` is not strictly increasing", axis.name)));
            }
        }
        Ok(Self { axes })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Axis::len).collect()
    }

    pub fn point_count(&self) -> usize {
        self.axes.iter().map(Axis::len).product()
    }

    pub fn axis_index(&self, name: &str) -> Option<usize> {
        self.axes.iter().position(|a| a.name == name)
    }

    pub fn axis_names(&self) -> Vec<&str> {
        self.axes.iter().map(|a| a.name.as_str()).collect()
    }

    /// Coordinates of the flat grid index `flat`.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        let idx = unravel(flat, &self.shape());
        idx.iter().zip(&self.axes).map(|(&i, a)| a.coords[i]).collect()
    }

    /// Every grid point, in flattening order.
    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.point_count()).map(|i| self.point(i)).collect()
    }

    /// Keeps every `step[a]`-th coordinate of each axis (always including the first).
    pub fn subsample(&self, steps: &[usize]) -> Result<(Grid, Vec<usize>)> {
        if steps.len() != self.ndim() || steps.contains(&0) {
            return Err(Error::argument("subsample needs one positive step per axis"));
        }
        let kept: Vec<Vec<usize>> = self
            .axes
            .iter()
            .zip(steps)
            .map(|(a, &s)| (0..a.len()).step_by(s).collect())
            .collect();
        let axes = self
            .axes
            .iter()
            .zip(&kept)
            .map(|(a, k)| Axis::new(a.name.clone(), k.iter().map(|&i| a.coords[i]).collect()))
            .collect();
        let grid = Grid::new(axes)?;
        let shape = self.shape();
        let sub_shape: Vec<usize> = kept.iter().map(Vec::len).collect();
        let mut map = Vec::with_capacity(grid.point_count());
        let mut idx = vec![0usize; shape.len()];
        for flat in 0..grid.point_count() {
            unravel_into(flat, &sub_shape, &mut idx);
            let orig: Vec<usize> = idx.iter().zip(&kept).map(|(&i, k)| k[i]).collect();
            map.push(ravel(&orig, &shape));
        }
        Ok((grid, map))
    }
}

pub(crate) fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for a in (0..shape.len()).rev() {
        idx[a] = flat % shape[a];
        flat /= shape[a];
    }
    idx
}

fn unravel_into(mut flat: usize, shape: &[usize], idx: &mut [usize]) {
    for a in (0..shape.len()).rev() {
        idx[a] = flat % shape[a];
        flat /= shape[a];
    }
}

pub(crate) fn ravel(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Per-axis derivative orders.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DerivIndex(pub Vec<usize>);

impl DerivIndex {
    pub fn zero(ndim: usize) -> Self {
        Self(vec![0; ndim])
    }

    /// Order `order` along axis `axis`, zero elsewhere.
    pub fn along(ndim: usize, axis: usize, order: usize) -> Self {
        let mut v = vec![0; ndim];
        v[axis] = order;
        Self(v)
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// Componentwise sum.
    pub fn combine(&self, other: &DerivIndex) -> DerivIndex {
        DerivIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

/// Knot vectors for each grid axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    axes: Vec<(String, KnotVector)>,
}

/// Per-axis overrides of the default knot count and order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BasisOptions {
    pub knots: HashMap<String, usize>,
    pub orders: HashMap<String, usize>,
}

/// Default number of distinct knots for an axis with `n` samples.
pub fn default_knot_count(n: usize) -> usize {
    (n / 4).clamp(10, 60)
}

/// Default order for an axis whose highest derivative in the model is `max_deriv`.
pub fn default_order(max_deriv: usize) -> usize {
    (max_deriv + 2).max(4)
}

impl BasisSpec {
    pub fn new(axes: Vec<(String, KnotVector)>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::argument("basis needs at least one axis"));
        }
        let mut seen = HashSet::new();
        for (name, _) in &axes {
            if !seen.insert(name.as_str()) {
                return Err(Error::argument(format!("duplicate basis axis `{name}`")));
            }
        }
        Ok(Self { axes })
    }

    /// Uniform clamped knots spanning each grid axis, using the defaults
    /// unless `options` overrides them. `max_derivs` holds the highest
    /// derivative order the model takes along each axis.
    pub fn for_grid(grid: &Grid, max_derivs: &[usize], options: &BasisOptions) -> Result<Self> {
        if max_derivs.len() != grid.ndim() {
            return Err(Error::AxisMismatch(format!(
                "{} derivative bounds for a {}-axis grid",
                max_derivs.len(),
                grid.ndim()
            )));
        }
        for name in options.knots.keys().chain(options.orders.keys()) {
            if grid.axis_index(name).is_none() {
                return Err(Error::AxisMismatch(format!("basis override names unknown axis `{name}`")));
            }
        }
        let mut axes = Vec::with_capacity(grid.ndim());
        for (axis, &md) in grid.axes().iter().zip(max_derivs) {
            let k = options.knots.get(&axis.name).copied().unwrap_or_else(|| default_knot_count(axis.len()));
            let o = options.orders.get(&axis.name).copied().unwrap_or_else(|| default_order(md));
            if o < md + 1 {
                return Err(Error::DerivativeOrder { requested: md, order: o });
            }
            axes.push((axis.name.clone(), make_uniform_knots(axis.lower(), axis.upper(), k, o)?));
        }
        Self::new(axes)
    }

    pub fn axes(&self) -> &[(String, KnotVector)] {
        &self.axes
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn basis_counts(&self) -> Vec<usize> {
        self.axes.iter().map(|(_, kv)| kv.basis_count()).collect()
    }

    pub fn orders(&self) -> Vec<usize> {
        self.axes.iter().map(|(_, kv)| kv.order()).collect()
    }

    /// Total number of tensor basis functions `m = Π p_axis`.
    pub fn coefficient_count(&self) -> usize {
        self.basis_counts().iter().product()
    }

    /// Nonzero entries per assembled row, `Π o_axis`.
    pub fn row_width(&self) -> usize {
        self.orders().iter().product()
    }

    pub fn check_deriv(&self, alpha: &DerivIndex) -> Result<()> {
        if alpha.0.len() != self.ndim() {
            return Err(Error::AxisMismatch(format!(
                "derivative index has {} axes, basis has {}",
                alpha.0.len(),
                self.ndim()
            )));
        }
        for (&d, (_, kv)) in alpha.0.iter().zip(&self.axes) {
            if d >= kv.order() {
                return Err(Error::DerivativeOrder { requested: d, order: kv.order() });
            }
        }
        Ok(())
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.ndim() != self.ndim() {
            return Err(Error::AxisMismatch(format!(
                "grid has {} axes, basis has {}",
                grid.ndim(),
                self.ndim()
            )));
        }
        for (axis, (name, kv)) in grid.axes().iter().zip(&self.axes) {
            if &axis.name != name {
                return Err(Error::AxisMismatch(format!(
                    "grid axis `{}` where basis expects `{name}`",
                    axis.name
                )));
            }
            let slack = 1e-12 * (kv.upper() - kv.lower());
            if axis.lower() < kv.lower() - slack || axis.upper() > kv.upper() + slack {
                return Err(Error::AxisMismatch(format!(
                    "basis on `{name}` covers [{}, {}] but grid spans [{}, {}]",
                    kv.lower(),
                    kv.upper(),
                    axis.lower(),
                    axis.upper()
                )));
            }
        }
        Ok(())
    }

    /// Column renumbering that keeps normal-equation matrices narrowly banded.
    ///
    /// Axes with more basis functions are made to vary slower. Returns the
    /// map from natural to permuted index together with the resulting
    /// half-bandwidth of any `Xᵀ X` built from assembled rows.
    pub fn band_permutation(&self) -> (Vec<usize>, usize) {
        let counts = self.basis_counts();
        let orders = self.orders();
        let d = counts.len();
        let mut rank: Vec<usize> = (0..d).collect();
        rank.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        // stride of each axis in the permuted layout
        let mut strides = vec![0usize; d];
        let mut s = 1;
        for &a in rank.iter().rev() {
            strides[a] = s;
            s *= counts[a];
        }
        let bandwidth = (0..d).map(|a| (orders[a] - 1) * strides[a]).sum();
        let m = self.coefficient_count();
        let perm = (0..m)
            .map(|flat| unravel(flat, &counts).iter().zip(&strides).map(|(i, s)| i * s).sum())
            .collect();
        (perm, bandwidth)
    }
}

/// Univariate evaluations of every axis at its sites, for all derivative
/// orders the basis supports.
#[derive(Debug)]
struct AxisTable {
    order: usize,
    first: Vec<usize>,
    // [site][deriv][local]
    values: Vec<f64>,
}

impl AxisTable {
    fn build(kv: &KnotVector, sites: &[f64]) -> Result<Self> {
        let o = kv.order();
        let per_site = o * o;
        let mut values = vec![0.0; sites.len() * per_site];
        let mut first = Vec::with_capacity(sites.len());
        for (s, &x) in sites.iter().enumerate() {
            let f = kv.eval_local(x, o - 1, &mut values[s * per_site..(s + 1) * per_site])?;
            first.push(f);
        }
        Ok(Self { order: o, first, values })
    }

    #[inline]
    fn local(&self, site: usize, deriv: usize) -> &[f64] {
        let o = self.order;
        let base = site * o * o + deriv * o;
        &self.values[base..base + o]
    }
}

/// Evaluates tensor basis matrices for one fixed set of points.
///
/// Every matrix produced by one evaluator shares a single [`RowPattern`].
#[derive(Debug)]
pub struct TensorEvaluator {
    spec: BasisSpec,
    tables: Vec<AxisTable>,
    // site index per (row, axis)
    sites: Vec<u32>,
    rows: usize,
    pattern: Arc<RowPattern>,
}

impl TensorEvaluator {
    /// Evaluator over all points of `grid`.
    pub fn on_grid(spec: &BasisSpec, grid: &Grid) -> Result<Self> {
        spec.check_grid(grid)?;
        let tables = spec
            .axes()
            .iter()
            .zip(grid.axes())
            .map(|((_, kv), axis)| AxisTable::build(kv, &axis.coords))
            .collect::<Result<Vec<_>>>()?;
        let shape = grid.shape();
        let rows = grid.point_count();
        let d = shape.len();
        let mut sites = Vec::with_capacity(rows * d);
        let mut idx = vec![0usize; d];
        for flat in 0..rows {
            unravel_into(flat, &shape, &mut idx);
            sites.extend(idx.iter().map(|&i| i as u32));
        }
        Self::finish(spec, tables, sites, rows)
    }

    /// Evaluator at arbitrary points (one coordinate per basis axis each).
    pub fn at_points(spec: &BasisSpec, points: &[Vec<f64>]) -> Result<Self> {
        let d = spec.ndim();
        let mut per_axis: Vec<Vec<f64>> = vec![Vec::with_capacity(points.len()); d];
        for p in points {
            if p.len() != d {
                return Err(Error::AxisMismatch(format!(
                    "point has {} coordinates, basis has {d} axes",
                    p.len()
                )));
            }
            for (a, &x) in p.iter().enumerate() {
                per_axis[a].push(x);
            }
        }
        let tables = spec
            .axes()
            .iter()
            .zip(&per_axis)
            .map(|((_, kv), xs)| AxisTable::build(kv, xs))
            .collect::<Result<Vec<_>>>()?;
        let rows = points.len();
        let sites = (0..rows).flat_map(|r| std::iter::repeat_n(r as u32, d)).collect();
        Self::finish(spec, tables, sites, rows)
    }

    fn finish(spec: &BasisSpec, tables: Vec<AxisTable>, sites: Vec<u32>, rows: usize) -> Result<Self> {
        let counts = spec.basis_counts();
        let orders = spec.orders();
        let d = counts.len();
        let width: usize = orders.iter().product();
        let m = spec.coefficient_count();
        if m > u32::MAX as usize {
            return Err(Error::argument("too many basis functions"));
        }
        let mut indices = Vec::with_capacity(rows * width);
        let mut local = vec![0usize; d];
        for r in 0..rows {
            let row_sites = &sites[r * d..(r + 1) * d];
            for flat in 0..width {
                unravel_into(flat, &orders, &mut local);
                let mut col = 0usize;
                for a in 0..d {
                    let j = tables[a].first[row_sites[a] as usize] + local[a];
                    col = col * counts[a] + j;
                }
                indices.push(col as u32);
            }
        }
        let pattern = Arc::new(RowPattern::new(rows, m, width, indices));
        Ok(Self { spec: spec.clone(), tables, sites, rows, pattern })
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn pattern(&self) -> &Arc<RowPattern> {
        &self.pattern
    }

    /// Matrix whose `(i, j)` entry is `∂^α b_j` at point `i`.
    pub fn matrix(&self, alpha: &DerivIndex) -> Result<SparseRows> {
        self.spec.check_deriv(alpha)?;
        let d = self.tables.len();
        let orders = self.spec.orders();
        let width = self.pattern.width();
        let mut values = Vec::with_capacity(self.rows * width);
        let mut factors: Vec<&[f64]> = Vec::with_capacity(d);
        let mut local = vec![0usize; d];
        for r in 0..self.rows {
            factors.clear();
            let row_sites = &self.sites[r * d..(r + 1) * d];
            for (a, table) in self.tables.iter().enumerate() {
                factors.push(table.local(row_sites[a] as usize, alpha.0[a]));
            }
            for flat in 0..width {
                unravel_into(flat, &orders, &mut local);
                let v = (0..d).fold(1.0, |acc, a| acc * factors[a][local[a]]);
                values.push(v);
            }
        }
        Ok(SparseRows::new(Arc::clone(&self.pattern), values))
    }
}

/// Tensor basis matrix with derivative `alpha` at every grid point.
pub fn assemble_grid_matrix(spec: &BasisSpec, grid: &Grid, alpha: &DerivIndex) -> Result<SparseRows> {
    spec.check_deriv(alpha)?;
    TensorEvaluator::on_grid(spec, grid)?.matrix(alpha)
}

/// Tensor basis matrix with derivative `alpha` at arbitrary points.
pub fn eval_at_points(spec: &BasisSpec, points: &[Vec<f64>], alpha: &DerivIndex) -> Result<SparseRows> {
    spec.check_deriv(alpha)?;
    TensorEvaluator::at_points(spec, points)?.matrix(alpha)
}
