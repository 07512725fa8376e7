//! ADMM estimation of spline coefficients and equation coefficients.
//!
//! The relaxed problem is
//!
//! ```text
//! min ½‖y − B̄β‖² + (1/2μ)‖r‖²   s.t.   F(β, θ) + r = 0,
//! F(β, θ) = A_fixed β + Σ_j θ_j A_j β − f,
//! ```
//!
//! solved in scaled form with dual `u`. Each block update is the exact
//! minimiser of the augmented Lagrangian in that block.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, BandCholesky, BandedSpd, SparseRows};
use crate::model::{ConstraintBuilder, ConstraintMatrices, ModelSpec};
use crate::tensor::{BasisSpec, DerivIndex, Grid};

/// Relative size below which `‖A_j β‖²` is treated as zero.
const DEGENERATE_RATIO: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmConfig {
    pub rho: f64,
    pub mu: f64,
    pub gamma: f64,
    /// Ridge added to the normal equations; `None` uses `1e-10·tr(B̄ᵀB̄)/m`.
    pub ridge: Option<f64>,
    /// Starting coefficients; `None` starts from zero.
    pub theta0: Option<Vec<f64>>,
    pub tol_theta: f64,
    pub tol_primal: f64,
    pub max_iter: usize,
    /// Record θ at every iteration.
    pub trace: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            mu: 1.0,
            gamma: 1.0,
            ridge: None,
            theta0: None,
            tol_theta: 1e-8,
            tol_primal: 1e-6,
            max_iter: 5000,
            trace: false,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self, n_free: usize) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::argument(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.rho, "rho")?;
        positive(self.mu, "mu")?;
        positive(self.tol_theta, "tol_theta")?;
        positive(self.tol_primal, "tol_primal")?;
        if !(self.gamma > 0.0 && self.gamma <= 2.0) {
            return Err(Error::argument(format!("gamma must lie in (0, 2], got {}", self.gamma)));
        }
        if let Some(l) = self.ridge {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::argument(format!("ridge must be nonnegative, got {l}")));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::argument("max_iter must be at least 1"));
        }
        if let Some(t) = &self.theta0 {
            if t.len() != n_free {
                return Err(Error::argument(format!(
                    "theta0 has {} entries, model has {n_free} free coefficients",
                    t.len()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::argument("theta0 must be finite"));
            }
        }
        Ok(())
    }
}

/// Iterate of the ADMM loop.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub iterations: usize,
    /// `‖F + r‖₂/√n` after each iteration.
    pub primal_history: Vec<f64>,
    /// θ after each iteration; empty unless tracing was requested.
    pub theta_trace: Vec<Vec<f64>>,
    /// `‖y − B̄β‖₂`.
    pub misfit: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Continue,
    Converged,
    Exhausted,
}

/// Convergence test after a completed iteration `iter` (1-based).
pub fn check_convergence(old: &[f64], new: &[f64], primal: f64, iter: usize, cfg: &AdmmConfig) -> Status {
    let dtheta = old
        .iter()
        .zip(new)
        .map(|(a, b)| (b - a).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max);
    if dtheta < cfg.tol_theta && primal < cfg.tol_primal {
        Status::Converged
    } else if iter >= cfg.max_iter {
        Status::Exhausted
    } else {
        Status::Continue
    }
}

/// `r = −(μρ/(1+μρ))·(F + u)`, the minimiser of
/// `(1/2μ)‖r‖² + (ρ/2)‖F + r + u‖²`.
pub fn r_step(f: &[f64], u: &[f64], mu: f64, rho: f64) -> Vec<f64> {
    let c = -(mu * rho) / (1.0 + mu * rho);
    f.iter().zip(u).map(|(a, b)| c * (a + b)).collect()
}

/// `u ← u + γ(F + r)`.
pub fn dual_step(u: &mut [f64], f: &[f64], r: &[f64], gamma: f64) {
    for ((ui, fi), ri) in u.iter_mut().zip(f).zip(r) {
        *ui += gamma * (fi + ri);
    }
}

/// Exact minimiser over `θ_j` of `‖p + θ_j v + r + u‖²`, where `p` holds
/// every other contribution to `F`. `scale` sets the size below which
/// `‖v‖²` counts as zero.
pub fn theta_step(v: &[f64], p: &[f64], r: &[f64], u: &[f64], scale: f64) -> Option<f64> {
    let vv = dot(v, v);
    if !(vv > DEGENERATE_RATIO * scale) {
        return None;
    }
    let mut num = 0.0;
    for i in 0..v.len() {
        num += v[i] * (p[i] + r[i] + u[i]);
    }
    Some(-num / vv)
}

/// The data-fit part of the β normal equations, fixed for a given basis
/// and grid: `B̄ᵀB̄ + λI` in banded form.
#[derive(Debug, Clone)]
pub struct NormalSystem {
    basis: SparseRows,
    perm: Vec<usize>,
    gram: BandedSpd,
    ridge: f64,
}

impl NormalSystem {
    pub fn new(basis: SparseRows, spec: &BasisSpec, ridge: Option<f64>) -> Self {
        let (perm, bw) = spec.band_permutation();
        let m = basis.ncols();
        let mut gram = BandedSpd::zeros(m, bw);
        basis.accumulate_gram(1.0, &perm, &mut gram);
        let ridge = ridge.unwrap_or_else(|| 1e-10 * gram.trace() / m as f64);
        gram.add_diagonal(ridge);
        Self { basis, perm, gram, ridge }
    }

    pub fn basis(&self) -> &SparseRows {
        &self.basis
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    fn solve_natural(&self, chol: &BandCholesky, rhs: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; rhs.len()];
        for (i, &q) in self.perm.iter().enumerate() {
            p[q] = rhs[i];
        }
        let x = chol.solve(&p);
        self.perm.iter().map(|&q| x[q]).collect()
    }

    /// Ridge-regularised least-squares fit of `y`.
    pub fn least_squares(&self, y: &[f64]) -> Result<Vec<f64>> {
        let chol = self.gram.clone().cholesky()?;
        Ok(self.solve_natural(&chol, &self.basis.tr_mul_vec(y)))
    }

    /// Solves `(B̄ᵀB̄ + λI + ρCᵀC) β = B̄ᵀy + ρCᵀ(f − r − u)`.
    pub fn beta_step(
        &self,
        bty: &[f64],
        c: &SparseRows,
        forcing: &[f64],
        r: &[f64],
        u: &[f64],
        rho: f64,
    ) -> Result<Vec<f64>> {
        let mut k = self.gram.clone();
        c.accumulate_gram(rho, &self.perm, &mut k);
        self.solve_step(k, bty, c, forcing, r, u, rho)
    }

    /// Finishes a β update given the assembled system matrix `k`.
    #[allow(clippy::too_many_arguments)]
    fn solve_step(
        &self,
        k: BandedSpd,
        bty: &[f64],
        c: &SparseRows,
        forcing: &[f64],
        r: &[f64],
        u: &[f64],
        rho: f64,
    ) -> Result<Vec<f64>> {
        let w: Vec<f64> = (0..r.len()).map(|i| forcing[i] - r[i] - u[i]).collect();
        let mut rhs = c.tr_mul_vec(&w);
        for (a, b) in rhs.iter_mut().zip(bty) {
            *a = b + rho * *a;
        }
        let chol = k.cholesky()?;
        Ok(self.solve_natural(&chol, &rhs))
    }
}

/// Largest number of stored band entries spent on precomputed constraint
/// Gram blocks (256 MiB).
const GRAM_BLOCK_LIMIT: usize = 1 << 25;

/// `CᵀC` split by coefficient for a constraint that does not depend on β:
/// `CᵀC = F + Σ_j θ_j X_j + Σ_{j≤l} θ_j θ_l P_jl`. Summing these bands is
/// much cheaper than a pass over all constraint rows.
#[derive(Debug, Clone)]
struct ConstraintGram {
    fixed: BandedSpd,
    cross: Vec<BandedSpd>,
    pairs: Vec<(usize, usize, BandedSpd)>,
}

impl ConstraintGram {
    fn new(m: &ConstraintMatrices, normal: &NormalSystem) -> Option<Self> {
        let (dim, bw) = (normal.gram.dim(), normal.gram.bandwidth());
        let j = m.a_free.len();
        let blocks = 1 + j + j * (j + 1) / 2;
        if blocks.saturating_mul(dim * (bw + 1)) > GRAM_BLOCK_LIMIT {
            return None;
        }
        let perm = &normal.perm;
        let mut fixed = BandedSpd::zeros(dim, bw);
        m.a_fixed.accumulate_gram(1.0, perm, &mut fixed);
        let cross = m
            .a_free
            .iter()
            .map(|a| {
                let mut g = BandedSpd::zeros(dim, bw);
                m.a_fixed.accumulate_cross(a, 1.0, perm, &mut g);
                g
            })
            .collect();
        let mut pairs = Vec::new();
        for (i, a) in m.a_free.iter().enumerate() {
            for (l, b) in m.a_free.iter().enumerate().skip(i) {
                let mut g = BandedSpd::zeros(dim, bw);
                if i == l {
                    a.accumulate_gram(1.0, perm, &mut g);
                } else {
                    a.accumulate_cross(b, 1.0, perm, &mut g);
                }
                pairs.push((i, l, g));
            }
        }
        Some(Self { fixed, cross, pairs })
    }

    /// `base + ρ CᵀC` at `theta`.
    fn system(&self, base: &BandedSpd, theta: &[f64], rho: f64) -> BandedSpd {
        let mut k = base.clone();
        k.add_scaled(rho, &self.fixed);
        for (g, t) in self.cross.iter().zip(theta) {
            k.add_scaled(rho * t, g);
        }
        for (i, l, g) in &self.pairs {
            k.add_scaled(rho * theta[*i] * theta[*l], g);
        }
        k
    }
}

/// Reusable estimator for one model, basis and grid; repeated fits of
/// different observation vectors share the assembled matrices.
#[derive(Debug)]
pub struct Estimator {
    builder: ConstraintBuilder,
    normal: NormalSystem,
    cfg: AdmmConfig,
    n: usize,
    /// Constraint matrices and their Gram blocks when they do not depend on β.
    linear: Option<(ConstraintMatrices, Option<ConstraintGram>)>,
}

impl Estimator {
    pub fn new(
        model: &ModelSpec,
        spec: &BasisSpec,
        grid: &Grid,
        exogenous: Vec<Vec<f64>>,
        cfg: AdmmConfig,
    ) -> Result<Self> {
        cfg.validate(model.free_count())?;
        let builder = ConstraintBuilder::new(model, spec, grid, exogenous)?;
        let basis = builder
            .deriv_matrix(&DerivIndex::zero(grid.ndim()))
            .expect("builder always holds the undifferentiated basis")
            .clone();
        let normal = NormalSystem::new(basis, spec, cfg.ridge);
        let linear = (!builder.depends_on_beta()).then(|| {
            let m = builder.build(&vec![0.0; normal.basis.ncols()]);
            let gram = ConstraintGram::new(&m, &normal);
            (m, gram)
        });
        Ok(Self { builder, normal, cfg, n: grid.point_count(), linear })
    }

    pub fn config(&self) -> &AdmmConfig {
        &self.cfg
    }

    pub fn builder(&self) -> &ConstraintBuilder {
        &self.builder
    }

    pub fn normal(&self) -> &NormalSystem {
        &self.normal
    }

    /// Fitted surface `B̄β` on the grid.
    pub fn fitted(&self, beta: &[f64]) -> Vec<f64> {
        self.normal.basis.mul_vec(beta)
    }

    /// Runs ADMM on observations `y`.
    pub fn fit(&self, y: &[f64]) -> Result<FitResult> {
        self.fit_with(y, self.cfg.theta0.as_deref())
    }

    /// Runs ADMM with an explicit starting θ.
    pub fn fit_with(&self, y: &[f64], theta0: Option<&[f64]>) -> Result<FitResult> {
        let cfg = &self.cfg;
        let n = self.n;
        if y.len() != n {
            return Err(Error::AxisMismatch(format!("{} observations for {n} grid points", y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("observations must be finite"));
        }
        let names = self.builder.model().theta_names();
        let nfree = names.len();
        let theta = match theta0 {
            Some(t) if t.len() != nfree => {
                return Err(Error::argument(format!("theta0 has {} entries, expected {nfree}", t.len())))
            }
            Some(t) => t.to_vec(),
            None => vec![0.0; nfree],
        };
        let bty = self.normal.basis.tr_mul_vec(y);
        let beta = self.normal.least_squares(y)?;
        let mut st = AdmmState { beta, theta, r: vec![0.0; n], u: vec![0.0; n], iter: 0 };
        let mut primal_history = Vec::new();
        let mut theta_trace = Vec::new();
        let mut rebuilt: Option<ConstraintMatrices>;
        let converged = loop {
            let m = match &self.linear {
                Some((m, _)) => m,
                None => {
                    rebuilt = Some(self.builder.build(&st.beta));
                    rebuilt.as_ref().expect("built above")
                }
            };
            let old = st.theta.clone();
            let primal = self.iterate(&mut st, m, &bty, &names)?;
            primal_history.push(primal);
            if cfg.trace {
                theta_trace.push(st.theta.clone());
            }
            match check_convergence(&old, &st.theta, primal, st.iter, cfg) {
                Status::Continue => {}
                Status::Converged => break true,
                Status::Exhausted => break false,
            }
        };
        let fitted = self.fitted(&st.beta);
        let misfit = y.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        Ok(FitResult {
            theta: st.theta,
            beta: st.beta,
            iterations: st.iter,
            primal_history,
            theta_trace,
            misfit,
            converged,
        })
    }

    /// One pass of r, β, θ and dual updates. Returns `‖F + r‖/√n`.
    fn iterate(&self, st: &mut AdmmState, m: &ConstraintMatrices, bty: &[f64], names: &[&str]) -> Result<f64> {
        let cfg = &self.cfg;
        let n = self.n;
        let c = m.combined(&st.theta);
        let mut f = c.mul_vec(&st.beta);
        for (v, g) in f.iter_mut().zip(&m.forcing) {
            *v -= g;
        }
        st.r = r_step(&f, &st.u, cfg.mu, cfg.rho);
        st.beta = match &self.linear {
            Some((_, Some(gram))) => {
                let k = gram.system(&self.normal.gram, &st.theta, cfg.rho);
                self.normal.solve_step(k, bty, &c, &m.forcing, &st.r, &st.u, cfg.rho)?
            }
            _ => self.normal.beta_step(bty, &c, &m.forcing, &st.r, &st.u, cfg.rho)?,
        };

        // θ block, Gauss-Seidel in declaration order
        let mut p = m.a_fixed.mul_vec(&st.beta);
        for (v, g) in p.iter_mut().zip(&m.forcing) {
            *v -= g;
        }
        let scale = dot(&p, &p).max(f64::MIN_POSITIVE);
        let vs: Vec<Vec<f64>> = m.a_free.iter().map(|a| a.mul_vec(&st.beta)).collect();
        let mut total = p.clone();
        for (v, &t) in vs.iter().zip(&st.theta) {
            crate::linalg::axpy(t, v, &mut total);
        }
        for j in 0..vs.len() {
            crate::linalg::axpy(-st.theta[j], &vs[j], &mut total);
            let t = theta_step(&vs[j], &total, &st.r, &st.u, scale)
                .ok_or_else(|| Error::DegenerateTerm(names[j].to_string()))?;
            st.theta[j] = t;
            crate::linalg::axpy(t, &vs[j], &mut total);
        }
        if st.theta.iter().any(|t| !t.is_finite()) || st.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numerical(format!("non-finite iterate at iteration {}", st.iter + 1)));
        }
        dual_step(&mut st.u, &total, &st.r, cfg.gamma);
        st.iter += 1;
        let fr: Vec<f64> = total.iter().zip(&st.r).map(|(a, b)| a + b).collect();
        Ok(norm2(&fr) / (n as f64).sqrt())
    }
}

/// Fits `model` to observations `y` on `grid`.
pub fn fit(
    y: &[f64],
    model: &ModelSpec,
    spec: &BasisSpec,
    grid: &Grid,
    exogenous: Vec<Vec<f64>>,
    cfg: &AdmmConfig,
) -> Result<FitResult> {
    Estimator::new(model, spec, grid, exogenous, cfg.clone())?.fit(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;
    use crate::tensor::{Axis, BasisOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// A small 1-D instance: n = 40 points, m = 12 coefficients.
    struct Small {
        est: Estimator,
        y: Vec<f64>,
        cm: ConstraintMatrices,
        beta: Vec<f64>,
    }

    fn small(rho: f64) -> Small {
        let model = parse_model("axes x;\nfield u;\nanchor D(u,x,2);\nterm a: D(u,x,1);\nterm b: u*u;\nforcing sin(x);\n")
            .unwrap();
        let grid = Grid::new(vec![Axis::uniform("x", 0.0, 2.0, 40)]).unwrap();
        let mut opts = BasisOptions::default();
        opts.knots.insert("x".into(), 10);
        let spec = BasisSpec::for_grid(&grid, &model.max_derivs(), &opts).unwrap();
        assert_eq!(spec.coefficient_count(), 12);
        let cfg = AdmmConfig { rho, ridge: Some(1e-3), ..AdmmConfig::default() };
        let est = Estimator::new(&model, &spec, &grid, vec![], cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let y = random_vec(&mut rng, 40);
        let beta = random_vec(&mut rng, 12);
        let cm = est.builder().build(&beta);
        Small { est, y, cm, beta }
    }

    /// `½‖y − Bβ‖² + (λ/2)‖β‖² + (ρ/2)‖Cβ − f + r + u‖²`
    fn lagrangian_beta(s: &Small, beta: &[f64], c: &SparseRows, r: &[f64], u: &[f64], rho: f64) -> (f64, Vec<f64>) {
        let b = s.est.normal().basis();
        let lam = s.est.normal().ridge();
        let res: Vec<f64> = b.mul_vec(beta).iter().zip(&s.y).map(|(a, y)| a - y).collect();
        let cb = c.mul_vec(beta);
        let g: Vec<f64> = (0..r.len()).map(|i| cb[i] - s.cm.forcing[i] + r[i] + u[i]).collect();
        let val = 0.5 * dot(&res, &res) + 0.5 * lam * dot(beta, beta) + 0.5 * rho * dot(&g, &g);
        let mut grad = b.tr_mul_vec(&res);
        let cg = c.tr_mul_vec(&g);
        for k in 0..grad.len() {
            grad[k] += lam * beta[k] + rho * cg[k];
        }
        (val, grad)
    }

    #[test]
    fn beta_step_matches_gradient_descent() {
        let rho = 0.5;
        let s = small(rho);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let theta = [0.3, -0.8];
        let r = random_vec(&mut rng, 40);
        let u = random_vec(&mut rng, 40);
        let c = s.cm.combined(&theta);
        let bty = s.est.normal().basis().tr_mul_vec(&s.y);
        let got = s.est.normal().beta_step(&bty, &c, &s.cm.forcing, &r, &u, rho).unwrap();

        // step 1/L with L bounded by the Frobenius norm of the Hessian
        let dense_b = s.est.normal().basis().to_dense();
        let dense_c = c.to_dense();
        let mut fro = 0.0;
        for i in 0..12 {
            for j in 0..12 {
                let mut h = if i == j { s.est.normal().ridge() } else { 0.0 };
                for k in 0..40 {
                    h += dense_b[(k, i)] * dense_b[(k, j)] + rho * dense_c[(k, i)] * dense_c[(k, j)];
                }
                fro += h * h;
            }
        }
        let step = 1.0 / fro.sqrt();
        let mut beta = vec![0.0; 12];
        for _ in 0..2_000_000 {
            let (_, g) = lagrangian_beta(&s, &beta, &c, &r, &u, rho);
            if norm2(&g) < 1e-12 {
                break;
            }
            for k in 0..12 {
                beta[k] -= step * g[k];
            }
        }
        for (a, b) in got.iter().zip(&beta) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
        // also not above the value at the old iterate
        let (at_new, _) = lagrangian_beta(&s, &got, &c, &r, &u, rho);
        let (at_old, _) = lagrangian_beta(&s, &s.beta, &c, &r, &u, rho);
        assert!(at_new <= at_old);
    }

    #[test]
    fn beta_step_without_constraint_is_least_squares() {
        let s = small(1.0);
        let bty = s.est.normal().basis().tr_mul_vec(&s.y);
        let c = s.cm.combined(&[1.0, 1.0]);
        let z = vec![0.0; 40];
        let got = s.est.normal().beta_step(&bty, &c, &s.cm.forcing, &z, &z, 0.0).unwrap();
        let ls = s.est.normal().least_squares(&s.y).unwrap();
        for (a, b) in got.iter().zip(&ls) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        while (b - a).abs() > 1e-13 {
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - g * (b - a);
            d = a + g * (b - a);
        }
        0.5 * (a + b)
    }

    #[test]
    fn theta_step_matches_golden_section() {
        let s = small(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = random_vec(&mut rng, 40);
        let u = random_vec(&mut rng, 40);
        let theta = [0.4, 1.1];
        let v = s.cm.a_free[1].mul_vec(&s.beta);
        let p = s.cm.residual(&s.beta, &[theta[0], 0.0]);
        let got = theta_step(&v, &p, &r, &u, 1.0).unwrap();
        let obj = |t: f64| {
            (0..40).map(|i| (p[i] + t * v[i] + r[i] + u[i]).powi(2)).sum::<f64>()
        };
        let want = golden(obj, -100.0, 100.0);
        assert!((got - want).abs() < 1e-8 * (1.0 + want.abs()), "{got} vs {want}");
    }

    #[test]
    fn theta_step_forced_solution_and_degeneracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_vec(&mut rng, 30);
        let r = random_vec(&mut rng, 30);
        let u = random_vec(&mut rng, 30);
        let v: Vec<f64> = (0..30).map(|i| -(p[i] + r[i] + u[i])).collect();
        let t = theta_step(&v, &p, &r, &u, 1.0).unwrap();
        assert!((t - 1.0).abs() < 1e-14);
        assert_eq!(theta_step(&[0.0; 30], &p, &r, &u, 1.0), None);
        assert_eq!(theta_step(&[1e-9; 30], &p, &r, &u, 1.0), None);
    }

    #[test]
    fn r_step_matches_quadratic_minimiser() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_vec(&mut rng, 25);
        let u = random_vec(&mut rng, 25);
        let (mu, rho) = (0.7, 2.3);
        let r = r_step(&f, &u, mu, rho);
        // per component the objective is an exact parabola; fit it from
        // three samples and take its vertex
        for i in 0..25 {
            let q = |x: f64| x * x / (2.0 * mu) + 0.5 * rho * (f[i] + x + u[i]).powi(2);
            let (a, b, c) = (q(-1.0), q(0.0), q(1.0));
            let vertex = (a - c) / (2.0 * (a - 2.0 * b + c));
            assert!((r[i] - vertex).abs() < 1e-10);
        }
        let half = r_step(&f, &u, 1.0, 1.0);
        for i in 0..25 {
            assert!((half[i] + 0.5 * (f[i] + u[i])).abs() < 1e-15);
        }
        let tiny = r_step(&f, &u, 1e-12, 1.0);
        assert!(tiny.iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn dual_step_cases() {
        let mut u = vec![1.0, 2.0];
        dual_step(&mut u, &[3.0, 4.0], &[1.0, 1.0], 0.0);
        assert_eq!(u, [1.0, 2.0]);
        dual_step(&mut u, &[3.0, 4.0], &[-3.0, -4.0], 1.0);
        assert_eq!(u, [1.0, 2.0]);
        dual_step(&mut u, &[0.5, 0.25], &[0.0, 0.0], 1.5);
        dual_step(&mut u, &[0.5, 0.25], &[0.0, 0.0], 1.5);
        assert_eq!(u, [2.5, 2.75]);
    }

    #[test]
    fn convergence_is_a_conjunction() {
        let cfg = AdmmConfig { max_iter: 10, ..AdmmConfig::default() };
        assert_eq!(check_convergence(&[1.0], &[1.0], 0.0, 3, &cfg), Status::Converged);
        assert_eq!(check_convergence(&[1.0], &[1.0 + 1e-9], 1e-3, 3, &cfg), Status::Continue);
        assert_eq!(check_convergence(&[1.0], &[2.0], 0.0, 3, &cfg), Status::Continue);
        assert_eq!(check_convergence(&[1.0], &[2.0], 5.0, 10, &cfg), Status::Exhausted);
        // relative change uses max(1, |θ|)
        assert_eq!(check_convergence(&[1e4], &[1e4 + 1e-5], 0.0, 1, &cfg), Status::Converged);
    }

    #[test]
    fn config_validation() {
        assert!(AdmmConfig::default().validate(2).is_ok());
        assert!(AdmmConfig { rho: 0.0, ..Default::default() }.validate(2).is_err());
        assert!(AdmmConfig { mu: -1.0, ..Default::default() }.validate(2).is_err());
        assert!(AdmmConfig { gamma: 2.5, ..Default::default() }.validate(2).is_err());
        assert!(AdmmConfig { max_iter: 0, ..Default::default() }.validate(2).is_err());
        assert!(AdmmConfig { theta0: Some(vec![1.0]), ..Default::default() }.validate(2).is_err());
    }

    /// Data `y = B̄β₀` where `β₀` satisfies `u_t + c·u_x = 0` exactly at the
    /// grid points: a spline in the travelling coordinate `x − c t`.
    #[test]
    fn exact_feasible_data_is_recovered() {
        let model = parse_model("axes x, t;\nfield u;\nanchor D(u,t,1);\nterm c: D(u,x,1);\n").unwrap();
        let grid = Grid::new(vec![Axis::uniform("x", 0.0, 1.0, 30), Axis::uniform("t", 0.0, 1.0, 20)]).unwrap();
        let mut opts = BasisOptions::default();
        opts.knots.insert("x".into(), 8);
        opts.knots.insert("t".into(), 4);
        opts.orders.insert("t".into(), 3);
        opts.orders.insert("x".into(), 3);
        let spec = BasisSpec::for_grid(&grid, &model.max_derivs(), &opts).unwrap();
        // u = (x - 0.5 t)² is in the span of degree-2 splines in each axis
        let y: Vec<f64> = grid.points().iter().map(|p| (p[0] - 0.5 * p[1]).powi(2)).collect();
        let cfg = AdmmConfig { ridge: Some(0.0), tol_primal: 1e-11, tol_theta: 1e-12, max_iter: 20000, ..Default::default() };
        let res = fit(&y, &model, &spec, &grid, vec![], &cfg).unwrap();
        assert!(res.converged, "{res:?}");
        assert!((res.theta[0] - 0.5).abs() < 1e-6, "{:?}", res.theta);
        assert!(res.misfit < 1e-8, "misfit {}", res.misfit);
        assert_eq!(res.primal_history.len(), res.iterations);
    }

    #[test]
    fn identical_inputs_give_identical_results() {
        let s = small(1.0);
        let a = s.est.fit(&s.y).unwrap();
        let b = s.est.fit(&s.y).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn beta_step_agrees_with_dense_normal_equations() {
        let rho = 2.0;
        let s = small(rho);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_vec(&mut rng, 40);
        let u = random_vec(&mut rng, 40);
        let c = s.cm.combined(&[-0.2, 0.9]);
        let bty = s.est.normal().basis().tr_mul_vec(&s.y);
        let got = s.est.normal().beta_step(&bty, &c, &s.cm.forcing, &r, &u, rho).unwrap();
        let (_, g) = lagrangian_beta(&s, &got, &c, &r, &u, rho);
        assert!(norm2(&g) < 1e-9, "gradient {}", norm2(&g));
    }

    #[test]
    fn gram_blocks_reproduce_the_assembled_system() {
        let model = parse_model(
            "axes x, t;\nfield u;\nanchor D(u,t,1);\nterm a: D(u,x,1);\nterm b: D(u,x,2);\nfixedterm 0.3: 2*u;\n",
        )
        .unwrap();
        let grid = Grid::new(vec![Axis::uniform("x", 0.0, 1.0, 25), Axis::uniform("t", 0.0, 1.0, 15)]).unwrap();
        let spec = BasisSpec::for_grid(&grid, &model.max_derivs(), &BasisOptions::default()).unwrap();
        let est = Estimator::new(&model, &spec, &grid, vec![], AdmmConfig::default()).unwrap();
        let (m, gram) = est.linear.as_ref().expect("linear model");
        let gram = gram.as_ref().expect("small enough to precompute");
        let theta = [0.7, -1.3];
        let rho = 0.25;
        let got = gram.system(&est.normal.gram, &theta, rho);
        let mut want = est.normal.gram.clone();
        m.combined(&theta).accumulate_gram(rho, &est.normal.perm, &mut want);
        let dim = want.dim();
        let scale = want.trace() / dim as f64;
        for i in 0..dim {
            for j in i.saturating_sub(want.bandwidth())..=i {
                assert!((got.get(i, j) - want.get(i, j)).abs() < 1e-12 * scale, "({i}, {j})");
            }
        }
    }
}
