//! Deterministic generators for the benchmark oscillators and PDEs.

use crate::datasets::FieldData;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::tensor::{Axis, Grid};

#[cfg(test)]
const PI: f64 = std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub enum OdeModel {
    /// `x'' + θ1 x' + θ2 x + θ3 x³ = amplitude·cos(omega·t)`
    Duffing { theta: [f64; 3], amplitude: f64, omega: f64 },
    /// `x'' + θ1 x' + θ2 x² x' + θ3 x = 0`
    VanDerPol { theta: [f64; 3] },
}

impl OdeModel {
    fn accel(&self, t: f64, x: f64, v: f64) -> f64 {
        match *self {
            OdeModel::Duffing { theta, amplitude, omega } => {
                amplitude * (omega * t).cos() - theta[0] * v - theta[1] * x - theta[2] * x * x * x
            }
            OdeModel::VanDerPol { theta } => -theta[0] * v - theta[1] * x * x * v - theta[2] * x,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSetup {
    pub model: OdeModel,
    pub x0: f64,
    pub v0: f64,
    pub t0: f64,
    pub t1: f64,
    /// Output samples including both ends.
    pub samples: usize,
    /// Integration steps per output interval.
    pub substeps: usize,
}

impl OdeSetup {
    /// Setup whose internal step does not exceed `1e-3`.
    pub fn new(model: OdeModel, x0: f64, v0: f64, t0: f64, t1: f64, samples: usize) -> Self {
        let interval = (t1 - t0) / samples.saturating_sub(1).max(1) as f64;
        let substeps = (interval / 1e-3).ceil().max(1.0) as usize;
        Self { model, x0, v0, t0, t1, samples, substeps }
    }

    /// Forced Duffing oscillator with `θ = (0.5, −1, 1)`, forcing `0.42 cos t`,
    /// 4000 samples over `[0, 200]`.
    pub fn duffing_default() -> Self {
        Self::new(
            OdeModel::Duffing { theta: [0.5, -1.0, 1.0], amplitude: 0.42, omega: 1.0 },
            0.5,
            0.0,
            0.0,
            200.0,
            4000,
        )
    }

    /// Van der Pol relaxation oscillator with `θ = (−8, 8, 1)`, 5000 samples
    /// over `[0, 50]`.
    pub fn vanderpol_default() -> Self {
        Self::new(OdeModel::VanDerPol { theta: [-8.0, 8.0, 1.0] }, 2.0, 0.0, 0.0, 50.0, 5000)
    }
}

/// Classical fourth-order Runge-Kutta integration; returns `x(t)` as field
/// `x` on axis `t`.
pub fn simulate_ode(setup: &OdeSetup) -> Result<FieldData> {
    let OdeSetup { ref model, x0, v0, t0, t1, samples, substeps } = *setup;
    let params_finite = match model {
        OdeModel::Duffing { theta, amplitude, omega } => {
            theta.iter().chain([amplitude, omega]).all(|v| v.is_finite())
        }
        OdeModel::VanDerPol { theta } => theta.iter().all(|v| v.is_finite()),
    };
    if samples < 2 || substeps == 0 || !(t1 > t0) || !params_finite || !x0.is_finite() || !v0.is_finite() {
        return Err(Error::argument("ODE setup needs t1 > t0, at least 2 samples, 1 substep and finite values"));
    }
    let grid = Grid::new(vec![Axis::uniform("t", t0, t1, samples)])?;
    let times = grid.axes()[0].coords.clone();
    let mut out = Vec::with_capacity(samples);
    let (mut x, mut v) = (x0, v0);
    out.push(x);
    for k in 1..samples {
        let (ta, tb) = (times[k - 1], times[k]);
        let dt = (tb - ta) / substeps as f64;
        for s in 0..substeps {
            let t = ta + dt * s as f64;
            let k1x = v;
            let k1v = model.accel(t, x, v);
            let k2x = v + 0.5 * dt * k1v;
            let k2v = model.accel(t + 0.5 * dt, x + 0.5 * dt * k1x, k2x);
            let k3x = v + 0.5 * dt * k2v;
            let k3v = model.accel(t + 0.5 * dt, x + 0.5 * dt * k2x, k3x);
            let k4x = v + dt * k3v;
            let k4v = model.accel(t + dt, x + dt * k3x, k4x);
            x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        }
        if !x.is_finite() || !v.is_finite() {
            return Err(Error::Simulation(format!("state blew up near t = {tb}")));
        }
        out.push(x);
    }
    FieldData::single(grid, "x", out)
}

/// `u_tt = θ1 u_xx + θ2 u_yy` on `[−1, 1]²`, `u = 0` at `x = ±1`,
/// `u_y = 0` at `y = ±1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveSetup {
    pub theta1: f64,
    pub theta2: f64,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub t1: f64,
    /// Internal grid refinement factor in each space direction.
    pub refine: usize,
    /// Integration steps per output interval; `None` picks the smallest
    /// count within 90% of the stability bound.
    pub substeps: Option<usize>,
    /// Initial displacement and velocity as expressions in `x` and `y`.
    pub displacement: Expr,
    pub velocity: Expr,
}

impl WaveSetup {
    pub fn new(theta1: f64, theta2: f64, nx: usize, ny: usize, nt: usize) -> Self {
        let vars = ["x", "y"];
        Self {
            theta1,
            theta2,
            nx,
            ny,
            nt,
            t1: 10.0,
            refine: 2,
            substeps: None,
            displacement: Expr::parse("3*sin(3.141592653589793*x)*exp(sin(1.5707963267948966*y))", &vars)
                .expect("built-in expression"),
            velocity: Expr::parse("atan(cos(1.5707963267948966*x))", &vars).expect("built-in expression"),
        }
    }
}

/// Leapfrog integrator state on the internal grid.
#[derive(Debug, Clone)]
pub struct WaveSolver {
    theta: (f64, f64),
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    dt: f64,
    prev: Vec<f64>,
    cur: Vec<f64>,
    time: f64,
}

impl WaveSolver {
    /// Starts from the setup's initial data with step `dt`; the first step
    /// uses the Taylor expansion `u¹ = u⁰ + dt v⁰ + dt²/2 (θ1 u_xx + θ2 u_yy)`.
    pub fn new(setup: &WaveSetup, nx: usize, ny: usize, dt: f64) -> Result<Self> {
        let (t1, t2) = (setup.theta1, setup.theta2);
        if !(t1 > 0.0 && t2 > 0.0 && t1.is_finite() && t2.is_finite()) {
            return Err(Error::argument("wave speeds squared must be positive"));
        }
        if nx < 3 || ny < 2 {
            return Err(Error::argument("wave grid too small"));
        }
        let hx = 2.0 / (nx - 1) as f64;
        let hy = 2.0 / (ny - 1) as f64;
        let bound = wave_cfl_bound(t1, t2, hx, hy);
        if !(dt > 0.0 && dt <= bound) {
            return Err(Error::Simulation(format!("time step {dt} violates the stability bound {bound}")));
        }
        let xs: Vec<f64> = crate::tensor::uniform_coords(-1.0, 1.0, nx);
        let ys: Vec<f64> = crate::tensor::uniform_coords(-1.0, 1.0, ny);
        let mut u0 = vec![0.0; nx * ny];
        let mut v0 = vec![0.0; nx * ny];
        for i in 1..nx - 1 {
            for j in 0..ny {
                let p = [xs[i], ys[j]];
                u0[i * ny + j] = setup.displacement.eval(&p);
                v0[i * ny + j] = setup.velocity.eval(&p);
            }
        }
        let mut s = Self { theta: (t1, t2), nx, ny, hx, hy, dt, prev: u0.clone(), cur: u0, time: 0.0 };
        let lap = s.operator(&s.cur);
        let first: Vec<f64> =
            (0..nx * ny).map(|k| s.cur[k] + dt * v0[k] + 0.5 * dt * dt * lap[k]).collect();
        s.prev = std::mem::replace(&mut s.cur, first);
        s.clear_dirichlet();
        s.time = dt;
        Ok(s)
    }

    fn clear_dirichlet(&mut self) {
        let ny = self.ny;
        for j in 0..ny {
            self.cur[j] = 0.0;
            self.cur[(self.nx - 1) * ny + j] = 0.0;
        }
    }

    /// `θ1 u_xx + θ2 u_yy` with mirrored ghost rows in `y`.
    fn operator(&self, u: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let cx = self.theta.0 / (self.hx * self.hx);
        let cy = self.theta.1 / (self.hy * self.hy);
        let mut out = vec![0.0; nx * ny];
        for i in 1..nx - 1 {
            for j in 0..ny {
                let k = i * ny + j;
                let uxx = u[k - ny] - 2.0 * u[k] + u[k + ny];
                let down = if j == 0 { u[k + 1] } else { u[k - 1] };
                let up = if j == ny - 1 { u[k - 1] } else { u[k + 1] };
                let uyy = down - 2.0 * u[k] + up;
                out[k] = cx * uxx + cy * uyy;
            }
        }
        out
    }

    pub fn step(&mut self) {
        let lap = self.operator(&self.cur);
        let dt2 = self.dt * self.dt;
        let next: Vec<f64> =
            (0..self.cur.len()).map(|k| 2.0 * self.cur[k] - self.prev[k] + dt2 * lap[k]).collect();
        self.prev = std::mem::replace(&mut self.cur, next);
        self.clear_dirichlet();
        self.time += self.dt;
    }

    pub fn current(&self) -> &[f64] {
        &self.cur
    }

    pub fn previous(&self) -> &[f64] {
        &self.prev
    }

    pub fn time(&self) -> f64 {
        self.time
    }
}

/// Largest stable leapfrog step for the given spacings.
pub fn wave_cfl_bound(theta1: f64, theta2: f64, hx: f64, hy: f64) -> f64 {
    1.0 / (theta1 / (hx * hx) + theta2 / (hy * hy)).sqrt()
}

/// Explicit leapfrog solution sampled on `nx × ny × nt` points of
/// `[−1, 1]² × [0, t1]`, axes `x, y, t`, field `u`.
pub fn simulate_wave2d(setup: &WaveSetup) -> Result<FieldData> {
    let WaveSetup { nx, ny, nt, refine, t1, .. } = *setup;
    if nx < 3 || ny < 2 || nt < 2 || refine == 0 || !(t1 > 0.0) {
        return Err(Error::argument("wave setup needs nx ≥ 3, ny ≥ 2, nt ≥ 2, refine ≥ 1 and t1 > 0"));
    }
    let (fx, fy) = ((nx - 1) * refine + 1, (ny - 1) * refine + 1);
    let interval = t1 / (nt - 1) as f64;
    let hx = 2.0 / (fx - 1) as f64;
    let hy = 2.0 / (fy - 1) as f64;
    let bound = wave_cfl_bound(setup.theta1, setup.theta2, hx, hy);
    let substeps = match setup.substeps {
        Some(0) => return Err(Error::argument("substeps must be at least 1")),
        Some(s) => s,
        None => (interval / (0.9 * bound)).ceil().max(1.0) as usize,
    };
    let dt = interval / substeps as f64;
    if dt > bound {
        return Err(Error::Simulation(format!("time step {dt} violates the stability bound {bound}")));
    }
    let mut solver = WaveSolver::new(setup, fx, fy, dt)?;
    let mut frames: Vec<Vec<f64>> = Vec::with_capacity(nt);
    let sample = |u: &[f64]| -> Vec<f64> {
        let mut f = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                f.push(u[(i * refine) * fy + j * refine]);
            }
        }
        f
    };
    frames.push(sample(solver.previous()));
    for k in 1..nt {
        let steps = if k == 1 { substeps - 1 } else { substeps };
        for _ in 0..steps {
            solver.step();
        }
        let f = sample(solver.current());
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Simulation("wave solution blew up".into()));
        }
        frames.push(f);
    }
    let grid = Grid::new(vec![
        Axis::uniform("x", -1.0, 1.0, nx),
        Axis::uniform("y", -1.0, 1.0, ny),
        Axis::uniform("t", 0.0, t1, nt),
    ])?;
    let mut values = vec![0.0; nx * ny * nt];
    for (k, f) in frames.iter().enumerate() {
        for (s, &v) in f.iter().enumerate() {
            values[s * nt + k] = v;
        }
    }
    FieldData::single(grid, "u", values)
}

/// `u_t + θ1 u u_x + θ2 u_xx = 0` on a periodic interval (diffusion `−θ2`).
#[derive(Debug, Clone, PartialEq)]
pub struct BurgersSetup {
    pub theta1: f64,
    pub theta2: f64,
    pub x0: f64,
    pub x1: f64,
    /// Output points in `x`; the last sample sits one spacing before `x1`.
    pub nx: usize,
    pub t1: f64,
    pub nt: usize,
    /// Internal grid refinement factor.
    pub refine: usize,
    /// Advective Courant number of the internal step.
    pub courant: f64,
    /// Initial profile as an expression in `x`.
    pub initial: Expr,
}

impl BurgersSetup {
    pub fn new(theta1: f64, theta2: f64) -> Self {
        Self {
            theta1,
            theta2,
            x0: -8.0,
            x1: 8.0,
            nx: 256,
            t1: 10.0,
            nt: 101,
            refine: 4,
            courant: 0.4,
            initial: Expr::parse("exp(-(x+2)*(x+2))", &["x"]).expect("built-in expression"),
        }
    }
}

/// Solves `(1 + 2r) x_i − r (x_{i−1} + x_{i+1}) = b_i` with periodic
/// wrap-around.
fn solve_periodic_tridiagonal(r: f64, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let (a, diag, c) = (-r, 1.0 + 2.0 * r, -r);
    // Sherman-Morrison on the cyclic system
    let gamma = -diag;
    let mut d = vec![diag; n];
    d[0] = diag - gamma;
    d[n - 1] = diag - a * c / gamma;
    let thomas = |rhs: &[f64]| -> Vec<f64> {
        let mut cp = vec![0.0; n];
        let mut x = vec![0.0; n];
        cp[0] = c / d[0];
        x[0] = rhs[0] / d[0];
        for i in 1..n {
            let m = d[i] - a * cp[i - 1];
            cp[i] = c / m;
            x[i] = (rhs[i] - a * x[i - 1]) / m;
        }
        for i in (0..n - 1).rev() {
            x[i] -= cp[i] * x[i + 1];
        }
        x
    };
    let y = thomas(b);
    let mut uvec = vec![0.0; n];
    uvec[0] = gamma;
    uvec[n - 1] = a;
    let z = thomas(&uvec);
    let fact = (y[0] + c * y[n - 1] / gamma) / (1.0 + z[0] + c * z[n - 1] / gamma);
    y.iter().zip(&z).map(|(yi, zi)| yi - fact * zi).collect()
}

/// `−∂x(θ1 u²/2)` by Lax-Friedrichs flux splitting and third-order
/// upwind-biased reconstruction, conservative on the periodic grid.
fn advection_rate(u: &[f64], theta1: f64, h: f64, out: &mut [f64]) {
    let n = u.len();
    let alpha = u.iter().fold(0.0f64, |m, v| m.max((theta1 * v).abs()));
    let fp: Vec<f64> = u.iter().map(|&v| 0.5 * (0.5 * theta1 * v * v + alpha * v)).collect();
    let fm: Vec<f64> = u.iter().map(|&v| 0.5 * (0.5 * theta1 * v * v - alpha * v)).collect();
    let idx = |i: isize| i.rem_euclid(n as isize) as usize;
    // flux through the right face of each cell
    let face: Vec<f64> = (0..n as isize)
        .map(|i| {
            let plus = (-fp[idx(i - 1)] + 5.0 * fp[idx(i)] + 2.0 * fp[idx(i + 1)]) / 6.0;
            let minus = (2.0 * fm[idx(i)] + 5.0 * fm[idx(i + 1)] - fm[idx(i + 2)]) / 6.0;
            plus + minus
        })
        .collect();
    for i in 0..n {
        out[i] = -(face[i] - face[(i + n - 1) % n]) / h;
    }
}

/// Semi-implicit solution on the periodic domain, axes `x, t`, field `u`.
///
/// Each step applies a Crank-Nicolson half step of diffusion, a
/// strong-stability-preserving Runge-Kutta step of upwind advection, and a
/// second diffusion half step. The internal grid is `refine` times finer
/// than the output grid.
pub fn simulate_burgers(setup: &BurgersSetup) -> Result<FieldData> {
    let s = setup;
    if !(-s.theta2 > 0.0) || !s.theta1.is_finite() || !s.theta2.is_finite() {
        return Err(Error::argument("Burgers diffusion −θ2 must be positive"));
    }
    if s.nx < 4 || s.nt < 2 || s.refine == 0 || !(s.x1 > s.x0) || !(s.t1 > 0.0) || !(s.courant > 0.0 && s.courant <= 1.0) {
        return Err(Error::argument("invalid Burgers grid setup"));
    }
    let nu = -s.theta2;
    let n = s.nx * s.refine;
    let h = (s.x1 - s.x0) / n as f64;
    let xs: Vec<f64> = (0..n).map(|i| s.x0 + h * i as f64).collect();
    let mut u: Vec<f64> = xs.iter().map(|&x| s.initial.eval(&[x])).collect();
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Simulation("initial profile is not finite".into()));
    }
    let (lo, hi) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let limit = 10.0 * (hi - lo).max(hi.abs()).max(lo.abs()).max(f64::MIN_POSITIVE);

    let interval = s.t1 / (s.nt - 1) as f64;
    let speed = (s.theta1 * hi.abs().max(lo.abs())).abs().max(1e-12);
    let substeps = (interval * speed / (s.courant * h)).ceil().max(1.0) as usize;
    let dt = interval / substeps as f64;
    let r = 0.5 * nu * (0.5 * dt) / (h * h);

    let diffuse = |u: &mut Vec<f64>| {
        let rhs: Vec<f64> = (0..n).map(|i| u[i] + r * (u[(i + n - 1) % n] - 2.0 * u[i] + u[(i + 1) % n])).collect();
        *u = solve_periodic_tridiagonal(r, &rhs);
    };
    let mut k1 = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut advect = |u: &mut Vec<f64>| {
        advection_rate(u, s.theta1, h, &mut k1);
        for i in 0..n {
            stage[i] = u[i] + dt * k1[i];
        }
        advection_rate(&stage, s.theta1, h, &mut k1);
        for i in 0..n {
            stage[i] = 0.75 * u[i] + 0.25 * (stage[i] + dt * k1[i]);
        }
        advection_rate(&stage, s.theta1, h, &mut k1);
        for i in 0..n {
            u[i] = u[i] / 3.0 + 2.0 / 3.0 * (stage[i] + dt * k1[i]);
        }
    };

    let mut frames = vec![sample_every(&u, s.refine)];
    for k in 1..s.nt {
        for _ in 0..substeps {
            diffuse(&mut u);
            advect(&mut u);
            diffuse(&mut u);
        }
        if u.iter().any(|v| !v.is_finite() || v.abs() > limit) {
            return Err(Error::Simulation(format!("Burgers solution unstable near t = {}", interval * k as f64)));
        }
        frames.push(sample_every(&u, s.refine));
    }
    let hx = (s.x1 - s.x0) / s.nx as f64;
    let grid = Grid::new(vec![
        Axis::uniform("x", s.x0, s.x1 - hx, s.nx),
        Axis::uniform("t", 0.0, s.t1, s.nt),
    ])?;
    let mut values = vec![0.0; s.nx * s.nt];
    for (k, f) in frames.iter().enumerate() {
        for (i, &v) in f.iter().enumerate() {
            values[i * s.nt + k] = v;
        }
    }
    FieldData::single(grid, "u", values)
}

fn sample_every(u: &[f64], step: usize) -> Vec<f64> {
    u.iter().step_by(step).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_oscillator(dt: f64) -> OdeSetup {
        let mut s = OdeSetup::new(
            OdeModel::Duffing { theta: [0.0, 1.0, 0.0], amplitude: 0.0, omega: 1.0 },
            1.0,
            0.0,
            0.0,
            20.0,
            201,
        );
        s.substeps = (0.1 / dt).round() as usize;
        s
    }

    #[test]
    fn linear_oscillator_is_cosine() {
        let d = simulate_ode(&linear_oscillator(1e-3)).unwrap();
        let x = d.field("x").unwrap();
        for (t, v) in d.grid.axes()[0].coords.iter().zip(x) {
            assert!((v - t.cos()).abs() < 1e-6);
        }
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let setup = |sub: usize| {
            let mut s = OdeSetup::vanderpol_default();
            s.t1 = 5.0;
            s.samples = 51;
            s.substeps = sub;
            s
        };
        let reference = simulate_ode(&setup(160)).unwrap();
        let coarse = simulate_ode(&setup(10)).unwrap();
        let fine = simulate_ode(&setup(20)).unwrap();
        let err = |d: &FieldData| {
            d.values[0].iter().zip(&reference.values[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let ratio = err(&coarse) / err(&fine);
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn vanderpol_limit_cycle_amplitude() {
        let d = simulate_ode(&OdeSetup::vanderpol_default()).unwrap();
        let x = d.field("x").unwrap();
        let settled = &x[x.len() / 2..];
        let amp = settled.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((amp - 2.0).abs() < 0.02, "amplitude {amp}");
    }

    #[test]
    fn ode_rejects_bad_setup() {
        let mut s = OdeSetup::vanderpol_default();
        s.samples = 1;
        assert!(simulate_ode(&s).is_err());
        let mut s = OdeSetup::vanderpol_default();
        s.substeps = 1;
        s.model = OdeModel::Duffing { theta: [0.0, 1.0, 1e6], amplitude: 0.0, omega: 1.0 };
        s.x0 = 100.0;
        assert!(matches!(simulate_ode(&s), Err(Error::Simulation(_))));
    }

    #[test]
    fn wave_zero_data_stays_zero() {
        let mut s = WaveSetup::new(1.0, 1.0, 11, 9, 6);
        s.displacement = Expr::Num(0.0);
        s.velocity = Expr::Num(0.0);
        let d = simulate_wave2d(&s).unwrap();
        assert!(d.values[0].iter().all(|&v| v == 0.0));
        assert_eq!(d.grid.shape(), [11, 9, 6]);
    }

    #[test]
    fn wave_standing_mode() {
        let mut s = WaveSetup::new(1.0, 1.0, 41, 5, 11);
        s.t1 = 1.0;
        s.refine = 4;
        s.displacement = Expr::parse("sin(3.141592653589793*x)", &["x", "y"]).unwrap();
        s.velocity = Expr::Num(0.0);
        let d = simulate_wave2d(&s).unwrap();
        let nt = 11;
        let xs = &d.grid.axes()[0].coords;
        for (i, x) in xs.iter().enumerate() {
            for j in 0..5 {
                let got = d.values[0][(i * 5 + j) * nt + nt - 1];
                let want = (PI * x).sin() * PI.cos();
                assert!((got - want).abs() < 0.01, "x={x}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn wave_energy_is_nearly_conserved() {
        let setup = WaveSetup::new(1.0, 1.0, 50, 50, 100);
        let (fx, fy) = (99, 99);
        let h = 2.0 / 98.0;
        let dt = 0.9 * wave_cfl_bound(1.0, 1.0, h, h);
        let mut solver = WaveSolver::new(&setup, fx, fy, dt).unwrap();
        let energy = |prev: &[f64], cur: &[f64], next: &[f64]| {
            let mut e = 0.0;
            for i in 0..fx {
                for j in 0..fy {
                    let k = i * fy + j;
                    let ut = (next[k] - prev[k]) / (2.0 * dt);
                    let ux = if i + 1 < fx { (cur[k + fy] - cur[k]) / h } else { 0.0 };
                    let uy = if j + 1 < fy { (cur[k + 1] - cur[k]) / h } else { 0.0 };
                    e += (ut * ut + ux * ux + uy * uy) * h * h;
                }
            }
            e
        };
        let window = |s: &mut WaveSolver| {
            let prev = s.previous().to_vec();
            let cur = s.current().to_vec();
            s.step();
            energy(&prev, &cur, s.current())
        };
        let e0 = window(&mut solver);
        let mut worst: f64 = 0.0;
        while solver.time() < 10.0 {
            let e = window(&mut solver);
            worst = worst.max((e - e0).abs() / e0);
        }
        assert!(worst < 0.01, "energy drift {worst}");
    }

    #[test]
    fn wave_rejects_unstable_step() {
        let mut s = WaveSetup::new(1.0, 1.0, 21, 21, 3);
        s.substeps = Some(1);
        assert!(matches!(simulate_wave2d(&s), Err(Error::Simulation(_))));
    }

    #[test]
    fn burgers_pure_diffusion_matches_heat_kernel() {
        let mut s = BurgersSetup::new(0.0, -0.1);
        s.initial = Expr::parse("exp(-x*x)", &["x"]).unwrap();
        s.t1 = 1.0;
        s.nt = 2;
        let d = simulate_burgers(&s).unwrap();
        let xs = &d.grid.axes()[0].coords;
        for (i, x) in xs.iter().enumerate() {
            let got = d.values[0][i * 2 + 1];
            let w = 1.0 + 4.0 * 0.1;
            let want = (-x * x / w).exp() / w.sqrt();
            assert!((got - want).abs() < 0.01 * want.max(0.05), "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn burgers_conserves_mass() {
        let d = simulate_burgers(&BurgersSetup::new(1.0, -0.1)).unwrap();
        let nt = 101;
        let mass = |k: usize| (0..256).map(|i| d.values[0][i * nt + k]).sum::<f64>();
        let m0 = mass(0);
        for k in 0..nt {
            assert!((mass(k) - m0).abs() < 1e-3 * m0.abs());
        }
    }

    #[test]
    fn burgers_refinement_converges() {
        let run = |refine: usize| {
            let mut s = BurgersSetup::new(1.0, -0.1);
            s.t1 = 5.0;
            s.nt = 2;
            s.refine = refine;
            let d = simulate_burgers(&s).unwrap();
            (0..256).map(|i| d.values[0][i * 2 + 1]).collect::<Vec<f64>>()
        };
        let (a, b, c) = (run(1), run(2), run(4));
        let diff = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let (e1, e2) = (diff(&a, &b), diff(&b, &c));
        assert!(e1 / e2 > 1.9, "refinement ratio {}", e1 / e2);
        assert!(e2 < 1e-3);
    }

    #[test]
    fn burgers_grid_and_rejections() {
        let d = simulate_burgers(&BurgersSetup::new(1.0, -0.1)).unwrap();
        assert_eq!(d.grid.shape(), [256, 101]);
        assert_eq!(d.grid.axes()[0].upper(), 8.0 - 0.0625);
        assert!(simulate_burgers(&BurgersSetup::new(1.0, 0.1)).is_err());
        let mut s = BurgersSetup::new(1.0, -0.1);
        s.initial = Expr::parse("1/x", &["x"]).unwrap();
        assert!(simulate_burgers(&s).is_err());
    }

    #[test]
    fn periodic_tridiagonal_solve() {
        let b: Vec<f64> = (0..7).map(|i| (i as f64).sin()).collect();
        let r = 0.37;
        let x = solve_periodic_tridiagonal(r, &b);
        for i in 0..7 {
            let lhs = (1.0 + 2.0 * r) * x[i] - r * (x[(i + 6) % 7] + x[(i + 1) % 7]);
            assert!((lhs - b[i]).abs() < 1e-14);
        }
    }
}
