//! Measurement noise and bootstrap replication of fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::datasets::FieldData;
use crate::error::{Error, Result};
use crate::solver::Estimator;

/// Gaussian noise whose standard deviation is `level` times the population
/// standard deviation of the clean signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub level: f64,
    pub seed: u64,
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Returns `clean + ε`, `ε ~ N(0, (level·std(clean))²)` i.i.d.
pub fn add_noise(clean: &[f64], spec: &NoiseSpec) -> Result<Vec<f64>> {
    check_noise(clean, spec)?;
    Ok(noise_stream(clean, spec, 0))
}

fn check_noise(clean: &[f64], spec: &NoiseSpec) -> Result<()> {
    if !(spec.level >= 0.0 && spec.level.is_finite()) {
        return Err(Error::argument(format!("noise level must be nonnegative, got {}", spec.level)));
    }
    if clean.iter().any(|v| !v.is_finite()) {
        return Err(Error::argument("clean values must be finite"));
    }
    Ok(())
}

/// Adds noise to every field of `clean`, field `i` drawing from stream `i`
/// of the seeded generator. A single-field dataset receives the same noise
/// as [`add_noise`] on its values.
pub fn add_noise_to_fields(clean: &FieldData, spec: &NoiseSpec) -> Result<FieldData> {
    let mut values = Vec::with_capacity(clean.values.len());
    for (i, v) in clean.values.iter().enumerate() {
        check_noise(v, spec)?;
        values.push(noise_stream(v, spec, i as u64));
    }
    FieldData::new(clean.grid.clone(), clean.names.clone(), values)
}

fn noise_stream(clean: &[f64], spec: &NoiseSpec, stream: u64) -> Vec<f64> {
    if spec.level == 0.0 || clean.is_empty() {
        return clean.to_vec();
    }
    let sigma = spec.level * population_std(clean);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    clean
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            v + sigma * z
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapMode {
    /// Each replicate fits the clean data plus fresh noise.
    FreshNoise,
    /// Fit once, then refit the fitted surface plus resampled residuals.
    Residual,
}

impl BootstrapMode {
    pub fn name(self) -> &'static str {
        match self {
            BootstrapMode::FreshNoise => "fresh",
            BootstrapMode::Residual => "residual",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub mode: BootstrapMode,
    /// Estimates of every replicate, including those that did not converge
    /// (filled with NaN when the fit failed outright).
    pub replicates: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Mean over converged replicates.
    pub theta_mean: Vec<f64>,
    /// `100·sd/|mean|` over converged replicates, sample standard deviation.
    pub cov_percent: Vec<f64>,
}

impl BootstrapResult {
    pub fn failures(&self) -> usize {
        self.converged.iter().filter(|c| !**c).count()
    }
}

/// Elementwise mean and coefficient of variation (percent, `n − 1`
/// denominator) of the flagged rows.
pub fn summarize(replicates: &[Vec<f64>], include: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let rows: Vec<&Vec<f64>> = replicates.iter().zip(include).filter(|(_, k)| **k).map(|(r, _)| r).collect();
    let dim = replicates.first().map_or(0, Vec::len);
    let n = rows.len();
    if n == 0 {
        return (vec![f64::NAN; dim], vec![f64::NAN; dim]);
    }
    let mut mean = vec![0.0; dim];
    let mut cov = vec![0.0; dim];
    for j in 0..dim {
        let m = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = if n > 1 {
            rows.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let sd = var.sqrt();
        mean[j] = m;
        cov[j] = if sd == 0.0 { 0.0 } else { 100.0 * sd / m.abs() };
    }
    (mean, cov)
}

/// Estimate, convergence flag and iteration count of one replicate.
type Replicate = (Vec<f64>, bool, usize);

/// Runs `n_reps` replicate fits of `data` and summarises them.
///
/// Fresh-noise mode expects clean data; residual mode expects measured
/// data and ignores `noise.level`. Replicate `i` draws its randomness from
/// seed `noise.seed + i`, so results do not depend on `jobs`.
pub fn bootstrap(
    estimator: &Estimator,
    data: &[f64],
    mode: BootstrapMode,
    n_reps: usize,
    noise: &NoiseSpec,
    jobs: usize,
) -> Result<BootstrapResult> {
    if n_reps == 0 {
        return Err(Error::argument("need at least one replicate"));
    }
    let seeds: Vec<u64> = (0..n_reps as u64).map(|i| noise.seed.wrapping_add(i)).collect();
    let (fitted, residuals) = match mode {
        BootstrapMode::FreshNoise => (Vec::new(), Vec::new()),
        BootstrapMode::Residual => {
            let base = estimator.fit(data)?;
            let fitted = estimator.fitted(&base.beta);
            let res: Vec<f64> = data.iter().zip(&fitted).map(|(y, f)| y - f).collect();
            (fitted, res)
        }
    };
    let one = |seed: u64| -> Result<Vec<f64>> {
        match mode {
            BootstrapMode::FreshNoise => add_noise(data, &NoiseSpec { level: noise.level, seed }),
            BootstrapMode::Residual => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = residuals.len();
                Ok(fitted.iter().map(|f| f + residuals[rng.random_range(0..n)]).collect())
            }
        }
    };
    let run = |seed: &u64| -> Result<Option<Replicate>> {
        let y = one(*seed)?;
        match estimator.fit(&y) {
            Ok(fit) => Ok(Some((fit.theta, fit.converged, fit.iterations))),
            Err(Error::DegenerateTerm(_) | Error::Numerical(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let outcomes: Vec<Result<Option<Replicate>>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::argument(format!("cannot start worker threads: {e}")))?;
        pool.install(|| seeds.par_iter().map(run).collect())
    } else {
        seeds.iter().map(run).collect()
    };
    let nfree = estimator.builder().model().free_count();
    let mut replicates = Vec::with_capacity(n_reps);
    let mut converged = Vec::with_capacity(n_reps);
    let mut iterations = Vec::with_capacity(n_reps);
    for o in outcomes {
        match o? {
            Some((theta, ok, it)) => {
                replicates.push(theta);
                converged.push(ok);
                iterations.push(it);
            }
            None => {
                replicates.push(vec![f64::NAN; nfree]);
                converged.push(false);
                iterations.push(0);
            }
        }
    }
    let failed = converged.iter().filter(|c| !**c).count();
    if 2 * failed > n_reps {
        return Err(Error::Bootstrap { failed, total: n_reps });
    }
    let (theta_mean, cov_percent) = summarize(&replicates, &converged);
    Ok(BootstrapResult { mode, replicates, converged, iterations, seeds, theta_mean, cov_percent })
}
