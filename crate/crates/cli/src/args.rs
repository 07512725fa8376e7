use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "snape", version, about = "Estimate differential-equation coefficients from noisy gridded data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a benchmark dataset.
    Simulate(SimulateArgs),
    /// Fit one dataset.
    Fit(FitArgs),
    /// Replicate fits under fresh noise or resampled residuals.
    Bootstrap(BootstrapArgs),
    /// Evaluate a fitted spline surface at new points.
    Reconstruct(ReconstructArgs),
    /// Print the header of a grid file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(subcommand)]
    pub system: System,
    /// Gaussian noise level as a fraction of the signal standard deviation.
    #[arg(long, global = true, default_value_t = 0.0)]
    pub noise: f64,
    /// Seed of the noise generator.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum System {
    /// x'' + θ1 x' + θ2 x + θ3 x³ = amplitude·cos(omega·t)
    Duffing {
        #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
        theta1: f64,
        #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
        theta2: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        theta3: f64,
        #[arg(long, default_value_t = 0.42, allow_negative_numbers = true)]
        amplitude: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        omega: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        t0: f64,
        #[arg(long, default_value_t = 200.0, allow_negative_numbers = true)]
        t1: f64,
        /// Output samples including both ends.
        #[arg(long, default_value_t = 4000)]
        samples: usize,
        #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
        x0: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        v0: f64,
    },
    /// x'' + θ1 x' + θ2 x² x' + θ3 x = 0
    Vanderpol {
        #[arg(long, default_value_t = -8.0, allow_negative_numbers = true)]
        theta1: f64,
        #[arg(long, default_value_t = 8.0, allow_negative_numbers = true)]
        theta2: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        theta3: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        t0: f64,
        #[arg(long, default_value_t = 50.0, allow_negative_numbers = true)]
        t1: f64,
        /// Output samples including both ends.
        #[arg(long, default_value_t = 5000)]
        samples: usize,
        #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
        x0: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        v0: f64,
    },
    /// u_tt = θ1 u_xx + θ2 u_yy on [-1, 1]², t in [0, t1]
    Wave2d {
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        theta1: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        theta2: f64,
        #[arg(long, default_value_t = 50)]
        nx: usize,
        #[arg(long, default_value_t = 50)]
        ny: usize,
        #[arg(long, default_value_t = 100)]
        nt: usize,
        #[arg(long, default_value_t = 10.0)]
        t1: f64,
    },
    /// u_t + θ1 u u_x + θ2 u_xx = 0, periodic on [-8, 8)
    Burgers {
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        theta1: f64,
        #[arg(long, default_value_t = -0.1, allow_negative_numbers = true)]
        theta2: f64,
        #[arg(long, default_value_t = 256)]
        nx: usize,
        #[arg(long, default_value_t = 101)]
        nt: usize,
        #[arg(long, default_value_t = 10.0)]
        t1: f64,
        /// Initial profile as an expression in x.
        #[arg(long, default_value = "exp(-(x+2)*(x+2))")]
        initial: String,
    },
}

/// Data, model, basis and solver options shared by `fit` and `bootstrap`.
#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Distinct knots along an axis, e.g. `x=60`; default max(10, min(60, n/4)).
    #[arg(long = "knots", value_name = "AXIS=K", value_parser = axis_value)]
    pub knots: Vec<(String, usize)>,
    /// Spline order along an axis, e.g. `t=5`; default max(4, highest derivative + 2).
    #[arg(long = "order", value_name = "AXIS=O", value_parser = axis_value)]
    pub order: Vec<(String, usize)>,
    /// Keep every k-th sample along an axis, e.g. `x=2`.
    #[arg(long = "subsample", value_name = "AXIS=K", value_parser = axis_value)]
    pub subsample: Vec<(String, usize)>,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Normal-equation ridge; default 1e-10 times the mean diagonal of BᵀB.
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long, default_value_t = 1e-8)]
    pub tol_theta: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol_primal: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    /// Starting coefficients, comma separated; default all zero.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub theta0: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub estimate: EstimateArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Write θ and the primal residual of every iteration as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Fresh,
    Residual,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub estimate: EstimateArgs,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = Mode::Fresh)]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; the result does not depend on this.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Result document of `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Grid file whose grid is used when `--points` is absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Grid file, or CSV with one column per axis and one row per point.
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Grid file for grid points, CSV for CSV points.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub data: PathBuf,
}

fn axis_value(s: &str) -> Result<(String, usize), String> {
    let (axis, value) = s.split_once('=').ok_or_else(|| format!("expected AXIS=VALUE, got `{s}`"))?;
    let value = value.trim().parse::<usize>().map_err(|e| format!("bad value in `{s}`: {e}"))?;
    Ok((axis.trim().to_string(), value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn axis_values() {
        assert_eq!(axis_value("x=60").unwrap(), ("x".to_string(), 60));
        assert!(axis_value("x60").is_err());
        assert!(axis_value("x=-1").is_err());
    }

    #[test]
    fn negative_coefficients_parse() {
        let cli = Cli::try_parse_from(["snape", "simulate", "burgers", "--theta2", "-0.2", "--out", "b.grd"]).unwrap();
        match cli.command {
            Command::Simulate(SimulateArgs { system: System::Burgers { theta2, .. }, .. }) => assert_eq!(theta2, -0.2),
            other => panic!("{other:?}"),
        }
    }
}
