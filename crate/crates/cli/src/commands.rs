use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use snape_core::bootstrap::{add_noise_to_fields, bootstrap, BootstrapMode, NoiseSpec};
use snape_core::datasets::{read_grid, read_result, write_grid, write_result, FieldData, ResultDocument, StoredAxis, RESULT_VERSION};
use snape_core::expr::Expr;
use snape_core::model::{collect_exogenous, ModelSpec};
use snape_core::simulate::{
    simulate_burgers, simulate_ode, simulate_wave2d, BurgersSetup, OdeModel, OdeSetup, WaveSetup,
};
use snape_core::solver::{AdmmConfig, Estimator, FitResult};
use snape_core::splines::KnotVector;
use snape_core::tensor::{eval_at_points, Axis, BasisOptions, BasisSpec, DerivIndex, Grid};

use crate::args::{BootstrapArgs, Command, EstimateArgs, FitArgs, InspectArgs, Mode, ReconstructArgs, SimulateArgs, System};
use crate::CliError;

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(command: Command) -> CliResult {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Bootstrap(a) => run_bootstrap(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn require_file(path: &Path, what: &str) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} file `{}` does not exist", path.display())))
    }
}

fn load_grid(path: &Path) -> CliResult<FieldData> {
    require_file(path, "data")?;
    read_grid(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn simulate(a: SimulateArgs) -> CliResult {
    let out = a.out.ok_or_else(|| CliError::Usage("simulate needs --out".into()))?;
    let data = match a.system {
        System::Duffing { theta1, theta2, theta3, amplitude, omega, t0, t1, samples, x0, v0 } => {
            let model = OdeModel::Duffing { theta: [theta1, theta2, theta3], amplitude, omega };
            simulate_ode(&OdeSetup::new(model, x0, v0, t0, t1, samples))?
        }
        System::Vanderpol { theta1, theta2, theta3, t0, t1, samples, x0, v0 } => {
            let model = OdeModel::VanDerPol { theta: [theta1, theta2, theta3] };
            simulate_ode(&OdeSetup::new(model, x0, v0, t0, t1, samples))?
        }
        System::Wave2d { theta1, theta2, nx, ny, nt, t1 } => {
            let setup = WaveSetup { t1, ..WaveSetup::new(theta1, theta2, nx, ny, nt) };
            simulate_wave2d(&setup)?
        }
        System::Burgers { theta1, theta2, nx, nt, t1, initial } => {
            let initial = Expr::parse(&initial, &["x"])?;
            simulate_burgers(&BurgersSetup { nx, nt, t1, initial, ..BurgersSetup::new(theta1, theta2) })?
        }
    };
    let data = add_noise_to_fields(&data, &NoiseSpec { level: a.noise, seed: a.seed })?;
    write_grid(&data, &out)?;
    Ok(())
}

/// Everything a fit needs, loaded from the estimate options.
struct Problem {
    model: ModelSpec,
    data: FieldData,
    spec: BasisSpec,
    estimator: Estimator,
    config: Value,
}

impl Problem {
    fn target(&self) -> &[f64] {
        self.data.field(&self.model.field).expect("checked on load")
    }
}

fn to_map(pairs: &[(String, usize)]) -> HashMap<String, usize> {
    pairs.iter().cloned().collect()
}

fn load_problem(a: &EstimateArgs) -> CliResult<Problem> {
    require_file(&a.model, "model")?;
    let source = fs::read_to_string(&a.model)
        .map_err(|e| CliError::Usage(format!("cannot read model file `{}`: {e}", a.model.display())))?;
    let model = ModelSpec::parse(&source).map_err(|e| CliError::Usage(format!("{}: {e}", a.model.display())))?;
    let mut data = load_grid(&a.data)?;
    if !a.subsample.is_empty() {
        let mut steps = vec![1; data.grid.ndim()];
        for (axis, step) in &a.subsample {
            let i = data
                .grid
                .axis_index(axis)
                .ok_or_else(|| CliError::Usage(format!("--subsample names unknown axis `{axis}`")))?;
            steps[i] = *step;
        }
        data = data.subsample(&steps)?;
    }
    model.check_grid(&data.grid)?;
    if data.field(&model.field).is_none() {
        return Err(CliError::Data(format!("data has no field `{}`", model.field)));
    }
    let options = BasisOptions { knots: to_map(&a.knots), orders: to_map(&a.order) };
    let spec = BasisSpec::for_grid(&data.grid, &model.max_derivs(), &options)?;
    let exogenous = collect_exogenous(&model, &data.grid, &data.to_map())?;
    let cfg = AdmmConfig {
        rho: a.rho,
        mu: a.mu,
        gamma: a.gamma,
        ridge: a.ridge,
        theta0: a.theta0.clone(),
        tol_theta: a.tol_theta,
        tol_primal: a.tol_primal,
        max_iter: a.max_iter,
        trace: false,
    };
    let basis: Vec<Value> = spec
        .axes()
        .iter()
        .map(|(name, kv)| json!({"axis": name, "knots": kv.distinct_knots().len(), "order": kv.order()}))
        .collect();
    let subsample: serde_json::Map<String, Value> =
        a.subsample.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    let config = json!({
        "rho": cfg.rho,
        "mu": cfg.mu,
        "gamma": cfg.gamma,
        "ridge": cfg.ridge,
        "theta0": cfg.theta0,
        "tol_theta": cfg.tol_theta,
        "tol_primal": cfg.tol_primal,
        "max_iter": cfg.max_iter,
        "basis": basis,
        "subsample": subsample,
    });
    let estimator = Estimator::new(&model, &spec, &data.grid, exogenous, cfg)?;
    Ok(Problem { model, data, spec, estimator, config })
}

fn print_theta(names: &[String], theta: &[f64], cov: Option<&[f64]>) {
    for (i, name) in names.iter().enumerate() {
        match cov {
            Some(c) => println!("{name} = {} (cov {}%)", theta[i], c[i]),
            None => println!("{name} = {}", theta[i]),
        }
    }
}

fn write_trace(path: &Path, names: &[String], fit: &FitResult) -> CliResult {
    let mut s = String::from("iter");
    for n in names {
        let _ = write!(s, ",{n}");
    }
    s.push_str(",primal_residual\n");
    for (i, (theta, primal)) in fit.theta_trace.iter().zip(&fit.primal_history).enumerate() {
        let _ = write!(s, "{}", i + 1);
        for v in theta {
            let _ = write!(s, ",{v:?}");
        }
        let _ = writeln!(s, ",{primal:?}");
    }
    fs::write(path, s).map_err(|e| CliError::Data(format!("cannot write `{}`: {e}", path.display())))
}

fn fit(a: FitArgs) -> CliResult {
    let mut p = load_problem(&a.estimate)?;
    let names: Vec<String> = p.model.theta_names().iter().map(|s| s.to_string()).collect();
    let result = if a.trace.is_some() {
        let cfg = AdmmConfig { trace: true, ..p.estimator.config().clone() };
        let exogenous = collect_exogenous(&p.model, &p.data.grid, &p.data.to_map())?;
        Estimator::new(&p.model, &p.spec, &p.data.grid, exogenous, cfg)?.fit(p.target())?
    } else {
        p.estimator.fit(p.target())?
    };
    if let Some(path) = &a.trace {
        write_trace(path, &names, &result)?;
    }
    p.config["command"] = json!("fit");
    p.config["iterations"] = json!(result.iterations);
    let basis = p
        .spec
        .axes()
        .iter()
        .map(|(name, kv)| StoredAxis { name: name.clone(), order: kv.order(), knots: kv.distinct_knots().to_vec() })
        .collect();
    let doc = ResultDocument {
        format_version: RESULT_VERSION,
        model_source: p.model.source.clone(),
        theta_names: names.clone(),
        theta_mean: result.theta.clone(),
        cov_percent: vec![0.0; names.len()],
        replicates: vec![result.theta.clone()],
        converged_flags: vec![result.converged],
        config: p.config,
        seeds: vec![],
        basis: Some(basis),
        beta: Some(result.beta.clone()),
    };
    write_result(&doc, &a.out)?;
    print_theta(&names, &result.theta, None);
    if !result.converged {
        return Err(CliError::NotConverged(format!(
            "no convergence after {} iterations; result written with converged = false",
            result.iterations
        )));
    }
    Ok(())
}

fn run_bootstrap(a: BootstrapArgs) -> CliResult {
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let mut p = load_problem(&a.estimate)?;
    let names: Vec<String> = p.model.theta_names().iter().map(|s| s.to_string()).collect();
    let mode = match a.mode {
        Mode::Fresh => BootstrapMode::FreshNoise,
        Mode::Residual => BootstrapMode::Residual,
    };
    let noise = NoiseSpec { level: a.noise, seed: a.seed };
    let r = bootstrap(&p.estimator, p.target(), mode, a.replicates, &noise, a.jobs)?;
    p.config["command"] = json!("bootstrap");
    p.config["mode"] = json!(mode.name());
    p.config["noise"] = json!(a.noise);
    p.config["seed"] = json!(a.seed);
    p.config["replicates"] = json!(a.replicates);
    p.config["iterations"] = json!(r.iterations);
    let doc = ResultDocument {
        format_version: RESULT_VERSION,
        model_source: p.model.source.clone(),
        theta_names: names.clone(),
        theta_mean: r.theta_mean.clone(),
        cov_percent: r.cov_percent.clone(),
        replicates: r.replicates.clone(),
        converged_flags: r.converged.clone(),
        config: p.config,
        seeds: r.seeds.clone(),
        basis: None,
        beta: None,
    };
    write_result(&doc, &a.out)?;
    print_theta(&names, &r.theta_mean, Some(&r.cov_percent));
    if r.failures() > 0 {
        eprintln!("snape: {} of {} replicates did not converge and were left out", r.failures(), a.replicates);
    }
    Ok(())
}

/// Points listed one per row under a header of axis names.
fn read_point_csv(path: &Path, axes: &[&str]) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let bad = |line: usize, msg: String| CliError::Data(format!("{}:{line}: {msg}", path.display()));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let cols: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut order = Vec::with_capacity(axes.len());
    for axis in axes {
        order.push(cols.iter().position(|c| c == axis).ok_or_else(|| bad(1, format!("no column for axis `{axis}`")))?);
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        let vals = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(i + 1, format!("malformed number: {e}")))?;
        if vals.len() != cols.len() {
            return Err(bad(i + 1, format!("expected {} columns, found {}", cols.len(), vals.len())));
        }
        points.push(order.iter().map(|&c| vals[c]).collect());
    }
    Ok((axes.iter().map(|s| s.to_string()).collect(), points))
}

fn reconstruct(a: ReconstructArgs) -> CliResult {
    require_file(&a.fit, "fit result")?;
    let doc = read_result(&a.fit).map_err(|e| CliError::Data(format!("{}: {e}", a.fit.display())))?;
    let (Some(stored), Some(beta)) = (&doc.basis, &doc.beta) else {
        return Err(CliError::Data(format!("`{}` holds no spline coefficients; it must come from `fit`", a.fit.display())));
    };
    let model = ModelSpec::parse(&doc.model_source)?;
    let axes = stored
        .iter()
        .map(|s| Ok((s.name.clone(), KnotVector::clamped(s.knots.clone(), s.order)?)))
        .collect::<snape_core::Result<Vec<_>>>()?;
    let spec = BasisSpec::new(axes)?;
    if spec.coefficient_count() != beta.len() {
        return Err(CliError::Data(format!(
            "basis has {} coefficients, result stores {}",
            spec.coefficient_count(),
            beta.len()
        )));
    }
    let axis_names: Vec<&str> = stored.iter().map(|s| s.name.as_str()).collect();
    let zero = DerivIndex::zero(axis_names.len());
    let csv_points = a.points.as_ref().filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")));
    if let Some(path) = csv_points {
        require_file(path, "points")?;
        let (names, points) = read_point_csv(path, &axis_names)?;
        let values = eval_at_points(&spec, &points, &zero)?.mul_vec(beta);
        let mut s = names.join(",");
        let _ = writeln!(s, ",{}", model.field);
        for (p, v) in points.iter().zip(&values) {
            let row: Vec<String> = p.iter().chain(std::iter::once(v)).map(|x| format!("{x:?}")).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        return fs::write(&a.out, s).map_err(|e| CliError::Data(format!("cannot write `{}`: {e}", a.out.display())));
    }
    let source = a
        .points
        .as_ref()
        .or(a.data.as_ref())
        .ok_or_else(|| CliError::Usage("reconstruct needs --points or --data".into()))?;
    let grid = load_grid(source)?.grid;
    let names: Vec<&str> = grid.axis_names();
    if names != axis_names {
        return Err(CliError::Data(format!("grid axes {names:?} do not match the fitted axes {axis_names:?}")));
    }
    let values = eval_at_points(&spec, &grid.points(), &zero)?.mul_vec(beta);
    let axes: Vec<Axis> = grid.axes().to_vec();
    let out = FieldData::single(Grid::new(axes)?, &model.field, values)?;
    write_grid(&out, &a.out)?;
    Ok(())
}

fn inspect(a: InspectArgs) -> CliResult {
    let data = load_grid(&a.data)?;
    println!("SNAPEGRID 1, {} points", data.grid.point_count());
    for axis in data.grid.axes() {
        println!("axis {} count {} range [{}, {}]", axis.name, axis.len(), axis.lower(), axis.upper());
    }
    for (name, v) in data.names.iter().zip(&data.values) {
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        println!("field {name} min {min} max {max} mean {mean}");
    }
    Ok(())
}
