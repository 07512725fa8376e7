use snape_core::bootstrap::{add_noise_to_fields, bootstrap, BootstrapMode, NoiseSpec};
use snape_core::datasets::{read_grid, read_result, write_grid, write_result, ResultDocument, RESULT_VERSION};
use snape_core::model::ModelSpec;
use snape_core::simulate::{simulate_ode, OdeModel, OdeSetup};
use snape_core::solver::{AdmmConfig, Estimator};
use snape_core::tensor::{BasisOptions, BasisSpec};
use tempfile::TempDir;

const OSCILLATOR: &str = "axes t\nfield x\nanchor D(x,t,2)\nterm damping: D(x,t,1)\nterm stiffness: x\n";

fn oscillator() -> OdeSetup {
    let model = OdeModel::Duffing { theta: [0.3, 4.0, 0.0], amplitude: 0.0, omega: 1.0 };
    OdeSetup::new(model, 1.0, 0.0, 0.0, 10.0, 400)
}

fn estimator(data: &snape_core::datasets::FieldData) -> Estimator {
    let model = ModelSpec::parse(OSCILLATOR).unwrap();
    let spec = BasisSpec::for_grid(&data.grid, &model.max_derivs(), &BasisOptions::default()).unwrap();
    Estimator::new(&model, &spec, &data.grid, vec![], AdmmConfig::default()).unwrap()
}

#[test]
fn simulate_store_and_fit() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("osc.grd");
    write_grid(&simulate_ode(&oscillator()).unwrap(), &path).unwrap();
    let data = read_grid(&path).unwrap();
    let fit = estimator(&data).fit(data.field("x").unwrap()).unwrap();
    assert!(fit.converged);
    assert!((fit.theta[0] - 0.3).abs() < 0.01, "{:?}", fit.theta);
    assert!((fit.theta[1] - 4.0).abs() < 0.01, "{:?}", fit.theta);
}

#[test]
fn noisy_bootstrap_round_trips_through_a_result_file() {
    let clean = simulate_ode(&oscillator()).unwrap();
    let est = estimator(&clean);
    let noise = NoiseSpec { level: 0.05, seed: 3 };
    let b = bootstrap(&est, &clean.values[0], BootstrapMode::FreshNoise, 4, &noise, 2).unwrap();
    assert_eq!(b.failures(), 0);
    assert!((b.theta_mean[1] - 4.0).abs() < 0.2, "{:?}", b.theta_mean);

    // the same noise as the first replicate, drawn through the field helper
    let first = add_noise_to_fields(&clean, &NoiseSpec { level: 0.05, seed: 3 }).unwrap();
    assert_eq!(est.fit(&first.values[0]).unwrap().theta, b.replicates[0]);

    let doc = ResultDocument {
        format_version: RESULT_VERSION,
        model_source: OSCILLATOR.into(),
        theta_names: vec!["damping".into(), "stiffness".into()],
        theta_mean: b.theta_mean.clone(),
        cov_percent: b.cov_percent.clone(),
        replicates: b.replicates.clone(),
        converged_flags: b.converged.clone(),
        config: serde_json::json!({ "mode": b.mode.name() }),
        seeds: b.seeds.clone(),
        basis: None,
        beta: None,
    };
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("r.json");
    write_result(&doc, &path).unwrap();
    assert_eq!(read_result(&path).unwrap(), doc);
}
