//! Shared fixtures for the benchmarks.

use snape_core::datasets::FieldData;
use snape_core::model::ModelSpec;
use snape_core::simulate::{simulate_burgers, BurgersSetup};
use snape_core::solver::{AdmmConfig, Estimator};
use snape_core::tensor::{BasisOptions, BasisSpec};

pub const BURGERS_MODEL: &str = "axes x, t\nfield u\nanchor D(u,t,1)\nterm th1: u*D(u,x,1)\nterm th2: D(u,x,2)\n";

/// A coarse Burgers dataset and its basis.
pub fn burgers(nx: usize, nt: usize, knots: (usize, usize)) -> (ModelSpec, FieldData, BasisSpec) {
    let setup = BurgersSetup { nx, nt, ..BurgersSetup::new(1.0, -0.1) };
    let data = simulate_burgers(&setup).expect("valid setup");
    let model = ModelSpec::parse(BURGERS_MODEL).expect("valid model");
    let mut options = BasisOptions::default();
    options.knots.insert("x".into(), knots.0);
    options.knots.insert("t".into(), knots.1);
    let spec = BasisSpec::for_grid(&data.grid, &model.max_derivs(), &options).expect("valid basis");
    (model, data, spec)
}

pub fn estimator(model: &ModelSpec, data: &FieldData, spec: &BasisSpec, cfg: AdmmConfig) -> Estimator {
    Estimator::new(model, spec, &data.grid, vec![], cfg).expect("valid problem")
}
