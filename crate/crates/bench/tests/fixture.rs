use snape_bench::burgers;

#[test]
fn basis_follows_requested_knots() {
    let (model, data, spec) = burgers(64, 26, (20, 10));
    assert_eq!(data.grid.shape(), [64, 26]);
    assert_eq!(model.theta_names(), ["th1", "th2"]);
    // orders default to 4 in both axes
    assert_eq!(spec.basis_counts(), [22, 12]);
}
