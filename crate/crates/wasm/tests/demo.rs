use floodmem_wasm::demo;

#[test]
fn awareness_curve_halves_over_one_half_life() {
    let v = demo::awareness_curve("2000-01-01\n# note\n", 100, "2000-01-01", "2000-07-19", 100).unwrap();
    let a: Vec<f64> = serde_json::from_value(v["awareness"].clone()).unwrap();
    assert_eq!(a.len(), 3);
    assert!((a[0] - 1.0).abs() < 1e-12 && (a[1] - 0.5).abs() < 1e-12 && (a[2] - 0.25).abs() < 1e-12);
}

#[test]
fn awareness_curve_rejects_bad_input() {
    assert!(demo::awareness_curve("2000-13-01", 100, "2000-01-01", "2000-02-01", 1).is_err());
    assert!(demo::awareness_curve("", 100, "2001-01-01", "2000-02-01", 1).is_err());
    assert!(demo::awareness_curve("", 100, "2000-01-01", "2000-02-01", 0).is_err());
}

#[test]
fn checkerboard_is_perfectly_dispersed() {
    let values: Vec<f64> = (0..36).map(|i| ((i / 6 + i % 6) % 2) as f64).collect();
    let v = demo::moran_grid(&values, 6, 199, 1).unwrap();
    assert!((v["I"].as_f64().unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(v["classes"].as_array().unwrap().len(), 36);
}

#[test]
fn ragged_grid_is_rejected() {
    assert!(demo::moran_grid(&[1.0; 10], 3, 99, 1).is_err());
}

#[test]
fn synthetic_fit_recovers_the_discount() {
    let v = demo::synthetic_fit(11, 8_000, -0.05).unwrap();
    let (est, se) = (v["estimate"].as_f64().unwrap(), v["se"].as_f64().unwrap());
    assert!((est + 0.05).abs() < 4.0 * se, "{v}");
    let ci = v["ci"].as_array().unwrap();
    assert!(ci[0].as_f64().unwrap() < est && est < ci[1].as_f64().unwrap());
}
