use floodmem::awareness::HalfLife;
use floodmem::designs::{self, build_baseline, build_risk_levels, Dataset, FeLevel};
use floodmem::solver::SolverOptions;
use floodmem::synth::{self, dense_oracle_fit, DgpConfig, NoiseConfig};

fn dataset(cfg: &DgpConfig) -> Dataset {
    let b = synth::generate(cfg).unwrap();
    Dataset::new(b.transactions(HalfLife::default()).unwrap())
}

#[test]
fn noiseless_recovers_every_coefficient() {
    let cfg = DgpConfig {
        n_transactions: 20_000,
        noise: NoiseConfig::noiseless(),
        ..DgpConfig::default()
    };
    let data = dataset(&cfg);
    // Zone effects are not absorbed by municipality effects; switch them off
    // for that level.
    let mut flat = cfg.clone();
    flat.noise.zone_sd = 0.0;
    let flat = dataset(&flat);
    for fe in FeLevel::ALL {
        let data = if fe == FeLevel::Municipality { &flat } else { &data };
        let fit = designs::fit(&build_baseline(fe), data, &SolverOptions::default()).unwrap();
        let risk = fit.coefficient("risk").unwrap();
        assert!((risk.estimate + 0.02).abs() < 1e-8, "{fe:?}: {}", risk.estimate);
        for (name, g) in &cfg.coefficients.gamma {
            if let Some(c) = fit.coefficient(name) {
                assert!((c.estimate - g).abs() < 1e-8, "{name}: {} vs {g}", c.estimate);
            }
        }
    }
}

#[test]
fn noiseless_risk_levels() {
    let mut cfg = DgpConfig {
        n_transactions: 10_000,
        noise: NoiseConfig::noiseless(),
        ..DgpConfig::default()
    };
    cfg.coefficients.beta_levels = Some([-0.01, -0.03, -0.06]);
    let data = dataset(&cfg);
    let fit = designs::fit(&build_risk_levels(FeLevel::OmiZone), &data, &SolverOptions::default()).unwrap();
    for (name, b) in [("low_risk", -0.01), ("medium_risk", -0.03), ("high_risk", -0.06)] {
        let c = fit.coefficient(name).unwrap();
        assert!((c.estimate - b).abs() < 1e-8, "{name}");
    }
}

#[test]
fn small_synthetic_fit_matches_dense_oracle() {
    let cfg = DgpConfig {
        seed: 7,
        n_regions: 1,
        municipalities_per_region: 4,
        zones_per_municipality: 5,
        tracts_per_zone: 2,
        n_transactions: 1_900,
        ..DgpConfig::default()
    };
    let data = dataset(&cfg);
    let spec = build_baseline(FeLevel::OmiZone);
    let fast = designs::fit(&spec, &data, &SolverOptions::default()).unwrap();
    let dense = dense_oracle_fit(&spec, &data).unwrap();
    assert_eq!(fast.coefficients.len(), dense.coefficients.len());
    for (a, b) in fast.coefficients.iter().zip(&dense.coefficients) {
        assert_eq!(a.name, b.name);
        assert!((a.estimate - b.estimate).abs() <= 1e-8 * b.estimate.abs().max(1e-3), "{}", a.name);
        // With three factors the solver counts absorbed levels
        // conservatively while the oracle uses the exact rank, so compare
        // the sandwich before the small-sample factor.
        let (sa, sb) = (a.se / fast.correction.sqrt(), b.se / dense.correction.sqrt());
        assert!((sa - sb).abs() <= 1e-6 * sb, "{}: {sa} vs {sb}", a.name);
    }
}

#[test]
fn empty_spec_rejected_by_oracle() {
    let cfg = DgpConfig {
        n_regions: 1,
        municipalities_per_region: 2,
        n_transactions: 500,
        ..DgpConfig::default()
    };
    let data = dataset(&cfg);
    let mut spec = build_baseline(FeLevel::OmiZone);
    spec.risk_terms.clear();
    assert!(dense_oracle_fit(&spec, &data).is_err());
}
