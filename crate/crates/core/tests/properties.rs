use std::collections::BTreeMap;

use chrono::NaiveDate;
use floodmem::awareness::{awareness_from_dates, HalfLife};
use floodmem::diagnostics::{global_morans_i, MoranMethod};
use floodmem::geo::{ContiguityMatrix, Feature, IndexedLayer, LayerKind, MultiPolygon, Polygon, PolygonLayer};
use floodmem::ingest::{filter_transactions, normalize_floor, ApplicantType, ContractStatus, FilterPolicy, Purpose, Transaction};
use floodmem::synth::{self, DgpConfig};
use proptest::prelude::*;

fn sample_rows() -> Vec<Transaction> {
    let cfg = DgpConfig {
        n_regions: 1,
        municipalities_per_region: 2,
        n_transactions: 64,
        ..DgpConfig::default()
    };
    synth::generate(&cfg).unwrap().transactions(HalfLife::default()).unwrap()
}

fn day(offset: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2014, 1, 1).unwrap() + chrono::Days::new(u64::from(offset))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_is_idempotent(edits in prop::collection::vec((0u8..3, 0u8..2, 0u8..5, any::<bool>(), -5.0f64..25.0, 0u32..4500), 64)) {
        let mut rows = sample_rows();
        for (row, (a, s, p, auction, lon, d)) in rows.iter_mut().zip(&edits) {
            row.applicant_type = [ApplicantType::Single, ApplicantType::Joint, ApplicantType::Juridical][*a as usize];
            row.status = [ContractStatus::Issued, ContractStatus::UnderReview][*s as usize];
            row.purpose = [Purpose::Purchase, Purpose::Subrogation, Purpose::Renovation, Purpose::ConstructionResale, Purpose::Other][*p as usize];
            row.auction_flag = *auction;
            row.lon = *lon;
            row.issuance_date = day(*d);
        }
        let policy = FilterPolicy::default();
        let (once, _) = filter_transactions(rows, &policy);
        let (twice, report) = filter_transactions(once.clone(), &policy);
        prop_assert_eq!(once, twice);
        prop_assert_eq!(report.total(), 0);
    }

    #[test]
    fn floor_normalization_is_total(text in "\\PC{0,12}") {
        let (floor, multi) = normalize_floor(Some(&text));
        prop_assert_eq!(floor.is_some(), multi.is_some());
    }

    #[test]
    fn floor_lists_take_the_minimum(floors in prop::collection::vec(0i32..30, 2..5)) {
        let text = floors.iter().map(i32::to_string).collect::<Vec<_>>().join("-");
        let (floor, multi) = normalize_floor(Some(&text));
        prop_assert_eq!(floor, floors.iter().min().copied());
        prop_assert_eq!(multi, Some(floors.iter().any(|f| *f != floors[0])));
    }

    #[test]
    fn index_agrees_with_linear_scan(
        rects in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0, 0.01f64..3.0, 0.01f64..3.0), 1..60),
        probes in prop::collection::vec((0.0f64..13.0, 0.0f64..13.0), 1..40),
    ) {
        let features = rects
            .iter()
            .enumerate()
            .map(|(i, &(x, y, w, h))| Feature::new(format!("f{i:03}"), MultiPolygon(vec![Polygon::rect(x, y, x + w, y + h)])))
            .collect();
        let layer = IndexedLayer::new(PolygonLayer::new("r", LayerKind::FloodExtent, features).unwrap()).unwrap();
        for (x, y) in probes {
            let mut fast = layer.locate([x, y]);
            fast.sort();
            let slow: Vec<usize> = rects
                .iter()
                .enumerate()
                .filter(|(_, &(rx, ry, w, h))| x >= rx && x <= rx + w && y >= ry && y <= ry + h)
                .map(|(i, _)| i)
                .collect();
            prop_assert_eq!(fast.iter().map(|f| f.0).collect::<Vec<_>>(), slow);
        }
    }

    #[test]
    fn awareness_halves_without_new_events(offsets in prop::collection::vec(0u32..3000, 0..10), gap in 0u32..500, tau in 30u32..7000) {
        let tau = HalfLife::days(tau).unwrap();
        let dates: Vec<NaiveDate> = offsets.iter().map(|&o| day(o)).collect();
        let t = day(3000 + gap);
        let later = t + chrono::Days::new(u64::from(tau.in_days()));
        let (a, b) = (awareness_from_dates(&dates, t, tau), awareness_from_dates(&dates, later, tau));
        prop_assert!((b - a / 2.0).abs() <= 1e-12 * a.max(1.0));
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn awareness_superposes(a in prop::collection::vec(0u32..4000, 0..8), b in prop::collection::vec(0u32..4000, 0..8), t in 0u32..5000) {
        let tau = HalfLife::YEARS_7;
        let da: Vec<NaiveDate> = a.iter().map(|&o| day(o)).collect();
        let db: Vec<NaiveDate> = b.iter().map(|&o| day(o)).collect();
        let both: Vec<NaiveDate> = da.iter().chain(&db).copied().collect();
        let t = day(t);
        let sum = awareness_from_dates(&da, t, tau) + awareness_from_dates(&db, t, tau);
        prop_assert!((awareness_from_dates(&both, t, tau) - sum).abs() <= 1e-12 * sum.max(1.0));
    }

    #[test]
    fn moran_ignores_affine_rescaling(values in prop::collection::vec(-10.0f64..10.0, 16), scale in 0.1f64..50.0, shift in -100.0f64..100.0) {
        let mean = values.iter().sum::<f64>() / 16.0;
        prop_assume!(values.iter().any(|v| (v - mean).abs() > 1e-3));
        let mut adj = vec![Vec::new(); 16];
        for i in 0..16 {
            if i % 4 != 3 {
                adj[i].push(i + 1);
            }
            if i < 12 {
                adj[i].push(i + 4);
            }
        }
        let w = ContiguityMatrix::from_adjacency((0..16).map(|i| format!("u{i:02}")).collect(), &adj).unwrap();
        let field = |f: &dyn Fn(f64) -> f64| -> BTreeMap<String, f64> {
            w.ids.iter().zip(&values).map(|(id, v)| (id.clone(), f(*v))).collect()
        };
        let a = global_morans_i(&field(&|v| v), &w, MoranMethod::NormalApprox).unwrap();
        let b = global_morans_i(&field(&|v| scale * v + shift), &w, MoranMethod::NormalApprox).unwrap();
        prop_assert!((a.i - b.i).abs() < 1e-9);
    }
}
