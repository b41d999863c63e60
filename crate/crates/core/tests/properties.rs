//! Property-based checks of the invariants stated for each module.

use proptest::prelude::*;

use synthinfer::dgp::{self, DgpParams};
use synthinfer::estimators::{estimate_mean, EstimateRecord, EstimatorFamily};
use synthinfer::evaluation::fit_power_law;
use synthinfer::inference::{
    confidence_interval, corrected_se, one_sample_test, CiSpec, TestSpec,
};
use synthinfer::io::{read_dataset, write_dataset, ColumnDecl, CsvTableSpec};
use synthinfer::tabular::{exact_copy_count, Dag};

fn record(estimate: f64, se: f64, m: usize, family: EstimatorFamily) -> EstimateRecord {
    let data = dgp::generate(&DgpParams::default(), 3, 0).unwrap();
    EstimateRecord {
        estimate,
        naive_se: se,
        corrected_se: corrected_se(se, m, m),
        family,
        m,
        n: m,
        ..estimate_mean(&data, "age").unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn topological_order_is_a_permutation_respecting_edges(
        perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(),
        mask in 0u32..1024,
    ) {
        let schema = dgp::schema();
        let names: Vec<String> = schema.names().map(str::to_string).collect();
        let mut edges = Vec::new();
        let mut bit = 0;
        for i in 0..5 {
            for j in i + 1..5 {
                if mask >> bit & 1 == 1 {
                    edges.push((names[perm[i]].clone(), names[perm[j]].clone()));
                }
                bit += 1;
            }
        }
        let dag = Dag::new(&schema, &edges).unwrap();
        let order = dag.topological_indices().unwrap();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..5).collect::<Vec<_>>());
        let position = |c: usize| order.iter().position(|&x| x == c).unwrap();
        for (p, c) in dag.edges() {
            prop_assert!(position(p) < position(c));
        }
    }

    #[test]
    fn corrected_se_is_monotone_and_never_below_naive(
        se in 1e-6f64..1e3,
        n in 2usize..100_000,
        m1 in 1usize..100_000,
        m2 in 1usize..100_000,
    ) {
        let (lo, hi) = (m1.min(m2), m1.max(m2));
        prop_assert!(corrected_se(se, n, lo) <= corrected_se(se, n, hi));
        prop_assert!(corrected_se(se, n, lo) > se);
    }

    #[test]
    fn tests_reject_exactly_outside_the_interval(
        estimate in -100f64..100.0,
        se in 1e-4f64..10.0,
        m in 3usize..5000,
        offset in -10f64..10.0,
        regression in any::<bool>(),
        corrected in any::<bool>(),
    ) {
        let family = if regression { EstimatorFamily::Regression } else { EstimatorFamily::Mean };
        let rec = record(estimate, se, m, family);
        let ci = confidence_interval(&rec, &CiSpec::default(), corrected).unwrap();
        for theta0 in [estimate + offset * se, ci.lower(), ci.upper()] {
            let test = one_sample_test(&rec, &TestSpec::new(theta0), corrected).unwrap();
            prop_assert_eq!(test.reject, !ci.contains(theta0));
        }
    }

    #[test]
    fn power_law_exponent_is_scale_invariant(
        a in -1.0f64..1.5,
        c in 1e-3f64..1e3,
        scale in 1e-3f64..1e3,
    ) {
        let ns = [50.0, 160.0, 500.0, 1600.0, 5000.0];
        let points: Vec<(f64, f64)> = ns.iter().map(|&n: &f64| (n, c * n.powf(-a))).collect();
        let scaled: Vec<(f64, f64)> = points.iter().map(|&(n, v)| (n, scale * v)).collect();
        let f1 = fit_power_law(&points).unwrap();
        let f2 = fit_power_law(&scaled).unwrap();
        prop_assert!((f1.exponent - a).abs() < 1e-9);
        prop_assert!((f1.exponent - f2.exponent).abs() < 1e-9);
    }

    #[test]
    fn resampled_rows_are_all_copies(
        seed in any::<u64>(),
        rows in proptest::collection::vec(0usize..40, 1..60),
    ) {
        let data = dgp::generate(&DgpParams::default(), 40, seed).unwrap();
        let copy = data.select_rows(&rows);
        prop_assert_eq!(exact_copy_count(&data, &copy).unwrap(), rows.len());
        let fresh = dgp::generate(&DgpParams::default(), 30, seed.wrapping_add(1)).unwrap();
        prop_assert_eq!(exact_copy_count(&data, &fresh).unwrap(), 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn datasets_round_trip_through_csv(seed in any::<u64>(), n in 1usize..200) {
        let data = dgp::generate(&DgpParams::default(), n, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset(&data, &path).unwrap();
        let columns = data.schema().columns().iter().map(ColumnDecl::from_column).collect();
        let back = read_dataset(&CsvTableSpec::new(&path, columns)).unwrap();
        prop_assert_eq!(back.dropped_rows, 0);
        prop_assert_eq!(back.data.n_rows(), n);
        for i in 0..n {
            prop_assert_eq!(format!("{:?}", back.data.row(i)), format!("{:?}", data.row(i)));
        }
    }
}
