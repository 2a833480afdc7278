use clustertest::inference::{bh_adjust, estimate_covariance, run_test};
use clustertest::oracle::random_instance;
use clustertest::sim::{run_type1, MethodKind, SimConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn anchor_in_set_and_p_in_unit_interval(seed in any::<u64>(), index in 0u64..1000) {
        let inst = random_instance(seed, index).unwrap();
        let r = run_test(&inst.x, &inst.sigma, &inst.method, inst.pair, inst.feature).unwrap();
        prop_assert!(r.truncation.contains(r.statistic));
        prop_assert!(r.p_selective > 0.0 && r.p_selective <= 1.0);
        prop_assert!(r.p_naive > 0.0 && r.p_naive <= 1.0);
    }

    #[test]
    fn bh_is_monotone_in_sorted_order(mut p in prop::collection::vec(0.0f64..=1.0, 1..60)) {
        p.sort_by(f64::total_cmp);
        let q = bh_adjust(&p).unwrap();
        prop_assert!(q.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(q.iter().zip(&p).all(|(a, b)| a >= b && *a <= 1.0));
    }

    #[test]
    fn estimated_covariance_is_positive_definite(seed in any::<u64>(), index in 0u64..1000) {
        let inst = random_instance(seed, index).unwrap();
        let labels = inst.method.fit(&inst.x).unwrap().labels();
        prop_assume!(inst.x.n() > labels.k());
        let s = estimate_covariance(&inst.x, &labels).unwrap();
        let q = s.q();
        for a in 0..q {
            prop_assert!(s.get(a, a) > 0.0);
            for b in 0..q {
                prop_assert_eq!(s.get(a, b), s.get(b, a));
            }
        }
    }
}

#[test]
fn simulation_output_is_a_function_of_the_config() {
    for method in MethodKind::ALL {
        let cfg = SimConfig { n: 30, q: 4, ..SimConfig::null(method, 0.3, 20, 77) };
        let a = run_type1(&cfg).unwrap();
        let b = run_type1(&cfg).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|r| (2..=3).contains(&r.feature)));
    }
}
