//! Randomized property suites. The checkers live in `common` and are also
//! run as seeded loops by the acceptance target.

mod common;

use proptest::prelude::*;
use riemquant::quant1d::{lloyd_1d, lloyd_1d_from, DiscreteLaw, Law1D, Lloyd1dConfig};

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cases(1000))]

    #[test]
    fn metric_axioms(seed in any::<u64>()) {
        common::metric_axioms(seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn exp_log_roundtrip(seed in any::<u64>()) {
        common::exp_log_roundtrip(seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn lloyd_never_increases_distortion(seed in any::<u64>()) {
        common::lloyd_monotone(seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn voronoi_weights_are_optimal(seed in any::<u64>()) {
        common::weight_optimality(seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn euclidean_dilation_scales_by_lambda_r(seed in any::<u64>()) {
        common::euclidean_scaling(seed).map_err(TestCaseError::fail)?;
    }
}

proptest! {
    #![proptest_config(cases(100))]

    #[test]
    fn results_do_not_depend_on_thread_count(seed in any::<u64>()) {
        thread_local! {
            static POOLS: Vec<rayon::ThreadPool> = common::pools();
        }
        POOLS.with(|p| common::thread_determinism(seed, p)).map_err(TestCaseError::fail)?;
    }
}

/// All `k`-subsets of `0..n`, in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = subsets(n - 1, k);
    for mut s in subsets(n - 1, k - 1) {
        s.push(n - 1);
        out.push(s);
    }
    out
}

proptest! {
    #![proptest_config(cases(200))]

    /// Multistart Lloyd over every atom subset against brute force over
    /// codebooks on a 200-point grid spanning the atoms.
    #[test]
    fn lloyd_1d_matches_exhaustive_search(
        raw in prop::collection::vec((0.0f64..10.0, 0.05f64..1.0), 1..=6),
        n in 1usize..=3,
        r in prop::sample::select(vec![1.0, 2.0, 3.0]),
    ) {
        let law = DiscreteLaw::new(raw.iter().copied()).unwrap();
        let atoms: Vec<(f64, f64)> = law.locations().iter().copied().zip(law.masses().iter().copied()).collect();
        prop_assume!(n <= atoms.len());
        let nu = Law1D::Discrete(law);
        let cfg = Lloyd1dConfig::default();
        let best = subsets(atoms.len(), n)
            .into_iter()
            .map(|s| {
                let init: Vec<f64> = s.iter().map(|&i| atoms[i].0).collect();
                lloyd_1d_from(&nu, &init, r, &cfg).unwrap().value
            })
            .fold(f64::INFINITY, f64::min);
        let single = lloyd_1d(&nu, n, r, &cfg).unwrap().value;
        prop_assert!(single >= best - 1e-12 * (1.0 + best));

        let (lo, hi) = (atoms[0].0, atoms[atoms.len() - 1].0);
        let h = (hi - lo) / 199.0;
        let grid: Vec<f64> = (0..200).map(|i| lo + i as f64 * h).collect();
        let cost: Vec<Vec<f64>> = grid
            .iter()
            .map(|g| atoms.iter().map(|(t, w)| w * (t - g).abs().powf(r)).collect())
            .collect();
        let mut brute = f64::INFINITY;
        for i in 0..200 {
            for j in i..200 {
                for k in j..200 {
                    let v: f64 = (0..atoms.len()).map(|a| cost[i][a].min(cost[j][a]).min(cost[k][a])).sum();
                    brute = brute.min(v);
                    if n < 3 {
                        break;
                    }
                }
                if n < 2 {
                    break;
                }
            }
        }
        // moving every codepoint by at most h/2 changes each term by at most
        // r (diam + h)^{r-1} h / 2
        let mass: f64 = atoms.iter().map(|a| a.1).sum();
        let slack = mass * r * (hi - lo + h).powf(r - 1.0) * h / 2.0 + 1e-12;
        prop_assert!(best <= brute + 1e-9 * (1.0 + brute), "lloyd {best} above grid optimum {brute}");
        prop_assert!(brute <= best + slack, "grid optimum {brute} too far above lloyd {best}");
    }
}
