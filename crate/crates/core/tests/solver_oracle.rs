mod common;

use common::{lp_vertex_oracle, qp_active_set_oracle, random_lp, random_qp};
use dopf::solver::{project_disc, solve_lp, solve_qp, SolveStatus};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qp_matches_active_set_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dense, qp) = random_qp(&mut rng);
        let want = qp_active_set_oracle(&dense).expect("oracle finds the optimum");
        let got = solve_qp(&qp).unwrap();
        prop_assert_eq!(got.status, SolveStatus::Optimal);
        for (a, b) in got.x.iter().zip(want.iter()) {
            prop_assert!((a - b).abs() <= 1e-5, "{:?} vs {:?}", got.x, want);
        }
    }

    #[test]
    fn lp_matches_vertex_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dense, lp) = random_lp(&mut rng);
        let (_, cost) = lp_vertex_oracle(&dense).expect("bounded feasible LP");
        let got = solve_lp(&lp).unwrap();
        prop_assert_eq!(got.status, SolveStatus::Optimal);
        prop_assert!((got.objective - cost).abs() <= 1e-5, "{} vs {}", got.objective, cost);
    }

    #[test]
    fn disc_projection_is_exact(a in -10.0f64..10.0, b in -10.0f64..10.0, r in 0.0f64..5.0) {
        let (x, y) = project_disc(a, b, r);
        let norm = x.hypot(y);
        prop_assert!(norm <= r * (1.0 + 1e-15) + 1e-300);
        if a.hypot(b) <= r {
            prop_assert_eq!((x, y), (a, b));
        } else {
            prop_assert!((norm - r).abs() <= 1e-12 * r.max(1.0));
            // same direction as the input
            prop_assert!((x * b - y * a).abs() <= 1e-9 * (1.0 + a.abs() + b.abs()));
        }
    }
}
