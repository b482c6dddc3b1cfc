use proptest::prelude::*;

use coopbo::agents::PolicyKind;
use coopbo::game::{run_episode, verify_scores, GameConfig};
use coopbo::gp::{GpBelief, KernelHyper};
use coopbo::grid::{GridDomain, Observation, ObservationSet, PriorKind};
use coopbo::user_model::{acquisition, choice_distribution, conservative_update, UserParams};

fn small_grid() -> GridDomain {
    GridDomain::new(12, 12).unwrap()
}

fn observations(max: usize) -> impl Strategy<Value = Vec<Observation>> {
    prop::collection::vec((0usize..12, 0usize..12, 0.0f64..100.0), 0..max)
        .prop_map(|v| v.into_iter().map(|(ix, iy, z)| Observation { ix, iy, z }).collect())
}

fn hyper() -> impl Strategy<Value = KernelHyper> {
    (0.05f64..0.5, 0.05f64..0.5, 1.0f64..900.0, 0.01f64..4.0).prop_map(|(lx, ly, s, n)| KernelHyper {
        lengthscale_x: lx,
        lengthscale_y: ly,
        signal_var: s,
        obs_noise_var: n,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn posterior_variance_stays_within_the_prior(h in hyper(), data in observations(12)) {
        let g = small_grid();
        let b = GpBelief::with_hyper(g, h, &ObservationSet::from_vec(&g, data).unwrap()).unwrap();
        for &v in b.var_field() {
            prop_assert!(v >= 0.0 && v <= h.signal_var * (1.0 + 1e-9), "var {} prior {}", v, h.signal_var);
        }
        prop_assert!(b.mean_field().iter().all(|m| m.is_finite()));
    }

    #[test]
    fn conservative_update_is_a_convex_combination(
        data in observations(6),
        ix in 0usize..12,
        iy in 0usize..12,
        z in 0.0f64..100.0,
        alpha in 0.0f64..=1.0,
    ) {
        let g = small_grid();
        let old = GpBelief::with_hyper(g, KernelHyper::default(), &ObservationSet::from_vec(&g, data).unwrap()).unwrap();
        let obs = Observation { ix, iy, z };
        let bayes = conservative_update(&old, obs, 0.0).unwrap();
        let mixed = conservative_update(&old, obs, alpha).unwrap();
        for c in 0..g.len() {
            let m = alpha * old.mean_field()[c] + (1.0 - alpha) * bayes.mean_field()[c];
            let v = alpha * old.var_field()[c] + (1.0 - alpha) * bayes.var_field()[c];
            prop_assert!((mixed.mean_field()[c] - m).abs() <= 1e-9 * (1.0 + m.abs()));
            prop_assert!((mixed.var_field()[c] - v).abs() <= 1e-9 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn choice_distribution_is_a_distribution(
        values in prop::collection::vec(-200.0f64..200.0, 1..60),
        sigma in 0.0f64..5.0,
    ) {
        let q = choice_distribution(&values, sigma);
        prop_assert_eq!(q.len(), values.len());
        prop_assert!(q.iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        // The largest value is never less likely than any other.
        let top = values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).unwrap().0;
        prop_assert!(q.iter().all(|&p| p <= q[top] + 1e-12));
    }

    #[test]
    fn acquisition_grows_with_exploration(data in observations(8), ix in 0usize..12, b1 in 0.0f64..0.5, db in 0.01f64..0.5) {
        let g = small_grid();
        let b = GpBelief::with_hyper(g, KernelHyper::default(), &ObservationSet::from_vec(&g, data).unwrap()).unwrap();
        let lo = acquisition(&b, ix, b1).unwrap().values;
        let hi = acquisition(&b, ix, b1 + db).unwrap().values;
        for iy in 0..g.ny() {
            if b.var(ix, iy) > 0.0 {
                prop_assert!(hi[iy] > lo[iy]);
            } else {
                prop_assert_eq!(hi[iy], lo[iy]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn episode_scores_are_running_maxima_in_range(
        seed in any::<u64>(),
        policy in prop::sample::select(vec![PolicyKind::RandomFull, PolicyKind::GpUcbFull, PolicyKind::RandomAi, PolicyKind::GreedyAi]),
        alpha in 0.0f64..=1.0,
        beta in 0.0f64..=1.0,
        prior in prop::sample::select(vec![PriorKind::Global, PriorKind::Local, PriorKind::None]),
    ) {
        let mut cfg = GameConfig::new(policy, UserParams::new(alpha, beta, 1.0).unwrap(), prior, prior, seed);
        cfg.rounds = 8;
        cfg.entropy_samples = 0;
        let trace = run_episode(&cfg).unwrap();
        prop_assert_eq!(trace.scores.len(), 8);
        prop_assert!(trace.scores.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(trace.scores.iter().all(|s| (0.0..=100.0).contains(s)));
        prop_assert_eq!(verify_scores(&trace).unwrap(), trace.scores.clone());
    }
}
