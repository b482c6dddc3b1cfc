mod common;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use coopbo::agents::user_move;
use coopbo::game::user_certainty;
use coopbo::gp::{fit_hyperparameters, sample_max, GpBelief, KernelHyper, PRIOR_MEAN};
use coopbo::grid::{allocate_prior, build_objective, GridDomain, Observation, ObjectiveSpec, ObservationSet, PriorKind};
use coopbo::inference::{sample_params, ParamPosterior};
use coopbo::planner::{reward_r1, user_choice_distribution};
use coopbo::rng::rng_from;
use coopbo::user_model::{choice_distribution, conservative_update, simulate_choice, ReplayCache, UserParams, UserState};

fn grid() -> GridDomain {
    GridDomain::new(50, 50).unwrap()
}

fn random_observations(spec: usize, n: usize, seed: u64) -> Vec<Observation> {
    let obj = build_objective(&ObjectiveSpec::standard(spec)).unwrap();
    let mut rng = rng_from(seed, &[900]);
    (0..n)
        .map(|_| {
            let (ix, iy) = (rng.random_range(0..50), rng.random_range(0..50));
            Observation { ix, iy, z: obj.query(ix, iy, &mut rng).unwrap() }
        })
        .collect()
}

#[test]
fn repeated_queries_average_to_the_true_value() {
    let obj = build_objective(&ObjectiveSpec::standard(0)).unwrap();
    let mut rng = rng_from(1, &[1]);
    for (ix, iy) in [(0, 0), (23, 40), (49, 12)] {
        let n = 10_000;
        let mean = (0..n).map(|_| obj.query(ix, iy, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - obj.value(ix, iy).unwrap()).abs() <= 3.0 * obj.noise_sd() / 100.0);
    }
}

#[test]
fn global_priors_cluster_near_the_global_mode() {
    let obj = build_objective(&ObjectiveSpec::standard(0)).unwrap();
    let g = obj.grid();
    let mode = obj.global_mode().location;
    let mut rng = rng_from(2, &[1]);
    let trials = 1000;
    let hits = (0..trials)
        .filter(|_| {
            let set = allocate_prior(&obj, PriorKind::Global, 5, 0.05, &mut rng).unwrap();
            let c = set.iter().fold([0.0, 0.0], |acc, o| {
                let p = g.point(o.ix, o.iy);
                [acc[0] + p[0] / 5.0, acc[1] + p[1] / 5.0]
            });
            (c[0] - mode[0]).hypot(c[1] - mode[1]) <= 0.1
        })
        .count();
    assert!(hits as f64 >= 0.95 * trials as f64, "{hits}/{trials}");
}

#[test]
fn lengthscale_is_recovered_from_prior_draws() {
    let g = grid();
    let ls = 0.2;
    let signal_var = 100.0;
    let trials = 50;
    let mut ok = 0;
    for trial in 0..trials {
        let mut rng = rng_from(3, &[trial]);
        let cells: Vec<(usize, usize)> = (0..30).map(|_| (rng.random_range(0..50), rng.random_range(0..50))).collect();
        let k = DMatrix::from_fn(30, 30, |i, j| {
            let a = g.point(cells[i].0, cells[i].1);
            let b = g.point(cells[j].0, cells[j].1);
            let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            signal_var * (-d2 / (2.0 * ls * ls)).exp() + if i == j { 1e-6 * signal_var } else { 0.0 }
        });
        let l = k.cholesky().unwrap().l();
        let e = DVector::from_fn(30, |_, _| rng.sample::<f64, _>(StandardNormal));
        let f = l * e;
        let data: Vec<Observation> = cells
            .iter()
            .zip(f.iter())
            .map(|(&(ix, iy), v)| Observation { ix, iy, z: PRIOR_MEAN + v + rng.sample::<f64, _>(StandardNormal) })
            .collect();
        let h = fit_hyperparameters(&g, &data);
        if [h.lengthscale_x, h.lengthscale_y].iter().all(|l| (0.1..=0.4).contains(l)) {
            ok += 1;
        }
    }
    assert!(ok * 10 >= trials * 8, "{ok}/{trials}");
}

#[test]
fn max_samples_rarely_fall_far_below_the_mean_max() {
    let g = grid();
    for seed in 0..5 {
        let data = ObservationSet::from_vec(&g, random_observations(seed as usize % 3, 8, seed)).unwrap();
        let b = GpBelief::fit(g, &data, false).unwrap();
        let floor = b.mean_field().iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - 5.0 * b.var_field().iter().copied().fold(0.0, f64::max).sqrt();
        let s = sample_max(&b, 200, &mut rng_from(seed, &[4])).unwrap();
        let above = s.iter().filter(|&&z| z >= floor).count();
        assert!(above * 100 >= 99 * s.len(), "seed {seed}: {above}/{}", s.len());
    }
}

#[test]
fn max_sample_spread_shrinks_with_more_data() {
    let g = grid();
    let sizes = [5, 15, 40];
    let mut totals = [0.0; 3];
    for seed in 0..20 {
        let all = random_observations(0, 40, seed);
        for (slot, &n) in sizes.iter().enumerate() {
            let data = ObservationSet::from_vec(&g, all[..n].to_vec()).unwrap();
            let b = GpBelief::with_hyper(g, KernelHyper::default(), &data).unwrap();
            let s = sample_max(&b, 200, &mut rng_from(seed, &[5, n as u64])).unwrap();
            let (_, sd) = coopbo::stats::mean_sd(&s);
            totals[slot] += sd * sd / 20.0;
        }
    }
    assert!(totals[0] >= totals[1] && totals[1] >= totals[2], "{totals:?}");
}

#[test]
fn flat_belief_is_less_certain_than_an_informed_one() {
    let g = grid();
    let flat = GpBelief::prior(g, KernelHyper::default());
    for seed in 0..10 {
        let data = ObservationSet::from_vec(&g, random_observations(1, 20, seed)).unwrap();
        let informed = GpBelief::with_hyper(g, KernelHyper::default(), &data).unwrap();
        let h0 = user_certainty(&flat, 200, &mut rng_from(seed, &[6, 0])).unwrap();
        let h1 = user_certainty(&informed, 200, &mut rng_from(seed, &[6, 1])).unwrap();
        assert!(h0 > h1, "seed {seed}: {h0} <= {h1}");
    }
}

/// Probability that each cell has the largest value after unit normal noise,
/// by trapezoid quadrature over the winner's noise.
fn exact_choice_probabilities(values: &[f64]) -> Vec<f64> {
    let n = 8001;
    let (lo, hi) = (-10.0, 10.0);
    let step = (hi - lo) / (n - 1) as f64;
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = |x: f64| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
    let raw: Vec<f64> = (0..values.len())
        .map(|j| {
            (0..n)
                .map(|i| {
                    let e = lo + i as f64 * step;
                    let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                    let others: f64 = (0..values.len()).filter(|&k| k != j).map(|k| cdf(values[j] + e - values[k])).product();
                    w * step * phi(e) * others
                })
                .sum()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

fn pairwise_product(values: &[f64]) -> Vec<f64> {
    let cdf = |x: f64| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
    let raw: Vec<f64> = (0..values.len())
        .map(|j| {
            (0..values.len())
                .filter(|&i| i != j)
                .map(|i| 1.0 - cdf((values[i] - values[j]) / std::f64::consts::SQRT_2))
                .product()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

#[test]
fn five_cell_choices_match_the_noisy_argmax_and_the_pairwise_model() {
    let mut rng = rng_from(7, &[0]);
    for row in 0..3 {
        let values: Vec<f64> = (0..5).map(|_| rng.random_range(-1.5..1.5)).collect();
        let draws = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            counts[simulate_choice(&values, 1.0, &mut rng)] += 1;
        }
        let exact = exact_choice_probabilities(&values);
        for j in 0..5 {
            let f = counts[j] as f64 / draws as f64;
            assert!((f - exact[j]).abs() <= 0.01, "row {row} cell {j}: freq {f} vs {}", exact[j]);
        }
        let q = choice_distribution(&values, 1.0);
        for (a, b) in q.iter().zip(pairwise_product(&values)) {
            assert!((a - b).abs() <= 1e-12);
        }
        // Both put the same ordering on the cells.
        let order = |p: &[f64]| {
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
            idx
        };
        assert_eq!(order(&q), order(&exact), "row {row}");
    }
}

#[test]
fn well_separated_rows_make_the_pairwise_model_accurate() {
    let mut rng = rng_from(7, &[1]);
    for _ in 0..20 {
        let mut values: Vec<f64> = (0..5).map(|i| 6.0 * i as f64).collect();
        for v in &mut values {
            *v += rng.random_range(-0.5..0.5);
        }
        let q = choice_distribution(&values, 1.0);
        for (a, b) in q.iter().zip(exact_choice_probabilities(&values)) {
            assert!((a - b).abs() <= 0.02, "{a} vs {b}");
        }
    }
}

#[test]
fn synthetic_user_choices_follow_the_choice_distribution() {
    let g = grid();
    let data = ObservationSet::from_vec(&g, random_observations(2, 6, 8)).unwrap();
    let user = UserState {
        belief: GpBelief::with_hyper(g, KernelHyper::default(), &data).unwrap(),
        params: UserParams::new(0.3, 0.4, 1.0).unwrap(),
    };
    let ix = data.as_slice()[0].ix;
    let q = user_choice_distribution(&user, ix).unwrap();
    let draws = 10_000;
    let mut counts = vec![0usize; 50];
    let mut rng = rng_from(8, &[1]);
    for _ in 0..draws {
        counts[user_move(&user, ix, &mut rng).unwrap()] += 1;
    }
    for j in 0..50 {
        let f = counts[j] as f64 / draws as f64;
        assert!((f - q[j]).abs() <= 0.02, "cell {j}: {f} vs {}", q[j]);
    }
}

#[test]
fn expected_user_reward_is_the_weighted_column_sum() {
    let g = GridDomain::new(5, 5).unwrap();
    let hyper = KernelHyper { lengthscale_x: 0.3, lengthscale_y: 0.3, ..KernelHyper::default() };
    let obs = |ix, iy, z| Observation { ix, iy, z };
    let ai = GpBelief::with_hyper(g, hyper, &ObservationSet::from_vec(&g, vec![obs(1, 1, 70.0), obs(3, 4, 40.0)]).unwrap()).unwrap();
    let user = UserState {
        belief: GpBelief::with_hyper(g, hyper, &ObservationSet::from_vec(&g, vec![obs(2, 0, 60.0)]).unwrap()).unwrap(),
        params: UserParams::new(0.2, 0.5, 1.0).unwrap(),
    };
    for ix in 0..5 {
        let q = user_choice_distribution(&user, ix).unwrap();
        let mut expected = 0.0;
        for iy in 0..5 {
            expected += q[iy] * (ai.mean(ix, iy) + 0.7 * ai.var(ix, iy).sqrt());
        }
        let got = reward_r1(&ai, &user, ix, 0.7).unwrap();
        assert!((got - expected).abs() <= 1e-9 * expected.abs(), "column {ix}: {got} vs {expected}");
    }
}

#[test]
fn replay_likelihood_grid_search_recovers_conservatism() {
    let g = grid();
    let seeds = 20;
    let mut ok = 0;
    for seed in 0..seeds {
        let rounds = common::synthetic_rounds(0.1, 0.7, 20, 100 + seed);
        let cache = ReplayCache::new(g, KernelHyper::default(), &ObservationSet::new(), &rounds).unwrap();
        let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
        for i in 0..=20 {
            for j in 0..=20 {
                let (a, b) = (i as f64 / 20.0, j as f64 / 20.0);
                let ll = cache.loglik(a, b, 1.0).unwrap();
                if ll > best.0 {
                    best = (ll, [a, b]);
                }
            }
        }
        if (best.1[0] - 0.1).abs() <= 0.15 {
            ok += 1;
        }
    }
    assert!(ok * 10 >= seeds * 7, "{ok}/{seeds}");
}

#[test]
fn laplace_draws_centre_on_the_map() {
    let post = ParamPosterior {
        map: [0.4, 0.55],
        covariance: [[0.002, 0.0005], [0.0005, 0.001]],
        log_evidence_at_map: 0.0,
        degenerate: false,
    };
    let n = 20_000;
    let mut rng = rng_from(9, &[0]);
    let draws: Vec<[f64; 2]> = (0..n).map(|_| sample_params(&post, &mut rng)).collect();
    for d in 0..2 {
        let xs: Vec<f64> = draws.iter().map(|p| p[d]).collect();
        let (mean, sd) = coopbo::stats::mean_sd(&xs);
        let se = sd / (n as f64).sqrt();
        assert!((mean - post.map[d]).abs() <= 3.0 * se, "coord {d}: {mean} vs {}", post.map[d]);
    }
}

#[test]
fn conservative_user_keeps_more_of_the_prior() {
    let g = grid();
    let start = GpBelief::prior(g, KernelHyper::default());
    let rounds = random_observations(0, 5, 10);
    let mut low = start.clone();
    let mut high = start;
    for &o in &rounds {
        low = conservative_update(&low, o, 0.1).unwrap();
        high = conservative_update(&high, o, 0.9).unwrap();
    }
    let distance = |b: &GpBelief| b.mean_field().iter().map(|m| (m - PRIOR_MEAN).abs()).sum::<f64>();
    assert!(distance(&high) < distance(&low));
}
