use hypodiff_core::moments::{log_density_scheme, scheme_moments};
use hypodiff_core::rng::from_seed;
use hypodiff_core::simulate::{simulate_euler_fine, simulate_exact_ho, subsample};
use hypodiff_core::smc::{
    conditional_law, propose_conditional, propose_transition, resample_multinomial, sample_smoothing_path, smc_filter,
    FilterOptions, ProposalKind, U0Sampler,
};
use hypodiff_core::{Fhn, Ho, Model, ModelSpec, ParamSet, Sie, StateVector, Trajectory};
use hypodiff_oracles as oracle;
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn ho_truth() -> ParamSet {
    Ho::params(4.0, 0.5, 0.5)
}

fn ho_data(n: usize, seed: u64) -> Trajectory {
    simulate_exact_ho(&ho_truth(), &StateVector::new(0.0, &[0.0]), 0.02, n, seed).unwrap()
}

fn fhn_data(n: usize, seed: u64) -> Trajectory {
    let p = Fhn::params(0.1, 1.5, 0.8, 0.3);
    let fine = simulate_euler_fine(&Fhn::default(), &p, &StateVector::new(0.0, &[0.0]), 0.002, 10 * n, seed).unwrap();
    subsample(&fine, 10).unwrap()
}

fn ho_filter(v: &[f64], k: usize, seed: u64) -> hypodiff_core::smc::ParticleSystem {
    let u0 = U0Sampler::for_model(&ModelSpec::Ho(Ho), &ho_truth(), v, 0.02).unwrap();
    let opts = FilterOptions {
        particles: k,
        proposal: ProposalKind::Conditional,
        seed,
    };
    smc_filter(&Ho, &ho_truth(), v, &u0, &opts, 0.02).unwrap()
}

fn kalman(v: &[f64]) -> oracle::KalmanOutput {
    let (a, q) = oracle::ho_scheme_linear(4.0, 0.5, 0.5, 0.02);
    oracle::kalman_exact_first(&a, &q, v, 0.0, 0.25)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn weights_normalized_and_ancestors_in_range(
        seed in any::<u64>(), k in 1usize..60, fhn in any::<bool>(), conditional in any::<bool>(),
    ) {
        let proposal = if conditional { ProposalKind::Conditional } else { ProposalKind::Transition };
        let opts = FilterOptions { particles: k, proposal, seed };
        let ps = if fhn {
            let data = fhn_data(40, seed);
            let p = Fhn::params(0.1, 1.5, 0.8, 0.3);
            let u0 = U0Sampler::for_model(&ModelSpec::Fhn(Fhn::default()), &p, &data.v(), 0.02).unwrap();
            smc_filter(&Fhn::default(), &p, &data.v(), &u0, &opts, 0.02).unwrap()
        } else {
            let data = ho_data(40, seed);
            let u0 = U0Sampler::for_model(&ModelSpec::Ho(Ho), &ho_truth(), &data.v(), 0.02).unwrap();
            smc_filter(&Ho, &ho_truth(), &data.v(), &u0, &opts, 0.02).unwrap()
        };
        for i in 0..=ps.n() {
            let w = ps.weights(i);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            if i > 0 {
                prop_assert!(ps.ancestors(i).iter().all(|&a| a < k));
            }
        }
        if k == 1 {
            prop_assert!((1..=ps.n()).all(|i| ps.weights(i) == [1.0]));
        }
    }

    #[test]
    fn conditional_never_wider_than_transition(v in -1.0..1.0f64, u in -2.0..2.0f64) {
        let m = scheme_moments(&Ho, &[v, u], &ho_truth(), 0.02).unwrap();
        let law = conditional_law(&Ho, &ho_truth(), v, v + m.mean_increment[0] + 1e-3, &[u], 0.02).unwrap();
        prop_assert!(law.cov.get(0, 0) < m.cov.get(1, 1));
    }
}

/// The filter uses `log p(V_i | x_prev)` as the conditional-proposal
/// weight; the literal `joint / proposal` ratio must agree.
#[test]
fn conditional_weight_equals_literal_ratio() {
    let mut rng = from_seed(17);
    let fhn = Fhn::default();
    let sie = Sie::default();
    let cases: Vec<(&dyn Model, ParamSet)> = vec![
        (&Ho, ho_truth()),
        (&fhn, Fhn::params(0.1, 1.5, 0.8, 0.3)),
        (&sie, Sie::params([0.5, 1.0], [17.8, 9.4], [0.1, 0.1])),
    ];
    let mut checked = 0;
    for (model, p) in &cases {
        let hidden = model.hidden_dim();
        for _ in 0..334 {
            let (v_prev, u_prev): (f64, Vec<f64>) = if hidden == 1 {
                (rng.random_range(-1.5..1.5), vec![rng.random_range(-1.5..1.5)])
            } else {
                (rng.random_range(-75.0..-45.0), vec![rng.random_range(12.0..24.0), rng.random_range(5.0..14.0)])
            };
            let mut x_prev = vec![v_prev];
            x_prev.extend(&u_prev);
            let m = scheme_moments(*model, &x_prev, p, 0.02).unwrap();
            let v_cur = v_prev + m.mean_increment[0] + rng.random_range(-2.0..2.0) * m.cov.get(0, 0).sqrt();
            let law = conditional_law(*model, p, v_prev, v_cur, &u_prev, 0.02).unwrap();
            let (u, log_q) = propose_conditional(*model, p, v_prev, v_cur, &u_prev, 0.02, &mut rng).unwrap();
            let mut x_cur = vec![v_cur];
            x_cur.extend(u.iter());
            let joint = log_density_scheme(*model, &x_prev, &x_cur, p, 0.02).unwrap();
            let literal = joint - log_q;
            assert!(
                (literal - law.log_marginal_v).abs() <= 1e-9,
                "{}: {literal} vs {}",
                model.id(),
                law.log_marginal_v
            );
            checked += 1;
        }
    }
    assert!(checked >= 1000);
}

#[test]
fn proposal_moments_match_analytic_law() {
    let p = ho_truth();
    let (v_prev, u_prev) = (0.3, -0.4);
    let m = scheme_moments(&Ho, &[v_prev, u_prev], &p, 0.02).unwrap();
    let v_cur = v_prev + m.mean_increment[0] + 0.8 * m.cov.get(0, 0).sqrt();
    let law = conditional_law(&Ho, &p, v_prev, v_cur, &[u_prev], 0.02).unwrap();
    let draws = 100_000;
    let nf = draws as f64;
    let mut rng = from_seed(2);
    let cond: Vec<f64> =
        (0..draws).map(|_| propose_conditional(&Ho, &p, v_prev, v_cur, &[u_prev], 0.02, &mut rng).unwrap().0[0]).collect();
    let trans: Vec<f64> =
        (0..draws).map(|_| propose_transition(&Ho, &p, v_prev, &[u_prev], 0.02, &mut rng).unwrap().0[0]).collect();
    for (xs, mean, var) in [
        (&cond, law.mean[0], law.cov.get(0, 0)),
        (&trans, u_prev + m.mean_increment[1], m.cov.get(1, 1)),
    ] {
        let (sm, sd) = oracle::mean_sd(xs);
        assert!((sm - mean).abs() <= 3.0 * (var / nf).sqrt(), "mean {sm} vs {mean}");
        assert!((sd * sd - var).abs() <= 3.0 * var * (2.0 / nf).sqrt(), "var {} vs {var}", sd * sd);
    }
    // paper parameters at delta 0.02: Schur complement of the scheme covariance
    let s = |i, j| m.cov.get(i, j);
    assert!((law.cov.get(0, 0) - (s(1, 1) - s(0, 1) * s(0, 1) / s(0, 0))).abs() < 1e-15);
    assert!((s(1, 1) - 4.95017e-3).abs() < 1e-8);
    assert!((law.cov.get(0, 0) - 1.2503e-3).abs() < 1e-6, "{}", law.cov.get(0, 0));
}

#[test]
fn multinomial_resampling_law() {
    let k = 100;
    let uniform = vec![1.0 / k as f64; k];
    let mut counts = vec![0u64; k];
    let mut rng = from_seed(8);
    let reps = 10_000;
    for _ in 0..reps {
        for i in resample_multinomial(&uniform, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    let expected = reps as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new((k - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(chi2 < critical, "chi-square {chi2} above {critical}");

    let mut point = vec![0.0; 10];
    point[0] = 1.0;
    assert!(resample_multinomial(&point, &mut rng).unwrap().iter().all(|&i| i == 0));

    let draws = 100_000;
    let mut ones = 0;
    for _ in 0..draws / 2 {
        ones += resample_multinomial(&[0.5, 0.5], &mut rng).unwrap().iter().filter(|&&i| i == 1).count();
    }
    let freq = ones as f64 / draws as f64;
    assert!((freq - 0.5).abs() <= 3.0 * (0.25 / draws as f64).sqrt(), "frequency {freq}");

    assert!(resample_multinomial(&[0.5, 0.6], &mut rng).is_err());
}

#[test]
fn filtered_mean_tracks_the_hidden_path() {
    let data = ho_data(1000, 31);
    let ps = ho_filter(&data.v(), 100, 1);
    let fm = ps.filtered_mean(0);
    let u = data.hidden(0);
    let mse = fm.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / u.len() as f64;
    assert!(mse.sqrt() < 0.5, "RMSE {}", mse.sqrt());
}

#[test]
fn single_particle_smoothing_path_is_the_trajectory() {
    let data = ho_data(50, 4);
    let ps = ho_filter(&data.v(), 1, 9);
    let mut rng = from_seed(0);
    let path = sample_smoothing_path(&ps, &mut rng);
    assert_eq!(path.len(), 1);
    assert_eq!(path[0].len(), 51);
    for (i, &u) in path[0].iter().enumerate() {
        assert_eq!(u, ps.particle(i, 0)[0]);
    }
}

/// Each sampled path comes from its own filter run, so the paths are
/// independent draws and their average estimates the smoothing mean.
#[test]
fn smoothing_paths_average_to_kalman_smoother() {
    let data = ho_data(200, 12);
    let v = data.v();
    let kf = kalman(&v);
    let runs = 100;
    let mut rng = from_seed(77);
    let paths: Vec<Vec<f64>> = (0..runs)
        .map(|r| {
            let ps = ho_filter(&v, 500, 1000 + r);
            sample_smoothing_path(&ps, &mut rng).remove(0)
        })
        .collect();
    for _ in 0..10 {
        let i = rng.random_range(0..=200usize);
        let xs: Vec<f64> = paths.iter().map(|p| p[i]).collect();
        let (m, sd) = oracle::mean_sd(&xs);
        let se = sd / (runs as f64).sqrt();
        assert!((m - kf.smoothed_mean[i]).abs() <= 3.0 * se, "time {i}: {m} vs {} (se {se})", kf.smoothed_mean[i]);
    }
}

#[test]
fn filter_error_shrinks_with_particles() {
    let data = ho_data(100, 5);
    let v = data.v();
    let kf = kalman(&v);
    let clamp = |u: f64| u.clamp(-3.0, 3.0);
    let mut medians = Vec::new();
    for k in [10, 100, 1000] {
        let errs: Vec<f64> = (0..20)
            .map(|seed| {
                let ps = ho_filter(&v, k, seed);
                let i = ps.n();
                let est: f64 = (0..k).map(|j| ps.weights(i)[j] * clamp(ps.particle(i, j)[0])).sum();
                (est - kf.filtered_mean[i]).abs()
            })
            .collect();
        medians.push(oracle::median(&errs));
    }
    assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
}
