use hypodiff_core::moments::{exact_ho_moments, scheme_moments};
use hypodiff_core::rng::from_seed;
use hypodiff_core::simulate::{
    draw_noise_pair, scheme15_step, simulate_euler_fine, simulate_exact_ho, simulate_scheme15, subsample,
};
use hypodiff_core::{Fhn, Ho, Model, ParamSet, Sie, StateVector};
use hypodiff_oracles as oracle;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn var(xs: &[f64]) -> f64 {
    oracle::mean_sd(xs).1.powi(2)
}

fn cov(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0)
}

#[test]
fn noise_pair_covariance() {
    let delta = 0.02;
    let draws = 100_000;
    let mut rng = from_seed(3);
    let (mut eta, mut xi) = (Vec::with_capacity(draws), Vec::with_capacity(draws));
    for _ in 0..draws {
        let np = draw_noise_pair(delta, 1, &mut rng);
        eta.push(np.eta[0]);
        xi.push(np.xi[0]);
    }
    let nf = draws as f64;
    let (ve, vx, c) = (var(&eta), var(&xi), cov(&eta, &xi));
    let (te, tx, tc) = (delta, delta.powi(3) / 3.0, delta * delta / 2.0);
    assert!((ve - te).abs() <= 3.0 * te * (2.0 / nf).sqrt(), "Var(eta) {ve}");
    assert!((vx - tx).abs() <= 3.0 * tx * (2.0 / nf).sqrt(), "Var(xi) {vx}");
    // Var of a sample covariance: (s_xx s_yy + s_xy^2) / n
    assert!((c - tc).abs() <= 3.0 * ((te * tx + tc * tc) / nf).sqrt(), "Cov {c}");
    let corr = c / (ve * vx).sqrt();
    assert!((corr - 3f64.sqrt() / 2.0).abs() < 0.005, "corr {corr}");
}

#[test]
fn exact_oscillator_reaches_invariant_law() {
    let p = Ho::params(4.0, 0.5, 0.5);
    let path = simulate_exact_ho(&p, &StateVector::new(0.0, &[0.0]), 0.02, 100_000, 21).unwrap();
    let v = path.v();
    let u = path.hidden(0);
    let (vv, vu) = (var(&v), var(&u));
    assert!((vv / 0.0625 - 1.0).abs() < 0.05, "Var(V) {vv}");
    assert!((vu / 0.25 - 1.0).abs() < 0.05, "Var(U) {vu}");
}

#[test]
fn zero_transitions_return_the_start() {
    let x0 = StateVector::new(0.3, &[-0.1]);
    let p = Ho::params(4.0, 0.5, 0.5);
    let path = simulate_exact_ho(&p, &x0, 0.02, 0, 1).unwrap();
    assert_eq!(path.states, vec![x0]);
}

fn one_step_samples<M: Model + ?Sized>(model: &M, p: &ParamSet, x: &[f64], delta: f64, draws: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = from_seed(seed);
    let dim = x.len();
    let mut out = vec![Vec::with_capacity(draws); dim];
    for _ in 0..draws {
        let noise = draw_noise_pair(delta, dim - 1, &mut rng);
        let y = scheme15_step(model, p, x, delta, &noise);
        for j in 0..dim {
            out[j].push(y[j]);
        }
    }
    out
}

#[test]
fn scheme_step_moments_match_analytic() {
    let delta = 0.02;
    let draws = 100_000;
    let nf = draws as f64;
    let fhn = Fhn::default();
    let cases: Vec<(&dyn Model, ParamSet, Vec<f64>)> = vec![
        (&Ho, Ho::params(4.0, 0.5, 0.5), vec![1.0, 0.0]),
        (&fhn, Fhn::params(0.1, 1.5, 0.8, 0.3), vec![0.4, -0.2]),
    ];
    for (model, p, x) in cases {
        let m = scheme_moments(model, &x, &p, delta).unwrap();
        let ys = one_step_samples(model, &p, &x, delta, draws, 9);
        for i in 0..2 {
            let s_ii = m.cov.get(i, i);
            let mean = ys[i].iter().sum::<f64>() / nf;
            let want = x[i] + m.mean_increment[i];
            assert!((mean - want).abs() <= 3.0 * (s_ii / nf).sqrt(), "{} mean {i}: {mean} vs {want}", model.id());
            for j in i..2 {
                let c = cov(&ys[i], &ys[j]);
                let s_jj = m.cov.get(j, j);
                let s_ij = m.cov.get(i, j);
                let se = ((s_ii * s_jj + s_ij * s_ij) / nf).sqrt();
                assert!((c - s_ij).abs() <= 3.0 * se, "{} cov {i}{j}: {c} vs {s_ij}", model.id());
            }
        }
    }
}

#[test]
fn scheme_step_close_to_exact_oscillator() {
    let p = Ho::params(4.0, 0.5, 0.5);
    let delta = 0.02;
    let x = [1.0, 0.0];
    let exact = exact_ho_moments(&p, &x, delta);
    let m = scheme_moments(&Ho, &x, &p, delta).unwrap();
    for j in 0..2 {
        assert!((exact.mean[j] - x[j] - m.mean_increment[j]).abs() < 1e-4);
    }

    // Kolmogorov-Smirnov on one-step V draws against the exact marginal
    let ys = one_step_samples(&Ho, &p, &x, delta, 10_000, 13);
    let law = Normal::new(exact.mean[0], exact.cov.get(0, 0).sqrt()).unwrap();
    let mut v = ys[0].clone();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = law.cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
}

#[test]
fn additive_noise_terms_vanish() {
    // for constant diffusion the step is linear in the noise pair
    let p = Ho::params(4.0, 0.5, 0.5);
    let x = [0.2, 0.7];
    let mut rng = from_seed(1);
    let a = draw_noise_pair(0.02, 1, &mut rng);
    let mut b = a;
    b.eta[0] *= 2.0;
    b.xi[0] *= 2.0;
    let mut z = a;
    z.eta[0] = 0.0;
    z.xi[0] = 0.0;
    let y0 = scheme15_step(&Ho, &p, &x, 0.02, &z);
    let ya = scheme15_step(&Ho, &p, &x, 0.02, &a);
    let yb = scheme15_step(&Ho, &p, &x, 0.02, &b);
    for j in 0..2 {
        assert!(((yb[j] - y0[j]) - 2.0 * (ya[j] - y0[j])).abs() < 1e-15);
    }
}

#[test]
fn fitzhugh_nagumo_orbit_stays_bounded() {
    let p = Fhn::params(0.1, 1.5, 0.8, 0.3);
    let path = simulate_euler_fine(&Fhn::default(), &p, &StateVector::new(0.0, &[0.0]), 0.002, 1_000_000, 4).unwrap();
    assert!(path.v().iter().all(|v| (-3.0..=3.0).contains(v)));
}

#[test]
fn conductances_fluctuate_around_their_means() {
    let p = Sie::params([0.5, 1.0], [17.8, 9.4], [0.1, 0.1]);
    let x0 = StateVector::new(-60.0, &[10.0, 1.0]);
    let path = simulate_euler_fine(&Sie::default(), &p, &x0, 0.002, 200_000, 8).unwrap();
    let burn = 10_000;
    let mean = |j: usize| {
        let g = path.hidden(j);
        g[burn..].iter().sum::<f64>() / (g.len() - burn) as f64
    };
    let (ge, gi) = (mean(0), mean(1));
    assert!((ge / 17.8 - 1.0).abs() < 0.02, "G_E {ge}");
    assert!((gi / 9.4 - 1.0).abs() < 0.03, "G_I {gi}");
}

#[test]
fn subsample_keeps_every_kth_state() {
    let p = Fhn::params(0.1, 1.5, 0.8, 0.3);
    let fine = simulate_euler_fine(&Fhn::default(), &p, &StateVector::new(0.0, &[0.0]), 0.002, 10_000, 2).unwrap();
    let coarse = subsample(&fine, 10).unwrap();
    assert_eq!(coarse.states.len(), 1001);
    assert!((coarse.dt - 0.02).abs() < 1e-15);
    for (k, (t, x)) in coarse.times().zip(&coarse.states).enumerate() {
        assert_eq!(*x, fine.states[10 * k]);
        assert!((t - (fine.t0 + k as f64 * 0.02)).abs() < 1e-12);
    }
    assert_eq!(subsample(&fine, 1).unwrap(), fine);
    assert!(subsample(&fine, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn identical_seeds_identical_paths(seed in any::<u64>(), which in 0usize..3) {
        let (a, b) = match which {
            0 => {
                let p = Ho::params(4.0, 0.5, 0.5);
                let x0 = StateVector::new(0.0, &[0.0]);
                (simulate_exact_ho(&p, &x0, 0.02, 200, seed).unwrap(), simulate_exact_ho(&p, &x0, 0.02, 200, seed).unwrap())
            }
            1 => {
                let p = Fhn::params(0.1, 1.5, 0.8, 0.3);
                let x0 = StateVector::new(0.0, &[0.0]);
                let m = Fhn::default();
                (simulate_euler_fine(&m, &p, &x0, 0.002, 500, seed).unwrap(), simulate_euler_fine(&m, &p, &x0, 0.002, 500, seed).unwrap())
            }
            _ => {
                let p = Sie::params([0.5, 1.0], [17.8, 9.4], [0.1, 0.1]);
                let x0 = StateVector::new(-60.0, &[10.0, 1.0]);
                let m = Sie::default();
                (simulate_scheme15(&m, &p, &x0, 0.002, 200, seed).unwrap(), simulate_scheme15(&m, &p, &x0, 0.002, 200, seed).unwrap())
            }
        };
        let bits = |t: &hypodiff_core::Trajectory| t.states.iter().flat_map(|x| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
    }
}
