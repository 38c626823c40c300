//! Particle filter for the rough coordinates given the observed smooth
//! coordinate, with multinomial resampling at every step and forward
//! (ancestry-tracing) smoothing paths.

#[allow(unused_imports)] // float methods are inherent once std is linked
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{normal_log_density, Cholesky, SymMatrix, Vector, MAX_HIDDEN};
use crate::model::{Model, ModelSpec, ParamSet};
use crate::moments::scheme_moments;
use crate::rng::{from_seed, SimRng};
use crate::simulate::HIDDEN_FLOOR;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProposalKind {
    /// Scheme Gaussian of `U_i` conditioned on the observed `V_i`.
    Conditional,
    /// Scheme Gaussian marginal of `U_i`.
    Transition,
}

/// Law of the initial hidden state.
#[derive(Clone, Debug, PartialEq)]
pub enum U0Sampler {
    PointMass(Vec<f64>),
    /// Independent normals.
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
    /// Independent Gamma draws with the given means and variances.
    Gamma { mean: Vec<f64>, var: Vec<f64> },
}

impl U0Sampler {
    /// Default initial law: stationary `N(0, sigma^2 / (2 gamma))` for the
    /// oscillator (a Gaussian fitted to the increments of `V` when the
    /// damping is not positive), the increment inversion of the smooth equation for
    /// FitzHugh-Nagumo, and the stationary Gamma law of each square-root
    /// conductance.
    pub fn for_model(model: &ModelSpec, params: &ParamSet, v_obs: &[f64], delta: f64) -> Result<Self> {
        match model {
            ModelSpec::Ho(_) => {
                let (g, s) = (params.phi[1], params.sigma[0]);
                if g > 0.0 {
                    return Ok(U0Sampler::Gaussian {
                        mean: vec![0.0],
                        sd: vec![s / (2.0 * g).sqrt()],
                    });
                }
                // no stationary law; centre on the first increment with the
                // spread of all increments
                if v_obs.len() < 3 || !(delta > 0.0) {
                    return Err(Error::invalid("initial law needs positive damping or at least three observations"));
                }
                let inc: Vec<f64> = v_obs.windows(2).map(|w| (w[1] - w[0]) / delta).collect();
                let mean = inc.iter().sum::<f64>() / inc.len() as f64;
                let var = inc.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / inc.len() as f64;
                if !(var > 0.0) || !var.is_finite() {
                    return Err(Error::invalid("initial law needs positive damping or a varying path"));
                }
                Ok(U0Sampler::Gaussian {
                    mean: vec![inc[0]],
                    sd: vec![var.sqrt()],
                })
            }
            ModelSpec::Fhn(m) => {
                if v_obs.len() < 2 {
                    return Err(Error::InsufficientData {
                        needed: 2,
                        got: v_obs.len(),
                    });
                }
                let (v0, v1) = (v_obs[0], v_obs[1]);
                let u0 = v0 - v0 * v0 * v0 + m.s - params.psi[0] * (v1 - v0) / delta;
                Ok(U0Sampler::PointMass(vec![u0]))
            }
            ModelSpec::Sie(_) => {
                let mean = vec![params.phi[2], params.phi[3]];
                let var = (0..2)
                    .map(|j| params.phi[2 + j] * params.phi[j] * params.sigma[j] * params.sigma[j] / 2.0)
                    .collect();
                Ok(U0Sampler::Gamma { mean, var })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            U0Sampler::PointMass(u) => u.len(),
            U0Sampler::Gaussian { mean, .. } | U0Sampler::Gamma { mean, .. } => mean.len(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        match self {
            U0Sampler::PointMass(u) => out.copy_from_slice(u),
            U0Sampler::Gaussian { mean, sd } => {
                for j in 0..mean.len() {
                    let z: f64 = StandardNormal.sample(rng);
                    out[j] = mean[j] + sd[j] * z;
                }
            }
            U0Sampler::Gamma { mean, var } => {
                for j in 0..mean.len() {
                    let shape = mean[j] * mean[j] / var[j];
                    let scale = var[j] / mean[j];
                    let g = Gamma::new(shape, scale).map_err(|_| Error::invalid("Gamma initial law out of range"))?;
                    out[j] = g.sample(rng);
                }
            }
        }
        Ok(())
    }
}

/// Gaussian law of the hidden coordinates after one scheme step from
/// `(v_prev, u_prev)`, conditioned on the next observation.
#[derive(Clone, Copy, Debug)]
pub struct ConditionalLaw {
    pub mean: Vector,
    pub cov: SymMatrix,
    pub chol: Cholesky,
    /// `log p(v_cur | v_prev, u_prev)` under the scheme.
    pub log_marginal_v: f64,
}

fn state(v: f64, u: &[f64]) -> Vector {
    let mut x = Vector::zeros(u.len() + 1);
    x[0] = v;
    x[1..].copy_from_slice(u);
    x
}

/// Schur-complement conditioning of the scheme Gaussian on `V_i = v_cur`.
pub fn conditional_law<M: Model + ?Sized>(
    model: &M,
    params: &ParamSet,
    v_prev: f64,
    v_cur: f64,
    u_prev: &[f64],
    delta: f64,
) -> Result<ConditionalLaw> {
    let x = state(v_prev, u_prev);
    let m = scheme_moments(model, &x, params, delta)?;
    let p = u_prev.len();
    let s_vv = m.cov.get(0, 0);
    if !(s_vv > 0.0) {
        return Err(Error::degenerate(&x));
    }
    let mu_v = v_prev + m.mean_increment[0];
    let innov = v_cur - mu_v;
    let mut mean = Vector::zeros(p);
    let mut cov = SymMatrix::zeros(p);
    for a in 0..p {
        let s_av = m.cov.get(a + 1, 0);
        mean[a] = u_prev[a] + m.mean_increment[a + 1] + s_av / s_vv * innov;
        for b in a..p {
            cov.set(a, b, m.cov.get(a + 1, b + 1) - s_av * m.cov.get(b + 1, 0) / s_vv);
        }
    }
    let (chol, _) = cov.cholesky_jittered().ok_or_else(|| Error::degenerate(&x))?;
    Ok(ConditionalLaw {
        mean,
        cov,
        chol,
        log_marginal_v: normal_log_density(v_cur, mu_v, s_vv),
    })
}

fn draw<R: Rng + ?Sized>(mean: &[f64], chol: &Cholesky, rng: &mut R) -> (Vector, f64) {
    let p = mean.len();
    let mut z = Vector::zeros(p);
    for zi in z.iter_mut() {
        *zi = StandardNormal.sample(rng);
    }
    let lz = chol.mul_lower(&z);
    let mut u = Vector::zeros(p);
    for j in 0..p {
        u[j] = mean[j] + lz[j];
    }
    let log_q = -0.5 * (p as f64 * (2.0 * core::f64::consts::PI).ln() + chol.log_det() + z.dot(&z));
    (u, log_q)
}

/// Draws `U_i` from the scheme Gaussian conditioned on `V_i = v_cur`;
/// returns the draw and its log proposal density.
pub fn propose_conditional<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    params: &ParamSet,
    v_prev: f64,
    v_cur: f64,
    u_prev: &[f64],
    delta: f64,
    rng: &mut R,
) -> Result<(Vector, f64)> {
    let law = conditional_law(model, params, v_prev, v_cur, u_prev, delta)?;
    Ok(draw(&law.mean, &law.chol, rng))
}

/// Marginal law of the hidden block of one scheme step.
fn transition_law<M: Model + ?Sized>(
    model: &M,
    params: &ParamSet,
    v_prev: f64,
    u_prev: &[f64],
    delta: f64,
) -> Result<(Vector, SymMatrix, Cholesky, crate::moments::SchemeMoments)> {
    let x = state(v_prev, u_prev);
    let m = scheme_moments(model, &x, params, delta)?;
    let p = u_prev.len();
    let mut mean = Vector::zeros(p);
    let mut cov = SymMatrix::zeros(p);
    for a in 0..p {
        mean[a] = u_prev[a] + m.mean_increment[a + 1];
        for b in a..p {
            cov.set(a, b, m.cov.get(a + 1, b + 1));
        }
    }
    let (chol, _) = cov.cholesky_jittered().ok_or_else(|| Error::degenerate(&x))?;
    Ok((mean, cov, chol, m))
}

/// Draws `U_i` from the hidden marginal of the scheme Gaussian.
pub fn propose_transition<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    params: &ParamSet,
    v_prev: f64,
    u_prev: &[f64],
    delta: f64,
    rng: &mut R,
) -> Result<(Vector, f64)> {
    let (mean, _, chol, _) = transition_law(model, params, v_prev, u_prev, delta)?;
    Ok(draw(&mean, &chol, rng))
}

/// Literal importance weight `log p(V_i, U_i | x_prev) - log q(U_i)` of a
/// transition draw.
fn transition_weight<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    params: &ParamSet,
    v_prev: f64,
    v_cur: f64,
    u_prev: &[f64],
    delta: f64,
    rng: &mut R,
) -> Result<(Vector, f64)> {
    let (mean, _, chol_u, m) = transition_law(model, params, v_prev, u_prev, delta)?;
    let (u, log_q) = draw(&mean, &chol_u, rng);
    let n = u.len() + 1;
    let mut diff = Vector::zeros(n);
    diff[0] = v_cur - v_prev - m.mean_increment[0];
    for j in 0..u.len() {
        diff[j + 1] = u[j] - u_prev[j] - m.mean_increment[j + 1];
    }
    let joint = crate::linalg::gaussian_log_density(&m.chol, &diff);
    Ok((u, joint - log_q))
}

/// Indices drawn i.i.d. from the categorical law `weights`.
pub fn resample_multinomial<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<Vec<usize>> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("resampling weights must be normalized"));
    }
    let k = weights.len();
    let mut cdf = Vec::with_capacity(k);
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let r: f64 = rng.random::<f64>() * acc;
        let idx = cdf.partition_point(|&c| c <= r);
        // a zero-weight tail can leave r == acc only through rounding
        let mut idx = idx.min(k - 1);
        while weights[idx] == 0.0 && idx > 0 {
            idx -= 1;
        }
        out.push(idx);
    }
    Ok(out)
}

/// One filtering pass: particles, normalized weights, ancestry and
/// likelihood increments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSystem {
    k: usize,
    p: usize,
    /// `(i * K + k) * p + j`.
    particles: Vec<f64>,
    /// `i * K + k`.
    weights: Vec<f64>,
    /// `(i - 1) * K + k` is the parent at time `i - 1` of particle `k` at
    /// time `i`.
    ancestors: Vec<usize>,
    pub log_likelihood_increments: Vec<f64>,
    /// Effective sample size of the normalized weights at each time.
    pub ess: Vec<f64>,
}

impl ParticleSystem {
    pub fn num_particles(&self) -> usize {
        self.k
    }

    pub fn hidden_dim(&self) -> usize {
        self.p
    }

    /// Number of transitions `n`.
    pub fn n(&self) -> usize {
        self.log_likelihood_increments.len()
    }

    pub fn particle(&self, i: usize, k: usize) -> &[f64] {
        let start = (i * self.k + k) * self.p;
        &self.particles[start..start + self.p]
    }

    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i * self.k..(i + 1) * self.k]
    }

    pub fn ancestors(&self, i: usize) -> &[usize] {
        &self.ancestors[(i - 1) * self.k..i * self.k]
    }

    /// `log p_hat(V_1..V_n | V_0)`.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood_increments.iter().sum()
    }

    /// Weighted mean of hidden coordinate `j` at each time.
    pub fn filtered_mean(&self, j: usize) -> Vec<f64> {
        (0..=self.n())
            .map(|i| (0..self.k).map(|k| self.weights(i)[k] * self.particle(i, k)[j]).sum())
            .collect()
    }

    /// Weighted standard deviation of hidden coordinate `j` at each time.
    pub fn filtered_sd(&self, j: usize) -> Vec<f64> {
        let means = self.filtered_mean(j);
        (0..=self.n())
            .map(|i| {
                let var: f64 =
                    (0..self.k).map(|k| self.weights(i)[k] * (self.particle(i, k)[j] - means[i]).powi(2)).sum();
                var.max(0.0).sqrt()
            })
            .collect()
    }
}

/// Normalizes log-weights in place into probabilities; returns
/// `log mean exp(logw)`, or `None` when nothing is finite.
fn normalize(logw: &[f64], out: &mut [f64]) -> Option<f64> {
    let max = logw.iter().copied().filter(|w| w.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut total = 0.0;
    for (o, &w) in out.iter_mut().zip(logw) {
        *o = if w.is_finite() { (w - max).exp() } else { 0.0 };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    Some(max + (total / logw.len() as f64).ln())
}

fn ess(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|x| x * x).sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterOptions {
    pub particles: usize,
    pub proposal: ProposalKind,
    pub seed: u64,
}

/// Runs the filter over `v_obs` (length `n + 1`).
pub fn smc_filter<M: Model + ?Sized>(
    model: &M,
    params: &ParamSet,
    v_obs: &[f64],
    u0: &U0Sampler,
    opts: &FilterOptions,
    delta: f64,
) -> Result<ParticleSystem> {
    let mut rng = from_seed(opts.seed);
    smc_filter_with(model, params, v_obs, u0, opts.particles, opts.proposal, delta, &mut rng)
}

#[allow(clippy::too_many_arguments)]
pub fn smc_filter_with<M: Model + ?Sized>(
    model: &M,
    params: &ParamSet,
    v_obs: &[f64],
    u0: &U0Sampler,
    k: usize,
    proposal: ProposalKind,
    delta: f64,
    rng: &mut SimRng,
) -> Result<ParticleSystem> {
    if k < 1 {
        return Err(Error::invalid("the filter needs at least one particle"));
    }
    if v_obs.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: v_obs.len(),
        });
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("delta must be positive"));
    }
    model.validate(params)?;
    let p = model.hidden_dim();
    if u0.dim() != p {
        return Err(Error::invalid("initial law has the wrong dimension"));
    }
    let floors: Vec<f64> = (0..p)
        .map(|j| {
            let lb = model.hidden_lower_bound(j);
            if lb.is_finite() {
                lb + HIDDEN_FLOOR
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let n = v_obs.len() - 1;
    let mut ps = ParticleSystem {
        k,
        p,
        particles: vec![0.0; (n + 1) * k * p],
        weights: vec![0.0; (n + 1) * k],
        ancestors: vec![0; n * k],
        log_likelihood_increments: Vec::with_capacity(n),
        ess: Vec::with_capacity(n + 1),
    };
    for kk in 0..k {
        u0.sample(rng, &mut ps.particles[kk * p..(kk + 1) * p])?;
    }
    ps.weights[..k].fill(1.0 / k as f64);
    ps.ess.push(k as f64);

    let mut logw = vec![0.0; k];
    let mut prev = [0.0; MAX_HIDDEN];
    for i in 1..=n {
        let idx = resample_multinomial(&ps.weights[(i - 1) * k..i * k], rng)?;
        for (kk, &a) in idx.iter().enumerate() {
            ps.ancestors[(i - 1) * k + kk] = a;
            let src = ((i - 1) * k + a) * p;
            prev[..p].copy_from_slice(&ps.particles[src..src + p]);
            let step = match proposal {
                ProposalKind::Conditional => {
                    conditional_law(model, params, v_obs[i - 1], v_obs[i], &prev[..p], delta).map(|law| {
                        let (u, _) = draw(&law.mean, &law.chol, rng);
                        (u, law.log_marginal_v)
                    })
                }
                ProposalKind::Transition => {
                    transition_weight(model, params, v_obs[i - 1], v_obs[i], &prev[..p], delta, rng)
                }
            };
            let dst = (i * k + kk) * p;
            match step {
                Ok((u, w)) => {
                    for j in 0..p {
                        ps.particles[dst + j] = u[j].max(floors[j]);
                    }
                    logw[kk] = w;
                }
                Err(Error::Degenerate { .. }) => {
                    ps.particles[dst..dst + p].copy_from_slice(&prev[..p]);
                    logw[kk] = f64::NEG_INFINITY;
                }
                Err(e) => return Err(e),
            }
        }
        let inc = normalize(&logw, &mut ps.weights[i * k..(i + 1) * k]).ok_or(Error::FilterCollapse { time: i })?;
        ps.log_likelihood_increments.push(inc);
        ps.ess.push(ess(&ps.weights[i * k..(i + 1) * k]));
    }
    Ok(ps)
}

/// Picks a terminal particle by weight and traces its ancestry back to
/// time 0; returns one vector per hidden coordinate.
pub fn sample_smoothing_path<R: Rng + ?Sized>(ps: &ParticleSystem, rng: &mut R) -> Vec<Vec<f64>> {
    let n = ps.n();
    let mut path = vec![vec![0.0; n + 1]; ps.p];
    // weights are normalized by construction
    let mut k = resample_multinomial(ps.weights(n), rng).map(|v| v[0]).unwrap_or(0);
    for i in (0..=n).rev() {
        for (j, row) in path.iter_mut().enumerate() {
            row[i] = ps.particle(i, k)[j];
        }
        if i > 0 {
            k = ps.ancestors(i)[k];
        }
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Fhn, Ho, Sie, StateVector};
    use crate::rng::from_seed;
    use crate::simulate::simulate_exact_ho;

    #[test]
    fn zero_innovation_keeps_mean() {
        let p = Ho::params(4.0, 0.5, 0.5);
        let x = StateVector::new(0.3, &[-0.4]);
        let m = scheme_moments(&Ho, &x, &p, 0.02).unwrap();
        let law = conditional_law(&Ho, &p, 0.3, 0.3 + m.mean_increment[0], &[-0.4], 0.02).unwrap();
        assert!((law.mean[0] - (-0.4 + m.mean_increment[1])).abs() < 1e-15);
    }

    #[test]
    fn ho_schur_complement_value() {
        let p = Ho::params(4.0, 0.5, 0.5);
        let law = conditional_law(&Ho, &p, 0.0, 0.0, &[0.0], 0.02).unwrap();
        // the Schur complement collapses to sigma^2 Delta / 4; the rounded
        // hand value 1.2503e-3 agrees to its printed precision
        assert!((law.cov.get(0, 0) - 0.25 * 0.02 / 4.0).abs() < 1e-15);
        assert!((law.cov.get(0, 0) - 1.2503e-3).abs() < 5e-7);
        let (_, cov, _, _) = transition_law(&Ho, &p, 0.0, &[0.0], 0.02).unwrap();
        assert!((cov.get(0, 0) - 4.95017e-3).abs() < 1e-8);
        assert!(law.cov.get(0, 0) < cov.get(0, 0));
    }

    #[test]
    fn transition_log_q_at_mean() {
        let p = Ho::params(4.0, 0.5, 0.5);
        let (mean, cov, chol, _) = transition_law(&Ho, &p, 0.1, &[0.2], 0.02).unwrap();
        let want = -0.5 * (2.0 * core::f64::consts::PI * cov.get(0, 0)).ln();
        assert!((crate::linalg::gaussian_log_density(&chol, &[0.0]) - want).abs() < 1e-12);
        assert!(mean[0].is_finite());
    }

    #[test]
    fn resampling_edge_cases() {
        let mut rng = from_seed(1);
        let mut w = vec![0.0; 10];
        w[0] = 1.0;
        assert!(resample_multinomial(&w, &mut rng).unwrap().iter().all(|&i| i == 0));
        assert!(matches!(resample_multinomial(&[0.5, 0.6], &mut rng), Err(Error::InvalidArgument(_))));
        assert!(resample_multinomial(&[0.5, f64::NAN], &mut rng).is_err());
    }

    #[test]
    fn oscillator_without_damping_uses_increments() {
        let v = [0.0, 0.02, 0.06, 0.08];
        let u0 = U0Sampler::for_model(&ModelSpec::Ho(Ho), &Ho::params(4.0, -0.1, 0.5), &v, 0.02).unwrap();
        match u0 {
            U0Sampler::Gaussian { mean, sd } => {
                assert!((mean[0] - 1.0).abs() < 1e-12);
                assert!((sd[0] - 2.0f64.sqrt() / 3.0).abs() < 1e-12, "{sd:?}");
            }
            other => panic!("{other:?}"),
        }
        assert!(U0Sampler::for_model(&ModelSpec::Ho(Ho), &Ho::params(4.0, 0.0, 0.5), &[1.0; 5], 0.02).is_err());
    }

    #[test]
    fn single_particle_has_unit_weights() {
        let truth = Ho::params(4.0, 0.5, 0.5);
        let data = simulate_exact_ho(&truth, &StateVector::new(0.0, &[0.0]), 0.02, 50, 2).unwrap();
        let u0 = U0Sampler::for_model(&ModelSpec::Ho(Ho), &truth, &data.v(), 0.02).unwrap();
        let opts = FilterOptions {
            particles: 1,
            proposal: ProposalKind::Conditional,
            seed: 3,
        };
        let ps = smc_filter(&Ho, &truth, &data.v(), &u0, &opts, 0.02).unwrap();
        for i in 0..=50 {
            assert_eq!(ps.weights(i), &[1.0]);
        }
        let path = sample_smoothing_path(&ps, &mut from_seed(4));
        assert_eq!(path[0].len(), 51);
        for i in 0..=50 {
            assert_eq!(path[0][i], ps.particle(i, 0)[0]);
        }
    }

    #[test]
    fn fhn_point_mass_inverts_smooth_equation() {
        let fhn = Fhn { s: 0.25 };
        let p = Fhn::params(0.1, 1.5, 0.8, 0.3);
        let u0 = U0Sampler::for_model(&ModelSpec::Fhn(fhn), &p, &[0.5, 0.52], 0.02).unwrap();
        let want = 0.5 - 0.125 + 0.25 - 0.1 * 0.02 / 0.02;
        match u0 {
            U0Sampler::PointMass(u) => assert!((u[0] - want).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sie_initial_law_is_stationary_gamma() {
        let p = Sie::params([0.5, 1.0], [17.8, 9.4], [0.1, 0.1]);
        let u0 = U0Sampler::for_model(&ModelSpec::Sie(Sie::default()), &p, &[-60.0, -60.0], 0.02).unwrap();
        let mut rng = from_seed(5);
        let mut out = [0.0; 2];
        let mut s = [0.0; 2];
        for _ in 0..4000 {
            u0.sample(&mut rng, &mut out).unwrap();
            assert!(out[0] > 0.0 && out[1] > 0.0);
            s[0] += out[0] / 4000.0;
            s[1] += out[1] / 4000.0;
        }
        assert!((s[0] - 17.8).abs() < 0.02 && (s[1] - 9.4).abs() < 0.02, "{s:?}");
    }
}
