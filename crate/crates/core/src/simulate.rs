//! Synthetic data: exact oscillator sampling, fine-grid Euler-Maruyama with
//! subsampling, and direct sampling of the 1.5 scheme.

#[allow(unused_imports)] // float methods are inherent once std is linked
use num_traits::Float;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{Vector, MAX_DIM, MAX_HIDDEN};
use crate::model::{Model, ParamSet, StateVector, Trajectory};
use crate::moments::{exact_ho_moments, generic_increment};
use crate::rng::from_seed;

/// Floor applied to rough coordinates with a finite lower bound.
pub const HIDDEN_FLOOR: f64 = 1e-8;

/// Any coordinate beyond this magnitude aborts a simulation.
pub const EXPLOSION_BOUND: f64 = 1e8;

/// Correlated Gaussian pair of one scheme step, per rough coordinate:
/// `Var(eta) = Delta`, `Var(xi) = Delta^3 / 3`, `Cov = Delta^2 / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoisePair {
    pub eta: Vector,
    pub xi: Vector,
}

pub fn draw_noise_pair<R: Rng + ?Sized>(delta: f64, p: usize, rng: &mut R) -> NoisePair {
    let mut eta = Vector::zeros(p);
    let mut xi = Vector::zeros(p);
    // Cholesky of [[D, D^2/2], [D^2/2, D^3/3]]
    let l11 = delta.sqrt();
    let l21 = delta * l11 / 2.0;
    let l22 = (delta * delta * delta / 12.0).sqrt();
    for j in 0..p {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        eta[j] = l11 * z1;
        xi[j] = l21 * z1 + l22 * z2;
    }
    NoisePair { eta, xi }
}

fn guard(x: &[f64], step: usize) -> Result<()> {
    for (coord, &value) in x.iter().enumerate() {
        if !value.is_finite() || value.abs() > EXPLOSION_BOUND {
            return Err(Error::Explosion { step, coord, value });
        }
    }
    Ok(())
}

fn apply_floor<M: Model + ?Sized>(model: &M, x: &mut [f64]) {
    for j in 0..model.hidden_dim() {
        let lb = model.hidden_lower_bound(j);
        if lb.is_finite() && x[j + 1] < lb + HIDDEN_FLOOR {
            x[j + 1] = lb + HIDDEN_FLOOR;
        }
    }
}

/// Exact sampling of the harmonic oscillator; `n` transitions.
pub fn simulate_exact_ho(
    params: &ParamSet,
    x0: &StateVector,
    delta: f64,
    n: usize,
    seed: u64,
) -> Result<Trajectory> {
    crate::model::Ho.validate(params)?;
    if !(params.phi[0] > 0.0 && params.phi[1] > 0.0) {
        return Err(Error::invalid("exact sampling needs D > 0 and gamma > 0"));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("delta must be positive"));
    }
    let mut rng = from_seed(seed);
    // The transition is affine: mean = F x, covariance constant.
    let e0 = exact_ho_moments(params, &[1.0, 0.0], delta).mean;
    let e1 = exact_ho_moments(params, &[0.0, 1.0], delta).mean;
    let cov = exact_ho_moments(params, &[0.0, 0.0], delta).cov;
    let (chol, _) = cov
        .cholesky_jittered()
        .ok_or_else(|| Error::degenerate(x0))?;
    let mut states = Vec::with_capacity(n + 1);
    let mut x = [x0[0], x0[1]];
    states.push(*x0);
    for _ in 0..n {
        let z = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let noise = chol.mul_lower(&z);
        x = [
            e0[0] * x[0] + e1[0] * x[1] + noise[0],
            e0[1] * x[0] + e1[1] * x[1] + noise[1],
        ];
        states.push(StateVector::from_slice(&x));
    }
    Ok(Trajectory {
        t0: 0.0,
        dt: delta,
        states,
        seed,
    })
}

/// Euler-Maruyama on a fine grid with noise on the rough coordinates only.
/// Coordinates with a finite lower bound are truncated at the floor before
/// drift and diffusion are evaluated.
pub fn simulate_euler_fine<M: Model + ?Sized>(
    model: &M,
    params: &ParamSet,
    x0: &StateVector,
    delta_fine: f64,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    model.validate(params)?;
    if !(delta_fine > 0.0) {
        return Err(Error::invalid("delta_fine must be positive"));
    }
    let mut rng = from_seed(seed);
    let p = model.hidden_dim();
    let sqrt_dt = delta_fine.sqrt();
    let mut x = *x0;
    apply_floor(model, &mut x);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x);
    let mut rough = [0.0; MAX_HIDDEN];
    let mut sig = [0.0; MAX_HIDDEN];
    for step in 0..steps {
        let a = model.smooth_drift(&x, params);
        model.rough_drift(&x, params, &mut rough[..p]);
        model.diffusion(&x, params, &mut sig[..p]);
        x[0] += delta_fine * a;
        for j in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            x[j + 1] += delta_fine * rough[j] + sig[j] * sqrt_dt * z;
        }
        apply_floor(model, &mut x);
        guard(&x, step + 1)?;
        states.push(x);
    }
    Ok(Trajectory {
        t0: 0.0,
        dt: delta_fine,
        states,
        seed,
    })
}

/// Keeps every `factor`-th state.
pub fn subsample(traj: &Trajectory, factor: usize) -> Result<Trajectory> {
    if factor == 0 {
        return Err(Error::invalid("subsampling factor must be at least 1"));
    }
    Ok(Trajectory {
        t0: traj.t0,
        dt: traj.dt * factor as f64,
        states: traj.states.iter().step_by(factor).copied().collect(),
        seed: traj.seed,
    })
}

/// Samples the 1.5 strong order scheme, including the terms driven by
/// derivatives of a state-dependent diffusion.
pub fn simulate_scheme15<M: Model + ?Sized>(
    model: &M,
    params: &ParamSet,
    x0: &StateVector,
    delta: f64,
    n: usize,
    seed: u64,
) -> Result<Trajectory> {
    model.validate(params)?;
    if !(delta > 0.0) {
        return Err(Error::invalid("delta must be positive"));
    }
    let mut rng = from_seed(seed);
    let mut x = *x0;
    let mut states = Vec::with_capacity(n + 1);
    states.push(x);
    for step in 0..n {
        let noise = draw_noise_pair(delta, model.hidden_dim(), &mut rng);
        let next = scheme15_step(model, params, &x, delta, &noise);
        x = StateVector::from_slice(&next);
        apply_floor(model, &mut x);
        guard(&x, step + 1)?;
        states.push(x);
    }
    Ok(Trajectory {
        t0: 0.0,
        dt: delta,
        states,
        seed,
    })
}

/// One scheme step from `x` driven by `noise`.
pub fn scheme15_step<M: Model + ?Sized>(
    model: &M,
    params: &ParamSet,
    x: &[f64],
    delta: f64,
    noise: &NoisePair,
) -> Vector {
    let p = model.hidden_dim();
    let n = p + 1;
    let inc = model
        .closed_form_increment(x, params, delta)
        .unwrap_or_else(|| generic_increment(model, x, params, delta));
    let mut grad = [0.0; MAX_DIM];
    model.smooth_drift_grad(x, params, &mut grad[..n]);
    let mut jac = [0.0; MAX_DIM * MAX_HIDDEN];
    model.rough_drift_jacobian(x, params, &mut jac[..p * n]);
    let mut rough = [0.0; MAX_HIDDEN];
    model.rough_drift(x, params, &mut rough[..p]);
    let mut sig = [0.0; MAX_HIDDEN];
    model.diffusion(x, params, &mut sig[..p]);
    let mut ds = [0.0; MAX_HIDDEN];
    model.diffusion_du(x, params, &mut ds[..p]);
    let mut dds = [0.0; MAX_HIDDEN];
    model.diffusion_du2(x, params, &mut dds[..p]);

    let (eta, xi) = (&noise.eta, &noise.xi);
    let mut out = Vector::zeros(n);
    out[0] = x[0] + inc[0] + (0..p).map(|k| grad[k + 1] * sig[k] * xi[k]).sum::<f64>();
    for j in 0..p {
        let coupling: f64 = (0..p).map(|k| jac[j * n + k + 1] * sig[k] * xi[k]).sum();
        let e = eta[j];
        let lag = delta * e - xi[j];
        let curv = sig[j] * sig[j] * dds[j];
        let extra = 0.5 * ds[j] * sig[j] * (e * e - delta)
            + ds[j] * rough[j] * lag
            + 0.5 * curv * lag
            + 0.5 * (ds[j] * ds[j] * sig[j] + curv) * (e * e / 3.0 - delta) * e;
        out[j + 1] = x[j + 1] + inc[j + 1] + sig[j] * e + coupling + extra;
    }
    out
}
