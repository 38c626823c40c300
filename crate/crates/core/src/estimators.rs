//! Complete-observation contrast estimators and the Euler least-squares
//! baseline.
//!
//! The smooth-coordinate contrast fits `psi` from the `V` residuals scaled
//! by `3 / Delta^3`; the rough-coordinate contrast fits `(phi, sigma)` from
//! the `U` residuals with variance simplified to `Delta Gamma Gamma^T`.

#[allow(unused_imports)] // float methods are inherent once std is linked
use num_traits::Float;
use alloc::string::String;
use alloc::vec::Vec;


use crate::error::{Error, Result};
use crate::linalg::{MAX_DIM, MAX_HIDDEN};
use crate::model::{Model, ParamLayout, ParamSet, Trajectory};
use crate::moments::generic_increment;
use crate::optim::{minimize, NelderMeadOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastOptions {
    /// Alternation rounds between the two contrasts.
    pub max_outer_iters: usize,
    /// Stop alternating once no parameter moves by more than this
    /// (relative to `max(1, |value|)`).
    pub simplex_tol: f64,
    pub init: ParamSet,
    /// When false, `psi` stays at its initial value.
    pub estimate_psi: bool,
    pub optimizer: NelderMeadOptions,
}

impl ContrastOptions {
    pub fn new(init: ParamSet) -> Self {
        ContrastOptions {
            max_outer_iters: 5,
            simplex_tol: 1e-6,
            init,
            estimate_psi: true,
            optimizer: NelderMeadOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationResult {
    pub model: &'static str,
    pub params: ParamSet,
    /// `NaN` when the contrast does not apply to the model.
    pub psi_contrast: f64,
    pub phi_sigma_contrast: f64,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    /// Free-form diagnostics (e.g. which fallback was used).
    pub note: Option<String>,
}

/// Quadratic and log-determinant parts of a contrast.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastParts {
    pub quadratic: f64,
    pub log_det: f64,
}

impl ContrastParts {
    pub fn total(&self) -> f64 {
        self.quadratic + self.log_det
    }
}

fn increment<M: Model + ?Sized>(model: &M, x: &[f64], p: &ParamSet, delta: f64) -> crate::linalg::Vector {
    model
        .closed_form_increment(x, p, delta)
        .unwrap_or_else(|| generic_increment(model, x, p, delta))
}

fn require_transitions(data: &Trajectory, needed: usize) -> Result<()> {
    if data.n() < needed {
        return Err(Error::InsufficientData {
            needed,
            got: data.n(),
        });
    }
    Ok(())
}

/// Smooth-coordinate contrast split into its two sums.
pub fn contrast_psi_parts<M: Model + ?Sized>(
    data: &Trajectory,
    model: &M,
    params: &ParamSet,
) -> Result<ContrastParts> {
    if model.layout().psi.is_empty() {
        return Err(Error::NotApplicable("the smooth drift has no unknown parameter"));
    }
    require_transitions(data, 1)?;
    let delta = data.dt;
    let p = model.hidden_dim();
    let mut grad = [0.0; MAX_DIM];
    let mut sig = [0.0; MAX_HIDDEN];
    let mut quadratic = 0.0;
    let mut log_det = 0.0;
    for w in data.states.windows(2) {
        let (x, y) = (&w[0], &w[1]);
        model.smooth_drift_grad(x, params, &mut grad[..=p]);
        model.diffusion(x, params, &mut sig[..p]);
        let scale: f64 = (0..p).map(|j| (grad[j + 1] * sig[j]).powi(2)).sum();
        if !(scale > 0.0) {
            return Err(Error::degenerate(x));
        }
        let r = y[0] - x[0] - increment(model, x, params, delta)[0];
        quadratic += r * r / scale;
        log_det += scale.ln();
    }
    Ok(ContrastParts {
        quadratic: 3.0 / (delta * delta * delta) * quadratic,
        log_det,
    })
}

pub fn contrast_psi<M: Model + ?Sized>(data: &Trajectory, model: &M, params: &ParamSet) -> Result<f64> {
    contrast_psi_parts(data, model, params).map(|c| c.total())
}

/// Rough-coordinate contrast split into its two sums.
pub fn contrast_phi_sigma_parts<M: Model + ?Sized>(
    data: &Trajectory,
    model: &M,
    params: &ParamSet,
) -> Result<ContrastParts> {
    require_transitions(data, 1)?;
    let delta = data.dt;
    let p = model.hidden_dim();
    let mut sig = [0.0; MAX_HIDDEN];
    let mut quadratic = 0.0;
    let mut log_det = 0.0;
    for w in data.states.windows(2) {
        let (x, y) = (&w[0], &w[1]);
        model.diffusion(x, params, &mut sig[..p]);
        let inc = increment(model, x, params, delta);
        for j in 0..p {
            let s2 = sig[j] * sig[j];
            if !(s2 > 0.0) {
                return Err(Error::degenerate(x));
            }
            let r = y[j + 1] - x[j + 1] - inc[j + 1];
            quadratic += r * r / (delta * s2);
            log_det += s2.ln();
        }
    }
    Ok(ContrastParts { quadratic, log_det })
}

pub fn contrast_phi_sigma<M: Model + ?Sized>(
    data: &Trajectory,
    model: &M,
    params: &ParamSet,
) -> Result<f64> {
    contrast_phi_sigma_parts(data, model, params).map(|c| c.total())
}

/// Maps a subset of the flat parameter vector to unconstrained
/// coordinates (log for positive entries).
#[derive(Clone, Debug)]
pub struct Reparam {
    indices: Vec<usize>,
    positive: Vec<bool>,
}

impl Reparam {
    pub fn new(layout: &ParamLayout, indices: Vec<usize>) -> Self {
        let positive = indices.iter().map(|&i| layout.positive[i]).collect();
        Reparam { indices, positive }
    }

    pub fn psi(layout: &ParamLayout) -> Self {
        Self::new(layout, (0..layout.psi.len()).collect())
    }

    pub fn phi_sigma(layout: &ParamLayout) -> Self {
        Self::new(layout, (layout.psi.len()..layout.len()).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn pack(&self, flat: &[f64]) -> Vec<f64> {
        self.indices
            .iter()
            .zip(&self.positive)
            .map(|(&i, &pos)| if pos { flat[i].ln() } else { flat[i] })
            .collect()
    }

    pub fn unpack_into(&self, z: &[f64], flat: &mut [f64]) {
        for ((&i, &pos), &zi) in self.indices.iter().zip(&self.positive).zip(z) {
            flat[i] = if pos { zi.exp() } else { zi };
        }
    }
}

/// Minimizes `objective` over the entries of `current` selected by
/// `reparam`, leaving the rest fixed. Returns (params, value, converged).
pub fn minimize_block<F>(
    layout: &ParamLayout,
    current: &ParamSet,
    reparam: &Reparam,
    opts: &NelderMeadOptions,
    mut objective: F,
) -> Result<(ParamSet, f64, bool)>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    let base = current.to_flat();
    let mut flat = base.clone();
    let z0 = reparam.pack(&base);
    let mut eval = |z: &[f64]| {
        reparam.unpack_into(z, &mut flat);
        match ParamSet::from_flat(layout, &flat) {
            Ok(p) => objective(&p).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        }
    };
    let m = minimize(&mut eval, &z0, opts)?;
    let mut out = base;
    reparam.unpack_into(&m.x, &mut out);
    Ok((ParamSet::from_flat(layout, &out)?, m.value, m.converged))
}

fn max_rel_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Alternating minimization of the two contrasts.
pub fn estimate_complete<M: Model + ?Sized>(
    data: &Trajectory,
    model: &M,
    options: &ContrastOptions,
) -> Result<EstimationResult> {
    require_transitions(data, 2)?;
    if options.max_outer_iters == 0 || !(options.simplex_tol > 0.0) {
        return Err(Error::invalid("contrast options out of range"));
    }
    model.validate(&options.init)?;
    for x in &data.states {
        model.in_domain(x)?;
    }
    let layout = model.layout();
    let psi_block = Reparam::psi(&layout);
    let rough_block = Reparam::phi_sigma(&layout);
    let alternate = !psi_block.is_empty() && options.estimate_psi;

    let mut theta = options.init.clone();
    let mut psi_value = f64::NAN;
    let mut rough_value;
    let mut iterations = 0;
    let mut converged;
    loop {
        iterations += 1;
        let before = theta.to_flat();
        let mut round_ok = true;
        if alternate {
            let (t, v, ok) = minimize_block(&layout, &theta, &psi_block, &options.optimizer, |p| {
                contrast_psi(data, model, p)
            })?;
            theta = t;
            psi_value = v;
            round_ok &= ok;
        }
        let (t, v, ok) = minimize_block(&layout, &theta, &rough_block, &options.optimizer, |p| {
            contrast_phi_sigma(data, model, p)
        })?;
        theta = t;
        rough_value = v;
        round_ok &= ok;
        converged = round_ok;

        if !alternate {
            break;
        }
        let settled = max_rel_change(&theta.to_flat(), &before) < options.simplex_tol;
        if settled || iterations >= options.max_outer_iters {
            converged &= settled;
            break;
        }
    }
    if !layout.psi.is_empty() && !alternate {
        psi_value = contrast_psi(data, model, &theta).unwrap_or(f64::NAN);
    }
    Ok(EstimationResult {
        model: model.id(),
        params: theta,
        psi_contrast: psi_value,
        phi_sigma_contrast: rough_value,
        iterations,
        converged,
        seed: data.seed,
        note: None,
    })
}

/// Solves the 2x2 normal equations `[a b; b c] x = [r s]`.
fn solve2(a: f64, b: f64, c: f64, r: f64, s: f64) -> Result<(f64, f64)> {
    let det = a * c - b * b;
    if !(det.abs() > 1e-14 * (a.abs() * c.abs()).max(1e-300)) {
        return Err(Error::Optimizer("singular least-squares system".into()));
    }
    Ok(((c * r - b * s) / det, (a * s - b * r) / det))
}

/// Explicit estimators of the Euler pseudo-likelihood on the rough
/// equation.
///
/// Harmonic oscillator: `(U_{i+1} - U_i) / Delta` regressed on
/// `(-V_i, -U_i)` gives `(D, gamma)`, and `sigma^2 = RSS / (n Delta)` where
/// `RSS` is the residual sum of squares of `U_{i+1} - U_i - Delta A(X_i)`.
///
/// FitzHugh-Nagumo (`epsilon` held at its initial value):
/// `(U_{i+1} - U_i) / Delta + U_i` regressed on `(V_i, 1)` gives
/// `(gamma, alpha)`, with `sigma^2` as above.
pub fn euler_contrast_baseline<M: Model + ?Sized>(
    data: &Trajectory,
    model: &M,
    options: &ContrastOptions,
) -> Result<EstimationResult> {
    require_transitions(data, 2)?;
    let delta = data.dt;
    let n = data.n() as f64;
    let (mut sxx, mut sxz, mut szz, mut sxy, mut szy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let regressors = |x: &[f64], y: &[f64]| -> Option<(f64, f64, f64)> {
        let slope = (y[1] - x[1]) / delta;
        match model.id() {
            "ho" => Some((-x[0], -x[1], slope)),
            "fhn" => Some((x[0], 1.0, slope + x[1])),
            _ => None,
        }
    };
    for w in data.states.windows(2) {
        let (a, b, t) = regressors(&w[0], &w[1])
            .ok_or(Error::NotApplicable("Euler baseline needs a drift affine in the parameters"))?;
        sxx += a * a;
        sxz += a * b;
        szz += b * b;
        sxy += a * t;
        szy += b * t;
    }
    let (c0, c1) = solve2(sxx, sxz, szz, sxy, szy)?;
    let mut params = options.init.clone();
    params.phi[0] = c0;
    params.phi[1] = c1;
    params.sigma[0] = 1.0;
    let mut rss = 0.0;
    let mut drift = [0.0; MAX_HIDDEN];
    for w in data.states.windows(2) {
        model.rough_drift(&w[0], &params, &mut drift[..1]);
        let r = w[1][1] - w[0][1] - delta * drift[0];
        rss += r * r;
    }
    params.sigma[0] = (rss / (n * delta)).sqrt();
    Ok(EstimationResult {
        model: model.id(),
        phi_sigma_contrast: contrast_phi_sigma(data, model, &params).unwrap_or(f64::NAN),
        psi_contrast: f64::NAN,
        params,
        iterations: 1,
        converged: true,
        seed: data.seed,
        note: None,
    })
}
