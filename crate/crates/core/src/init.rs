//! Starting values computed from the observed coordinate alone.
//!
//! The oscillator and FitzHugh-Nagumo inits invert the smooth equation to
//! get a proxy hidden path from increments of `V`, fit the complete
//! contrast on `(V, proxy)`, and inflate the noise level by `sqrt(3/2)`:
//! a proxy built from increments is a time average of `U`, whose
//! increments carry two thirds of the variance of the true ones.

#[allow(unused_imports)] // float methods are inherent once std is linked
use num_traits::Float;
use alloc::string::String;
use alloc::vec::Vec;


use crate::error::{Error, Result};
use crate::estimators::{estimate_complete, euler_contrast_baseline, ContrastOptions};
use crate::model::{Fhn, Ho, Model, ParamSet, Sie, Trajectory};

/// Inflation applied to the noise level fitted on the proxy path.
pub const PROXY_SIGMA_CORRECTION: f64 = 1.224_744_871_391_589; // sqrt(3/2)

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMethod {
    HoIncrements,
    FhnIncrements,
    SieFixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitReport {
    pub params0: ParamSet,
    pub method: InitMethod,
    pub proxy_path: Option<Vec<f64>>,
    /// Noise level fitted on the proxy before the correction.
    pub raw_sigma: Option<f64>,
    /// Set when the contrast fit was abandoned for moment guesses.
    pub fallback: Option<String>,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

fn check_len(v: &[f64], delta: f64) -> Result<()> {
    if v.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: v.len(),
        });
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("delta must be positive"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { coord: 0 });
    }
    Ok(())
}

/// `(V_{i+1} - V_i) / Delta` for `i < n`.
pub fn ho_proxy(v: &[f64], delta: f64) -> Vec<f64> {
    v.windows(2).map(|w| (w[1] - w[0]) / delta).collect()
}

/// `V_i - V_i^3 + s - eps0 (V_{i+1} - V_i) / Delta` for `i < n`.
pub fn fhn_proxy(v: &[f64], delta: f64, s: f64, eps0: f64) -> Vec<f64> {
    v.windows(2).map(|w| w[0] - w[0].powi(3) + s - eps0 * (w[1] - w[0]) / delta).collect()
}

fn usable(p: &ParamSet, model: &dyn Model) -> bool {
    model.validate(p).is_ok() && p.to_flat().iter().all(|x| x.is_finite()) && p.sigma.iter().all(|&s| s > 1e-10)
}

pub fn init_ho(v_obs: &[f64], delta: f64) -> Result<InitReport> {
    check_len(v_obs, delta)?;
    let proxy = ho_proxy(v_obs, delta);
    let n = proxy.len();
    let (_, var_v) = mean_var(&v_obs[..n]);
    let (_, var_u) = mean_var(&proxy);

    // stationary oscillator: var(U) = D var(V), sigma^2 = 2 gamma var(U)
    let d_guess = if var_v > 0.0 && var_u > 0.0 { var_u / var_v } else { 1.0 };
    let gamma_guess = 1.0;
    let sigma_guess = if var_u > 0.0 { (2.0 * gamma_guess * var_u).sqrt() } else { 1.0 };
    let guess = Ho::params(d_guess, gamma_guess, sigma_guess);

    let mut report = InitReport {
        params0: guess.clone(),
        method: InitMethod::HoIncrements,
        proxy_path: Some(proxy.clone()),
        raw_sigma: None,
        fallback: None,
    };
    if !(var_u > 1e-300 && var_v > 1e-300) {
        report.fallback = Some("observed path has no variation".into());
        return Ok(report);
    }
    let data = Trajectory::from_parts(0.0, delta, &v_obs[..n], &[proxy], 0)?;
    match estimate_complete(&data, &Ho, &ContrastOptions::new(guess)) {
        Ok(r) if usable(&r.params, &Ho) => {
            let raw = r.params.sigma[0];
            let mut p = r.params;
            p.sigma[0] = raw * PROXY_SIGMA_CORRECTION;
            report.params0 = p;
            report.raw_sigma = Some(raw);
        }
        Ok(_) => report.fallback = Some("contrast fit left the parameter domain".into()),
        Err(e) => report.fallback = Some(alloc::format!("contrast fit failed: {e}")),
    }
    Ok(report)
}

/// `eps0` is returned unchanged; `(gamma, alpha, sigma)` are fitted on the
/// proxy path starting from the Euler least-squares solution.
pub fn init_fhn(model: &Fhn, v_obs: &[f64], delta: f64, eps0: f64) -> Result<InitReport> {
    if !(eps0 > 0.0) || !eps0.is_finite() {
        return Err(Error::invalid("eps0 must be positive"));
    }
    check_len(v_obs, delta)?;
    let proxy = fhn_proxy(v_obs, delta, model.s, eps0);
    let n = proxy.len();
    let data = Trajectory::from_parts(0.0, delta, &v_obs[..n], &[proxy.clone()], 0)?;
    let default = Fhn::params(eps0, 1.0, 0.0, 1.0);
    let mut report = InitReport {
        params0: default.clone(),
        method: InitMethod::FhnIncrements,
        proxy_path: Some(proxy),
        raw_sigma: None,
        fallback: None,
    };
    let start = match euler_contrast_baseline(&data, model, &ContrastOptions::new(default.clone())) {
        Ok(r) if usable(&r.params, model) => r.params,
        _ => {
            report.fallback = Some("least-squares start failed".into());
            return Ok(report);
        }
    };
    let mut opts = ContrastOptions::new(start.clone());
    opts.estimate_psi = false;
    match estimate_complete(&data, model, &opts) {
        Ok(r) if usable(&r.params, model) => {
            let raw = r.params.sigma[0];
            let mut p = r.params;
            p.sigma[0] = raw * PROXY_SIGMA_CORRECTION;
            p.psi[0] = eps0;
            report.params0 = p;
            report.raw_sigma = Some(raw);
        }
        _ => {
            report.fallback = Some("contrast fit failed; using least squares".into());
            report.params0 = start;
        }
    }
    Ok(report)
}

/// Time constants 1, mean conductances 10, noise levels 0.1.
pub fn init_sie() -> InitReport {
    InitReport {
        params0: Sie::params([1.0, 1.0], [10.0, 10.0], [0.1, 0.1]),
        method: InitMethod::SieFixed,
        proxy_path: None,
        raw_sigma: None,
        fallback: None,
    }
}

/// Table-style fixed starting values for the complete-observation
/// contrasts, independent of the data.
pub fn fixed_start(model_id: &str) -> Result<ParamSet> {
    match model_id {
        "ho" => Ok(Ho::params(1.0, 3.0, 1.0)),
        "fhn" => Ok(Fhn::params(0.12, 1.0, 0.5, 0.5)),
        "sie" => Ok(init_sie().params0),
        _ => Err(Error::invalid("unknown model id")),
    }
}
