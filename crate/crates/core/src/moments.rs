//! Gaussian pseudo-transition of the 1.5 scheme and the exact harmonic
//! oscillator transition.

#[allow(unused_imports)] // float methods are inherent once std is linked
use num_traits::Float;
use alloc::vec::Vec;


use crate::error::{Error, Result};
use crate::linalg::{gaussian_log_density, Cholesky, SymMatrix, Vector, MAX_DIM, MAX_HIDDEN};
use crate::model::{Model, ParamSet};

/// Mean increment `Delta B(x)` and covariance `Sigma(x)` of one scheme step.
#[derive(Clone, Copy, Debug)]
pub struct SchemeMoments {
    pub mean_increment: Vector,
    pub cov: SymMatrix,
    /// Factor of `cov` (after symmetrization and at most one jitter).
    pub chol: Cholesky,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianMoments {
    pub mean: Vector,
    pub cov: SymMatrix,
}

/// `Delta b + Delta^2/2 (d_x b) b + Delta^2/4 sum_k sigma_k^2 d^2 b / d u_k^2`
/// from the model's partial derivatives.
pub fn generic_increment<M: Model + ?Sized>(
    model: &M,
    x: &[f64],
    params: &ParamSet,
    delta: f64,
) -> Vector {
    let p = model.hidden_dim();
    let n = p + 1;
    let mut b = [0.0; MAX_DIM];
    b[0] = model.smooth_drift(x, params);
    model.rough_drift(x, params, &mut b[1..n]);
    let mut jac = [0.0; MAX_DIM * MAX_DIM];
    model.smooth_drift_grad(x, params, &mut jac[..n]);
    model.rough_drift_jacobian(x, params, &mut jac[n..n * n]);
    let mut second = [0.0; MAX_DIM * MAX_HIDDEN];
    model.drift_u_second(x, params, &mut second[..n * p]);
    let mut sig = [0.0; MAX_HIDDEN];
    model.diffusion(x, params, &mut sig[..p]);

    let mut out = Vector::zeros(n);
    for i in 0..n {
        let transport: f64 = (0..n).map(|k| jac[i * n + k] * b[k]).sum();
        let curvature: f64 = (0..p).map(|k| sig[k] * sig[k] * second[i * p + k]).sum();
        out[i] = delta * b[i] + delta * delta / 2.0 * transport + delta * delta / 4.0 * curvature;
    }
    out
}

/// Leading-order block covariance built from `d_u a` and `Gamma`.
pub fn generic_cov<M: Model + ?Sized>(
    model: &M,
    x: &[f64],
    params: &ParamSet,
    delta: f64,
) -> SymMatrix {
    let p = model.hidden_dim();
    let mut grad = [0.0; MAX_DIM];
    model.smooth_drift_grad(x, params, &mut grad[..=p]);
    let mut sig = [0.0; MAX_HIDDEN];
    model.diffusion(x, params, &mut sig[..p]);
    let mut m = SymMatrix::zeros(p + 1);
    let mut vv = 0.0;
    for j in 0..p {
        let s2 = sig[j] * sig[j];
        let du = grad[j + 1];
        vv += du * du * s2;
        m.set(0, j + 1, du * s2 * delta * delta / 2.0);
        m.set(j + 1, j + 1, s2 * delta);
    }
    m.set(0, 0, vv * delta * delta * delta / 3.0);
    m
}

/// Scheme moments at `x`, preferring the model's closed forms.
pub fn scheme_moments<M: Model + ?Sized>(
    model: &M,
    x: &[f64],
    params: &ParamSet,
    delta: f64,
) -> Result<SchemeMoments> {
    if !(delta > 0.0) {
        return Err(Error::invalid("delta must be positive"));
    }
    let mean_increment = model
        .closed_form_increment(x, params, delta)
        .unwrap_or_else(|| generic_increment(model, x, params, delta));
    let cov = model
        .closed_form_cov(x, params, delta)
        .unwrap_or_else(|| generic_cov(model, x, params, delta))
        .symmetrized();
    if !cov.is_finite() || mean_increment.iter().any(|v| !v.is_finite()) {
        return Err(Error::degenerate(x));
    }
    let (chol, _) = cov.cholesky_jittered().ok_or_else(|| Error::degenerate(x))?;
    Ok(SchemeMoments {
        mean_increment,
        cov,
        chol,
    })
}

/// Log-density of `to` under `N(from + Delta B(from), Sigma(from))`.
pub fn log_density_scheme<M: Model + ?Sized>(
    model: &M,
    from: &[f64],
    to: &[f64],
    params: &ParamSet,
    delta: f64,
) -> Result<f64> {
    let m = scheme_moments(model, from, params, delta)?;
    let mut diff = Vector::zeros(from.len());
    for i in 0..from.len() {
        diff[i] = to[i] - from[i] - m.mean_increment[i];
    }
    Ok(gaussian_log_density(&m.chol, &diff))
}

/// Hyperbolic (or trigonometric) building blocks of `exp(t M)` for the
/// oscillator matrix `M = [[0, 1], [-D, -gamma]]`:
/// `exp(t M) = exp(-gamma t / 2) (c I + s (M + gamma / 2 I))`.
fn oscillator_cs(d2: f64, t: f64) -> (f64, f64) {
    // d2 = d^2 = (gamma^2 - 4 D) / 4
    let mag = d2.abs().sqrt();
    if mag * t < 1e-6 {
        (1.0 + d2 * t * t / 2.0, t * (1.0 + d2 * t * t / 6.0))
    } else if d2 > 0.0 {
        ((mag * t).cosh(), (mag * t).sinh() / mag)
    } else {
        ((mag * t).cos(), (mag * t).sin() / mag)
    }
}

fn oscillator_propagator(d: f64, gamma: f64, t: f64) -> [[f64; 2]; 2] {
    let d2 = (gamma * gamma - 4.0 * d) / 4.0;
    let (c, s) = oscillator_cs(d2, t);
    let e = (-gamma * t / 2.0).exp();
    [
        [e * (c + gamma / 2.0 * s), e * s],
        [-e * d * s, e * (c - gamma / 2.0 * s)],
    ]
}

/// Exact conditional law of the harmonic oscillator after `delta`.
pub fn exact_ho_moments(params: &ParamSet, x: &[f64], delta: f64) -> GaussianMoments {
    let (dd, g, s) = (params.phi[0], params.phi[1], params.sigma[0]);
    if delta == 0.0 {
        return GaussianMoments {
            mean: Vector::from_slice(&x[..2]),
            cov: SymMatrix::zeros(2),
        };
    }
    let f = oscillator_propagator(dd, g, delta);
    let mean = Vector::from_slice(&[
        f[0][0] * x[0] + f[0][1] * x[1],
        f[1][0] * x[0] + f[1][1] * x[1],
    ]);
    let s2 = s * s;
    let inf_v = s2 / (2.0 * g * dd);
    let inf_u = s2 / (2.0 * g);
    let d2 = (g * g - 4.0 * dd) / 4.0;

    let cov = if d2.abs() < 1e-2 * (g * g + 4.0 * dd) {
        // Near critical damping the closed form cancels catastrophically
        // (it divides by d^2); use Sigma = Sigma_inf - F Sigma_inf F^T.
        let mut m = SymMatrix::zeros(2);
        m.set(0, 0, inf_v - (f[0][0] * f[0][0] * inf_v + f[0][1] * f[0][1] * inf_u));
        m.set(0, 1, -(f[0][0] * f[1][0] * inf_v + f[0][1] * f[1][1] * inf_u));
        m.set(1, 1, inf_u - (f[1][0] * f[1][0] * inf_v + f[1][1] * f[1][1] * inf_u));
        m
    } else {
        // cosh(2 d t) and d sinh(2 d t), valid for imaginary d as well
        let (ch, sh_over_d) = oscillator_cs(d2, 2.0 * delta);
        let d_sh = d2 * sh_over_d;
        let k = s2 * (-g * delta).exp() / (4.0 * d2);
        let mut m = SymMatrix::zeros(2);
        m.set(0, 0, inf_v + k * (2.0 / g - d_sh / dd - g / (2.0 * dd) * ch));
        m.set(0, 1, k * (ch - 1.0));
        m.set(1, 1, inf_u + k * (2.0 * dd / g + d_sh - g / 2.0 * ch));
        m
    };
    GaussianMoments { mean, cov }
}

/// One row of an order-of-convergence table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderRow {
    pub delta: f64,
    pub coord: usize,
    pub mean_err: f64,
    pub var_err: f64,
}

/// Compares the scheme's one-step mean and variance against `oracle`
/// for each step size of `grid`.
pub fn order_check<M, O>(
    model: &M,
    params: &ParamSet,
    x: &[f64],
    grid: &[f64],
    mut oracle: O,
) -> Result<Vec<OrderRow>>
where
    M: Model + ?Sized,
    O: FnMut(f64) -> Result<GaussianMoments>,
{
    let n = x.len();
    let mut rows = Vec::with_capacity(grid.len() * n);
    for &delta in grid {
        if delta == 0.0 {
            rows.extend((0..n).map(|coord| OrderRow {
                delta,
                coord,
                mean_err: 0.0,
                var_err: 0.0,
            }));
            continue;
        }
        let scheme = scheme_moments(model, x, params, delta)?;
        let truth = oracle(delta)?;
        for coord in 0..n {
            rows.push(OrderRow {
                delta,
                coord,
                mean_err: (truth.mean[coord] - x[coord] - scheme.mean_increment[coord]).abs(),
                var_err: (truth.cov.get(coord, coord) - scheme.cov.get(coord, coord)).abs(),
            });
        }
    }
    Ok(rows)
}

/// [`order_check`] for the harmonic oscillator against its exact law.
pub fn order_check_ho(params: &ParamSet, x: &[f64], grid: &[f64]) -> Result<Vec<OrderRow>> {
    order_check(&crate::model::Ho, params, x, grid, |delta| {
        Ok(exact_ho_moments(params, x, delta))
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
