//! Complete-data statistics for the EM-style estimators.
//!
//! Every complete-data contrast used here is a fixed function of a small
//! vector of path sums, so a stochastic approximation can average those
//! sums across simulated hidden paths and the maximization step only
//! touches the averages.
//!
//! For the oscillator the pseudo log-likelihood is quadratic in `(D, gamma)`
//! once the rough residual is rotated by `[[1, 0], [gamma, 1]]`:
//!
//! ```text
//! r_V  = Y + D Delta^2 V / 2 + gamma Delta^2 U / 2,   Y = V' - V - Delta U
//! r_U' = Z + D (Delta V + Delta^2 U / 2) + gamma (Delta U + Y),   Z = U' - U
//! ```
//!
//! and `Q(D, gamma) = sum (r_V, r_U') P^{-1} (r_V, r_U')^T` with
//! `P^{-1} = [[12/Delta^3, -6/Delta^2], [-6/Delta^2, 4/Delta]]`. The
//! statistics are the coefficients of `Q / (6 Delta^2)`.

#[allow(unused_imports)] // float methods are inherent once std is linked
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;


use crate::error::{Error, Result};
use crate::estimators::{minimize_block, Reparam};
use crate::model::{Fhn, Ho, Model, ModelSpec, ParamSet};
use crate::optim::NelderMeadOptions;

/// Coefficients of the oscillator quadratic form
/// `q = s0 + 2 s1 D + 2 s2 gamma + s3 D^2 + 2 s5 D gamma + s4 gamma^2`
/// plus `s6 = (Delta / 2) Q` at the parameters current when it was
/// computed.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HoSufficientStats {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s4: f64,
    pub s5: f64,
    pub s6: f64,
}

impl HoSufficientStats {
    pub fn to_array(&self) -> [f64; 7] {
        [self.s0, self.s1, self.s2, self.s3, self.s4, self.s5, self.s6]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        HoSufficientStats {
            s0: a[0],
            s1: a[1],
            s2: a[2],
            s3: a[3],
            s4: a[4],
            s5: a[5],
            s6: a[6],
        }
    }

    /// `q(D, gamma)`; the Mahalanobis sum times `sigma^2` is `6 Delta^2 q`.
    pub fn quadratic(&self, d: f64, gamma: f64) -> f64 {
        self.s0
            + 2.0 * self.s1 * d
            + 2.0 * self.s2 * gamma
            + self.s3 * d * d
            + 2.0 * self.s5 * d * gamma
            + self.s4 * gamma * gamma
    }
}

fn check_path(v: &[f64], u: &[f64]) -> Result<()> {
    if v.len() != u.len() {
        return Err(Error::invalid("observed and hidden paths differ in length"));
    }
    if v.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: v.len(),
        });
    }
    Ok(())
}

pub fn ho_sufficient_stats(v: &[f64], u: &[f64], delta: f64, current: &ParamSet) -> Result<HoSufficientStats> {
    check_path(v, u)?;
    if !(delta > 0.0) {
        return Err(Error::invalid("time step must be positive"));
    }
    let d2 = delta * delta;
    let (w_vv, w_vu, w_uu) = (12.0 / (d2 * delta), -6.0 / d2, 4.0 / delta);
    let form = |a: [f64; 2], b: [f64; 2]| w_vv * a[0] * b[0] + w_vu * (a[0] * b[1] + a[1] * b[0]) + w_uu * a[1] * b[1];
    let mut acc = [0.0; 6];
    for i in 0..v.len() - 1 {
        let (vi, ui) = (v[i], u[i]);
        let y = v[i + 1] - vi - delta * ui;
        let z = u[i + 1] - ui;
        let c0 = [y, z];
        let c1 = [d2 * vi / 2.0, delta * vi + d2 * ui / 2.0];
        let c2 = [d2 * ui / 2.0, delta * ui + y];
        acc[0] += form(c0, c0);
        acc[1] += form(c0, c1);
        acc[2] += form(c0, c2);
        acc[3] += form(c1, c1);
        acc[4] += form(c2, c2);
        acc[5] += form(c1, c2);
    }
    let k = 1.0 / (6.0 * d2);
    let mut s = HoSufficientStats::from_array([
        acc[0] * k,
        acc[1] * k,
        acc[2] * k,
        acc[3] * k,
        acc[4] * k,
        acc[5] * k,
        0.0,
    ]);
    let (d, g) = (current.phi[0], current.phi[1]);
    s.s6 = 3.0 * d2 * delta * s.quadratic(d, g);
    Ok(s)
}

/// Closed-form maximizer `(D, gamma, sigma^2)`.
pub fn ho_mstep(stats: &HoSufficientStats, n: usize, delta: f64) -> Result<(f64, f64, f64)> {
    let det = stats.s3 * stats.s4 - stats.s5 * stats.s5;
    if !(det.abs() > 1e-14) {
        return Err(Error::MstepSingular { det });
    }
    if n == 0 || !(delta > 0.0) {
        return Err(Error::invalid("M-step needs n > 0 and a positive time step"));
    }
    let d = (stats.s2 * stats.s5 - stats.s1 * stats.s4) / det;
    let g = (stats.s1 * stats.s5 - stats.s2 * stats.s3) / det;
    Ok((d, g, stats.s6 / (n as f64 * delta)))
}

/// Complete pseudo log-likelihood of the oscillator rebuilt from the
/// statistics: `-n log(2 pi) - n/2 log(Delta^4 / 12) - n log sigma^2 - Q / (2 sigma^2)`.
pub fn ho_loglik_from_stats(stats: &HoSufficientStats, n: usize, delta: f64, params: &ParamSet) -> f64 {
    let (d, g, s) = (params.phi[0], params.phi[1], params.sigma[0]);
    let nf = n as f64;
    let q = 6.0 * delta * delta * stats.quadratic(d, g);
    let d4 = delta * delta * delta * delta;
    -nf * (2.0 * core::f64::consts::PI).ln() - 0.5 * nf * (d4 / 12.0).ln() - nf * (s * s).ln() - q / (2.0 * s * s)
}

/// Packed upper triangle of a weighted sum of outer products.
#[derive(Clone, Debug, PartialEq)]
pub struct Gram {
    dim: usize,
    data: Vec<f64>,
}

impl Gram {
    pub fn new(dim: usize) -> Self {
        Gram {
            dim,
            data: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.dim - i * (i + 1) / 2 + j
    }

    pub fn add_outer(&mut self, f: &[f64], weight: f64) {
        for i in 0..self.dim {
            for j in i..self.dim {
                let k = self.idx(i, j);
                self.data[k] += weight * f[i] * f[j];
            }
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    /// `c^T G c`.
    pub fn quad(&self, c: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += c[i] * c[j] * self.get(i, j);
            }
        }
        s
    }

    /// `a^T G b`.
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += a[i] * b[j] * self.get(i, j);
            }
        }
        s
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// FitzHugh-Nagumo path sums over the basis
/// `[dV, dU, g, (1 - 3 v^2) g, v, u, 1]` with `g = v - v^3 - u + s`.
#[derive(Clone, Debug, PartialEq)]
pub struct FhnStats {
    pub n: usize,
    pub gram: Gram,
}

/// Square-root conductance sums: for each conductance a Gram matrix of
/// `[dG, G, 1]` weighted by `1 / G`, and `sum log G`.
#[derive(Clone, Debug, PartialEq)]
pub struct SieStats {
    pub n: usize,
    pub gram: [Gram; 2],
    pub log_g: [f64; 2],
}

pub fn fhn_stats(model: &Fhn, v: &[f64], u: &[f64]) -> Result<FhnStats> {
    check_path(v, u)?;
    let mut gram = Gram::new(7);
    for i in 0..v.len() - 1 {
        let (vi, ui) = (v[i], u[i]);
        let g = model.cubic(vi, ui);
        let f = [v[i + 1] - vi, u[i + 1] - ui, g, (1.0 - 3.0 * vi * vi) * g, vi, ui, 1.0];
        gram.add_outer(&f, 1.0);
    }
    Ok(FhnStats { n: v.len() - 1, gram })
}

impl FhnStats {
    fn smooth_coefs(p: &ParamSet, delta: f64) -> [f64; 7] {
        let (eps, g, a) = (p.psi[0], p.phi[0], p.phi[1]);
        let h = delta * delta / 2.0;
        [1.0, 0.0, -delta / eps, -h / (eps * eps), h * g / eps, -h / eps, h * a / eps]
    }

    fn rough_coefs(p: &ParamSet, delta: f64) -> [f64; 7] {
        let (eps, g, a) = (p.psi[0], p.phi[0], p.phi[1]);
        let h = delta * delta / 2.0;
        let k = delta - h;
        [0.0, 1.0, -h * g / eps, 0.0, -k * g, k, -k * a]
    }

    /// Smooth-coordinate contrast evaluated from the sums.
    pub fn contrast_psi(&self, p: &ParamSet, delta: f64) -> f64 {
        let (eps, s) = (p.psi[0], p.sigma[0]);
        let scale = s * s / (eps * eps);
        let q = self.gram.quad(&Self::smooth_coefs(p, delta));
        3.0 / (delta * delta * delta) * q / scale + self.n as f64 * scale.ln()
    }

    /// Rough-coordinate contrast evaluated from the sums.
    pub fn contrast_phi_sigma(&self, p: &ParamSet, delta: f64) -> f64 {
        let s2 = p.sigma[0] * p.sigma[0];
        let q = self.gram.quad(&Self::rough_coefs(p, delta));
        q / (delta * s2) + self.n as f64 * s2.ln()
    }

    /// `-2` times the complete scheme log-likelihood, without the
    /// `n log(2 pi)` constant. The scheme covariance does not depend on the
    /// state, so this is exact in the sums.
    pub fn neg2_loglik(&self, p: &ParamSet, delta: f64) -> f64 {
        let eps = p.psi[0];
        let s2 = p.sigma[0] * p.sigma[0];
        let (d2, d3) = (delta * delta, delta * delta * delta);
        let a = s2 * d3 / (3.0 * eps * eps);
        let b = s2 * (-d2 / 2.0 + d3 / 3.0) / eps;
        let c = s2 * (delta - d2 + d3 / 3.0);
        let det = a * c - b * b;
        if !(det > 0.0) {
            return f64::INFINITY;
        }
        let cv = Self::smooth_coefs(p, delta);
        let cu = Self::rough_coefs(p, delta);
        let q = (c * self.gram.quad(&cv) - 2.0 * b * self.gram.bilinear(&cv, &cu) + a * self.gram.quad(&cu)) / det;
        q + self.n as f64 * det.ln()
    }
}

pub fn sie_stats(v: &[f64], u: &[Vec<f64>]) -> Result<SieStats> {
    if u.len() != 2 {
        return Err(Error::invalid("the conductance model has two hidden coordinates"));
    }
    check_path(v, &u[0])?;
    check_path(v, &u[1])?;
    let mut gram = [Gram::new(3), Gram::new(3)];
    let mut log_g = [0.0; 2];
    for j in 0..2 {
        for w in u[j].windows(2) {
            let g = w[0];
            if !(g > 0.0) {
                return Err(Error::Domain { coord: j + 1, value: g });
            }
            gram[j].add_outer(&[w[1] - g, g, 1.0], 1.0 / g);
            log_g[j] += g.ln();
        }
    }
    Ok(SieStats {
        n: v.len() - 1,
        gram,
        log_g,
    })
}

impl SieStats {
    /// Contrast of conductance `j` alone.
    pub fn contrast_one(&self, j: usize, p: &ParamSet, delta: f64) -> f64 {
        let (tau, gbar, s) = (p.phi[j], p.phi[2 + j], p.sigma[j]);
        let kappa = delta / tau * (1.0 - delta / (2.0 * tau));
        let q = self.gram[j].quad(&[1.0, kappa, -kappa * gbar]);
        let s2 = s * s;
        q / (delta * s2) + self.n as f64 * s2.ln() + self.log_g[j]
    }

    pub fn contrast_phi_sigma(&self, p: &ParamSet, delta: f64) -> f64 {
        self.contrast_one(0, p, delta) + self.contrast_one(1, p, delta)
    }
}

/// Statistic vector of whichever model is being fitted.
#[derive(Clone, Debug, PartialEq)]
pub enum CompleteStats {
    Ho(HoSufficientStats),
    Fhn(FhnStats),
    Sie(SieStats),
}

impl CompleteStats {
    /// Sums over the complete path `(v, u)`; `current` only enters the
    /// oscillator's `s6`.
    pub fn compute(model: &ModelSpec, v: &[f64], u: &[Vec<f64>], delta: f64, current: &ParamSet) -> Result<Self> {
        if u.len() != model.hidden_dim() {
            return Err(Error::invalid("hidden path has the wrong number of coordinates"));
        }
        Ok(match model {
            ModelSpec::Ho(_) => CompleteStats::Ho(ho_sufficient_stats(v, &u[0], delta, current)?),
            ModelSpec::Fhn(m) => CompleteStats::Fhn(fhn_stats(m, v, &u[0])?),
            ModelSpec::Sie(_) => CompleteStats::Sie(sie_stats(v, u)?),
        })
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            CompleteStats::Ho(s) => s.to_array().to_vec(),
            CompleteStats::Fhn(s) => s.gram.values().to_vec(),
            CompleteStats::Sie(s) => {
                let mut out = s.gram[0].values().to_vec();
                out.extend_from_slice(s.gram[1].values());
                out.extend_from_slice(&s.log_g);
                out
            }
        }
    }

    fn values_mut(&mut self) -> Vec<&mut f64> {
        match self {
            CompleteStats::Ho(s) => vec![&mut s.s0, &mut s.s1, &mut s.s2, &mut s.s3, &mut s.s4, &mut s.s5, &mut s.s6],
            CompleteStats::Fhn(s) => s.gram.data.iter_mut().collect(),
            CompleteStats::Sie(s) => {
                let [g0, g1] = &mut s.gram;
                let mut out: Vec<&mut f64> = g0.data.iter_mut().collect();
                out.extend(g1.data.iter_mut());
                out.extend(s.log_g.iter_mut());
                out
            }
        }
    }

    /// Stochastic approximation step `s <- s + a (target - s)`.
    pub fn approach(&mut self, target: &CompleteStats, a: f64) -> Result<()> {
        if core::mem::discriminant(self) != core::mem::discriminant(target) {
            return Err(Error::invalid("statistics of different models"));
        }
        let t = target.values();
        let mut mine = self.values_mut();
        if mine.len() != t.len() {
            return Err(Error::invalid("statistics of different shapes"));
        }
        for (s, &x) in mine.iter_mut().zip(&t) {
            **s += a * (x - **s);
        }
        Ok(())
    }
}

/// Which parameters the maximization step may move, indexed like
/// `ParamSet::to_flat`.
#[derive(Clone, Debug, PartialEq)]
pub struct MstepOptions {
    pub free: Vec<bool>,
    pub optimizer: NelderMeadOptions,
}

impl MstepOptions {
    pub fn all_free(model: &dyn Model) -> Self {
        MstepOptions {
            free: vec![true; model.layout().len()],
            optimizer: NelderMeadOptions::default(),
        }
    }
}

/// Maximization step: closed form for the oscillator, simplex
/// minimization of the pseudo-likelihood rebuilt from the sums otherwise.
/// Fixed entries keep their values from `current`.
pub fn mstep(
    model: &ModelSpec,
    stats: &CompleteStats,
    n: usize,
    delta: f64,
    current: &ParamSet, opts: &MstepOptions) -> Result<ParamSet> {
    let layout = model.layout();
    if opts.free.len() != layout.len() {
        return Err(Error::invalid("free-parameter mask has the wrong length"));
    }
    match (model, stats) {
        (ModelSpec::Ho(_), CompleteStats::Ho(s)) => ho_mstep_masked(s, n, delta, current, &opts.free),
        (ModelSpec::Fhn(_), CompleteStats::Fhn(s)) => {
            let idx: Vec<usize> = (0..layout.len()).filter(|&i| opts.free[i]).collect();
            if idx.is_empty() {
                return Ok(current.clone());
            }
            let r = Reparam::new(&layout, idx);
            Ok(minimize_block(&layout, current, &r, &opts.optimizer, |p| Ok(s.neg2_loglik(p, delta)))?.0)
        }
        (ModelSpec::Sie(_), CompleteStats::Sie(s)) => {
            let mut theta = current.clone();
            for j in 0..2 {
                let idx: Vec<usize> = [j, 2 + j, 4 + j].into_iter().filter(|&i| opts.free[i]).collect();
                if idx.is_empty() {
                    continue;
                }
                let r = Reparam::new(&layout, idx);
                theta = minimize_block(&layout, &theta, &r, &opts.optimizer, |p| Ok(s.contrast_one(j, p, delta)))?.0;
            }
            Ok(theta)
        }
        _ => Err(Error::invalid("statistics do not belong to this model")),
    }
}

fn ho_mstep_masked(s: &HoSufficientStats, n: usize, delta: f64, current: &ParamSet, free: &[bool]) -> Result<ParamSet> {
    if free[0] && free[1] {
        let (d, g, s2) = ho_mstep(s, n, delta)?;
        let sigma = if free[2] { s2.sqrt() } else { current.sigma[0] };
        return Ok(Ho::params(d, g, sigma));
    }
    let (mut d, mut g) = (current.phi[0], current.phi[1]);
    match (free[0], free[1]) {
        (true, false) => {
            if !(s.s3.abs() > 1e-14) {
                return Err(Error::MstepSingular { det: s.s3 });
            }
            d = -(s.s1 + s.s5 * g) / s.s3;
        }
        (false, true) => {
            if !(s.s4.abs() > 1e-14) {
                return Err(Error::MstepSingular { det: s.s4 });
            }
            g = -(s.s2 + s.s5 * d) / s.s4;
        }
        _ => {}
    }
    let sigma = if free[2] { (s.s6 / (n as f64 * delta)).sqrt() } else { current.sigma[0] };
    Ok(Ho::params(d, g, sigma))
}
