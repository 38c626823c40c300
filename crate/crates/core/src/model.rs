//! Model contract and the three shipped models.
//!
//! A model is a hypoelliptic diffusion with one smooth coordinate `v` and
//! `p` rough coordinates `u`. The state is laid out smooth-first:
//! `x = (v, u_1, .., u_p)`. The diffusion is diagonal, `sigma_j` acting on
//! `u_j` only, and all partial derivatives are supplied analytically.

#[allow(unused_imports)] // float methods are inherent once std is linked
use num_traits::Float;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};


use crate::error::{Error, Result};
use crate::linalg::{SymMatrix, Vector, MAX_DIM, MAX_HIDDEN};

/// One point of the process, smooth coordinate first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVector(Vector);

impl StateVector {
    pub fn new(v: f64, u: &[f64]) -> Self {
        assert!(!u.is_empty() && u.len() <= MAX_HIDDEN, "hidden dimension out of range");
        let mut x = Vector::zeros(u.len() + 1);
        x[0] = v;
        x[1..].copy_from_slice(u);
        StateVector(x)
    }

    pub fn from_slice(x: &[f64]) -> Self {
        assert!(x.len() >= 2, "a state needs a smooth and a rough coordinate");
        StateVector(Vector::from_slice(x))
    }

    pub fn v(&self) -> f64 {
        self.0[0]
    }

    pub fn u(&self) -> &[f64] {
        &self.0[1..]
    }

    pub fn hidden_dim(&self) -> usize {
        self.0.len() - 1
    }
}

impl Deref for StateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for StateVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Names of the parameter blocks and which flat entries must be positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub psi: &'static [&'static str],
    pub phi: &'static [&'static str],
    pub sigma: &'static [&'static str],
    /// Positivity flags in flat order `psi ++ phi ++ sigma`.
    pub positive: &'static [bool],
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.psi.len() + self.phi.len() + self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameter names in flat order.
    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.psi.iter().chain(self.phi).chain(self.sigma).copied()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names().position(|n| n == name)
    }
}

/// Parameter triple `(psi, phi, sigma)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl ParamSet {
    pub fn new(psi: &[f64], phi: &[f64], sigma: &[f64]) -> Self {
        ParamSet {
            psi: psi.to_vec(),
            phi: phi.to_vec(),
            sigma: sigma.to_vec(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.psi.len() + self.phi.len() + self.sigma.len());
        out.extend_from_slice(&self.psi);
        out.extend_from_slice(&self.phi);
        out.extend_from_slice(&self.sigma);
        out
    }

    pub fn from_flat(layout: &ParamLayout, flat: &[f64]) -> Result<Self> {
        if flat.len() != layout.len() {
            return Err(Error::invalid("flat parameter vector has the wrong length"));
        }
        let (psi, rest) = flat.split_at(layout.psi.len());
        let (phi, sigma) = rest.split_at(layout.phi.len());
        Ok(ParamSet::new(psi, phi, sigma))
    }

    pub fn get(&self, layout: &ParamLayout, name: &str) -> Option<f64> {
        layout.index_of(name).map(|i| self.to_flat()[i])
    }

    /// Checks block sizes, finiteness and positivity against `layout`.
    pub fn check(&self, layout: &ParamLayout) -> Result<()> {
        if self.psi.len() != layout.psi.len()
            || self.phi.len() != layout.phi.len()
            || self.sigma.len() != layout.sigma.len()
        {
            return Err(Error::invalid("parameter blocks do not match the model layout"));
        }
        for ((name, v), &pos) in layout.names().zip(self.to_flat()).zip(layout.positive) {
            if !v.is_finite() {
                return Err(Error::invalid(alloc::format!("parameter {name} is not finite")));
            }
            if pos && v <= 0.0 {
                return Err(Error::invalid(alloc::format!("parameter {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Equidistant path of full states.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<StateVector>,
    pub seed: u64,
}

impl Trajectory {
    /// Number of transitions.
    pub fn n(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(move |i| self.t0 + i as f64 * self.dt)
    }

    pub fn v(&self) -> Vec<f64> {
        self.states.iter().map(|x| x.v()).collect()
    }

    pub fn hidden(&self, j: usize) -> Vec<f64> {
        self.states.iter().map(|x| x.u()[j]).collect()
    }

    pub fn hidden_dim(&self) -> usize {
        self.states.first().map_or(0, |x| x.hidden_dim())
    }

    /// Rebuilds full states from an observed smooth path and hidden paths.
    pub fn from_parts(t0: f64, dt: f64, v: &[f64], u: &[Vec<f64>], seed: u64) -> Result<Self> {
        if u.iter().any(|uj| uj.len() != v.len()) {
            return Err(Error::invalid("hidden and observed paths differ in length"));
        }
        let mut buf = [0.0; MAX_HIDDEN];
        let states = (0..v.len())
            .map(|i| {
                for (b, uj) in buf.iter_mut().zip(u) {
                    *b = uj[i];
                }
                StateVector::new(v[i], &buf[..u.len()])
            })
            .collect();
        Ok(Trajectory { t0, dt, states, seed })
    }
}

/// Hypoelliptic model with diagonal diffusion on the rough coordinates.
///
/// All `x` arguments have length `hidden_dim() + 1`. Matrix outputs are
/// row-major.
pub trait Model: Send + Sync {
    fn id(&self) -> &'static str;

    fn hidden_dim(&self) -> usize;

    fn layout(&self) -> ParamLayout;

    /// `a(x; psi)`.
    fn smooth_drift(&self, x: &[f64], p: &ParamSet) -> f64;

    /// `A(x; phi)`, length `p`.
    fn rough_drift(&self, x: &[f64], p: &ParamSet, out: &mut [f64]);

    /// Diagonal of `Gamma`, length `p`.
    fn diffusion(&self, x: &[f64], p: &ParamSet, out: &mut [f64]);

    /// Gradient of `a` with respect to the full state, length `p + 1`.
    fn smooth_drift_grad(&self, x: &[f64], p: &ParamSet, out: &mut [f64]);

    /// Jacobian of `A`, `p x (p + 1)`.
    fn rough_drift_jacobian(&self, x: &[f64], p: &ParamSet, out: &mut [f64]);

    /// Second derivatives `d^2 b_i / d u_k^2` of the full drift `b = (a, A)`,
    /// `(p + 1) x p`.
    fn drift_u_second(&self, x: &[f64], p: &ParamSet, out: &mut [f64]) {
        let _ = (x, p);
        out.fill(0.0);
    }

    /// `d sigma_j / d u_j`, length `p`.
    fn diffusion_du(&self, x: &[f64], p: &ParamSet, out: &mut [f64]) {
        let _ = (x, p);
        out.fill(0.0);
    }

    /// `d^2 sigma_j / d u_j^2`, length `p`.
    fn diffusion_du2(&self, x: &[f64], p: &ParamSet, out: &mut [f64]) {
        let _ = (x, p);
        out.fill(0.0);
    }

    /// Model-specific closed form of the scheme drift increment.
    fn closed_form_increment(&self, x: &[f64], p: &ParamSet, delta: f64) -> Option<Vector> {
        let _ = (x, p, delta);
        None
    }

    /// Model-specific closed form of the scheme covariance.
    fn closed_form_cov(&self, x: &[f64], p: &ParamSet, delta: f64) -> Option<SymMatrix> {
        let _ = (x, p, delta);
        None
    }

    /// Open lower bound of rough coordinate `j` (`-inf` when unbounded).
    fn hidden_lower_bound(&self, j: usize) -> f64 {
        let _ = j;
        f64::NEG_INFINITY
    }

    /// Bounding box `(lo, hi)` per coordinate used for default probe states.
    fn probe_box(&self) -> [(f64, f64); MAX_DIM];

    fn validate(&self, p: &ParamSet) -> Result<()> {
        p.check(&self.layout())
    }

    fn in_domain(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.hidden_dim() + 1 {
            return Err(Error::invalid("state has the wrong dimension"));
        }
        for (i, &xi) in x.iter().enumerate() {
            if !xi.is_finite() {
                return Err(Error::NonFinite { coord: i });
            }
            if i > 0 && xi <= self.hidden_lower_bound(i - 1) {
                return Err(Error::Domain { coord: i, value: xi });
            }
        }
        Ok(())
    }
}

/// Harmonic oscillator `dV = U dt`, `dU = (-D V - gamma U) dt + sigma dB`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Ho;

impl Ho {
    pub const LAYOUT: ParamLayout = ParamLayout {
        psi: &[],
        phi: &["D", "gamma"],
        sigma: &["sigma"],
        positive: &[false, false, true],
    };

    pub fn params(d: f64, gamma: f64, sigma: f64) -> ParamSet {
        ParamSet::new(&[], &[d, gamma], &[sigma])
    }
}

impl Model for Ho {
    fn id(&self) -> &'static str {
        "ho"
    }

    fn hidden_dim(&self) -> usize {
        1
    }

    fn layout(&self) -> ParamLayout {
        Self::LAYOUT
    }

    fn smooth_drift(&self, x: &[f64], _p: &ParamSet) -> f64 {
        x[1]
    }

    fn rough_drift(&self, x: &[f64], p: &ParamSet, out: &mut [f64]) {
        out[0] = -p.phi[0] * x[0] - p.phi[1] * x[1];
    }

    fn diffusion(&self, _x: &[f64], p: &ParamSet, out: &mut [f64]) {
        out[0] = p.sigma[0];
    }

    fn smooth_drift_grad(&self, _x: &[f64], _p: &ParamSet, out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 1.0;
    }

    fn rough_drift_jacobian(&self, _x: &[f64], p: &ParamSet, out: &mut [f64]) {
        out[0] = -p.phi[0];
        out[1] = -p.phi[1];
    }

    fn closed_form_increment(&self, x: &[f64], p: &ParamSet, delta: f64) -> Option<Vector> {
        let (d, g) = (p.phi[0], p.phi[1]);
        let force = d * x[0] + g * x[1];
        Some(Vector::from_slice(&[
            delta * (x[1] - force * delta / 2.0),
            delta * (-force + (g * force - d * x[1]) * delta / 2.0),
        ]))
    }

    fn closed_form_cov(&self, _x: &[f64], p: &ParamSet, delta: f64) -> Option<SymMatrix> {
        let (g, s2) = (p.phi[1], p.sigma[0] * p.sigma[0]);
        let (d2, d3) = (delta * delta, delta * delta * delta);
        Some(SymMatrix::from_rows([
            [s2 * d3 / 3.0, s2 * (d2 / 2.0 - d3 * g / 3.0)],
            [s2 * (d2 / 2.0 - d3 * g / 3.0), s2 * (delta - d2 * g + d3 * g * g / 3.0)],
        ]))
    }

    fn probe_box(&self) -> [(f64, f64); MAX_DIM] {
        [(-1.0, 1.0), (-2.0, 2.0), (0.0, 0.0), (0.0, 0.0)]
    }
}

/// FitzHugh-Nagumo in the Langevin form
/// `dV = (V - V^3 - U + s) / eps dt`, `dU = (gamma V - U + alpha) dt + sigma dB`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fhn {
    /// Known input current `s`.
    pub s: f64,
}

impl Default for Fhn {
    fn default() -> Self {
        Fhn { s: 0.0 }
    }
}

impl Fhn {
    pub const LAYOUT: ParamLayout = ParamLayout {
        psi: &["epsilon"],
        phi: &["gamma", "alpha"],
        sigma: &["sigma"],
        positive: &[true, false, false, true],
    };

    pub fn params(epsilon: f64, gamma: f64, alpha: f64, sigma: f64) -> ParamSet {
        ParamSet::new(&[epsilon], &[gamma, alpha], &[sigma])
    }

    /// `v - v^3 - u + s`, the smooth drift times `eps`.
    #[inline]
    pub fn cubic(&self, v: f64, u: f64) -> f64 {
        v - v * v * v - u + self.s
    }
}

impl Model for Fhn {
    fn id(&self) -> &'static str {
        "fhn"
    }

    fn hidden_dim(&self) -> usize {
        1
    }

    fn layout(&self) -> ParamLayout {
        Self::LAYOUT
    }

    fn smooth_drift(&self, x: &[f64], p: &ParamSet) -> f64 {
        self.cubic(x[0], x[1]) / p.psi[0]
    }

    fn rough_drift(&self, x: &[f64], p: &ParamSet, out: &mut [f64]) {
        out[0] = p.phi[0] * x[0] - x[1] + p.phi[1];
    }

    fn diffusion(&self, _x: &[f64], p: &ParamSet, out: &mut [f64]) {
        out[0] = p.sigma[0];
    }

    fn smooth_drift_grad(&self, x: &[f64], p: &ParamSet, out: &mut [f64]) {
        let eps = p.psi[0];
        out[0] = (1.0 - 3.0 * x[0] * x[0]) / eps;
        out[1] = -1.0 / eps;
    }

    fn rough_drift_jacobian(&self, _x: &[f64], p: &ParamSet, out: &mut [f64]) {
        out[0] = p.phi[0];
        out[1] = -1.0;
    }

    fn closed_form_increment(&self, x: &[f64], p: &ParamSet, delta: f64) -> Option<Vector> {
        let eps = p.psi[0];
        let (g, al) = (p.phi[0], p.phi[1]);
        let (v, u) = (x[0], x[1]);
        let a = self.cubic(v, u) / eps;
        let rough = g * v - u + al;
        let h = delta * delta / 2.0;
        Some(Vector::from_slice(&[
            delta * a + h * ((1.0 - 3.0 * v * v) * a - rough) / eps,
            delta * rough + h * (g * a - rough),
        ]))
    }

    fn closed_form_cov(&self, _x: &[f64], p: &ParamSet, delta: f64) -> Option<SymMatrix> {
        let eps = p.psi[0];
        let s2 = p.sigma[0] * p.sigma[0];
        let (d2, d3) = (delta * delta, delta * delta * delta);
        let off = s2 * (-d2 / 2.0 + d3 / 3.0) / eps;
        Some(SymMatrix::from_rows([
            [s2 * d3 / (3.0 * eps * eps), off],
            [off, s2 * (delta - d2 + d3 / 3.0)],
        ]))
    }

    fn probe_box(&self) -> [(f64, f64); MAX_DIM] {
        [(-2.0, 2.0), (-1.0, 2.0), (0.0, 0.0), (0.0, 0.0)]
    }
}

/// Single-compartment neuron with square-root (CIR) excitatory and
/// inhibitory conductances; the hidden state is `(G_E, G_I)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sie {
    pub c: f64,
    pub g_l: f64,
    pub v_l: f64,
    pub v_e: f64,
    pub v_i: f64,
    pub i_inj: f64,
}

impl Default for Sie {
    fn default() -> Self {
        Sie {
            c: 1.0,
            g_l: 50.0,
            v_l: -70.0,
            v_e: 0.0,
            v_i: -80.0,
            i_inj: -60.0,
        }
    }
}

impl Sie {
    pub const LAYOUT: ParamLayout = ParamLayout {
        psi: &[],
        phi: &["tau_E", "tau_I", "gbar_E", "gbar_I"],
        sigma: &["sigma_E", "sigma_I"],
        positive: &[true, true, true, true, true, true],
    };

    pub fn params(tau: [f64; 2], gbar: [f64; 2], sigma: [f64; 2]) -> ParamSet {
        ParamSet::new(&[], &[tau[0], tau[1], gbar[0], gbar[1]], &sigma)
    }

    /// Reversal potential of conductance `j` (0 excitatory, 1 inhibitory).
    #[inline]
    pub fn reversal(&self, j: usize) -> f64 {
        if j == 0 {
            self.v_e
        } else {
            self.v_i
        }
    }
}

impl Model for Sie {
    fn id(&self) -> &'static str {
        "sie"
    }

    fn hidden_dim(&self) -> usize {
        2
    }

    fn layout(&self) -> ParamLayout {
        Self::LAYOUT
    }

    fn smooth_drift(&self, x: &[f64], _p: &ParamSet) -> f64 {
        let v = x[0];
        (-self.g_l * (v - self.v_l) - x[1] * (v - self.v_e) - x[2] * (v - self.v_i) + self.i_inj)
            / self.c
    }

    fn rough_drift(&self, x: &[f64], p: &ParamSet, out: &mut [f64]) {
        for j in 0..2 {
            out[j] = -(x[j + 1] - p.phi[2 + j]) / p.phi[j];
        }
    }

    fn diffusion(&self, x: &[f64], p: &ParamSet, out: &mut [f64]) {
        for j in 0..2 {
            out[j] = p.sigma[j] * x[j + 1].sqrt();
        }
    }

    fn smooth_drift_grad(&self, x: &[f64], _p: &ParamSet, out: &mut [f64]) {
        let v = x[0];
        out[0] = -(self.g_l + x[1] + x[2]) / self.c;
        out[1] = -(v - self.v_e) / self.c;
        out[2] = -(v - self.v_i) / self.c;
    }

    fn rough_drift_jacobian(&self, _x: &[f64], p: &ParamSet, out: &mut [f64]) {
        out[..6].fill(0.0);
        out[1] = -1.0 / p.phi[0];
        out[3 + 2] = -1.0 / p.phi[1];
    }

    fn diffusion_du(&self, x: &[f64], p: &ParamSet, out: &mut [f64]) {
        for j in 0..2 {
            out[j] = p.sigma[j] / (2.0 * x[j + 1].sqrt());
        }
    }

    fn diffusion_du2(&self, x: &[f64], p: &ParamSet, out: &mut [f64]) {
        for j in 0..2 {
            let g = x[j + 1];
            out[j] = -p.sigma[j] / (4.0 * g * g.sqrt());
        }
    }

    fn closed_form_increment(&self, x: &[f64], p: &ParamSet, delta: f64) -> Option<Vector> {
        let b1 = self.smooth_drift(x, p);
        let mut r = [0.0; 2];
        self.rough_drift(x, p, &mut r);
        let v = x[0];
        let row1 = b1
            - delta / (2.0 * self.c)
                * (b1 * (self.g_l + x[1] + x[2]) + r[0] * (v - self.v_e) + r[1] * (v - self.v_i));
        Some(Vector::from_slice(&[
            delta * row1,
            delta * r[0] * (1.0 - delta / (2.0 * p.phi[0])),
            delta * r[1] * (1.0 - delta / (2.0 * p.phi[1])),
        ]))
    }

    fn closed_form_cov(&self, x: &[f64], p: &ParamSet, delta: f64) -> Option<SymMatrix> {
        let v = x[0];
        let (d2, d3) = (delta * delta, delta * delta * delta);
        let mut m = SymMatrix::zeros(3);
        let mut vv = 0.0;
        for j in 0..2 {
            let tau = p.phi[j];
            let s2g = p.sigma[j] * p.sigma[j] * x[j + 1];
            let lever = (v - self.reversal(j)) / self.c;
            vv += lever * lever * s2g;
            m.set(0, j + 1, -s2g * lever * (d2 / 2.0 + d3 / (6.0 * tau)));
            m.set(j + 1, j + 1, s2g * (delta - d2 / (2.0 * tau) + d3 / (12.0 * tau * tau)));
        }
        m.set(0, 0, d3 / 3.0 * vv);
        Some(m)
    }

    fn hidden_lower_bound(&self, _j: usize) -> f64 {
        0.0
    }

    fn probe_box(&self) -> [(f64, f64); MAX_DIM] {
        [(-80.0, -40.0), (5.0, 30.0), (1.0, 20.0), (0.0, 0.0)]
    }
}

/// Runtime selection among the shipped models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModelSpec {
    Ho(Ho),
    Fhn(Fhn),
    Sie(Sie),
}

impl ModelSpec {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "ho" => Ok(ModelSpec::Ho(Ho)),
            "fhn" => Ok(ModelSpec::Fhn(Fhn::default())),
            "sie" => Ok(ModelSpec::Sie(Sie::default())),
            other => Err(Error::invalid(alloc::format!("unknown model id {other:?}"))),
        }
    }

    pub fn as_model(&self) -> &(dyn Model + 'static) {
        match self {
            ModelSpec::Ho(m) => m,
            ModelSpec::Fhn(m) => m,
            ModelSpec::Sie(m) => m,
        }
    }
}

impl Deref for ModelSpec {
    type Target = dyn Model;
    fn deref(&self) -> &(dyn Model + 'static) {
        self.as_model()
    }
}

/// `b(x) = (a, A^T)^T`.
pub fn eval_drift<M: Model + ?Sized>(model: &M, x: &[f64], params: &ParamSet) -> Result<Vector> {
    model.in_domain(x)?;
    let mut b = Vector::zeros(x.len());
    b[0] = model.smooth_drift(x, params);
    model.rough_drift(x, params, &mut b[1..]);
    match b.iter().position(|v| !v.is_finite()) {
        Some(coord) => Err(Error::NonFinite { coord }),
        None => Ok(b),
    }
}

/// Diagonal of `Gamma`, required strictly positive.
pub fn eval_diffusion_diag<M: Model + ?Sized>(
    model: &M,
    x: &[f64],
    params: &ParamSet,
) -> Result<Vector> {
    if x.len() != model.hidden_dim() + 1 {
        return Err(Error::invalid("state has the wrong dimension"));
    }
    let mut s = Vector::zeros(model.hidden_dim());
    model.diffusion(x, params, &mut s);
    for (j, &sj) in s.iter().enumerate() {
        if !(sj > 0.0) {
            return Err(Error::ModelViolation { coord: j, value: sj });
        }
    }
    Ok(s)
}

/// Outcome of the sampled noise-propagation check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HypoReport {
    pub probes: usize,
    pub failing: usize,
}

impl HypoReport {
    pub fn holds(&self) -> bool {
        self.failing == 0
    }

    pub fn failing_fraction(&self) -> f64 {
        self.failing as f64 / self.probes as f64
    }
}

/// Checks that `da/du_j * sigma_j` is nonzero for some `j` at every probe.
pub fn check_hypoellipticity<M: Model + ?Sized>(
    model: &M,
    params: &ParamSet,
    probes: &[StateVector],
) -> Result<HypoReport> {
    if probes.is_empty() {
        return Err(Error::invalid("no probe states"));
    }
    let p = model.hidden_dim();
    let mut grad = [0.0; MAX_DIM];
    let mut sig = [0.0; MAX_HIDDEN];
    let mut failing = 0;
    for x in probes {
        model.in_domain(x)?;
        model.smooth_drift_grad(x, params, &mut grad[..=p]);
        model.diffusion(x, params, &mut sig[..p]);
        if !(0..p).any(|j| (grad[j + 1] * sig[j]).abs() > 1e-12) {
            failing += 1;
        }
    }
    Ok(HypoReport {
        probes: probes.len(),
        failing,
    })
}

/// Radical inverse of `i` in `base`, the Halton sequence coordinate.
fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// `count` Halton points in the model's probe box.
pub fn default_probe_states<M: Model + ?Sized>(model: &M, count: usize) -> Vec<StateVector> {
    const BASES: [u64; MAX_DIM] = [2, 3, 5, 7];
    let dim = model.hidden_dim() + 1;
    let bbox = model.probe_box();
    (1..=count as u64)
        .map(|i| {
            let mut x = Vector::zeros(dim);
            for k in 0..dim {
                let (lo, hi) = bbox[k];
                x[k] = lo + (hi - lo) * radical_inverse(i, BASES[k]);
            }
            StateVector::from_slice(&x)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn drift_examples() {
        let b = eval_drift(&Ho, &[1.0, 0.0], &Ho::params(4.0, 0.5, 0.5)).unwrap();
        assert_eq!(&*b, &[0.0, -4.0]);
        let b = eval_drift(&Ho, &[0.0, 0.0], &Ho::params(4.0, 0.5, 0.5)).unwrap();
        assert_eq!(&*b, &[0.0, 0.0]);
        let b = eval_drift(&Fhn::default(), &[0.0, 0.0], &Fhn::params(0.1, 1.5, 0.8, 0.3)).unwrap();
        assert_eq!(&*b, &[0.0, 0.8]);
    }

    #[test]
    fn diffusion_examples() {
        let s = eval_diffusion_diag(&Ho, &[3.0, -1.0], &Ho::params(4.0, 0.5, 0.5)).unwrap();
        assert_eq!(&*s, &[0.5]);
        let sie = Sie::default();
        let p = Sie::params([0.5, 1.0], [17.8, 9.4], [0.1, 0.1]);
        let s = eval_diffusion_diag(&sie, &[-60.0, 10.0, 1.0], &p).unwrap();
        assert!(close(s[0], 0.1 * 10f64.sqrt(), 1e-15));
        assert!(close(s[1], 0.1, 1e-15));
        let err = eval_diffusion_diag(&sie, &[-60.0, 0.0, 1.0], &p).unwrap_err();
        assert!(matches!(err, Error::ModelViolation { coord: 0, .. }));
    }

    #[test]
    fn non_finite_drift_is_reported() {
        let err = eval_drift(&Ho, &[f64::NAN, 0.0], &Ho::params(4.0, 0.5, 0.5)).unwrap_err();
        assert_eq!(err, Error::NonFinite { coord: 0 });
        let huge = Fhn::params(1e-300, 1.5, 0.8, 0.3);
        let err = eval_drift(&Fhn::default(), &[1e200, 0.0], &huge).unwrap_err();
        assert_eq!(err, Error::NonFinite { coord: 0 });
    }

    #[test]
    fn hypoellipticity_of_shipped_models() {
        let ho = check_hypoellipticity(&Ho, &Ho::params(4.0, 0.5, 0.5), &default_probe_states(&Ho, 64));
        assert!(ho.unwrap().holds());
        let fhn = Fhn::default();
        let r = check_hypoellipticity(&fhn, &Fhn::params(0.1, 1.5, 0.8, 0.3), &default_probe_states(&fhn, 64));
        assert!(r.unwrap().holds());
        let sie = Sie::default();
        let p = Sie::params([0.5, 1.0], [17.8, 9.4], [0.1, 0.1]);
        let r = check_hypoellipticity(&sie, &p, &[StateVector::new(-60.0, &[10.0, 1.0])]);
        assert!(r.unwrap().holds());
    }

    /// `a(v, u) = v`: the noise never reaches the smooth coordinate.
    struct Decoupled;

    impl Model for Decoupled {
        fn id(&self) -> &'static str {
            "decoupled"
        }
        fn hidden_dim(&self) -> usize {
            1
        }
        fn layout(&self) -> ParamLayout {
            Ho::LAYOUT
        }
        fn smooth_drift(&self, x: &[f64], _p: &ParamSet) -> f64 {
            x[0]
        }
        fn rough_drift(&self, x: &[f64], _p: &ParamSet, out: &mut [f64]) {
            out[0] = -x[1];
        }
        fn diffusion(&self, _x: &[f64], p: &ParamSet, out: &mut [f64]) {
            out[0] = p.sigma[0];
        }
        fn smooth_drift_grad(&self, _x: &[f64], _p: &ParamSet, out: &mut [f64]) {
            out[0] = 1.0;
            out[1] = 0.0;
        }
        fn rough_drift_jacobian(&self, _x: &[f64], _p: &ParamSet, out: &mut [f64]) {
            out[0] = 0.0;
            out[1] = -1.0;
        }
        fn probe_box(&self) -> [(f64, f64); MAX_DIM] {
            Ho.probe_box()
        }
    }

    #[test]
    fn hypoellipticity_fails_without_coupling() {
        let r = check_hypoellipticity(&Decoupled, &Ho::params(1.0, 1.0, 1.0), &default_probe_states(&Decoupled, 16))
            .unwrap();
        assert!(!r.holds());
        assert_eq!(r.failing_fraction(), 1.0);
    }

    #[test]
    fn hypoellipticity_errors() {
        let p = Ho::params(4.0, 0.5, 0.5);
        assert!(matches!(check_hypoellipticity(&Ho, &p, &[]), Err(Error::InvalidArgument(_))));
        let sie = Sie::default();
        let ps = Sie::params([0.5, 1.0], [17.8, 9.4], [0.1, 0.1]);
        let bad = [StateVector::new(-60.0, &[-1.0, 1.0])];
        assert!(matches!(check_hypoellipticity(&sie, &ps, &bad), Err(Error::Domain { coord: 1, .. })));
    }

    #[test]
    fn param_flat_layout() {
        let p = Fhn::params(0.1, 1.5, 0.8, 0.3);
        assert_eq!(p.to_flat(), vec![0.1, 1.5, 0.8, 0.3]);
        assert_eq!(p.get(&Fhn::LAYOUT, "alpha"), Some(0.8));
        assert!(ParamSet::from_flat(&Fhn::LAYOUT, &[1.0]).is_err());
        assert!(Fhn::params(-0.1, 1.5, 0.8, 0.3).check(&Fhn::LAYOUT).is_err());
        assert!(Ho::params(-4.0, -0.5, 0.5).check(&Ho::LAYOUT).is_ok());
    }

    #[test]
    fn model_ids_round_trip() {
        for id in ["ho", "fhn", "sie"] {
            assert_eq!(ModelSpec::from_id(id).unwrap().id(), id);
        }
        assert!(ModelSpec::from_id("cir").is_err());
    }

    #[test]
    fn trajectory_parts() {
        let t = Trajectory::from_parts(0.0, 0.5, &[1.0, 2.0], &[vec![3.0, 4.0], vec![5.0, 6.0]], 7).unwrap();
        assert_eq!(t.n(), 1);
        assert_eq!(t.hidden(1), vec![5.0, 6.0]);
        assert_eq!(t.times().collect::<Vec<_>>(), vec![0.0, 0.5]);
    }
}
