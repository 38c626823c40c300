//! Stochastic approximation EM driven by particle-filter smoothing paths.
//!
//! Each iteration filters the observed coordinate at the current
//! parameters, draws one hidden path by ancestry tracing, moves the
//! averaged complete-data statistics towards that path's statistics, and
//! maximizes.

#[allow(unused_imports)] // float methods are inherent once std is linked
use num_traits::Float;
use alloc::vec::Vec;


use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamSet};
use crate::rng::{mix_seed, stream};
use crate::smc::{sample_smoothing_path, smc_filter_with, ProposalKind, U0Sampler};
use crate::stats::{mstep, CompleteStats, MstepOptions};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaemSchedule {
    pub total_iters: usize,
    /// Iterations with unit step.
    pub burn_in: usize,
    /// Decay exponent of the step after burn-in, in `(0.5, 1]`.
    pub exponent: f64,
    pub particles: usize,
    /// Use `max(particles, ceil(m log m))` particles at iteration `m`.
    pub growing_particles: bool,
}

impl SaemSchedule {
    pub fn new(total_iters: usize, burn_in: usize, exponent: f64, particles: usize) -> Self {
        SaemSchedule {
            total_iters,
            burn_in,
            exponent,
            particles,
            growing_particles: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 || self.particles == 0 {
            return Err(Error::invalid("schedule needs at least one iteration and one particle"));
        }
        if !(self.exponent > 0.5 && self.exponent <= 1.0) {
            return Err(Error::invalid("step exponent must lie in (0.5, 1]"));
        }
        Ok(())
    }

    pub fn particles_at(&self, m: usize) -> usize {
        if !self.growing_particles || m < 2 {
            return self.particles;
        }
        let g = (m as f64 * (m as f64).ln()).ceil() as usize;
        self.particles.max(g)
    }
}

/// `1` during burn-in, then `(m - burn_in)^(-exponent)`.
pub fn step_size(m: usize, schedule: &SaemSchedule) -> f64 {
    if m <= schedule.burn_in {
        1.0
    } else {
        ((m - schedule.burn_in) as f64).powf(-schedule.exponent)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaemOptions {
    pub schedule: SaemSchedule,
    pub proposal: ProposalKind,
    pub mstep: MstepOptions,
    /// Initial particle law; `None` rebuilds the model default at the
    /// current parameters every iteration.
    pub u0: Option<U0Sampler>,
    /// Constant step replacing the schedule after the first iteration.
    pub fixed_step: Option<f64>,
}

impl SaemOptions {
    pub fn new(model: &ModelSpec, schedule: SaemSchedule) -> Self {
        SaemOptions {
            schedule,
            proposal: ProposalKind::Conditional,
            mstep: MstepOptions::all_free(model.as_model()),
            u0: None,
            fixed_step: None,
        }
    }
}

/// Record of one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct SaemIteration {
    pub m: usize,
    pub step: f64,
    pub particles: usize,
    /// Parameters after the maximization step.
    pub theta: ParamSet,
    /// Averaged statistic vector after the approximation step.
    pub stats: Vec<f64>,
    /// Particle estimate of the observed-data log-likelihood at the
    /// parameters the filter ran with.
    pub log_likelihood: f64,
    pub mean_ess: f64,
    /// Time average of each hidden coordinate of the sampled path.
    pub path_mean: Vec<f64>,
    /// The maximization step failed and the previous parameters were kept.
    pub carried: bool,
    /// The filter collapsed once and was rerun with fresh noise.
    pub retried: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaemTrace {
    pub iterations: Vec<SaemIteration>,
    /// Set when the run stopped early.
    pub aborted: Option<Error>,
}

impl SaemTrace {
    pub fn final_params(&self) -> Option<&ParamSet> {
        self.iterations.last().map(|it| &it.theta)
    }

    pub fn completed(&self) -> bool {
        self.aborted.is_none()
    }
}

/// Runs the full schedule from `init`. Errors in the inputs are returned
/// directly; failures during the run end it early with the trace so far.
pub fn saem_run(
    model: &ModelSpec,
    v_obs: &[f64],
    delta: f64,
    init: &ParamSet,
    opts: &SaemOptions,
    seed: u64,
) -> Result<SaemTrace> {
    opts.schedule.validate()?;
    model.validate(init)?;
    if v_obs.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: v_obs.len(),
        });
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("delta must be positive"));
    }
    let n = v_obs.len() - 1;
    let mut theta = init.clone();
    let mut averaged: Option<CompleteStats> = None;
    let mut last_u0: Option<U0Sampler> = None;
    let mut trace = SaemTrace {
        iterations: Vec::with_capacity(opts.schedule.total_iters),
        aborted: None,
    };

    for m in 1..=opts.schedule.total_iters {
        let k = opts.schedule.particles_at(m);
        let u0 = match &opts.u0 {
            Some(u) => u.clone(),
            None => match U0Sampler::for_model(model, &theta, v_obs, delta) {
                Ok(u) => u,
                Err(e) => match &last_u0 {
                    Some(u) => u.clone(),
                    None => return Err(e),
                },
            },
        };
        last_u0 = Some(u0.clone());

        let mut retried = false;
        let run = |attempt: u64| {
            let mut rng = stream(mix_seed(seed, m as u64), attempt);
            smc_filter_with(model.as_model(), &theta, v_obs, &u0, k, opts.proposal, delta, &mut rng)
                .map(|ps| (ps, rng))
        };
        let (ps, mut rng) = match run(0) {
            Ok(r) => r,
            Err(Error::FilterCollapse { .. }) => {
                retried = true;
                match run(1) {
                    Ok(r) => r,
                    Err(e) => {
                        trace.aborted = Some(e);
                        return Ok(trace);
                    }
                }
            }
            Err(e) => {
                trace.aborted = Some(e);
                return Ok(trace);
            }
        };
        let path = sample_smoothing_path(&ps, &mut rng);
        let sampled = match CompleteStats::compute(model, v_obs, &path, delta, &theta) {
            Ok(s) => s,
            Err(e) => {
                trace.aborted = Some(e);
                return Ok(trace);
            }
        };
        let a = match opts.fixed_step {
            Some(a) if m > 1 => a,
            _ => step_size(m, &opts.schedule),
        };
        match averaged.as_mut() {
            None => averaged = Some(sampled),
            Some(s) => s.approach(&sampled, a)?,
        }
        let s = averaged.as_ref().expect("set above");

        let mut carried = false;
        match mstep(model, s, n, delta, &theta, &opts.mstep) {
            Ok(next) if model.validate(&next).is_ok() && next.to_flat().iter().all(|v| v.is_finite()) => theta = next,
            Ok(_) | Err(Error::MstepSingular { .. }) | Err(Error::Optimizer(_)) => carried = true,
            Err(e) => {
                trace.aborted = Some(e);
                return Ok(trace);
            }
        }

        let path_mean = path.iter().map(|row| row.iter().sum::<f64>() / row.len() as f64).collect();
        trace.iterations.push(SaemIteration {
            m,
            step: a,
            particles: k,
            theta: theta.clone(),
            stats: s.values(),
            log_likelihood: ps.log_likelihood(),
            mean_ess: ps.ess.iter().sum::<f64>() / ps.ess.len() as f64,
            path_mean,
            carried,
            retried,
        });
    }
    Ok(trace)
}
