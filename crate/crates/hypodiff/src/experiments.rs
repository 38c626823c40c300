//! Replication studies: simulate, estimate with every listed estimator,
//! aggregate.
//!
//! Replications run in parallel. Each one derives all of its randomness
//! from its own seed, and results are collected in replication order, so
//! the output does not depend on the thread count.

use std::path::Path;
use std::time::Instant;

use anyhow::Result as AnyResult;
use hypodiff_core::estimators::{estimate_complete, euler_contrast_baseline, ContrastOptions, EstimationResult};
use hypodiff_core::init::{fixed_start, init_fhn, init_ho, init_sie, InitReport};
use hypodiff_core::rng::mix_seed;
use hypodiff_core::saem::{saem_run, SaemOptions, SaemSchedule, SaemTrace};
use hypodiff_core::simulate::{simulate_euler_fine, simulate_exact_ho, subsample};
use hypodiff_core::{Error, ModelSpec, ParamSet, StateVector, Trajectory};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, ContrastStart, EstimatorKind, EstimatorOptions, ExperimentConfig, Protocol};
use crate::io::{fmt_f64, write_json, Manifest, ResultRecord};

/// Generates one data set under `protocol`.
pub fn simulate_data(
    model: &ModelSpec,
    truth: &ParamSet,
    protocol: &Protocol,
    x0: &StateVector,
    n: usize,
    delta: f64,
    seed: u64,
) -> hypodiff_core::Result<Trajectory> {
    match protocol {
        Protocol::Exact => simulate_exact_ho(truth, x0, delta, n, seed),
        Protocol::FineEuler { delta_fine, subsample: k } => {
            let fine = simulate_euler_fine(model.as_model(), truth, x0, *delta_fine, n * k, seed)?;
            let mut out = subsample(&fine, *k)?;
            out.dt = delta;
            Ok(out)
        }
    }
}

/// Starting point of the complete-observation contrasts.
pub fn contrast_start(model: &ModelSpec, start: ContrastStart, truth: &ParamSet) -> ParamSet {
    match start {
        ContrastStart::Truth => truth.clone(),
        ContrastStart::Fixed => fixed_start(model.as_model().id()).expect("shipped model ids have fixed starts"),
    }
}

fn contrast_options(opts: &EstimatorOptions, init: ParamSet) -> ContrastOptions {
    let mut c = ContrastOptions::new(init);
    c.max_outer_iters = opts.max_outer_iters;
    c.simplex_tol = opts.simplex_tol;
    c.estimate_psi = opts.estimate_psi;
    c
}

/// Data-driven starting values for the partially observed estimators.
pub fn partial_init(model: &ModelSpec, v: &[f64], delta: f64, eps0: f64) -> hypodiff_core::Result<InitReport> {
    match model {
        ModelSpec::Ho(_) => init_ho(v, delta),
        ModelSpec::Fhn(m) => init_fhn(m, v, delta, eps0),
        ModelSpec::Sie(_) => Ok(init_sie()),
    }
}

pub fn saem_options(model: &ModelSpec, opts: &EstimatorOptions) -> SaemOptions {
    let s = &opts.saem;
    let mut schedule = SaemSchedule::new(s.iters, s.burn_in, s.exponent, s.particles);
    schedule.growing_particles = s.growing_particles;
    let mut o = SaemOptions::new(model, schedule);
    o.proposal = s.proposal.into();
    o
}

/// Packs a finished SAEM run as an estimate. A run that stopped early is
/// reported with its last parameters and `converged = false`.
pub fn saem_result(model: &ModelSpec, init: &ParamSet, trace: &SaemTrace, seed: u64) -> EstimationResult {
    let params = trace.final_params().cloned().unwrap_or_else(|| init.clone());
    let carried = trace.iterations.iter().filter(|it| it.carried).count();
    let mut notes = Vec::new();
    if let Some(e) = &trace.aborted {
        notes.push(format!("stopped early: {e}"));
    }
    if carried > 0 {
        notes.push(format!("{carried} maximization steps kept the previous parameters"));
    }
    EstimationResult {
        model: model.as_model().id(),
        converged: trace.completed() && params.to_flat().iter().all(|x| x.is_finite()),
        params,
        psi_contrast: f64::NAN,
        phi_sigma_contrast: f64::NAN,
        iterations: trace.iterations.len(),
        seed,
        note: (!notes.is_empty()).then(|| notes.join("; ")),
    }
}

/// Runs SAEM from the data-driven init.
pub fn saem_estimate(
    model: &ModelSpec,
    v: &[f64],
    delta: f64,
    opts: &EstimatorOptions,
    seed: u64,
) -> hypodiff_core::Result<(EstimationResult, SaemTrace)> {
    let init = partial_init(model, v, delta, opts.eps0)?;
    let trace = saem_run(model, v, delta, &init.params0, &saem_options(model, opts), seed)?;
    Ok((saem_result(model, &init.params0, &trace, seed), trace))
}

/// Seed of estimator `kind` on the data set simulated with `data_seed`.
pub fn estimator_seed(data_seed: u64, kind: EstimatorKind) -> u64 {
    mix_seed(data_seed, kind as u64 + 1)
}

/// Runs one estimator on one data set.
pub fn run_estimator(
    kind: EstimatorKind,
    model: &ModelSpec,
    data: &Trajectory,
    truth: &ParamSet,
    opts: &EstimatorOptions,
) -> hypodiff_core::Result<EstimationResult> {
    let seed = estimator_seed(data.seed, kind);
    let m = model.as_model();
    match kind {
        EstimatorKind::NewContrastComplete => {
            estimate_complete(data, m, &contrast_options(opts, contrast_start(model, opts.contrast_start, truth)))
        }
        EstimatorKind::EulerContrast => {
            euler_contrast_baseline(data, m, &contrast_options(opts, contrast_start(model, opts.contrast_start, truth)))
        }
        EstimatorKind::Saem => saem_estimate(model, &data.v(), data.dt, opts, seed).map(|(r, _)| r),
        EstimatorKind::NewContrastPartial => {
            if matches!(model, ModelSpec::Sie(_)) {
                return Err(Error::NotApplicable("the conductance model has no increment proxy"));
            }
            let init = partial_init(model, &data.v(), data.dt, opts.eps0)?;
            Ok(EstimationResult {
                model: m.id(),
                params: init.params0,
                psi_contrast: f64::NAN,
                phi_sigma_contrast: f64::NAN,
                iterations: 1,
                converged: init.fallback.is_none(),
                seed: data.seed,
                note: init.fallback,
            })
        }
    }
}

/// One estimator on one replication.
#[derive(Clone, Debug, PartialEq)]
pub struct Replication {
    /// From 1.
    pub replication: usize,
    pub data_seed: u64,
    pub estimator: EstimatorKind,
    pub outcome: Result<EstimationResult, String>,
    pub runtime_secs: f64,
}

impl Replication {
    /// Estimate usable for the summary.
    pub fn converged(&self) -> Option<&EstimationResult> {
        self.outcome.as_ref().ok().filter(|r| r.converged)
    }
}

/// Mean and SD (denominator `count - 1`) of one parameter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamSummary {
    pub parameter: String,
    pub mean: f64,
    /// `NaN` for a single value.
    pub sd: f64,
    pub count: usize,
}

/// Sample mean and SD, summed in sorted order so the result does not
/// depend on the input order.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / (n - 1.0)).sqrt())
}

/// Per-parameter mean and SD over `results`, which must share one model.
pub fn summarize(results: &[EstimationResult]) -> hypodiff_core::Result<Vec<ParamSummary>> {
    let first = results.first().ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    if results.iter().any(|r| r.model != first.model) {
        return Err(Error::InvalidArgument("results mix models".into()));
    }
    let layout = ModelSpec::from_id(first.model)?.as_model().layout();
    let flats: Vec<Vec<f64>> = results.iter().map(|r| r.params.to_flat()).collect();
    Ok(layout
        .names()
        .enumerate()
        .map(|(i, name)| {
            let col: Vec<f64> = flats.iter().map(|f| f[i]).collect();
            let (mean, sd) = mean_sd(&col);
            ParamSummary {
                parameter: name.to_string(),
                mean,
                sd,
                count: col.len(),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub estimator: EstimatorKind,
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorCounts {
    pub estimator: EstimatorKind,
    pub total: usize,
    /// Runs that returned an error.
    pub failed: usize,
    /// Runs that returned an estimate flagged as not converged.
    pub nonconverged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuntimeRow {
    pub estimator: EstimatorKind,
    pub mean_secs: f64,
    pub max_secs: f64,
}

/// Aggregates over converged replications. Runtimes are kept apart from
/// the estimates because they are the only non-reproducible part.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    pub counts: Vec<EstimatorCounts>,
    pub runtime: Vec<RuntimeRow>,
}

impl SummaryTable {
    pub fn get(&self, estimator: EstimatorKind, parameter: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.parameter == parameter)
    }

    /// Fraction of runs, over all estimators, that returned an error.
    pub fn failed_fraction(&self) -> f64 {
        let total: usize = self.counts.iter().map(|c| c.total).sum();
        let failed: usize = self.counts.iter().map(|c| c.failed).sum();
        if total == 0 {
            0.0
        } else {
            failed as f64 / total as f64
        }
    }

    /// More than half of the runs failed.
    pub fn study_failed(&self) -> bool {
        self.failed_fraction() > 0.5
    }
}

pub fn build_summary(estimators: &[EstimatorKind], reps: &[Replication]) -> SummaryTable {
    let mut table = SummaryTable {
        rows: Vec::new(),
        counts: Vec::new(),
        runtime: Vec::new(),
    };
    for &kind in estimators {
        let mine: Vec<&Replication> = reps.iter().filter(|r| r.estimator == kind).collect();
        let ok: Vec<EstimationResult> = mine.iter().filter_map(|r| r.converged().cloned()).collect();
        let failed = mine.iter().filter(|r| r.outcome.is_err()).count();
        table.counts.push(EstimatorCounts {
            estimator: kind,
            total: mine.len(),
            failed,
            nonconverged: mine.len() - failed - ok.len(),
        });
        if let Ok(rows) = summarize(&ok) {
            table.rows.extend(rows.into_iter().map(|s| SummaryRow {
                estimator: kind,
                parameter: s.parameter,
                mean: s.mean,
                sd: s.sd,
                count: s.count,
            }));
        }
        let times: Vec<f64> = mine.iter().map(|r| r.runtime_secs).collect();
        if !times.is_empty() {
            table.runtime.push(RuntimeRow {
                estimator: kind,
                mean_secs: times.iter().sum::<f64>() / times.len() as f64,
                max_secs: times.iter().cloned().fold(0.0, f64::max),
            });
        }
    }
    table
}

#[derive(Clone, Debug)]
pub struct StudyOutput {
    pub config: ExperimentConfig,
    pub replications: Vec<Replication>,
    pub summary: SummaryTable,
}

fn run_one(cfg: &ExperimentConfig, model: &ModelSpec, truth: &ParamSet, x0: &StateVector, r: usize) -> Vec<Replication> {
    let data_seed = cfg.seed_base.wrapping_add(r as u64);
    let data = simulate_data(model, truth, &cfg.protocol, x0, cfg.n, cfg.delta, data_seed);
    cfg.estimators
        .iter()
        .map(|&kind| {
            let start = Instant::now();
            let outcome = match &data {
                Ok(d) => run_estimator(kind, model, d, truth, &cfg.options).map_err(|e| e.to_string()),
                Err(e) => Err(format!("simulation failed: {e}")),
            };
            if let Err(e) = &outcome {
                log::warn!("replication {r}, {}: {e}", kind.name());
            }
            Replication {
                replication: r,
                data_seed,
                estimator: kind,
                outcome,
                runtime_secs: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

/// Simulates `cfg.replications` data sets with seeds `seed_base + r` and
/// runs every estimator on each. `threads` fixes the worker count.
pub fn run_replication_study(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<StudyOutput, ConfigError> {
    cfg.validate()?;
    let model = cfg.model_spec()?;
    let truth = cfg.truth()?;
    let x0 = cfg.initial_state()?;
    let work = || -> Vec<Replication> {
        (1..=cfg.replications)
            .into_par_iter()
            .flat_map_iter(|r| run_one(cfg, &model, &truth, &x0, r))
            .collect()
    };
    let replications = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| ConfigError::Invalid(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let summary = build_summary(&cfg.estimators, &replications);
    Ok(StudyOutput {
        config: cfg.clone(),
        replications,
        summary,
    })
}

#[derive(Serialize)]
struct ReplicationJson<'a> {
    replication: usize,
    data_seed: u64,
    estimator: EstimatorKind,
    runtime_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<ResultRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

/// Writes config copy, manifest, per-replication JSON, `summary.csv` and
/// the long-format `estimates.csv` into `dir`.
pub fn write_study(dir: &Path, out: &StudyOutput) -> AnyResult<Manifest> {
    std::fs::create_dir_all(dir.join("replications"))?;
    let model = out.config.model_spec()?;
    let mut manifest = Manifest::new("replicate", out.config.hash(), out.config.seed_base);

    std::fs::write(dir.join("config.toml"), out.config.to_toml_string())?;
    manifest.outputs.push("config.toml".into());

    for r in 1..=out.config.replications {
        let items: Vec<ReplicationJson> = out
            .replications
            .iter()
            .filter(|x| x.replication == r)
            .map(|x| ReplicationJson {
                replication: x.replication,
                data_seed: x.data_seed,
                estimator: x.estimator,
                runtime_secs: x.runtime_secs,
                result: x.outcome.as_ref().ok().map(|e| ResultRecord::new(&model, e)),
                error: x.outcome.as_ref().err().map(String::as_str),
            })
            .collect();
        let name = format!("replications/rep_{r:04}.json");
        write_json(&dir.join(&name), &items)?;
        manifest.outputs.push(name);
    }

    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["estimator", "parameter", "mean", "sd", "count", "failed", "nonconverged"])?;
    for row in &out.summary.rows {
        let c = out.summary.counts.iter().find(|c| c.estimator == row.estimator).expect("counted");
        w.write_record([
            row.estimator.name().to_string(),
            row.parameter.clone(),
            fmt_f64(row.mean),
            fmt_f64(row.sd),
            row.count.to_string(),
            c.failed.to_string(),
            c.nonconverged.to_string(),
        ])?;
    }
    w.flush()?;
    manifest.outputs.push("summary.csv".into());

    let layout = model.as_model().layout();
    let mut w = csv::Writer::from_path(dir.join("estimates.csv"))?;
    w.write_record(["replication", "estimator", "parameter", "value", "converged"])?;
    for rep in &out.replications {
        if let Ok(est) = &rep.outcome {
            for (name, value) in layout.names().zip(est.params.to_flat()) {
                w.write_record([
                    rep.replication.to_string(),
                    rep.estimator.name().to_string(),
                    name.to_string(),
                    fmt_f64(value),
                    est.converged.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    manifest.outputs.push("estimates.csv".into());

    write_json(&dir.join("runtime.json"), &out.summary.runtime)?;
    manifest.outputs.push("runtime.json".into());
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(v: f64) -> EstimationResult {
        EstimationResult {
            model: "ho",
            params: hypodiff_core::Ho::params(v, 0.5, 0.5),
            psi_contrast: f64::NAN,
            phi_sigma_contrast: 0.0,
            iterations: 1,
            converged: true,
            seed: 0,
            note: None,
        }
    }

    #[test]
    fn summarize_examples() {
        let one = summarize(&[est(3.0)]).unwrap();
        assert_eq!(one[0].mean, 3.0);
        assert!(one[0].sd.is_nan());
        let two = summarize(&[est(4.0), est(6.0)]).unwrap();
        assert_eq!(two[0].mean, 5.0);
        assert!((two[0].sd - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(two[1].sd, 0.0);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn mean_sd_ignores_order() {
        let a = [0.1, 1e9, -3.7, 2.2, 1e-9, 7.0];
        let mut b = a;
        b.reverse();
        b.swap(0, 3);
        assert_eq!(mean_sd(&a), mean_sd(&b));
    }
}
