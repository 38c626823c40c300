use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hypodiff::config::{
    build_model, default_x0, params_from_map, parse_param_list, ConfigError, ContrastStart,
    EstimatorOptions, ExperimentConfig, ModelConstants, ProposalChoice,
};
use hypodiff::experiments::{contrast_start, saem_estimate, saem_options, saem_result, simulate_data, write_study};
use hypodiff::io::{
    hash_json, read_param_map, read_path_csv, write_filter_csv, write_json, write_order_csv, write_trace_csv,
    write_trajectory_csv, Manifest, ResultRecord,
};
use hypodiff::Protocol;
use hypodiff_core::estimators::{estimate_complete, euler_contrast_baseline, ContrastOptions};
use hypodiff_core::moments::{log_log_slope, order_check_ho};
use hypodiff_core::simulate::simulate_scheme15;
use hypodiff_core::smc::{smc_filter, FilterOptions, U0Sampler};
use hypodiff_core::{Error as CoreError, ModelSpec, ParamSet, StateVector};
use serde::Serialize;

const EXIT_STUDY_FAILED: u8 = 2;
const EXIT_INVALID: u8 = 3;

/// Simulation and estimation for partially observed hypoelliptic diffusions.
#[derive(Parser, Debug)]
#[command(name = "hypodiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a path and write it as CSV (t, v, u1..).
    Simulate(SimulateArgs),
    /// Fit a fully observed path with the contrasts or the Euler baseline.
    EstimateComplete(EstimateArgs),
    /// Run the particle filter on the observed coordinate.
    Filter(FilterArgs),
    /// SAEM on the observed coordinate.
    Saem(SaemArgs),
    /// Run a replication study from a config file or preset.
    Replicate(ReplicateArgs),
    /// One-step moment errors of the scheme against the exact oscillator.
    OrderCheck(OrderArgs),
}

#[derive(Args, Debug, Serialize)]
struct ModelArgs {
    /// ho, fhn or sie.
    #[arg(long)]
    model: String,
    /// Input current of the FitzHugh-Nagumo model.
    #[arg(long)]
    fhn_s: Option<f64>,
    /// Membrane capacitance of the conductance model.
    #[arg(long)]
    sie_capacitance: Option<f64>,
}

impl ModelArgs {
    fn spec(&self) -> Result<ModelSpec> {
        Ok(build_model(
            &self.model,
            &ModelConstants {
                fhn_s: self.fhn_s,
                sie_capacitance: self.sie_capacitance,
            },
        )?)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum SimProtocol {
    Exact,
    FineEuler,
    Scheme15,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Parameters as name=value,name=value.
    #[arg(long)]
    params: String,
    #[arg(long, value_enum, default_value = "exact")]
    protocol: SimProtocol,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.02)]
    delta: f64,
    /// Subsampling factor of the fine Euler grid.
    #[arg(long, default_value_t = 10)]
    subsample: usize,
    /// Initial state as v,u1,..; model default when absent.
    #[arg(long)]
    x0: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum CompleteMethod {
    NewContrast,
    Euler,
}

#[derive(Args, Debug, Serialize)]
struct EstimateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// CSV with columns t, v, u1..
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "new-contrast")]
    method: CompleteMethod,
    /// `fixed` for the model's fixed start, or a JSON file of parameters
    /// (a bare map or a result record).
    #[arg(long, default_value = "fixed")]
    init: String,
    /// Keep the smooth-drift parameters at their start values.
    #[arg(long)]
    no_psi: bool,
    #[arg(long, default_value_t = 5)]
    max_outer_iters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct FilterArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// CSV with columns t, v (hidden columns are ignored).
    #[arg(long)]
    data: PathBuf,
    /// name=value list, or @file.json.
    #[arg(long)]
    params: String,
    #[arg(long, default_value_t = 100)]
    particles: usize,
    #[arg(long, value_enum, default_value = "conditional")]
    proposal: ProposalArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum ProposalArg {
    Conditional,
    Transition,
}

impl From<ProposalArg> for ProposalChoice {
    fn from(p: ProposalArg) -> Self {
        match p {
            ProposalArg::Conditional => ProposalChoice::Conditional,
            ProposalArg::Transition => ProposalChoice::Transition,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct SaemArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 80)]
    iters: usize,
    #[arg(long, default_value_t = 30)]
    burn_in: usize,
    #[arg(long, default_value_t = 0.9)]
    exponent: f64,
    #[arg(long, default_value_t = 100)]
    particles: usize,
    /// Use max(particles, ceil(m log m)) particles at iteration m.
    #[arg(long)]
    growing_particles: bool,
    #[arg(long, value_enum, default_value = "conditional")]
    proposal: ProposalArg,
    /// Starting epsilon of the FitzHugh-Nagumo init.
    #[arg(long, default_value_t = 0.12)]
    eps0: f64,
    /// `auto` for the data-driven init, or a JSON file of parameters
    /// (a bare map or a result record).
    #[arg(long, default_value = "auto")]
    init: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Per-iteration trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ReplicateArgs {
    /// TOML experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// ho, fhn or sie.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    seed_base: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct OrderArgs {
    #[arg(long, default_value = "D=4,gamma=0.5,sigma=0.5")]
    params: String,
    /// State as v,u.
    #[arg(long, default_value = "0.1,0.2")]
    x: String,
    #[arg(long, default_value = "0.04,0.02,0.01,0.005")]
    grid: String,
    #[arg(long)]
    out: PathBuf,
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError::Invalid(msg.into()))
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| invalid(format!("bad number {t:?}"))))
        .collect()
}

/// `name=value,..` or `@file.json`.
fn read_params(model: &ModelSpec, spec: &str) -> Result<ParamSet> {
    let map = match spec.strip_prefix('@') {
        Some(path) => read_param_map(Path::new(path))?,
        None => parse_param_list(spec)?,
    };
    Ok(params_from_map(model, &map)?)
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn finish(command: &str, args: &impl Serialize, seed: u64, outputs: &[&Path]) -> Result<()> {
    let mut m = Manifest::new(command, hash_json(args), seed);
    m.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
    write_json(&manifest_path(outputs[0]), &m)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let model = a.model.spec()?;
    let params = read_params(&model, &a.params)?;
    let x0 = match &a.x0 {
        Some(s) => StateVector::from_slice(&parse_list(s)?),
        None => default_x0(&model),
    };
    if x0.len() != model.hidden_dim() + 1 {
        return Err(invalid("x0 has the wrong dimension"));
    }
    let traj = match a.protocol {
        SimProtocol::Exact => simulate_data(&model, &params, &Protocol::Exact, &x0, a.n, a.delta, a.seed)?,
        SimProtocol::FineEuler => {
            let p = Protocol::FineEuler {
                delta_fine: a.delta / a.subsample.max(1) as f64,
                subsample: a.subsample,
            };
            simulate_data(&model, &params, &p, &x0, a.n, a.delta, a.seed)?
        }
        SimProtocol::Scheme15 => simulate_scheme15(model.as_model(), &params, &x0, a.delta, a.n, a.seed)?,
    };
    write_trajectory_csv(&a.out, &traj)?;
    finish("simulate", a, a.seed, &[&a.out])
}

fn estimate(a: &EstimateArgs) -> Result<()> {
    let model = a.model.spec()?;
    let data = read_path_csv(&a.data)?;
    if data.u.len() != model.hidden_dim() {
        return Err(invalid(format!("{} needs {} hidden columns", a.model.model, model.hidden_dim())));
    }
    let traj = data.trajectory()?;
    let init = match a.init.as_str() {
        "fixed" => contrast_start(&model, ContrastStart::Fixed, &ParamSet::default()),
        path => params_from_map(&model, &read_param_map(Path::new(path))?)?,
    };
    let mut opts = ContrastOptions::new(init);
    opts.estimate_psi = !a.no_psi;
    opts.max_outer_iters = a.max_outer_iters;
    let r = match a.method {
        CompleteMethod::NewContrast => estimate_complete(&traj, model.as_model(), &opts)?,
        CompleteMethod::Euler => euler_contrast_baseline(&traj, model.as_model(), &opts)?,
    };
    write_json(&a.out, &ResultRecord::new(&model, &r))?;
    finish("estimate-complete", a, 0, &[&a.out])
}

fn filter(a: &FilterArgs) -> Result<()> {
    let model = a.model.spec()?;
    let params = read_params(&model, &a.params)?;
    let data = read_path_csv(&a.data)?;
    let delta = data.delta()?;
    let u0 = U0Sampler::for_model(&model, &params, &data.v, delta)?;
    let opts = FilterOptions {
        particles: a.particles,
        proposal: ProposalChoice::from(a.proposal).into(),
        seed: a.seed,
    };
    let ps = smc_filter(model.as_model(), &params, &data.v, &u0, &opts, delta)?;
    write_filter_csv(&a.out, data.t[0], delta, &ps)?;
    log::info!("log-likelihood estimate {}", ps.log_likelihood());
    finish("filter", a, a.seed, &[&a.out])
}

fn saem(a: &SaemArgs) -> Result<()> {
    let model = a.model.spec()?;
    let data = read_path_csv(&a.data)?;
    let delta = data.delta()?;
    let mut opts = EstimatorOptions::default();
    opts.eps0 = a.eps0;
    opts.saem.iters = a.iters;
    opts.saem.burn_in = a.burn_in;
    opts.saem.exponent = a.exponent;
    opts.saem.particles = a.particles;
    opts.saem.growing_particles = a.growing_particles;
    opts.saem.proposal = a.proposal.into();
    let (result, trace) = match a.init.as_str() {
        "auto" => saem_estimate(&model, &data.v, delta, &opts, a.seed)?,
        path => {
            let init = params_from_map(&model, &read_param_map(Path::new(path))?)?;
            let so = saem_options(&model, &opts);
            let trace = hypodiff_core::saem::saem_run(&model, &data.v, delta, &init, &so, a.seed)?;
            (saem_result(&model, &init, &trace, a.seed), trace)
        }
    };
    if let Some(e) = &trace.aborted {
        log::warn!("SAEM stopped after {} iterations: {e}", trace.iterations.len());
    }
    write_json(&a.out, &ResultRecord::new(&model, &result))?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(t) = &a.trace {
        write_trace_csv(t, &model, &trace)?;
        outputs.push(t);
    }
    finish("saem", a, a.seed, &outputs)
}

fn replicate(a: &ReplicateArgs) -> Result<ExitCode> {
    let mut cfg = match (&a.config, &a.preset) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => return Err(invalid("give --config or --preset")),
    };
    if let Some(r) = a.replications {
        cfg.replications = r;
    }
    if let Some(s) = a.seed_base {
        cfg.seed_base = s;
    }
    cfg.validate()?;
    let out = hypodiff::run_replication_study(&cfg, a.threads)?;
    write_study(&a.out_dir, &out)?;
    for row in &out.summary.rows {
        println!(
            "{:<22} {:<8} mean {:>12.6} sd {:>10.6} (n={})",
            row.estimator.name(),
            row.parameter,
            row.mean,
            row.sd,
            row.count
        );
    }
    for c in &out.summary.counts {
        if c.failed + c.nonconverged > 0 {
            println!("{}: {} failed, {} not converged of {}", c.estimator.name(), c.failed, c.nonconverged, c.total);
        }
    }
    if out.summary.study_failed() {
        eprintln!("study failed: {:.0}% of runs returned errors", 100.0 * out.summary.failed_fraction());
        return Ok(ExitCode::from(EXIT_STUDY_FAILED));
    }
    Ok(ExitCode::SUCCESS)
}

fn order(a: &OrderArgs) -> Result<()> {
    let model = ModelSpec::from_id("ho")?;
    let params = params_from_map(&model, &parse_param_list(&a.params)?)?;
    let x = parse_list(&a.x)?;
    if x.len() != 2 {
        return Err(invalid("the oscillator state is v,u"));
    }
    let grid = parse_list(&a.grid)?;
    if grid.iter().any(|d| !(*d >= 0.0)) {
        return Err(invalid("step sizes must be non-negative"));
    }
    let rows = order_check_ho(&params, &x, &grid)?;
    write_order_csv(&a.out, &rows)?;
    let positive: Vec<_> = rows.iter().filter(|r| r.coord == 0 && r.delta > 0.0).collect();
    if positive.len() >= 2 {
        let ds: Vec<f64> = positive.iter().map(|r| r.delta).collect();
        let me: Vec<f64> = positive.iter().map(|r| r.mean_err).collect();
        let ve: Vec<f64> = positive.iter().map(|r| r.var_err).collect();
        println!("slope of V mean error {:.3}", log_log_slope(&ds, &me));
        println!("slope of V variance error {:.3}", log_log_slope(&ds, &ve));
    }
    finish("order-check", a, 0, &[&a.out])
}

fn is_invalid_input(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<ConfigError>().is_some()
            || matches!(
                c.downcast_ref::<CoreError>(),
                Some(CoreError::InvalidArgument(_)) | Some(CoreError::NotApplicable(_))
            )
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let run = match &cli.command {
        Command::Simulate(a) => simulate(a).map(|_| ExitCode::SUCCESS),
        Command::EstimateComplete(a) => estimate(a).map(|_| ExitCode::SUCCESS),
        Command::Filter(a) => filter(a).map(|_| ExitCode::SUCCESS),
        Command::Saem(a) => saem(a).map(|_| ExitCode::SUCCESS),
        Command::Replicate(a) => replicate(a),
        Command::OrderCheck(a) => order(a).map(|_| ExitCode::SUCCESS),
    };
    match run.with_context(|| "hypodiff failed") {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {:#}", e);
            if is_invalid_input(&e) {
                ExitCode::from(EXIT_INVALID)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
