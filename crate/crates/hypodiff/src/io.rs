//! CSV and JSON formats for paths, estimates, traces and run manifests.
//!
//! Floats are written with 17 significant digits so that every value
//! reads back bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hypodiff_core::estimators::EstimationResult;
use hypodiff_core::moments::OrderRow;
use hypodiff_core::saem::SaemTrace;
use hypodiff_core::smc::ParticleSystem;
use hypodiff_core::{ModelSpec, Trajectory};
use serde::{Deserialize, Serialize};

use crate::config::params_to_map;

/// Fixed 17-significant-digit form.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    create_parent(path)?;
    csv::Writer::from_path(path).with_context(|| format!("opening {}", path.display()))
}

/// Columns `t, v, u1, .., up`.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv_writer(path)?;
    let p = traj.hidden_dim();
    let mut header = vec!["t".to_string(), "v".to_string()];
    header.extend((1..=p).map(|j| format!("u{j}")));
    w.write_record(&header)?;
    for (t, x) in traj.times().zip(&traj.states) {
        let mut row = vec![fmt_f64(t)];
        row.extend(x.iter().map(|&c| fmt_f64(c)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Observed times, `V` and whatever hidden columns the file carries.
#[derive(Clone, Debug, PartialEq)]
pub struct PathData {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<Vec<f64>>,
}

impl PathData {
    /// Step size, checked to be constant.
    pub fn delta(&self) -> Result<f64> {
        if self.t.len() < 2 {
            bail!("need at least two time points");
        }
        let d = self.t[1] - self.t[0];
        if !(d > 0.0) {
            bail!("times must increase");
        }
        for w in self.t.windows(2) {
            if ((w[1] - w[0]) - d).abs() > 1e-9 * d.max(1.0) {
                bail!("times are not equidistant");
            }
        }
        Ok(d)
    }

    pub fn trajectory(&self) -> Result<Trajectory> {
        let d = self.delta()?;
        Ok(Trajectory::from_parts(self.t[0], d, &self.v, &self.u, 0)?)
    }
}

/// Reads `t, v[, u1..]`; extra hidden columns are optional.
pub fn read_path_csv(path: &Path) -> Result<PathData> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = r.headers()?.clone();
    if header.len() < 2 || &header[0] != "t" || &header[1] != "v" {
        bail!("{}: expected header starting with t,v", path.display());
    }
    let p = header.len() - 2;
    let mut out = PathData {
        t: Vec::new(),
        v: Vec::new(),
        u: vec![Vec::new(); p],
    };
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .with_context(|| format!("{}: bad number in row {}, column {}", path.display(), line + 2, i + 1))
        };
        out.t.push(num(0)?);
        out.v.push(num(1)?);
        for j in 0..p {
            out.u[j].push(num(j + 2)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastValues {
    pub psi: Option<f64>,
    pub phi_sigma: Option<f64>,
}

/// JSON form of an estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub contrasts: ContrastValues,
    pub converged: bool,
    pub iterations: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl ResultRecord {
    pub fn new(model: &ModelSpec, r: &EstimationResult) -> Self {
        ResultRecord {
            model: r.model.to_string(),
            params: params_to_map(model, &r.params),
            contrasts: ContrastValues {
                psi: finite(r.psi_contrast),
                phi_sigma: finite(r.phi_sigma_contrast),
            },
            converged: r.converged,
            iterations: r.iterations,
            seed: r.seed,
            note: r.note.clone(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Starting parameters from either a bare `name -> value` map or a result
/// record, whose `params` field is used.
pub fn read_param_map(path: &Path) -> Result<BTreeMap<String, f64>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Source {
        Map(BTreeMap<String, f64>),
        Record { params: BTreeMap<String, f64> },
    }
    Ok(match read_json::<Source>(path)? {
        Source::Map(m) | Source::Record { params: m } => m,
    })
}

/// Columns `delta, coord, mean_err, var_err`.
pub fn write_order_csv(path: &Path, rows: &[OrderRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["delta", "coord", "mean_err", "var_err"])?;
    for r in rows {
        w.write_record([fmt_f64(r.delta), r.coord.to_string(), fmt_f64(r.mean_err), fmt_f64(r.var_err)])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `t, filtered_mean_U1.., filtered_sd_U1.., ess`. The first row
/// is the initial particle cloud, whose ESS is the particle count.
pub fn write_filter_csv(path: &Path, t0: f64, delta: f64, ps: &ParticleSystem) -> Result<()> {
    let mut w = csv_writer(path)?;
    let p = ps.hidden_dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=p).map(|j| format!("filtered_mean_U{j}")));
    header.extend((1..=p).map(|j| format!("filtered_sd_U{j}")));
    header.push("ess".into());
    w.write_record(&header)?;
    let means: Vec<Vec<f64>> = (0..p).map(|j| ps.filtered_mean(j)).collect();
    let sds: Vec<Vec<f64>> = (0..p).map(|j| ps.filtered_sd(j)).collect();
    for i in 0..=ps.n() {
        let mut row = vec![fmt_f64(t0 + i as f64 * delta)];
        row.extend(means.iter().map(|m| fmt_f64(m[i])));
        row.extend(sds.iter().map(|s| fmt_f64(s[i])));
        let ess = if i == 0 { ps.num_particles() as f64 } else { ps.ess[i - 1] };
        row.push(fmt_f64(ess));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `m, a_m, <parameters>, s1.., log_likelihood, mean_ess, carried`.
pub fn write_trace_csv(path: &Path, model: &ModelSpec, trace: &SaemTrace) -> Result<()> {
    let mut w = csv_writer(path)?;
    let layout = model.as_model().layout();
    let n_stats = trace.iterations.first().map_or(0, |it| it.stats.len());
    let mut header = vec!["m".to_string(), "a_m".to_string()];
    header.extend(layout.names().map(String::from));
    header.extend((1..=n_stats).map(|k| format!("s{k}")));
    header.extend(["log_likelihood", "mean_ess", "carried"].map(String::from));
    w.write_record(&header)?;
    for it in &trace.iterations {
        let mut row = vec![it.m.to_string(), fmt_f64(it.step)];
        row.extend(it.theta.to_flat().into_iter().map(fmt_f64));
        row.extend(it.stats.iter().map(|&s| fmt_f64(s)));
        row.push(fmt_f64(it.log_likelihood));
        row.push(fmt_f64(it.mean_ess));
        row.push(it.carried.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Written next to every CLI output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash,
            seed,
            outputs: Vec::new(),
        }
    }
}

/// SHA-256 of any serializable value's JSON form.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("serializable")))
}
