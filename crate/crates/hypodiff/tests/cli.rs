use std::path::Path;
use std::process::{Command, Output};

use hypodiff::config::ExperimentConfig;
use hypodiff::io::{read_json, read_path_csv, Manifest, ResultRecord};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypodiff")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest_of(out: &Path) -> Manifest {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    read_json(Path::new(&name)).expect("manifest written")
}

#[test]
fn oscillator_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ho.csv");
    let out = run(&["simulate", "--model", "ho", "--params", "D=4,gamma=0.5,sigma=0.5", "--n", "300", "--seed", "7", "--out", s(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let path = read_path_csv(&data).unwrap();
    assert_eq!(path.v.len(), 301);
    assert_eq!(path.u.len(), 1);
    assert!((path.delta().unwrap() - 0.02).abs() < 1e-12);
    let m = manifest_of(&data);
    assert_eq!((m.command.as_str(), m.seed), ("simulate", 7));
    assert_eq!(m.config_hash.len(), 64);

    // same seed, same file
    let again = dir.path().join("again.csv");
    run(&["simulate", "--model", "ho", "--params", "D=4,gamma=0.5,sigma=0.5", "--n", "300", "--seed", "7", "--out", s(&again)]);
    assert_eq!(std::fs::read(&data).unwrap(), std::fs::read(&again).unwrap());

    let est = dir.path().join("est.json");
    let out = run(&["estimate-complete", "--model", "ho", "--data", s(&data), "--out", s(&est)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rec: ResultRecord = read_json(&est).unwrap();
    assert_eq!(rec.model, "ho");
    assert!(rec.params.contains_key("D") && rec.params.contains_key("gamma") && rec.params.contains_key("sigma"));
    assert!(rec.contrasts.psi.is_none() && rec.contrasts.phi_sigma.is_some());

    let euler = dir.path().join("euler.json");
    assert_eq!(code(&run(&["estimate-complete", "--model", "ho", "--data", s(&data), "--method", "euler", "--out", s(&euler)])), 0);

    let filt = dir.path().join("filter.csv");
    let out = run(&[
        "filter", "--model", "ho", "--data", s(&data), "--params", "D=4,gamma=0.5,sigma=0.5", "--particles", "50", "--out", s(&filt),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&filt).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,filtered_mean_U1,filtered_sd_U1,ess");
    assert_eq!(lines.count(), 301);

    let fit = dir.path().join("saem.json");
    let trace = dir.path().join("trace.csv");
    let out = run(&[
        "saem", "--model", "ho", "--data", s(&data), "--iters", "6", "--burn-in", "2", "--particles", "30", "--trace", s(&trace),
        "--out", s(&fit),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rec: ResultRecord = read_json(&fit).unwrap();
    assert_eq!(rec.iterations, 6);
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    assert!(trace_text.starts_with("m,a_m,D,gamma,sigma,s1,"));
    assert_eq!(trace_text.lines().count(), 7);

    // a previous estimate as starting point
    let refit = dir.path().join("refit.json");
    let init = format!("{}", est.display());
    let out = run(&[
        "saem", "--model", "ho", "--data", s(&data), "--iters", "3", "--burn-in", "1", "--particles", "20", "--init", &init,
        "--out", s(&refit),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let order = dir.path().join("order.csv");
    let out = run(&["order-check", "--out", s(&order)]);
    assert_eq!(code(&out), 0);
    assert!(std::fs::read_to_string(&order).unwrap().starts_with("delta,coord,mean_err,var_err"));
}

#[test]
fn other_models_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let fhn = dir.path().join("fhn.csv");
    let out = run(&[
        "simulate", "--model", "fhn", "--params", "epsilon=0.1,gamma=1.5,alpha=0.8,sigma=0.3", "--protocol", "fine-euler", "--n",
        "100", "--out", s(&fhn),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_path_csv(&fhn).unwrap().v.len(), 101);

    let sie = dir.path().join("sie.csv");
    let out = run(&[
        "simulate", "--model", "sie", "--params", "tau_E=0.5,tau_I=1,gbar_E=17.8,gbar_I=9.4,sigma_E=0.1,sigma_I=0.1", "--protocol",
        "fine-euler", "--n", "50", "--out", s(&sie),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let path = read_path_csv(&sie).unwrap();
    assert_eq!(path.u.len(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["simulate"])), 3, "missing arguments");
    assert_eq!(code(&run(&["no-such-command"])), 3);
    assert_eq!(code(&run(&["simulate", "--model", "nope", "--params", "D=1", "--out", s(&out)])), 3);
    assert_eq!(code(&run(&["simulate", "--model", "ho", "--params", "D=4,gamma=0.5", "--out", s(&out)])), 3, "missing sigma");
    assert_eq!(
        code(&run(&["simulate", "--model", "ho", "--params", "D=4,gamma=0.5,sigma=-1", "--out", s(&out)])),
        3,
        "negative sigma"
    );
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&run(&["estimate-complete", "--model", "ho", "--data", s(&missing), "--out", s(&out)])), 1);

    let mut cfg = ExperimentConfig::ho_preset();
    cfg.replications = 0;
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, cfg.to_toml_string()).unwrap();
    let study = dir.path().join("study");
    assert_eq!(code(&run(&["replicate", "--config", s(&bad), "--out-dir", s(&study)])), 3);
    std::fs::write(&bad, "model = [").unwrap();
    assert_eq!(code(&run(&["replicate", "--config", s(&bad), "--out-dir", s(&study)])), 3);
}

#[test]
fn replicate_writes_a_study_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::ho_preset();
    cfg.n = 200;
    cfg.options.saem.iters = 4;
    cfg.options.saem.burn_in = 2;
    cfg.options.saem.particles = 20;
    let file = dir.path().join("ho.toml");
    std::fs::write(&file, cfg.to_toml_string()).unwrap();
    let study = dir.path().join("study");
    let out = run(&["replicate", "--config", s(&file), "--replications", "2", "--threads", "2", "--out-dir", s(&study)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["config.toml", "manifest.json", "summary.csv", "estimates.csv", "runtime.json", "replications/rep_0001.json", "replications/rep_0002.json"] {
        assert!(study.join(name).exists(), "{name} missing");
    }
    let copied = ExperimentConfig::load(&study.join("config.toml")).unwrap();
    assert_eq!(copied.replications, 2);
    let m: Manifest = read_json(&study.join("manifest.json")).unwrap();
    assert_eq!(m.config_hash, copied.hash());
}

/// A fine Euler grid far too coarse for a tiny epsilon explodes in every
/// replication, which makes the study fail as a whole.
#[test]
fn study_failure_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::fhn_preset();
    cfg.true_params.insert("epsilon".into(), 1e-5);
    cfg.estimators = vec![hypodiff::EstimatorKind::NewContrastComplete];
    cfg.n = 100;
    cfg.replications = 2;
    let file = dir.path().join("fhn.toml");
    std::fs::write(&file, cfg.to_toml_string()).unwrap();
    let out = run(&["replicate", "--config", s(&file), "--out-dir", s(&dir.path().join("study"))]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}
