use std::path::Path;
use std::process::{Command, Output};

fn mixborrow(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixborrow"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .env_remove("MIXBORROW_THREADS")
        .output()
        .expect("binary runs")
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON in stderr: {stderr}"));
    serde_json::from_str(line).unwrap()
}

const SIM: &str = "[chain]\nseed = 3\n\n[simulate]\nscenario = \"sim_a\"\nn = 60\np = 2\nl = 5\n";
const FIT: &str = "[model]\nkind = \"dlnm\"\nn_exposures = 2\nn_lags = 5\nreduction_dim = 3\n\n\
                   [chain]\nn_iter = 40\nburn_in = 10\nthin = 2\nseed = 5\n\n[data]\npath = \"sim/data.csv\"\n";

fn simulated(root: &Path) {
    std::fs::write(root.join("sim.toml"), SIM).unwrap();
    let out = mixborrow(&["simulate", "--config", "sim.toml", "--out", "sim"], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn fitted(root: &Path) {
    simulated(root);
    std::fs::write(root.join("fit.toml"), FIT).unwrap();
    let out = mixborrow(&["fit", "--config", "fit.toml", "--out", "fit"], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_writes_data_truth_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    simulated(tmp.path());
    let dir = tmp.path().join("sim");
    for f in ["data.csv", "truth.json", "config.toml", "manifest.json"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 3);
    let header = std::fs::read_to_string(dir.join("data.csv")).unwrap();
    let header = header.lines().next().unwrap();
    assert!(header.starts_with("y1,y2,y3,y4,x1_l1"), "{header}");
}

#[test]
fn fit_outputs_have_documented_columns() {
    let tmp = tempfile::tempdir().unwrap();
    fitted(tmp.path());
    let dir = tmp.path().join("fit");
    let first_line = |f: &str| std::fs::read_to_string(dir.join(f)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(first_line("erf_k1_j1.csv"), "x,mean,lower,upper");
    assert!(first_line("contrasts.csv").starts_with("outcome,exposure,lag,mean,lower,upper"));
    assert!(dir.join("heatmap_beta.csv").is_file() && dir.join("heatmap_theta.csv").is_file());
    let waic: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("waic.json")).unwrap()).unwrap();
    assert!(waic["waic"].as_f64().unwrap().is_finite());
    for f in ["draws.csv", "loglik.bin", "model.json", "meta.json"] {
        assert!(dir.join("chain_1").join(f).is_file(), "{f} missing");
    }
    // the manifest lists every artifact with its digest
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    let listed: Vec<&str> = manifest["artifacts"].as_array().unwrap().iter().map(|a| a["path"].as_str().unwrap()).collect();
    assert!(listed.contains(&"erf_k1_j1.csv"));
    assert!(listed.iter().any(|p| p.ends_with("draws.csv")));
}

#[test]
fn heatmap_request_writes_both_matrices() {
    let tmp = tempfile::tempdir().unwrap();
    fitted(tmp.path());
    std::fs::write(tmp.path().join("sum.toml"), "[summarize]\nchain = \"fit/chain_1\"\nrequests = [\"heatmap\"]\n").unwrap();
    let out = mixborrow(&["summarize", "--config", "sum.toml", "--out", "sum"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("sum");
    let beta = std::fs::read_to_string(dir.join("heatmap_beta.csv")).unwrap();
    assert!(dir.join("heatmap_theta.csv").is_file());
    // 4 outcomes x 2 exposures -> 8 labelled rows
    assert_eq!(beta.lines().count(), 9);
    assert!(!dir.join("waic.json").exists());
}

#[test]
fn unknown_summary_request_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    fitted(tmp.path());
    std::fs::write(tmp.path().join("sum.toml"), "[summarize]\nchain = \"fit/chain_1\"\nrequests = [\"heatmapz\"]\n").unwrap();
    let out = mixborrow(&["summarize", "--config", "sum.toml", "--out", "sum"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().contains("heatmapz"));
}

#[test]
fn empty_chain_reports_no_draws() {
    let tmp = tempfile::tempdir().unwrap();
    fitted(tmp.path());
    let draws = tmp.path().join("fit/chain_1/draws.csv");
    let header = std::fs::read_to_string(&draws).unwrap().lines().next().unwrap().to_string();
    std::fs::write(&draws, format!("{header}\n")).unwrap();
    std::fs::write(tmp.path().join("fit/chain_1/loglik.bin"), b"").unwrap();
    std::fs::write(tmp.path().join("sum.toml"), "[summarize]\nchain = \"fit/chain_1\"\nrequests = [\"erf\"]\n").unwrap();
    let out = mixborrow(&["summarize", "--config", "sum.toml", "--out", "sum"], tmp.path());
    assert!(!out.status.success());
    let msg = error_json(&out)["error"]["message"].as_str().unwrap().to_lowercase();
    assert!(msg.contains("no draws"), "{msg}");
}

#[test]
fn missing_outcome_column_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    simulated(tmp.path());
    let path = tmp.path().join("sim/data.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let renamed = text.replacen("y1,y2,", "y1,w2,", 1);
    std::fs::write(tmp.path().join("bad.csv"), renamed).unwrap();
    std::fs::write(tmp.path().join("fit.toml"), FIT.replace("sim/data.csv", "bad.csv")).unwrap();
    let out = mixborrow(&["fit", "--config", "fit.toml", "--out", "fit"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let msg = error_json(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("y2"), "{msg}");
}

#[test]
fn missing_config_and_unknown_keys_exit_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mixborrow(&["fit", "--config", "nope.toml", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(tmp.path().join("bad.toml"), "[chain]\nn_iterations = 5\n").unwrap();
    let out = mixborrow(&["simulate", "--config", "bad.toml", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("x").join("data.csv").exists());
}

#[test]
fn help_exits_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mixborrow(&["--help"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["fit", "simulate", "study", "summarize", "importance"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn importance_writes_one_row_per_group() {
    let tmp = tempfile::tempdir().unwrap();
    fitted(tmp.path());
    std::fs::write(
        tmp.path().join("imp.toml"),
        "[importance]\nchain = \"fit/chain_1\"\ndata = \"sim/data.csv\"\nmax_draws = 5\n",
    )
    .unwrap();
    let out = mixborrow(&["importance", "--config", "imp.toml", "--out", "imp"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(tmp.path().join("imp/importance.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("outcome,group,mean,lower,upper,excursions"));
    // 4 outcomes x 2 exposure groups
    assert_eq!(lines.count(), 8);
}

#[test]
fn study_reuses_cached_replications() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "[chain]\nn_iter = 30\nburn_in = 10\nthin = 2\nseed = 9\n\n\
               [study]\nscenario = \"sim_b1\"\nn = 50\nestimators = [\"clustered\"]\nn_reps = 2\n";
    std::fs::write(tmp.path().join("study.toml"), cfg).unwrap();
    let out = mixborrow(&["study", "--config", "study.toml", "--out", "st"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cache = tmp.path().join("st/cache/rep0000_clustered.json");
    let mut cached: serde_json::Value = serde_json::from_slice(&std::fs::read(&cache).unwrap()).unwrap();
    cached["mse_surface"] = serde_json::json!(12345.5);
    std::fs::write(&cache, serde_json::to_vec(&cached).unwrap()).unwrap();
    let out = mixborrow(&["study", "--config", "study.toml", "--out", "st"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(tmp.path().join("st/metrics.csv")).unwrap();
    assert!(metrics.contains("12345.5"), "cached replication was not reused");
}

#[test]
fn threads_flag_and_env_agree() {
    let tmp = tempfile::tempdir().unwrap();
    simulated(tmp.path());
    std::fs::write(tmp.path().join("fit.toml"), FIT.replace("seed = 5", "seed = 5\nn_chains = 2")).unwrap();
    let a = mixborrow(&["fit", "--config", "fit.toml", "--out", "a", "--threads", "1"], tmp.path());
    assert!(a.status.success());
    let b = Command::new(env!("CARGO_BIN_EXE_mixborrow"))
        .args(["fit", "--config", "fit.toml", "--out", "b"])
        .current_dir(tmp.path())
        .env("MIXBORROW_THREADS", "2")
        .output()
        .unwrap();
    assert!(b.status.success());
    for f in ["chain_1/draws.csv", "chain_2/draws.csv", "erf_k1_j1.csv", "manifest.json"] {
        assert_eq!(std::fs::read(tmp.path().join("a").join(f)).unwrap(), std::fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
}
