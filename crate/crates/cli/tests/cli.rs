use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mselab_cli::output::read_table;
use mselab_cli::{emit_plot_data, ExperimentConfig, RunManifest};
use mselab_core::{Grid, ScalarField};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn mselab(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_mselab")).arg("--config").arg(&cfg).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn manifest(path: PathBuf) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const RANDOM_DN: &str = "grids = [17]\nfamily = \"random\"\nmodes = 3\n";

#[test]
fn same_config_and_seed_give_identical_files() {
    let tmp = TempDir::new().unwrap();
    let run = |name: &str, seed: &str, threads: &str| {
        let out = tmp.path().join(name);
        ok(&mselab(
            tmp.path(),
            RANDOM_DN,
            &["--out", out.to_str().unwrap(), "--seed", seed, "--threads", threads, "dn"],
        ));
        fs::read(out.join("dn_traces.csv")).unwrap()
    };
    let a = run("a", "11", "1");
    let b = run("b", "11", "4");
    let c = run("c", "12", "1");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn manifest_records_hashes_of_written_files() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("fwd");
    let text = "grids = [17]\n";
    ok(&mselab(tmp.path(), text, &["--out", out.to_str().unwrap(), "forward"]));
    let m = manifest(out.join("forward_manifest.json"));
    assert_eq!(m.command, "forward");
    assert_eq!(m.config_hash, ExperimentConfig::from_toml(text).unwrap().hash());
    assert_eq!(m.outputs.len(), 2);
    for rec in &m.outputs {
        let digest = Sha256::digest(fs::read(out.join(&rec.path)).unwrap());
        assert_eq!(rec.sha256, mselab_cli::config::hex(&digest));
    }
    assert!(m.residual_norms["newton_final"] <= 1e-10);
}

#[test]
fn forward_csv_round_trips_the_boundary_data() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("fwd");
    ok(&mselab(
        tmp.path(),
        "grids = [17]\ndata = \"0.05*x1*x2 + 0.01\"\n",
        &["--out", out.to_str().unwrap(), "forward"],
    ));
    let (header, rows) = read_table(&out.join("forward_u.csv")).unwrap();
    assert_eq!(header, ["x1", "x2", "u"]);
    assert_eq!(rows.len(), 17 * 17);
    for r in rows.iter().filter(|r| r[0] == 0.0 || r[0] == 1.0 || r[1] == 0.0 || r[1] == 1.0) {
        assert_eq!(r[2], 0.05 * r[0] * r[1] + 0.01);
    }
}

#[test]
fn bad_configs_fail_with_a_message() {
    let tmp = TempDir::new().unwrap();
    for text in ["grids = [33, 17]\n", "unknown_key = 1\n", "metric = \"sphere\"\n", "grids = \"many\"\n"] {
        let out = mselab(tmp.path(), text, &["forward"]);
        assert!(!out.status.success(), "{text}");
        assert!(stderr(&out).contains("error:"), "{text}");
    }
}

#[test]
fn stage_errors_fail_the_run() {
    let tmp = TempDir::new().unwrap();
    let out = mselab(tmp.path(), "grids = [17]\nctilde0 = \"1 + x1\"\n", &["recover"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("constant ctilde0"));
    let out = mselab(tmp.path(), "grids = [17]\n", &["recover", "--ctilde", "7=x1"]);
    assert!(!out.status.success());
}

#[test]
fn convergence_needs_three_grids() {
    let tmp = TempDir::new().unwrap();
    let out = mselab(tmp.path(), "grids = [17]\n", &["--out", tmp.path().join("c").to_str().unwrap(), "convergence"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("at least 3 grid sizes"));
}

#[test]
fn failing_grid_leaves_a_partial_table() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("conv");
    let text = "grids = [9, 17, 33]\nstudy = \"identity\"\ngamma = \"arc:2:12:left\"\n";
    ok(&mselab(tmp.path(), text, &["--out", out.to_str().unwrap(), "convergence"]));
    let table = fs::read_to_string(out.join("convergence.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].contains("NaN") && lines[1].contains("failed: arc"));
    assert!(lines[2..].iter().all(|l| l.ends_with("\"ok\"")));
    let rates = fs::read_to_string(out.join("convergence_rates.csv")).unwrap();
    let rate: f64 = rates.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(rate.is_finite());
}

#[test]
fn empty_plot_list_writes_header_only() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("empty.csv");
    emit_plot_data(&[], &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "x1,x2\n");
    let f = ScalarField::from_fn(Grid::new(5).unwrap(), |x, y| x - y);
    emit_plot_data(&[("f", &f)], &path).unwrap();
    let (_, rows) = read_table(&path).unwrap();
    assert_eq!(rows.iter().map(|r| r[2]).collect::<Vec<_>>(), f.values());
}

#[test]
fn constant_rescaling_recovers_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("gauge");
    let text = "grids = [17]\nbasis = 6\nctilde0 = \"2.5\"\nctilde3 = \"0\"\n";
    ok(&mselab(tmp.path(), text, &["--out", out.to_str().unwrap(), "pipeline"]));
    let m = manifest(out.join("pipeline_manifest.json"));
    assert!(m.residual_norms["delta_x_max"] <= 1e-8);
    let (header, rows) = read_table(&out.join("recovered_order3.csv")).unwrap();
    let col = header.iter().position(|h| h == "recovered").unwrap();
    assert!(rows.iter().all(|r| r[col].abs() <= 1e-8));
}
