use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
noise = "correlated"
alphas = [0.2, 0.1]
n_train = 500
n_tune = 300
n_cal = 300
n_test = 200
trials = 8
seed = 7

[quantreg]
epochs = 200
"#;

const HEADER: &str =
    "experiment,method,score_kind,alpha,target,ejc,esc,mil,eac,r_avg,n_cal,n_tune,T,seed,n_train,labels,draws,flags";

fn ctool(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ctool"));
    cmd.args(args).env_remove("CTOOL_THREADS");
    if let Some(t) = threads {
        cmd.env("CTOOL_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn run_ok(args: &[&str], threads: Option<&str>) {
    let out = ctool(args, threads);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn results_header_and_column_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("out");
    run_ok(&["run", &cfg, "--output-dir", out.to_str().unwrap()], None);
    let csv = read(out.join("table1.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), HEADER);
    // 5 default methods × 2 levels × 3 targets.
    assert_eq!(lines.count(), 30);
    assert_eq!(read(out.join("plot_ejc.csv")).lines().next().unwrap(), "x,series,value");
    assert_eq!(read(out.join("plot_esc_minmax.csv")).lines().next().unwrap(), "x,series,value");
    assert_eq!(read(out.join("plot_mil.csv")).lines().next().unwrap(), "x,series,value");
}

#[test]
fn identical_csv_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    run_ok(&["run", &cfg, "--output-dir", a.to_str().unwrap(), "--threads", "1"], None);
    run_ok(&["run", &cfg, "--output-dir", b.to_str().unwrap()], Some("4"));
    run_ok(&["run", &cfg, "--output-dir", c.to_str().unwrap(), "--threads", "3"], None);
    let first = read(a.join("table1.csv"));
    assert_eq!(first, read(b.join("table1.csv")));
    assert_eq!(first, read(c.join("table1.csv")));
}

#[test]
fn manifest_reruns_to_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let a = dir.path().join("a");
    run_ok(&["run", &cfg, "--output-dir", a.to_str().unwrap()], None);
    let manifest = read(a.join("manifest.json"));
    let value: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(value["version"], env!("CARGO_PKG_VERSION"));
    assert!(value["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(value["config"]["seed"], 7);
    let b = dir.path().join("b");
    let manifest_path = a.join("manifest.json");
    run_ok(&["run", manifest_path.to_str().unwrap(), "--output-dir", b.to_str().unwrap()], None);
    assert_eq!(read(a.join("table1.csv")), read(b.join("table1.csv")));
}

#[test]
fn plot_ejc_matches_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("out");
    run_ok(&["run", &cfg, "--output-dir", out.to_str().unwrap()], None);
    let csv = read(out.join("table1.csv"));
    let plot = read(out.join("plot_ejc.csv"));
    for line in csv.lines().skip(1).filter(|l| l.split(',').nth(4) == Some("0")) {
        let f: Vec<&str> = line.split(',').collect();
        let series = format!("{}:{}", f[1], f[2]);
        let found = plot.lines().any(|p| {
            let g: Vec<&str> = p.split(',').collect();
            g[1] == series && g[2] == f[5]
        });
        assert!(found, "missing {series} {}", f[5]);
    }
}

#[test]
fn small_tuning_sets_are_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("out");
    run_ok(
        &["run", &cfg, "--experiment", "ntune_sweep", "--ntune", "50", "--draws", "1", "--output-dir", out.to_str().unwrap()],
        None,
    );
    let csv = read(out.join("ntune_sweep.csv"));
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[11], "50");
        let tuned = f[1] == "minimax" || f[1] == "copula";
        assert_eq!(f[17].contains("under-tuned"), tuned, "{line}");
        assert!(!f[5].is_empty());
    }
}

#[test]
fn multiround_rows_carry_eac_and_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "m.toml",
        "experiment = \"multiround\"\nalphas = [0.1]\nn_tune = 300\nn_cal = 300\nn_test = 200\ntrials = 4\n\n[round_cfg]\ntau = 0.2\n",
    );
    let out = dir.path().join("out");
    run_ok(&["run", &cfg, "--output-dir", out.to_str().unwrap()], None);
    let csv = read(out.join("multiround.csv"));
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    // Four default methods plus the separate-calibration baseline.
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[4][1], "sc");
    for r in &rows {
        assert!(r[5].is_empty() && r[4].is_empty());
        let eac: f64 = r[8].parse().unwrap();
        let rate: f64 = r[9].parse().unwrap();
        assert!((0.0..=1.0).contains(&eac));
        assert!((1.0..=16.0).contains(&rate));
    }
    assert!(out.join("plot_eac.csv").exists() && out.join("plot_r_avg.csv").exists());
}

#[test]
fn malformed_config_exits_nonzero_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let broken = write_config(dir.path(), "bad.toml", "seed = 1\nalphas = [0.1,\n");
    let out = ctool(&["run", &broken], None);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line"), "{err}");

    let unknown = write_config(dir.path(), "unknown.toml", "alphaz = [0.1]\n");
    let out = ctool(&["run", &unknown], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alphaz"));

    let out = ctool(&["run", "--alphas", "1.5"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alphas"));
}

#[test]
fn unwritable_output_dir_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let target = blocker.join("sub");
    let out = ctool(&["run", &cfg, "--trials", "1", "--output-dir", target.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("output dir"));
}
