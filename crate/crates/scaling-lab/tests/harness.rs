use std::path::Path;
use std::process::Command;

use scaling_lab::harness::{emit_plotdata, read_records, run_sweep_with, PlotKind, ResultRecord, SweepConfig, CSV_HEADER};

fn config(out: &Path, body: &str) -> SweepConfig {
    let text = format!("outputs = \"{}\"\n{body}", out.display());
    SweepConfig::from_toml(&text).unwrap()
}

const SMALL: &str = r#"
seeds = [0, 1, 2]
solvers = ["lasso", "gamp_lasso"]
se = ["lasso"]

[base]
model = "diagonal"
d = 40
n = 20
gamma = 0.75
delta = 0.5
lambda = 0.3
seed = 17

[grid]
n = [20, 80]
"#;

fn strip_timing(mut r: ResultRecord) -> ResultRecord {
    r.wall_time_ms = 0.0;
    r
}

#[test]
fn records_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let one = config(&dir.path().join("one.jsonl"), SMALL);
    let three = config(&dir.path().join("three.jsonl"), SMALL);
    run_sweep_with(&one, 1, |_| {}).unwrap();
    run_sweep_with(&three, 3, |_| {}).unwrap();
    let a: Vec<_> = read_records(&one.outputs).unwrap().into_iter().map(strip_timing).collect();
    let b: Vec<_> = read_records(&three.outputs).unwrap().into_iter().map(strip_timing).collect();
    assert_eq!(a.len(), 12);
    assert_eq!(a, b);
}

#[test]
fn solvers_share_the_dataset_of_a_task() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(&dir.path().join("r.jsonl"), SMALL);
    run_sweep_with(&c, 1, |_| {}).unwrap();
    let recs = read_records(&c.outputs).unwrap();
    for pair in recs.chunks(2) {
        assert_eq!(pair[0].seed, pair[1].seed);
        let (a, b) = (pair[0].risk_sim.unwrap(), pair[1].risk_sim.unwrap());
        assert!((a - b).abs() <= 1e-3 * a, "{a} vs {b}");
    }
}

fn se_only(dir: &Path, lambda: f64, ns: &[usize], d: usize, gamma: f64) -> Vec<ResultRecord> {
    let grid: Vec<String> = ns.iter().map(|n| n.to_string()).collect();
    let body = format!(
        r#"
seeds = [0]
se = ["lasso"]

[base]
model = "diagonal"
d = {d}
n = 10
gamma = {gamma}
delta = 0.5
lambda = {lambda}
seed = 0

[grid]
n = [{}]
"#,
        grid.join(", ")
    );
    let c = config(&dir.join(format!("se-{lambda}.jsonl")), &body);
    run_sweep_with(&c, 1, |_| {}).unwrap();
    read_records(&c.outputs).unwrap()
}

fn series<'a>(rows: &'a [scaling_lab::harness::PlotRow], prefix: &str) -> Vec<&'a scaling_lab::harness::PlotRow> {
    rows.iter().filter(|r| r.series.starts_with(prefix)).collect()
}

#[test]
fn strong_regularisation_gives_a_flat_curve() {
    let dir = tempfile::tempdir().unwrap();
    let recs = se_only(dir.path(), 1e5, &[10, 30, 100, 300], 100, 1.0);
    let rows = emit_plotdata(&recs, PlotKind::RiskVsN);
    let se = series(&rows, "se:");
    assert_eq!(se.len(), 4);
    let (lo, hi) = se.iter().fold((f64::MAX, f64::MIN), |(lo, hi), r| (lo.min(r.y), hi.max(r.y)));
    assert!(hi / lo - 1.0 < 0.02, "{lo} {hi}");
    assert!(recs.iter().all(|r| r.phase == Some(scaling_lab::rates::Phase::Ib)));
}

#[test]
fn well_sampled_curve_decays_like_d_over_n() {
    let dir = tempfile::tempdir().unwrap();
    let ns = [4000, 8000, 16000, 32000];
    let recs = se_only(dir.path(), 1e-3, &ns, 100, 1.5);
    let rows = emit_plotdata(&recs, PlotKind::RiskVsN);
    let se = series(&rows, "se:");
    let (first, last) = (se[0], se[se.len() - 1]);
    let slope = (last.y / first.y).ln() / (last.x / first.x).ln();
    assert!((slope + 1.0).abs() < 0.1, "slope {slope}");
    let guide = series(&rows, "rate_guide:");
    assert_eq!(guide.len(), se.len());
}

#[test]
fn plotdata_csv_has_the_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    let recs = se_only(dir.path(), 0.1, &[50, 100], 50, 1.0);
    let csv = scaling_lab::harness::to_csv(&emit_plotdata(&recs, PlotKind::RiskVsLambda));
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER);
    assert!(lines.all(|l| l.split(',').count() == 6));
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scaling-lab"))
}

#[test]
fn cli_solve_reports_json() {
    let out = bin().args(["solve", "--model", "diagonal", "-d", "20", "-n", "30", "--lambda", "0.5", "--solver", "lasso"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.to_string().contains("kkt_residual"));
}

#[test]
fn cli_invalid_spec_exits_with_config_code() {
    let out = bin().args(["gen", "--model", "diagonal", "-d", "20", "-n", "30", "--gamma", "0.4"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_sweep_then_plotdata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    let records = dir.path().join("r.jsonl");
    let csv = dir.path().join("p.csv");
    std::fs::write(&cfg, format!("outputs = \"{}\"\n{SMALL}", records.display())).unwrap();
    let out = bin().arg("--config").arg(&cfg).args(["--workers", "2", "sweep"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = bin().arg("--out").arg(&csv).arg("plotdata").arg(&records).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with(CSV_HEADER));
    assert!(text.contains("sim:diagonal|lasso"));
}
