use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{GridPoint, SeKind, SolverKind, SweepConfig};
use crate::error::{Error, Result};
use crate::gamp::{gamp_lasso, gamp_matrix};
use crate::matrix_solvers::solve_matrix_sensing;
use crate::model_gen::{
    excess_risk_vector, frobenius_risk, gen_dataset, gen_target, power_law_eigvals, power_law_variances,
    MeasurementMode, Model, QuadraticTarget, Target,
};
use crate::rates::{classify, Phase};
use crate::rng::derive_seed;
use crate::spectra::{spectrum_values, Histogram, Learned};
use crate::state_evolution::{se_bayes_diagonal, se_lasso, se_quadratic_bayes, se_quadratic_erm, MCConfig};
use crate::vector_solvers::bayes_posterior_mean;

pub const SCHEMA_VERSION: &str = "1.0";
const SCHEMA_MAJOR: &str = "1";

/// One line of the sweep output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: String,
    pub task_hash: String,
    pub model: Model,
    pub d: usize,
    pub n: usize,
    pub n_eff: f64,
    pub gamma: f64,
    pub delta: f64,
    pub lambda: f64,
    pub base_seed: u64,
    /// Replicate label from the config seed list.
    pub replicate: u64,
    /// Seed of the generated problem instance.
    pub seed: u64,
    /// Solver name, or `"se"` for records carrying theory only.
    pub solver: String,
    pub mode: MeasurementMode,
    pub risk_sim: Option<f64>,
    pub risk_se: Option<f64>,
    pub risk_bo: Option<f64>,
    pub phase: Option<Phase>,
    /// Exponent of `n_eff` in the classified rate.
    pub rate_exponent: Option<f64>,
    /// Rate with unit constant at this point.
    pub rate_order: Option<f64>,
    pub kkt_residual: Option<f64>,
    pub iterations: Option<usize>,
    pub wall_time_ms: f64,
    /// SHA-256 of the estimate's little-endian bytes.
    pub estimate_sha256: Option<String>,
    pub error: Option<String>,
    pub spectrum: Option<Histogram>,
}

impl ResultRecord {
    pub fn point(&self) -> GridPoint {
        GridPoint { model: self.model, d: self.d, n: self.n, gamma: self.gamma, delta: self.delta, lambda: self.lambda }
    }
}

/// Parses one JSONL line, rejecting records from an unknown schema major.
pub fn parse_record(line: &str) -> Result<ResultRecord> {
    let raw: serde_json::Value = serde_json::from_str(line)?;
    let version = raw.get("schema_version").and_then(|v| v.as_str()).ok_or_else(|| Error::Config("record without schema_version".into()))?;
    if version.split('.').next() != Some(SCHEMA_MAJOR) {
        return Err(Error::Config(format!("unsupported schema version {version}")));
    }
    Ok(serde_json::from_value(raw)?)
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(parse_record(&line)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Task {
    pub point: GridPoint,
    pub point_index: usize,
    pub replicate: u64,
    pub seed: u64,
    pub solver: Option<SolverKind>,
}

#[derive(Clone, Debug, Default)]
pub struct SweepSummary {
    pub total: usize,
    pub skipped: usize,
    pub written: usize,
    pub failed: usize,
}

impl SweepConfig {
    fn mode(&self) -> MeasurementMode {
        self.mode.unwrap_or_else(|| MeasurementMode::default_for(self.base.model))
    }

    /// Grid points × seeds × solvers, in output order.
    pub fn tasks(&self) -> Result<Vec<Task>> {
        let solvers: Vec<Option<SolverKind>> =
            if self.solvers.is_empty() { vec![None] } else { self.solvers.iter().copied().map(Some).collect() };
        let mut out = Vec::new();
        for (pi, p) in self.points()?.into_iter().enumerate() {
            for &rep in &self.seeds {
                let seed = task_seed(self.base.seed, &p, rep);
                for s in &solvers {
                    out.push(Task { point: p.clone(), point_index: pi, replicate: rep, seed, solver: *s });
                }
            }
        }
        Ok(out)
    }

    fn task_hash(&self, task: &Task) -> String {
        let key = serde_json::json!({
            "schema": SCHEMA_MAJOR,
            "point": task.point,
            "seed": task.seed,
            "solver": task.solver,
            "se": self.se,
            "mode": self.mode(),
            "mc": self.mc,
            "spectra": self.spectra,
        });
        hex(&Sha256::digest(key.to_string().as_bytes()))
    }
}

/// Seed keyed on the grid coordinates and replicate, independent of scheduling.
pub fn task_seed(base: u64, p: &GridPoint, replicate: u64) -> u64 {
    let model = format!("{:?}", p.model);
    let parts = [
        model,
        p.d.to_string(),
        p.n.to_string(),
        format!("{:016x}", p.gamma.to_bits()),
        format!("{:016x}", p.delta.to_bits()),
        format!("{:016x}", p.lambda.to_bits()),
        replicate.to_string(),
    ];
    let refs: Vec<&str> = parts.iter().map(|s| s.as_str()).collect();
    derive_seed(base, &refs)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_values(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

#[derive(Clone, Debug, Default)]
struct Theory {
    se: Option<std::result::Result<f64, String>>,
    bo: Option<std::result::Result<f64, String>>,
}

fn theory(p: &GridPoint, kinds: &[SeKind], mc: &MCConfig) -> Theory {
    let spec = p.spec(0);
    let quad = || QuadraticTarget::diagonal(power_law_eigvals(p.d, p.gamma));
    let mut t = Theory::default();
    for k in kinds {
        let r = match k {
            SeKind::Lasso => se_lasso(&spec, &power_law_variances(p.d, p.gamma)).map(|o| o.risk),
            SeKind::BayesDiag => se_bayes_diagonal(&spec, &power_law_variances(p.d, p.gamma)).map(|o| o.risk),
            SeKind::QuadErm => se_quadratic_erm(&spec, &quad(), mc).map(|o| o.risk),
            SeKind::QuadBayes => se_quadratic_bayes(&spec, &quad(), mc).map(|o| o.risk),
        }
        .map_err(|e| e.to_string());
        match k {
            SeKind::Lasso | SeKind::QuadErm => t.se = Some(r),
            SeKind::BayesDiag | SeKind::QuadBayes => t.bo = Some(r),
        }
    }
    t
}

struct SimOutcome {
    risk: f64,
    kkt: f64,
    iterations: usize,
    hash: String,
    spectrum: Option<Histogram>,
}

fn simulate(task: &Task, solver: SolverKind, mode: MeasurementMode, spectra: bool) -> Result<SimOutcome> {
    let spec = task.point.spec(task.seed);
    let target = gen_target(&spec)?;
    let data = gen_dataset(&spec, &target, mode)?;
    let hist = |values: Vec<f64>| {
        let upper = values.iter().cloned().fold(0.0, f64::max).max(1e-12);
        Histogram::from_values(&values, upper)
    };
    match (&target, solver) {
        (Target::Diagonal(t), SolverKind::Lasso | SolverKind::GampLasso | SolverKind::BayesExact) => {
            let est = match solver {
                SolverKind::Lasso => crate::vector_solvers::solve_lasso(&data, spec.lambda)?,
                SolverKind::GampLasso => gamp_lasso(&data, spec.lambda)?.0,
                _ => bayes_posterior_mean(&data, &t.lambda_diag, spec.delta)?.estimate,
            };
            let spectrum = spectra.then(|| hist(spectrum_values(Learned::Vector(est.theta_hat.as_slice()))));
            Ok(SimOutcome {
                risk: excess_risk_vector(&est.theta_hat, t)?,
                kkt: est.kkt_residual,
                iterations: est.iterations,
                hash: hash_values(est.theta_hat.as_slice()),
                spectrum,
            })
        }
        (Target::Quadratic(t), SolverKind::Matrix | SolverKind::GampMatrix) => {
            let est = match solver {
                SolverKind::Matrix => solve_matrix_sensing(&data, spec.lambda)?,
                _ => gamp_matrix(&data, spec.lambda)?.0,
            };
            Ok(SimOutcome {
                risk: frobenius_risk(&est.s_hat, t)?,
                kkt: est.opt_residual,
                iterations: est.iterations,
                hash: hash_values(est.s_hat.as_slice()),
                spectrum: spectra.then(|| hist(est.eigvals_hat.iter().cloned().collect())),
            })
        }
        _ => Err(Error::Config(format!("solver {solver:?} does not apply to this model"))),
    }
}

fn run_task(cfg: &SweepConfig, task: &Task, hash: String, th: &Theory) -> ResultRecord {
    let start = Instant::now();
    let p = &task.point;
    let spec = p.spec(task.seed);
    let report = classify(&spec).ok();
    let mut errors: Vec<String> = Vec::new();
    let mut take = |r: &Option<std::result::Result<f64, String>>, label: &str| match r {
        Some(Ok(v)) => Some(*v),
        Some(Err(e)) => {
            errors.push(format!("{label}: {e}"));
            None
        }
        None => None,
    };
    let risk_se = take(&th.se, "se");
    let risk_bo = take(&th.bo, "bayes se");
    let sim = task.solver.map(|s| simulate(task, s, cfg.mode(), cfg.spectra));
    let (risk_sim, kkt, iterations, estimate_sha256, spectrum) = match sim {
        Some(Ok(o)) => (Some(o.risk), Some(o.kkt), Some(o.iterations), Some(o.hash), o.spectrum),
        Some(Err(e)) => {
            errors.push(format!("solver: {e}"));
            (None, None, None, None, None)
        }
        None => (None, None, None, None, None),
    };
    ResultRecord {
        schema_version: SCHEMA_VERSION.into(),
        task_hash: hash,
        model: p.model,
        d: p.d,
        n: p.n,
        n_eff: spec.n_eff(),
        gamma: p.gamma,
        delta: p.delta,
        lambda: p.lambda,
        base_seed: cfg.base.seed,
        replicate: task.replicate,
        seed: task.seed,
        solver: task.solver.map(|s| serde_json::to_value(s).unwrap().as_str().unwrap().to_string()).unwrap_or_else(|| "se".into()),
        mode: cfg.mode(),
        risk_sim,
        risk_se,
        risk_bo,
        phase: report.as_ref().map(|r| r.phase),
        rate_exponent: report.as_ref().map(|r| r.rate_exponents.n_eff),
        rate_order: report.as_ref().map(|r| r.order),
        kkt_residual: kkt,
        iterations,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        estimate_sha256,
        error: (!errors.is_empty()).then(|| errors.join("; ")),
        spectrum,
    }
}

/// Worker count: explicit value, then `SCALING_LAB_WORKERS`, then the machine's parallelism.
pub fn resolve_workers(explicit: Option<usize>) -> usize {
    explicit
        .filter(|&w| w > 0)
        .or_else(|| std::env::var("SCALING_LAB_WORKERS").ok().and_then(|v| v.parse().ok()).filter(|&w: &usize| w > 0))
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs every pending task and appends its record to `cfg.outputs`, skipping hashes already present.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepSummary> {
    let workers = resolve_workers((cfg.workers > 0).then_some(cfg.workers));
    run_sweep_with(cfg, workers, |_| {})
}

/// As [`run_sweep`], with an explicit pool size and a callback per written record.
pub fn run_sweep_with(cfg: &SweepConfig, workers: usize, mut on_record: impl FnMut(&ResultRecord)) -> Result<SweepSummary> {
    cfg.validate()?;
    let tasks = cfg.tasks()?;
    let done: HashSet<String> = if cfg.outputs.exists() {
        read_records(&cfg.outputs)?.into_iter().map(|r| r.task_hash).collect()
    } else {
        HashSet::new()
    };
    let pending: Vec<(Task, String)> =
        tasks.iter().map(|t| (t.clone(), cfg.task_hash(t))).filter(|(_, h)| !done.contains(h)).collect();
    let mut summary = SweepSummary { total: tasks.len(), skipped: tasks.len() - pending.len(), ..Default::default() };
    if let Some(dir) = cfg.outputs.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = OpenOptions::new().create(true).append(true).open(&cfg.outputs)?;
    if pending.is_empty() {
        return Ok(summary);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().map_err(|e| Error::Config(e.to_string()))?;
    let points = cfg.points()?;
    let needed: Vec<usize> = {
        let mut v: Vec<usize> = pending.iter().map(|(t, _)| t.point_index).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let theories: Vec<(usize, Theory)> =
        pool.install(|| needed.par_iter().map(|&i| (i, theory(&points[i], &cfg.se, &cfg.mc))).collect());
    let lookup = |i: usize| &theories[theories.binary_search_by_key(&i, |(k, _)| *k).unwrap()].1;
    for chunk in pending.chunks(4 * workers.max(1)) {
        let records: Vec<ResultRecord> =
            pool.install(|| chunk.par_iter().map(|(t, h)| run_task(cfg, t, h.clone(), lookup(t.point_index))).collect());
        for r in &records {
            writeln!(file, "{}", serde_json::to_string(r)?)?;
            summary.written += 1;
            if r.error.is_some() {
                summary.failed += 1;
            }
            on_record(r);
        }
        file.flush()?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dir: &Path, seeds: &str) -> SweepConfig {
        let text = format!(
            r#"
seeds = {seeds}
solvers = ["lasso"]
se = ["lasso", "bayes_diag"]
outputs = "{}"

[base]
model = "diagonal"
d = 30
n = 20
gamma = 0.75
delta = 0.5
lambda = 0.5
seed = 3

[grid]
n = [10, 40]
"#,
            dir.join("out.jsonl").display()
        );
        SweepConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn empty_seed_list_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(dir.path(), "[]");
        let s = run_sweep_with(&c, 1, |_| {}).unwrap();
        assert_eq!(s.written, 0);
        assert!(read_records(&c.outputs).unwrap().is_empty());
    }

    #[test]
    fn resume_skips_completed_tasks() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(dir.path(), "[0, 1]");
        assert_eq!(run_sweep_with(&c, 1, |_| {}).unwrap().written, 4);
        let again = run_sweep_with(&c, 2, |_| {}).unwrap();
        assert_eq!((again.written, again.skipped), (0, 4));
        let recs = read_records(&c.outputs).unwrap();
        assert_eq!(recs.len(), 4);
        assert!(recs.iter().all(|r| r.error.is_none() && r.risk_sim.unwrap() >= 0.0 && r.risk_bo.unwrap() <= r.risk_se.unwrap()));
    }

    #[test]
    fn unknown_schema_major_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(dir.path(), "[0]");
        run_sweep_with(&c, 1, |_| {}).unwrap();
        let text = std::fs::read_to_string(&c.outputs).unwrap();
        let line = text.lines().next().unwrap();
        assert!(parse_record(line).is_ok());
        let bumped = line.replace("\"schema_version\":\"1.0\"", "\"schema_version\":\"2.0\"");
        assert!(matches!(parse_record(&bumped), Err(Error::Config(_))));
    }

    #[test]
    fn task_seed_depends_on_coordinates_only() {
        let p = GridPoint { model: Model::Diagonal, d: 10, n: 5, gamma: 1.0, delta: 0.5, lambda: 0.1 };
        assert_eq!(task_seed(1, &p, 0), task_seed(1, &p, 0));
        assert_ne!(task_seed(1, &p, 0), task_seed(1, &p, 1));
        assert_ne!(task_seed(1, &p, 0), task_seed(2, &p, 0));
    }
}
