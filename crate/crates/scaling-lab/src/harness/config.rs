use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_gen::{MeasurementMode, Model, ProblemSpec};
use crate::state_evolution::MCConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Lasso,
    Matrix,
    GampLasso,
    GampMatrix,
    BayesExact,
}

impl SolverKind {
    pub fn supports(self, model: Model) -> bool {
        match self {
            SolverKind::Lasso | SolverKind::GampLasso | SolverKind::BayesExact => model == Model::Diagonal,
            SolverKind::Matrix | SolverKind::GampMatrix => model == Model::Quadratic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeKind {
    Lasso,
    BayesDiag,
    QuadErm,
    QuadBayes,
}

impl SeKind {
    pub fn supports(self, model: Model) -> bool {
        match self {
            SeKind::Lasso | SeKind::BayesDiag => model == Model::Diagonal,
            SeKind::QuadErm | SeKind::QuadBayes => model == Model::Quadratic,
        }
    }
}

/// A grid value: a number or a power of `d` such as `"1/d"`, `"sqrt(d)"`, `"2*d^1.5"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scaled {
    Value(f64),
    Expr(String),
}

impl Scaled {
    pub fn eval(&self, d: f64) -> Result<f64> {
        match self {
            Scaled::Value(v) => Ok(*v),
            Scaled::Expr(e) => eval_expr(e, d),
        }
    }
}

fn eval_expr(expr: &str, d: f64) -> Result<f64> {
    let e: String = expr.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || Error::Config(format!("cannot parse grid expression {expr:?}"));
    let (coef, rest) = match e.split_once('*') {
        Some((c, r)) => (c.parse::<f64>().map_err(|_| bad())?, r.to_string()),
        None => (1.0, e.clone()),
    };
    let power = match rest.as_str() {
        "d" => 1.0,
        "1/d" => -1.0,
        "sqrt(d)" => 0.5,
        "1/sqrt(d)" => -0.5,
        r => {
            if let Some(p) = r.strip_prefix("d^") {
                p.trim_matches(|c| c == '(' || c == ')').parse::<f64>().map_err(|_| bad())?
            } else if let Ok(v) = r.parse::<f64>() {
                return Ok(coef * v);
            } else {
                return Err(bad());
            }
        }
    };
    Ok(coef * d.powf(power))
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default)]
    pub d: Vec<usize>,
    /// Sample sizes; mutually exclusive with `n_eff`.
    #[serde(default)]
    pub n: Vec<Scaled>,
    /// Effective sample sizes, converted with `n = n_eff` (diagonal) or `n = n_eff·d` (quadratic).
    #[serde(default)]
    pub n_eff: Vec<Scaled>,
    #[serde(default)]
    pub lambda: Vec<Scaled>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub delta: Vec<f64>,
}

fn default_workers() -> usize {
    0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ProblemSpec,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub solvers: Vec<SolverKind>,
    #[serde(default)]
    pub se: Vec<SeKind>,
    #[serde(default)]
    pub mode: Option<MeasurementMode>,
    #[serde(default)]
    pub mc: MCConfig,
    /// Store the empirical spectrum histogram in each simulation record.
    #[serde(default)]
    pub spectra: bool,
    pub outputs: PathBuf,
    /// Zero defers to the environment or the machine.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

/// One grid point before replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub model: Model,
    pub d: usize,
    pub n: usize,
    pub gamma: f64,
    pub delta: f64,
    pub lambda: f64,
}

impl GridPoint {
    pub fn spec(&self, seed: u64) -> ProblemSpec {
        ProblemSpec { model: self.model, d: self.d, n: self.n, gamma: self.gamma, delta: self.delta, lambda: self.lambda, seed }
    }
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.base.model;
        if !self.grid.n.is_empty() && !self.grid.n_eff.is_empty() {
            return Err(Error::Config("grid.n and grid.n_eff are mutually exclusive".into()));
        }
        if let Some(s) = self.solvers.iter().find(|s| !s.supports(model)) {
            return Err(Error::Config(format!("solver {s:?} is incompatible with the {model:?} model")));
        }
        if let Some(s) = self.se.iter().find(|s| !s.supports(model)) {
            return Err(Error::Config(format!("state evolution {s:?} is incompatible with the {model:?} model")));
        }
        if self.solvers.is_empty() && self.se.is_empty() {
            return Err(Error::Config("nothing to run: both solvers and se are empty".into()));
        }
        let points = self.points()?;
        if points.is_empty() {
            return Err(Error::Config("grid is empty".into()));
        }
        for p in &points {
            p.spec(0).validate().map_err(|e| Error::Config(format!("grid point {p:?}: {e}")))?;
        }
        Ok(())
    }

    /// Cartesian product of the grid, with base values filling empty axes.
    pub fn points(&self) -> Result<Vec<GridPoint>> {
        let b = &self.base;
        let or = |v: &Vec<f64>, x: f64| if v.is_empty() { vec![x] } else { v.clone() };
        let ds = if self.grid.d.is_empty() { vec![b.d] } else { self.grid.d.clone() };
        let gammas = or(&self.grid.gamma, b.gamma);
        let deltas = or(&self.grid.delta, b.delta);
        let mut out = Vec::new();
        for &d in &ds {
            let df = d as f64;
            let ns: Vec<usize> = if !self.grid.n_eff.is_empty() {
                let mult = if b.model == Model::Quadratic { df } else { 1.0 };
                self.grid.n_eff.iter().map(|s| s.eval(df).map(|v| (v * mult).round() as usize)).collect::<Result<_>>()?
            } else if !self.grid.n.is_empty() {
                self.grid.n.iter().map(|s| s.eval(df).map(|v| v.round() as usize)).collect::<Result<_>>()?
            } else {
                vec![b.n]
            };
            let lambdas: Vec<f64> = if self.grid.lambda.is_empty() {
                vec![b.lambda]
            } else {
                self.grid.lambda.iter().map(|s| s.eval(df)).collect::<Result<_>>()?
            };
            for &n in &ns {
                for &lambda in &lambdas {
                    for &gamma in &gammas {
                        for &delta in &deltas {
                            out.push(GridPoint { model: b.model, d, n, gamma, delta, lambda });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: &str = r#"
seeds = [0, 1]
solvers = ["lasso"]
se = ["lasso"]
outputs = "out.jsonl"

[base]
model = "diagonal"
d = 100
n = 50
gamma = 0.75
delta = 0.5
lambda = 1.0
seed = 7

[grid]
d = [100, 200]
lambda = ["1/d", 1.0, "sqrt(d)"]
n = [50, "2*d"]
"#;

    #[test]
    fn parses_and_expands() {
        let cfg = SweepConfig::from_toml(CFG).unwrap();
        let pts = cfg.points().unwrap();
        assert_eq!(pts.len(), 2 * 3 * 2);
        assert!(pts.iter().any(|p| p.d == 200 && p.n == 400 && (p.lambda - 200f64.sqrt()).abs() < 1e-12));
        assert!(pts.iter().any(|p| p.d == 100 && (p.lambda - 0.01).abs() < 1e-15));
    }

    #[test]
    fn rejects_incompatible_solver() {
        let bad = CFG.replace(r#"solvers = ["lasso"]"#, r#"solvers = ["matrix"]"#);
        assert!(matches!(SweepConfig::from_toml(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn expressions() {
        assert_eq!(eval_expr("d^-0.5", 100.0).unwrap(), 0.1);
        assert_eq!(eval_expr("3*d", 10.0).unwrap(), 30.0);
        assert!(eval_expr("log(d)", 10.0).is_err());
    }
}
