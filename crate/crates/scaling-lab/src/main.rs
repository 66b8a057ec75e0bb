use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use scaling_lab::error::{Error, Result};
use scaling_lab::gamp::{gamp_lasso, gamp_matrix};
use scaling_lab::harness::{read_records, resolve_workers, run_sweep_with, write_plotdata, PlotKind, SweepConfig};
use scaling_lab::matrix_solvers::{prune, quadratic_net_erm, solve_matrix_sensing};
use scaling_lab::model_gen::{
    excess_risk_vector, frobenius_risk, gen_dataset, gen_target, power_law_eigvals, power_law_variances, Design,
    MeasurementMode, Model, ProblemSpec, QuadraticTarget, Target,
};
use scaling_lab::rates::{bo_rate, classify, lambda_opt};
use scaling_lab::spectra::{
    decompose_error, empirical_spectrum, ks_positive, predict_pruned_risk, predict_spectrum_diagonal,
    predict_spectrum_quadratic, spectrum_values, CutoffDerivative, Learned,
};
use scaling_lab::state_evolution::{
    se_bayes_diagonal, se_lasso, se_quadratic_bayes, se_quadratic_erm, D1Method, MCConfig,
};
use scaling_lab::vector_solvers::{bayes_posterior_mean, diagonal_net_erm, solve_lasso};

#[derive(Parser)]
#[command(name = "scaling-lab", version, about = "Scaling-law laboratory for diagonal and quadratic two-layer networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file: a problem spec for single runs, a sweep config for `sweep`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the problem seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path; stdout when absent (required by `spectra` and `plotdata`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to SCALING_LAB_WORKERS, then the number of cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Jsonl)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

#[derive(Args, Clone)]
struct SpecArgs {
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(short = 'd', long)]
    d: Option<usize>,
    #[arg(short = 'n', long)]
    n: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Label-noise variance.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args, Clone)]
struct McArgs {
    /// GOE draws per Monte-Carlo quantity.
    #[arg(long, default_value_t = 10)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    mc_seed: u64,
    #[arg(long)]
    finite_difference: bool,
}

impl McArgs {
    fn config(&self) -> MCConfig {
        let d1_method = if self.finite_difference { D1Method::FiniteDifference } else { D1Method::Perturbation };
        MCConfig { samples: self.mc_samples, seed: self.mc_seed, d1_method }
    }
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum ModelArg {
    Diagonal,
    Quadratic,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    VectorGaussian,
    WishartCentered,
    GoeUniversal,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Lasso,
    Matrix,
    BayesExact,
    DiagonalNet,
    QuadraticNet,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a teacher and dataset and print summary statistics.
    Gen {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Solve one instance with an exact solver.
    Solve {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, value_enum)]
        solver: Option<SolverArg>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Hidden width for `quadratic-net`.
        #[arg(long, default_value_t = 0)]
        width: usize,
    },
    /// Solve one instance with GAMP.
    Gamp {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// State-evolution fixed point for the ERM estimator.
    Se {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Bayes-optimal state-evolution risk.
    Bayes {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Empirical and predicted spectra of the learned weights, written as histogram CSV.
    Spectra {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Overfitting, underfitting and approximation terms of the quadratic SE risk.
    Decompose {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        mc: McArgs,
        /// Solve an instance and report pruned and un-pruned risks too.
        #[arg(long)]
        simulate: bool,
    },
    /// Phase classification, λ_opt and Bayes-optimal rate.
    Rates {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Run a sweep from `--config`, appending records to its output file.
    Sweep,
    /// Aggregate sweep records into tidy plot CSV.
    Plotdata {
        /// JSONL records produced by `sweep`.
        input: PathBuf,
        #[arg(long, default_value = "risk_vs_n")]
        kind: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_spec(cli: &Cli, args: &SpecArgs) -> Result<ProblemSpec> {
    let mut spec = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let value: toml::Value = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            let table = value.get("base").cloned().unwrap_or(value);
            table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?
        }
        None => ProblemSpec { model: Model::Diagonal, d: 100, n: 100, gamma: 1.0, delta: 0.5, lambda: 0.1, seed: 0 },
    };
    if let Some(m) = args.model {
        spec.model = if m == ModelArg::Diagonal { Model::Diagonal } else { Model::Quadratic };
    }
    spec.d = args.d.unwrap_or(spec.d);
    spec.n = args.n.unwrap_or(spec.n);
    spec.gamma = args.gamma.unwrap_or(spec.gamma);
    spec.delta = args.delta.unwrap_or(spec.delta);
    spec.lambda = args.lambda.unwrap_or(spec.lambda);
    spec.seed = cli.seed.unwrap_or(spec.seed);
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(spec)
}

fn mode_for(spec: &ProblemSpec, mode: Option<ModeArg>) -> MeasurementMode {
    match mode {
        Some(ModeArg::VectorGaussian) => MeasurementMode::VectorGaussian,
        Some(ModeArg::WishartCentered) => MeasurementMode::WishartCentered,
        Some(ModeArg::GoeUniversal) => MeasurementMode::GOEUniversal,
        None => MeasurementMode::default_for(spec.model),
    }
}

fn quad_target(spec: &ProblemSpec) -> QuadraticTarget {
    QuadraticTarget::diagonal(power_law_eigvals(spec.d, spec.gamma))
}

fn emit(cli: &Cli, value: &impl Serialize) -> Result<()> {
    let value = serde_json::to_value(value)?;
    let text = match cli.format {
        Format::Jsonl => format!("{}\n", serde_json::to_string(&value)?),
        Format::Csv => flat_csv(&value),
    };
    match &cli.out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Header and value rows of a flattened JSON object; nested keys joined with dots.
fn flat_csv(value: &Value) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        match v {
            Value::Object(map) => {
                for (k, x) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, x, out);
                }
            }
            Value::Array(_) => out.push((prefix.to_string(), format!("\"{}\"", v.to_string().replace('"', "\"\"")))),
            Value::String(s) => out.push((prefix.to_string(), s.clone())),
            Value::Null => out.push((prefix.to_string(), String::new())),
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut cells = Vec::new();
    walk("", value, &mut cells);
    let header: Vec<&str> = cells.iter().map(|(k, _)| k.as_str()).collect();
    let row: Vec<&str> = cells.iter().map(|(_, v)| v.as_str()).collect();
    format!("{}\n{}\n", header.join(","), row.join(","))
}

fn need_out(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Gen { spec, mode } => {
            let spec = load_spec(cli, spec)?;
            let target = gen_target(&spec)?;
            let data = gen_dataset(&spec, &target, mode_for(&spec, *mode))?;
            let y = &data.labels;
            let mean = y.mean();
            let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
            let design = match &data.design {
                Design::Vector(_) => "vector",
                Design::Wishart(_) => "wishart",
                Design::Goe { .. } => "goe",
            };
            let teacher = match &target {
                Target::Diagonal(t) => json!({ "theta_star_sq_norm_over_d": t.theta_star.norm_squared() / spec.d as f64 }),
                Target::Quadratic(t) => json!({ "q_star": t.q_star(), "top_eigval": t.eigvals[0] }),
            };
            emit(cli, &json!({ "spec": spec, "mode": data.mode, "design": design, "label_mean": mean, "label_var": var, "teacher": teacher }))?;
        }
        Command::Solve { spec, solver, mode, width } => {
            let spec = load_spec(cli, spec)?;
            let target = gen_target(&spec)?;
            let data = gen_dataset(&spec, &target, mode_for(&spec, *mode))?;
            let solver = solver.unwrap_or(if spec.model == Model::Diagonal { SolverArg::Lasso } else { SolverArg::Matrix });
            let out = match (&target, solver) {
                (Target::Diagonal(t), SolverArg::Lasso | SolverArg::DiagonalNet | SolverArg::BayesExact) => {
                    let est = match solver {
                        SolverArg::Lasso => solve_lasso(&data, spec.lambda)?,
                        SolverArg::DiagonalNet => diagonal_net_erm(&data, spec.lambda)?,
                        _ => bayes_posterior_mean(&data, &t.lambda_diag, spec.delta)?.estimate,
                    };
                    json!({ "spec": spec, "risk": excess_risk_vector(&est.theta_hat, t)?, "objective": est.objective,
                        "kkt_residual": est.kkt_residual, "iterations": est.iterations, "support_size": est.support_size })
                }
                (Target::Quadratic(t), SolverArg::Matrix | SolverArg::QuadraticNet) => {
                    let est = match solver {
                        SolverArg::Matrix => solve_matrix_sensing(&data, spec.lambda)?,
                        _ => quadratic_net_erm(&data, spec.lambda, if *width == 0 { 2 * spec.d } else { *width })?,
                    };
                    json!({ "spec": spec, "risk": frobenius_risk(&est.s_hat, t)?, "objective": est.objective,
                        "opt_residual": est.opt_residual, "iterations": est.iterations, "rank": est.rank })
                }
                _ => return Err(Error::Config("solver does not apply to this model".into())),
            };
            emit(cli, &out)?;
        }
        Command::Gamp { spec, mode } => {
            let spec = load_spec(cli, spec)?;
            let target = gen_target(&spec)?;
            let data = gen_dataset(&spec, &target, mode_for(&spec, *mode))?;
            let out = match &target {
                Target::Diagonal(t) => {
                    let (est, trace) = gamp_lasso(&data, spec.lambda)?;
                    json!({ "spec": spec, "risk": excess_risk_vector(&est.theta_hat, t)?, "iterations": est.iterations,
                        "converged": trace.converged, "kkt_residual": est.kkt_residual })
                }
                Target::Quadratic(t) => {
                    let (est, trace) = gamp_matrix(&data, spec.lambda)?;
                    json!({ "spec": spec, "risk": frobenius_risk(&est.s_hat, t)?, "iterations": est.iterations,
                        "converged": trace.converged, "opt_residual": est.opt_residual })
                }
            };
            emit(cli, &out)?;
        }
        Command::Se { spec, mc } => {
            let spec = load_spec(cli, spec)?;
            let out = match spec.model {
                Model::Diagonal => serde_json::to_value(se_lasso(&spec, &power_law_variances(spec.d, spec.gamma))?)?,
                Model::Quadratic => serde_json::to_value(se_quadratic_erm(&spec, &quad_target(&spec), &mc.config())?)?,
            };
            emit(cli, &json!({ "spec": spec, "se": out }))?;
        }
        Command::Bayes { spec, mc } => {
            let spec = load_spec(cli, spec)?;
            let out = match spec.model {
                Model::Diagonal => se_bayes_diagonal(&spec, &power_law_variances(spec.d, spec.gamma))?,
                Model::Quadratic => se_quadratic_bayes(&spec, &quad_target(&spec), &mc.config())?,
            };
            emit(cli, &json!({ "spec": spec, "bayes": out, "rate": bo_rate(&spec).ok() }))?;
        }
        Command::Spectra { spec, mc } => {
            let spec = load_spec(cli, spec)?;
            let path = need_out(cli)?;
            let target = gen_target(&spec)?;
            let data = gen_dataset(&spec, &target, MeasurementMode::default_for(spec.model))?;
            let (values, pred) = match &target {
                Target::Diagonal(t) => {
                    let est = solve_lasso(&data, spec.lambda)?;
                    let se = se_lasso(&spec, &t.lambda_diag)?;
                    (spectrum_values(Learned::Vector(est.theta_hat.as_slice())), predict_spectrum_diagonal(&se, t, &spec))
                }
                Target::Quadratic(t) => {
                    let est = solve_matrix_sensing(&data, spec.lambda)?;
                    let se = se_quadratic_erm(&spec, &quad_target(&spec), &mc.config())?;
                    let eig: Vec<f64> = est.eigvals_hat.iter().copied().collect();
                    (eig, predict_spectrum_quadratic(&se, t, spec.lambda, &mc.config()))
                }
            };
            let upper = values.iter().copied().fold(0.0, f64::max).max(1e-12);
            let hist = empirical_spectrum(Learned::Eigenvalues(&values), upper);
            let ks = ks_positive(&values, &pred);
            let summary = json!({ "spec": spec, "ks": ks, "zero_mass_empirical": hist.zero_mass, "prediction": pred });
            hist.write_csv(path, &summary)?;
            println!("{}", serde_json::to_string(&json!({ "ks": ks, "zero_mass_empirical": hist.zero_mass, "zero_mass_predicted": pred.zero_mass }))?);
        }
        Command::Decompose { spec, mc, simulate } => {
            let spec = load_spec(cli, spec)?;
            if spec.model != Model::Quadratic {
                return Err(Error::Config("decompose applies to the quadratic model".into()));
            }
            let target = quad_target(&spec);
            let se = se_quadratic_erm(&spec, &target, &mc.config())?;
            let dec = decompose_error(&se, &target, spec.lambda, CutoffDerivative::PowerLaw { gamma: spec.gamma })?;
            let mut out = json!({ "spec": spec, "se": se, "decomposition": dec, "total": dec.total(),
                "pruned_risk_predicted": predict_pruned_risk(&se, &target) });
            if *simulate {
                let t = gen_target(&spec)?;
                let data = gen_dataset(&spec, &t, MeasurementMode::default_for(spec.model))?;
                let Target::Quadratic(t) = t else { unreachable!() };
                let est = solve_matrix_sensing(&data, spec.lambda)?;
                let pruned = prune(&est, se.delta, se.eps, spec.lambda)?;
                out["risk_sim"] = json!(frobenius_risk(&est.s_hat, &t)?);
                out["risk_pruned_sim"] = json!(frobenius_risk(&pruned.s_hat, &t)?);
            }
            emit(cli, &out)?;
        }
        Command::Rates { spec } => {
            let spec = load_spec(cli, spec)?;
            emit(cli, &json!({ "spec": spec, "phase": classify(&spec)?, "lambda_opt": lambda_opt(&spec).ok(), "bayes": bo_rate(&spec).ok() }))?;
        }
        Command::Sweep => {
            let path = cli.config.as_ref().ok_or_else(|| Error::Config("sweep needs --config".into()))?;
            let mut cfg = SweepConfig::load(path)?;
            if let Some(out) = &cli.out {
                cfg.outputs = out.clone();
            }
            if let Some(seed) = cli.seed {
                cfg.base.seed = seed;
            }
            let workers = resolve_workers(cli.workers.or((cfg.workers > 0).then_some(cfg.workers)));
            let summary = run_sweep_with(&cfg, workers, |r| {
                if let Some(e) = &r.error {
                    eprintln!("task {} failed: {e}", &r.task_hash[..12]);
                }
            })?;
            eprintln!(
                "{} tasks: {} written, {} skipped, {} failed -> {}",
                summary.total,
                summary.written,
                summary.skipped,
                summary.failed,
                cfg.outputs.display()
            );
            if summary.failed > 0 {
                return Ok(4);
            }
        }
        Command::Plotdata { input, kind } => {
            let kind: PlotKind = kind.parse()?;
            let records = read_records(input)?;
            let path = need_out(cli)?;
            let rows = write_plotdata(&records, kind, path)?;
            eprintln!("{rows} rows -> {}", path.display());
        }
    }
    Ok(0)
}
