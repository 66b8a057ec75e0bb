//! Phase classification and closed-form rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_gen::{Model, ProblemSpec};

/// Separation factor that operationalizes `≪`; inputs closer than this to a boundary are `Boundary`.
pub const SEPARATION: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Ia,
    Ib,
    II,
    III,
    IV,
    V,
    VIa,
    VIb,
    InterpolationPeak,
    Boundary,
}

/// Exponents of `n_eff`, `d` and `λ` in the rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateExponents {
    pub n_eff: f64,
    pub d: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: Phase,
    pub n_eff: f64,
    pub rate_exponents: RateExponents,
    /// The rate with unit constant (log-corrected for the diagonal model in Phases IV and V).
    pub order: f64,
    pub predicted_risk: Option<f64>,
    pub constant_source: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LambdaOptRegime {
    /// `λ_opt = O(√(n_eff/d))`.
    UpperBound,
    /// `λ_opt = Θ(√(n_eff/d))` up to logarithms.
    UpToLogs,
    Unspecified,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaOpt {
    pub lambda: f64,
    pub regime: LambdaOptRegime,
}

pub fn n_cross(model: Model, d: f64, gamma: f64) -> f64 {
    match model {
        Model::Diagonal => d.ln().powf((4.0 * gamma - 1.0) / (2.0 * gamma - 1.0)),
        Model::Quadratic => d.powf(4.0 * gamma / (14.0 * gamma - 5.0)),
    }
}

fn far_below(x: f64, y: f64) -> bool {
    x * SEPARATION <= y
}

fn exps(n_eff: f64, d: f64, lambda: f64) -> RateExponents {
    RateExponents { n_eff, d, lambda }
}

/// `Θ(n_eff^(−1+1/(2γ)) + ρ(n_eff/d))` with the diagonal log corrections.
fn small_sample_order(model: Model, n: f64, d: f64, gamma: f64, delta: f64) -> f64 {
    let e = -1.0 + 1.0 / (2.0 * gamma);
    match model {
        Model::Diagonal => {
            let l = (d / n).ln();
            (n / l).powf(e) + delta / l
        }
        Model::Quadratic => n.powf(e) + (n / d).powf(0.4),
    }
}

pub fn classify(spec: &ProblemSpec) -> Result<PhaseReport> {
    spec.validate()?;
    if spec.delta == 0.0 {
        return Err(Error::Regime("rates are stated for delta > 0 only".into()));
    }
    let (d, g, lam, delta) = (spec.d as f64, spec.gamma, spec.lambda, spec.delta);
    let n = spec.n_eff();
    let quad = spec.model == Model::Quadratic;
    let red = (n / d).sqrt();
    let upper = n / d.sqrt();
    let mid = n / d.powf(g + 0.5);
    let two_g = d.powf(2.0 * g);
    let report = |phase, rate_exponents, order: f64, predicted: Option<f64>, src: &str| PhaseReport {
        phase,
        n_eff: n,
        rate_exponents,
        order,
        predicted_risk: predicted,
        constant_source: src.into(),
    };
    let flat = exps(0.0, 0.0, 0.0);
    let boundary = || report(Phase::Boundary, flat, f64::NAN, None, "none");

    if (n / d) >= 1.0 / SEPARATION && (n / d) <= SEPARATION && lam <= 1.0 / SEPARATION {
        let c = 2.0 * (3.0 * std::f64::consts::PI * delta * delta / 32.0).powf(2.0 / 3.0) * lam.powf(-2.0 / 3.0);
        let predicted = quad.then_some(c);
        return Ok(report(Phase::InterpolationPeak, exps(0.0, 0.0, -2.0 / 3.0), lam.powf(-2.0 / 3.0), predicted, src(quad, "peak")));
    }
    if far_below(lam, red) {
        if n <= 1.0 {
            return Ok(report(Phase::Ia, flat, 1.0, None, "order-only"));
        }
        if n < SEPARATION {
            return Ok(boundary());
        }
        if far_below(n, d) {
            let nc = n_cross(spec.model, d, g);
            let order = small_sample_order(spec.model, n, d, g, delta);
            if far_below(n, nc) {
                return Ok(report(Phase::IV, exps(-1.0 + 1.0 / (2.0 * g), 0.0, 0.0), order, None, "order-only"));
            }
            if far_below(nc, n) {
                let e = if quad { exps(0.4, -0.4, 0.0) } else { flat };
                return Ok(report(Phase::V, e, order, None, "order-only"));
            }
            return Ok(boundary());
        }
        if far_below(d, n) {
            let predicted = quad.then_some(delta * d / (8.0 * n));
            let e = exps(-1.0, 1.0, 0.0);
            if far_below(n, two_g) {
                return Ok(report(Phase::VIa, e, d / n, predicted, src(quad, "phase-vi")));
            }
            if far_below(two_g, n) {
                return Ok(report(Phase::VIb, e, d / n, predicted, src(quad, "phase-vi")));
            }
        }
        return Ok(boundary());
    }
    if far_below(red, lam) {
        if far_below(upper, lam) {
            return Ok(report(Phase::Ib, flat, 1.0, None, "order-only"));
        }
        if far_below(red.max(mid), lam) && far_below(lam, upper) {
            let p = 2.0 - 1.0 / g;
            let order = (lam * d.sqrt() / n).powf(p);
            let c = 2.0 * g / (2.0 * g - 1.0) * (lam * d.sqrt() / (4.0 * n)).powf(p);
            return Ok(report(Phase::II, exps(-p, p / 2.0, p), order, quad.then_some(c), src(quad, "phase-ii")));
        }
        if far_below(lam, mid) {
            let order = (lam * d / n).powi(2);
            return Ok(report(Phase::III, exps(-2.0, 2.0, 2.0), order, quad.then_some(order / 16.0), src(quad, "phase-iii")));
        }
    }
    Ok(boundary())
}

fn src(quad: bool, tag: &'static str) -> &'static str {
    if quad {
        tag
    } else {
        "order-only"
    }
}

/// `√(n_eff/d)` with the branch of the optimal-regularization statement that applies.
pub fn lambda_opt(spec: &ProblemSpec) -> Result<LambdaOpt> {
    spec.validate()?;
    if spec.delta == 0.0 {
        return Err(Error::Regime("optimal regularization is stated for delta > 0 only".into()));
    }
    let d = spec.d as f64;
    let n = spec.n_eff();
    let nc = n_cross(spec.model, d, spec.gamma);
    let two_g = d.powf(2.0 * spec.gamma);
    let regime = if (far_below(1.0, n) && far_below(n, nc)) || far_below(two_g, n) {
        LambdaOptRegime::UpperBound
    } else if far_below(nc, n) && far_below(n, two_g) {
        LambdaOptRegime::UpToLogs
    } else {
        LambdaOptRegime::Unspecified
    };
    Ok(LambdaOpt { lambda: (n / d).sqrt(), regime })
}

/// Bayes-optimal rate branch.
pub fn bo_rate(spec: &ProblemSpec) -> Result<PhaseReport> {
    spec.validate()?;
    if spec.delta == 0.0 {
        return Err(Error::Regime("Bayes rates are stated for delta > 0 only".into()));
    }
    let d = spec.d as f64;
    let g = spec.gamma;
    let n = spec.n_eff();
    let two_g = d.powf(2.0 * g);
    let mk = |phase, e, order| PhaseReport {
        phase,
        n_eff: n,
        rate_exponents: e,
        order,
        predicted_risk: None,
        constant_source: "order-only".into(),
    };
    if far_below(1.0, n) && far_below(n, two_g) {
        let p = -1.0 + 1.0 / (2.0 * g);
        return Ok(mk(Phase::IV, exps(p, 0.0, 0.0), n.powf(p)));
    }
    if far_below(two_g, n) {
        return Ok(mk(Phase::VIb, exps(-1.0, 1.0, 0.0), d / n));
    }
    if n <= 1.0 {
        return Ok(mk(Phase::Ia, exps(0.0, 0.0, 0.0), 1.0));
    }
    Ok(mk(Phase::Boundary, exps(0.0, 0.0, 0.0), f64::NAN))
}

/// Order of the rate formula of `phase` evaluated at `(n_eff, d, λ)` regardless of where that point lies.
pub fn phase_order(phase: Phase, model: Model, n: f64, d: f64, lambda: f64, gamma: f64, delta: f64) -> f64 {
    match phase {
        Phase::Ia | Phase::Ib => 1.0,
        Phase::IV | Phase::V => small_sample_order(model, n, d, gamma, delta),
        Phase::InterpolationPeak => lambda.powf(-2.0 / 3.0),
        Phase::VIa | Phase::VIb => d / n,
        Phase::II => (lambda * d.sqrt() / n).powf(2.0 - 1.0 / gamma),
        Phase::III => (lambda * d / n).powi(2),
        Phase::Boundary => f64::NAN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(model: Model, d: usize, n: usize, lambda: f64) -> ProblemSpec {
        ProblemSpec { model, d, n, gamma: 1.0, delta: 0.5, lambda, seed: 0 }
    }

    #[test]
    fn small_sample_diagonal_is_phase_iv() {
        let r = classify(&spec(Model::Diagonal, 1_000_000, 1000, 1e-8)).unwrap();
        assert_eq!(r.phase, Phase::IV);
        assert_eq!(r.rate_exponents.n_eff, -0.5);
    }

    #[test]
    fn strong_regularisation_is_ib() {
        let r = classify(&spec(Model::Diagonal, 100, 50, 1e3)).unwrap();
        assert_eq!(r.phase, Phase::Ib);
        assert_eq!(r.rate_exponents, exps(0.0, 0.0, 0.0));
    }

    #[test]
    fn square_problem_is_peak() {
        let r = classify(&spec(Model::Diagonal, 200, 200, 1e-3)).unwrap();
        assert_eq!(r.phase, Phase::InterpolationPeak);
        assert!((r.rate_exponents.lambda + 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn noiseless_rejected() {
        let mut s = spec(Model::Diagonal, 100, 50, 1.0);
        s.delta = 0.0;
        assert!(matches!(classify(&s), Err(Error::Regime(_))));
    }

    #[test]
    fn crossover_formulas() {
        assert!((n_cross(Model::Diagonal, 10f64.exp(), 1.0) - 1000.0).abs() < 1e-9);
        assert!((n_cross(Model::Quadratic, 1e9, 1.0) - 1e4).abs() < 1e-6);
    }

    #[test]
    fn lambda_opt_order_one_at_square() {
        let l = lambda_opt(&spec(Model::Diagonal, 300, 300, 1.0)).unwrap();
        assert_eq!(l.lambda, 1.0);
    }

    #[test]
    fn bayes_branches() {
        let big = bo_rate(&spec(Model::Quadratic, 20, 20 * 8000, 1.0)).unwrap();
        assert_eq!(big.phase, Phase::VIb);
        assert_eq!(big.rate_exponents.n_eff, -1.0);
        let mid = bo_rate(&spec(Model::Quadratic, 100, 100 * 100, 1.0)).unwrap();
        assert_eq!(mid.rate_exponents.n_eff, -0.5);
        let tiny = bo_rate(&spec(Model::Quadratic, 100, 100, 1.0)).unwrap();
        assert_eq!(tiny.phase, Phase::Ia);
    }

    #[test]
    fn quadratic_constants() {
        let d = 100usize;
        let r = classify(&spec(Model::Quadratic, d, d * d * 40, 1e-3)).unwrap();
        assert_eq!(r.phase, Phase::VIa);
        assert!((r.predicted_risk.unwrap() - 0.5 * (d * d) as f64 / (8.0 * (d * d * 40) as f64)).abs() < 1e-15);
    }
}
