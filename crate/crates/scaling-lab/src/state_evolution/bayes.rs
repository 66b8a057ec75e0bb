use nalgebra::DVector;

use super::{BayesSEOutput, Spectrum};
use crate::error::{Error, Result};
use crate::model_gen::ProblemSpec;

pub fn se_bayes_diagonal(spec: &ProblemSpec, lambda_diag: &DVector<f64>) -> Result<BayesSEOutput> {
    spec.validate()?;
    if lambda_diag.len() != spec.d {
        return Err(Error::Dimension(format!("lambda_diag has {} entries for d = {}", lambda_diag.len(), spec.d)));
    }
    se_bayes_spectrum(spec.n as f64, spec.d as f64, spec.delta, &Spectrum::from_values(lambda_diag.as_slice()))
}

/// Bisection on `R = (1/d)Σ 1/(Λᵢ⁻¹ + q̂/d)` with `q̂ = n/(Δ + R)`.
pub fn se_bayes_spectrum(n: f64, d: f64, delta: f64, lam: &Spectrum) -> Result<BayesSEOutput> {
    let top = lam.mean() * lam.total_weight() / d;
    if n == 0.0 {
        return Ok(BayesSEOutput { q_hat: 0.0, risk: top, residual: 0.0 });
    }
    if delta == 0.0 && n >= d {
        return Err(Error::Regime("noiseless Bayes risk with n >= d is identically zero".into()));
    }
    let f = |r: f64| -> f64 {
        let q = n / (delta + r);
        lam.values.iter().zip(&lam.weights).map(|(&l, &w)| w * l * d / (d + q * l)).sum::<f64>() / d
    };
    let g = |r: f64| r - f(r);
    let mut lo = if delta == 0.0 { top * 1e-300 } else { 0.0 };
    let mut hi = top;
    if g(lo) >= 0.0 {
        return Ok(BayesSEOutput { q_hat: n / (delta + lo), risk: lo, residual: g(lo).abs() });
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let risk = 0.5 * (lo + hi);
    Ok(BayesSEOutput { q_hat: n / (delta + risk), risk, residual: g(risk).abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_gen::power_law_variances;

    #[test]
    fn zero_samples_give_prior_risk() {
        let lam = Spectrum::from_values(power_law_variances(30, 1.0).as_slice());
        let out = se_bayes_spectrum(0.0, 30.0, 0.5, &lam).unwrap();
        assert!((out.risk - lam.mean()).abs() < 1e-15);
    }

    #[test]
    fn fixed_point_holds() {
        let lam = Spectrum::from_values(power_law_variances(100, 1.0).as_slice());
        let out = se_bayes_spectrum(150.0, 100.0, 0.5, &lam).unwrap();
        assert!(out.residual < 1e-12);
        assert!(out.risk > 0.0 && out.risk < lam.mean());
    }

    #[test]
    fn noiseless_overdetermined_rejected() {
        let lam = Spectrum::from_values(&[1.0, 2.0]);
        assert!(se_bayes_spectrum(3.0, 2.0, 0.0, &lam).is_err());
    }
}
