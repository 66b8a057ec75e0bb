use nalgebra::DVector;

use super::DiagSEOutput;
use crate::error::{Error, Result};
use crate::model_gen::ProblemSpec;
use crate::roots::{brent, brent_log, expand_down, expand_up};
use crate::special::{erf, erfc, SQRT_PI};

/// Teacher variances `Λᵢ` with multiplicities, so huge `d` can be summarized by bins.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Spectrum {
    pub fn from_values(values: &[f64]) -> Self {
        Spectrum { values: values.to_vec(), weights: vec![1.0; values.len()] }
    }

    /// `Λᵢ = d·i^(−2γ)`, exact for `i ≤ head` and geometric bins of ratio `1.002` beyond.
    pub fn power_law(d: usize, gamma: f64, head: usize) -> Self {
        let df = d as f64;
        let mut values = Vec::new();
        let mut weights = Vec::new();
        let head = head.min(d);
        for i in 1..=head {
            values.push(df * (i as f64).powf(-2.0 * gamma));
            weights.push(1.0);
        }
        let p = 1.0 - 2.0 * gamma;
        let mut a = head + 1;
        while a <= d {
            let b = (((a as f64) * 1.002).ceil() as usize).max(a + 1).min(d + 1);
            let (lo, hi) = (a as f64 - 0.5, b as f64 - 0.5);
            let integral = if p.abs() < 1e-12 { (hi / lo).ln() } else { (hi.powf(p) - lo.powf(p)) / p };
            let w = (b - a) as f64;
            values.push(df * integral / w);
            weights.push(w);
            a = b;
        }
        Spectrum { values, weights }
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Σ wᵢΛᵢ / Σ wᵢ`.
    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.weights).map(|(v, w)| v * w).sum::<f64>() / self.total_weight()
    }
}

/// `(λ/ν)√(n/2d) + (1/d)Σ erfc(ν/√(nΛᵢ/d + Δ̂)) − n/d`.
pub fn lasso_nu_equation(nu: f64, lambda: f64, delta_hat: f64, n: f64, d: f64, spec: &Spectrum) -> f64 {
    let tail: f64 = spec
        .values
        .iter()
        .zip(&spec.weights)
        .map(|(&l, &w)| w * erfc(nu / (n * l / d + delta_hat).sqrt()))
        .sum();
    let reg = if lambda == 0.0 { 0.0 } else { lambda / nu * (n / (2.0 * d)).sqrt() };
    reg + tail / d - n / d
}

/// Risk at fixed `(ν, Δ̂)`.
pub fn lasso_risk_formula(nu: f64, delta_hat: f64, n: f64, d: f64, spec: &Spectrum) -> f64 {
    let mut acc = 0.0;
    for (&l, &w) in spec.values.iter().zip(&spec.weights) {
        let s = (n * l / d + delta_hat).sqrt();
        let x = if s > 0.0 { nu / s } else { f64::INFINITY };
        let gauss = if x.is_finite() { s * (-x * x).exp() } else { 0.0 };
        let t = (n / d) * l * erf(x) + (delta_hat + 2.0 * nu * nu) * erfc(x) - 2.0 * nu / SQRT_PI * gauss;
        acc += w * t;
    }
    acc / n
}

/// Threshold `ν` solving the self-consistency equation at fixed `Δ̂`.
pub fn solve_nu(lambda: f64, delta_hat: f64, n: f64, d: f64, spec: &Spectrum) -> Result<f64> {
    let h = |nu: f64| Ok(lasso_nu_equation(nu, lambda, delta_hat, n, d, spec));
    if lambda == 0.0 {
        if n > d {
            return Ok(0.0);
        }
        if n == d {
            return Err(Error::Regime("lambda = 0 with n = d: the nu equation has no positive root and the risk diverges".into()));
        }
    }
    let lo = expand_down(h, 1.0, 1.0, 2100, "nu lower bracket")?;
    let hi = expand_up(h, 1.0, -1.0, 2100, "nu upper bracket")?;
    let lo = lo.max(f64::MIN_POSITIVE);
    let root = brent_log(h, lo, hi.max(lo), 1e-15, 1e-14, 500, "nu equation")?;
    Ok(root.x)
}

pub fn se_lasso(spec: &ProblemSpec, lambda_diag: &DVector<f64>) -> Result<DiagSEOutput> {
    if lambda_diag.len() != spec.d {
        return Err(Error::Dimension(format!("lambda_diag has {} entries for d = {}", lambda_diag.len(), spec.d)));
    }
    se_lasso_spectrum(spec, &Spectrum::from_values(lambda_diag.as_slice()))
}

/// LASSO state evolution with `d = spec.d` and a possibly binned spectrum.
pub fn se_lasso_spectrum(spec: &ProblemSpec, lam: &Spectrum) -> Result<DiagSEOutput> {
    spec.validate()?;
    let (n, d, delta, lambda) = (spec.n as f64, spec.d as f64, spec.delta, spec.lambda);
    let fixed = |r: f64| -> Result<(f64, f64)> {
        let nu = solve_nu(lambda, delta + r, n, d, lam)?;
        Ok((nu, lasso_risk_formula(nu, delta + r, n, d, lam)))
    };
    let g = |r: f64| fixed(r).map(|(_, f)| f - r);
    let g0 = g(0.0)?;
    let (risk, iterations) = if g0 <= 0.0 {
        (0.0, 0)
    } else {
        let start = lam.mean().max(delta).max(1e-300);
        let hi = expand_up(g, start, -1.0, 1100, "risk upper bracket")?;
        let root = brent(g, 0.0, hi, 1e-15 * hi, 1e-14, 500, "lasso state evolution")?;
        (root.x, root.iterations)
    };
    let (nu, f) = fixed(risk)?;
    let h_res = if lambda == 0.0 && nu == 0.0 {
        0.0
    } else {
        lasso_nu_equation(nu, lambda, delta + risk, n, d, lam).abs()
    };
    Ok(DiagSEOutput {
        nu,
        delta_hat: delta + risk,
        risk,
        residual: h_res.max((f - risk).abs()),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_gen::{power_law_variances, Model};
    use crate::special::zeta;

    fn spec(d: usize, n: usize, gamma: f64, delta: f64, lambda: f64) -> ProblemSpec {
        ProblemSpec { model: Model::Diagonal, d, n, gamma, delta, lambda, seed: 0 }
    }

    #[test]
    fn converged_equations_hold() {
        let s = spec(200, 400, 0.75, 0.5, 1.0);
        let out = se_lasso(&s, &power_law_variances(200, 0.75)).unwrap();
        assert!(out.residual <= 1e-10, "{}", out.residual);
        assert!(out.risk > 0.0 && out.nu > 0.0);
    }

    #[test]
    fn heavy_threshold_gives_underfitting_risk() {
        let d = 1000;
        let s = spec(d, 50, 1.0, 0.5, 1e6);
        let lam = power_law_variances(d, 1.0);
        let out = se_lasso(&s, &lam).unwrap();
        let tr = lam.sum() / d as f64;
        assert!((out.risk / tr - 1.0).abs() < 1e-3, "{} vs {tr}", out.risk);
        assert!((tr - zeta(2.0)).abs() < 2e-3);
    }

    #[test]
    fn unregularised_overdetermined_is_least_squares() {
        // R = Δd/(n−d) when ν = 0
        let s = spec(50, 200, 1.0, 0.5, 0.0);
        let out = se_lasso(&s, &power_law_variances(50, 1.0)).unwrap();
        assert_eq!(out.nu, 0.0);
        assert!((out.risk - 0.5 * 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn unregularised_square_is_rejected() {
        let s = spec(50, 50, 1.0, 0.5, 0.0);
        assert!(matches!(se_lasso(&s, &power_law_variances(50, 1.0)), Err(Error::Regime(_))));
    }

    #[test]
    fn binned_spectrum_matches_exact() {
        let d = 20_000;
        let s = spec(d, 300, 1.0, 0.5, 0.01);
        let exact = se_lasso(&s, &power_law_variances(d, 1.0)).unwrap();
        let binned = se_lasso_spectrum(&s, &Spectrum::power_law(d, 1.0, 2000)).unwrap();
        assert!((binned.risk / exact.risk - 1.0).abs() < 1e-4);
        assert_eq!(Spectrum::power_law(d, 1.0, 2000).total_weight(), d as f64);
    }
}
