use rayon::prelude::*;

use super::quadratic::goe_draws;
use super::{BayesSEOutput, MCConfig};
use crate::error::{Error, Result};
use crate::linalg::sym_eigvals;
use crate::model_gen::{ProblemSpec, QuadraticTarget};
use crate::roots::brent_log;

const GRID: usize = 2048;

#[derive(Clone, Copy, Debug)]
pub struct KdeIntegral {
    /// `(4π²/3)∫f³` for the kernel density estimate `f`.
    pub value: f64,
    pub bandwidth: f64,
}

/// `1.06·σ̂·m^(−1/5)` with `σ̂ = min(sd, IQR/1.349)`.
pub fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let m = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / m;
    let sd = (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    let quantile = |p: f64| {
        let pos = p * (m - 1.0);
        let i = pos.floor() as usize;
        let f = pos - i as f64;
        sorted[i] + f * (sorted[(i + 1).min(sorted.len() - 1)] - sorted[i])
    };
    let iqr = (quantile(0.75) - quantile(0.25)) / 1.349;
    let sigma = if iqr > 0.0 { sd.min(iqr) } else { sd };
    1.06 * sigma * m.powf(-0.2)
}

/// `(4π²/3)∫μ³` from a Gaussian KDE over pooled eigenvalues, trapezoid on a 2048-point grid.
pub fn cubic_density_integral(samples: &[f64]) -> Result<KdeIntegral> {
    if samples.len() < 2 {
        return Err(Error::NumericalQuality("KDE needs at least two samples".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let h = silverman_bandwidth(&xs);
    if !(h > 0.0) {
        return Err(Error::NumericalQuality("degenerate KDE bandwidth".into()));
    }
    let lo = xs[0] - 4.0 * h;
    let hi = xs[xs.len() - 1] + 4.0 * h;
    let dx = (hi - lo) / (GRID - 1) as f64;
    let reach = 8.0 * h;
    let mut f = vec![0.0; GRID];
    for &x in &xs {
        let i0 = (((x - reach - lo) / dx).floor().max(0.0)) as usize;
        let i1 = ((((x + reach - lo) / dx).ceil()) as usize).min(GRID - 1);
        for (i, fi) in f.iter_mut().enumerate().take(i1 + 1).skip(i0) {
            let u = (lo + i as f64 * dx - x) / h;
            *fi += (-0.5 * u * u).exp();
        }
    }
    let norm = 1.0 / (xs.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let cubes: Vec<f64> = f.iter().map(|v| (v * norm).powi(3)).collect();
    let integral = dx * (cubes.iter().sum::<f64>() - 0.5 * (cubes[0] + cubes[GRID - 1]));
    let value = 4.0 * std::f64::consts::PI.powi(2) / 3.0 * integral;
    Ok(KdeIntegral { value, bandwidth: h })
}

/// Root of `1 − 2α̃ + Δq̂/2 = (4π²/3)∫μ_Y³` with `Y = √q̂·S* + Z`; risk `2α̃/q̂ − Δ/2`.
pub fn se_quadratic_bayes(spec: &ProblemSpec, target: &QuadraticTarget, mc: &MCConfig) -> Result<BayesSEOutput> {
    spec.validate()?;
    if !(spec.delta > 0.0) {
        return Err(Error::InvalidSpec("quadratic Bayes state evolution needs delta > 0".into()));
    }
    if target.eigvals.len() != spec.d {
        return Err(Error::Dimension(format!("target has d = {}, spec has d = {}", target.eigvals.len(), spec.d)));
    }
    let a = spec.alpha_tilde();
    let s = target.eigvals.as_slice();
    let zs = goe_draws(spec.d, mc, "se_quadratic_bayes");
    let integral = |q: f64| -> Result<f64> {
        let root = q.sqrt();
        let pooled: Vec<f64> = zs
            .par_iter()
            .map(|z| {
                let mut m = z.clone();
                for (i, si) in s.iter().enumerate() {
                    m[(i, i)] += root * si;
                }
                sym_eigvals(&m)
            })
            .collect::<Vec<_>>()
            .concat();
        let v = cubic_density_integral(&pooled)?.value;
        if !(0.0..=1.5).contains(&v) {
            return Err(Error::NumericalQuality(format!("cubic density integral {v:.4} outside [0, 1.5]")));
        }
        Ok(v)
    };
    let f = |q: f64| integral(q).map(|i| 1.0 - 2.0 * a + spec.delta * q / 2.0 - i);
    let hi = 4.0 * a / spec.delta;
    let lo = hi * 1e-6;
    let (flo, fhi) = (f(lo)?, f(hi)?);
    if flo >= 0.0 {
        return Err(Error::NumericalQuality(format!(
            "alpha_tilde = {a:.3e} is below the KDE bias floor ({flo:.3e} at small q_hat); raise samples or n"
        )));
    }
    if fhi <= 0.0 {
        return Err(Error::NumericalQuality(format!("no sign change up to q_hat = {hi:.3e}")));
    }
    let root = brent_log(f, lo, hi, 1e-8, 0.0, 200, "quadratic Bayes state evolution")?;
    Ok(BayesSEOutput { q_hat: root.x, risk: 2.0 * a / root.x - spec.delta / 2.0, residual: root.fx.abs() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_samples_give_known_cube_integral() {
        // ∫φ³ = 1/(2π√3) for the standard normal density
        let mut rng = crate::rng::stream(5, "kde");
        let xs = crate::rng::normal_vec(&mut rng, 200_000);
        let v = cubic_density_integral(&xs).unwrap().value;
        let exact = 4.0 * std::f64::consts::PI.powi(2) / 3.0 / (2.0 * std::f64::consts::PI * 3f64.sqrt());
        assert!((v / exact - 1.0).abs() < 0.02, "{v} vs {exact}");
    }

    #[test]
    fn bandwidth_scales_with_spread() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x).collect();
        assert!((silverman_bandwidth(&ys) / silverman_bandwidth(&xs) - 3.0).abs() < 1e-12);
    }
}
