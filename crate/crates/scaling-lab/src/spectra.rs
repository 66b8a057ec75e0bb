//! Predicted and empirical spectra of learned weights, and the error decomposition.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigvals;
use crate::model_gen::{DiagonalTarget, ProblemSpec, QuadraticTarget};
use crate::special::norm_cdf;
use crate::state_evolution::goe_draws;
use crate::state_evolution::{DiagSEOutput, MCConfig, QuadSEOutput};

pub const BINS: usize = 200;
/// Magnitudes at or below this count toward the zero atom.
pub const ZERO_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `BINS + 1` uniform edges starting at zero.
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
    pub zero_mass: f64,
}

impl Histogram {
    /// Bins positive values on `[0, upper]`; values beyond `upper` land in the last bin.
    pub fn from_values(values: &[f64], upper: f64) -> Self {
        let edges = grid(upper);
        let mut mass = vec![0.0; BINS];
        let mut zeros = 0usize;
        let w = upper / BINS as f64;
        for &v in values {
            if v <= ZERO_TOL {
                zeros += 1;
            } else {
                mass[((v / w) as usize).min(BINS - 1)] += 1.0;
            }
        }
        let total = values.len().max(1) as f64;
        mass.iter_mut().for_each(|m| *m /= total);
        Histogram { edges, mass, zero_mass: zeros as f64 / total }
    }

    pub fn total_mass(&self) -> f64 {
        self.zero_mass + self.mass.iter().sum::<f64>()
    }

    /// Writes `bin_left,bin_right,mass` rows and a JSON sidecar holding `sidecar`.
    pub fn write_csv<T: Serialize>(&self, csv: &Path, sidecar: &T) -> Result<()> {
        let mut out = String::from("bin_left,bin_right,mass\n");
        for (i, m) in self.mass.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], m));
        }
        std::fs::write(csv, out)?;
        std::fs::write(csv.with_extension("json"), serde_json::to_string_pretty(sidecar)?)?;
        Ok(())
    }
}

fn grid(upper: f64) -> Vec<f64> {
    let upper = if upper > 0.0 { upper } else { 1.0 };
    (0..=BINS).map(|i| upper * i as f64 / BINS as f64).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumPrediction {
    pub zero_mass: f64,
    pub bulk_edge: f64,
    /// `(i, location)` for features predicted to detach from the bulk.
    pub spikes: Vec<(usize, f64)>,
    pub shift: f64,
    pub sampled_density: Histogram,
    /// Predicted positive values pooled over Monte-Carlo draws; empty when the CDF is analytic.
    #[serde(skip)]
    pub positive_samples: Vec<f64>,
    #[serde(skip)]
    analytic: Option<DiagonalLaw>,
}

#[derive(Clone, Debug)]
struct DiagonalLaw {
    theta: Vec<f64>,
    noise: f64,
    threshold: f64,
}

impl DiagonalLaw {
    /// `P(ε < |θᵢ + δz| ≤ ε + t)` averaged over coordinates.
    fn mass_between(&self, t: f64) -> f64 {
        let (e, s) = (self.threshold, self.noise);
        let band = |th: f64, a: f64, b: f64| {
            let p = |x: f64| norm_cdf((x - th) / s);
            (p(b) - p(a)) + (p(-a) - p(-b))
        };
        self.theta.iter().map(|&th| band(th, e, e + t)).sum::<f64>() / self.theta.len() as f64
    }

    fn zero_mass(&self) -> f64 {
        let (e, s) = (self.threshold, self.noise);
        self.theta.iter().map(|&th| norm_cdf((e - th) / s) - norm_cdf((-e - th) / s)).sum::<f64>()
            / self.theta.len() as f64
    }
}

impl SpectrumPrediction {
    /// CDF of the positive part conditional on being nonzero.
    pub fn positive_cdf(&self, x: f64) -> f64 {
        match &self.analytic {
            Some(law) => {
                let nz = 1.0 - law.zero_mass();
                if nz <= 0.0 {
                    1.0
                } else {
                    (law.mass_between(x.max(0.0)) / nz).min(1.0)
                }
            }
            None => {
                let k = self.positive_samples.partition_point(|&v| v <= x);
                k as f64 / self.positive_samples.len().max(1) as f64
            }
        }
    }
}

/// `δ_d = √(Δ̂d/n)` and `ε_d = ν√(2d/n)`.
pub fn diagonal_scales(se: &DiagSEOutput, spec: &ProblemSpec) -> (f64, f64) {
    let (n, d) = (spec.n as f64, spec.d as f64);
    ((se.delta_hat * d / n).sqrt(), se.nu * (2.0 * d / n).sqrt())
}

/// Law of `|ST_ε(θ*ᵢ + δz)|`; the histogram masses are exact Gaussian band probabilities.
pub fn predict_spectrum_diagonal(se: &DiagSEOutput, target: &DiagonalTarget, spec: &ProblemSpec) -> SpectrumPrediction {
    let (noise, threshold) = diagonal_scales(se, spec);
    let law = DiagonalLaw { theta: target.theta_star.iter().copied().collect(), noise, threshold };
    let top = target.theta_star.amax() + 5.0 * noise - threshold;
    let upper = 1.1 * top.max(ZERO_TOL);
    let edges = grid(upper);
    let zero_mass = if noise == 0.0 {
        law.theta.iter().filter(|t| t.abs() <= threshold).count() as f64 / law.theta.len() as f64
    } else {
        law.zero_mass()
    };
    let mass = if noise == 0.0 {
        let vals: Vec<f64> = law.theta.iter().map(|t| t.abs() - threshold).collect();
        Histogram::from_values(&vals, upper).mass
    } else {
        let cum: Vec<f64> = edges[1..BINS].iter().map(|&t| law.mass_between(t)).collect();
        let mut m = Vec::with_capacity(BINS);
        let mut prev = 0.0;
        for c in cum {
            m.push(c - prev);
            prev = c;
        }
        m.push(1.0 - zero_mass - prev);
        m
    };
    SpectrumPrediction {
        zero_mass,
        bulk_edge: threshold,
        spikes: Vec::new(),
        shift: threshold,
        sampled_density: Histogram { edges, mass, zero_mass },
        positive_samples: Vec::new(),
        analytic: (noise > 0.0).then_some(law),
    }
}

/// `f_δ(s) − λε = s + δ²/s − λε`.
pub fn spike_location(s: f64, delta: f64, shift: f64) -> f64 {
    s + delta * delta / s - shift
}

/// Eigenvalues of `S* + δZ` shifted left by `λε`, with the nonpositive part collapsed to the zero atom.
pub fn predict_spectrum_quadratic(
    se: &QuadSEOutput,
    target: &QuadraticTarget,
    lambda: f64,
    mc: &MCConfig,
) -> SpectrumPrediction {
    let delta = se.delta;
    let shift = lambda * se.eps;
    let s = target.eigvals.as_slice();
    let zs = goe_draws(s.len(), mc, "predict_spectrum_quadratic");
    let pooled: Vec<f64> = zs
        .par_iter()
        .map(|z| {
            let mut m = z * delta;
            for (i, si) in s.iter().enumerate() {
                m[(i, i)] += si;
            }
            sym_eigvals(&m)
        })
        .collect::<Vec<_>>()
        .concat();
    let shifted: Vec<f64> = pooled.iter().map(|v| (v - shift).max(0.0)).collect();
    let spikes: Vec<(usize, f64)> = s
        .iter()
        .enumerate()
        .filter(|(_, &si)| si > delta)
        .map(|(i, &si)| (i + 1, spike_location(si, delta, shift)))
        .collect();
    let top = spikes.iter().map(|p| p.1).fold(2.0 * delta - shift, f64::max);
    let upper = 1.1 * top.max(shifted.iter().copied().fold(0.0, f64::max) / 1.1).max(ZERO_TOL);
    let hist = Histogram::from_values(&shifted, upper);
    let mut positive: Vec<f64> = shifted.into_iter().filter(|&v| v > ZERO_TOL).collect();
    positive.sort_by(|a, b| a.total_cmp(b));
    SpectrumPrediction {
        zero_mass: hist.zero_mass,
        bulk_edge: 2.0 * delta - shift,
        spikes,
        shift,
        sampled_density: hist,
        positive_samples: positive,
        analytic: None,
    }
}

/// Values whose magnitudes make up the learned spectrum.
pub enum Learned<'a> {
    /// Coordinates `θ̂`; the spectrum is `|θ̂ᵢ|`.
    Vector(&'a [f64]),
    /// Eigenvalues of `Ŝ`.
    Eigenvalues(&'a [f64]),
}

pub fn spectrum_values(est: Learned<'_>) -> Vec<f64> {
    match est {
        Learned::Vector(t) => t.iter().map(|v| v.abs()).collect(),
        Learned::Eigenvalues(e) => e.to_vec(),
    }
}

pub fn empirical_spectrum(est: Learned<'_>, upper: f64) -> Histogram {
    Histogram::from_values(&spectrum_values(est), upper)
}

/// Kolmogorov-Smirnov distance of the positive part of `values` against the predicted positive law.
pub fn ks_positive(values: &[f64], pred: &SpectrumPrediction) -> f64 {
    let mut pos: Vec<f64> = values.iter().copied().filter(|&v| v > ZERO_TOL).collect();
    if pos.is_empty() {
        return if pred.zero_mass >= 1.0 - 1e-12 { 0.0 } else { 1.0 };
    }
    pos.sort_by(|a, b| a.total_cmp(b));
    let m = pos.len() as f64;
    let mut dist: f64 = 0.0;
    for (i, &x) in pos.iter().enumerate() {
        let f = pred.positive_cdf(x);
        let below = pred.positive_cdf(x - 1e-12 * x.abs().max(1e-300));
        dist = dist.max((f - (i + 1) as f64 / m).abs()).max((below - i as f64 / m).abs());
    }
    dist
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut dist: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        dist = dist.max((i as f64 / na - j as f64 / nb).abs());
    }
    dist
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecompositionRegime {
    UnderRegularized,
    OverRegularized,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    pub overfitting: f64,
    pub underfitting: f64,
    pub approximation: f64,
    pub cutoff_k: usize,
    pub regime: DecompositionRegime,
}

impl ErrorDecomposition {
    pub fn total(&self) -> f64 {
        self.overfitting + self.underfitting + self.approximation
    }
}

/// `∫_t^2 μ_sc(x)(x − t)² dx` from the closed-form truncated semicircle moments.
pub fn semicircle_tail_second_moment(t: f64) -> f64 {
    if t >= 2.0 {
        return 0.0;
    }
    let t = t.max(-2.0);
    let pi = std::f64::consts::PI;
    let root = (4.0 - t * t).sqrt();
    let asin = (t / 2.0).asin();
    let m0 = (pi - 0.5 * t * root - 2.0 * asin) / (2.0 * pi);
    let m1 = (4.0 - t * t).powf(1.5) / (6.0 * pi);
    let m2 = (pi - t / 8.0 * (2.0 * t * t - 4.0) * root - 2.0 * asin) / (2.0 * pi);
    (m2 - 2.0 * t * m1 + t * t * m0).max(0.0)
}

/// Spectrum shape used for `K′(δ)`.
#[derive(Clone, Copy, Debug)]
pub enum CutoffDerivative {
    /// `sᵢ = √d·i^(−γ)`, for which `K′(δ) = −(1/γ)d^(1/(2γ))δ^(−1/γ−1)`.
    PowerLaw { gamma: f64 },
    /// Central difference of the counting function with relative step 5%.
    FiniteDifference,
}

/// `(1/d)Σ_{i≤K}[(δ²/sᵢ − λε)² + (δ²/sᵢ)(sᵢ + δ²/sᵢ − λε)]` and `(1/d)Σ_{i>K}sᵢ²`.
fn feature_terms(s: &[f64], k: usize, delta: f64, shift: f64) -> (f64, f64) {
    let d = s.len() as f64;
    let approx: f64 = s[..k]
        .iter()
        .map(|&si| {
            let r = delta * delta / si;
            (r - shift).powi(2) + r * (si + r - shift)
        })
        .sum::<f64>()
        / d;
    let under = s[k..].iter().map(|x| x * x).sum::<f64>() / d;
    (approx + 0.0, under + 0.0)
}

fn sorted_desc(s: &[f64]) -> Vec<f64> {
    let mut s = s.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn decompose_error(
    se: &QuadSEOutput,
    target: &QuadraticTarget,
    lambda: f64,
    kprime: CutoffDerivative,
) -> Result<ErrorDecomposition> {
    let s = sorted_desc(target.eigvals.as_slice());
    let d = s.len();
    let delta = se.delta;
    let shift = lambda * se.eps;
    let under_reg = shift < 2.0 * delta;
    let k = if under_reg {
        s.partition_point(|&si| si > delta)
    } else {
        s.partition_point(|&si| si > delta && spike_location(si, delta, shift) > 0.0)
    };
    if !(delta > 0.0) || !shift.is_finite() {
        return Err(Error::Regime(format!("no cutoff for delta = {delta:.3e}, lambda*eps = {shift:.3e}")));
    }
    let (approximation, underfitting) = feature_terms(&s, k, delta, shift);
    let (overfitting, regime) = if under_reg {
        let kp = match kprime {
            // The counting function is flat once delta leaves the range of the spectrum.
            CutoffDerivative::PowerLaw { gamma } if delta > s[d - 1] && delta < s[0] => {
                -(1.0 / gamma) * (d as f64).powf(1.0 / (2.0 * gamma)) * delta.powf(-1.0 / gamma - 1.0)
            }
            CutoffDerivative::PowerLaw { .. } => 0.0,
            CutoffDerivative::FiniteDifference => {
                let h = 0.05 * delta;
                let count = |x: f64| s.partition_point(|&si| si > x) as f64;
                (count(delta + h) - count(delta - h)) / (2.0 * h)
            }
        };
        let bulk = delta * delta * semicircle_tail_second_moment(shift / delta);
        let edge = delta * kp * (2.0 * delta - shift).powi(2) / d as f64;
        (bulk + edge, DecompositionRegime::UnderRegularized)
    } else {
        (0.0, DecompositionRegime::OverRegularized)
    };
    Ok(ErrorDecomposition { overfitting, underfitting, approximation, cutoff_k: k, regime })
}

/// Risk after pruning the bulk: the feature terms evaluated at `λε = 2δ`.
pub fn predict_pruned_risk(se: &QuadSEOutput, target: &QuadraticTarget) -> f64 {
    let s = sorted_desc(target.eigvals.as_slice());
    let k = s.partition_point(|&si| si > se.delta);
    let (approx, under) = feature_terms(&s, k, se.delta, 2.0 * se.delta);
    approx + under
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn quad_out(delta: f64, eps: f64) -> QuadSEOutput {
        QuadSEOutput { delta, eps, risk: 0.0, mc_stderr: 0.0, iterations: 0 }
    }

    #[test]
    fn semicircle_moment_limits() {
        assert!((semicircle_tail_second_moment(0.0) - 0.5).abs() < 1e-14);
        assert_eq!(semicircle_tail_second_moment(2.0), 0.0);
        assert!((semicircle_tail_second_moment(-2.0) - 5.0).abs() < 1e-14);
    }

    #[test]
    fn semicircle_moment_matches_quadrature() {
        let t = 0.7;
        let m = 200_000;
        let h = (2.0 - t) / m as f64;
        let q: f64 = (0..m)
            .map(|i| {
                let x = t + (i as f64 + 0.5) * h;
                (4.0 - x * x).sqrt() / (2.0 * std::f64::consts::PI) * (x - t).powi(2) * h
            })
            .sum();
        assert!((q - semicircle_tail_second_moment(t)).abs() < 1e-9);
    }

    #[test]
    fn spike_map_examples() {
        assert_eq!(spike_location(2.0, 1.0, 0.0), 2.5);
        assert_eq!(spike_location(1.3, 1.3, 0.0), 2.6);
    }

    #[test]
    fn full_threshold_gives_unit_zero_mass() {
        let t = QuadraticTarget::diagonal(DVector::from_vec(vec![3.0, 1.0, 0.5, 0.1]));
        let se = quad_out(0.2, 10.0);
        let p = predict_spectrum_quadratic(&se, &t, 1.0, &MCConfig::default());
        assert_eq!(p.zero_mass, 1.0);
    }

    #[test]
    fn histogram_examples() {
        let z = empirical_spectrum(Learned::Eigenvalues(&[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(z.zero_mass, 1.0);
        let h = empirical_spectrum(Learned::Eigenvalues(&[1.0, 2.0, 3.0]), 3.3);
        assert_eq!(h.mass.iter().filter(|&&m| m > 0.0).count(), 3);
        assert!((h.total_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_full_threshold() {
        let spec = ProblemSpec { model: crate::model_gen::Model::Diagonal, d: 5, n: 20, gamma: 1.0, delta: 0.5, lambda: 1.0, seed: 0 };
        let target = DiagonalTarget { theta_star: DVector::from_vec(vec![1.0, -0.5, 0.2, 0.0, 0.1]), lambda_diag: DVector::from_element(5, 1.0) };
        let (n, d) = (20.0f64, 5.0f64);
        let delta_hat = 0.01 * n / d;
        let noise = (delta_hat * d / n).sqrt();
        let nu = (1.0 + 5.0 * noise + 0.01) / (2.0 * d / n).sqrt();
        let se = DiagSEOutput { nu, delta_hat, risk: 0.0, residual: 0.0, iterations: 0 };
        let p = predict_spectrum_diagonal(&se, &target, &spec);
        assert!(p.zero_mass >= 0.9999);
        assert!((p.sampled_density.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decomposition_bulk_vanishes_at_twice_delta() {
        let t = QuadraticTarget::diagonal(crate::model_gen::power_law_eigvals(100, 1.0));
        let d = decompose_error(&quad_out(0.5, 1.0), &t, 1.0, CutoffDerivative::PowerLaw { gamma: 1.0 }).unwrap();
        assert_eq!(d.regime, DecompositionRegime::OverRegularized);
        assert_eq!(d.overfitting, 0.0);
    }

    #[test]
    fn decomposition_with_every_feature_learned() {
        let t = QuadraticTarget::diagonal(crate::model_gen::power_law_eigvals(50, 1.0));
        let (delta, eps, lambda) = (0.01, 0.001, 1.0);
        let d = decompose_error(&quad_out(delta, eps), &t, lambda, CutoffDerivative::PowerLaw { gamma: 1.0 }).unwrap();
        assert_eq!(d.cutoff_k, 50);
        assert_eq!(d.underfitting, 0.0);
        let bulk = delta * delta * semicircle_tail_second_moment(lambda * eps / delta);
        assert!((d.overfitting - bulk).abs() < 1e-18);
    }

    #[test]
    fn ks_two_sample_examples() {
        assert_eq!(ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
    }
}
