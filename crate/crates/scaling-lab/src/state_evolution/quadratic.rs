use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{D1Method, MCConfig, QuadSEOutput};
use crate::error::{Error, Result};
use crate::gamp::spectral_divergence;
use crate::linalg::{goe, sym_eig, sym_eigvals};
use crate::model_gen::{ProblemSpec, QuadraticTarget};
use crate::rng::{derive_seed, stream};
use crate::roots::{brent_log, expand_down, expand_up};

/// GOE draws for the Monte-Carlo evaluation of `J(δ, b) = ∫_b^∞ μ_δ(x)(x − b)² dx`.
pub fn goe_draws(d: usize, mc: &MCConfig, tag: &str) -> Vec<DMatrix<f64>> {
    (0..mc.samples)
        .into_par_iter()
        .map(|k| goe(d, &mut stream(derive_seed(mc.seed, &[tag, &k.to_string()]), "goe")))
        .collect()
}

struct DrawEig {
    nu: Vec<f64>,
    /// `vᵢᵀZvᵢ`, empty when only eigenvalues were needed.
    zz: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct JStats {
    pub j: f64,
    pub d1: f64,
    pub d2: f64,
    /// `(J, ∂₁J, ∂₂J)` per draw.
    pub per_draw: Vec<(f64, f64, f64)>,
}

/// `J` and its partial derivatives on a fixed set of draws, with eigendecompositions cached per `δ`.
pub struct JEstimator {
    s: Vec<f64>,
    zs: Vec<DMatrix<f64>>,
    method: D1Method,
    cache: Vec<(u64, bool, Arc<Vec<DrawEig>>)>,
}

impl JEstimator {
    /// Spectrum `s` of the teacher; rotation invariance of the GOE lets `S*` be diagonal.
    pub fn new(s: &[f64], mc: &MCConfig, tag: &str) -> Self {
        JEstimator { s: s.to_vec(), zs: goe_draws(s.len(), mc, tag), method: mc.d1_method, cache: Vec::new() }
    }

    pub fn d(&self) -> usize {
        self.s.len()
    }

    fn eig_at(&mut self, delta: f64, vectors: bool) -> Arc<Vec<DrawEig>> {
        let key = delta.to_bits();
        if let Some((_, _, e)) = self.cache.iter().find(|(k, v, _)| *k == key && (*v || !vectors)) {
            return e.clone();
        }
        let s = &self.s;
        let out: Vec<DrawEig> = self
            .zs
            .par_iter()
            .map(|z| {
                let mut m = z * delta;
                for (i, si) in s.iter().enumerate() {
                    m[(i, i)] += si;
                }
                if vectors {
                    let e = sym_eig(&m);
                    let zz = (0..s.len())
                        .map(|i| {
                            let v = e.vectors.column(i);
                            let sv: f64 = v.iter().zip(s).map(|(x, si)| si * x * x).sum();
                            (e.values[i] - sv) / delta
                        })
                        .collect();
                    DrawEig { nu: e.values.iter().copied().collect(), zz }
                } else {
                    DrawEig { nu: sym_eigvals(&m), zz: Vec::new() }
                }
            })
            .collect();
        let out = Arc::new(out);
        if self.cache.len() >= 4 {
            self.cache.remove(0);
        }
        self.cache.push((key, vectors, out.clone()));
        out
    }

    /// Monte-Carlo `J(δ, b)`, `∂₁J` and `∂₂J`.
    pub fn stats(&mut self, delta: f64, b: f64) -> JStats {
        let d = self.d() as f64;
        let j_of = |e: &DrawEig| e.nu.iter().map(|&v| (v - b).max(0.0).powi(2)).sum::<f64>() / d;
        let mut per_draw: Vec<(f64, f64, f64)> = match self.method {
            D1Method::Perturbation => {
                let eig = self.eig_at(delta, true);
                eig.iter()
                    .map(|e| {
                        let mut j = 0.0;
                        let mut d1 = 0.0;
                        let mut d2 = 0.0;
                        for (&v, &zz) in e.nu.iter().zip(&e.zz) {
                            let r = (v - b).max(0.0);
                            j += r * r;
                            d1 += r * zz;
                            d2 += r;
                        }
                        (j / d, 2.0 * d1 / d, -2.0 * d2 / d)
                    })
                    .collect()
            }
            D1Method::FiniteDifference => {
                let h = 1e-4 * delta;
                let up = self.eig_at(delta + h, false);
                let dn = self.eig_at(delta - h, false);
                let mid = self.eig_at(delta, false);
                mid.iter()
                    .zip(up.iter().zip(dn.iter()))
                    .map(|(e, (u, w))| {
                        let d2 = -2.0 * e.nu.iter().map(|&v| (v - b).max(0.0)).sum::<f64>() / d;
                        (j_of(e), (j_of(u) - j_of(w)) / (2.0 * h), d2)
                    })
                    .collect()
            }
        };
        if per_draw.is_empty() {
            per_draw.push((0.0, 0.0, 0.0));
        }
        let k = per_draw.len() as f64;
        let (j, d1, d2) = per_draw.iter().fold((0.0, 0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2));
        JStats { j: j / k, d1: d1 / k, d2: d2 / k, per_draw }
    }
}

fn check_spec(spec: &ProblemSpec, target: &QuadraticTarget) -> Result<()> {
    spec.validate()?;
    if target.eigvals.len() != spec.d {
        return Err(Error::Dimension(format!("target has d = {}, spec has d = {}", target.eigvals.len(), spec.d)));
    }
    if !(spec.lambda > 0.0) {
        return Err(Error::InvalidSpec("quadratic ERM state evolution needs lambda > 0".into()));
    }
    Ok(())
}

fn std_err(xs: &[f64]) -> f64 {
    let k = xs.len();
    if k < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / k as f64;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1) as f64;
    (var / k as f64).sqrt()
}

/// Solves `4α̃δ − δ/ε = ∂₁J(δ, λε)` and `Q* + Δ/2 + 2α̃δ² − δ²/ε = (1 − λε∂₂)J(δ, λε)`.
///
/// The second equation is combined with the first into `4α̃δ² = Δ + 2R(δ)` with
/// `R = Q* − J + δ∂₁J + λε∂₂J`; `ε(δ)` is found by an inner root search at each `δ`.
pub fn se_quadratic_erm(spec: &ProblemSpec, target: &QuadraticTarget, mc: &MCConfig) -> Result<QuadSEOutput> {
    check_spec(spec, target)?;
    let a = spec.alpha_tilde();
    let (lambda, big_delta) = (spec.lambda, spec.delta);
    let q_star = target.q_star();
    let mut est = JEstimator::new(target.eigvals.as_slice(), mc, "se_quadratic_erm");

    let solve_eps = |est: &mut JEstimator, delta: f64| -> Result<f64> {
        let start = 1.0 / (4.0 * a);
        if est.stats(delta, lambda * start).d1 == 0.0 {
            return Ok(start);
        }
        let mut phi = |eps: f64| Ok(4.0 * a - 1.0 / eps - est.stats(delta, lambda * eps).d1 / delta);
        let lo = expand_down(&mut phi, start, -1.0, 200, "eps lower bracket")?;
        let hi = expand_up(&mut phi, start, 1.0, 200, "eps upper bracket")?;
        Ok(brent_log(&mut phi, lo, hi.max(lo), 1e-12, 0.0, 300, "eps equation")?.x)
    };
    let outer = |est: &mut JEstimator, delta: f64| -> Result<(f64, f64, JStats)> {
        let eps = solve_eps(est, delta)?;
        let b = lambda * eps;
        let st = est.stats(delta, b);
        let r = q_star - st.j + delta * st.d1 + b * st.d2;
        Ok((4.0 * a * delta * delta - big_delta - 2.0 * r, eps, st))
    };

    let start = ((big_delta + 2.0 * q_star) / (4.0 * a)).sqrt().max(1e-6);
    let mut g = |delta: f64| outer(&mut est, delta).map(|t| t.0);
    let hi = expand_up(&mut g, start, 1.0, 60, "delta upper bracket")?;
    let lo = expand_down(&mut g, start * 0.25, -1.0, 60, "delta lower bracket")?;
    let root = brent_log(&mut g, lo, hi.max(lo), 1e-10, 0.0, 200, "quadratic ERM state evolution")?;
    let delta = root.x;
    let (_, eps, st) = outer(&mut est, delta)?;
    let b = lambda * eps;
    let per_r: Vec<f64> = st.per_draw.iter().map(|(j, d1, d2)| q_star - j + delta * d1 + b * d2).collect();
    Ok(QuadSEOutput {
        delta,
        eps,
        risk: 2.0 * a * delta * delta - big_delta / 2.0,
        mc_stderr: std_err(&per_r),
        iterations: root.iterations,
    })
}

/// Damped iteration on the conjugate pair `(m̂, q̂)` with `δ = √q̂/m̂`, `ε = 2/m̂`.
///
/// Overlaps `m = Tr(ŜS*)/d`, `q = Tr(Ŝ²)/d` and `Σ = ε·div/d` come from independent draw sets;
/// the updates are `m̂ = 8α̃/(1 + 4Σ/d)` and `q̂ = m̂²(Δ + 2(Q* − 2m + q))/(4α̃)`.
pub fn se_quadratic_erm_extended(
    spec: &ProblemSpec,
    target: &QuadraticTarget,
    mc: &MCConfig,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<QuadSEOutput> {
    check_spec(spec, target)?;
    let a = spec.alpha_tilde();
    let (lambda, big_delta) = (spec.lambda, spec.delta);
    let d = spec.d;
    let df = d as f64;
    let s = target.eigvals.as_slice();
    let q_star = target.q_star();
    let z_mq = goe_draws(d, mc, "extended_overlaps");
    let z_sig = goe_draws(d, mc, "extended_divergence");

    let mut m_hat = 8.0 * a;
    let mut q_hat = m_hat * m_hat * (big_delta + 2.0 * q_star) / (4.0 * a);
    let mut prev = (f64::NAN, f64::NAN);
    let mut last_change = f64::INFINITY;
    for it in 1..=max_iter {
        let delta = q_hat.sqrt() / m_hat;
        let eps = 2.0 / m_hat;
        let b = lambda * eps;
        let shifted = |z: &DMatrix<f64>| {
            let mut m = z * delta;
            for (i, si) in s.iter().enumerate() {
                m[(i, i)] += si;
            }
            m
        };
        let mq: Vec<(f64, f64)> = z_mq
            .par_iter()
            .map(|z| {
                let e = sym_eig(&shifted(z));
                let mut m = 0.0;
                let mut q = 0.0;
                for i in 0..d {
                    let r = (e.values[i] - b).max(0.0);
                    if r > 0.0 {
                        let v = e.vectors.column(i);
                        m += r * v.iter().zip(s).map(|(x, si)| si * x * x).sum::<f64>();
                        q += r * r;
                    }
                }
                (m / df, q / df)
            })
            .collect();
        let divs: Vec<f64> = z_sig
            .par_iter()
            .map(|z| 0.5 * df * spectral_divergence(&sym_eigvals(&shifted(z)), b, 1.0))
            .collect();
        let k = mq.len().max(1) as f64;
        let m = mq.iter().map(|p| p.0).sum::<f64>() / k;
        let q = mq.iter().map(|p| p.1).sum::<f64>() / k;
        let sigma = eps * divs.iter().sum::<f64>() / (divs.len().max(1) as f64) / df;
        let r = q_star - 2.0 * m + q;

        let m_new = 8.0 * a / (1.0 + 4.0 * sigma / df);
        let q_new = m_new * m_new * (big_delta + 2.0 * r) / (4.0 * a);
        m_hat = (1.0 - damping) * m_hat + damping * m_new;
        q_hat = (1.0 - damping) * q_hat + damping * q_new;
        if !(m_hat.is_finite() && q_hat.is_finite()) || m_hat <= 0.0 {
            return Err(Error::Diverged { context: "extended quadratic state evolution".into(), iteration: it });
        }
        let cur = (q_hat.sqrt() / m_hat, 2.0 / m_hat);
        last_change = ((cur.0 - prev.0) / cur.0).abs().max(((cur.1 - prev.1) / cur.1).abs());
        prev = cur;
        if last_change <= tol {
            let per_r: Vec<f64> = mq.iter().map(|(m, q)| q_star - 2.0 * m + q).collect();
            let (delta, eps) = cur;
            return Ok(QuadSEOutput {
                delta,
                eps,
                risk: 2.0 * a * delta * delta - big_delta / 2.0,
                mc_stderr: std_err(&per_r),
                iterations: it,
            });
        }
    }
    Err(Error::NonConvergence {
        context: "extended quadratic state evolution".into(),
        iterations: max_iter,
        residual: last_change,
        best: vec![prev.0, prev.1],
    })
}
