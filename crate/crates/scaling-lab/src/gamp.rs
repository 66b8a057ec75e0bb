//! Generalised approximate message passing with scalar variances.
//!
//! The iteration is written over `DMatrix` signals so the same loop serves vectors (`d×1`)
//! and symmetric matrices (inner products are Frobenius, i.e. coordinates in an orthonormal
//! basis of the symmetric space).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob_dot, reassemble, sym_eig};
use crate::matrix_solvers::{matrix_objective, optimality_residual, MatrixEstimate};
use crate::model_gen::Dataset;
use crate::vector_solvers::{lasso_kkt, lasso_objective, soft_threshold, VectorEstimate};

/// Linear measurement operator whose entries have variance `sigma2` in orthonormal coordinates.
pub trait GampDesign {
    fn n(&self) -> usize;
    /// Number of free coordinates of the signal.
    fn dim(&self) -> usize;
    fn sigma2(&self) -> f64;
    fn shape(&self) -> (usize, usize);
    fn forward(&self, x: &DMatrix<f64>) -> DVector<f64>;
    fn adjoint(&self, s: &DVector<f64>) -> DMatrix<f64>;
}

pub struct VectorDesign<'a> {
    pub xs: &'a DMatrix<f64>,
}

impl GampDesign for VectorDesign<'_> {
    fn n(&self) -> usize {
        self.xs.nrows()
    }
    fn dim(&self) -> usize {
        self.xs.ncols()
    }
    fn sigma2(&self) -> f64 {
        1.0 / self.xs.ncols() as f64
    }
    fn shape(&self) -> (usize, usize) {
        (self.xs.ncols(), 1)
    }
    fn forward(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.xs * x.column(0)
    }
    fn adjoint(&self, s: &DVector<f64>) -> DMatrix<f64> {
        let v = self.xs.tr_mul(s);
        DMatrix::from_column_slice(v.len(), 1, v.as_slice())
    }
}

pub struct SymDesign<'a> {
    pub data: &'a Dataset,
}

impl GampDesign for SymDesign<'_> {
    fn n(&self) -> usize {
        self.data.n()
    }
    fn dim(&self) -> usize {
        let d = self.data.d();
        d * (d + 1) / 2
    }
    fn sigma2(&self) -> f64 {
        2.0 / self.data.d() as f64
    }
    fn shape(&self) -> (usize, usize) {
        (self.data.d(), self.data.d())
    }
    fn forward(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.data.sense(x)
    }
    fn adjoint(&self, s: &DVector<f64>) -> DMatrix<f64> {
        self.data.sense_adjoint(s)
    }
}

/// Output step: returns `ŝ = g(p, y, τp)` and `τs = −mean ∂g/∂p`.
pub trait OutputChannel {
    fn eval(&self, p: &DVector<f64>, y: &DVector<f64>, tau_p: f64) -> (DVector<f64>, f64);
}

/// Input step: returns the denoised estimate and the summed divergence.
pub trait InputDenoiser {
    fn eval(&self, r: &DMatrix<f64>, tau_r: f64) -> (DMatrix<f64>, f64);
}

/// Loss `c·(y − z)²`.
pub struct SquareLoss {
    pub c: f64,
}

/// `g(ω, y, v) = (y − ω)/(1 + v)` for the loss `½(y − z)²`.
pub fn lasso_output(omega: f64, y: f64, v: f64) -> f64 {
    (y - omega) / (1.0 + v)
}

impl OutputChannel for SquareLoss {
    fn eval(&self, p: &DVector<f64>, y: &DVector<f64>, tau_p: f64) -> (DVector<f64>, f64) {
        let k = 2.0 * self.c / (1.0 + 2.0 * self.c * tau_p);
        ((y - p) * k, k)
    }
}

pub struct SoftThresholdDenoiser {
    pub lambda: f64,
}

impl InputDenoiser for SoftThresholdDenoiser {
    fn eval(&self, r: &DMatrix<f64>, tau_r: f64) -> (DMatrix<f64>, f64) {
        let a = tau_r * self.lambda;
        let x = r.map(|v| soft_threshold(v, a));
        let div = r.iter().filter(|v| v.abs() > a).count() as f64;
        (x, div)
    }
}

/// PSD trace prox `R ↦ Σ ReLU(νᵢ − τλ) vᵢvᵢᵀ`.
pub struct SpectralReluDenoiser {
    pub lambda: f64,
}

impl InputDenoiser for SpectralReluDenoiser {
    fn eval(&self, r: &DMatrix<f64>, tau_r: f64) -> (DMatrix<f64>, f64) {
        let t = tau_r * self.lambda;
        let eig = sym_eig(r);
        let nu: Vec<f64> = eig.values.iter().copied().collect();
        let f: Vec<f64> = nu.iter().map(|&v| (v - t).max(0.0)).collect();
        let d = r.nrows() as f64;
        let div = 0.5 * d * spectral_divergence(&nu, t, 1.0);
        (reassemble(&eig.vectors, &f), div)
    }
}

pub struct IdentityDenoiser;

impl InputDenoiser for IdentityDenoiser {
    fn eval(&self, r: &DMatrix<f64>, _tau_r: f64) -> (DMatrix<f64>, f64) {
        (r.clone(), r.len() as f64)
    }
}

/// `(2/d)[Σᵢ Θ(νᵢ − t)/Σ̂ + Σ_{i<j} (ν̃ᵢ − ν̃ⱼ)/(νᵢ − νⱼ)]` with `ν̃ = ReLU(ν − t)/Σ̂`.
pub fn spectral_divergence(nu: &[f64], t: f64, sigma_hat: f64) -> f64 {
    let d = nu.len();
    let act: Vec<bool> = nu.iter().map(|&v| v > t).collect();
    let tilde: Vec<f64> = nu.iter().map(|&v| (v - t).max(0.0) / sigma_hat).collect();
    let mut diag = 0.0;
    let mut pairs = 0.0;
    for i in 0..d {
        if !act[i] {
            continue;
        }
        diag += 1.0 / sigma_hat;
        for j in 0..d {
            if j == i || (act[j] && j < i) {
                continue;
            }
            let gap = nu[i] - nu[j];
            pairs += if gap.abs() < 1e-12 {
                1.0 / sigma_hat
            } else {
                (tilde[i] - tilde[j]) / gap
            };
        }
    }
    2.0 / d as f64 * (diag + pairs)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GampRecord {
    pub m: f64,
    pub q: f64,
    pub v: f64,
    pub a_t: f64,
    pub v_t: f64,
    pub change: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct GampTrace {
    pub records: Vec<GampRecord>,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct GampOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GampOptions {
    fn default() -> Self {
        GampOptions { damping: 0.7, tol: 1e-10, max_iter: 20_000 }
    }
}

/// Runs damped GAMP from the zero estimate.
pub fn run_gamp<D: GampDesign, O: OutputChannel, I: InputDenoiser>(
    design: &D,
    y: &DVector<f64>,
    out: &O,
    inp: &I,
    target: Option<&DMatrix<f64>>,
    opts: &GampOptions,
) -> Result<(DMatrix<f64>, GampTrace)> {
    let n = design.n();
    let (rows, cols) = design.shape();
    let ambient = rows as f64;
    let sigma2 = design.sigma2();
    let mut x = DMatrix::zeros(rows, cols);
    let mut s = DVector::zeros(n);
    let mut tau_p = (y.norm_squared() / n.max(1) as f64).max(1e-8);
    let mut beta = opts.damping;
    let mut trace = GampTrace::default();
    let mut last_change = f64::INFINITY;
    let mut rises = 0;
    for it in 0..opts.max_iter {
        let p = design.forward(&x) - &s * tau_p;
        let (s_new, tau_s) = out.eval(&p, y, tau_p);
        s = &s * (1.0 - beta) + s_new * beta;
        let tau_r = 1.0 / (n as f64 * sigma2 * tau_s);
        let r = &x + design.adjoint(&s) * tau_r;
        let (x_new, div) = inp.eval(&r, tau_r);
        let x_prev = x.clone();
        x = &x * (1.0 - beta) + x_new * beta;
        tau_p = (1.0 - beta) * tau_p + beta * (sigma2 * tau_r * div).max(1e-300);
        let q = frob_dot(&x, &x) / ambient;
        let m = target.map(|t| frob_dot(&x, t) / ambient).unwrap_or(f64::NAN);
        let change = (&x - &x_prev).norm() / x.norm().max(1e-12);
        trace.records.push(GampRecord {
            m,
            q,
            v: div / design.dim() as f64,
            a_t: 1.0 / tau_r,
            v_t: tau_p,
            change,
        });
        if !q.is_finite() || q > 1e12 {
            return Err(Error::Diverged { context: "gamp overlap q exceeded 1e12".into(), iteration: it });
        }
        if change < opts.tol {
            trace.converged = true;
            return Ok((x, trace));
        }
        if change > last_change {
            rises += 1;
            if rises >= 3 {
                beta = (beta * 0.5).max(0.05);
                rises = 0;
            }
        } else {
            rises = 0;
        }
        last_change = change;
    }
    Err(Error::NonConvergence {
        context: "gamp".into(),
        iterations: opts.max_iter,
        residual: last_change,
        best: x.as_slice().to_vec(),
    })
}

pub fn gamp_lasso(data: &Dataset, lambda: f64) -> Result<(VectorEstimate, GampTrace)> {
    gamp_lasso_with(data, lambda, &GampOptions::default(), None)
}

pub fn gamp_lasso_with(
    data: &Dataset,
    lambda: f64,
    opts: &GampOptions,
    target: Option<&DVector<f64>>,
) -> Result<(VectorEstimate, GampTrace)> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidSpec("gamp_lasso needs lambda > 0".into()));
    }
    let xs = data.scaled_design()?;
    let tmat = target.map(|t| DMatrix::from_column_slice(t.len(), 1, t.as_slice()));
    let (x, trace) = run_gamp(
        &VectorDesign { xs: &xs },
        &data.labels,
        &SquareLoss { c: 0.5 },
        &SoftThresholdDenoiser { lambda },
        tmat.as_ref(),
        opts,
    )?;
    let theta = x.column(0).into_owned();
    let r = &data.labels - &xs * &theta;
    let est = VectorEstimate {
        objective: lasso_objective(&xs, &data.labels, &theta, lambda),
        kkt_residual: lasso_kkt(&xs.tr_mul(&r), &theta, lambda),
        iterations: trace.records.len(),
        support_size: theta.iter().filter(|&&t| t != 0.0).count(),
        theta_hat: theta,
    };
    Ok((est, trace))
}

pub fn gamp_matrix(data: &Dataset, lambda: f64) -> Result<(MatrixEstimate, GampTrace)> {
    gamp_matrix_with(data, lambda, &GampOptions { tol: 1e-8, ..Default::default() }, None)
}

pub fn gamp_matrix_with(
    data: &Dataset,
    lambda: f64,
    opts: &GampOptions,
    target: Option<&DMatrix<f64>>,
) -> Result<(MatrixEstimate, GampTrace)> {
    if !data.is_quadratic() {
        return Err(Error::InvalidSpec("gamp_matrix needs a quadratic dataset".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidSpec("gamp_matrix needs lambda > 0".into()));
    }
    let d = data.d() as f64;
    let (s, trace) = run_gamp(
        &SymDesign { data },
        &data.labels,
        &SquareLoss { c: 1.0 / d },
        &SpectralReluDenoiser { lambda },
        target,
        opts,
    )?;
    let obj = matrix_objective(data, &s, lambda);
    let res = optimality_residual(data, &s, lambda);
    let iters = trace.records.len();
    Ok((MatrixEstimate::from_matrix(s, obj, res, iters), trace))
}
