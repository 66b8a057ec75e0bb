//! LASSO, the diagonal two-layer network and the Gaussian posterior mean.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_gen::Dataset;
use crate::rng::{normal, stream};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VectorEstimate {
    pub theta_hat: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub support_size: usize,
}

pub fn soft_threshold(x: f64, a: f64) -> f64 {
    (x - a).max(0.0) - (-x - a).max(0.0)
}

/// `½‖y − X̃θ‖² + λ‖θ‖₁`.
pub fn lasso_objective(xs: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * (y - xs * theta).norm_squared() + lambda * theta.lp_norm(1)
}

/// Largest violation of the LASSO optimality conditions given correlations `c = X̃ᵀr`.
pub fn lasso_kkt(c: &DVector<f64>, theta: &DVector<f64>, lambda: f64) -> f64 {
    c.iter()
        .zip(theta.iter())
        .map(|(&ci, &ti)| {
            if ti == 0.0 {
                (ci.abs() - lambda).max(0.0)
            } else {
                (ci - lambda * ti.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct LassoOptions {
    pub gap_tol: f64,
    pub kkt_tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions { gap_tol: 1e-10, kkt_tol: 1e-9, max_sweeps: 200_000 }
    }
}

pub fn solve_lasso(data: &Dataset, lambda: f64) -> Result<VectorEstimate> {
    let xs = data.scaled_design()?;
    lasso_cd(&xs, &data.labels, lambda, &LassoOptions::default(), None)
}

/// Cyclic coordinate descent with active-set passes on a pre-scaled design.
pub fn lasso_cd(
    xs: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    opts: &LassoOptions,
    warm: Option<&DVector<f64>>,
) -> Result<VectorEstimate> {
    if lambda < 0.0 {
        return Err(Error::InvalidSpec("lambda must be nonnegative".into()));
    }
    let (n, d) = xs.shape();
    if y.len() != n {
        return Err(Error::Dimension("labels and design disagree".into()));
    }
    let norms: Vec<f64> = (0..d).map(|j| xs.column(j).norm_squared()).collect();
    let mut theta = warm.cloned().unwrap_or_else(|| DVector::zeros(d));
    let mut r = y - xs * &theta;
    let mut iterations = 0;
    let mut last_kkt = f64::INFINITY;

    let update = |j: usize, theta: &mut DVector<f64>, r: &mut DVector<f64>| -> f64 {
        if norms[j] == 0.0 {
            return 0.0;
        }
        let col = xs.column(j);
        let c = col.dot(r);
        let old = theta[j];
        let new = soft_threshold(old + c / norms[j], lambda / norms[j]);
        if new != old {
            r.axpy(old - new, &col, 1.0);
            theta[j] = new;
        }
        (new - old).abs() * norms[j].sqrt()
    };

    while iterations < opts.max_sweeps {
        iterations += 1;
        let mut max_step: f64 = 0.0;
        for j in 0..d {
            max_step = max_step.max(update(j, &mut theta, &mut r));
        }
        let active: Vec<usize> = (0..d).filter(|&j| theta[j] != 0.0).collect();
        let scale = y.norm().max(1e-300);
        for _ in 0..1000 {
            let mut step: f64 = 0.0;
            for &j in &active {
                step = step.max(update(j, &mut theta, &mut r));
            }
            if step <= 1e-15 * scale {
                break;
            }
        }
        let c = xs.tr_mul(&r);
        let kkt = lasso_kkt(&c, &theta, lambda);
        last_kkt = kkt;
        let primal = 0.5 * r.norm_squared() + lambda * theta.lp_norm(1);
        let gap_ok = if lambda > 0.0 {
            let m = c.amax();
            let s = if m > lambda { lambda / m } else { 1.0 };
            let dual = 0.5 * y.norm_squared() - 0.5 * (y - &r * s).norm_squared();
            primal - dual <= opts.gap_tol * primal.max(1e-300)
        } else {
            true
        };
        if gap_ok && kkt <= opts.kkt_tol {
            let support_size = theta.iter().filter(|&&t| t != 0.0).count();
            return Ok(VectorEstimate { theta_hat: theta, objective: primal, kkt_residual: kkt, iterations, support_size });
        }
        if max_step == 0.0 && kkt <= opts.kkt_tol * 10.0 {
            break;
        }
    }
    Err(Error::NonConvergence {
        context: "lasso coordinate descent".into(),
        iterations,
        residual: last_kkt,
        best: theta.as_slice().to_vec(),
    })
}

#[derive(Clone, Debug)]
pub struct NetOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub init_std: f64,
}

impl Default for NetOptions {
    fn default() -> Self {
        NetOptions { max_iter: 2_000_000, grad_tol: 1e-10, init_std: 1e-2 }
    }
}

/// `½‖y − X̃(u⊙w)‖² + (λ/2)(‖u‖² + ‖w‖²)`.
pub fn diagonal_net_objective(xs: &DMatrix<f64>, y: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>, lambda: f64) -> f64 {
    let theta = u.component_mul(w);
    0.5 * (y - xs * theta).norm_squared() + 0.5 * lambda * (u.norm_squared() + w.norm_squared())
}

/// Canonical balanced factorisation `uᵢ = sign(θᵢ)|θᵢ|^½`, `wᵢ = |θᵢ|^½`.
pub fn balanced_factors(theta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    (theta.map(|t| t.signum() * t.abs().sqrt() * (t != 0.0) as i32 as f64), theta.map(|t| t.abs().sqrt()))
}

pub fn diagonal_net_erm(data: &Dataset, lambda: f64) -> Result<VectorEstimate> {
    diagonal_net_erm_with(data, lambda, &NetOptions::default(), None)
}

/// Gradient descent with Armijo backtracking on the two-layer parameterisation.
pub fn diagonal_net_erm_with(
    data: &Dataset,
    lambda: f64,
    opts: &NetOptions,
    init: Option<(DVector<f64>, DVector<f64>)>,
) -> Result<VectorEstimate> {
    let xs = data.scaled_design()?;
    let y = &data.labels;
    let d = xs.ncols();
    let (mut u, mut w) = init.unwrap_or_else(|| {
        let mut rng = stream(data.seed, "diagonal_net_init");
        (
            DVector::from_fn(d, |_, _| opts.init_std * normal(&mut rng)),
            DVector::from_fn(d, |_, _| opts.init_std * normal(&mut rng)),
        )
    });
    let grads = |u: &DVector<f64>, w: &DVector<f64>| {
        let r = y - &xs * u.component_mul(w);
        let c = xs.tr_mul(&r);
        let gu = -w.component_mul(&c) + u * lambda;
        let gw = -u.component_mul(&c) + w * lambda;
        (gu, gw)
    };
    let mut f = diagonal_net_objective(&xs, y, &u, &w, lambda);
    let mut step = 1.0 / (xs.norm_squared() + lambda + 1.0);
    let mut iterations = 0;
    let mut gnorm = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        let (gu, gw) = grads(&u, &w);
        gnorm = (gu.norm_squared() + gw.norm_squared()).sqrt();
        if gnorm <= opts.grad_tol {
            break;
        }
        loop {
            let nu = &u - &gu * step;
            let nw = &w - &gw * step;
            let nf = diagonal_net_objective(&xs, y, &nu, &nw, lambda);
            if nf <= f - 0.5 * step * gnorm * gnorm || step < 1e-300 {
                u = nu;
                w = nw;
                f = nf;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
    }
    let theta = u.component_mul(&w);
    let r = y - &xs * &theta;
    let kkt = lasso_kkt(&xs.tr_mul(&r), &theta, lambda);
    if gnorm > opts.grad_tol * 1e3 {
        return Err(Error::NonConvergence {
            context: "diagonal network gradient descent".into(),
            iterations,
            residual: gnorm,
            best: theta.as_slice().to_vec(),
        });
    }
    let support_size = theta.iter().filter(|&&t| t.abs() > 1e-9).count();
    Ok(VectorEstimate { theta_hat: theta, objective: f, kkt_residual: kkt, iterations, support_size })
}

#[derive(Clone, Debug)]
pub struct BayesEstimate {
    pub estimate: VectorEstimate,
    /// `Tr V / d`.
    pub posterior_risk: f64,
}

/// Exact Gaussian posterior mean `θ̂ = V X̃ᵀy/Δ` with `V = (Λ⁻¹ + X̃ᵀX̃/Δ)⁻¹`.
pub fn bayes_posterior_mean(data: &Dataset, lambda_diag: &DVector<f64>, delta: f64) -> Result<BayesEstimate> {
    if !(delta > 0.0) {
        return Err(Error::InvalidSpec("posterior mean requires delta > 0".into()));
    }
    let xs = data.scaled_design()?;
    let d = xs.ncols();
    if lambda_diag.len() != d {
        return Err(Error::Dimension("prior variances and design disagree".into()));
    }
    let mut prec = xs.tr_mul(&xs) / delta;
    for i in 0..d {
        prec[(i, i)] += 1.0 / lambda_diag[i];
    }
    let chol = prec
        .cholesky()
        .ok_or_else(|| Error::NumericalQuality("posterior precision not positive definite".into()))?;
    let v = chol.inverse();
    let theta = &v * xs.tr_mul(&data.labels) / delta;
    let posterior_risk = v.trace() / d as f64;
    let support_size = theta.iter().filter(|&&t| t != 0.0).count();
    Ok(BayesEstimate {
        estimate: VectorEstimate { theta_hat: theta, objective: f64::NAN, kkt_residual: 0.0, iterations: 1, support_size },
        posterior_risk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_gen::*;

    fn data(d: usize, n: usize, seed: u64, delta: f64) -> (Dataset, DiagonalTarget) {
        let spec = ProblemSpec { model: Model::Diagonal, d, n, gamma: 1.0, delta, lambda: 0.0, seed };
        let t = gen_diagonal_target(&spec).unwrap();
        let ds = gen_dataset(&spec, &Target::Diagonal(t.clone()), MeasurementMode::VectorGaussian).unwrap();
        (ds, t)
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-2.5, 1.0), -1.5);
    }

    #[test]
    fn least_squares_limit() {
        let (ds, _) = data(10, 40, 1, 0.5);
        let est = solve_lasso(&ds, 0.0).unwrap();
        let xs = ds.scaled_design().unwrap();
        let c = xs.tr_mul(&(&ds.labels - &xs * &est.theta_hat));
        assert!(c.amax() < 1e-8);
    }

    #[test]
    fn null_threshold_gives_zero() {
        let (ds, _) = data(12, 20, 2, 0.5);
        let xs = ds.scaled_design().unwrap();
        let lmax = xs.tr_mul(&ds.labels).amax();
        let est = solve_lasso(&ds, lmax).unwrap();
        assert_eq!(est.support_size, 0);
    }

    fn ista(xs: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, iters: usize) -> DVector<f64> {
        let l = xs.tr_mul(xs).symmetric_eigenvalues().max();
        let t = 1.0 / l;
        let mut th = DVector::zeros(xs.ncols());
        for _ in 0..iters {
            let g = xs.tr_mul(&(xs * &th - y));
            th = (&th - g * t).map(|v| soft_threshold(v, lambda * t));
        }
        th
    }

    #[test]
    fn matches_proximal_gradient_oracle() {
        let (ds, _) = data(8, 12, 0, 0.5);
        let xs = ds.scaled_design().unwrap();
        let lambda = 0.3;
        let est = solve_lasso(&ds, lambda).unwrap();
        let th = ista(&xs, &ds.labels, lambda, 1_000_000);
        let oracle = lasso_objective(&xs, &ds.labels, &th, lambda);
        assert!((est.objective - oracle).abs() < 1e-6, "{} {}", est.objective, oracle);
    }

    #[test]
    fn net_matches_lasso() {
        let (ds, _) = data(10, 20, 3, 0.5);
        let lasso = solve_lasso(&ds, 0.5).unwrap();
        let net = diagonal_net_erm(&ds, 0.5).unwrap();
        assert!((net.objective - lasso.objective).abs() <= 1e-4, "{} {}", net.objective, lasso.objective);
    }

    #[test]
    fn net_at_balanced_factorisation_is_optimal() {
        let (ds, _) = data(10, 20, 4, 0.5);
        let lasso = solve_lasso(&ds, 0.5).unwrap();
        let xs = ds.scaled_design().unwrap();
        let (u, w) = balanced_factors(&lasso.theta_hat);
        let f = diagonal_net_objective(&xs, &ds.labels, &u, &w, 0.5);
        assert!((f - lasso.objective).abs() < 1e-8);
    }

    #[test]
    fn net_unregularised_fits_least_squares() {
        let (ds, _) = data(6, 30, 5, 0.5);
        let ls = solve_lasso(&ds, 0.0).unwrap();
        let opts = NetOptions { grad_tol: 1e-9, ..Default::default() };
        let net = diagonal_net_erm_with(&ds, 0.0, &opts, None).unwrap();
        assert!((net.objective - ls.objective).abs() < 1e-6);
    }

    #[test]
    fn posterior_prior_limits() {
        let (ds, t) = data(20, 30, 6, 0.5);
        let empty = Dataset {
            mode: ds.mode,
            design: Design::Vector(DMatrix::zeros(0, 20)),
            labels: DVector::zeros(0),
            noise: DVector::zeros(0),
            seed: 0,
        };
        let b = bayes_posterior_mean(&empty, &t.lambda_diag, 0.5).unwrap();
        assert!(b.estimate.theta_hat.iter().all(|&x| x == 0.0));
        assert!((b.posterior_risk - t.lambda_diag.sum() / 20.0).abs() < 1e-12);
        let huge = bayes_posterior_mean(&ds, &t.lambda_diag, 1e12).unwrap();
        assert!(huge.estimate.theta_hat.norm() <= 1e-6 * t.theta_star.norm());
        assert!(bayes_posterior_mean(&ds, &t.lambda_diag, 0.0).is_err());
    }
}
