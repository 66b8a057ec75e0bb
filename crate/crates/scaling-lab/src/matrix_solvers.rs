//! Trace-regularised PSD matrix sensing, pruning and the quadratic-network parameterisation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob_dot, reassemble, relu_shift, sym_eig};
use crate::model_gen::Dataset;
use crate::rng::{normal, stream};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixEstimate {
    pub s_hat: DMatrix<f64>,
    pub eigvals_hat: DVector<f64>,
    pub objective: f64,
    pub opt_residual: f64,
    pub iterations: usize,
    pub rank: usize,
}

impl MatrixEstimate {
    pub fn from_matrix(s_hat: DMatrix<f64>, objective: f64, opt_residual: f64, iterations: usize) -> Self {
        let eig = sym_eig(&s_hat);
        let rank = eig.values.iter().filter(|&&v| v > 1e-9).count();
        MatrixEstimate { s_hat, eigvals_hat: eig.values, objective, opt_residual, iterations, rank }
    }
}

/// `argmin_{S ⪰ 0} τ·Tr S + ½‖S − m‖²_F`.
pub fn psd_nuclear_prox(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let eig = sym_eig(m);
    let f: Vec<f64> = eig.values.iter().map(|&v| (v - tau).max(-1e-12).max(0.0)).collect();
    reassemble(&eig.vectors, &f)
}

/// `(1/d)‖y − A(S)‖² + λ Tr S`.
pub fn matrix_objective(data: &Dataset, s: &DMatrix<f64>, lambda: f64) -> f64 {
    let d = data.d() as f64;
    (&data.labels - data.sense(s)).norm_squared() / d + lambda * s.trace()
}

/// Gradient of the data-fit term, `−(2/d)Aᵀ(y − A(S))`.
pub fn data_fit_gradient(data: &Dataset, s: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let d = data.d() as f64;
    let r = &data.labels - data.sense(s);
    (data.sense_adjoint(&r) * (-2.0 / d), r.norm_squared() / d)
}

/// Natural residual `‖S − Π_{S⪰0}(S − ∇f(S) − λI)‖_F / max(1, ‖S‖_F)`.
pub fn optimality_residual(data: &Dataset, s: &DMatrix<f64>, lambda: f64) -> f64 {
    let (g, _) = data_fit_gradient(data, s);
    let moved = s - g;
    let p = psd_nuclear_prox(&moved, lambda);
    (s - p).norm() / s.norm().max(1.0)
}

/// Power iteration for `‖AᵀA‖` on symmetric inputs.
pub fn sensing_norm_sq(data: &Dataset, iters: usize) -> f64 {
    let d = data.d();
    let mut rng = stream(data.seed, "power_iteration");
    let mut v = crate::linalg::goe(d, &mut rng);
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..iters {
        let w = data.sense_adjoint(&data.sense(&v));
        est = w.norm();
        if est == 0.0 {
            return 0.0;
        }
        v = w / est;
    }
    est
}

#[derive(Clone, Debug)]
pub struct MatrixOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub check_every: usize,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        MatrixOptions { tol: 1e-7, max_iter: 20_000, check_every: 10 }
    }
}

pub fn solve_matrix_sensing(data: &Dataset, lambda: f64) -> Result<MatrixEstimate> {
    solve_matrix_sensing_with(data, lambda, &MatrixOptions::default(), None)
}

/// Accelerated proximal gradient with monotone restarts.
pub fn solve_matrix_sensing_with(
    data: &Dataset,
    lambda: f64,
    opts: &MatrixOptions,
    warm: Option<&DMatrix<f64>>,
) -> Result<MatrixEstimate> {
    if !data.is_quadratic() {
        return Err(Error::InvalidSpec("matrix sensing needs a quadratic dataset".into()));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidSpec("lambda must be nonnegative".into()));
    }
    let d = data.d();
    let mut lip = 2.0 / d as f64 * sensing_norm_sq(data, 20) * 1.05;
    if lip == 0.0 {
        lip = 1.0;
    }
    let mut x = warm.cloned().unwrap_or_else(|| DMatrix::zeros(d, d));
    let mut ax = data.sense(&x);
    let mut fx = (&data.labels - &ax).norm_squared() / d as f64 + lambda * x.trace();
    let mut y = x.clone();
    let mut ay = ax.clone();
    let mut t = 1.0f64;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let ry = &data.labels - &ay;
        let g = data.sense_adjoint(&ry) * (-2.0 / d as f64);
        let fy_smooth = ry.norm_squared() / d as f64;
        let (mut z, mut az, mut fz_smooth);
        loop {
            let step = 1.0 / lip;
            z = psd_nuclear_prox(&(&y - &g * step), lambda * step);
            az = data.sense(&z);
            fz_smooth = (&data.labels - &az).norm_squared() / d as f64;
            let diff = &z - &y;
            let bound = fy_smooth + frob_dot(&g, &diff) + 0.5 * lip * frob_dot(&diff, &diff);
            if fz_smooth <= bound + 1e-12 * bound.abs().max(1.0) {
                break;
            }
            lip *= 2.0;
        }
        let fz = fz_smooth + lambda * z.trace();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if fz <= fx + 1e-13 * fx.abs().max(1.0) {
            let beta = (t - 1.0) / t_next;
            y = &z + (&z - &x) * beta;
            ay = &az + (&az - &ax) * beta;
            x = z;
            ax = az;
            fx = fz;
            t = t_next;
        } else {
            y = x.clone();
            ay = ax.clone();
            t = 1.0;
        }
        if it % opts.check_every == 0 || it == opts.max_iter {
            residual = optimality_residual(data, &x, lambda);
            if residual <= opts.tol {
                return Ok(MatrixEstimate::from_matrix(x, fx, residual, it));
            }
        }
    }
    Err(Error::NonConvergence {
        context: "matrix sensing proximal gradient".into(),
        iterations: opts.max_iter,
        residual,
        best: x.as_slice().to_vec(),
    })
}

/// Post-hoc eigenvalue shrinkage `ν ↦ max(ν − (2δ − λε), 0)`.
pub fn prune(estimate: &MatrixEstimate, delta_se: f64, eps_se: f64, lambda: f64) -> Result<MatrixEstimate> {
    let shift = 2.0 * delta_se - lambda * eps_se;
    if !(shift > 0.0) {
        return Err(Error::Regime(format!(
            "pruning needs lambda*eps < 2*delta, got lambda*eps = {} and 2*delta = {}",
            lambda * eps_se,
            2.0 * delta_se
        )));
    }
    let eig = sym_eig(&estimate.s_hat);
    let (s, _) = relu_shift(&eig, shift);
    Ok(MatrixEstimate::from_matrix(s, f64::NAN, f64::NAN, estimate.iterations))
}

#[derive(Clone, Debug)]
pub struct QuadNetOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub init_std: f64,
}

impl Default for QuadNetOptions {
    fn default() -> Self {
        QuadNetOptions { max_iter: 500_000, grad_tol: 1e-9, init_std: 0.1 }
    }
}

/// Network objective `(1/d)Σ(yµ − Tr[S Zµ])² + (λ/√(pd))‖W‖²_F` with `S = WᵀW/√(pd)`.
pub fn quadratic_net_objective(data: &Dataset, w: &DMatrix<f64>, lambda: f64) -> f64 {
    let c = ((w.nrows() * w.ncols()) as f64).sqrt();
    let s = w.tr_mul(w) / c;
    (&data.labels - data.sense(&s)).norm_squared() / data.d() as f64 + lambda / c * w.norm_squared()
}

/// Factor `W` with `WᵀW/√(pd) = S` for a PSD `S`.
pub fn factor_psd(s: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let d = s.nrows();
    let c = ((p * d) as f64).sqrt();
    let eig = sym_eig(s);
    let mut w = DMatrix::zeros(p, d);
    for k in 0..d.min(p) {
        let nu = eig.values[k].max(0.0);
        let scale = (c * nu).sqrt();
        for j in 0..d {
            w[(k, j)] = scale * eig.vectors[(j, k)];
        }
    }
    w
}

pub fn quadratic_net_erm(data: &Dataset, lambda: f64, p: usize) -> Result<MatrixEstimate> {
    quadratic_net_erm_with(data, lambda, p, &QuadNetOptions::default(), None)
}

/// Gradient descent with Armijo backtracking on the first-layer weights.
pub fn quadratic_net_erm_with(
    data: &Dataset,
    lambda: f64,
    p: usize,
    opts: &QuadNetOptions,
    init: Option<DMatrix<f64>>,
) -> Result<MatrixEstimate> {
    let d = data.d();
    if p < d {
        return Err(Error::InvalidSpec(format!("width p = {p} must be at least d = {d}")));
    }
    let c = ((p * d) as f64).sqrt();
    let mut w = init.unwrap_or_else(|| {
        let mut rng = stream(data.seed, "quadratic_net_init");
        DMatrix::from_fn(p, d, |_, _| opts.init_std * normal(&mut rng))
    });
    let grad = |w: &DMatrix<f64>| {
        let s = w.tr_mul(w) / c;
        let (mut g, _) = data_fit_gradient(data, &s);
        for i in 0..d {
            g[(i, i)] += lambda;
        }
        w * g * (2.0 / c)
    };
    let mut f = quadratic_net_objective(data, &w, lambda);
    let mut step = 1e-3;
    let mut gnorm = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let g = grad(&w);
        gnorm = g.norm();
        if gnorm <= opts.grad_tol {
            break;
        }
        loop {
            let nw = &w - &g * step;
            let nf = quadratic_net_objective(data, &nw, lambda);
            if nf <= f - 0.5 * step * gnorm * gnorm || step < 1e-300 {
                w = nw;
                f = nf;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
    }
    let s = w.tr_mul(&w) / c;
    if gnorm > opts.grad_tol * 1e4 {
        return Err(Error::NonConvergence {
            context: "quadratic network gradient descent".into(),
            iterations,
            residual: gnorm,
            best: s.as_slice().to_vec(),
        });
    }
    let res = optimality_residual(data, &s, lambda);
    Ok(MatrixEstimate::from_matrix(s, f, res, iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::goe;
    use crate::model_gen::*;

    fn quad_data(d: usize, n: usize, delta: f64, seed: u64, mode: MeasurementMode) -> (Dataset, QuadraticTarget) {
        let spec = ProblemSpec { model: Model::Quadratic, d, n, gamma: 1.0, delta, lambda: 0.0, seed };
        let t = gen_quadratic_target(&spec).unwrap();
        let ds = gen_dataset(&spec, &Target::Quadratic(t.clone()), mode).unwrap();
        (ds, t)
    }

    #[test]
    fn prox_examples() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 0.5, -1.0]));
        let p = psd_nuclear_prox(&m, 1.0);
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0, 0.0]));
        assert!((p - want).abs().max() < 1e-12);
        let mut rng = stream(1, "psd");
        let a = DMatrix::from_fn(4, 4, |_, _| normal(&mut rng));
        let psd = a.tr_mul(&a);
        assert!((psd_nuclear_prox(&psd, 0.0) - &psd).abs().max() < 1e-10);
    }

    #[test]
    fn prox_matches_projected_gradient_oracle() {
        let mut rng = stream(5, "prox-oracle");
        let m = goe(5, &mut rng) * 2.0;
        let tau = 0.3;
        let p = psd_nuclear_prox(&m, tau);
        // projected gradient on τ Tr S + ½‖S − m‖², projecting by eigenvalue clipping
        let mut s = DMatrix::<f64>::zeros(5, 5);
        for _ in 0..2000 {
            let g = &s - &m + DMatrix::identity(5, 5) * tau;
            let moved = &s - g * 0.5;
            let eig = sym_eig(&moved);
            let f: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
            s = reassemble(&eig.vectors, &f);
        }
        assert!((p - s).norm() < 1e-6);
    }

    #[test]
    fn large_lambda_gives_zero() {
        let (ds, _) = quad_data(8, 60, 0.5, 2, MeasurementMode::WishartCentered);
        let (g, _) = data_fit_gradient(&ds, &DMatrix::zeros(8, 8));
        let bound = crate::linalg::sym_eigvals(&(-g))[0];
        let est = solve_matrix_sensing(&ds, bound * 1.01).unwrap();
        assert_eq!(est.rank, 0);
        assert!(est.s_hat.abs().max() == 0.0);
    }

    #[test]
    fn noiseless_overdetermined_recovery() {
        let d = 30;
        let (ds, t) = quad_data(d, 5 * d * d, 0.0, 3, MeasurementMode::WishartCentered);
        let opts = MatrixOptions { tol: 1e-9, ..Default::default() };
        let est = solve_matrix_sensing_with(&ds, 1e-8, &opts, None).unwrap();
        let r = excess_risk_matrix(&est.s_hat, &t).unwrap();
        assert!(r <= 1e-3 * t.q_star(), "{r}");
    }

    #[test]
    fn prune_examples() {
        let est = MatrixEstimate::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 1.5])), 0.0, 0.0, 0);
        let p = prune(&est, 1.0, 0.0, 1.0).unwrap();
        assert!((p.eigvals_hat[0] - 3.0).abs() < 1e-12);
        assert_eq!(p.rank, 1);
        let low = MatrixEstimate::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5])), 0.0, 0.0, 0);
        assert_eq!(prune(&low, 1.0, 0.0, 1.0).unwrap().rank, 0);
        assert!(matches!(prune(&est, 1.0, 3.0, 1.0), Err(Error::Regime(_))));
    }

    #[test]
    fn net_at_factorisation_is_optimal() {
        let (ds, _) = quad_data(8, 200, 0.5, 4, MeasurementMode::WishartCentered);
        let cvx = solve_matrix_sensing(&ds, 0.5).unwrap();
        let w = factor_psd(&cvx.s_hat, 16);
        let f = quadratic_net_objective(&ds, &w, 0.5);
        assert!((f - cvx.objective).abs() < 1e-6 * cvx.objective.max(1.0));
    }
}
