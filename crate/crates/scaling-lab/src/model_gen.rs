//! Teachers, datasets and closed-form excess risk.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob_dot, goe, haar};
use crate::rng::{normal, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Diagonal,
    Quadratic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub model: Model,
    pub d: usize,
    pub n: usize,
    pub gamma: f64,
    pub delta: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.5) {
            return Err(Error::InvalidSpec(format!("gamma must exceed 1/2, got {}", self.gamma)));
        }
        if self.d == 0 || self.n == 0 {
            return Err(Error::InvalidSpec("d and n must be positive".into()));
        }
        if !(self.delta >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::InvalidSpec("delta and lambda must be nonnegative".into()));
        }
        Ok(())
    }

    /// `n` for the diagonal model, `n/d` for the quadratic model.
    pub fn n_eff(&self) -> f64 {
        match self.model {
            Model::Diagonal => self.n as f64,
            Model::Quadratic => self.n as f64 / self.d as f64,
        }
    }

    /// `n/d²`.
    pub fn alpha_tilde(&self) -> f64 {
        self.n as f64 / (self.d as f64).powi(2)
    }
}

/// `Λᵢ = d·i^(−2γ)`.
pub fn power_law_variances(d: usize, gamma: f64) -> DVector<f64> {
    DVector::from_fn(d, |i, _| d as f64 * ((i + 1) as f64).powf(-2.0 * gamma))
}

/// `sᵢ = √d·i^(−γ)`.
pub fn power_law_eigvals(d: usize, gamma: f64) -> DVector<f64> {
    DVector::from_fn(d, |i, _| (d as f64).sqrt() * ((i + 1) as f64).powf(-gamma))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagonalTarget {
    pub theta_star: DVector<f64>,
    pub lambda_diag: DVector<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadraticTarget {
    pub s_star: DMatrix<f64>,
    pub eigvals: DVector<f64>,
    pub basis: DMatrix<f64>,
}

impl QuadraticTarget {
    /// `Q* = Tr[(S*)²]/d`.
    pub fn q_star(&self) -> f64 {
        self.eigvals.iter().map(|s| s * s).sum::<f64>() / self.eigvals.len() as f64
    }

    /// Teacher with the given spectrum in the canonical basis.
    pub fn diagonal(eigvals: DVector<f64>) -> Self {
        let d = eigvals.len();
        QuadraticTarget {
            s_star: DMatrix::from_diagonal(&eigvals),
            eigvals,
            basis: DMatrix::identity(d, d),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Target {
    Diagonal(DiagonalTarget),
    Quadratic(QuadraticTarget),
}

pub fn gen_diagonal_target(spec: &ProblemSpec) -> Result<DiagonalTarget> {
    spec.validate()?;
    if spec.model != Model::Diagonal {
        return Err(Error::InvalidSpec("diagonal target requested for a quadratic spec".into()));
    }
    let lambda_diag = power_law_variances(spec.d, spec.gamma);
    let mut rng = stream(spec.seed, "theta_star");
    let theta_star = lambda_diag.map(|l| l.sqrt() * normal(&mut rng));
    Ok(DiagonalTarget { theta_star, lambda_diag })
}

pub fn gen_quadratic_target(spec: &ProblemSpec) -> Result<QuadraticTarget> {
    spec.validate()?;
    if spec.model != Model::Quadratic {
        return Err(Error::InvalidSpec("quadratic target requested for a diagonal spec".into()));
    }
    let eigvals = power_law_eigvals(spec.d, spec.gamma);
    let mut rng = stream(spec.seed, "haar");
    let basis = haar(spec.d, &mut rng);
    let scaled = DMatrix::from_fn(spec.d, spec.d, |i, j| basis[(i, j)] * eigvals[j]);
    let mut s_star = scaled * basis.transpose();
    crate::linalg::symmetrize(&mut s_star);
    Ok(QuadraticTarget { s_star, eigvals, basis })
}

pub fn gen_target(spec: &ProblemSpec) -> Result<Target> {
    match spec.model {
        Model::Diagonal => gen_diagonal_target(spec).map(Target::Diagonal),
        Model::Quadratic => gen_quadratic_target(spec).map(Target::Quadratic),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasurementMode {
    VectorGaussian,
    WishartCentered,
    GOEUniversal,
}

impl MeasurementMode {
    pub fn default_for(model: Model) -> Self {
        match model {
            Model::Diagonal => MeasurementMode::VectorGaussian,
            Model::Quadratic => MeasurementMode::WishartCentered,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Design {
    /// `n×d` Gaussian inputs; the model reads `⟨x,θ⟩/√d`.
    Vector(DMatrix<f64>),
    /// `n×d` Gaussian inputs; measurement `Zµ = (xµxµᵀ − I)/√d`.
    Wishart(DMatrix<f64>),
    /// `n×d²` matrix whose row µ is the column-major flattening of `Gµ ~ GOE(d)`.
    Goe { rows: DMatrix<f64>, d: usize },
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub mode: MeasurementMode,
    pub design: Design,
    pub labels: DVector<f64>,
    pub noise: DVector<f64>,
    pub seed: u64,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        match &self.design {
            Design::Vector(x) | Design::Wishart(x) => x.ncols(),
            Design::Goe { d, .. } => *d,
        }
    }

    pub fn is_quadratic(&self) -> bool {
        !matches!(self.design, Design::Vector(_))
    }

    /// Vector design scaled by `1/√d`.
    pub fn scaled_design(&self) -> Result<DMatrix<f64>> {
        match &self.design {
            Design::Vector(x) => Ok(x / (x.ncols() as f64).sqrt()),
            _ => Err(Error::InvalidSpec("scaled design requested on a quadratic dataset".into())),
        }
    }

    /// Linear sensing map `S ↦ (Tr[S Zµ])µ`.
    pub fn sense(&self, s: &DMatrix<f64>) -> DVector<f64> {
        match &self.design {
            Design::Wishart(x) => {
                let d = x.ncols();
                let xs = x * s;
                let mut z = DVector::from_element(x.nrows(), -s.trace());
                for j in 0..d {
                    z += xs.column(j).component_mul(&x.column(j));
                }
                z / (d as f64).sqrt()
            }
            Design::Goe { rows, .. } => rows * DVector::from_column_slice(s.as_slice()),
            Design::Vector(_) => panic!("sense called on a vector dataset"),
        }
    }

    /// Adjoint `r ↦ Σµ rµ Zµ`.
    pub fn sense_adjoint(&self, r: &DVector<f64>) -> DMatrix<f64> {
        match &self.design {
            Design::Wishart(x) => {
                let d = x.ncols();
                let mut rx = x.clone();
                for j in 0..d {
                    rx.column_mut(j).component_mul_assign(r);
                }
                let mut out = x.tr_mul(&rx);
                let tot = r.sum();
                for i in 0..d {
                    out[(i, i)] -= tot;
                }
                crate::linalg::symmetrize(&mut out);
                out / (d as f64).sqrt()
            }
            Design::Goe { rows, d } => {
                let v = rows.tr_mul(r);
                DMatrix::from_column_slice(*d, *d, v.as_slice())
            }
            Design::Vector(_) => panic!("sense_adjoint called on a vector dataset"),
        }
    }
}

pub fn gen_dataset(spec: &ProblemSpec, target: &Target, mode: MeasurementMode) -> Result<Dataset> {
    spec.validate()?;
    let (n, d) = (spec.n, spec.d);
    let mut noise_rng = stream(spec.seed, "label_noise");
    let noise = DVector::from_fn(n, |_, _| normal(&mut noise_rng));
    let mut rng = stream(spec.seed, "design");
    let sd = spec.delta.sqrt();
    match (target, mode) {
        (Target::Diagonal(t), MeasurementMode::VectorGaussian) => {
            if t.theta_star.len() != d {
                return Err(Error::Dimension("target dimension differs from spec".into()));
            }
            let x = DMatrix::from_fn(n, d, |_, _| normal(&mut rng));
            let labels = (&x * &t.theta_star) / (d as f64).sqrt() + &noise * sd;
            Ok(Dataset { mode, design: Design::Vector(x), labels, noise, seed: spec.seed })
        }
        (Target::Quadratic(t), MeasurementMode::WishartCentered | MeasurementMode::GOEUniversal) => {
            if t.s_star.nrows() != d {
                return Err(Error::Dimension("target dimension differs from spec".into()));
            }
            let design = if mode == MeasurementMode::WishartCentered {
                Design::Wishart(DMatrix::from_fn(n, d, |_, _| normal(&mut rng)))
            } else {
                let mut rows = DMatrix::zeros(n, d * d);
                for mu in 0..n {
                    let g = goe(d, &mut rng);
                    for (k, v) in g.iter().enumerate() {
                        rows[(mu, k)] = *v;
                    }
                }
                Design::Goe { rows, d }
            };
            let mut ds = Dataset { mode, design, labels: DVector::zeros(n), noise, seed: spec.seed };
            ds.labels = ds.sense(&t.s_star) + &ds.noise * sd;
            Ok(ds)
        }
        _ => Err(Error::InvalidSpec(format!("measurement mode {mode:?} incompatible with target"))),
    }
}

/// Population excess risk of a diagonal-network estimate: `‖θ̂ − θ*‖²/d`.
pub fn excess_risk_vector(theta_hat: &DVector<f64>, target: &DiagonalTarget) -> Result<f64> {
    if theta_hat.len() != target.theta_star.len() {
        return Err(Error::Dimension("estimate and target lengths differ".into()));
    }
    Ok((theta_hat - &target.theta_star).norm_squared() / theta_hat.len() as f64)
}

/// `‖Ŝ − S*‖²_F / d`, the normalisation in which state evolution reports risk.
pub fn frobenius_risk(s_hat: &DMatrix<f64>, target: &QuadraticTarget) -> Result<f64> {
    if s_hat.shape() != target.s_star.shape() {
        return Err(Error::Dimension("estimate and target shapes differ".into()));
    }
    let diff = s_hat - &target.s_star;
    Ok(frob_dot(&diff, &diff) / s_hat.nrows() as f64)
}

/// Population excess risk of a quadratic-network estimate: `2‖Ŝ − S*‖²_F / d`.
pub fn excess_risk_matrix(s_hat: &DMatrix<f64>, target: &QuadraticTarget) -> Result<f64> {
    Ok(2.0 * frobenius_risk(s_hat, target)?)
}

pub enum EstimateRef<'a> {
    Vector(&'a DVector<f64>),
    Matrix(&'a DMatrix<f64>),
}

pub fn excess_risk(estimate: EstimateRef<'_>, target: &Target) -> Result<f64> {
    match (estimate, target) {
        (EstimateRef::Vector(v), Target::Diagonal(t)) => excess_risk_vector(v, t),
        (EstimateRef::Matrix(m), Target::Quadratic(t)) => excess_risk_matrix(m, t),
        _ => Err(Error::Dimension("estimate and target belong to different models".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(model: Model, d: usize, n: usize) -> ProblemSpec {
        ProblemSpec { model, d, n, gamma: 1.0, delta: 0.5, lambda: 0.1, seed: 7 }
    }

    #[test]
    fn variances_formula() {
        let l = power_law_variances(4, 1.0);
        let want = [4.0, 1.0, 4.0 / 9.0, 0.25];
        for i in 0..4 {
            assert!((l[i] - want[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_small_gamma() {
        let mut s = spec(Model::Diagonal, 4, 4);
        s.gamma = 0.5;
        assert!(matches!(gen_diagonal_target(&s), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn diagonal_target_deterministic_and_calibrated() {
        let s = spec(Model::Diagonal, 1000, 1);
        let a = gen_diagonal_target(&s).unwrap();
        let b = gen_diagonal_target(&s).unwrap();
        assert_eq!(a.theta_star, b.theta_star);
        let m: f64 = a
            .theta_star
            .iter()
            .zip(a.lambda_diag.iter())
            .map(|(t, l)| t * t / l)
            .sum::<f64>()
            / 1000.0;
        assert!((0.9..=1.1).contains(&m), "{m}");
    }

    #[test]
    fn quadratic_target_spectrum() {
        let s = spec(Model::Quadratic, 3, 1);
        let t = gen_quadratic_target(&s).unwrap();
        let r3 = 3f64.sqrt();
        let want = [r3, r3 / 2.0, r3 / 3.0];
        let ev = crate::linalg::sym_eigvals(&t.s_star);
        for i in 0..3 {
            assert!((t.eigvals[i] - want[i]).abs() < 1e-14);
            assert!((ev[i] - want[i]).abs() < 1e-8);
        }
        let e = t.basis.transpose() * &t.basis - DMatrix::identity(3, 3);
        assert!(e.abs().max() < 1e-10);
    }

    #[test]
    fn goe_mode_rejected_for_diagonal() {
        let s = spec(Model::Diagonal, 5, 5);
        let t = gen_target(&s).unwrap();
        assert!(gen_dataset(&s, &t, MeasurementMode::GOEUniversal).is_err());
    }

    #[test]
    fn zero_teacher_noiseless_labels_vanish() {
        let mut s = spec(Model::Diagonal, 6, 9);
        s.delta = 0.0;
        let t = Target::Diagonal(DiagonalTarget {
            theta_star: DVector::zeros(6),
            lambda_diag: power_law_variances(6, 1.0),
        });
        let ds = gen_dataset(&s, &t, MeasurementMode::VectorGaussian).unwrap();
        assert!(ds.labels.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn sensing_adjoint_identity() {
        for mode in [MeasurementMode::WishartCentered, MeasurementMode::GOEUniversal] {
            let s = spec(Model::Quadratic, 7, 30);
            let t = gen_target(&s).unwrap();
            let ds = gen_dataset(&s, &t, mode).unwrap();
            let mut rng = stream(1, "adj");
            let a = goe(7, &mut rng);
            let r = DVector::from_fn(30, |_, _| normal(&mut rng));
            let lhs = ds.sense(&a).dot(&r);
            let rhs = frob_dot(&a, &ds.sense_adjoint(&r));
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }
}
