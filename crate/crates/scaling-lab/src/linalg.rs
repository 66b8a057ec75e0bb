//! Dense symmetric helpers: eigendecomposition, GOE and Haar sampling, spectral reassembly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::rng::normal;

/// Eigenpairs with eigenvalues sorted in non-increasing order.
#[derive(Clone, Debug)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eig(m: &DMatrix<f64>) -> SymEig {
    let eig = SymmetricEigen::new(m.clone());
    let d = m.nrows();
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(d, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(d, d);
    for (k, &i) in idx.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    SymEig { values, vectors }
}

/// Eigenvalues only, non-increasing.
pub fn sym_eigvals(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// `V diag(f) Vᵀ`, skipping zero weights.
pub fn reassemble(vectors: &DMatrix<f64>, f: &[f64]) -> DMatrix<f64> {
    let d = vectors.nrows();
    let active: Vec<usize> = (0..f.len()).filter(|&i| f[i] != 0.0).collect();
    if active.is_empty() {
        return DMatrix::zeros(d, d);
    }
    let mut v = DMatrix::zeros(d, active.len());
    let mut vf = DMatrix::zeros(d, active.len());
    for (k, &i) in active.iter().enumerate() {
        v.set_column(k, &vectors.column(i));
        vf.set_column(k, &(vectors.column(i) * f[i]));
    }
    let mut out = &vf * v.transpose();
    symmetrize(&mut out);
    out
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

/// GOE(d): off-diagonal variance `1/d`, diagonal variance `2/d`.
pub fn goe<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let s = (1.0 / d as f64).sqrt();
    let mut z = DMatrix::zeros(d, d);
    for j in 0..d {
        for i in 0..=j {
            if i == j {
                z[(i, i)] = normal(rng) * s * std::f64::consts::SQRT_2;
            } else {
                let v = normal(rng) * s;
                z[(i, j)] = v;
                z[(j, i)] = v;
            }
        }
    }
    z
}

/// Haar-distributed orthogonal matrix from QR of a Gaussian matrix with `diag(R) > 0`.
pub fn haar<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| normal(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Frobenius inner product.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Spectral map `ν ↦ max(ν − τ, 0)` applied through the eigendecomposition.
pub fn relu_shift(eig: &SymEig, tau: f64) -> (DMatrix<f64>, Vec<f64>) {
    let f: Vec<f64> = eig.values.iter().map(|&v| (v - tau).max(0.0)).collect();
    let f_clip: Vec<f64> = f.iter().map(|&x| if x < 1e-12 { 0.0 } else { x }).collect();
    (reassemble(&eig.vectors, &f_clip), f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn haar_is_orthogonal() {
        let mut rng = stream(1, "haar");
        let q = haar(30, &mut rng);
        let e = q.transpose() * &q - DMatrix::identity(30, 30);
        assert!(e.abs().max() < 1e-10);
    }

    #[test]
    fn eig_sorted_and_consistent() {
        let mut rng = stream(2, "eig");
        let z = goe(20, &mut rng);
        let e = sym_eig(&z);
        for k in 1..20 {
            assert!(e.values[k - 1] >= e.values[k]);
        }
        let back = reassemble(&e.vectors, e.values.as_slice());
        assert!((back - z).abs().max() < 1e-10);
    }

    #[test]
    fn goe_variances() {
        let d = 10;
        let mut rng = stream(3, "goe-var");
        let draws = 10_000;
        let (mut diag, mut off) = (0.0, 0.0);
        for _ in 0..draws {
            let z = goe(d, &mut rng);
            diag += z[(0, 0)].powi(2);
            off += z[(0, 1)].powi(2);
        }
        let diag = diag / draws as f64;
        let off = off / draws as f64;
        assert!((diag / (2.0 / d as f64) - 1.0).abs() < 0.05, "{diag}");
        assert!((off / (1.0 / d as f64) - 1.0).abs() < 0.05, "{off}");
    }
}
