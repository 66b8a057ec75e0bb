//! Scalar root finding on a sign-changing bracket.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct Root {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

/// Brent's method on `[a, b]` with `f(a)·f(b) ≤ 0`.
///
/// Stops when the bracket is narrower than `xtol` or `|f| ≤ ftol`.
pub fn brent<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    a: f64,
    b: f64,
    xtol: f64,
    ftol: f64,
    max_iter: usize,
    context: &str,
) -> Result<Root> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(Root { x: a, fx: 0.0, iterations: 0 });
    }
    if fb == 0.0 {
        return Ok(Root { x: b, fx: 0.0, iterations: 0 });
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Regime(format!("{context}: no sign change on [{a:.3e}, {b:.3e}] ({fa:.3e}, {fb:.3e})")));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for it in 1..=max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb.abs() <= ftol {
            return Ok(Root { x: b, fx: fb, iterations: it });
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol * m.signum() };
        fb = f(b)?;
    }
    Err(Error::NonConvergence {
        context: context.into(),
        iterations: max_iter,
        residual: fb.abs(),
        best: vec![b],
    })
}

/// Brent's method in `log x` for a positive root.
pub fn brent_log<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    lo: f64,
    hi: f64,
    rtol: f64,
    ftol: f64,
    max_iter: usize,
    context: &str,
) -> Result<Root> {
    let r = brent(|u| f(u.exp()), lo.ln(), hi.ln(), rtol, ftol, max_iter, context)?;
    Ok(Root { x: r.x.exp(), ..r })
}

/// Grows `hi` geometrically until `f(hi)` has sign `want`; returns the new bound.
pub fn expand_up<F: FnMut(f64) -> Result<f64>>(mut f: F, hi: f64, want: f64, max_steps: usize, context: &str) -> Result<f64> {
    let mut x = hi;
    for _ in 0..max_steps {
        if f(x)?.signum() == want.signum() {
            return Ok(x);
        }
        x *= 2.0;
    }
    Err(Error::Regime(format!("{context}: no bracket below {x:.3e}")))
}

/// Shrinks `lo` geometrically until `f(lo)` has sign `want`; returns the new bound.
pub fn expand_down<F: FnMut(f64) -> Result<f64>>(mut f: F, lo: f64, want: f64, max_steps: usize, context: &str) -> Result<f64> {
    let mut x = lo;
    for _ in 0..max_steps {
        if f(x)?.signum() == want.signum() {
            return Ok(x);
        }
        x *= 0.5;
    }
    Err(Error::Regime(format!("{context}: no bracket above {x:.3e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_root() {
        let r = brent(|x| Ok(x * x * x - 2.0), 0.0, 3.0, 1e-15, 0.0, 200, "t").unwrap();
        assert!((r.x - 2f64.cbrt()).abs() < 1e-14);
    }

    #[test]
    fn log_root_of_steep_function() {
        let r = brent_log(|x| Ok(1e-3 / x - 1.0), 1e-12, 10.0, 1e-14, 0.0, 500, "t").unwrap();
        assert!((r.x / 1e-3 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_same_sign() {
        assert!(brent(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-12, 0.0, 50, "t").is_err());
    }
}
