//! Error-function family with an underflow-safe tail.

pub const SQRT_PI: f64 = 1.772_453_850_905_516;

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    if x > 6.0 {
        erfcx(x) * (-x * x).exp()
    } else {
        libm::erfc(x)
    }
}

/// Scaled complementary error function `exp(x²)·erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x < 6.0 {
        return libm::erfc(x) * (x * x).exp();
    }
    // Lentz evaluation of the continued fraction 1/(x+ (1/2)/(x+ 1/(x+ (3/2)/(x+ ...))))
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..200 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / (f * SQRT_PI)
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Riemann zeta at `s > 1` by direct summation with an Euler-Maclaurin tail.
pub fn zeta(s: f64) -> f64 {
    let n = 1000usize;
    let mut acc: f64 = (1..n).map(|i| (i as f64).powf(-s)).sum();
    let nf = n as f64;
    acc += nf.powf(1.0 - s) / (s - 1.0) + 0.5 * nf.powf(-s) + s * nf.powf(-s - 1.0) / 12.0;
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erfcx_is_continuous_at_switch() {
        let a = libm::erfc(6.0) * 36f64.exp();
        let b = {
            let x: f64 = 6.0 + 1e-12;
            erfcx(x)
        };
        assert!((a - b).abs() / a < 1e-10, "{a} {b}");
    }

    #[test]
    fn erfcx_asymptotic_tail() {
        for &x in &[8.0, 20.0, 100.0, 1e4] {
            let asym = 1.0 / (x * SQRT_PI) * (1.0 - 0.5 / (x * x) + 0.75 / x.powi(4));
            assert!((erfcx(x) - asym).abs() / asym < 1e-5);
        }
    }

    #[test]
    fn zeta_two() {
        assert!((zeta(2.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-10);
        assert!((zeta(4.0) - std::f64::consts::PI.powi(4) / 90.0).abs() < 1e-10);
    }
}
