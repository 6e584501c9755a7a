//! Non-central chi-squared CDF via the Poisson-mixture series.
//!
//! `Pr(X <= x)` for `X ~ chi2(q, lambda)` is
//! `sum_k  pois(k; lambda/2) * P(q/2 + k, x/2)` with `P` the regularized
//! lower incomplete gamma function. The series is summed outward from the
//! Poisson mode so it stays stable for large non-centrality, and both the
//! weights and the gamma terms are advanced by their two-term recurrences.
//! Terms below 1e-14 terminate each direction; the unsummed Poisson tail
//! bounds the truncation error since `P <= 1`.

use crate::error::{Error, Result};

const TERM_EPS: f64 = 1e-14;
const GAMMA_EPS: f64 = 1e-16;
const MAX_SERIES: usize = 100_000;

/// Regularized lower incomplete gamma `P(a, x)`.
///
/// Series expansion for `x < a + 1`, Lentz continued fraction otherwise.
pub fn lower_gamma_reg(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - libm::lgamma(a);
    if x < a + 1.0 {
        // P(a,x) = x^a e^-x / Gamma(a) * sum_n x^n / (a(a+1)...(a+n))
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = 1.0;
        while term.abs() > sum.abs() * GAMMA_EPS {
            term *= x / (a + n);
            sum += term;
            n += 1.0;
            if n > 1e7 {
                break;
            }
        }
        (log_prefix.exp() * sum).clamp(0.0, 1.0)
    } else {
        // Q(a,x) via continued fraction, then P = 1 - Q.
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut frac = d;
        for i in 1..=10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            frac *= delta;
            if (delta - 1.0).abs() < GAMMA_EPS {
                break;
            }
        }
        (1.0 - log_prefix.exp() * frac).clamp(0.0, 1.0)
    }
}

/// `Pr(chi2_{q, lambda} <= x)`.
pub fn noncentral_chi2_cdf(x: f64, q: u32, lambda: f64) -> Result<f64> {
    if q < 1 {
        return Err(Error::contract("degrees of freedom must be >= 1"));
    }
    if !(x.is_finite() && x >= 0.0) {
        return Err(Error::contract(format!("x must be finite and >= 0, got {x}")));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::contract(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let half_q = q as f64 / 2.0;
    let half_x = x / 2.0;
    let half_l = lambda / 2.0;
    if half_l == 0.0 {
        return Ok(lower_gamma_reg(half_q, half_x));
    }

    // Poisson weight and gamma term at the mode.
    let k0 = half_l.floor() as i64;
    let log_w0 = k0 as f64 * half_l.ln() - half_l - libm::lgamma(k0 as f64 + 1.0);
    let w0 = log_w0.exp();
    let p0 = lower_gamma_reg(half_q + k0 as f64, half_x);

    // d_k = x^(q/2+k) e^-x / Gamma(q/2+k+1) links successive gamma terms:
    // P(a+1, x) = P(a, x) - d(a).
    let log_d = |k: i64| -> f64 {
        let a = half_q + k as f64;
        a * half_x.ln() - half_x - libm::lgamma(a + 1.0)
    };

    let mut sum = w0 * p0;
    let mut weight_covered = w0;

    // Upward sweep: k0+1, k0+2, ...
    let mut w = w0;
    let mut p = p0;
    let mut d = log_d(k0).exp();
    for k in (k0 + 1)..(k0 + 1 + MAX_SERIES as i64) {
        w *= half_l / k as f64;
        p -= d;
        p = p.max(0.0);
        d *= half_x / (half_q + k as f64);
        let term = w * p;
        sum += term;
        weight_covered += w;
        if term < TERM_EPS && 1.0 - weight_covered < TERM_EPS {
            break;
        }
    }

    // Downward sweep: k0-1, ..., 0.
    let mut w = w0;
    let mut p = p0;
    for k in (0..k0).rev() {
        w *= (k + 1) as f64 / half_l;
        p += log_d(k).exp();
        p = p.min(1.0);
        let term = w * p;
        sum += term;
        // Downward weights shrink monotonically, so the term bound suffices.
        if term < TERM_EPS {
            break;
        }
    }

    Ok(sum.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_arguments() {
        assert!(noncentral_chi2_cdf(-1.0, 4, 0.0).is_err());
        assert!(noncentral_chi2_cdf(1.0, 0, 0.0).is_err());
        assert!(noncentral_chi2_cdf(1.0, 4, -0.5).is_err());
        assert!(noncentral_chi2_cdf(f64::NAN, 4, 0.0).is_err());
    }

    #[test]
    fn zero_x_is_zero_probability() {
        assert_eq!(noncentral_chi2_cdf(0.0, 3, 5.0).unwrap(), 0.0);
        assert_eq!(noncentral_chi2_cdf(0.0, 1, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn central_two_dof_closed_form() {
        // chi2 with q=2, lambda=0 has CDF 1 - exp(-x/2).
        let x = 2.0 * 2.0f64.ln();
        let p = noncentral_chi2_cdf(x, 2, 0.0).unwrap();
        assert!((p - 0.5).abs() < 1e-10);
        for &x in &[0.1, 1.0, 3.0, 10.0, 40.0] {
            let p = noncentral_chi2_cdf(x, 2, 0.0).unwrap();
            assert!((p - (1.0 - (-x / 2.0).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn central_even_dof_closed_form() {
        // For even q, the central CDF is 1 - e^{-x/2} sum_{j<q/2} (x/2)^j / j!.
        for &(q, x) in &[(4u32, 3.0), (4, 12.0), (8, 6.5), (8, 20.0)] {
            let half = x / 2.0;
            let mut term = 1.0;
            let mut s = 1.0;
            for j in 1..(q / 2) {
                term *= half / j as f64;
                s += term;
            }
            let expect = 1.0 - (-half).exp() * s;
            let got = noncentral_chi2_cdf(x, q, 0.0).unwrap();
            assert!((got - expect).abs() < 1e-12, "q={q} x={x}: {got} vs {expect}");
        }
    }

    #[test]
    fn odd_dof_one_matches_erf_route() {
        // chi2_1 CDF(x) = erf(sqrt(x/2)); compare through the gamma function.
        for &x in &[0.2, 1.0, 4.0, 9.0] {
            let got = noncentral_chi2_cdf(x, 1, 0.0).unwrap();
            let expect = libm::erf((x / 2.0).sqrt());
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_in_x_and_lambda() {
        let q = 6;
        let lambda = 9.0;
        let mut last = 0.0;
        for i in 0..60 {
            let x = i as f64;
            let p = noncentral_chi2_cdf(x, q, lambda).unwrap();
            assert!(p + 1e-13 >= last, "not nondecreasing at x={x}");
            last = p;
        }
        // Fixed x: nonincreasing in lambda.
        let x = 12.0;
        let mut last = 1.0;
        for i in 0..40 {
            let l = i as f64 * 2.0;
            let p = noncentral_chi2_cdf(x, q, l).unwrap();
            assert!(p <= last + 1e-13, "not nonincreasing at lambda={l}");
            last = p;
        }
    }

    #[test]
    fn large_lambda_stays_finite_and_sane() {
        // Mean is q + lambda; far below it the CDF is ~0, far above ~1.
        let p_low = noncentral_chi2_cdf(100.0, 317, 5000.0).unwrap();
        let p_high = noncentral_chi2_cdf(20_000.0, 317, 5000.0).unwrap();
        assert!(p_low < 1e-8);
        assert!(p_high > 1.0 - 1e-8);
        let p_mid = noncentral_chi2_cdf(317.0 + 5000.0, 317, 5000.0).unwrap();
        assert!(p_mid > 0.3 && p_mid < 0.7);
    }
}
