//! Paired t-test with an in-house Student-t CDF.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Pr(T ≤ t) for Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p_value: f64,
    pub df: usize,
    /// All differences were zero; `t` is 0 and `p_value` 1.
    pub degenerate: bool,
}

/// Two-tailed paired t-test on `a[i] - b[i]`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InsufficientData("a paired t-test needs at least 2 pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let df = n - 1;
    if diffs.iter().all(|d| *d == 0.0) {
        return Ok(TTest {
            t: 0.0,
            p_value: 1.0,
            df,
            degenerate: true,
        });
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / df as f64;
    let se = (var / n as f64).sqrt();
    if se == 0.0 {
        // identical nonzero differences: the evidence is as strong as it gets
        return Ok(TTest {
            t: mean.signum() * f64::INFINITY,
            p_value: 0.0,
            df,
            degenerate: false,
        });
    }
    let t = mean / se;
    let p_value = incomplete_beta(df as f64 / 2.0, 0.5, df as f64 / (df as f64 + t * t)).clamp(0.0, 1.0);
    Ok(TTest {
        t,
        p_value,
        df,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};
    use statrs::function::{beta::beta_reg, gamma::ln_gamma as sr_ln_gamma};

    #[test]
    fn textbook_example() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_ttest(&a, &[0.0; 5]).unwrap();
        assert!((r.t - 4.242_640_687).abs() < 1e-6);
        assert!((r.p_value - 0.013_167_6).abs() < 1e-4, "{}", r.p_value);
        let s = paired_ttest(&[0.0; 5], &a).unwrap();
        assert_eq!(s.t, -r.t);
        assert_eq!(s.p_value, r.p_value);
    }

    #[test]
    fn degenerate_and_errors() {
        let r = paired_ttest(&[0.3, 0.4], &[0.3, 0.4]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
        assert!(paired_ttest(&[1.0], &[2.0]).is_err());
        assert!(paired_ttest(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn special_functions_match_statrs() {
        for x in [0.1, 0.5, 1.0, 2.5, 7.3, 30.0, 171.2] {
            assert!((ln_gamma(x) - sr_ln_gamma(x)).abs() < 1e-10 * sr_ln_gamma(x).abs().max(1.0));
        }
        for (a, b) in [(0.5, 0.5), (2.0, 0.5), (10.0, 3.0), (50.0, 0.5)] {
            for x in [0.001, 0.1, 0.37, 0.5, 0.9, 0.999] {
                assert!((incomplete_beta(a, b, x) - beta_reg(a, b, x)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn t_cdf_matches_statrs() {
        for df in [1.0, 2.0, 4.0, 9.0, 29.0, 200.0] {
            let dist = StudentsT::new(0.0, 1.0, df).unwrap();
            for t in [-12.0, -3.1, -1.0, -0.2, 0.0, 0.7, 2.0, 4.2426, 15.0] {
                assert!((student_t_cdf(t, df) - dist.cdf(t)).abs() < 1e-9, "t={t} df={df}");
            }
        }
    }
}
