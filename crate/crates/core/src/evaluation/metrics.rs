use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Ae,
    Rae,
    Kld,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ae, Metric::Rae, Metric::Kld];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Ae => "ae",
            Metric::Rae => "rae",
            Metric::Kld => "kld",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "ae" => Ok(Metric::Ae),
            "rae" => Ok(Metric::Rae),
            "kld" => Ok(Metric::Kld),
            _ => Err(Error::invalid(format!("unknown metric `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricValue {
    pub metric: Metric,
    pub value: f64,
    pub smoothed: bool,
}

/// Additive smoothing with ε = 1/(2·sample_size).
pub fn smooth(p: [f64; 2], sample_size: usize) -> [f64; 2] {
    let eps = 1.0 / (2.0 * sample_size.max(1) as f64);
    let norm = 1.0 + 2.0 * eps;
    [(p[0] + eps) / norm, (p[1] + eps) / norm]
}

pub fn ae(true_p: [f64; 2], est_p: [f64; 2]) -> MetricValue {
    let value = 0.5 * ((est_p[0] - true_p[0]).abs() + (est_p[1] - true_p[1]).abs());
    MetricValue {
        metric: Metric::Ae,
        value,
        smoothed: false,
    }
}

pub fn rae(true_p: [f64; 2], est_p: [f64; 2], sample_size: usize) -> MetricValue {
    let (t, e) = (smooth(true_p, sample_size), smooth(est_p, sample_size));
    let value = 0.5 * ((e[0] - t[0]).abs() / t[0] + (e[1] - t[1]).abs() / t[1]);
    MetricValue {
        metric: Metric::Rae,
        value,
        smoothed: true,
    }
}

pub fn kld(true_p: [f64; 2], est_p: [f64; 2], sample_size: usize) -> MetricValue {
    let (t, e) = (smooth(true_p, sample_size), smooth(est_p, sample_size));
    let value = t[0] * (t[0] / e[0]).ln() + t[1] * (t[1] / e[1]).ln();
    MetricValue {
        metric: Metric::Kld,
        // rounding can leave a tiny negative value for equal inputs
        value: value.max(0.0),
        smoothed: true,
    }
}

/// The binary distribution `[p, 1 - p]`.
pub fn pair(p: f64) -> [f64; 2] {
    [p, 1.0 - p]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smoothing_examples() {
        let s = smooth([0.0, 1.0], 500);
        assert!((s[0] - 0.001 / 1.002).abs() < 1e-15);
        assert!((s[1] - 1.001 / 1.002).abs() < 1e-15);
        assert_eq!(smooth([0.5, 0.5], 37), [0.5, 0.5]);
    }

    #[test]
    fn hand_computed_values() {
        assert_eq!(ae(pair(0.3), pair(0.3)).value, 0.0);
        assert!((ae([0.5, 0.5], [0.7, 0.3]).value - 0.2).abs() < 1e-12);
        assert_eq!(ae([0.0, 1.0], [1.0, 0.0]).value, 1.0);

        assert_eq!(rae(pair(0.3), pair(0.3), 100).value, 0.0);
        assert!((rae([0.5, 0.5], [0.7, 0.3], 1_000_000_000).value - 0.4).abs() < 1e-6);

        assert_eq!(kld(pair(0.3), pair(0.3), 100).value, 0.0);
        let want = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kld([0.5, 0.5], [0.25, 0.75], 1_000_000_000).value - want).abs() < 1e-6);
        assert!((want - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn rae_matches_straight_line_oracle() {
        let eps: f64 = 1.0 / 1000.0;
        let t0 = (0.01 + eps) / (1.0 + 2.0 * eps);
        let t1 = (0.99 + eps) / (1.0 + 2.0 * eps);
        let e0 = (0.02 + eps) / (1.0 + 2.0 * eps);
        let e1 = (0.98 + eps) / (1.0 + 2.0 * eps);
        let want = ((e0 - t0).abs() / t0 + (e1 - t1).abs() / t1) / 2.0;
        let got = rae([0.01, 0.99], [0.02, 0.98], 500).value;
        assert!(got.is_finite());
        assert!((got - want).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn axioms(p in 0.0f64..=1.0, q in 0.0f64..=1.0, n in 1usize..5000) {
            let (a, b) = (pair(p), pair(q));
            let s = smooth(a, n);
            prop_assert!((s[0] + s[1] - 1.0).abs() < 1e-12 && s[0] > 0.0 && s[1] > 0.0);
            prop_assert!(ae(a, b).value >= 0.0 && ae(a, b).value <= 1.0);
            prop_assert!(rae(a, b, n).value >= 0.0);
            prop_assert!(kld(a, b, n).value >= 0.0);
            prop_assert_eq!(ae(a, a).value, 0.0);
            prop_assert_eq!(rae(a, a, n).value, 0.0);
            prop_assert_eq!(kld(a, a, n).value, 0.0);
        }
    }
}
