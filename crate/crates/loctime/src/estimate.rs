//! Monte Carlo scalar estimates and the streaming accumulator behind them.

use serde::{Deserialize, Serialize};

/// A Monte Carlo scalar: sample mean, its standard error, the sample count,
/// and the raw second moment of the underlying per-sample quantity
/// (diagnostic, used for variance-of-variance bookkeeping).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: u64,
    pub raw_second_moment: f64,
}

impl MomentEstimate {
    /// Standardized distance to an oracle value with its own uncertainty:
    /// `(mean − oracle) / sqrt(se² + oracle_se²)`. With both SEs zero the
    /// result is ±inf (or 0 on exact agreement) — never silently clamped.
    pub fn z_against(&self, oracle: f64, oracle_se: f64) -> f64 {
        let denom = (self.std_error * self.std_error + oracle_se * oracle_se).sqrt();
        let diff = self.mean - oracle;
        if denom == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                diff.signum() * f64::INFINITY
            }
        } else {
            diff / denom
        }
    }
}

const POWERS: usize = 6;

fn kahan_add(sum: &mut f64, comp: &mut f64, x: f64) {
    let y = x - *comp;
    let t = *sum + y;
    *comp = (t - *sum) - y;
    *sum = t;
}

/// Compensated accumulator of the first six power sums of a scalar sample
/// stream. Six powers support: mean and SE of x, x², x³ (SE of x^k needs
/// the 2k-th power) and the standard error of the sample variance (which
/// needs the fourth central moment).
///
/// Merging is a plain ordered addition of the partial sums, so folding
/// per-batch accumulators in a fixed batch order gives bit-identical
/// results regardless of how many workers filled the batches.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PowerSums {
    n: u64,
    sums: [f64; POWERS],
    comps: [f64; POWERS],
}

impl PowerSums {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let mut pow = 1.0;
        for k in 0..POWERS {
            pow *= x;
            kahan_add(&mut self.sums[k], &mut self.comps[k], pow);
        }
    }

    /// Fold another accumulator into this one. Call in a fixed order for
    /// deterministic aggregates.
    pub fn merge(&mut self, other: &PowerSums) {
        self.n += other.n;
        for k in 0..POWERS {
            kahan_add(&mut self.sums[k], &mut self.comps[k], other.sums[k]);
            kahan_add(&mut self.sums[k], &mut self.comps[k], other.comps[k]);
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// `S_k / n` for k in 1..=6.
    pub fn raw_moment(&self, k: usize) -> f64 {
        assert!((1..=POWERS).contains(&k), "tracked powers are 1..=6");
        self.sums[k - 1] / self.n as f64
    }

    /// Estimate of E[x^k] with standard error, k in 1..=3 (the SE of x^k
    /// uses the 2k-th power sum).
    pub fn estimate_of_power(&self, k: usize) -> MomentEstimate {
        assert!((1..=3).contains(&k), "SE needs power 2k <= 6");
        assert!(self.n >= 2, "need at least 2 samples for a standard error");
        let n = self.n as f64;
        let mean = self.raw_moment(k);
        let raw2 = self.raw_moment(2 * k);
        let sample_var = ((raw2 - mean * mean) * n / (n - 1.0)).max(0.0);
        MomentEstimate {
            mean,
            std_error: (sample_var / n).sqrt(),
            n: self.n,
            raw_second_moment: raw2,
        }
    }

    pub fn mean_estimate(&self) -> MomentEstimate {
        self.estimate_of_power(1)
    }

    /// Bessel-corrected sample variance.
    pub fn sample_variance(&self) -> f64 {
        let n = self.n as f64;
        let mean = self.raw_moment(1);
        ((self.raw_moment(2) - mean * mean) * n / (n - 1.0)).max(0.0)
    }

    /// Sample variance as a MomentEstimate: its standard error uses the
    /// fourth central moment, SE² = (m₄ − m₂²(n−3)/(n−1))/n.
    pub fn variance_estimate(&self) -> MomentEstimate {
        assert!(self.n >= 4, "variance SE needs a few samples");
        let n = self.n as f64;
        let mean = self.raw_moment(1);
        let m2 = (self.raw_moment(2) - mean * mean).max(0.0);
        let m4 = (self.raw_moment(4) - 4.0 * mean * self.raw_moment(3)
            + 6.0 * mean * mean * self.raw_moment(2)
            - 3.0 * mean.powi(4))
        .max(0.0);
        let var_of_var = ((m4 - m2 * m2 * (n - 3.0) / (n - 1.0)) / n).max(0.0);
        MomentEstimate {
            mean: m2 * n / (n - 1.0),
            std_error: var_of_var.sqrt(),
            n: self.n,
            raw_second_moment: self.raw_moment(4),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sample_by_hand() {
        let mut acc = PowerSums::new();
        for &x in &[1.0, 2.0, 3.0, 4.0] {
            acc.push(x);
        }
        assert_eq!(acc.n(), 4);
        let est = acc.mean_estimate();
        assert!((est.mean - 2.5).abs() < 1e-15);
        // Sample variance 5/3, SE of mean = sqrt(5/3/4).
        assert!((acc.sample_variance() - 5.0 / 3.0).abs() < 1e-14);
        assert!((est.std_error - (5.0 / 12.0f64).sqrt()).abs() < 1e-14);
        assert!((est.raw_second_moment - 7.5).abs() < 1e-15);
        assert!((acc.raw_moment(3) - 25.0).abs() < 1e-13);
    }

    #[test]
    fn merge_equals_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 2654435761u64 % 1000) as f64) * 0.01 - 5.0).collect();
        let mut whole = PowerSums::new();
        for &x in &xs {
            whole.push(x);
        }
        let mut first = PowerSums::new();
        let mut second = PowerSums::new();
        for &x in &xs[..431] {
            first.push(x);
        }
        for &x in &xs[431..] {
            second.push(x);
        }
        let mut merged = first;
        merged.merge(&second);
        assert_eq!(merged.n(), whole.n());
        for k in 1..=6 {
            let a = merged.raw_moment(k);
            let b = whole.raw_moment(k);
            assert!(
                (a - b).abs() <= 1e-12 * b.abs().max(1.0),
                "power {k}: {a} vs {b}"
            );
        }
    }

    #[test]
    fn z_score_edge_cases() {
        let est = MomentEstimate {
            mean: 1.0,
            std_error: 0.0,
            n: 10,
            raw_second_moment: 1.0,
        };
        assert_eq!(est.z_against(1.0, 0.0), 0.0);
        assert!(est.z_against(2.0, 0.0).is_infinite());
        let est2 = MomentEstimate {
            mean: 1.0,
            std_error: 0.1,
            n: 10,
            raw_second_moment: 1.0,
        };
        assert!((est2.z_against(0.7, 0.0) - 3.0).abs() < 1e-12);
        // Oracle uncertainty widens the denominator.
        assert!(est2.z_against(0.7, 0.1).abs() < 3.0);
    }

    #[test]
    fn variance_estimate_on_known_distribution() {
        // Uniform grid points on [0,1]: variance 1/12.
        let mut acc = PowerSums::new();
        let n = 100_000;
        for i in 0..n {
            acc.push((i as f64 + 0.5) / n as f64);
        }
        let v = acc.variance_estimate();
        assert!((v.mean - 1.0 / 12.0).abs() < 1e-6);
        // For a deterministic equally-spaced sample the variance SE formula
        // still returns a small positive number of the right scale
        // (m4 of uniform = 1/80, m2² = 1/144).
        let expected_se = ((1.0 / 80.0 - 1.0 / 144.0) / n as f64).sqrt();
        assert!((v.std_error - expected_se).abs() / expected_se < 1e-3);
    }
}
