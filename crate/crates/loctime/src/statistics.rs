//! Centered, normalized statistics of local time increments, and the
//! moments of their mixed-normal limit laws.

use crate::error::{Error, Result};
use crate::estimate::MomentEstimate;
use crate::local_time::{alpha_p, LocalTimeField};
use serde::{Deserialize, Serialize};

/// Which integrated-moment statistic a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    Second,
    Third,
    Fourth,
}

/// One evaluation of a centered statistic on one field, together with the
/// matching integrated moment of the plain local time (`alpha_companion`),
/// which sets the random variance of the limit law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatisticSample {
    pub kind: StatisticKind,
    pub h: f64,
    pub t: f64,
    pub value: f64,
    pub alpha_companion: f64,
}

/// Validate the lag against the grid and return it as a whole number of
/// cells. The lag must sit on the grid to 1e-12 relative — interpolating
/// inside the difference operator would contaminate the h-power
/// normalizations of the statistics.
fn lag_cells(field: &LocalTimeField, h: f64) -> Result<usize> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::param("h", format!("must be finite and > 0, got {h}")));
    }
    let dx = field.grid().dx;
    let k = (h / dx).round();
    let drift = (k * dx - h).abs();
    if k < 1.0 || drift > 1e-12 * h {
        return Err(Error::LagNotOnGrid { h, dx, drift });
    }
    Ok(k as usize)
}

/// Per-cell forward increment of the field at lag h: `L^{x+h} - L^x`,
/// with levels beyond the right edge read as zero (the grid margin keeps
/// real support away from the edges).
pub fn increment_field(field: &LocalTimeField, h: f64) -> Result<Vec<f64>> {
    let k = lag_cells(field, h)?;
    let v = field.values();
    let n = v.len();
    let mut inc = vec![0.0; n];
    for i in 0..n {
        let ahead = if i + k < n { v[i + k] } else { 0.0 };
        inc[i] = ahead - v[i];
    }
    Ok(inc)
}

pub(crate) struct IncrementIntegrals {
    /// Σ inc^p dx for p = 1..=4 (index p-1).
    pub(crate) powers: [f64; 4],
    /// Σ inc · L dx.
    pub(crate) cross: f64,
    /// Σ inc² · L dx.
    pub(crate) square_cross: f64,
    /// Σ L² dx.
    pub(crate) level_square: f64,
}

pub(crate) fn increment_integrals(field: &LocalTimeField, h: f64) -> Result<IncrementIntegrals> {
    let k = lag_cells(field, h)?;
    let v = field.values();
    let n = v.len();
    let dx = field.grid().dx;
    let mut powers = [0.0f64; 4];
    let mut cross = 0.0;
    let mut square_cross = 0.0;
    let mut level_square = 0.0;
    for i in 0..n {
        let ahead = if i + k < n { v[i + k] } else { 0.0 };
        let d = ahead - v[i];
        let d2 = d * d;
        powers[0] += d;
        powers[1] += d2;
        powers[2] += d2 * d;
        powers[3] += d2 * d2;
        cross += d * v[i];
        square_cross += d2 * v[i];
        level_square += v[i] * v[i];
    }
    for p in &mut powers {
        *p *= dx;
    }
    Ok(IncrementIntegrals {
        powers,
        cross: cross * dx,
        square_cross: square_cross * dx,
        level_square: level_square * dx,
    })
}

/// `[∫(Δ^h L)² dx − 4ht] / h^{3/2}`, with α_{2,t} as companion.
/// The centering uses the exact simulated t, not the re-summed occupation.
pub fn second_moment_statistic(field: &LocalTimeField, h: f64) -> Result<StatisticSample> {
    let ints = increment_integrals(field, h)?;
    let t = field.t();
    let value = (ints.powers[1] - 4.0 * h * t) / h.powf(1.5);
    Ok(StatisticSample {
        kind: StatisticKind::Second,
        h,
        t,
        value,
        alpha_companion: alpha_p(field, 2)?,
    })
}

/// `[∫(Δ^h L)³ dx − 12h ∫(Δ^h L)·L dx − 24h²t] / h²`, with α_{3,t} as
/// companion.
pub fn third_moment_statistic(field: &LocalTimeField, h: f64) -> Result<StatisticSample> {
    let ints = increment_integrals(field, h)?;
    let t = field.t();
    let value = (ints.powers[2] - 12.0 * h * ints.cross - 24.0 * h * h * t) / (h * h);
    Ok(StatisticSample {
        kind: StatisticKind::Third,
        h,
        t,
        value,
        alpha_companion: alpha_p(field, 3)?,
    })
}

/// How the fourth statistic's 48h² centering term is read. The display it
/// comes from has ambiguous bracketing; `Joint` (the default elsewhere)
/// keeps both terms under one integral, `SquareOnly` drops the cross term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FourthCentering {
    Joint,
    SquareOnly,
}

/// `[∫(Δ^h L)⁴ dx − 24h ∫(Δ^h L)² L dx + 48h² ∫((L)² − (Δ^h L)L) dx] / h^{5/2}`
/// with α_{4,t} as companion — the conjectured fourth-moment statistic,
/// under the `Joint` reading of the last centering term.
pub fn fourth_moment_statistic(field: &LocalTimeField, h: f64) -> Result<StatisticSample> {
    fourth_moment_statistic_with(field, h, FourthCentering::Joint)
}

/// [`fourth_moment_statistic`] with an explicit centering reading.
pub fn fourth_moment_statistic_with(
    field: &LocalTimeField,
    h: f64,
    centering: FourthCentering,
) -> Result<StatisticSample> {
    let ints = increment_integrals(field, h)?;
    let t = field.t();
    let last_term = match centering {
        FourthCentering::Joint => ints.level_square - ints.cross,
        FourthCentering::SquareOnly => ints.level_square,
    };
    let value = (ints.powers[3] - 24.0 * h * ints.square_cross + 48.0 * h * h * last_term)
        / h.powf(2.5);
    Ok(StatisticSample {
        kind: StatisticKind::Fourth,
        h,
        t,
        value,
        alpha_companion: alpha_p(field, 4)?,
    })
}

/// The limit scale constant for the q-th integrated moment statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitConstant {
    pub q: u32,
    pub c_q: f64,
}

/// `c_q = sqrt(2^{2q+1} q! / (q+1))`: c₂² = 64/3, c₃² = 192, c₄² = 2457.6.
pub fn limit_constant(q: u32) -> Result<LimitConstant> {
    if q < 2 {
        return Err(Error::param("q", "limit constants start at q = 2"));
    }
    if q > 30 {
        return Err(Error::param("q", "limit constants above q = 30 are outside the verified range"));
    }
    let mut factorial = 1.0f64;
    for j in 2..=q {
        factorial *= j as f64;
    }
    let c_sq = 2f64.powi(2 * q as i32 + 1) * factorial / (q as f64 + 1.0);
    Ok(LimitConstant { q, c_q: c_sq.sqrt() })
}

/// m-th moment of the mixed normal law `c sqrt(A) eta` with eta standard
/// normal independent of A, using empirical samples of A: zero for odd m,
/// and `[(2n)!/(2^n n!)] c^{2n} E[A^n]` for m = 2n, with the Monte Carlo
/// standard error of E[A^n] propagated through the constant factor.
pub fn mixed_normal_moment(m: u32, c: f64, alpha_samples: &[f64]) -> Result<MomentEstimate> {
    if m < 1 {
        return Err(Error::param("m", "moment order must be at least 1"));
    }
    if alpha_samples.is_empty() {
        return Err(Error::param("alpha_samples", "need at least one sample"));
    }
    if !c.is_finite() {
        return Err(Error::param("c", "must be finite"));
    }
    let n_samples = alpha_samples.len() as u64;
    if m % 2 == 1 {
        return Ok(MomentEstimate {
            mean: 0.0,
            std_error: 0.0,
            n: n_samples,
            raw_second_moment: 0.0,
        });
    }
    let half = m / 2;
    // (2n)!/(2^n n!) = (2n-1)!!
    let mut coeff = 1.0f64;
    let mut odd = 1u64;
    for _ in 0..half {
        coeff *= odd as f64;
        odd += 2;
    }
    let scale = coeff * c.powi(m as i32);

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for &a in alpha_samples {
        let x = a.powi(half as i32);
        sum += x;
        sum_sq += x * x;
    }
    let nf = n_samples as f64;
    let mean = sum / nf;
    let sample_var = if n_samples > 1 {
        ((sum_sq / nf - mean * mean) * nf / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(MomentEstimate {
        mean: scale * mean,
        std_error: scale.abs() * (sample_var / nf).sqrt(),
        n: n_samples,
        raw_second_moment: scale * scale * sum_sq / nf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_time::{local_time_field, GridSpec};
    use crate::path::simulate_killed_path;
    use proptest::prelude::*;

    fn synthetic_field(values: Vec<f64>, dx: f64, t: f64) -> LocalTimeField {
        let n = values.len();
        let grid = GridSpec::new(0.0, dx * n as f64, dx).unwrap();
        LocalTimeField::from_values(grid, values, t).unwrap()
    }

    #[test]
    fn increments_of_constant_zero_field() {
        let f = synthetic_field(vec![0.0; 16], 0.25, 1.0);
        let inc = increment_field(&f, 0.5).unwrap();
        assert!(inc.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn increment_of_single_spike() {
        // Spike v at cell 5, h = dx: +v one cell to the left, -v at the spike.
        let mut values = vec![0.0; 12];
        values[5] = 3.0;
        let f = synthetic_field(values, 0.5, 1.0);
        let inc = increment_field(&f, 0.5).unwrap();
        assert_eq!(inc[4], 3.0);
        assert_eq!(inc[5], -3.0);
        assert!(inc.iter().enumerate().all(|(i, &x)| x == 0.0 || i == 4 || i == 5));
    }

    #[test]
    fn lag_snapping() {
        let f = synthetic_field(vec![0.0; 16], 0.25, 1.0);
        assert!(increment_field(&f, 0.5).is_ok());
        match increment_field(&f, 0.3) {
            Err(Error::LagNotOnGrid { .. }) => {}
            other => panic!("expected lag error, got {other:?}"),
        }
        // A lag below one cell cannot be represented either.
        assert!(increment_field(&f, 0.1).is_err());
        assert!(increment_field(&f, -0.5).is_err());
    }

    proptest! {
        #[test]
        fn increments_telescope(values in prop::collection::vec(0.0..5.0f64, 8..40)) {
            // Pad with zeros so the field vanishes near both edges.
            let mut padded = vec![0.0; 4];
            padded.extend(values);
            padded.extend([0.0; 4]);
            let f = synthetic_field(padded, 0.125, 1.0);
            let inc = increment_field(&f, 0.25).unwrap();
            let total: f64 = inc.iter().sum::<f64>() * 0.125;
            let scale: f64 = f.values().iter().sum::<f64>() * 0.125;
            prop_assert!(total.abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn statistics_on_handmade_field() {
        // values [0,0,2,0,...], dx = 0.5, h = 0.5 (one cell), t = 1.
        // inc = [0, 2, -2, 0, ...]; Σinc²dx = 4; Σinc³dx = 0; Σinc·L dx = -2;
        // Σinc²·L dx = 8·0.5·? -> inc[2]²·v[2]·dx = 4·2·0.5 = 4; ΣL²dx = 2;
        // Σinc⁴dx = (16+16)·0.5 = 16.
        let mut values = vec![0.0; 10];
        values[2] = 2.0;
        let f = synthetic_field(values, 0.5, 1.0);
        let h = 0.5;

        let s2 = second_moment_statistic(&f, h).unwrap();
        assert_eq!(s2.kind, StatisticKind::Second);
        let expect2 = (4.0 - 4.0 * h) / h.powf(1.5);
        assert!((s2.value - expect2).abs() < 1e-12);
        assert!((s2.alpha_companion - 2.0).abs() < 1e-12);

        let s3 = third_moment_statistic(&f, h).unwrap();
        let expect3 = (0.0 - 12.0 * h * (-2.0) - 24.0 * h * h) / (h * h);
        assert!((s3.value - expect3).abs() < 1e-12);
        assert!((s3.alpha_companion - 4.0).abs() < 1e-12);

        let s4 = fourth_moment_statistic(&f, h).unwrap();
        let expect4 = (16.0 - 24.0 * h * 4.0 + 48.0 * h * h * (2.0 - (-2.0))) / h.powf(2.5);
        assert!((s4.value - expect4).abs() < 1e-12);
        assert!((s4.alpha_companion - 8.0).abs() < 1e-12);

        let s4b = fourth_moment_statistic_with(&f, h, FourthCentering::SquareOnly).unwrap();
        let expect4b = (16.0 - 24.0 * h * 4.0 + 48.0 * h * h * 2.0) / h.powf(2.5);
        assert!((s4b.value - expect4b).abs() < 1e-12);
    }

    #[test]
    fn zero_time_field_gives_zero_statistics() {
        // A killed path whose clock rounds to zero steps has an identically
        // zero field and t = 0; every statistic vanishes.
        let mut found = false;
        for seed in 0.. {
            let (path, clock) = simulate_killed_path(1.0, 1.0, 0.0, seed).unwrap();
            if clock.sampled_value < 0.5 {
                let grid = GridSpec::new(-4.0, 4.0, 0.5).unwrap();
                let f = local_time_field(&path, &grid).unwrap();
                assert_eq!(f.t(), 0.0);
                assert_eq!(second_moment_statistic(&f, 0.5).unwrap().value, 0.0);
                assert_eq!(third_moment_statistic(&f, 0.5).unwrap().value, 0.0);
                assert_eq!(fourth_moment_statistic(&f, 0.5).unwrap().value, 0.0);
                found = true;
                break;
            }
        }
        assert!(found);
    }

    #[test]
    fn limit_constants_exact() {
        let c2 = limit_constant(2).unwrap();
        assert!((c2.c_q * c2.c_q - 64.0 / 3.0).abs() < 1e-12);
        let c3 = limit_constant(3).unwrap();
        assert!((c3.c_q * c3.c_q - 192.0).abs() < 1e-12);
        let c4 = limit_constant(4).unwrap();
        assert!((c4.c_q * c4.c_q - 2457.6).abs() < 1e-9);
        assert!((c4.c_q - 49.5742).abs() < 5e-5);
        assert!(limit_constant(1).is_err());
    }

    #[test]
    fn mixed_normal_moments() {
        let ones = vec![1.0; 50];
        let m2 = mixed_normal_moment(2, 1.0, &ones).unwrap();
        assert_eq!(m2.mean, 1.0);
        assert_eq!(m2.std_error, 0.0);
        let m4 = mixed_normal_moment(4, 1.0, &ones).unwrap();
        assert_eq!(m4.mean, 3.0);
        let m6 = mixed_normal_moment(6, 1.0, &ones).unwrap();
        assert_eq!(m6.mean, 15.0);
        let m3 = mixed_normal_moment(3, 2.0, &ones).unwrap();
        assert_eq!(m3.mean, 0.0);
        assert_eq!(m3.std_error, 0.0);
        // Scale: m=2 moment of c sqrt(A) eta is c² E[A].
        let m2c = mixed_normal_moment(2, 3.0, &[2.0, 2.0]).unwrap();
        assert_eq!(m2c.mean, 18.0);
        assert!(mixed_normal_moment(0, 1.0, &ones).is_err());
        assert!(mixed_normal_moment(2, 1.0, &[]).is_err());
    }
}
