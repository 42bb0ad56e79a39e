//! Seeded Brownian path simulation, with optional killing at an
//! independent exponential time.

use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

const MAX_STEPS: usize = 1 << 31;

/// A discretized Brownian trajectory: equally spaced times, Gaussian
/// increments of variance `dt`, fully determined by its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    dt: f64,
    start: f64,
    seed: u64,
    positions: Vec<f64>,
    t_end: f64,
}

impl Path {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Elapsed time; equals `dt * (positions.len() - 1)` exactly.
    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Smallest and largest position visited.
    pub fn range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &x in &self.positions {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        (lo, hi)
    }
}

fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    let steps = t_end / dt;
    let n = steps.round();
    if n < 1.0 {
        return Err(Error::param("dt", format!("dt={dt} exceeds half of t_end={t_end}")));
    }
    if n > MAX_STEPS as f64 {
        return Err(Error::param(
            "dt",
            format!("t_end/dt = {steps:.3e} steps exceeds the {MAX_STEPS} step limit"),
        ));
    }
    if (n * dt - t_end).abs() > 1e-9 * t_end {
        return Err(Error::param(
            "t_end",
            format!("must be an integer multiple of dt (t_end/dt = {steps})"),
        ));
    }
    Ok(n as usize)
}

fn walk(rng: &mut ChaCha8Rng, n_steps: usize, dt: f64, start: f64) -> Vec<f64> {
    let sqrt_dt = dt.sqrt();
    let mut positions = Vec::with_capacity(n_steps + 1);
    let mut x = start;
    positions.push(x);
    for _ in 0..n_steps {
        let z: f64 = StandardNormal.sample(rng);
        x += sqrt_dt * z;
        positions.push(x);
    }
    positions
}

/// Simulate a Brownian path over [0, t_end] with step `dt` from `start`.
/// `t_end` must be an integer multiple of `dt` (to 1e-9 relative).
pub fn simulate_path(t_end: f64, dt: f64, start: f64, seed: u64) -> Result<Path> {
    if !t_end.is_finite() || t_end <= 0.0 {
        return Err(Error::param("t_end", format!("must be finite and > 0, got {t_end}")));
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::param("dt", format!("must be finite and > 0, got {dt}")));
    }
    if dt > t_end {
        return Err(Error::param("dt", format!("dt={dt} exceeds t_end={t_end}")));
    }
    if !start.is_finite() {
        return Err(Error::param("start", "must be finite"));
    }
    let n_steps = step_count(t_end, dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = walk(&mut rng, n_steps, dt, start);
    Ok(Path {
        dt,
        start,
        seed,
        positions,
        t_end: dt * n_steps as f64,
    })
}

/// An exponential killing time: the rate and the value actually drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialClock {
    pub rate: f64,
    pub sampled_value: f64,
}

/// Simulate a path killed at an independent exponential time with the given
/// rate. The clock sample is drawn first from the seeded stream, then the
/// increments, so one seed reproduces both. The path length is the clock
/// value rounded to whole steps (possibly zero steps).
pub fn simulate_killed_path(
    rate: f64,
    dt: f64,
    start: f64,
    seed: u64,
) -> Result<(Path, ExponentialClock)> {
    if !rate.is_finite() || rate <= 0.0 {
        return Err(Error::param("rate", format!("must be finite and > 0, got {rate}")));
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::param("dt", format!("must be finite and > 0, got {dt}")));
    }
    if !start.is_finite() {
        return Err(Error::param("start", "must be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampled_value = Exp::new(rate)
        .expect("rate validated above")
        .sample(&mut rng);
    let n_steps_f = (sampled_value / dt).round();
    if n_steps_f > MAX_STEPS as f64 {
        return Err(Error::param(
            "dt",
            format!(
                "clock sample {sampled_value:.3e} needs more than {MAX_STEPS} steps at dt={dt}"
            ),
        ));
    }
    let n_steps = n_steps_f as usize;
    let positions = walk(&mut rng, n_steps, dt, start);
    let clock = ExponentialClock {
        rate,
        sampled_value,
    };
    Ok((
        Path {
            dt,
            start,
            seed,
            positions,
            t_end: dt * n_steps as f64,
        },
        clock,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_path() {
        let p = simulate_path(1.0, 1.0, 0.0, 7).unwrap();
        assert_eq!(p.positions().len(), 2);
        assert_eq!(p.positions()[0], 0.0);
        assert_eq!(p.t_end(), 1.0);
    }

    #[test]
    fn start_offset_and_exact_t_end() {
        let p = simulate_path(1.0, 1e-4, 2.0, 3).unwrap();
        assert_eq!(p.positions()[0], 2.0);
        assert_eq!(p.positions().len(), 10_001);
        assert_eq!(p.t_end(), 1e-4 * 10_000.0);
    }

    #[test]
    fn determinism() {
        let a = simulate_path(0.5, 1e-3, 0.0, 42).unwrap();
        let b = simulate_path(0.5, 1e-3, 0.0, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(0.5, 1e-3, 0.0, 43).unwrap();
        assert_ne!(a.positions()[1..], c.positions()[1..]);
    }

    #[test]
    fn terminal_variance_is_t() {
        // Var(B_1) = 1: sample variance over 10^4 seeds within 3 SE.
        // SE of a variance estimate at n=10^4 is about sqrt(2/n) = 0.014.
        let n = 10_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for seed in 0..n {
            let p = simulate_path(1.0, 1e-4, 0.0, seed).unwrap();
            let x = *p.positions().last().unwrap();
            sum += x;
            sum_sq += x * x;
        }
        let nf = n as f64;
        let var = (sum_sq - sum * sum / nf) / (nf - 1.0);
        let se = (2.0 / nf).sqrt();
        assert!(
            (var - 1.0).abs() <= 3.0 * se,
            "sample variance {var} vs 1 (3 SE = {})",
            3.0 * se
        );
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(simulate_path(0.0, 1e-3, 0.0, 1).is_err());
        assert!(simulate_path(1.0, 0.0, 0.0, 1).is_err());
        assert!(simulate_path(1.0, -1e-3, 0.0, 1).is_err());
        assert!(simulate_path(f64::NAN, 1e-3, 0.0, 1).is_err());
        assert!(simulate_path(1.0, 2.0, 0.0, 1).is_err());
        // t_end not a multiple of dt.
        assert!(simulate_path(1.0, 3e-4, 0.0, 1).is_err());
        assert!(simulate_killed_path(0.0, 1e-3, 0.0, 1).is_err());
        assert!(simulate_killed_path(-1.0, 1e-3, 0.0, 1).is_err());
    }

    #[test]
    fn killed_path_clock_means() {
        // Mean of the exponential clock is 1/rate; SE = 1/(rate sqrt n).
        for &rate in &[1.0f64, 2.0] {
            let n = 100_000u64;
            let mut sum = 0.0;
            for seed in 0..n {
                let (_, clock) = simulate_killed_path(rate, 1e-2, 0.0, seed).unwrap();
                assert!(clock.sampled_value > 0.0);
                sum += clock.sampled_value;
            }
            let mean = sum / n as f64;
            let se = 1.0 / (rate * (n as f64).sqrt());
            assert!(
                (mean - 1.0 / rate).abs() <= 3.0 * se,
                "rate={rate}: clock mean {mean}"
            );
        }
    }

    #[test]
    fn killed_path_determinism_and_consistency() {
        let (p1, c1) = simulate_killed_path(1.0, 1e-3, 0.5, 99).unwrap();
        let (p2, c2) = simulate_killed_path(1.0, 1e-3, 0.5, 99).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(c1, c2);
        assert_eq!(p1.positions()[0], 0.5);
        // Path length is the clock rounded to whole steps.
        assert!((p1.t_end() - c1.sampled_value).abs() <= 0.5 * p1.dt() + 1e-12);
    }
}
