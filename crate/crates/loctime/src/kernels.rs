//! Closed-form kernels of one-dimensional Brownian motion — the resolvent
//! density `u_alpha` and the Gaussian transition density `heat_kernel` —
//! together with lag-h finite-difference operators and the quadrature
//! oracles built from them.
//!
//! Everything here is deterministic. The Monte Carlo side of the crate
//! treats these values as ground truth, so the integral routines carry
//! explicit error bounds and fail loudly when a requested certification
//! cannot be met.

use crate::error::{Error, Result};
use crate::quad::{integrate_panels, QuadratureResult};
use std::cell::Cell;

const SQRT_2PI: f64 = 2.5066282746310002;

/// Killing rate and lag pair used by the resolvent-difference integrals.
/// The lag is restricted to (0, 1]: every asymptotic statement verified
/// downstream is an h→0 statement, and the quadrature truncation radii
/// are tuned for lags at most 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialParams {
    pub alpha: f64,
    pub h: f64,
}

impl PotentialParams {
    pub fn new(alpha: f64, h: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::param("alpha", format!("must be finite and > 0, got {alpha}")));
        }
        if !h.is_finite() || h <= 0.0 || h > 1.0 {
            return Err(Error::param("h", format!("must lie in (0, 1], got {h}")));
        }
        Ok(PotentialParams { alpha, h })
    }
}

#[inline]
fn u_val(x: f64, sqrt_two_alpha: f64) -> f64 {
    (-sqrt_two_alpha * x.abs()).exp() / sqrt_two_alpha
}

#[inline]
fn p_val(t: f64, x: f64) -> f64 {
    (-x * x / (2.0 * t)).exp() / (SQRT_2PI * t.sqrt())
}

/// Resolvent density of Brownian motion at killing rate `alpha`:
/// `exp(-sqrt(2 alpha) |x|) / sqrt(2 alpha)`.
pub fn u_alpha(x: f64, alpha: f64) -> Result<f64> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::param("alpha", format!("must be finite and > 0, got {alpha}")));
    }
    Ok(u_val(x, (2.0 * alpha).sqrt()))
}

/// Gaussian transition density with variance `t`.
pub fn heat_kernel(t: f64, x: f64) -> Result<f64> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::param("t", format!("must be finite and > 0, got {t}")));
    }
    Ok(p_val(t, x))
}

/// Forward difference at lag h: `f(x+h) - f(x)`.
pub fn diff_h<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    f(x + h) - f(x)
}

/// Symmetric second difference at lag h: `2 f(x) - f(x+h) - f(x-h)`.
///
/// Sign convention: positive at the peak of a concave bump. Applied to the
/// resolvent density at the origin it equals `2(u(0) - u(h)) > 0`, and its
/// time-integrated heat-kernel version is the nonnegative tent profile
/// returned by [`second_diff_total_time_integral`].
pub fn diff_hh<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    2.0 * f(x) - f(x + h) - f(x - h)
}

/// `diff_hh` of the resolvent density at the origin, in closed form:
/// `2 (1 - exp(-sqrt(2 alpha) h)) / sqrt(2 alpha)` = 2h + O(h²).
pub fn u_hh_at_zero(alpha: f64, h: f64) -> Result<f64> {
    let params = PotentialParams::new(alpha, h)?;
    let s = (2.0 * params.alpha).sqrt();
    Ok(2.0 * (-(-s * params.h).exp_m1()) / s)
}

/// Shared implementation for [`integral_w_power`] and
/// [`integral_w_power_multi`]: integrates the product of second differences
/// of resolvent densities, one factor per entry of `alphas`, over the whole
/// line or over `|x| >= h`.
fn w_product_integral(alphas: &[f64], h: f64, restrict_abs_ge_h: bool) -> Result<QuadratureResult> {
    if alphas.is_empty() {
        return Err(Error::param("alphas", "need at least one killing rate"));
    }
    let mut rates = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let params = PotentialParams::new(alpha, h)?;
        rates.push((2.0 * params.alpha).sqrt());
    }
    let q = alphas.len() as i32;

    // Beyond the kink at |x| = h each factor is a pure exponential
    // e^{-s_i(x-h)} times a fixed h-dependent amplitude, so the truncation
    // tail is known in closed form instead of merely estimated.
    let s_total: f64 = rates.iter().sum();
    let radius = h + 47.0 / s_total;
    let mut tail_amp = 1.0 / s_total;
    for &s in &rates {
        // |w(x)| = 2(cosh(s h) - 1) e^{-s x} / s for x >= h.
        tail_amp *= 2.0 * ((s * h).cosh() - 1.0) * (-s * h).exp() / s;
    }
    let tail_bound = tail_amp * (-s_total * (radius - h)).exp();

    let integrand = |x: f64| {
        let mut prod = 1.0;
        for &s in &rates {
            prod *= 2.0 * u_val(x, s) - u_val(x + h, s) - u_val(x - h, s);
        }
        prod
    };

    let h_power = h.powi(q + 1);
    let breaks: &[f64] = if restrict_abs_ge_h {
        &[h, radius]
    } else {
        &[0.0, h, radius]
    };
    let result = integrate_panels(integrand, breaks, 1e-6 * h_power, 1e-10)
        .scaled(2.0)
        .with_extra_error(2.0 * tail_bound);

    let certification = 1e-3 * h_power;
    if result.abs_error_bound > certification {
        return Err(Error::QuadratureTolerance {
            requested: certification,
            achieved: result.abs_error_bound,
        });
    }
    Ok(result)
}

/// Integral over x of the q-th power of the second difference of the
/// resolvent density, `(2u(x) - u(x+h) - u(x-h))^q`. As h→0 the value is
/// `(2^{q+1}/(q+1)) h^{q+1}` to first order; restricted to `|x| >= h` the
/// same integral collapses to O(h^{2q}). The returned error bound is
/// certified to at most `1e-3 h^{q+1}`.
pub fn integral_w_power(
    alpha: f64,
    h: f64,
    q: u32,
    restrict_abs_ge_h: bool,
) -> Result<QuadratureResult> {
    if q < 1 {
        return Err(Error::param("q", "power must be at least 1"));
    }
    let alphas = vec![alpha; q as usize];
    w_product_integral(&alphas, h, restrict_abs_ge_h)
}

/// Mixed-rate version of [`integral_w_power`]: one second-difference factor
/// per killing rate in `alphas`. The small-h coefficient `2^{q+1}/(q+1)`
/// with q = alphas.len() does not depend on the rates.
pub fn integral_w_power_multi(alphas: &[f64], h: f64) -> Result<QuadratureResult> {
    w_product_integral(alphas, h, false)
}

/// Which difference stencil to apply to the heat kernel in time-integral
/// and sup-bound computations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatMode {
    /// The kernel itself.
    Plain,
    /// Forward difference in space at lag h.
    DiffH,
    /// Symmetric second difference in space at lag h.
    DiffHh,
}

fn heat_mode_value(t: f64, x: f64, mode: HeatMode, h: f64) -> f64 {
    match mode {
        HeatMode::Plain => p_val(t, x),
        HeatMode::DiffH => p_val(t, x + h) - p_val(t, x),
        HeatMode::DiffHh => 2.0 * p_val(t, x) - p_val(t, x + h) - p_val(t, x - h),
    }
}

fn heat_mode_stencil(x: f64, mode: HeatMode, h: f64) -> Vec<f64> {
    match mode {
        HeatMode::Plain => vec![x],
        HeatMode::DiffH => vec![x, x + h],
        HeatMode::DiffHh => vec![x - h, x, x + h],
    }
}

/// `int_0^T` of the (possibly differenced) heat kernel at a fixed spatial
/// point. `t_max` may be `f64::INFINITY` for the difference modes; the
/// plain kernel's time integral diverges in one dimension, so that
/// combination is rejected.
///
/// The t→0 end is handled by the substitution t = s² (which turns the
/// t^{-1/2} singularity into a bounded integrand) and the t→∞ end by
/// t = 1/v², leaving finite panels for the adaptive rule.
pub fn heat_kernel_time_integral(x: f64, t_max: f64, mode: HeatMode, h: f64) -> Result<f64> {
    if t_max <= 0.0 || t_max.is_nan() {
        return Err(Error::param("t_max", format!("must be > 0, got {t_max}")));
    }
    if mode != HeatMode::Plain && (!h.is_finite() || h <= 0.0) {
        return Err(Error::param("h", format!("difference modes need h > 0, got {h}")));
    }
    if mode == HeatMode::Plain && t_max.is_infinite() {
        return Err(Error::param(
            "t_max",
            "the plain kernel's full time integral diverges; use a finite t_max",
        ));
    }

    let eps_abs = 1e-15;
    let eps_rel = 1e-11;
    let mut total = 0.0;

    // Short-time part over [0, min(t_max, 1)] via t = s².
    let t_short = t_max.min(1.0);
    let s_top = t_short.sqrt();
    // Below s_cut every stencil point has exponent x²/(2s²) deep in the
    // underflow regime; splitting there keeps the adaptive rule from
    // probing a numerically-zero region.
    let nearest = heat_mode_stencil(x, mode, h)
        .into_iter()
        .map(f64::abs)
        .fold(f64::INFINITY, f64::min);
    let s_cut = nearest / 1400f64.sqrt();
    let mut short_breaks = vec![0.0];
    if s_cut > 0.0 && s_cut < s_top {
        short_breaks.push(s_cut);
    }
    short_breaks.push(s_top);
    total += integrate_panels(
        |s: f64| 2.0 * s * heat_mode_value(s * s, x, mode, h),
        &short_breaks,
        eps_abs,
        eps_rel,
    )
    .value;

    if t_max > 1.0 {
        if t_max.is_finite() {
            // Plain panels, geometric spacing: the integrand is smooth and
            // slowly varying for t >= 1.
            let mut breaks = vec![1.0];
            let mut edge = 2.0;
            while edge < t_max {
                breaks.push(edge);
                edge *= 2.0;
            }
            breaks.push(t_max);
            total += integrate_panels(
                |t: f64| heat_mode_value(t, x, mode, h),
                &breaks,
                eps_abs,
                eps_rel,
            )
            .value;
        } else {
            // Tail via t = 1/v²: dt = 2 dv / v³, v from 0 to 1. The
            // differenced kernels decay like t^{-3/2}, so the substituted
            // integrand extends smoothly to v = 0.
            total += integrate_panels(
                |v: f64| {
                    let t = 1.0 / (v * v);
                    2.0 / (v * v * v) * heat_mode_value(t, x, mode, h)
                },
                &[0.0, 1.0],
                eps_abs,
                eps_rel,
            )
            .value;
        }
    }
    Ok(total)
}

/// Exact value of `int_0^inf diff_hh(p_t)(x) dt`: the tent profile
/// `2 (h - |x|)^+`. Follows from the forward-difference identity
/// `int_0^inf [p_t(y) - p_t(z)] dt = |z| - |y|` applied twice.
pub fn second_diff_total_time_integral(x: f64, h: f64) -> f64 {
    2.0 * (h - x.abs()).max(0.0)
}

/// Upper time limit for [`integral_heat_diff_power`]: integrate the second
/// difference of the heat kernel over all time or only up to the lag h.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpperLimit {
    Infinity,
    Lag,
}

/// Result of [`integral_heat_diff_power`]: the direct x-space evaluation,
/// the independent Fourier-side evaluation where available (q = 2, 3), and
/// their relative gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatPowerIntegral {
    pub direct: QuadratureResult,
    pub fourier: Option<QuadratureResult>,
    pub rel_gap: Option<f64>,
}

/// `int (int_0^{upper} diff_hh(p_t)(x) dt)^q dx`, computed two independent
/// ways: directly in x-space (any q >= 2) and through the Fourier
/// representation `(8^q h^{q+1}/(2pi)^{q-1}) int prod_j sin²(p_j/2)/p_j² ...`
/// (q = 2, 3 only), with the spectral factor `1 - exp(-p²/(2h))` inserted
/// per coordinate when the time integral stops at the lag.
///
/// Small-h behaviour of the value is `(2^{q+1}/(q+1)) h^{q+1}`; for
/// `UpperLimit::Infinity` the inner integral is exactly the tent profile and
/// the coefficient is exact at every h.
pub fn integral_heat_diff_power(h: f64, q: u32, upper: UpperLimit) -> Result<HeatPowerIntegral> {
    if !(0.0..=1.0).contains(&h) || h == 0.0 || !h.is_finite() {
        return Err(Error::param("h", format!("must lie in (0, 1], got {h}")));
    }
    if q < 2 {
        return Err(Error::param("q", "power must be at least 2"));
    }
    if q > 8 {
        return Err(Error::param("q", "powers above 8 are outside the verified range"));
    }

    let t_upper = match upper {
        UpperLimit::Infinity => f64::INFINITY,
        UpperLimit::Lag => h,
    };

    // Direct route: outer quadrature over x of the q-th power of the inner
    // time integral. The inner call is itself adaptive; its tolerance is
    // propagated into the outer bound below.
    let inner_tol = Cell::new(0.0f64);
    let inner = |x: f64| {
        let v = heat_kernel_time_integral(x, t_upper, HeatMode::DiffHh, h)
            .expect("inner time integral parameters are validated above");
        inner_tol.set(inner_tol.get().max(1e-15 + 1e-11 * v.abs()));
        v
    };
    let x_top = match upper {
        // The inner integral vanishes identically beyond |x| = h.
        UpperLimit::Infinity => 2.0 * h,
        // Gaussian-type decay on scale sqrt(h) beyond the kink.
        UpperLimit::Lag => h + 9.5 * h.sqrt(),
    };
    let mut breaks = vec![0.0, h];
    if upper == UpperLimit::Lag {
        breaks.push(h + h.sqrt());
    }
    breaks.push(x_top);
    let qi = q as i32;
    let h_power = h.powi(qi + 1);
    let outer = integrate_panels(
        |x: f64| inner(x).powi(qi),
        &breaks,
        1e-7 * h_power,
        1e-8,
    );
    // First-order propagation of the inner tolerance through the q-th power.
    let propagated =
        2.0 * x_top * q as f64 * (2.0 * h).powi(qi - 1) * inner_tol.get();
    let direct = outer.scaled(2.0).with_extra_error(propagated);

    let fourier = match q {
        2 => Some(fourier_power_q2(h, upper)),
        3 => Some(fourier_power_q3(h, upper)),
        _ => None,
    };
    let rel_gap = fourier.map(|f| {
        let scale = direct.value.abs().max(f64::MIN_POSITIVE);
        (direct.value - f.value).abs() / scale
    });

    Ok(HeatPowerIntegral {
        direct,
        fourier,
        rel_gap,
    })
}

/// Spectral profile sin²(p/2)/p² times the finite-upper-limit factor.
#[inline]
fn spectral_factor(p: f64, h: f64, upper: UpperLimit) -> f64 {
    let base = if p == 0.0 {
        0.25
    } else {
        let s = (0.5 * p).sin();
        s * s / (p * p)
    };
    match upper {
        UpperLimit::Infinity => base,
        UpperLimit::Lag => base * (-(-p * p / (2.0 * h)).exp_m1()),
    }
}

fn oscillation_breaks(limit: f64, step: f64) -> Vec<f64> {
    let mut breaks = vec![0.0];
    let mut edge = step;
    while edge < limit {
        breaks.push(edge);
        edge += step;
    }
    breaks.push(limit);
    breaks
}

fn fourier_power_q2(h: f64, upper: UpperLimit) -> QuadratureResult {
    const P: f64 = 400.0;
    let breaks = oscillation_breaks(P, std::f64::consts::PI);
    let line = integrate_panels(
        |p: f64| {
            let f = spectral_factor(p, h, upper);
            f * f
        },
        &breaks,
        1e-12,
        1e-10,
    )
    .scaled(2.0)
    // |f(p)| <= 1/p², so the discarded tail is below 2/(3P³).
    .with_extra_error(2.0 / (3.0 * P * P * P));
    line.scaled(64.0 * h.powi(3) / (2.0 * std::f64::consts::PI))
}

fn fourier_power_q3(h: f64, upper: UpperLimit) -> QuadratureResult {
    const P: f64 = 80.0;
    let pi = std::f64::consts::PI;
    let inner_eps = 2e-10;
    let inner_evals = Cell::new(0u64);

    // F(a) = int_{-P}^{P} f(p) f(a + p) dp, even in a.
    let cross = |a: f64| {
        let mut breaks: Vec<f64> = Vec::with_capacity(176);
        let mut edge = -P;
        while edge < P - 0.5 * pi {
            breaks.push(edge);
            edge += pi;
        }
        breaks.push(P);
        // The two peaks of the integrand are at p = 0 (already on the pi
        // grid) and p = -a; split there so the rule sees them.
        if -a > -P && -a < P {
            let pos = breaks.partition_point(|&b| b < -a);
            if (breaks[pos] + a).abs() > 1e-9 && (breaks[pos - 1] + a).abs() > 1e-9 {
                breaks.insert(pos, -a);
            }
        }
        let r = integrate_panels(
            |p: f64| spectral_factor(p, h, upper) * spectral_factor(a + p, h, upper),
            &breaks,
            inner_eps,
            1e-9,
        );
        inner_evals.set(inner_evals.get() + r.evaluations);
        r.value
    };

    let outer_breaks = oscillation_breaks(P, pi);
    let outer = integrate_panels(
        |a: f64| cross(a) * spectral_factor(a, h, upper),
        &outer_breaks,
        1e-8,
        1e-7,
    );
    // Outside the [-P, P]² box one of the three spectral arguments exceeds
    // P/2 in magnitude, giving the closed-form envelope 16 pi / (3 P³).
    let tail = 16.0 * pi / (3.0 * P * P * P);
    // The inner tolerance enters the outer integrand linearly.
    let propagated = 2.0 * P * inner_eps;
    let raw = QuadratureResult {
        value: 2.0 * outer.value,
        abs_error_bound: 2.0 * outer.abs_error_bound + tail + propagated,
        evaluations: outer.evaluations + inner_evals.get(),
    };
    raw.scaled(512.0 * h.powi(4) / (4.0 * pi * pi))
}

/// Componentwise sup over t in [delta, t_max] of the absolute heat kernel,
/// its forward difference, and its second difference at a fixed x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupHeatBounds {
    pub plain: f64,
    pub diff_h: f64,
    pub diff_hh: f64,
}

/// Dense-grid sup of |p_t(x)|, |diff_h p_t(x)|, |diff_hh p_t(x)| over
/// t in [delta, t_max] (geometric grid, 2001 points). Used to fit and then
/// re-assert the frozen envelope constants of the calibration file.
pub fn sup_heat_bounds(delta: f64, t_max: f64, h: f64, x: f64) -> Result<SupHeatBounds> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::param("delta", format!("must be finite and > 0, got {delta}")));
    }
    if !t_max.is_finite() || t_max < delta {
        return Err(Error::param("t_max", format!("must be finite and >= delta, got {t_max}")));
    }
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::param("h", format!("must be finite and > 0, got {h}")));
    }
    let n = 2000;
    let ratio = t_max / delta;
    let mut sup = SupHeatBounds {
        plain: 0.0,
        diff_h: 0.0,
        diff_hh: 0.0,
    };
    for j in 0..=n {
        let t = delta * ratio.powf(j as f64 / n as f64);
        sup.plain = sup.plain.max(heat_mode_value(t, x, HeatMode::Plain, h).abs());
        sup.diff_h = sup.diff_h.max(heat_mode_value(t, x, HeatMode::DiffH, h).abs());
        sup.diff_hh = sup
            .diff_hh
            .max(heat_mode_value(t, x, HeatMode::DiffHh, h).abs());
    }
    Ok(sup)
}

/// E of the squared local time integrated over space for a path run for
/// time t from the origin: `2 int_0^t (t-v) p_v(0) dv`, the two-time moment
/// formula after the spatial marginal (which integrates to one) and one
/// time variable (contributing the factor t - v) are integrated out.
/// Closed form: `(8/3) t^{3/2} / sqrt(2 pi)`.
pub fn mean_alpha2(t: f64) -> Result<f64> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::param("t", format!("must be finite and > 0, got {t}")));
    }
    let r = integrate_panels(
        |s: f64| 2.0 * s * 2.0 * (t - s * s) * p_val(s * s, 0.0),
        &[0.0, t.sqrt()],
        1e-13,
        1e-11,
    );
    Ok(r.value)
}

/// E of the cubed local time integrated over space, same setup as
/// [`mean_alpha2`]: `(8/sqrt(2 pi)) int_0^t (t-v)^{3/2} p_v(0) dv`, which
/// evaluates to `(3/2) t²`.
pub fn mean_alpha3(t: f64) -> Result<f64> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::param("t", format!("must be finite and > 0, got {t}")));
    }
    let r = integrate_panels(
        |s: f64| 2.0 * s * (t - s * s).powf(1.5) * p_val(s * s, 0.0),
        &[0.0, t.sqrt()],
        1e-13,
        1e-11,
    );
    Ok(8.0 / SQRT_2PI * r.value)
}

/// Exact E of `int (L^{x+h} - L^x)² dx` at fixed time t:
/// `4 int_0^t (t-v) [p_v(0) - p_v(h)] dv`. Approaches `4 h t` as h→0 with a
/// deficit of `(8/sqrt(2 pi)) h² sqrt(t)` at first order — the reference
/// point for estimator-bias measurements and finite-h centering analysis.
pub fn mean_second_increment_integral(t: f64, h: f64) -> Result<f64> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::param("t", format!("must be finite and > 0, got {t}")));
    }
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::param("h", format!("must be finite and > 0, got {h}")));
    }
    let s_cut = h / 1400f64.sqrt();
    let mut breaks = vec![0.0];
    if s_cut < t.sqrt() {
        breaks.push(s_cut);
    }
    breaks.push(t.sqrt());
    let r = integrate_panels(
        |s: f64| {
            let v = s * s;
            2.0 * s * 4.0 * (t - v) * (p_val(v, 0.0) - p_val(v, h))
        },
        &breaks,
        1e-13,
        1e-11,
    );
    Ok(r.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT_2_OVER_PI: f64 = 0.7978845608028654;

    #[test]
    fn resolvent_closed_form() {
        // At alpha = 1/2 the decay rate is exactly 1 and u(0) = 1.
        assert_eq!(u_alpha(0.0, 0.5).unwrap(), 1.0);
        let v = u_alpha(1.5, 0.5).unwrap();
        assert!((v - (-1.5f64).exp()).abs() < 1e-15);
        assert!(u_alpha(0.0, -1.0).is_err());
        assert!(u_alpha(0.0, 0.0).is_err());
    }

    #[test]
    fn resolvent_is_even() {
        for &alpha in &[0.5, 1.0, 2.0] {
            for i in 0..40 {
                let x = -2.0 + 0.1 * i as f64;
                assert_eq!(u_alpha(x, alpha).unwrap(), u_alpha(-x, alpha).unwrap());
            }
        }
    }

    #[test]
    fn resolvent_total_mass() {
        // int u_alpha = 1/alpha.
        for &alpha in &[0.5f64, 1.0, 2.0] {
            let r = integrate_panels(
                |x: f64| u_val(x, (2.0 * alpha).sqrt()),
                &[0.0, 60.0 / (2.0 * alpha).sqrt()],
                1e-12,
                1e-12,
            );
            assert!(
                (2.0 * r.value - 1.0 / alpha).abs() < 1e-8,
                "alpha={alpha}: got {}",
                2.0 * r.value
            );
        }
    }

    #[test]
    fn heat_kernel_closed_form() {
        assert!((heat_kernel(1.0, 0.0).unwrap() - 1.0 / SQRT_2PI).abs() < 1e-16);
        assert_eq!(heat_kernel(0.7, 1.3).unwrap(), heat_kernel(0.7, -1.3).unwrap());
        assert!(heat_kernel(0.0, 0.0).is_err());
        assert!(heat_kernel(-1.0, 0.0).is_err());
    }

    #[test]
    fn difference_stencils() {
        let lin = |x: f64| 3.0 * x - 7.0;
        assert_eq!(diff_hh(lin, 0.4, 0.1), 0.0);
        assert_eq!(diff_h(|_| 5.0, 1.0, 0.3), 0.0);
        // Quadratic bump: second difference is 2a h² for f = -a x².
        let quad = |x: f64| -2.0 * x * x;
        assert!((diff_hh(quad, 1.0, 0.25) - 2.0 * 2.0 * 0.0625).abs() < 1e-12);
    }

    #[test]
    fn second_diff_of_resolvent_at_origin() {
        for &(alpha, h) in &[(0.5, 0.1), (1.0, 0.05), (2.0, 0.3)] {
            let direct = diff_hh(|x| u_alpha(x, alpha).unwrap(), 0.0, h);
            let expected = 2.0 * (u_alpha(0.0, alpha).unwrap() - u_alpha(h, alpha).unwrap());
            assert!((direct - expected).abs() < 1e-15);
            let closed = u_hh_at_zero(alpha, h).unwrap();
            assert!((direct - closed).abs() < 1e-14);
        }
    }

    #[test]
    fn u_hh_leading_coefficient() {
        // 2(1 - e^{-h})/1 = 2h + O(h²) at alpha = 1/2.
        let h = 1e-4;
        let v = u_hh_at_zero(0.5, h).unwrap();
        assert!((v / h - 2.0).abs() < 1e-3);
        assert!((u_hh_at_zero(0.5, 1.0).unwrap() - 2.0 * (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn w_power_coefficients_converge() {
        // value / h^{q+1} -> 2^{q+1}/(q+1), with the error shrinking in h.
        for &(q, coeff) in &[(2u32, 8.0 / 3.0), (3u32, 4.0)] {
            let mut last_err = f64::INFINITY;
            for &h in &[0.1, 0.05, 0.02, 0.01] {
                let r = integral_w_power(0.5, h, q, false).unwrap();
                let ratio = r.value / h.powi(q as i32 + 1);
                let err = (ratio - coeff).abs();
                assert!(
                    err < last_err,
                    "q={q} h={h}: error {err} did not shrink from {last_err}"
                );
                last_err = err;
            }
            assert!(
                last_err / coeff < 0.10,
                "q={q}: final relative error {}",
                last_err / coeff
            );
        }
    }

    #[test]
    fn w_power_restricted_is_higher_order() {
        // Away from the lag the integral is O(h^{2q}), so the h^{q+1}-scaled
        // ratio collapses toward zero.
        let mut last = f64::INFINITY;
        for &h in &[0.1, 0.05, 0.02, 0.01] {
            let r = integral_w_power(0.5, h, 2, true).unwrap();
            let ratio = r.value.abs() / h.powi(3);
            assert!(ratio < last, "h={h}: restricted ratio {ratio} grew");
            last = ratio;
        }
        assert!(last < 0.05, "restricted ratio should be tiny at h=0.01, got {last}");
    }

    #[test]
    fn w_power_unrestricted_q1() {
        // q = 1: int w dx = O(h²); exact value 2 h u_hh(0)-ish scale.
        let h = 0.01;
        let r = integral_w_power(0.5, h, 1, false).unwrap();
        assert!(r.value.abs() < 10.0 * h * h);
        assert!(r.abs_error_bound <= 1e-3 * h * h);
    }

    #[test]
    fn w_power_multi_matches_and_shares_constant() {
        let h = 0.01;
        let same = integral_w_power_multi(&[0.5, 0.5, 0.5], h).unwrap();
        let single = integral_w_power(0.5, h, 3, false).unwrap();
        assert!((same.value - single.value).abs() <= same.abs_error_bound + single.abs_error_bound);

        let mixed3 = integral_w_power_multi(&[0.5, 1.0, 2.0], h).unwrap();
        assert!((mixed3.value / h.powi(4) - 4.0).abs() / 4.0 < 0.10);

        let mixed2 = integral_w_power_multi(&[0.5, 2.0], h).unwrap();
        assert!((mixed2.value / h.powi(3) - 8.0 / 3.0).abs() / (8.0 / 3.0) < 0.10);
    }

    #[test]
    fn plain_time_integral_at_origin() {
        // int_0^1 p_t(0) dt = sqrt(2/pi).
        let v = heat_kernel_time_integral(0.0, 1.0, HeatMode::Plain, 0.1).unwrap();
        assert!((v - SQRT_2_OVER_PI).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn laplace_transform_recovers_resolvent() {
        // int_0^inf e^{-alpha t} p_t(x) dt = u_alpha(x). The damped integral
        // is evaluated with the same panel machinery used everywhere else.
        for &alpha in &[0.5, 1.0, 2.0] {
            for i in 0..=100 {
                let x = -5.0 + 0.1 * i as f64;
                let t_cut = 1.0 + 45.0 / alpha;
                let s_cut = x.abs() / 1400f64.sqrt();
                let mut breaks = vec![0.0];
                if s_cut > 0.0 && s_cut < 1.0 {
                    breaks.push(s_cut);
                }
                breaks.push(1.0);
                let short = integrate_panels(
                    |s: f64| 2.0 * s * (-alpha * s * s).exp() * p_val(s * s, x),
                    &breaks,
                    1e-12,
                    1e-10,
                );
                let long = integrate_panels(
                    |t: f64| (-alpha * t).exp() * p_val(t, x),
                    &[1.0, 2.0, 4.0, 8.0, 16.0, t_cut.max(16.0)],
                    1e-12,
                    1e-10,
                );
                let lhs = short.value + long.value;
                let rhs = u_alpha(x, alpha).unwrap();
                assert!(
                    (lhs - rhs).abs() <= 1e-6,
                    "alpha={alpha} x={x}: |{lhs} - {rhs}|"
                );
            }
        }
    }

    #[test]
    fn second_diff_time_integral_is_tent() {
        let h = 0.2;
        for &x in &[0.0, 0.05, 0.1, 0.19, 0.21, 0.5, 1.0] {
            let quad = heat_kernel_time_integral(x, f64::INFINITY, HeatMode::DiffHh, h).unwrap();
            let tent = second_diff_total_time_integral(x, h);
            assert!(
                (quad - tent).abs() < 1e-9,
                "x={x}: quad {quad} vs tent {tent}"
            );
        }
    }

    #[test]
    fn forward_diff_full_time_integral() {
        // int_0^inf [p_t(x+h) - p_t(x)] dt = |x| - |x+h|.
        let h = 0.3;
        for &x in &[0.0, 0.2, -0.1, 1.0] {
            let v = heat_kernel_time_integral(x, f64::INFINITY, HeatMode::DiffH, h).unwrap();
            let expected = x.abs() - (x + h).abs();
            assert!((v - expected).abs() < 1e-9, "x={x}: {v} vs {expected}");
        }
    }

    #[test]
    fn plain_infinite_integral_rejected() {
        assert!(heat_kernel_time_integral(0.0, f64::INFINITY, HeatMode::Plain, 0.1).is_err());
    }

    #[test]
    fn heat_power_integral_coefficients() {
        // The lag-limited integral approaches the constant with an O(sqrt h)
        // deficit: measured 7.72% (q=2) and 15.17% (q=3) at h=0.01, shrinking
        // by ~1/sqrt(2) per halving of h. The q=3 lag case therefore sits
        // just outside a 15% band at h=0.01; it is asserted at its true
        // envelope here and within 15% once h reaches 0.0025.
        let h = 0.01;
        for &(q, coeff) in &[(2u32, 8.0 / 3.0), (3u32, 4.0)] {
            for &upper in &[UpperLimit::Infinity, UpperLimit::Lag] {
                let r = integral_heat_diff_power(h, q, upper).unwrap();
                let ratio = r.direct.value / h.powi(q as i32 + 1);
                let band = if q == 3 && upper == UpperLimit::Lag {
                    0.16
                } else {
                    0.15
                };
                assert!(
                    (ratio - coeff).abs() / coeff < band,
                    "q={q} upper={upper:?}: ratio {ratio} vs {coeff}"
                );
                let gap = r.rel_gap.unwrap();
                assert!(gap <= 1e-3, "q={q} upper={upper:?}: fourier gap {gap}");
            }
        }

        let mut last = f64::INFINITY;
        for &h in &[0.01, 0.005, 0.0025] {
            let r = integral_heat_diff_power(h, 3, UpperLimit::Lag).unwrap();
            let deficit = (4.0 - r.direct.value / h.powi(4)).abs() / 4.0;
            assert!(deficit < last, "h={h}: deficit {deficit} did not shrink");
            last = deficit;
        }
        assert!(last < 0.15, "q=3 lag deficit at h=0.0025: {last}");
    }

    #[test]
    fn heat_power_infinite_upper_is_exact_tent_integral() {
        // With the tent as inner integral the direct value is
        // 2^{q+1} h^{q+1} / (q+1) exactly, up to quadrature error.
        for &h in &[0.1, 0.01] {
            for &q in &[2u32, 3, 4] {
                let r = integral_heat_diff_power(h, q, UpperLimit::Infinity).unwrap();
                let exact = 2f64.powi(q as i32 + 1) / (q as f64 + 1.0) * h.powi(q as i32 + 1);
                assert!(
                    (r.direct.value - exact).abs() < 1e-6 * exact,
                    "q={q} h={h}: {} vs {exact}",
                    r.direct.value
                );
            }
        }
    }

    #[test]
    fn sup_bounds_basics() {
        let s = sup_heat_bounds(0.1, 1.0, 0.05, 0.0).unwrap();
        // The plain sup at x=0 is attained at the smallest time.
        assert!((s.plain - p_val(0.1, 0.0)).abs() < 1e-14);
        assert!(s.diff_h > 0.0 && s.diff_hh > 0.0);
        assert!(sup_heat_bounds(0.0, 1.0, 0.05, 0.0).is_err());
        assert!(sup_heat_bounds(0.5, 0.1, 0.05, 0.0).is_err());
    }

    #[test]
    fn alpha_moment_oracles_match_closed_forms() {
        // E int L² dx at t: (8/3) t^{3/2} / sqrt(2 pi); at t=1 that is
        // 1.06384608652051… E int L³ dx at t: (3/2) t².
        let a2 = mean_alpha2(1.0).unwrap();
        assert!((a2 - 8.0 / 3.0 / SQRT_2PI).abs() < 1e-10, "got {a2}");
        let a3 = mean_alpha3(1.0).unwrap();
        assert!((a3 - 1.5).abs() < 1e-9, "got {a3}");
        let a2t = mean_alpha2(2.0).unwrap();
        assert!((a2t - 8.0 / 3.0 / SQRT_2PI * 2f64.powf(1.5)).abs() < 1e-9);
        let a3t = mean_alpha3(0.5).unwrap();
        assert!((a3t - 1.5 * 0.25).abs() < 1e-9);
    }

    #[test]
    fn second_increment_mean_matches_small_h_expansion() {
        // 4ht - (8/sqrt(2pi)) h² sqrt(t) + O(h³).
        let t = 1.0;
        for &h in &[0.05, 0.02, 0.01] {
            let exact = mean_second_increment_integral(t, h).unwrap();
            let expansion = 4.0 * h * t - 8.0 / SQRT_2PI * h * h * t.sqrt();
            assert!(
                (exact - expansion).abs() < 5.0 * h * h * h,
                "h={h}: exact {exact} vs expansion {expansion}"
            );
        }
    }
}
