//! Experiment drivers: one per experiment kind, all built on the same
//! deterministic batch machinery, all emitting typed check rows.
//!
//! Conventions shared by every driver:
//! - Path i of logical stream s uses the seed `derive_seed(base_seed, s, i)`,
//!   so aggregates are bit-identical at any thread count.
//! - Paths that leave the configured grid are recomputed on a copy widened
//!   by `2 sqrt(t)`; the retried-path count is reported, and a rate above 1%
//!   marks the report degraded.
//! - Gates come from the config's tolerance policy; informational rows
//!   (conjectured constants, context) are reported but never veto.

use std::time::Instant;

use crate::calibration;
use crate::error::{Error, Result};
use crate::estimate::PowerSums;
use crate::harness::config::{ExperimentConfig, ExperimentKind, TolerancePolicy};
use crate::harness::report::{CheckRow, ExperimentReport};
use crate::kac::{
    exponential_time_moment_check, kac_increment_moment, kac_moment, kac_monte_carlo_many,
    DiffFlag, ExpTimeMomentParams, KilledPathSampling, PermutationSumSpec,
};
use crate::kernels::{
    diff_h, diff_hh, heat_kernel, heat_kernel_time_integral, integral_heat_diff_power,
    integral_w_power, integral_w_power_multi, mean_second_increment_integral, sup_heat_bounds,
    u_alpha, HeatMode, UpperLimit,
};
use crate::local_time::{alpha_p, local_time_field, GridSpec, LocalTimeField};
use crate::parallel::{derive_seed, fold_batches};
use crate::path::{simulate_path, Path};
use crate::quad::integrate_panels;
use crate::statistics::{
    fourth_moment_statistic, limit_constant, second_moment_statistic, third_moment_statistic,
};

/// Run the experiment a config describes and return its report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let mut report = match config.kind {
        ExperimentKind::Clt2 => run_clt_orders(config, &[2])?,
        ExperimentKind::Clt3 => run_clt_orders(config, &[3])?,
        ExperimentKind::Clt4Conjecture => run_clt_orders(config, &[4])?,
        ExperimentKind::Scaling => run_scaling(config)?,
        ExperimentKind::KacOracle => run_kac_oracle(config)?,
        ExperimentKind::ExpTimeMoments => run_exp_time(config)?,
        ExperimentKind::VarianceIdentity => run_variance_identity(config)?,
        ExperimentKind::PotentialIntegrals => run_potential_integrals(config)?,
        ExperimentKind::HeatIntegrals => run_heat_integrals(config)?,
    };
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Tolerance of the per-path occupation identity: the space-integrated
/// local time must equal the elapsed time to this relative precision.
pub const OCCUPATION_REL_TOL: f64 = 1e-9;

/// Build a path's local-time field on the configured grid, widening by
/// `margin` on each escape. Returns the field and how many widenings were
/// needed (0 almost always).
fn field_with_retry(path: &Path, grid: &GridSpec, margin: f64) -> Result<(LocalTimeField, u64)> {
    let mut g = *grid;
    let mut widenings = 0u64;
    loop {
        match local_time_field(path, &g) {
            Ok(field) => return Ok((field, widenings)),
            Err(Error::GridExceeded { .. }) if widenings < 8 => {
                widenings += 1;
                g = g.widened(margin);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Tracker for the per-path occupation identity.
#[derive(Clone, Copy, Default)]
struct OccupationWatch {
    max_rel: f64,
    violations: u64,
    paths: u64,
}

impl OccupationWatch {
    fn observe(&mut self, field: &LocalTimeField, t: f64) -> Result<()> {
        let rel = (alpha_p(field, 1)? - t).abs() / t;
        self.max_rel = self.max_rel.max(rel);
        self.violations += u64::from(rel > OCCUPATION_REL_TOL);
        self.paths += 1;
        Ok(())
    }

    fn merge(&mut self, other: &Self) {
        self.max_rel = self.max_rel.max(other.max_rel);
        self.violations += other.violations;
        self.paths += other.paths;
    }

    fn row(&self, policy: &TolerancePolicy) -> CheckRow {
        let mut row = CheckRow::abs_gate(
            "occupation.identity",
            None,
            self.max_rel,
            OCCUPATION_REL_TOL,
            policy,
        );
        row.n = self.paths;
        row.with_note(format!(
            "worst relative gap between space-integrated local time and elapsed time over {} paths; {} violation(s)",
            self.paths, self.violations
        ))
    }
}

/// One frozen-envelope verdict: observed worst ratio against the frozen cap.
fn bound_row(check_id: &str, h: Option<f64>, observed: f64, cap: f64, note: &str) -> CheckRow {
    CheckRow {
        check_id: check_id.to_string(),
        h,
        estimate: observed,
        std_error: 0.0,
        n: 1,
        oracle: cap,
        oracle_se: 0.0,
        z: 0.0,
        ratio: Some(observed / cap),
        gate: "observed <= frozen envelope constant".to_string(),
        pass: observed <= cap,
        gating: true,
        note: note.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Fixed-time CLT experiments (orders 2, 3, and the conjectured 4)
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct CltAccum {
    /// stats[order_index][h_index]: statistic samples.
    stats: Vec<Vec<PowerSums>>,
    /// companion[order_index]: per-path integrated local-time power matching
    /// each order's limit variance.
    companion: Vec<PowerSums>,
    occupation: OccupationWatch,
    retried_paths: u64,
}

impl CltAccum {
    fn new(n_orders: usize, n_h: usize) -> Self {
        CltAccum {
            stats: vec![vec![PowerSums::new(); n_h]; n_orders],
            companion: vec![PowerSums::new(); n_orders],
            occupation: OccupationWatch::default(),
            retried_paths: 0,
        }
    }

    fn merge(mut self, other: &CltAccum) -> Self {
        for (mine, theirs) in self.stats.iter_mut().zip(&other.stats) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.merge(b);
            }
        }
        for (a, b) in self.companion.iter_mut().zip(&other.companion) {
            a.merge(b);
        }
        self.occupation.merge(&other.occupation);
        self.retried_paths += other.retried_paths;
        self
    }
}

/// Shared sweep for the fixed-time CLT kinds. Accepts several orders at
/// once so a combined verification pass can amortize one path ensemble
/// across the order-2, order-3 and order-4 checks.
pub fn run_clt_orders(config: &ExperimentConfig, orders: &[u32]) -> Result<ExperimentReport> {
    let hs = config.lags_descending();
    let t = config.t;
    let margin = 2.0 * t.sqrt();
    let cfg = config.clone();
    let orders_owned: Vec<u32> = orders.to_vec();

    let accum = fold_batches(
        config.n_paths,
        |range| -> Result<CltAccum> {
            let mut acc = CltAccum::new(orders_owned.len(), hs.len());
            for i in range {
                let seed = derive_seed(cfg.base_seed, 0, i);
                let path = simulate_path(t, cfg.dt, 0.0, seed)?;
                let (field, widenings) = field_with_retry(&path, &cfg.grid, margin)?;
                acc.retried_paths += u64::from(widenings > 0);
                acc.occupation.observe(&field, t)?;
                for (oi, &p) in orders_owned.iter().enumerate() {
                    let mut companion = f64::NAN;
                    for (hi, &h) in hs.iter().enumerate() {
                        let sample = match p {
                            2 => second_moment_statistic(&field, h)?,
                            3 => third_moment_statistic(&field, h)?,
                            4 => fourth_moment_statistic(&field, h)?,
                            _ => return Err(Error::param("orders", "supported orders are 2..=4")),
                        };
                        acc.stats[oi][hi].push(sample.value);
                        companion = sample.alpha_companion;
                    }
                    acc.companion[oi].push(companion);
                }
            }
            Ok(acc)
        },
        |a, b| Ok(a?.merge(&b?)),
    )
    .expect("n_paths >= 100")?;

    let mut report = ExperimentReport::new(config.clone());
    report.retries = accum.retried_paths;
    let policy = &config.tolerance;

    for (oi, &p) in orders.iter().enumerate() {
        let gated = p < 4; // order 4 uses a conjectured constant: report only
        let tag = format!("clt{p}");
        let scale = limit_constant(p)?.c_q.powi(2);
        let companion = accum.companion[oi].mean_estimate();
        for (hi, &h) in hs.iter().enumerate() {
            let sums = &accum.stats[oi][hi];
            // The limit claims are gated at the finest lag; coarser lags are
            // reported as context for the trend.
            let decisive = gated && hi == hs.len() - 1;
            let demote = |row: CheckRow| -> CheckRow {
                if decisive {
                    row
                } else if gated {
                    row.informational().with_note("context lag; gated at the finest lag")
                } else {
                    row.informational()
                }
            };

            // Mean row: the statistic is centered in the small-lag limit.
            let mean_est = sums.mean_estimate();
            let mean_row =
                CheckRow::z_gate(&format!("{tag}.mean"), Some(h), &mean_est, 0.0, 0.0, policy);
            if p == 2 {
                // The order-2 mean also has an exact finite-lag value, which
                // vanishes like sqrt(h t) in the limit the gate above tests.
                // Reported against it, the same estimate isolates pure
                // time/space discretization bias.
                let exact =
                    (mean_second_increment_integral(t, h)? - 4.0 * h * t) / h.powf(1.5);
                report.rows.push(demote(mean_row.with_note(format!(
                    "limit mean; the exact finite-lag mean {exact:.4} is reported separately"
                ))));
                report.rows.push(
                    CheckRow::z_gate(
                        &format!("{tag}.mean_finite_lag"),
                        Some(h),
                        &mean_est,
                        exact,
                        0.0,
                        policy,
                    )
                    .informational()
                    .with_note("deviation from the exact finite-lag mean = discretization bias"),
                );
            } else {
                report
                    .rows
                    .push(mean_row.informational().with_note("centered in the small-lag limit only"));
            }

            // Variance row against c_p² · E[integrated p-th power of local time].
            let var_est = sums.variance_estimate();
            let mut var_row = CheckRow::looser_gate(
                &format!("{tag}.variance"),
                Some(h),
                &var_est,
                scale * companion.mean,
                scale * companion.std_error,
                0.15,
                policy,
            );
            if p == 4 {
                var_row = var_row
                    .informational()
                    .with_note("conjectured limit constant: reported, never gated");
            } else {
                var_row = demote(var_row);
            }
            report.rows.push(var_row);

            // Order 3 limit is symmetric: its third moment must vanish.
            if p == 3 {
                let m3 = sums.estimate_of_power(3);
                report.rows.push(demote(
                    CheckRow::z_gate(&format!("{tag}.third_moment"), Some(h), &m3, 0.0, 0.0, policy)
                        .with_note(
                            "odd moment of a symmetric limit; a positive skewness remainder \
                             persists at finite lag and can exceed the gate once the ensemble \
                             resolves it",
                        ),
                ));
            }
        }
    }

    report.rows.push(accum.occupation.row(policy));
    report.finalize(config.n_paths);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Lag-scaling identities
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct ScalingAccum {
    moment: PowerSums,
    cross: PowerSums,
    occupation: OccupationWatch,
    retried_paths: u64,
}

impl ScalingAccum {
    fn new() -> Self {
        ScalingAccum {
            moment: PowerSums::new(),
            cross: PowerSums::new(),
            occupation: OccupationWatch::default(),
            retried_paths: 0,
        }
    }

    fn merge(mut self, other: &Self) -> Self {
        self.moment.merge(&other.moment);
        self.cross.merge(&other.cross);
        self.occupation.merge(&other.occupation);
        self.retried_paths += other.retried_paths;
        self
    }
}

/// Raw increment-moment integrals of one ensemble: E[∫(Δ_h L_t)^p dx] and
/// E[∫(Δ_h L_t)·L_t dx].
fn scaling_sweep(
    grid: &GridSpec,
    t: f64,
    dt: f64,
    h: f64,
    p: u32,
    n_paths: u64,
    base_seed: u64,
    stream: u64,
) -> Result<ScalingAccum> {
    let grid = *grid;
    let margin = 2.0 * t.sqrt();
    fold_batches(
        n_paths,
        |range| -> Result<ScalingAccum> {
            let mut acc = ScalingAccum::new();
            for i in range {
                let seed = derive_seed(base_seed, stream, i);
                let path = simulate_path(t, dt, 0.0, seed)?;
                let (field, widenings) = field_with_retry(&path, &grid, margin)?;
                acc.retried_paths += u64::from(widenings > 0);
                acc.occupation.observe(&field, t)?;
                let ints = crate::statistics::increment_integrals(&field, h)?;
                acc.moment.push(ints.powers[(p - 1) as usize]);
                acc.cross.push(ints.cross);
            }
            Ok(acc)
        },
        |a, b| Ok(a?.merge(&b?)),
    )
    .expect("n_paths >= 100")
}

/// For each lag h: the increment moments of the lag-h ensemble at horizon t
/// against h-powers of an independent lag-1 ensemble at horizon t/h², with
/// the time step mirrored exactly (dt/h²) so both ensembles have the same
/// number of steps.
fn run_scaling(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let p = config.scaling_p;
    let t = config.t;
    let mut report = ExperimentReport::new(config.clone());
    let policy = &config.tolerance;
    let mut occupation = OccupationWatch::default();

    for (hi, &h) in config.lags_descending().iter().enumerate() {
        let left = scaling_sweep(
            &config.grid,
            t,
            config.dt,
            h,
            p,
            config.n_paths,
            config.base_seed,
            2 * hi as u64,
        )?;
        // Mirrored ensemble: lag 1 on a grid scaled by 1/h, horizon t/h²,
        // step dt/h² — an exact change of variables, fresh randomness.
        let grid_r = GridSpec::new(
            config.grid.x_min / h,
            config.grid.x_max / h,
            config.grid.dx / h,
        )?;
        let right = scaling_sweep(
            &grid_r,
            t / (h * h),
            config.dt / (h * h),
            1.0,
            p,
            config.n_paths,
            config.base_seed,
            2 * hi as u64 + 1,
        )?;
        report.retries += left.retried_paths + right.retried_paths;
        occupation.merge(&left.occupation);
        occupation.merge(&right.occupation);

        let moment_scale = h.powi(p as i32 + 1);
        let lhs = left.moment.mean_estimate();
        let rhs = right.moment.mean_estimate();
        let mut row = CheckRow::z_gate(
            &format!("scaling.moment_p{p}"),
            Some(h),
            &lhs,
            moment_scale * rhs.mean,
            moment_scale * rhs.std_error,
            policy,
        );
        row.ratio = Some(lhs.mean / (moment_scale * rhs.mean));
        report.rows.push(row.with_note(format!(
            "lag-h increment moment against h^{} times the mirrored lag-1 ensemble",
            p + 1
        )));

        let cross_scale = h * h * h;
        let lhs_c = left.cross.mean_estimate();
        let rhs_c = right.cross.mean_estimate();
        let mut row = CheckRow::z_gate(
            "scaling.cross_term",
            Some(h),
            &lhs_c,
            cross_scale * rhs_c.mean,
            cross_scale * rhs_c.std_error,
            policy,
        );
        row.ratio = Some(lhs_c.mean / (cross_scale * rhs_c.mean));
        report.rows.push(row.with_note(
            "increment-level cross integral against h³ times the mirrored ensemble",
        ));
    }

    report.rows.push(occupation.row(policy));
    report.finalize(2 * config.n_paths * config.h_list.len() as u64);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Product-moment identity for the centered second moment
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct PairAccum {
    /// v[h_index]: the centered-second-moment functional integrated against
    /// the independent path's increments.
    v: Vec<PowerSums>,
    /// w[h_index]: ∫ L² L̃ dx on the shared grid.
    w: Vec<PowerSums>,
    occupation: OccupationWatch,
    retried_pairs: u64,
}

impl PairAccum {
    fn new(n_h: usize) -> Self {
        PairAccum {
            v: vec![PowerSums::new(); n_h],
            w: vec![PowerSums::new(); n_h],
            occupation: OccupationWatch::default(),
            retried_pairs: 0,
        }
    }

    fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.v.iter_mut().zip(&other.v) {
            a.merge(b);
        }
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            a.merge(b);
        }
        self.occupation.merge(&other.occupation);
        self.retried_pairs += other.retried_pairs;
        self
    }
}

/// Build two paths' fields on one shared grid (so cell centers align),
/// widening the common grid until both fit.
fn pair_fields_shared_grid(
    a: &Path,
    b: &Path,
    grid: &GridSpec,
    margin: f64,
) -> Result<(LocalTimeField, LocalTimeField, u64)> {
    let mut g = *grid;
    let mut widenings = 0u64;
    loop {
        match (local_time_field(a, &g), local_time_field(b, &g)) {
            (Ok(fa), Ok(fb)) => return Ok((fa, fb, widenings)),
            (Err(Error::GridExceeded { .. }), _) | (_, Err(Error::GridExceeded { .. }))
                if widenings < 8 =>
            {
                widenings += 1;
                g = g.widened(margin);
            }
            (Err(e), _) => return Err(e),
            (_, Err(e)) => return Err(e),
        }
    }
}

/// E[V²] = 32 h⁴ E[∫ L² L̃ dx] (1 + o(1)), where
/// V = ∫ [(Δ_h L)² − 4 h L] Δ_h L̃ dx couples the centered second moment of
/// one path's increments to an independent path's increments.
fn run_variance_identity(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let hs = config.lags_descending();
    let t = config.t;
    let s = config.s_or_t();
    let margin = 2.0 * t.max(s).sqrt();
    let cfg = config.clone();
    let hs_move = hs.clone();

    let accum = fold_batches(
        config.n_paths,
        |range| -> Result<PairAccum> {
            let mut acc = PairAccum::new(hs_move.len());
            for i in range {
                let path_a = simulate_path(t, cfg.dt, 0.0, derive_seed(cfg.base_seed, 0, i))?;
                let path_b = simulate_path(s, cfg.dt, 0.0, derive_seed(cfg.base_seed, 1, i))?;
                let (fa, fb, widenings) =
                    pair_fields_shared_grid(&path_a, &path_b, &cfg.grid, margin)?;
                acc.retried_pairs += u64::from(widenings > 0);
                acc.occupation.observe(&fa, t)?;
                acc.occupation.observe(&fb, s)?;
                let va = fa.values();
                let vb = fb.values();
                let dx = fa.grid().dx;
                for (hi, &h) in hs_move.iter().enumerate() {
                    let k = (h / dx).round() as usize;
                    let mut v_int = 0.0;
                    let mut w_int = 0.0;
                    for j in 0..va.len() - k {
                        let da = va[j + k] - va[j];
                        let db = vb[j + k] - vb[j];
                        v_int += (da * da - 4.0 * h * va[j]) * db;
                    }
                    for j in 0..va.len() {
                        w_int += va[j] * va[j] * vb[j];
                    }
                    acc.v[hi].push(v_int * dx);
                    acc.w[hi].push(w_int * dx);
                }
            }
            Ok(acc)
        },
        |a, b| Ok(a?.merge(&b?)),
    )
    .expect("n_paths >= 100")?;

    let mut report = ExperimentReport::new(config.clone());
    report.retries = accum.retried_pairs;
    let policy = &config.tolerance;
    let mut lags_with_ratio = Vec::new();
    let mut ratios = Vec::new();

    for (hi, &h) in hs.iter().enumerate() {
        let v2 = accum.v[hi].estimate_of_power(2);
        let w = accum.w[hi].mean_estimate();
        let denom = 32.0 * h.powi(4) * w.mean;
        let ratio = v2.mean / denom;
        // First-order error propagation; V² and W share pairs, so this is
        // a slightly conservative reading of the uncertainty.
        let ratio_se = ratio.abs()
            * ((v2.std_error / v2.mean).powi(2) + (w.std_error / w.mean).powi(2)).sqrt();

        // Degenerate scale (one horizon near zero): both sides of the
        // identity vanish and the ratio carries no resolvable information,
        // so check absolute smallness of the left side against the right
        // side's noise-padded magnitude instead. Triggers on a horizon too
        // short for the time step to resolve, or on a statistically
        // unresolvable ratio.
        let degenerate = s.min(t) < 100.0 * cfg.dt
            || !ratio_se.is_finite()
            || ratio_se > 0.5
            || w.mean <= 10.0 * w.std_error;
        if degenerate {
            let cap = 1.25 * 32.0 * h.powi(4) * (w.mean + 3.0 * w.std_error)
                + 3.0 * v2.std_error;
            report.rows.push(
                CheckRow::abs_gate("varid.small_scale", Some(h), v2.mean, cap, policy)
                    .with_note(format!(
                        "ratio not resolvable at this scale (denominator {denom:.3e}, \
                         ratio SE {ratio_se:.2}); checking E[V²] against the \
                         noise-padded right side instead"
                    )),
            );
            continue;
        }

        lags_with_ratio.push(h);
        ratios.push(ratio);
        report.rows.push(
            CheckRow::band_gate(
                "varid.ratio",
                Some(h),
                ratio,
                ratio_se,
                config.n_paths,
                0.8,
                1.25,
                policy,
            )
            .with_note(
                "E[V²] over 32 h⁴ E[∫L²L̃ dx]; the crossing-resolution bias of the \
                 simulated field inflates this ratio at finite dt (it shrinks with dt \
                 at fixed h and grows as h shrinks at fixed dt)",
            ),
        );
    }

    if ratios.len() >= 2 {
        let deviations: Vec<f64> = ratios.iter().map(|r| (r - 1.0).abs()).collect();
        let decreasing = deviations.windows(2).all(|w| w[1] < w[0]);
        report.rows.push(
            CheckRow::condition_gate(
                "varid.trend",
                "absolute deviation of the ratio from 1 decreases as the lag shrinks",
                decreasing,
            )
            .with_note(format!(
                "ratios at lags {:?}: {:?}",
                lags_with_ratio,
                ratios.iter().map(|r| (r * 1e4).round() / 1e4).collect::<Vec<_>>()
            )),
        );
    }

    report.rows.push(accum.occupation.row(policy));
    report.finalize(config.n_paths);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Exponential-time moment identities
// ---------------------------------------------------------------------------

fn run_exp_time(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let zeta = config.zeta.expect("validated: exp_time_moments requires zeta");
    let mut report = ExperimentReport::new(config.clone());
    let policy = &config.tolerance;

    for &h in &config.lags_descending() {
        let base = ExpTimeMomentParams {
            moment: 1,
            h,
            zeta,
            n_paths: config.n_paths,
            dt: config.dt,
            dx: config.grid.dx,
            base_seed: config.base_seed,
        };
        let m1 = exponential_time_moment_check(&base)?;
        report.rows.push(
            CheckRow::z_gate("exptime.mean", Some(h), &m1.statistic, 0.0, 0.0, policy).with_note(
                "the resolvent-centered third-moment statistic has mean exactly zero at \
                 every lag; deviations are discretization bias",
            ),
        );
        report.rows.push(
            CheckRow::z_gate(
                "exptime.occupation",
                Some(h),
                &m1.occupation,
                1.0 / zeta,
                0.0,
                policy,
            )
            .with_note("mean space-integrated local time at an exponential horizon"),
        );
        // Closed form for the integrated cube at an exponential horizon:
        // 3! u(0)² / zeta² with u(0) = 1/sqrt(2 zeta), i.e. 3/zeta².
        report.rows.push(
            CheckRow::z_gate(
                "exptime.alpha3",
                Some(h),
                &m1.alpha3,
                3.0 / (zeta * zeta),
                0.0,
                policy,
            )
            .with_note("integrated cubed local time against its closed form"),
        );

        let m2 = exponential_time_moment_check(&ExpTimeMomentParams { moment: 2, ..base })?;
        let (ratio, ratio_se) = match m2.ratio {
            Some(r) => {
                let se = r
                    * ((m2.statistic.std_error / m2.statistic.mean).powi(2)
                        + (m2.oracle_se / m2.oracle).powi(2))
                    .sqrt();
                (r, se)
            }
            None => (f64::NAN, f64::NAN),
        };
        report.rows.push(
            CheckRow::band_gate(
                "exptime.second_moment",
                Some(h),
                ratio,
                ratio_se,
                config.n_paths,
                0.5,
                1.5,
                policy,
            )
            .informational()
            .with_note(
                "second moment against the limit variance; carries a finite-lag deficit \
                 of order sqrt(h), so it is reported, not gated",
            ),
        );
    }

    report.finalize(2 * config.n_paths * config.h_list.len() as u64);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Permutation-sum oracle comparisons
// ---------------------------------------------------------------------------

fn run_kac_oracle(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let alpha = config.zeta.expect("validated: kac_oracle requires zeta");
    let mut report = ExperimentReport::new(config.clone());
    let policy = &config.tolerance;
    let u = |x: f64| u_alpha(x, alpha).expect("alpha validated");
    let h = *config
        .lags_descending()
        .first()
        .expect("h_list validated nonempty");

    // Exact identities: the permutation sum against independent closed
    // forms of the product moments.
    let mut worst_rel: f64 = 0.0;
    {
        let mut push = |value: f64, exact: f64| {
            worst_rel = worst_rel.max((value - exact).abs() / exact.abs());
        };
        let single = kac_moment(&PermutationSumSpec::plain(vec![0.3], alpha, 0.0))?;
        push(single.value, u(0.3));
        let pair_same = kac_moment(&PermutationSumSpec::plain(vec![0.25, 0.25], alpha, 0.0))?;
        push(pair_same.value, 2.0 * u(0.25) * u(0.0));
        let pair = kac_moment(&PermutationSumSpec::plain(vec![0.5, 0.3], alpha, 0.0))?;
        push(pair.value, u(0.2) * (u(0.3) + u(0.5)));
        let inc_single = kac_increment_moment(&PermutationSumSpec {
            points: vec![0.25],
            diff_flags: vec![DiffFlag::Forward],
            alpha,
            start: 0.0,
            h,
        })?;
        push(inc_single.value, u(0.25 + h) - u(0.25));
        let inc_pair = kac_increment_moment(&PermutationSumSpec {
            points: vec![0.0, 0.0],
            diff_flags: vec![DiffFlag::Forward, DiffFlag::Forward],
            alpha,
            start: 0.0,
            h,
        })?;
        push(inc_pair.value, 2.0 * (u(0.0) * u(0.0) - u(h) * u(h)));
    }
    report.rows.push(
        CheckRow::abs_gate("kac.exact_identities", None, worst_rel, 1e-12, policy).with_note(
            "worst relative gap between the permutation sum and independent closed forms \
             (orders 1 and 2, level and increment)",
        ),
    );

    // Monte Carlo comparisons on one shared killed-path ensemble.
    let specs = vec![
        PermutationSumSpec::plain(vec![0.3], alpha, 0.0),
        PermutationSumSpec::plain(vec![0.25, 0.55], alpha, 0.0),
        PermutationSumSpec::plain(vec![0.2, 0.45, 0.7], alpha, 0.0),
        PermutationSumSpec {
            points: vec![0.0, 0.0],
            diff_flags: vec![DiffFlag::Forward, DiffFlag::Forward],
            alpha,
            start: 0.0,
            h,
        },
    ];
    let labels = ["kac.mc_n1", "kac.mc_n2", "kac.mc_n3", "kac.mc_increment"];
    let sampling = KilledPathSampling {
        dt: config.dt,
        dx: config.grid.dx,
        n_paths: config.n_paths,
        base_seed: config.base_seed,
    };
    let estimates = kac_monte_carlo_many(&specs, &sampling)?;
    for ((spec, est), label) in specs.iter().zip(&estimates).zip(labels) {
        let increment = spec.diff_flags.iter().any(|f| *f != DiffFlag::Level);
        let exact = if increment {
            kac_increment_moment(spec)?
        } else {
            kac_moment(spec)?
        };
        let mut row = CheckRow::z_gate(label, None, est, exact.value, 0.0, policy);
        row.ratio = Some(est.mean / exact.value);
        let mut note = format!(
            "{} permutations; shared killed-path ensemble",
            exact.n_permutations
        );
        if increment {
            // The squared increment at the start point reads the field where
            // its mean has a kink, so the cell average carries an O(dx) bias
            // amplified by the small oracle (a difference of order-1 terms):
            // roughly -6% at dx = 0.025 and -1.6% at dx = 0.00625.
            note.push_str(
                "; sensitive to the O(dx) cell-average bias at the kink of the \
                 mean field — shrink dx before tightening this gate",
            );
        }
        report.rows.push(row.with_note(note));
    }

    report.finalize(config.n_paths);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Quadrature-only kinds: resolvent integrals and heat-kernel powers
// ---------------------------------------------------------------------------

/// Resolvent density recovered through the damped time integral of the heat
/// kernel: `int_0^inf e^{-alpha t} p_t(x) dt`, substituting t = s² below
/// t = 1 to tame the short-time spike.
fn resolvent_by_time_integral(x: f64, alpha: f64) -> f64 {
    let mut breaks = vec![0.0];
    let s_cut = x.abs() / 1400f64.sqrt();
    if s_cut > 0.0 && s_cut < 1.0 {
        breaks.push(s_cut);
    }
    breaks.push(1.0);
    let short = integrate_panels(
        |s: f64| {
            2.0 * s * (-alpha * s * s).exp() * heat_kernel(s * s, x).expect("t > 0")
        },
        &breaks,
        1e-12,
        1e-10,
    );
    let t_cut = (1.0 + 45.0 / alpha).max(16.0);
    let long = integrate_panels(
        |t: f64| (-alpha * t).exp() * heat_kernel(t, x).expect("t > 0"),
        &[1.0, 2.0, 4.0, 8.0, 16.0, t_cut],
        1e-12,
        1e-10,
    );
    short.value + long.value
}

fn x_probe(h: f64, min_abs: f64, max_abs: f64) -> Vec<f64> {
    let mut xs = Vec::new();
    let mut a = min_abs.max(h);
    while a <= max_abs {
        xs.push(a);
        xs.push(-a);
        a *= 1.31;
    }
    xs
}

fn run_potential_integrals(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(config.clone());
    let policy = &config.tolerance;
    let hs = config.lags_descending();
    let h_min = *hs.last().expect("validated nonempty");
    let alpha = 0.5;

    // The density against its damped heat-kernel time integral, three rates,
    // 101 points spanning [-5, 5].
    for &a in &[0.5, 1.0, 2.0] {
        let mut worst: f64 = 0.0;
        for i in 0..=100 {
            let x = -5.0 + 0.1 * i as f64;
            let lhs = resolvent_by_time_integral(x, a);
            worst = worst.max((lhs - u_alpha(x, a)?).abs());
        }
        let mut row = CheckRow::abs_gate(
            &format!("potential.laplace_identity[alpha={a}]"),
            None,
            worst,
            1e-6,
            policy,
        );
        row.n = 101;
        report.rows.push(row.with_note(
            "worst absolute gap between the density and the damped time integral of the \
             heat kernel across 101 points of [-5, 5]",
        ));
    }

    // Second-difference power integrals: value / h^{q+1} converges to
    // 2^{q+1}/(q+1); gate the smallest lag, require monotone improvement.
    for q in [2u32, 3] {
        let target = 2f64.powi(q as i32 + 1) / (q as f64 + 1.0);
        let mut rels = Vec::new();
        for &h in &hs {
            let r = integral_w_power(alpha, h, q, false)?;
            let ratio = r.value / h.powi(q as i32 + 1);
            let rel = (ratio - target).abs() / target;
            rels.push(rel);
            let gate_this = h == h_min;
            let row = CheckRow::rel_gate(
                &format!("potential.w_power[q={q}]"),
                Some(h),
                ratio,
                target,
                0.10,
                policy,
            );
            report
                .rows
                .push(if gate_this { row } else { row.informational() });
        }
        if hs.len() >= 2 {
            let decreasing = rels.windows(2).all(|w| w[1] < w[0]);
            report.rows.push(
                CheckRow::condition_gate(
                    &format!("potential.w_power_trend[q={q}]"),
                    "normalized error decreases at every lag refinement",
                    decreasing,
                )
                .with_note(format!("relative errors across lags {hs:?}: {rels:?}")),
            );
        }
    }

    // Mixed killing rates share the small-lag coefficient.
    let mixed2 = integral_w_power_multi(&[0.5, 2.0], h_min)?;
    report.rows.push(CheckRow::rel_gate(
        "potential.w_power_mixed[q=2]",
        Some(h_min),
        mixed2.value / h_min.powi(3),
        8.0 / 3.0,
        0.10,
        policy,
    ));
    let mixed3 = integral_w_power_multi(&[0.5, 1.0, 2.0], h_min)?;
    report.rows.push(CheckRow::rel_gate(
        "potential.w_power_mixed[q=3]",
        Some(h_min),
        mixed3.value / h_min.powi(4),
        4.0,
        0.10,
        policy,
    ));

    // Away from the kink the integral collapses by q-1 extra lag powers.
    let q = 2;
    let full = integral_w_power(alpha, h_min, q, false)?;
    let restricted = integral_w_power(alpha, h_min, q, true)?;
    report.rows.push(
        CheckRow::abs_gate(
            "potential.w_power_restricted[q=2]",
            Some(h_min),
            restricted.value / full.value,
            0.10,
            policy,
        )
        .with_note("restricted-to-full ratio; the mass concentrates at the kink"),
    );

    // Frozen difference envelopes still hold at the smallest configured lag.
    let cal = calibration::builtin();
    let uf = |x: f64| u_alpha(x, calibration::CAL_ALPHA).expect("valid alpha");
    let mut worst1: f64 = 0.0;
    let mut worst2: f64 = 0.0;
    for x in x_probe(h_min, h_min, 9.0) {
        worst1 = worst1.max(diff_h(uf, x, h_min).abs() / (h_min * uf(x)));
        worst2 = worst2.max(diff_hh(uf, x, h_min).abs() / (h_min * h_min * uf(x)));
    }
    report.rows.push(bound_row(
        "potential.envelope_diff1",
        Some(h_min),
        worst1,
        cal.get("resolvent.diff1")?,
        "worst |first difference| / (h u) over sampled |x| >= h",
    ));
    report.rows.push(bound_row(
        "potential.envelope_diff2",
        Some(h_min),
        worst2,
        cal.get("resolvent.diff2")?,
        "worst |second difference| / (h² u) over sampled |x| >= h",
    ));

    report.finalize(0);
    Ok(report)
}

fn run_heat_integrals(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(config.clone());
    let policy = &config.tolerance;
    let h = *config.lags_descending().last().expect("validated nonempty");

    for q in [2u32, 3] {
        let target = 2f64.powi(q as i32 + 1) / (q as f64 + 1.0);
        for (upper, label) in [(UpperLimit::Infinity, "infinity"), (UpperLimit::Lag, "lag")] {
            let r = integral_heat_diff_power(h, q, upper)?;
            let ratio = r.direct.value / h.powi(q as i32 + 1);
            report.rows.push(
                CheckRow::rel_gate(
                    &format!("heat.power[q={q},upper={label}]"),
                    Some(h),
                    ratio,
                    target,
                    0.15,
                    policy,
                )
                .with_note(match upper {
                    UpperLimit::Infinity => {
                        "full time integral: the inner profile is exactly the tent"
                    }
                    UpperLimit::Lag => {
                        "time integral stopped at the lag; the remainder here decays \
                         like sqrt(h), the slowest in the suite"
                    }
                }),
            );
            if let Some(gap) = r.rel_gap {
                report.rows.push(
                    CheckRow::abs_gate(
                        &format!("heat.fourier_gap[q={q},upper={label}]"),
                        Some(h),
                        gap,
                        1e-3,
                        policy,
                    )
                    .with_note("independent spectral evaluation against the direct one"),
                );
            }
        }
    }

    // Frozen envelopes at the configured lag.
    let cal = calibration::builtin();
    let t_ref = calibration::CAL_T;
    let mut worst_d1: f64 = 0.0;
    for x in x_probe(h, h, 6.0) {
        let v = heat_kernel_time_integral(x, t_ref, HeatMode::DiffH, h)?.abs();
        worst_d1 = worst_d1.max(v / (h * (-x.abs()).exp()));
    }
    report.rows.push(bound_row(
        "heat.envelope_time_diff1",
        Some(h),
        worst_d1,
        cal.get("heat.time_diff1")?,
        "worst normalized time-integrated first difference over sampled x",
    ));
    let mut worst_d2: f64 = 0.0;
    for x in x_probe(h, 2.0 * h, 6.0) {
        let v = heat_kernel_time_integral(x, t_ref, HeatMode::DiffHh, h)?.abs();
        worst_d2 = worst_d2.max(v * x.abs() / (h * h * (-x * x / (32.0 * t_ref)).exp()));
    }
    report.rows.push(bound_row(
        "heat.envelope_time_diff2",
        Some(h),
        worst_d2,
        cal.get("heat.time_diff2")?,
        "worst normalized time-integrated second difference over sampled |x| >= 2h",
    ));
    let mass = calibration::w_l1_mass(t_ref, h)?;
    report.rows.push(bound_row(
        "heat.l1_law",
        Some(h),
        mass / (h * h * h.ln().abs()),
        cal.get("heat.w_l1")?,
        "L1 mass of the second-difference time integral over h² |log h|",
    ));
    let mut worst_s1: f64 = 0.0;
    let mut worst_s2: f64 = 0.0;
    for x in x_probe(h, h, 5.0) {
        let sup = sup_heat_bounds(calibration::CAL_DELTA, t_ref, h, x)?;
        let envelope = (-x * x / (2.0 * t_ref)).exp();
        worst_s1 = worst_s1.max(sup.diff_h / (h * envelope));
        worst_s2 = worst_s2.max(sup.diff_hh / (h * h * envelope));
    }
    report.rows.push(bound_row(
        "heat.envelope_sup_diff1",
        Some(h),
        worst_s1,
        cal.get("heat.sup_diff1")?,
        "worst normalized sup-over-t first difference on sampled x",
    ));
    report.rows.push(bound_row(
        "heat.envelope_sup_diff2",
        Some(h),
        worst_s2,
        cal.get("heat.sup_diff2")?,
        "worst normalized sup-over-t second difference on sampled x",
    ));

    report.finalize(0);
    Ok(report)
}
