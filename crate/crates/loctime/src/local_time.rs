//! Local time field estimation: how much time a path spent at each level,
//! per unit of space.

use crate::error::{Error, Result};
use crate::path::Path;
use serde::{Deserialize, Serialize};

/// A uniform spatial grid. Cell `i` covers
/// `[x_min + i dx, x_min + (i+1) dx)` and is represented by its center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, dx: f64) -> Result<Self> {
        if !x_min.is_finite() || !x_max.is_finite() || x_min >= x_max {
            return Err(Error::param(
                "grid",
                format!("need finite x_min < x_max, got [{x_min}, {x_max}]"),
            ));
        }
        if !dx.is_finite() || dx <= 0.0 {
            return Err(Error::param("dx", format!("must be finite and > 0, got {dx}")));
        }
        let span = x_max - x_min;
        let cells = (span / dx).round();
        if cells < 2.0 {
            return Err(Error::param("dx", "grid must have at least 2 cells"));
        }
        if (cells * dx - span).abs() > 1e-9 * span {
            return Err(Error::param(
                "grid",
                format!("span {span} is not an integer multiple of dx={dx}"),
            ));
        }
        Ok(GridSpec { x_min, x_max, dx })
    }

    /// Grid whose cell centers sit on exact multiples of `dx`, covering
    /// `[lo, hi]` with `pad_cells` extra cells on each side. Evaluation
    /// points that are multiples of `dx` then fall on cell centers, which
    /// keeps point evaluations of the field unbiased in space.
    pub fn on_lattice(lo: f64, hi: f64, dx: f64, pad_cells: usize) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::param("grid", format!("bad range [{lo}, {hi}]")));
        }
        if !dx.is_finite() || dx <= 0.0 {
            return Err(Error::param("dx", format!("must be finite and > 0, got {dx}")));
        }
        let pad = pad_cells as f64;
        let k_lo = (lo / dx).floor() - pad;
        let k_hi = (hi / dx).ceil() + pad;
        GridSpec::new((k_lo - 0.5) * dx, (k_hi + 0.5) * dx, dx)
    }

    pub fn n_cells(&self) -> usize {
        ((self.x_max - self.x_min) / self.dx).round() as usize
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx
    }

    /// Index of the cell containing x, or None when x lies outside the
    /// grid. The right boundary belongs to the last cell.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if x < self.x_min || x > self.x_max {
            return None;
        }
        let i = ((x - self.x_min) / self.dx) as usize;
        Some(i.min(self.n_cells() - 1))
    }

    /// The same grid extended by at least `margin` on each side (rounded up
    /// to whole cells).
    pub fn widened(&self, margin: f64) -> GridSpec {
        let extra = (margin / self.dx).ceil().max(1.0) * self.dx;
        GridSpec {
            x_min: self.x_min - extra,
            x_max: self.x_max + extra,
            dx: self.dx,
        }
    }
}

/// Grid-indexed estimate of the local time field of one path: `values[i]`
/// approximates the local time at the center of cell i, i.e. occupation
/// time of the cell divided by dx.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimeField {
    grid: GridSpec,
    values: Vec<f64>,
    t: f64,
}

impl LocalTimeField {
    /// Build a field from externally supplied per-cell values (must be
    /// nonnegative and finite, one per grid cell). The occupation identity
    /// is the caller's responsibility here; simulated fields produced by
    /// [`local_time_field`] satisfy it by construction.
    pub fn from_values(grid: GridSpec, values: Vec<f64>, t: f64) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::param(
                "values",
                format!("expected {} cells, got {}", grid.n_cells(), values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::param("values", "local time values must be finite and >= 0"));
        }
        if !t.is_finite() || t < 0.0 {
            return Err(Error::param("t", format!("must be finite and >= 0, got {t}")));
        }
        Ok(LocalTimeField { grid, values, t })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Elapsed path time (exact, from the path, not re-summed).
    pub fn t(&self) -> f64 {
        self.t
    }

    /// Field value at the cell containing x.
    pub fn value_at(&self, x: f64) -> Option<f64> {
        self.grid.cell_of(x).map(|i| self.values[i])
    }

    /// |sum(values)·dx − t|: deviation from the occupation identity,
    /// which exact crossing accounting keeps at float-rounding size.
    pub fn occupation_defect(&self) -> f64 {
        let total: f64 = self.values.iter().sum();
        (total * self.grid.dx - self.t).abs()
    }
}

/// Estimate the local time field of a path by exact crossing accounting:
/// each step moves linearly between its endpoints, so the step's `dt` is
/// split across the cells it crosses in proportion to the length traversed
/// in each. This makes `sum(values)·dx = t` hold to float rounding and
/// introduces no smoothing bandwidth.
pub fn local_time_field(path: &Path, grid: &GridSpec) -> Result<LocalTimeField> {
    let n_cells = grid.n_cells();
    let mut occupation = vec![0.0f64; n_cells];
    let dt = path.dt();
    let positions = path.positions();
    let inv_dx = 1.0 / grid.dx;

    let check_inside = |x: f64| -> Result<()> {
        if x < grid.x_min || x > grid.x_max {
            Err(Error::GridExceeded {
                x_min: grid.x_min,
                x_max: grid.x_max,
                position: x,
            })
        } else {
            Ok(())
        }
    };
    check_inside(positions[0])?;

    let cell_index = |x: f64| -> usize {
        (((x - grid.x_min) * inv_dx) as usize).min(n_cells - 1)
    };

    for w in positions.windows(2) {
        let (a, b) = (w[0], w[1]);
        check_inside(b)?;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let i_lo = cell_index(lo);
        let i_hi = cell_index(hi);
        if i_lo == i_hi {
            occupation[i_lo] += dt;
        } else {
            let time_per_length = dt / (hi - lo);
            let first_right_edge = grid.x_min + (i_lo + 1) as f64 * grid.dx;
            occupation[i_lo] += (first_right_edge - lo) * time_per_length;
            for cell in occupation.iter_mut().take(i_hi).skip(i_lo + 1) {
                *cell += grid.dx * time_per_length;
            }
            let last_left_edge = grid.x_min + i_hi as f64 * grid.dx;
            occupation[i_hi] += (hi - last_left_edge) * time_per_length;
        }
    }

    let values = occupation.into_iter().map(|occ| occ * inv_dx).collect();
    Ok(LocalTimeField {
        grid: *grid,
        values,
        t: path.t_end(),
    })
}

/// `Σ values[i]^p · dx` — the integrated p-th power of the local time
/// field, the raw moment functional behind every statistic in the crate.
pub fn alpha_p(field: &LocalTimeField, p: u32) -> Result<f64> {
    if p < 1 {
        return Err(Error::param("p", "power must be at least 1"));
    }
    let pi = p as i32;
    let sum: f64 = field.values().iter().map(|v| v.powi(pi)).sum();
    Ok(sum * field.grid().dx)
}
