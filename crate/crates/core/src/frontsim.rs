//! Direct 2-d level-set simulation of the strain G-equation under a shear
//! flow `V = (v(y), 0)`.
//!
//! The state stores `w = G − (m·x + n·y)`, which stays periodic on the box
//! because neither the flow nor the strain term depends on `x`. Updates use
//! the Lax–Friedrichs numerical Hamiltonian with forward Euler steps.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldRealization;

/// Gradients shorter than this get no strain contribution.
pub const GRADIENT_EPS: f64 = 1e-8;
pub const MAX_CFL: f64 = 0.4;
/// Rows of the speed time series kept per run.
const SPEED_RECORDS: usize = 240;

/// `c·v′·gx·gy/|DG|`, the strain term of the shear-flow G-equation.
/// Zero when `|DG| < GRADIENT_EPS`.
#[inline]
pub fn strain_term(gx: f64, gy: f64, v_prime: f64, c: f64) -> f64 {
    let norm = gx.hypot(gy);
    if norm < GRADIENT_EPS {
        if c != 0.0 && v_prime != 0.0 {
            log::trace!("degenerate gradient |DG| = {norm:e}; strain term set to 0");
        }
        return 0.0;
    }
    c * v_prime * gx * gy / norm
}

/// `G` on a periodic `nx × ny` grid over `[0, X) × [0, Y)`, stored as the
/// periodic offset from the plane `m·x + n·y`. Row-major with `y` outer.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontState {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub m: f64,
    pub n: f64,
    pub t: f64,
    pub cfl: f64,
    offset: Vec<f64>,
}

impl FrontState {
    /// Planar front `G₀ = m·x + n·y` on a square box of one field period.
    pub fn planar(field: &FieldRealization, m: f64, n: f64, grid: (usize, usize), cfl: f64) -> Result<Self> {
        Self::with_offset(field, m, n, grid, cfl, |_, _| 0.0)
    }

    /// `G₀ = m·x + n·y + w₀(x, y)`; `w₀` must be periodic on the box.
    pub fn with_offset<F: Fn(f64, f64) -> f64>(
        field: &FieldRealization,
        m: f64,
        n: f64,
        (nx, ny): (usize, usize),
        cfl: f64,
        w0: F,
    ) -> Result<Self> {
        if !(cfl > 0.0 && cfl <= MAX_CFL) {
            return Err(Error::CflViolation(cfl));
        }
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidParameter(format!("grid {nx}x{ny} needs at least 3 cells per side")));
        }
        if !(m.is_finite() && n.is_finite()) {
            return Err(Error::InvalidParameter("slope must be finite".into()));
        }
        let period = simulation_period(field)?;
        let (dx, dy) = (period / nx as f64, period / ny as f64);
        let mut offset = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                offset.push(w0(i as f64 * dx, j as f64 * dy));
            }
        }
        Ok(Self { nx, ny, dx, dy, m, n, t: 0.0, cfl, offset })
    }

    pub fn length_x(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn length_y(&self) -> f64 {
        self.ny as f64 * self.dy
    }

    /// `G` at grid index `(i, j)`, extended slope-periodically to any integer index.
    pub fn g(&self, i: isize, j: isize) -> f64 {
        let wi = i.rem_euclid(self.nx as isize) as usize;
        let wj = j.rem_euclid(self.ny as isize) as usize;
        self.m * i as f64 * self.dx + self.n * j as f64 * self.dy + self.offset[wj * self.nx + wi]
    }

    /// The periodic part `G − (m·x + n·y)`.
    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn mean_offset(&self) -> f64 {
        self.offset.iter().sum::<f64>() / self.offset.len() as f64
    }

    /// Writes `G` as little-endian f64 values (row-major, `y` outer) to
    /// `<stem>.bin`, with a JSON header in `<stem>.json`.
    pub fn write_grid(&self, stem: &Path) -> Result<()> {
        let header = GridHeader {
            nx: self.nx,
            ny: self.ny,
            dx: self.dx,
            dy: self.dy,
            t: self.t,
            m: self.m,
            n: self.n,
            dtype: "<f8".into(),
            order: "row-major, y outer".into(),
        };
        let mut bytes = Vec::with_capacity(8 * self.offset.len());
        for j in 0..self.ny as isize {
            for i in 0..self.nx as isize {
                bytes.extend_from_slice(&self.g(i, j).to_le_bytes());
            }
        }
        std::fs::write(stem.with_extension("bin"), bytes)?;
        let mut json = serde_json::to_string_pretty(&header)?;
        json.push('\n');
        std::fs::write(stem.with_extension("json"), json)?;
        Ok(())
    }
}

/// Header of a binary `G` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub t: f64,
    pub m: f64,
    pub n: f64,
    pub dtype: String,
    pub order: String,
}

/// Reads a grid written by [`FrontState::write_grid`].
pub fn read_grid(stem: &Path) -> Result<(GridHeader, Vec<f64>)> {
    let header: GridHeader = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
    let mut bytes = Vec::new();
    std::fs::File::open(stem.with_extension("bin"))?.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * header.nx * header.ny {
        return Err(Error::InvalidParameter(format!(
            "grid file holds {} bytes, header expects {}x{} f64 values",
            bytes.len(),
            header.nx,
            header.ny
        )));
    }
    let values = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))).collect();
    Ok((header, values))
}

fn simulation_period(field: &FieldRealization) -> Result<f64> {
    match field.period() {
        Some(p) if p > 0.0 => Ok(p),
        Some(_) => Ok(1.0),
        None => Err(Error::Precondition(
            "front simulation needs a zero or single-mode periodic field; random-phase fields are not box-periodic".into(),
        )),
    }
}

/// Mean front advance over time and the speed read off it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    pub c: f64,
    pub grid: (usize, usize),
    pub times: Vec<f64>,
    /// Spatial mean of `G₀ − G` at each recorded time.
    pub advance: Vec<f64>,
    /// Least-squares slope of `advance` over the last third of the run.
    pub speed: f64,
    /// `|s(T) − s(2T/3)|/|s(T)|` with `s(t) = advance/t`.
    pub relative_change: f64,
    /// Speed on the half-resolution grid, when requested.
    pub coarse: Option<CoarseSpeed>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarseSpeed {
    pub grid: (usize, usize),
    pub speed: f64,
}

impl SpeedEstimate {
    /// Running averages `advance/t`.
    pub fn running_speeds(&self) -> Vec<f64> {
        self.times.iter().zip(&self.advance).map(|(t, a)| if *t > 0.0 { a / t } else { f64::NAN }).collect()
    }

    pub fn is_stable(&self, tol: f64) -> bool {
        self.relative_change < tol
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,advance,speed")?;
        for ((t, a), s) in self.times.iter().zip(&self.advance).zip(self.running_speeds()) {
            writeln!(out, "{t:.12e},{a:.12e},{}", speed_cell(s))?;
        }
        Ok(())
    }
}

/// A running speed as a CSV cell; empty at `t = 0`.
pub(crate) fn speed_cell(s: f64) -> String {
    if s.is_finite() {
        format!("{s:.12e}")
    } else {
        String::new()
    }
}

/// Runs the front for `duration` time units.
///
/// The time step is `cfl/(θx/dx + θy/dy)` with `θx = sup|v| + 1 + c·sup|v′|`
/// and `θy = 1 + c·sup|v′|`, which bound the partial derivatives of the flux
/// and make the scheme monotone.
pub fn evolve(mut state: FrontState, field: &FieldRealization, c: f64, duration: f64) -> Result<(FrontState, SpeedEstimate)> {
    if !(state.cfl > 0.0 && state.cfl <= MAX_CFL) {
        return Err(Error::CflViolation(state.cfl));
    }
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::InvalidParameter(format!("Markstein number c = {c} must be finite and >= 0")));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidParameter(format!("duration {duration} must be positive")));
    }
    let (nx, ny, dx, dy, m, n) = (state.nx, state.ny, state.dx, state.dy, state.m, state.n);
    let rows: Vec<(f64, f64)> = (0..ny).map(|j| field.eval_pair(j as f64 * dy)).collect();
    let theta_y = 1.0 + c * field.slope_bound();
    let theta_x = field.amplitude_bound() + theta_y;
    let max_dt = state.cfl / (theta_x / dx + theta_y / dy);
    let steps = (duration / max_dt).ceil().max(1.0) as usize;
    let dt = duration / steps as f64;
    let record_every = (steps / SPEED_RECORDS).max(1);
    log::debug!("frontsim {nx}x{ny}, c = {c}: {steps} steps of {dt:e}");

    let start_mean = state.mean_offset();
    let t0 = state.t;
    let mut times = vec![0.0];
    let mut advance = vec![0.0];
    let mut next = vec![0.0; nx * ny];
    for step in 1..=steps {
        let w = &state.offset;
        next.par_chunks_mut(nx).enumerate().for_each(|(j, out)| {
            let (v, vp) = rows[j];
            let up = &w[((j + 1) % ny) * nx..][..nx];
            let row = &w[j * nx..][..nx];
            let down = &w[((j + ny - 1) % ny) * nx..][..nx];
            for i in 0..nx {
                let (left, right) = (row[(i + nx - 1) % nx], row[(i + 1) % nx]);
                let px_minus = m + (row[i] - left) / dx;
                let px_plus = m + (right - row[i]) / dx;
                let py_minus = n + (row[i] - down[i]) / dy;
                let py_plus = n + (up[i] - row[i]) / dy;
                let (gx, gy) = (0.5 * (px_minus + px_plus), 0.5 * (py_minus + py_plus));
                let flux = v * gx + gx.hypot(gy) + strain_term(gx, gy, vp, c);
                let numerical = flux - 0.5 * theta_x * (px_plus - px_minus) - 0.5 * theta_y * (py_plus - py_minus);
                out[i] = row[i] - dt * numerical;
            }
        });
        std::mem::swap(&mut state.offset, &mut next);
        state.t = t0 + step as f64 * dt;
        if step % record_every == 0 || step == steps {
            times.push(step as f64 * dt);
            advance.push(start_mean - state.mean_offset());
        }
    }
    let speed = tail_slope(&times, &advance);
    let running = |t: f64| {
        let k = times.partition_point(|&s| s < t).min(times.len() - 1);
        advance[k] / times[k]
    };
    let last = running(duration);
    let relative_change = (last - running(2.0 * duration / 3.0)).abs() / last.abs().max(f64::MIN_POSITIVE);
    let estimate = SpeedEstimate { c, grid: (nx, ny), times, advance, speed, relative_change, coarse: None };
    Ok((state, estimate))
}

/// Least-squares slope over the last third of the series.
fn tail_slope(times: &[f64], values: &[f64]) -> f64 {
    let t_end = *times.last().expect("nonempty series");
    let from = times.partition_point(|&t| t < 2.0 * t_end / 3.0).min(times.len().saturating_sub(2));
    let (ts, vs) = (&times[from..], &values[from..]);
    let count = ts.len() as f64;
    let t_mean = ts.iter().sum::<f64>() / count;
    let v_mean = vs.iter().sum::<f64>() / count;
    let (mut cov, mut var) = (0.0, 0.0);
    for (t, v) in ts.iter().zip(vs) {
        cov += (t - t_mean) * (v - v_mean);
        var += (t - t_mean) * (t - t_mean);
    }
    if var > 0.0 {
        cov / var
    } else {
        v_mean / t_mean
    }
}

/// Planar-front speed at `grid × grid`, plus the `grid/2` run for a
/// refinement pair.
pub fn simulate_speed(field: &FieldRealization, m: f64, n: f64, c: f64, grid: usize, duration: f64) -> Result<(FrontState, SpeedEstimate)> {
    let (state, mut estimate) = evolve(FrontState::planar(field, m, n, (grid, grid), MAX_CFL)?, field, c, duration)?;
    let half = grid / 2;
    if half >= 3 {
        let (_, coarse) = evolve(FrontState::planar(field, m, n, (half, half), MAX_CFL)?, field, c, duration)?;
        estimate.coarse = Some(CoarseSpeed { grid: (half, half), speed: coarse.speed });
    }
    Ok((state, estimate))
}

/// Speeds at `c₁ ≤ c₂` on the same grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrainReduction {
    pub low: SpeedEstimate,
    pub high: SpeedEstimate,
}

impl StrainReduction {
    /// `speed(c₂) − speed(c₁)`; nonpositive when strain slows the front.
    pub fn change(&self) -> f64 {
        self.high.speed - self.low.speed
    }

    pub fn is_reduction(&self, tol: f64) -> bool {
        self.change() <= tol
    }
}

pub fn measure_strain_reduction(
    field: &FieldRealization,
    m: f64,
    n: f64,
    (c1, c2): (f64, f64),
    grid: usize,
    duration: f64,
) -> Result<StrainReduction> {
    if !(c1 <= c2) {
        return Err(Error::InvalidParameter(format!("strain pair needs c1 <= c2, got ({c1}, {c2})")));
    }
    let run = |c: f64| -> Result<SpeedEstimate> {
        Ok(evolve(FrontState::planar(field, m, n, (grid, grid), MAX_CFL)?, field, c, duration)?.1)
    };
    Ok(StrainReduction { low: run(c1)?, high: run(c2)? })
}
