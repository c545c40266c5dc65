//! Sliding-window space-time discretization and Edie estimates of the
//! macroscopic speed, density and acceleration fields.
//!
//! Subdomain `(i, j)` covers `[i*ts, i*ts + dt] x [j*xs, j*xs + dx]`. With
//! `(I, J)` from [`grid_dims`], fields hold `(I + 1) x (J + 1)` cells, rows
//! indexed by time and columns by space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{TrajectorySet, VehicleTrajectory};

/// Cells whose total residence time is below this many seconds are empty.
pub const MIN_RESIDENCE_S: f64 = 1e-6;

/// Default dead band for acceleration signs, m/s^2.
pub const DEFAULT_ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("domain too small for grid: T = {time} s, X = {space} m, subdomain {dt} s x {dx} m")]
    DomainTooSmall {
        time: f64,
        space: f64,
        dt: f64,
        dx: f64,
    },
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("field shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
}

/// Window sizes, sliding steps and the anticipation horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Subdomain duration, seconds.
    pub dt: f64,
    /// Subdomain length, meters.
    pub dx: f64,
    /// Sliding time step, seconds.
    pub ts: f64,
    /// Sliding space step, meters.
    pub xs: f64,
    /// Anticipation (transition) time, seconds.
    pub tm: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            dt: 50.0,
            dx: 300.0,
            ts: 2.0,
            xs: 3.0,
            tm: 12.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        let all = [self.dt, self.dx, self.ts, self.xs, self.tm];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(GridError::InvalidSpec(format!(
                "all of dt, dx, ts, xs, tm must be positive and finite: {self:?}"
            )));
        }
        if self.ts > self.dt || self.xs > self.dx {
            return Err(GridError::InvalidSpec(
                "sliding steps must not exceed the subdomain size".into(),
            ));
        }
        if self.tm < self.ts {
            return Err(GridError::InvalidSpec(
                "transition time must be at least one time step".into(),
            ));
        }
        Ok(())
    }

    /// Whole time steps covered by the transition time.
    pub fn anticipation_steps(&self) -> usize {
        (self.tm / self.ts).floor() as usize
    }
}

/// Largest subdomain indices `(I, J)`.
pub fn grid_dims(spec: &GridSpec, time: f64, space: f64) -> Result<(usize, usize), GridError> {
    spec.validate()?;
    if !(time >= spec.dt && space >= spec.dx) {
        return Err(GridError::DomainTooSmall {
            time,
            space,
            dt: spec.dt,
            dx: spec.dx,
        });
    }
    let i = ((time - spec.dt) / spec.ts).floor() as usize;
    let j = ((space - spec.dx) / spec.xs).floor() as usize;
    Ok((i, j))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// m/s
    Speed,
    /// veh/m
    Density,
    /// m/s^2
    Acceleration,
    /// veh/m
    AnticipatedDensity,
}

/// Dense grid of optional cell values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroField {
    rows: usize,
    cols: usize,
    quantity: Quantity,
    cells: Vec<Option<f64>>,
}

impl MacroField {
    pub fn empty(rows: usize, cols: usize, quantity: Quantity) -> Self {
        MacroField {
            rows,
            cols,
            quantity,
            cells: vec![None; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn quantity(&self) -> Quantity {
        self.quantity
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i < self.rows && j < self.cols {
            self.cells[i * self.cols + j]
        } else {
            None
        }
    }

    pub fn set(&mut self, i: usize, j: usize, value: Option<f64>) {
        assert!(i < self.rows && j < self.cols, "cell ({i}, {j}) out of range");
        self.cells[i * self.cols + j] = value;
    }

    /// Defined cells in row-major order.
    pub fn iter_defined(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let cols = self.cols;
        self.cells
            .iter()
            .enumerate()
            .filter_map(move |(n, v)| v.map(|v| (n / cols, n % cols, v)))
    }

    pub fn defined_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

/// Acceleration sign label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Accelerating,
    Decelerating,
}

impl Sign {
    /// 0 for accelerating, 1 for decelerating.
    pub fn label(self) -> u8 {
        match self {
            Sign::Accelerating => 0,
            Sign::Decelerating => 1,
        }
    }

    pub fn from_label(y: u8) -> Option<Self> {
        match y {
            0 => Some(Sign::Accelerating),
            1 => Some(Sign::Decelerating),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignField {
    rows: usize,
    cols: usize,
    cells: Vec<Option<Sign>>,
}

impl SignField {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<Sign> {
        if i < self.rows && j < self.cols {
            self.cells[i * self.cols + j]
        } else {
            None
        }
    }
}

/// Space-time rectangle `[t0, t1] x [x0, x1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub t0: f64,
    pub t1: f64,
    pub x0: f64,
    pub x1: f64,
}

impl Cell {
    pub fn of(spec: &GridSpec, i: usize, j: usize) -> Self {
        let t0 = i as f64 * spec.ts;
        let x0 = j as f64 * spec.xs;
        Cell {
            t0,
            t1: t0 + spec.dt,
            x0,
            x1: x0 + spec.dx,
        }
    }
}

/// Distance travelled and time spent by one vehicle inside one cell.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Contribution {
    pub distance: f64,
    pub duration: f64,
}

/// Clips the trajectory polyline against the cell, one segment at a time
/// (Liang-Barsky), and sums in-cell distance and duration. Works for any
/// time-ordered polyline, monotone or not.
pub fn cell_contributions(traj: &VehicleTrajectory, cell: &Cell) -> Contribution {
    let mut out = Contribution::default();
    for w in traj.points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dt = b.t - a.t;
        let dx = b.x - a.x;
        let mut u0: f64 = 0.0;
        let mut u1: f64 = 1.0;
        let edges = [
            (-dt, a.t - cell.t0),
            (dt, cell.t1 - a.t),
            (-dx, a.x - cell.x0),
            (dx, cell.x1 - a.x),
        ];
        let mut inside = true;
        for (p, q) in edges {
            if p == 0.0 {
                if q < 0.0 {
                    inside = false;
                    break;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    u0 = u0.max(r);
                } else {
                    u1 = u1.min(r);
                }
            }
        }
        if inside && u1 > u0 {
            out.duration += dt * (u1 - u0);
            out.distance += dx.abs() * (u1 - u0);
        }
    }
    out
}

/// Summed Edie contributions per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EdieTotals {
    pub rows: usize,
    pub cols: usize,
    pub distance: Vec<f64>,
    pub duration: Vec<f64>,
}

/// Accumulates `sum x_n` and `sum t_n` for every subdomain.
///
/// Positions must be non-decreasing in time (guaranteed by ingest
/// validation). That lets every vehicle's entry and exit time of each
/// spatial window be computed once by inverting `x(t)`, instead of clipping
/// the polyline against every cell. Per cell, vehicles are accumulated in
/// the set's vehicle order.
pub fn estimate_edie_totals(set: &TrajectorySet, spec: &GridSpec) -> Result<EdieTotals, GridError> {
    let (max_i, max_j) = grid_dims(spec, set.time_extent(), set.space_extent())?;
    let (rows, cols) = (max_i + 1, max_j + 1);
    let mut distance = vec![0.0; rows * cols];
    let mut duration = vec![0.0; rows * cols];

    let mut t_in = Vec::new();
    let mut t_out = Vec::new();
    for traj in set.trajectories() {
        let pts = &traj.points;
        if pts.len() < 2 {
            continue;
        }
        let (first, last) = (traj.first(), traj.last());

        // spatial windows the vehicle touches at all
        let j_lo = (((first.x - spec.dx) / spec.xs).ceil().max(0.0)) as usize;
        let j_hi = ((last.x / spec.xs).floor() as usize).min(max_j);
        if j_lo > j_hi {
            continue;
        }
        t_in.clear();
        t_out.clear();
        for j in j_lo..=j_hi {
            let x0 = j as f64 * spec.xs;
            t_in.push(first_time_at_or_beyond(traj, x0));
            t_out.push(last_time_at_or_before(traj, x0 + spec.dx));
        }

        let i_lo = (((first.t - spec.dt) / spec.ts).ceil().max(0.0)) as usize;
        let i_hi = ((last.t / spec.ts).floor() as usize).min(max_i);
        for i in i_lo..=i_hi {
            let win0 = i as f64 * spec.ts;
            let ta = win0.max(first.t);
            let tb = (win0 + spec.dt).min(last.t);
            if tb <= ta {
                continue;
            }
            let xa = traj.position_at(ta);
            let xb = traj.position_at(tb);
            let jj_lo = (((xa - spec.dx) / spec.xs).ceil().max(0.0) as usize).max(j_lo);
            let jj_hi = ((xb / spec.xs).floor() as usize).min(j_hi);
            let row = i * cols;
            if jj_lo > jj_hi {
                continue;
            }
            for j in jj_lo..=jj_hi {
                let x0 = j as f64 * spec.xs;
                let (tin, xin) = t_in[j - j_lo];
                let (tout, xout) = t_out[j - j_lo];
                let (enter, x_enter) = if tin >= ta {
                    (tin, xin)
                } else {
                    (ta, xa.max(x0))
                };
                let (exit, x_exit) = if tout <= tb {
                    (tout, xout)
                } else {
                    (tb, xb.min(x0 + spec.dx))
                };
                if exit > enter {
                    duration[row + j] += exit - enter;
                    distance[row + j] += (x_exit - x_enter).max(0.0);
                }
            }
        }
    }
    Ok(EdieTotals {
        rows,
        cols,
        distance,
        duration,
    })
}

/// Earliest time with `x(t) >= x0`, and the position there.
fn first_time_at_or_beyond(traj: &VehicleTrajectory, x0: f64) -> (f64, f64) {
    let pts = &traj.points;
    let k = pts.partition_point(|p| p.x < x0);
    if k == 0 {
        return (pts[0].t, pts[0].x);
    }
    if k == pts.len() {
        return (f64::INFINITY, f64::NAN);
    }
    let (a, b) = (pts[k - 1], pts[k]);
    (a.t + (x0 - a.x) / (b.x - a.x) * (b.t - a.t), x0)
}

/// Latest time with `x(t) <= x1`, and the position there.
fn last_time_at_or_before(traj: &VehicleTrajectory, x1: f64) -> (f64, f64) {
    let pts = &traj.points;
    let k = pts.partition_point(|p| p.x <= x1);
    if k == 0 {
        return (f64::NEG_INFINITY, f64::NAN);
    }
    if k == pts.len() {
        let p = pts[pts.len() - 1];
        return (p.t, p.x);
    }
    let (a, b) = (pts[k - 1], pts[k]);
    (a.t + (x1 - a.x) / (b.x - a.x) * (b.t - a.t), x1)
}

/// Edie density `sum t_n / (dx dt)` and speed `sum x_n / sum t_n` fields.
pub fn estimate_vk_fields(
    set: &TrajectorySet,
    spec: &GridSpec,
) -> Result<(MacroField, MacroField), GridError> {
    let totals = estimate_edie_totals(set, spec)?;
    Ok(vk_from_totals(&totals, spec))
}

pub fn vk_from_totals(totals: &EdieTotals, spec: &GridSpec) -> (MacroField, MacroField) {
    let area = spec.dx * spec.dt;
    let mut v = MacroField::empty(totals.rows, totals.cols, Quantity::Speed);
    let mut k = MacroField::empty(totals.rows, totals.cols, Quantity::Density);
    for (n, (&d, &t)) in totals.distance.iter().zip(&totals.duration).enumerate() {
        if t >= MIN_RESIDENCE_S {
            v.cells[n] = Some(d / t);
            k.cells[n] = Some(t / area);
        }
    }
    (v, k)
}

/// Forward difference of speed along the vehicles' path:
/// `A(i, j) = (V(i+1, j+b) - V(i, j)) / ts` with `b = floor(V(i, j) ts / xs)`.
pub fn estimate_acceleration_field(speed: &MacroField, spec: &GridSpec) -> MacroField {
    let mut a = MacroField::empty(speed.rows, speed.cols, Quantity::Acceleration);
    for i in 0..speed.rows.saturating_sub(1) {
        for j in 0..speed.cols {
            let Some(v) = speed.get(i, j) else { continue };
            let b = (v * spec.ts / spec.xs).floor() as usize;
            if let Some(v_next) = speed.get(i + 1, j + b) {
                a.cells[i * speed.cols + j] = Some((v_next - v) / spec.ts);
            }
        }
    }
    a
}

/// 0 where `A > zero_tol`, 1 where `A < -zero_tol`, empty otherwise.
pub fn label_signs(accel: &MacroField, zero_tol: f64) -> SignField {
    let cells = accel
        .cells
        .iter()
        .map(|a| match *a {
            Some(a) if a > zero_tol => Some(Sign::Accelerating),
            Some(a) if a < -zero_tol => Some(Sign::Decelerating),
            _ => None,
        })
        .collect();
    SignField {
        rows: accel.rows,
        cols: accel.cols,
        cells,
    }
}

#[cfg(test)]
pub(crate) fn field_from_rows(quantity: Quantity, rows: &[Vec<Option<f64>>]) -> MacroField {
    let cols = rows.first().map_or(0, |r| r.len());
    let mut f = MacroField::empty(rows.len(), cols, quantity);
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            f.set(i, j, *v);
        }
    }
    f
}
