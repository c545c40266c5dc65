//! Anticipated density and the sample tables used for fitting.

use serde::{Deserialize, Serialize};

use crate::fields::{GridError, GridSpec, MacroField, Quantity, Sign, SignField};
use crate::models::{kmh_from_mps, veh_per_km_from_veh_per_m};

pub const DEFAULT_MIN_SAMPLES: usize = 100;

/// Where a sample came from. Diagnostic only; never used for fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRef {
    pub segment: usize,
    pub i: usize,
    pub j: usize,
    /// Source acceleration, m/s^2.
    pub accel: Option<f64>,
}

/// Non-local sample: anticipated density (veh/m), current speed (m/s) and
/// acceleration sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlkvSample {
    pub k_a: f64,
    pub v: f64,
    pub y: Sign,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<CellRef>,
}

impl NlkvSample {
    pub fn new(k_a: f64, v: f64, y: Sign) -> Self {
        NlkvSample {
            k_a,
            v,
            y,
            origin: None,
        }
    }

    /// Same sample in veh/km and km/h.
    pub fn to_reporting_units(&self) -> Self {
        NlkvSample {
            k_a: veh_per_km_from_veh_per_m(self.k_a),
            v: kmh_from_mps(self.v),
            ..*self
        }
    }
}

/// Local sample: density (veh/m) and speed (m/s) of the same cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LkvSample {
    pub k: f64,
    pub v: f64,
}

impl LkvSample {
    /// Same sample in veh/km and km/h.
    pub fn to_reporting_units(&self) -> Self {
        LkvSample {
            k: veh_per_km_from_veh_per_m(self.k),
            v: kmh_from_mps(self.v),
        }
    }
}

fn same_shape(a: (usize, usize), b: (usize, usize)) -> Result<(), GridError> {
    if a == b {
        Ok(())
    } else {
        Err(GridError::ShapeMismatch(a, b))
    }
}

/// Index shift of the anticipated density for a cell moving at `v`.
pub fn anticipation_shift(spec: &GridSpec, v: f64) -> (usize, usize) {
    let di = spec.anticipation_steps();
    let dj = (v * spec.tm / spec.xs).floor() as usize;
    (di, dj)
}

/// `Ka(i, j) = K(i + floor(tm/ts), j + floor(V(i,j) tm / xs))`, empty where the
/// speed is undefined, the shifted cell is off-grid, or its density is empty.
pub fn anticipated_density_field(
    density: &MacroField,
    speed: &MacroField,
    spec: &GridSpec,
) -> Result<MacroField, GridError> {
    same_shape(density.shape(), speed.shape())?;
    let (rows, cols) = density.shape();
    let mut out = MacroField::empty(rows, cols, Quantity::AnticipatedDensity);
    for (i, j, v) in speed.iter_defined() {
        let (di, dj) = anticipation_shift(spec, v);
        if let Some(k) = density.get(i + di, j + dj) {
            out.set(i, j, Some(k));
        }
    }
    Ok(out)
}

/// One sample per cell where anticipated density, speed and sign all exist,
/// in row-major order.
pub fn assemble_nlkv(
    anticipated: &MacroField,
    speed: &MacroField,
    signs: &SignField,
    accel: Option<&MacroField>,
    segment: usize,
) -> Result<Vec<NlkvSample>, GridError> {
    same_shape(anticipated.shape(), speed.shape())?;
    same_shape(signs.shape(), speed.shape())?;
    let mut out = Vec::new();
    for (i, j, k_a) in anticipated.iter_defined() {
        let (Some(v), Some(y)) = (speed.get(i, j), signs.get(i, j)) else {
            continue;
        };
        out.push(NlkvSample {
            k_a,
            v,
            y,
            origin: Some(CellRef {
                segment,
                i,
                j,
                accel: accel.and_then(|a| a.get(i, j)),
            }),
        });
    }
    Ok(out)
}

pub fn assemble_lkv(density: &MacroField, speed: &MacroField) -> Result<Vec<LkvSample>, GridError> {
    same_shape(density.shape(), speed.shape())?;
    Ok(density
        .iter_defined()
        .filter_map(|(i, j, k)| speed.get(i, j).map(|v| LkvSample { k, v }))
        .collect())
}

/// Logs a warning when a sample table is smaller than `min`. Returns whether
/// the table is large enough.
pub fn check_sample_count(kind: &str, n: usize, min: usize) -> bool {
    if n < min {
        log::warn!("only {n} {kind} samples (minimum {min})");
        false
    } else {
        true
    }
}
