//! Trajectories to sample tables: segment, estimate fields, assemble samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anticipation::{
    anticipated_density_field, assemble_lkv, assemble_nlkv, check_sample_count, LkvSample,
    NlkvSample, DEFAULT_MIN_SAMPLES,
};
use crate::fields::{
    estimate_acceleration_field, estimate_vk_fields, label_signs, GridError, GridSpec, MacroField,
    SignField, DEFAULT_ZERO_TOL,
};
use crate::ingest::{segment_contiguous, Origin, TrajectorySet};

pub const DEFAULT_GAP_THRESHOLD_S: f64 = 60.0;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("no segment is large enough for the grid ({segments} segment(s) skipped)")]
    NoUsableSegment { segments: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub grid: GridSpec,
    pub zero_tol: f64,
    pub gap_threshold_s: f64,
    pub min_samples: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            grid: GridSpec::default(),
            zero_tol: DEFAULT_ZERO_TOL,
            gap_threshold_s: DEFAULT_GAP_THRESHOLD_S,
            min_samples: DEFAULT_MIN_SAMPLES,
        }
    }
}

/// All fields of one contiguous segment, SI units.
#[derive(Debug, Clone)]
pub struct SegmentFields {
    pub index: usize,
    pub origin: Origin,
    pub speed: MacroField,
    pub density: MacroField,
    pub acceleration: MacroField,
    pub anticipated_density: MacroField,
    pub signs: SignField,
}

pub fn segment_fields(
    set: &TrajectorySet,
    index: usize,
    grid: &GridSpec,
    zero_tol: f64,
) -> Result<SegmentFields, GridError> {
    let (speed, density) = estimate_vk_fields(set, grid)?;
    let acceleration = estimate_acceleration_field(&speed, grid);
    let signs = label_signs(&acceleration, zero_tol);
    let anticipated_density = anticipated_density_field(&density, &speed, grid)?;
    Ok(SegmentFields {
        index,
        origin: set.origin(),
        speed,
        density,
        acceleration,
        anticipated_density,
        signs,
    })
}

/// Samples concatenated over segments in segment order, SI units.
#[derive(Debug, Clone, Default)]
pub struct SampleTables {
    pub nlkv: Vec<NlkvSample>,
    pub lkv: Vec<LkvSample>,
}

impl SampleTables {
    pub fn nlkv_reporting(&self) -> Vec<NlkvSample> {
        self.nlkv.iter().map(NlkvSample::to_reporting_units).collect()
    }

    pub fn lkv_reporting(&self) -> Vec<LkvSample> {
        self.lkv.iter().map(LkvSample::to_reporting_units).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SampleRun {
    pub segments: Vec<SegmentFields>,
    /// Segments dropped because they are smaller than one cell.
    pub skipped_segments: usize,
    pub samples: SampleTables,
}

/// Splits `set` at gaps, estimates fields per segment and assembles samples.
pub fn build_samples(set: &TrajectorySet, cfg: &SampleConfig) -> Result<SampleRun, PipelineError> {
    cfg.grid.validate()?;
    let mut segments = Vec::new();
    let mut skipped = 0;
    let mut samples = SampleTables::default();
    for (index, seg) in segment_contiguous(set, cfg.gap_threshold_s).iter().enumerate() {
        let fields = match segment_fields(seg, index, &cfg.grid, cfg.zero_tol) {
            Ok(f) => f,
            Err(GridError::DomainTooSmall { .. }) => {
                log::warn!(
                    "segment {index} ({:.1} s x {:.1} m) is smaller than one cell, skipped",
                    seg.time_extent(),
                    seg.space_extent()
                );
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        samples.nlkv.extend(assemble_nlkv(
            &fields.anticipated_density,
            &fields.speed,
            &fields.signs,
            Some(&fields.acceleration),
            index,
        )?);
        samples.lkv.extend(assemble_lkv(&fields.density, &fields.speed)?);
        segments.push(fields);
    }
    if segments.is_empty() {
        return Err(PipelineError::NoUsableSegment { segments: skipped });
    }
    check_sample_count("NLKV", samples.nlkv.len(), cfg.min_samples);
    check_sample_count("LKV", samples.lkv.len(), cfg.min_samples);
    Ok(SampleRun {
        segments,
        skipped_segments: skipped,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{TrajectoryPoint, UnitDeclaration, VehicleTrajectory};

    fn platoon(t0: f64, n: usize, speed: f64, spacing: f64, dur: f64, id0: usize) -> Vec<VehicleTrajectory> {
        (0..n)
            .map(|v| {
                let x0 = v as f64 * spacing;
                let pts = (0..=(dur as usize))
                    .map(|s| TrajectoryPoint::new(t0 + s as f64, x0 + speed * s as f64))
                    .collect();
                VehicleTrajectory::new((id0 + v).to_string(), pts)
            })
            .collect()
    }

    #[test]
    fn gaps_split_into_segments() {
        let mut trajs = platoon(0.0, 40, 10.0, 20.0, 120.0, 0);
        trajs.extend(platoon(400.0, 40, 10.0, 20.0, 120.0, 100));
        let set = TrajectorySet::new(trajs, UnitDeclaration::default()).unwrap();
        let run = build_samples(&set, &SampleConfig::default()).unwrap();
        assert_eq!(run.segments.len(), 2);
        assert!(!run.samples.lkv.is_empty());
        // constant speed: no defined acceleration signs, hence no NLKV samples
        assert!(run.samples.nlkv.is_empty());
        assert!(run.samples.nlkv.len() <= run.samples.lkv.len());
    }

    #[test]
    fn tiny_segment_is_skipped() {
        let mut trajs = platoon(0.0, 40, 10.0, 20.0, 120.0, 0);
        trajs.extend(platoon(400.0, 2, 10.0, 5.0, 10.0, 100));
        let set = TrajectorySet::new(trajs, UnitDeclaration::default()).unwrap();
        let run = build_samples(&set, &SampleConfig::default()).unwrap();
        assert_eq!((run.segments.len(), run.skipped_segments), (1, 1));
    }
}
