//! Trajectory ingestion: delimited-text parsing, unit normalization,
//! per-vehicle validation and segmentation of gapped datasets.
//!
//! Everything leaving this module is in seconds and meters, shifted so the
//! earliest point sits at `t = 0` and the smallest position at `x = 0`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input is empty")]
    Empty,
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("no usable trajectories ({dropped} dropped, {rejected} rejected)")]
    NoTrajectories { dropped: usize, rejected: usize },
    #[error("degenerate extent: T = {time} s, X = {space} m")]
    DegenerateExtent { time: f64, space: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    Seconds,
    Milliseconds,
    /// Tenths of a second, e.g. frame counters of 10 Hz video.
    Deciseconds,
}

impl TimeUnit {
    pub fn to_seconds(self) -> f64 {
        match self {
            TimeUnit::Seconds => 1.0,
            TimeUnit::Milliseconds => 1e-3,
            TimeUnit::Deciseconds => 0.1,
        }
    }

    pub fn parse(s: &str) -> Result<Self, IngestError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s" | "sec" | "second" | "seconds" => Ok(TimeUnit::Seconds),
            "ms" | "millisecond" | "milliseconds" => Ok(TimeUnit::Milliseconds),
            "ds" | "decisecond" | "deciseconds" | "frames_10hz" => Ok(TimeUnit::Deciseconds),
            other => Err(IngestError::UnknownUnit(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthUnit {
    Meters,
    Feet,
    Kilometers,
}

impl LengthUnit {
    pub fn to_meters(self) -> f64 {
        match self {
            LengthUnit::Meters => 1.0,
            LengthUnit::Feet => 0.3048,
            LengthUnit::Kilometers => 1000.0,
        }
    }

    pub fn parse(s: &str) -> Result<Self, IngestError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "meter" | "meters" | "metre" | "metres" => Ok(LengthUnit::Meters),
            "ft" | "foot" | "feet" => Ok(LengthUnit::Feet),
            "km" | "kilometer" | "kilometers" | "kilometre" | "kilometres" => {
                Ok(LengthUnit::Kilometers)
            }
            other => Err(IngestError::UnknownUnit(other.to_string())),
        }
    }
}

/// Units the raw file was declared in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitDeclaration {
    pub time: TimeUnit,
    pub position: LengthUnit,
}

impl Default for UnitDeclaration {
    fn default() -> Self {
        UnitDeclaration {
            time: TimeUnit::Seconds,
            position: LengthUnit::Meters,
        }
    }
}

/// Column mapping and unit declaration for a delimited trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub id_column: String,
    pub time_column: String,
    pub position_column: String,
    pub time_unit: TimeUnit,
    pub position_unit: LengthUnit,
    /// Lane column, if the file has one. Lanes are aggregated; the column is
    /// only recognized so it can be reported as ignored.
    #[serde(default)]
    pub lane_column: Option<String>,
    /// `None` sniffs comma vs tab from the header line.
    #[serde(default)]
    pub delimiter: Option<char>,
    /// Split a vehicle's points into separate trajectories when consecutive
    /// samples are further apart than this (seconds). Useful when ids are
    /// reused across concatenated recordings.
    #[serde(default)]
    pub split_gap_s: Option<f64>,
}

impl Schema {
    /// Canonical `vehicle_id,t_s,x_m` layout written by [`write_canonical_csv`].
    pub fn canonical() -> Self {
        Schema {
            id_column: "vehicle_id".into(),
            time_column: "t_s".into(),
            position_column: "x_m".into(),
            time_unit: TimeUnit::Seconds,
            position_unit: LengthUnit::Meters,
            lane_column: None,
            delimiter: Some(','),
            split_gap_s: None,
        }
    }

    /// NGSIM vehicle trajectory layout: frame counter at 10 Hz, longitudinal
    /// position `Local_Y` in feet.
    pub fn ngsim() -> Self {
        Schema {
            id_column: "Vehicle_ID".into(),
            time_column: "Frame_ID".into(),
            position_column: "Local_Y".into(),
            time_unit: TimeUnit::Deciseconds,
            position_unit: LengthUnit::Feet,
            lane_column: Some("Lane_ID".into()),
            delimiter: None,
            split_gap_s: Some(60.0),
        }
    }

    pub fn units(&self) -> UnitDeclaration {
        UnitDeclaration {
            time: self.time_unit,
            position: self.position_unit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Seconds since the dataset origin.
    pub t: f64,
    /// Meters along the road axis.
    pub x: f64,
}

impl TrajectoryPoint {
    pub fn new(t: f64, x: f64) -> Self {
        TrajectoryPoint { t, x }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrajectory {
    pub vehicle_id: String,
    pub points: Vec<TrajectoryPoint>,
}

impl VehicleTrajectory {
    pub fn new(vehicle_id: impl Into<String>, points: Vec<TrajectoryPoint>) -> Self {
        VehicleTrajectory {
            vehicle_id: vehicle_id.into(),
            points,
        }
    }

    pub fn first(&self) -> TrajectoryPoint {
        self.points[0]
    }

    pub fn last(&self) -> TrajectoryPoint {
        self.points[self.points.len() - 1]
    }

    /// Linear interpolation of position at time `t`, clamped to the
    /// trajectory's time span. Points must be sorted by time.
    pub fn position_at(&self, t: f64) -> f64 {
        let pts = &self.points;
        let k = pts.partition_point(|p| p.t < t);
        if k == 0 {
            return pts[0].x;
        }
        if k == pts.len() {
            return pts[pts.len() - 1].x;
        }
        let (a, b) = (pts[k - 1], pts[k]);
        a.x + (t - a.t) / (b.t - a.t) * (b.x - a.x)
    }

    fn shifted(&self, dt: f64, dx: f64) -> Self {
        VehicleTrajectory {
            vehicle_id: self.vehicle_id.clone(),
            points: self
                .points
                .iter()
                .map(|p| TrajectoryPoint::new(p.t - dt, p.x - dx))
                .collect(),
        }
    }
}

/// Offset of a set's local origin from the raw data's coordinates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Origin {
    pub t_s: f64,
    pub x_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    trajectories: Vec<VehicleTrajectory>,
    time_extent: f64,
    space_extent: f64,
    units: UnitDeclaration,
    origin: Origin,
}

impl TrajectorySet {
    /// Builds a set from already-validated trajectories, shifting coordinates
    /// so the smallest time and position become zero. Trajectories are
    /// ordered by vehicle id.
    pub fn new(
        trajectories: Vec<VehicleTrajectory>,
        units: UnitDeclaration,
    ) -> Result<Self, IngestError> {
        Self::with_origin(trajectories, units, Origin::default())
    }

    fn with_origin(
        mut trajectories: Vec<VehicleTrajectory>,
        units: UnitDeclaration,
        base: Origin,
    ) -> Result<Self, IngestError> {
        if trajectories.is_empty() {
            return Err(IngestError::NoTrajectories {
                dropped: 0,
                rejected: 0,
            });
        }
        let (mut t_min, mut t_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in trajectories.iter().flat_map(|tr| tr.points.iter()) {
            t_min = t_min.min(p.t);
            t_max = t_max.max(p.t);
            x_min = x_min.min(p.x);
            x_max = x_max.max(p.x);
        }
        let (time, space) = (t_max - t_min, x_max - x_min);
        if !(time > 0.0 && space > 0.0) {
            return Err(IngestError::DegenerateExtent { time, space });
        }
        if t_min != 0.0 || x_min != 0.0 {
            trajectories = trajectories
                .iter()
                .map(|tr| tr.shifted(t_min, x_min))
                .collect();
        }
        trajectories.sort_by(|a, b| compare_ids(&a.vehicle_id, &b.vehicle_id));
        Ok(TrajectorySet {
            trajectories,
            time_extent: time,
            space_extent: space,
            units,
            origin: Origin {
                t_s: base.t_s + t_min,
                x_m: base.x_m + x_min,
            },
        })
    }

    pub fn trajectories(&self) -> &[VehicleTrajectory] {
        &self.trajectories
    }

    /// `T`: time span covered by the data, seconds.
    pub fn time_extent(&self) -> f64 {
        self.time_extent
    }

    /// `X`: road length covered by the data, meters.
    pub fn space_extent(&self) -> f64 {
        self.space_extent
    }

    pub fn units(&self) -> UnitDeclaration {
        self.units
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn point_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.points.len()).sum()
    }
}

/// Numeric ids sort numerically, everything else lexically after them.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    /// Reject a trajectory when backward motion exceeds this fraction of its
    /// total absolute displacement.
    pub max_backward_fraction: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            max_backward_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub vehicle_id: String,
    pub backward_fraction: f64,
    pub backward_distance_m: f64,
    pub backward_segments: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedTrajectory {
    pub trajectory: VehicleTrajectory,
    pub duplicates_removed: usize,
    /// Number of backward steps that were clamped to the previous position.
    pub clamped_segments: usize,
}

/// Collapses duplicate timestamps (first wins) and removes small backward
/// blips by clamping to the running position. Points must already be sorted
/// by time.
pub fn validate_trajectory(
    traj: VehicleTrajectory,
    cfg: &ValidationConfig,
) -> Result<ValidatedTrajectory, RejectionReport> {
    let VehicleTrajectory { vehicle_id, points } = traj;
    let original_len = points.len();
    let mut deduped: Vec<TrajectoryPoint> = Vec::with_capacity(points.len());
    for p in points {
        match deduped.last() {
            Some(last) if last.t == p.t => {}
            _ => deduped.push(p),
        }
    }
    let duplicates_removed = original_len - deduped.len();

    let mut backward = 0.0;
    let mut total = 0.0;
    let mut backward_segments = 0;
    for w in deduped.windows(2) {
        let d = w[1].x - w[0].x;
        total += d.abs();
        if d < 0.0 {
            backward -= d;
            backward_segments += 1;
        }
    }
    let backward_fraction = if total > 0.0 { backward / total } else { 0.0 };
    if backward_fraction > cfg.max_backward_fraction {
        return Err(RejectionReport {
            vehicle_id,
            backward_fraction,
            backward_distance_m: backward,
            backward_segments,
        });
    }
    let mut running = f64::NEG_INFINITY;
    for p in deduped.iter_mut() {
        if p.x < running {
            p.x = running;
        } else {
            running = p.x;
        }
    }
    Ok(ValidatedTrajectory {
        trajectory: VehicleTrajectory {
            vehicle_id,
            points: deduped,
        },
        duplicates_removed,
        clamped_segments: backward_segments,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    /// Vehicles dropped for having fewer than two distinct points.
    pub dropped_short: usize,
    pub duplicates_removed: usize,
    pub clamped_segments: usize,
    pub rejected: Vec<RejectionReport>,
    pub lane_column_ignored: bool,
}

#[derive(Debug, Clone)]
pub struct Parsed {
    pub set: TrajectorySet,
    pub report: IngestReport,
}

fn sniff_delimiter(bytes: &[u8]) -> u8 {
    let header = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
    let tabs = header.iter().filter(|&&b| b == b'\t').count();
    let commas = header.iter().filter(|&&b| b == b',').count();
    if tabs > commas {
        b'\t'
    } else {
        b','
    }
}

/// Parses a delimited trajectory file into a normalized [`TrajectorySet`].
pub fn parse_trajectories<R: Read>(
    mut source: R,
    schema: &Schema,
    validation: &ValidationConfig,
) -> Result<Parsed, IngestError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(IngestError::Empty);
    }
    let delimiter = match schema.delimiter {
        Some(c) => c as u8,
        None => sniff_delimiter(&bytes),
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let id_col = column(&schema.id_column)?;
    let t_col = column(&schema.time_column)?;
    let x_col = column(&schema.position_column)?;
    let mut report = IngestReport::default();
    if let Some(lane) = &schema.lane_column {
        if headers.iter().any(|h| h == lane) {
            report.lane_column_ignored = true;
            log::info!("lane column `{lane}` ignored; lanes are aggregated onto one axis");
        }
    }

    let t_scale = schema.time_unit.to_seconds();
    let x_scale = schema.position_unit.to_meters();
    let mut by_vehicle: BTreeMap<String, Vec<TrajectoryPoint>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |idx: usize, what: &str| {
            record.get(idx).ok_or_else(|| IngestError::MalformedRow {
                line,
                reason: format!("missing {what} field"),
            })
        };
        let number = |idx: usize, what: &str| -> Result<f64, IngestError> {
            let raw = field(idx, what)?;
            let v: f64 = raw.parse().map_err(|_| IngestError::MalformedRow {
                line,
                reason: format!("{what} `{raw}` is not a number"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(IngestError::MalformedRow {
                    line,
                    reason: format!("{what} is not finite"),
                })
            }
        };
        let id = field(id_col, "vehicle id")?.to_string();
        let t = number(t_col, "time")? * t_scale;
        let x = number(x_col, "position")? * x_scale;
        by_vehicle.entry(id).or_default().push(TrajectoryPoint::new(t, x));
        report.rows += 1;
    }
    if report.rows == 0 {
        return Err(IngestError::Empty);
    }

    let mut trajectories = Vec::with_capacity(by_vehicle.len());
    for (id, mut points) in by_vehicle {
        // stable sort keeps file order among duplicate timestamps
        points.sort_by(|a, b| a.t.total_cmp(&b.t));
        for piece in split_on_gaps(id, points, schema.split_gap_s) {
            match validate_trajectory(piece, validation) {
                Ok(v) => {
                    report.duplicates_removed += v.duplicates_removed;
                    report.clamped_segments += v.clamped_segments;
                    if v.trajectory.points.len() < 2 {
                        report.dropped_short += 1;
                    } else {
                        trajectories.push(v.trajectory);
                    }
                }
                Err(rejection) => report.rejected.push(rejection),
            }
        }
    }
    if report.dropped_short > 0 {
        log::warn!(
            "dropped {} vehicle(s) with fewer than two points",
            report.dropped_short
        );
    }
    if !report.rejected.is_empty() {
        log::warn!(
            "rejected {} vehicle(s) for backward motion",
            report.rejected.len()
        );
    }
    if trajectories.is_empty() {
        return Err(IngestError::NoTrajectories {
            dropped: report.dropped_short,
            rejected: report.rejected.len(),
        });
    }
    let set = TrajectorySet::new(trajectories, schema.units())?;
    Ok(Parsed { set, report })
}

fn split_on_gaps(
    id: String,
    points: Vec<TrajectoryPoint>,
    gap: Option<f64>,
) -> Vec<VehicleTrajectory> {
    let Some(gap) = gap else {
        return vec![VehicleTrajectory::new(id, points)];
    };
    let mut pieces: Vec<Vec<TrajectoryPoint>> = vec![Vec::new()];
    for p in points {
        let current = pieces.last_mut().unwrap();
        if current.last().is_some_and(|last| p.t - last.t > gap) {
            pieces.push(vec![p]);
        } else {
            current.push(p);
        }
    }
    if pieces.len() == 1 {
        return vec![VehicleTrajectory::new(id, pieces.pop().unwrap())];
    }
    pieces
        .into_iter()
        .enumerate()
        .map(|(n, pts)| VehicleTrajectory::new(format!("{id}#{n}"), pts))
        .collect()
}

/// Writes the canonical `vehicle_id,t_s,x_m` CSV. Values are printed with
/// round-trip precision.
pub fn write_canonical_csv<W: Write>(set: &TrajectorySet, out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vehicle_id", "t_s", "x_m"])?;
    for tr in set.trajectories() {
        for p in &tr.points {
            w.write_record([tr.vehicle_id.as_str(), &p.t.to_string(), &p.x.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Splits the time axis wherever no trajectory is present for longer than
/// `gap_threshold` seconds. Each trajectory lands in exactly one segment and
/// each segment is re-normalized to its own origin.
pub fn segment_contiguous(set: &TrajectorySet, gap_threshold: f64) -> Vec<TrajectorySet> {
    assert!(gap_threshold > 0.0, "gap threshold must be positive");
    let mut spans: Vec<(f64, f64, usize)> = set
        .trajectories()
        .iter()
        .enumerate()
        .map(|(n, tr)| (tr.first().t, tr.last().t, n))
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut covered_until = f64::NEG_INFINITY;
    for (start, end, n) in spans {
        if groups.is_empty() || start - covered_until > gap_threshold {
            groups.push(Vec::new());
        }
        groups.last_mut().unwrap().push(n);
        covered_until = covered_until.max(end);
    }
    if groups.len() == 1 {
        return vec![set.clone()];
    }

    let mut out = Vec::with_capacity(groups.len());
    for members in groups {
        let trajectories: Vec<VehicleTrajectory> = members
            .iter()
            .map(|&n| set.trajectories()[n].clone())
            .collect();
        match TrajectorySet::with_origin(trajectories, set.units(), set.origin()) {
            Ok(segment) => out.push(segment),
            Err(e) => log::warn!("skipping degenerate segment: {e}"),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, schema: &Schema) -> Result<Parsed, IngestError> {
        parse_trajectories(text.as_bytes(), schema, &ValidationConfig::default())
    }

    #[test]
    fn three_rows_one_vehicle() {
        let parsed = parse("vehicle_id,t_s,x_m\n1,0,0\n1,1,10\n1,2,20\n", &Schema::canonical())
            .unwrap();
        assert_eq!(parsed.set.trajectories().len(), 1);
        assert_eq!(parsed.set.time_extent(), 2.0);
        assert_eq!(parsed.set.space_extent(), 20.0);
    }

    #[test]
    fn feet_are_converted() {
        let mut schema = Schema::canonical();
        schema.position_column = "y_ft".into();
        schema.position_unit = LengthUnit::Feet;
        let parsed = parse("vehicle_id,t_s,y_ft\n1,0,0\n1,1,32.8084\n1,2,65.6168\n", &schema)
            .unwrap();
        let xs: Vec<f64> = parsed.set.trajectories()[0]
            .points
            .iter()
            .map(|p| p.x)
            .collect();
        for (got, want) in xs.iter().zip([0.0, 10.0, 20.0]) {
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn single_point_vehicle_is_dropped() {
        let parsed = parse(
            "vehicle_id,t_s,x_m\n1,0,0\n1,1,10\n2,5,3\n",
            &Schema::canonical(),
        )
        .unwrap();
        assert_eq!(parsed.report.dropped_short, 1);
        assert_eq!(parsed.set.trajectories().len(), 1);
    }

    #[test]
    fn errors_are_reported() {
        assert!(matches!(
            parse("", &Schema::canonical()),
            Err(IngestError::Empty)
        ));
        assert!(matches!(
            parse("vehicle_id,t_s,x_m\n", &Schema::canonical()),
            Err(IngestError::Empty)
        ));
        match parse("vehicle_id,t_s,x_m\n1,0,0\n1,abc,3\n", &Schema::canonical()) {
            Err(IngestError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            TimeUnit::parse("fortnights"),
            Err(IngestError::UnknownUnit(_))
        ));
        assert!(matches!(
            parse("id,t,x\n1,0,0\n", &Schema::canonical()),
            Err(IngestError::MissingColumn(_))
        ));
    }

    #[test]
    fn tab_delimited_with_lane_column() {
        let text = "Vehicle_ID\tFrame_ID\tLane_ID\tLocal_Y\n7\t100\t2\t0\n7\t110\t2\t50\n";
        let parsed = parse(text, &Schema::ngsim()).unwrap();
        assert!(parsed.report.lane_column_ignored);
        let tr = &parsed.set.trajectories()[0];
        assert!((tr.last().t - 1.0).abs() < 1e-12);
        assert!((tr.last().x - 15.24).abs() < 1e-9);
        assert!((parsed.set.origin().t_s - 10.0).abs() < 1e-12);
    }

    fn traj(points: &[(f64, f64)]) -> VehicleTrajectory {
        VehicleTrajectory::new(
            "v",
            points.iter().map(|&(t, x)| TrajectoryPoint::new(t, x)).collect(),
        )
    }

    #[test]
    fn validate_monotone_is_identity() {
        let t = traj(&[(0.0, 0.0), (1.0, 5.0), (2.0, 5.0), (3.0, 9.0)]);
        let v = validate_trajectory(t.clone(), &ValidationConfig::default()).unwrap();
        assert_eq!(v.trajectory, t);
        assert_eq!(v.duplicates_removed, 0);
    }

    #[test]
    fn validate_removes_duplicate_timestamp() {
        let t = traj(&[(0.0, 0.0), (1.0, 5.0), (1.0, 6.0), (2.0, 9.0)]);
        let v = validate_trajectory(t, &ValidationConfig::default()).unwrap();
        assert_eq!(v.trajectory.points.len(), 3);
        assert_eq!(v.duplicates_removed, 1);
        assert_eq!(v.trajectory.points[1].x, 5.0);
    }

    #[test]
    fn validate_rejects_backward_motion() {
        let t = traj(&[(0.0, 0.0), (1.0, 10.0), (2.0, 0.0)]);
        let r = validate_trajectory(t, &ValidationConfig::default()).unwrap_err();
        assert_eq!(r.vehicle_id, "v");
        assert!((r.backward_fraction - 0.5).abs() < 1e-12);
    }

    #[test]
    fn validate_clamps_small_blip() {
        let mut pts: Vec<(f64, f64)> = (0..200).map(|i| (i as f64, i as f64 * 10.0)).collect();
        pts[100].1 -= 15.0;
        let v = validate_trajectory(traj(&pts), &ValidationConfig::default()).unwrap();
        let xs: Vec<f64> = v.trajectory.points.iter().map(|p| p.x).collect();
        assert!(xs.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(v.clamped_segments, 1);
    }

    fn cluster(id0: usize, n: usize, t0: f64, dur: f64) -> Vec<VehicleTrajectory> {
        (0..n)
            .map(|k| {
                let start = t0 + k as f64 * (dur / n as f64) * 0.5;
                let pts = (0..=10)
                    .map(|s| {
                        let t = start + s as f64 * (dur * 0.5 / 10.0);
                        TrajectoryPoint::new(t, (t - start) * 20.0)
                    })
                    .collect();
                VehicleTrajectory::new((id0 + k).to_string(), pts)
            })
            .collect()
    }

    #[test]
    fn segments_split_on_gaps() {
        let one = TrajectorySet::new(cluster(0, 20, 0.0, 3600.0), UnitDeclaration::default())
            .unwrap();
        assert_eq!(segment_contiguous(&one, 60.0).len(), 1);

        let mut trs = cluster(0, 10, 0.0, 900.0);
        trs.extend(cluster(100, 10, 1020.0, 900.0));
        let two = TrajectorySet::new(trs, UnitDeclaration::default()).unwrap();
        let segs = segment_contiguous(&two, 60.0);
        assert_eq!(segs.len(), 2);
        assert_eq!(
            segs.iter().map(|s| s.point_count()).sum::<usize>(),
            two.point_count()
        );
        assert!((segs[1].origin().t_s - 1020.0).abs() < 1e-9);
    }

    #[test]
    fn id_ordering_is_numeric_first() {
        let mut ids = vec!["10", "2", "a", "1"];
        ids.sort_by(|a, b| compare_ids(a, b));
        assert_eq!(ids, ["1", "2", "10", "a"]);
    }
}
