//! Ground-truth oracles: synthetic traffic from a known diagram, empirical
//! deceleration-probability surfaces and end-to-end recovery checks.
//!
//! Synthetic traffic is a sequence of time blocks. Block `b` carries its own
//! equally spaced platoon at `1000 / k_b` m that exists only during the
//! block. All vehicles share one speed profile: constant at `f(k_b)` inside a
//! block, except for a linear ramp from the previous block's speed that starts
//! at the block boundary. The ramp lags the density switch, so speed always
//! trails the density the drivers are heading into.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anticipation::NlkvSample;
use crate::fields::{GridSpec, Sign};
use crate::fitting::{fit_fd, FitConfig, FitData, FitResult, LossKind};
use crate::ingest::{IngestError, TrajectoryPoint, TrajectorySet, UnitDeclaration, VehicleTrajectory};
use crate::models::{logistic, FdParams, MPS_TO_KMH};
use crate::pipeline::{build_samples, SampleConfig};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("block {block}: density {density} veh/km is not below k_jam = {k_jam}")]
    DensityAboveJam { block: usize, density: f64, k_jam: f64 },
    #[error("block {block}: density {density} veh/km is negative or not finite")]
    BadDensity { block: usize, density: f64 },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario produced no vehicles")]
    NoVehicles,
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScenario {
    pub truth: FdParams,
    /// Density per block, veh/km. Zero means an empty block.
    pub densities: Vec<f64>,
    #[serde(default = "defaults::block_duration")]
    pub block_duration_s: f64,
    #[serde(default = "defaults::road_length")]
    pub road_length_m: f64,
    #[serde(default = "defaults::ramp")]
    pub ramp_s: f64,
    /// Spacing of recorded trajectory points.
    #[serde(default = "defaults::sample_interval")]
    pub sample_interval_s: f64,
    /// Replace deterministic signs with draws from the logistic model.
    /// Applied to the sample table, see [`apply_label_noise`].
    #[serde(default)]
    pub label_noise: bool,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn block_duration() -> f64 {
        180.0
    }
    pub fn road_length() -> f64 {
        1200.0
    }
    pub fn ramp() -> f64 {
        30.0
    }
    pub fn sample_interval() -> f64 {
        0.5
    }
}

impl SyntheticScenario {
    pub fn new(truth: FdParams, densities: Vec<f64>) -> Self {
        SyntheticScenario {
            truth,
            densities,
            block_duration_s: defaults::block_duration(),
            road_length_m: defaults::road_length(),
            ramp_s: defaults::ramp(),
            sample_interval_s: defaults::sample_interval(),
            label_noise: false,
            seed: 0,
        }
    }

    /// Seeded density walk lasting at least `duration_s`.
    pub fn random_walk(truth: FdParams, duration_s: f64, seed: u64) -> Self {
        let blocks = (duration_s / defaults::block_duration()).ceil().max(1.0) as usize;
        SyntheticScenario {
            seed,
            ..Self::new(truth, density_walk(seed, blocks, truth.k_jam()))
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.densities.len() as f64 * self.block_duration_s
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        let k_jam = self.truth.k_jam();
        for (block, &density) in self.densities.iter().enumerate() {
            if !(density >= 0.0 && density.is_finite()) {
                return Err(SynthesisError::BadDensity { block, density });
            }
            if density >= k_jam {
                return Err(SynthesisError::DensityAboveJam {
                    block,
                    density,
                    k_jam,
                });
            }
        }
        if self.densities.is_empty() {
            return Err(SynthesisError::Invalid("no density blocks".into()));
        }
        let positive = [
            self.block_duration_s,
            self.road_length_m,
            self.sample_interval_s,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SynthesisError::Invalid(
                "block duration, road length and sample interval must be positive".into(),
            ));
        }
        if !(self.ramp_s >= 0.0 && self.ramp_s <= self.block_duration_s) {
            return Err(SynthesisError::Invalid(
                "ramp must be non-negative and fit inside a block".into(),
            ));
        }
        Ok(())
    }

    /// Also requires blocks to be at least one subdomain long.
    pub fn validate_for_grid(&self, spec: &GridSpec) -> Result<(), SynthesisError> {
        self.validate()?;
        if self.block_duration_s < spec.dt {
            return Err(SynthesisError::Invalid(format!(
                "block duration {} s is shorter than the subdomain duration {} s",
                self.block_duration_s, spec.dt
            )));
        }
        Ok(())
    }
}

/// Seeded walk over a 15..=180 veh/km ladder (capped below jam density) with
/// steps of 10 to 80 veh/km and +-2 veh/km jitter.
pub fn density_walk(seed: u64, blocks: usize, k_jam: f64) -> Vec<f64> {
    let cap = 0.95 * k_jam;
    let mut ladder: Vec<f64> = (3..=36).map(|r| r as f64 * 5.0).filter(|&k| k < cap).collect();
    if ladder.is_empty() {
        ladder.push(0.5 * k_jam);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(blocks);
    let mut current = ladder[rng.random_range(0..ladder.len())];
    for _ in 0..blocks {
        let jitter = rng.random_range(-2.0..2.0);
        out.push((current + jitter).clamp(1.0, 0.97 * k_jam));
        let steps: Vec<f64> = ladder
            .iter()
            .copied()
            .filter(|k| (10.0..=80.0).contains(&(k - current).abs()))
            .collect();
        let pool = if steps.is_empty() { &ladder } else { &steps };
        current = pool[rng.random_range(0..pool.len())];
    }
    out
}

/// Piecewise-linear speed over time, m/s, held constant outside the knots.
#[derive(Debug, Clone)]
struct SpeedProfile {
    t: Vec<f64>,
    v: Vec<f64>,
    /// Distance travelled from `t[0]` to each knot.
    x: Vec<f64>,
}

impl SpeedProfile {
    fn new(knots: Vec<(f64, f64)>) -> Self {
        let t: Vec<f64> = knots.iter().map(|k| k.0).collect();
        let v: Vec<f64> = knots.iter().map(|k| k.1).collect();
        let mut x = vec![0.0; t.len()];
        for n in 1..t.len() {
            x[n] = x[n - 1] + 0.5 * (v[n - 1] + v[n]) * (t[n] - t[n - 1]);
        }
        SpeedProfile { t, v, x }
    }

    fn speed(&self, t: f64) -> f64 {
        let n = self.t.partition_point(|&k| k <= t);
        if n == 0 {
            return self.v[0];
        }
        if n == self.t.len() {
            return self.v[n - 1];
        }
        let (t0, t1) = (self.t[n - 1], self.t[n]);
        self.v[n - 1] + (self.v[n] - self.v[n - 1]) * (t - t0) / (t1 - t0)
    }

    fn position(&self, t: f64) -> f64 {
        let n = self.t.partition_point(|&k| k <= t);
        if n == 0 {
            return self.v[0] * (t - self.t[0]);
        }
        let tau = t - self.t[n - 1];
        self.x[n - 1] + 0.5 * (self.v[n - 1] + self.speed(t)) * tau
    }

    /// Inverse of [`position`]; speeds must be positive.
    fn time_at(&self, x: f64) -> f64 {
        let n = self.x.partition_point(|&k| k <= x);
        if n == 0 {
            return self.t[0] + (x - self.x[0]) / self.v[0];
        }
        let (t0, v0, d) = (self.t[n - 1], self.v[n - 1], x - self.x[n - 1]);
        if n == self.t.len() {
            return t0 + d / v0;
        }
        let c = (self.v[n] - v0) / (self.t[n] - t0);
        // 0.5 c tau^2 + v0 tau - d = 0, in the cancellation-free form
        t0 + 2.0 * d / (v0 + (v0 * v0 + 2.0 * c * d).max(0.0).sqrt())
    }
}

/// Equilibrium speed in m/s for a density in veh/km.
fn equilibrium_mps(truth: &FdParams, k: f64) -> Result<f64, SynthesisError> {
    let v = truth
        .speed(k)
        .map_err(|e| SynthesisError::Invalid(e.to_string()))?;
    if !(v > 0.0) {
        return Err(SynthesisError::Invalid(format!(
            "equilibrium speed at {k} veh/km is not positive"
        )));
    }
    Ok(v / MPS_TO_KMH)
}

fn build_profile(s: &SyntheticScenario) -> Result<SpeedProfile, SynthesisError> {
    let d = s.block_duration_s;
    let first = s
        .densities
        .iter()
        .copied()
        .find(|&k| k > 0.0)
        .ok_or(SynthesisError::NoVehicles)?;
    let mut u = equilibrium_mps(&s.truth, first)?;
    let mut knots = vec![(0.0, u)];
    for (b, &k) in s.densities.iter().enumerate().skip(1) {
        if k == 0.0 {
            continue;
        }
        let target = equilibrium_mps(&s.truth, k)?;
        let tb = b as f64 * d;
        if target != u {
            knots.push((tb, u));
            knots.push((tb + s.ramp_s, target));
            u = target;
        }
    }
    knots.push((s.duration_s(), u));
    knots.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    Ok(SpeedProfile::new(knots))
}

/// Trajectories for `s`, in seconds and meters. Deterministic given the seed.
pub fn synthesize_stationary_trajectories(s: &SyntheticScenario) -> Result<TrajectorySet, SynthesisError> {
    s.validate()?;
    let profile = build_profile(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let road = s.road_length_m;
    let dt = s.sample_interval_s;
    let mut trajectories = Vec::new();
    let mut next_id: u64 = 0;

    for (b, &k) in s.densities.iter().enumerate() {
        let phase_draw: f64 = rng.random_range(0.0..1.0);
        if k == 0.0 {
            continue;
        }
        let spacing = 1000.0 / k;
        let phase = phase_draw * spacing;
        let (tb, te) = (b as f64 * s.block_duration_s, (b + 1) as f64 * s.block_duration_s);
        let (xb, xe) = (profile.position(tb), profile.position(te));
        let n_min = ((-phase - (xe - xb)) / spacing).ceil() as i64;
        let n_max = ((road - phase) / spacing).floor() as i64;
        for n in n_min..=n_max {
            // x(t) = offset + X(t)
            let offset = phase + n as f64 * spacing - xb;
            let t_in = if offset + xb < 0.0 {
                profile.time_at(-offset).max(tb)
            } else {
                tb
            };
            let t_out = profile.time_at(road - offset).min(te);
            if !(t_out - t_in > 1e-9) {
                continue;
            }
            let mut times = vec![t_in];
            let mut g = (t_in / dt).floor() as i64 + 1;
            while (g as f64) * dt < t_out {
                let t = g as f64 * dt;
                if t - times[times.len() - 1] > 1e-9 {
                    times.push(t);
                }
                g += 1;
            }
            if t_out - times[times.len() - 1] > 1e-9 {
                times.push(t_out);
            }
            if times.len() < 2 {
                continue;
            }
            let mut points: Vec<TrajectoryPoint> = times
                .iter()
                .map(|&t| TrajectoryPoint::new(t, (offset + profile.position(t)).clamp(0.0, road)))
                .collect();
            // pin boundary crossings exactly
            if t_in > tb {
                points[0].x = 0.0;
            }
            let last = points.len() - 1;
            if t_out < te {
                points[last].x = road;
            }
            trajectories.push(VehicleTrajectory::new(next_id.to_string(), points));
            next_id += 1;
        }
    }
    if trajectories.is_empty() {
        return Err(SynthesisError::NoVehicles);
    }
    Ok(TrajectorySet::new(trajectories, UnitDeclaration::default())?)
}

/// Redraws every label as Bernoulli with probability
/// `logistic((v - f(k_a)) / scale)` of deceleration. Samples must be in
/// reporting units.
pub fn apply_label_noise(samples: &mut [NlkvSample], truth: &FdParams, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in samples.iter_mut() {
        let p = match truth.speed(s.k_a) {
            Ok(f) => logistic((s.v - f) / scale),
            Err(_) => continue,
        };
        s.y = if rng.random_bool(p) {
            Sign::Decelerating
        } else {
            Sign::Accelerating
        };
    }
}

/// Independent NLKV samples in reporting units: `k_a` uniform over
/// `[0.02, 0.95] * k_jam`, residual `v - f(k_a)` uniform in `+-z_max` (speeds
/// floored at zero), labels drawn from the logistic model.
pub fn synthesize_nlkv_samples(truth: &FdParams, m: usize, z_max: f64, scale: f64, seed: u64) -> Vec<NlkvSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_jam = truth.k_jam();
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let k_a = rng.random_range(0.02 * k_jam..0.95 * k_jam);
        let z: f64 = rng.random_range(-z_max..z_max);
        let Ok(f) = truth.speed(k_a) else { continue };
        let v = (f + z).max(0.0);
        let p = logistic((v - f) / scale);
        let y = if rng.random_bool(p) {
            Sign::Decelerating
        } else {
            Sign::Accelerating
        };
        out.push(NlkvSample::new(k_a, v, y));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub z_lo: f64,
    pub z_hi: f64,
    pub n: usize,
    /// Observed fraction of decelerations.
    pub empirical: f64,
    /// Mean model probability over the bin.
    pub expected: f64,
}

/// Sorts samples by `z = (v - f(k_a)) / scale` and compares observed and
/// predicted deceleration rates in `groups` equal-count bins.
pub fn logistic_calibration(samples: &[NlkvSample], truth: &FdParams, scale: f64, groups: usize) -> Vec<CalibrationBin> {
    let mut zs: Vec<(f64, bool)> = samples
        .iter()
        .filter_map(|s| {
            let f = truth.speed(s.k_a).ok()?;
            Some(((s.v - f) / scale, s.y == Sign::Decelerating))
        })
        .collect();
    zs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = zs.len();
    if n == 0 || groups == 0 {
        return Vec::new();
    }
    (0..groups)
        .filter_map(|g| {
            let (lo, hi) = (g * n / groups, (g + 1) * n / groups);
            let chunk = &zs[lo..hi];
            if chunk.is_empty() {
                return None;
            }
            let m = chunk.len() as f64;
            Some(CalibrationBin {
                z_lo: chunk[0].0,
                z_hi: chunk[chunk.len() - 1].0,
                n: chunk.len(),
                empirical: chunk.iter().filter(|c| c.1).count() as f64 / m,
                expected: chunk.iter().map(|c| logistic(c.0)).sum::<f64>() / m,
            })
        })
        .collect()
}

pub const DEFAULT_SURFACE_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceBin {
    pub k_lo: f64,
    pub k_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
    pub n: usize,
    pub decelerating: usize,
}

impl SurfaceBin {
    /// `None` for empty bins.
    pub fn p(&self) -> Option<f64> {
        (self.n > 0).then(|| self.decelerating as f64 / self.n as f64)
    }

    pub fn v_mid(&self) -> f64 {
        0.5 * (self.v_lo + self.v_hi)
    }
}

/// Deceleration frequency per (density, speed) bin, reporting units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecelProbSurface {
    pub k_edges: Vec<f64>,
    pub v_edges: Vec<f64>,
    /// Row-major: density bin, then speed bin.
    pub bins: Vec<SurfaceBin>,
    /// Samples outside the edges.
    pub outside: usize,
}

impl DecelProbSurface {
    pub fn bin(&self, ki: usize, vi: usize) -> &SurfaceBin {
        &self.bins[ki * (self.v_edges.len() - 1) + vi]
    }
}

/// `bins` equal-width bins over `[lo, hi]`. A degenerate range is widened by
/// one unit.
pub fn equal_width_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let bins = bins.max(1);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    (0..=bins)
        .map(|n| if n == bins { hi } else { lo + (hi - lo) * n as f64 / bins as f64 })
        .collect()
}

fn locate(edges: &[f64], x: f64) -> Option<usize> {
    let last = edges.len() - 1;
    if !(x >= edges[0] && x <= edges[last]) {
        return None;
    }
    Some(edges.partition_point(|&e| e <= x).clamp(1, last) - 1)
}

/// Bins are half-open except the last in each axis, which includes its upper
/// edge.
pub fn empirical_decel_probabilities(samples: &[NlkvSample], k_edges: &[f64], v_edges: &[f64]) -> DecelProbSurface {
    assert!(k_edges.len() >= 2 && v_edges.len() >= 2, "need at least one bin per axis");
    let nv = v_edges.len() - 1;
    let mut bins: Vec<SurfaceBin> = Vec::with_capacity((k_edges.len() - 1) * nv);
    for kw in k_edges.windows(2) {
        for vw in v_edges.windows(2) {
            bins.push(SurfaceBin {
                k_lo: kw[0],
                k_hi: kw[1],
                v_lo: vw[0],
                v_hi: vw[1],
                n: 0,
                decelerating: 0,
            });
        }
    }
    let mut outside = 0;
    for s in samples {
        match (locate(k_edges, s.k_a), locate(v_edges, s.v)) {
            (Some(ki), Some(vi)) => {
                let b = &mut bins[ki * nv + vi];
                b.n += 1;
                if s.y == Sign::Decelerating {
                    b.decelerating += 1;
                }
            }
            _ => outside += 1,
        }
    }
    DecelProbSurface {
        k_edges: k_edges.to_vec(),
        v_edges: v_edges.to_vec(),
        bins,
        outside,
    }
}

/// 20 x 20 equal-width surface over the observed range.
pub fn default_surface(samples: &[NlkvSample]) -> DecelProbSurface {
    let range = |f: fn(&NlkvSample) -> f64| {
        samples
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
    };
    let (k_lo, k_hi) = if samples.is_empty() { (0.0, 1.0) } else { range(|s| s.k_a) };
    let (v_lo, v_hi) = if samples.is_empty() { (0.0, 1.0) } else { range(|s| s.v) };
    empirical_decel_probabilities(
        samples,
        &equal_width_edges(k_lo, k_hi, DEFAULT_SURFACE_BINS),
        &equal_width_edges(v_lo, v_hi, DEFAULT_SURFACE_BINS),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteredCurve {
    pub k_lo: f64,
    pub k_hi: f64,
    /// Speed where the deceleration probability crosses 0.5.
    pub v_star: f64,
    /// `(v - v_star, p)` at each non-empty speed bin centre.
    pub points: Vec<(f64, f64)>,
}

/// Re-indexes each density bin's p-versus-speed curve around its 0.5
/// crossing. Density bins without a crossing are left out.
pub fn center_speed_probabilities(surface: &DecelProbSurface) -> Vec<CenteredCurve> {
    let nk = surface.k_edges.len() - 1;
    let nv = surface.v_edges.len() - 1;
    let mut out = Vec::new();
    for ki in 0..nk {
        let curve: Vec<(f64, f64)> = (0..nv)
            .filter_map(|vi| {
                let b = surface.bin(ki, vi);
                b.p().map(|p| (b.v_mid(), p))
            })
            .collect();
        match crossing(&curve) {
            Some(v_star) => out.push(CenteredCurve {
                k_lo: surface.k_edges[ki],
                k_hi: surface.k_edges[ki + 1],
                v_star,
                points: curve.iter().map(|&(v, p)| (v - v_star, p)).collect(),
            }),
            None => log::info!(
                "density bin [{}, {}) has no p = 0.5 crossing, omitted",
                surface.k_edges[ki],
                surface.k_edges[ki + 1]
            ),
        }
    }
    out
}

/// First upward crossing of 0.5, linearly interpolated.
fn crossing(curve: &[(f64, f64)]) -> Option<f64> {
    if let Some(&(v, _)) = curve.iter().find(|c| c.1 == 0.5) {
        return Some(v);
    }
    curve.windows(2).find_map(|w| {
        let ((v0, p0), (v1, p1)) = (w[0], w[1]);
        (p0 < 0.5 && p1 > 0.5).then(|| v0 + (0.5 - p0) / (p1 - p0) * (v1 - v0))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub v0: f64,
    pub k_crit: f64,
    pub k_jam: f64,
    pub lambda: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            v0: 0.05,
            k_crit: 0.05,
            k_jam: 0.10,
            lambda: 0.10,
        }
    }
}

impl Tolerances {
    pub fn for_param(&self, name: &str) -> f64 {
        match name {
            "v0" => self.v0,
            "k_crit" => self.k_crit,
            "k_jam" => self.k_jam,
            _ => self.lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryOptions {
    pub duration_s: f64,
    /// Scenario seeds; the first is the recovery run, both feed the
    /// invariance comparison.
    pub seeds: [u64; 2],
    pub label_noise: bool,
    pub tolerances: Tolerances,
    pub zero_tol: f64,
    pub gap_threshold_s: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        let s = SampleConfig::default();
        RecoveryOptions {
            duration_s: 48.0 * 60.0,
            seeds: [1, 2],
            label_noise: false,
            tolerances: Tolerances::default(),
            zero_tol: s.zero_tol,
            gap_threshold_s: s.gap_threshold_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRun {
    pub seed: u64,
    pub densities: Vec<f64>,
    pub nlkv_samples: usize,
    pub lkv_samples: usize,
    pub ece: Option<FitResult>,
    pub lse: Option<FitResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDelta {
    pub name: String,
    pub reference: f64,
    pub fitted: f64,
    /// `|fitted - reference| / |reference|`.
    pub rel_delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub truth: FdParams,
    pub grid: GridSpec,
    pub runs: Vec<RecoveryRun>,
    /// First run's ECE fit against the truth.
    pub recovery: Vec<ParamDelta>,
    /// Second run's ECE fit against the first, at twice the tolerances.
    pub invariance: Vec<ParamDelta>,
    /// Second run's LSE fit against the first; informational.
    pub lse_spread: Vec<ParamDelta>,
    pub recovered: bool,
    pub invariant: bool,
}

impl RecoveryReport {
    pub fn passed(&self) -> bool {
        self.recovered && self.invariant
    }
}

fn compare(reference: &FdParams, fitted: &FdParams, tol: Option<&dyn Fn(&str) -> f64>) -> Vec<ParamDelta> {
    reference
        .kind()
        .param_names()
        .iter()
        .zip(reference.to_vec().into_iter().zip(fitted.to_vec()))
        .map(|(name, (r, f))| {
            let rel_delta = (f - r).abs() / r.abs();
            let tolerance = tol.map(|t| t(name));
            ParamDelta {
                name: (*name).to_string(),
                reference: r,
                fitted: f,
                rel_delta,
                tolerance,
                pass: tolerance.is_none_or(|t| rel_delta <= t),
            }
        })
        .collect()
}

/// One scenario through synthesis, fields, samples and both fits.
pub fn recovery_run(truth: &FdParams, spec: &GridSpec, cfg: &FitConfig, opts: &RecoveryOptions, seed: u64) -> RecoveryRun {
    let scenario = SyntheticScenario {
        label_noise: opts.label_noise,
        ..SyntheticScenario::random_walk(*truth, opts.duration_s, seed)
    };
    let mut run = RecoveryRun {
        seed,
        densities: scenario.densities.clone(),
        nlkv_samples: 0,
        lkv_samples: 0,
        ece: None,
        lse: None,
        error: None,
    };
    let outcome = (|| -> Result<(), String> {
        scenario.validate_for_grid(spec).map_err(|e| e.to_string())?;
        let set = synthesize_stationary_trajectories(&scenario).map_err(|e| e.to_string())?;
        let sample_cfg = SampleConfig {
            grid: *spec,
            zero_tol: opts.zero_tol,
            gap_threshold_s: opts.gap_threshold_s,
            ..SampleConfig::default()
        };
        let built = build_samples(&set, &sample_cfg).map_err(|e| e.to_string())?;
        let mut nlkv = built.samples.nlkv_reporting();
        let lkv = built.samples.lkv_reporting();
        if scenario.label_noise {
            apply_label_noise(&mut nlkv, truth, cfg.scale, seed ^ 0x5eed);
        }
        run.nlkv_samples = nlkv.len();
        run.lkv_samples = lkv.len();
        let ece_cfg = FitConfig {
            loss: LossKind::Ece,
            ..cfg.clone()
        };
        run.ece = Some(fit_fd(truth.kind(), FitData::Nlkv(&nlkv), &ece_cfg).map_err(|e| e.to_string())?);
        let lse_cfg = FitConfig {
            loss: LossKind::Lse,
            ..cfg.clone()
        };
        run.lse = Some(fit_fd(truth.kind(), FitData::Lkv(&lkv), &lse_cfg).map_err(|e| e.to_string())?);
        Ok(())
    })();
    run.error = outcome.err();
    run
}

/// Synthesize, estimate, fit and compare against the truth for the first
/// seed; compare the fits of both seeds with each other.
pub fn recovery_check(truth: &FdParams, spec: &GridSpec, cfg: &FitConfig, opts: &RecoveryOptions) -> RecoveryReport {
    let runs = opts
        .seeds
        .iter()
        .map(|&seed| recovery_run(truth, spec, cfg, opts, seed))
        .collect();
    recovery_report(truth, spec, opts, runs)
}

/// Compares two finished runs; see [`recovery_check`].
pub fn recovery_report(truth: &FdParams, spec: &GridSpec, opts: &RecoveryOptions, runs: Vec<RecoveryRun>) -> RecoveryReport {
    assert_eq!(runs.len(), 2, "recovery report needs exactly two runs");
    let tol = |name: &str| opts.tolerances.for_param(name);
    let tol2 = |name: &str| 2.0 * opts.tolerances.for_param(name);
    let recovery = runs[0]
        .ece
        .as_ref()
        .map(|f| compare(truth, &f.params, Some(&tol)))
        .unwrap_or_default();
    let (a, b) = (&runs[0], &runs[1]);
    let invariance = match (&a.ece, &b.ece) {
        (Some(x), Some(y)) => compare(&x.params, &y.params, Some(&tol2)),
        _ => Vec::new(),
    };
    let lse_spread = match (&a.lse, &b.lse) {
        (Some(x), Some(y)) => compare(&x.params, &y.params, None),
        _ => Vec::new(),
    };
    RecoveryReport {
        truth: *truth,
        grid: *spec,
        recovered: !recovery.is_empty() && recovery.iter().all(|d| d.pass),
        invariant: !invariance.is_empty() && invariance.iter().all(|d| d.pass),
        runs,
        recovery,
        invariance,
        lse_spread,
    }
}
