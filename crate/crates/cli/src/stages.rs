//! Pipeline stages. Each stage reads the previous stage's files from the
//! output directory, so any stage can be rerun on its own.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nlkv_core::anticipation::{LkvSample, NlkvSample};
use nlkv_core::artifacts::{
    self, read_field, read_json, write_centered_csv, write_comparison_csv, write_csv_file,
    write_curve_csv, write_field, write_heatmap_csv, write_json, write_lkv_csv, write_nlkv_csv,
    write_surface_csv, ArtifactError, ComparisonRow, FitReport, CURVE_POINTS,
};
use nlkv_core::fields::{GridSpec, Quantity, Sign};
use nlkv_core::fitting::{fit_fd, FitData, LossKind};
use nlkv_core::ingest::{
    parse_trajectories, write_canonical_csv, IngestReport, Origin, Schema, TrajectorySet,
    ValidationConfig,
};
use nlkv_core::models::{FdParams, ModelKind};
use nlkv_core::pipeline::{build_samples, segment_fields, SampleRun};
use nlkv_core::validation::{
    apply_label_noise, center_speed_probabilities, default_surface,
    synthesize_stationary_trajectories, SyntheticScenario,
};

use crate::config::{PipelineConfig, SyntheticConfig};
use crate::error::{CliError, ErrorKind, Stage, Tagged};

const TRAJECTORIES: &str = "trajectories";
const FIELDS: &str = "fields";
const SAMPLES: &str = "samples";
const FITS: &str = "fits";
const PLOT: &str = "plot";
const MANIFEST: &str = "manifest.json";
const NLKV_FILE: &str = "nlkv.csv";
const LKV_FILE: &str = "lkv.csv";
/// XORed into the scenario seed for label noise so the two streams differ.
const LABEL_NOISE_SALT: u64 = 0x5eed;

fn io_error(stage: Stage, path: &Path, e: std::io::Error) -> CliError {
    CliError::new(stage, ErrorKind::Internal, format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    /// File under `trajectories/`.
    pub file: String,
    /// Input path, or `synthetic`.
    pub source: String,
    pub vehicles: usize,
    pub points: usize,
    pub time_extent_s: f64,
    pub space_extent_m: f64,
    /// Shift subtracted from the raw coordinates, SI units.
    pub origin: Origin,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub datasets: Vec<DatasetEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<SyntheticScenario>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub dataset: String,
    pub segment: usize,
    pub quantity: Quantity,
    pub stem: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldManifest {
    pub grid: GridSpec,
    pub fields: Vec<FieldEntry>,
    pub skipped_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesReport {
    pub grid: GridSpec,
    pub segments: usize,
    pub skipped_segments: usize,
    pub nlkv: usize,
    pub nlkv_decelerating: usize,
    pub lkv: usize,
    pub label_noise: bool,
}

fn out_dir(cfg: &PipelineConfig) -> &Path {
    &cfg.output.dir
}

fn write_set(stage: Stage, path: &Path, set: &TrajectorySet) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_error(stage, dir, e))?;
    }
    let file = File::create(path).map_err(|e| io_error(stage, path, e))?;
    let mut w = BufWriter::new(file);
    write_canonical_csv(set, &mut w).at(stage)?;
    w.flush().map_err(|e| io_error(stage, path, e))
}

fn entry(name: String, source: String, set: &TrajectorySet, ingest: Option<IngestReport>) -> DatasetEntry {
    DatasetEntry {
        file: format!("{name}.csv"),
        name,
        source,
        vehicles: set.trajectories().len(),
        points: set.point_count(),
        time_extent_s: set.time_extent(),
        space_extent_m: set.space_extent(),
        origin: set.origin(),
        ingest,
    }
}

/// Parses every input file into `trajectories/dataset<n>.csv`.
pub fn ingest(cfg: &PipelineConfig) -> Result<DatasetManifest, CliError> {
    let stage = Stage::Ingest;
    let input = cfg.input.as_ref().ok_or_else(|| {
        CliError::new(stage, ErrorKind::Config, "no [input] section or --input given")
    })?;
    let schema = input.schema();
    let validation = input.validation();
    let dir = out_dir(cfg).join(TRAJECTORIES);
    let mut datasets = Vec::new();
    for (n, path) in input.paths.iter().enumerate() {
        let file = File::open(path).map_err(|e| {
            CliError::new(stage, ErrorKind::Config, format!("{}: {e}", path.display()))
        })?;
        let parsed = parse_trajectories(BufReader::new(file), &schema, &validation)
            .map_err(|e| CliError::new(stage, ErrorKind::Data, format!("{}: {e}", path.display())))?;
        let r = &parsed.report;
        log::info!(
            "{}: {} rows, {} vehicles kept, {} rejected, {} too short",
            path.display(),
            r.rows,
            parsed.set.trajectories().len(),
            r.rejected.len(),
            r.dropped_short
        );
        let e = entry(
            format!("dataset{n}"),
            path.display().to_string(),
            &parsed.set,
            Some(parsed.report),
        );
        write_set(stage, &dir.join(&e.file), &parsed.set)?;
        datasets.push(e);
    }
    let manifest = DatasetManifest {
        datasets,
        scenario: None,
    };
    write_json(&dir.join(MANIFEST), &manifest).at(stage)?;
    Ok(manifest)
}

/// Generates the configured scenario into `trajectories/dataset0.csv`.
pub fn synth(cfg: &PipelineConfig) -> Result<DatasetManifest, CliError> {
    let stage = Stage::Synth;
    let syn = cfg.synthetic.clone().unwrap_or_default();
    let scenario = syn.scenario();
    scenario.validate_for_grid(&cfg.grid).at(stage)?;
    let set = synthesize_stationary_trajectories(&scenario).at(stage)?;
    log::info!(
        "synthetic: {} blocks, {} vehicles, {} points",
        scenario.densities.len(),
        set.trajectories().len(),
        set.point_count()
    );
    let dir = out_dir(cfg).join(TRAJECTORIES);
    let e = entry("dataset0".into(), "synthetic".into(), &set, None);
    write_set(stage, &dir.join(&e.file), &set)?;
    let manifest = DatasetManifest {
        datasets: vec![e],
        scenario: Some(scenario),
    };
    write_json(&dir.join(MANIFEST), &manifest).at(stage)?;
    Ok(manifest)
}

fn load_datasets(cfg: &PipelineConfig, stage: Stage) -> Result<(DatasetManifest, Vec<TrajectorySet>), CliError> {
    let dir = out_dir(cfg).join(TRAJECTORIES);
    let manifest: DatasetManifest = read_json(&dir.join(MANIFEST)).at(stage)?;
    let schema = Schema::canonical();
    // already validated on ingest; nothing may be rejected the second time
    let validation = ValidationConfig {
        max_backward_fraction: f64::INFINITY,
    };
    let sets = manifest
        .datasets
        .iter()
        .map(|d| {
            let path = dir.join(&d.file);
            let file = artifacts::open(&path).at(stage)?;
            parse_trajectories(BufReader::new(file), &schema, &validation)
                .map(|p| p.set)
                .map_err(|e| CliError::new(stage, ErrorKind::Data, format!("{}: {e}", path.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest, sets))
}

fn quantity_name(q: Quantity) -> &'static str {
    match q {
        Quantity::Speed => "speed",
        Quantity::Density => "density",
        Quantity::Acceleration => "acceleration",
        Quantity::AnticipatedDensity => "anticipated_density",
    }
}

/// Writes V, K, A and anticipated-density fields for every usable segment.
pub fn fields(cfg: &PipelineConfig) -> Result<FieldManifest, CliError> {
    let stage = Stage::Fields;
    let (manifest, sets) = load_datasets(cfg, stage)?;
    let sample_cfg = cfg.sample_config();
    let dir = out_dir(cfg).join(FIELDS);
    let mut entries = Vec::new();
    let mut skipped = 0;
    for (d, set) in manifest.datasets.iter().zip(&sets) {
        let segments = nlkv_core::ingest::segment_contiguous(set, sample_cfg.gap_threshold_s);
        for (s, seg) in segments.iter().enumerate() {
            let f = match segment_fields(seg, s, &cfg.grid, sample_cfg.zero_tol) {
                Ok(f) => f,
                Err(nlkv_core::fields::GridError::DomainTooSmall { .. }) => {
                    log::warn!("{} segment {s} is smaller than one cell, skipped", d.name);
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e).at(stage),
            };
            for field in [&f.speed, &f.density, &f.acceleration, &f.anticipated_density] {
                let stem = format!("{}_seg{s}_{}", d.name, quantity_name(field.quantity()));
                write_field(&dir, &stem, field, &cfg.grid, f.origin, s).at(stage)?;
                entries.push(FieldEntry {
                    dataset: d.name.clone(),
                    segment: s,
                    quantity: field.quantity(),
                    stem,
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(CliError::new(
            stage,
            ErrorKind::Data,
            format!("no segment is large enough for the grid ({skipped} skipped)"),
        ));
    }
    let out = FieldManifest {
        grid: cfg.grid,
        fields: entries,
        skipped_segments: skipped,
    };
    write_json(&dir.join(MANIFEST), &out).at(stage)?;
    Ok(out)
}

/// Samples in reporting units, label noise applied when configured.
pub struct Samples {
    pub nlkv: Vec<NlkvSample>,
    pub lkv: Vec<LkvSample>,
    pub report: SamplesReport,
}

fn noise_source(cfg: &PipelineConfig, manifest: &DatasetManifest) -> Option<(FdParams, u64)> {
    let syn: &SyntheticConfig = cfg.synthetic.as_ref()?;
    if !syn.label_noise {
        return None;
    }
    let seed = manifest.scenario.as_ref().map_or(syn.seed, |s| s.seed);
    Some((syn.truth, seed ^ LABEL_NOISE_SALT))
}

/// Builds NLKV and LKV tables over all datasets and segments.
pub fn samples(cfg: &PipelineConfig) -> Result<Samples, CliError> {
    let stage = Stage::Samples;
    let (manifest, sets) = load_datasets(cfg, stage)?;
    let sample_cfg = cfg.sample_config();
    let mut nlkv = Vec::new();
    let mut lkv = Vec::new();
    let (mut segments, mut skipped) = (0, 0);
    for set in &sets {
        let SampleRun {
            segments: segs,
            skipped_segments,
            samples,
        } = build_samples(set, &sample_cfg).at(stage)?;
        // number segments across datasets
        nlkv.extend(samples.nlkv_reporting().into_iter().map(|mut s| {
            if let Some(o) = s.origin.as_mut() {
                o.segment += segments;
            }
            s
        }));
        lkv.extend(samples.lkv_reporting());
        segments += segs.len();
        skipped += skipped_segments;
    }
    let noise = noise_source(cfg, &manifest);
    if let Some((truth, seed)) = noise {
        apply_label_noise(&mut nlkv, &truth, cfg.fit.scale, seed);
    }
    let report = SamplesReport {
        grid: cfg.grid,
        segments,
        skipped_segments: skipped,
        nlkv: nlkv.len(),
        nlkv_decelerating: nlkv.iter().filter(|s| s.y == Sign::Decelerating).count(),
        lkv: lkv.len(),
        label_noise: noise.is_some(),
    };
    log::info!(
        "samples: {} NLKV ({} decelerating), {} LKV over {} segment(s)",
        report.nlkv,
        report.nlkv_decelerating,
        report.lkv,
        report.segments
    );
    let dir = out_dir(cfg).join(SAMPLES);
    let provenance = cfg.samples.provenance;
    write_csv_file(&dir.join(NLKV_FILE), |w| write_nlkv_csv(&nlkv, provenance, w)).at(stage)?;
    write_csv_file(&dir.join(LKV_FILE), |w| write_lkv_csv(&lkv, w)).at(stage)?;
    write_json(&dir.join("report.json"), &report).at(stage)?;
    Ok(Samples { nlkv, lkv, report })
}

pub fn read_nlkv(out: &Path) -> Result<Vec<NlkvSample>, ArtifactError> {
    let path = out.join(SAMPLES).join(NLKV_FILE);
    artifacts::read_nlkv_csv(BufReader::new(artifacts::open(&path)?), &path.display().to_string())
}

pub fn read_lkv(out: &Path) -> Result<Vec<LkvSample>, ArtifactError> {
    let path = out.join(SAMPLES).join(LKV_FILE);
    artifacts::read_lkv_csv(BufReader::new(artifacts::open(&path)?), &path.display().to_string())
}

pub fn fit_report_path(out: &Path, model: ModelKind, loss: LossKind) -> PathBuf {
    out.join(FITS).join(format!("{model}_{loss}.json"))
}

/// Fits every requested (model, loss) pair to the sample files.
pub fn fit(cfg: &PipelineConfig) -> Result<Vec<FitReport>, CliError> {
    let stage = Stage::Fit;
    let out = out_dir(cfg);
    let pairs = cfg.fit.pairs();
    let nlkv = if pairs.iter().any(|(_, l)| l.uses_nlkv()) {
        read_nlkv(out).at(stage)?
    } else {
        Vec::new()
    };
    let lkv = if pairs.iter().any(|(_, l)| !l.uses_nlkv()) {
        read_lkv(out).at(stage)?
    } else {
        Vec::new()
    };
    let mut reports = Vec::new();
    for (model, loss) in pairs {
        let (data, file) = if loss.uses_nlkv() {
            (FitData::Nlkv(&nlkv), NLKV_FILE)
        } else {
            (FitData::Lkv(&lkv), LKV_FILE)
        };
        let res = fit_fd(model, data, &cfg.fit.fit_config(loss))
            .at(stage)
            .map_err(|mut e| {
                e.message = format!("{model}/{loss}: {}", e.message);
                e
            })?;
        log::info!(
            "{model}/{loss}: {} loss {:.6e} ({} evaluations)",
            res.params,
            res.loss_value,
            res.evaluations
        );
        let report = FitReport::new(&res, format!("../{SAMPLES}/{file}"));
        write_json(&fit_report_path(out, model, loss), &report).at(stage)?;
        reports.push(report);
    }
    Ok(reports)
}

/// Collects the fit reports into `comparison.json` and `comparison.csv`.
pub fn compare(cfg: &PipelineConfig) -> Result<Vec<ComparisonRow>, CliError> {
    let stage = Stage::Compare;
    let out = out_dir(cfg);
    let rows = cfg
        .fit
        .pairs()
        .into_iter()
        .map(|(m, l)| {
            read_json::<FitReport>(&fit_report_path(out, m, l))
                .map(|r| ComparisonRow::from(&r))
                .at(stage)
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_json(&out.join("comparison.json"), &rows).at(stage)?;
    write_csv_file(&out.join("comparison.csv"), |w| write_comparison_csv(&rows, w)).at(stage)?;
    Ok(rows)
}

/// Writes plot-ready files under `plot/` from the stage artifacts.
pub fn emit_plot_data(cfg: &PipelineConfig) -> Result<(), CliError> {
    let stage = Stage::Diagnose;
    let out = out_dir(cfg);
    let plot = out.join(PLOT);
    let fields_dir = out.join(FIELDS);
    let manifest: FieldManifest = read_json(&fields_dir.join(MANIFEST)).at(stage)?;
    for f in &manifest.fields {
        if f.quantity == Quantity::AnticipatedDensity {
            continue;
        }
        let (field, sidecar) = read_field(&fields_dir, &f.stem).at(stage)?;
        write_csv_file(&plot.join(format!("heatmap_{}.csv", f.stem)), |w| {
            write_heatmap_csv(&field, &sidecar.grid, sidecar.origin, w)
        })
        .at(stage)?;
    }

    let nlkv = read_nlkv(out).at(stage)?;
    let lkv = read_lkv(out).at(stage)?;
    write_csv_file(&plot.join("scatter_nlkv.csv"), |w| write_nlkv_csv(&nlkv, false, w)).at(stage)?;
    write_csv_file(&plot.join("scatter_lkv.csv"), |w| write_lkv_csv(&lkv, w)).at(stage)?;

    for (model, loss) in cfg.fit.pairs() {
        let report: FitReport = read_json(&fit_report_path(out, model, loss)).at(stage)?;
        write_csv_file(&plot.join(format!("curve_{model}_{loss}.csv")), |w| {
            write_curve_csv(&report.params.params, CURVE_POINTS, w)
        })
        .at(stage)?;
    }

    if !nlkv.is_empty() {
        let surface = default_surface(&nlkv);
        let centered = center_speed_probabilities(&surface);
        write_csv_file(&plot.join("surface.csv"), |w| write_surface_csv(&surface, w)).at(stage)?;
        write_csv_file(&plot.join("centered.csv"), |w| write_centered_csv(&centered, w)).at(stage)?;
    }
    Ok(())
}

/// Full pipeline: ingest or synthesize, then every later stage.
pub fn run(cfg: &PipelineConfig) -> Result<(), CliError> {
    if cfg.input.is_some() {
        ingest(cfg)?;
    } else {
        if cfg.synthetic.is_none() {
            log::info!("no [input] section, using the default synthetic scenario");
        }
        synth(cfg)?;
    }
    fields(cfg)?;
    samples(cfg)?;
    fit(cfg)?;
    compare(cfg)?;
    emit_plot_data(cfg)
}
