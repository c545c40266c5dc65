//! File formats for fields, samples, fits and diagnostics.
//!
//! Sample and curve files are in reporting units (veh/km, km/h); field files
//! keep SI units. Floats are written in shortest round-trip form so files
//! read back bit-for-bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anticipation::{LkvSample, NlkvSample};
use crate::fields::{GridSpec, MacroField, Quantity, Sign};
use crate::fitting::{Bounds, FitResult, LossKind};
use crate::ingest::Origin;
use crate::models::{FdParams, ModelKind};
use crate::validation::{CenteredCurve, DecelProbSurface};

pub const NLKV_HEADER: [&str; 3] = ["k_a_veh_per_km", "v_km_per_h", "y"];
pub const NLKV_PROVENANCE_HEADER: [&str; 4] = ["segment", "i", "j", "accel_m_per_s2"];
pub const LKV_HEADER: [&str; 2] = ["k_veh_per_km", "v_km_per_h"];
pub const FIELD_HEADER: [&str; 5] = ["i", "j", "t0_s", "x0_m", "value"];
pub const HEATMAP_HEADER: [&str; 3] = ["t_s", "x_m", "value"];
pub const SURFACE_HEADER: [&str; 6] = ["k_bin_lo", "k_bin_hi", "v_bin_lo", "v_bin_hi", "p", "n"];
pub const CURVE_POINTS: usize = 500;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("{file}: {message}")]
    Format { file: String, message: String },
}

fn create(path: &Path) -> Result<BufWriter<File>, ArtifactError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| ArtifactError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| ArtifactError::Io {
            path: path.display().to_string(),
            source,
        })
}

pub fn open(path: &Path) -> Result<File, ArtifactError> {
    if !path.exists() {
        return Err(ArtifactError::Missing(path.display().to_string()));
    }
    File::open(path).map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ArtifactError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })?;
    w.flush().map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ArtifactError> {
    Ok(serde_json::from_reader(std::io::BufReader::new(open(path)?))?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_f64(file: &str, field: &str, s: &str) -> Result<f64, ArtifactError> {
    s.trim().parse().map_err(|_| ArtifactError::Format {
        file: file.to_string(),
        message: format!("bad {field}: {s:?}"),
    })
}

fn column(headers: &csv::StringRecord, file: &str, name: &str) -> Result<usize, ArtifactError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| ArtifactError::Format {
            file: file.to_string(),
            message: format!("missing column {name}"),
        })
}

/// Writes NLKV samples that are already in reporting units.
pub fn write_nlkv_csv<W: Write>(samples: &[NlkvSample], provenance: bool, out: W) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = NLKV_HEADER.to_vec();
    if provenance {
        header.extend(NLKV_PROVENANCE_HEADER);
    }
    w.write_record(&header)?;
    for s in samples {
        let mut row = vec![s.k_a.to_string(), s.v.to_string(), s.y.label().to_string()];
        if provenance {
            match s.origin {
                Some(o) => row.extend([
                    o.segment.to_string(),
                    o.i.to_string(),
                    o.j.to_string(),
                    fmt_opt(o.accel),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads NLKV samples in reporting units. Extra columns are ignored.
pub fn read_nlkv_csv<R: Read>(input: R, file: &str) -> Result<Vec<NlkvSample>, ArtifactError> {
    let mut r = csv::Reader::from_reader(input);
    let h = r.headers()?.clone();
    let (ck, cv, cy) = (
        column(&h, file, NLKV_HEADER[0])?,
        column(&h, file, NLKV_HEADER[1])?,
        column(&h, file, NLKV_HEADER[2])?,
    );
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let y_raw = rec.get(cy).unwrap_or("");
        let y = y_raw
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(Sign::from_label)
            .ok_or_else(|| ArtifactError::Format {
                file: file.to_string(),
                message: format!("bad label {y_raw:?}"),
            })?;
        out.push(NlkvSample::new(
            parse_f64(file, NLKV_HEADER[0], rec.get(ck).unwrap_or(""))?,
            parse_f64(file, NLKV_HEADER[1], rec.get(cv).unwrap_or(""))?,
            y,
        ));
    }
    Ok(out)
}

/// Writes LKV samples that are already in reporting units.
pub fn write_lkv_csv<W: Write>(samples: &[LkvSample], out: W) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LKV_HEADER)?;
    for s in samples {
        w.write_record([s.k.to_string(), s.v.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads LKV samples in reporting units.
pub fn read_lkv_csv<R: Read>(input: R, file: &str) -> Result<Vec<LkvSample>, ArtifactError> {
    let mut r = csv::Reader::from_reader(input);
    let h = r.headers()?.clone();
    let (ck, cv) = (column(&h, file, LKV_HEADER[0])?, column(&h, file, LKV_HEADER[1])?);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(LkvSample {
            k: parse_f64(file, LKV_HEADER[0], rec.get(ck).unwrap_or(""))?,
            v: parse_f64(file, LKV_HEADER[1], rec.get(cv).unwrap_or(""))?,
        });
    }
    Ok(out)
}

pub fn quantity_unit(q: Quantity) -> &'static str {
    match q {
        Quantity::Speed => "m/s",
        Quantity::Density | Quantity::AnticipatedDensity => "veh/m",
        Quantity::Acceleration => "m/s^2",
    }
}

/// Describes a field CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub quantity: Quantity,
    pub unit: String,
    pub segment: usize,
    pub rows: usize,
    pub cols: usize,
    pub defined: usize,
    pub grid: GridSpec,
    /// Added to `i * ts` and `j * xs` to give dataset coordinates.
    pub origin: Origin,
}

/// One row per defined cell, row-major, with the cell's lower-left corner in
/// dataset coordinates.
pub fn write_field_csv<W: Write>(field: &MacroField, grid: &GridSpec, origin: Origin, out: W) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FIELD_HEADER)?;
    for (i, j, v) in field.iter_defined() {
        w.write_record([
            i.to_string(),
            j.to_string(),
            (origin.t_s + i as f64 * grid.ts).to_string(),
            (origin.x_m + j as f64 * grid.xs).to_string(),
            v.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>.json`.
pub fn write_field(dir: &Path, stem: &str, field: &MacroField, grid: &GridSpec, origin: Origin, segment: usize) -> Result<(), ArtifactError> {
    write_field_csv(field, grid, origin, create(&dir.join(format!("{stem}.csv")))?)?;
    let (rows, cols) = field.shape();
    write_json(
        &dir.join(format!("{stem}.json")),
        &FieldSidecar {
            quantity: field.quantity(),
            unit: quantity_unit(field.quantity()).to_string(),
            segment,
            rows,
            cols,
            defined: field.defined_count(),
            grid: *grid,
            origin,
        },
    )
}

fn parse_index(file: &str, field: &str, s: &str) -> Result<usize, ArtifactError> {
    s.trim().parse().map_err(|_| ArtifactError::Format {
        file: file.to_string(),
        message: format!("bad {field}: {s:?}"),
    })
}

/// Reads a field written by [`write_field`].
pub fn read_field(dir: &Path, stem: &str) -> Result<(MacroField, FieldSidecar), ArtifactError> {
    let sidecar: FieldSidecar = read_json(&dir.join(format!("{stem}.json")))?;
    let file = format!("{stem}.csv");
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(open(&dir.join(&file))?));
    let h = r.headers()?.clone();
    let (ci, cj, cv) = (
        column(&h, &file, "i")?,
        column(&h, &file, "j")?,
        column(&h, &file, "value")?,
    );
    let mut field = MacroField::empty(sidecar.rows, sidecar.cols, sidecar.quantity);
    for rec in r.records() {
        let rec = rec?;
        let i = parse_index(&file, "i", rec.get(ci).unwrap_or(""))?;
        let j = parse_index(&file, "j", rec.get(cj).unwrap_or(""))?;
        if i >= sidecar.rows || j >= sidecar.cols {
            return Err(ArtifactError::Format {
                file,
                message: format!("cell ({i}, {j}) outside {} x {}", sidecar.rows, sidecar.cols),
            });
        }
        field.set(i, j, Some(parse_f64(&file, "value", rec.get(cv).unwrap_or(""))?));
    }
    if field.defined_count() != sidecar.defined {
        return Err(ArtifactError::Format {
            file,
            message: format!(
                "{} defined cells, sidecar says {}",
                field.defined_count(),
                sidecar.defined
            ),
        });
    }
    Ok((field, sidecar))
}

/// One row per defined cell at the cell's space-time center.
pub fn write_heatmap_csv<W: Write>(field: &MacroField, grid: &GridSpec, origin: Origin, out: W) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEATMAP_HEADER)?;
    for (i, j, v) in field.iter_defined() {
        w.write_record([
            (origin.t_s + i as f64 * grid.ts + 0.5 * grid.dt).to_string(),
            (origin.x_m + j as f64 * grid.xs + 0.5 * grid.dx).to_string(),
            v.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_surface_csv<W: Write>(surface: &DecelProbSurface, out: W) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SURFACE_HEADER)?;
    for b in &surface.bins {
        w.write_record([
            b.k_lo.to_string(),
            b.k_hi.to_string(),
            b.v_lo.to_string(),
            b.v_hi.to_string(),
            fmt_opt(b.p()),
            b.n.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_centered_csv<W: Write>(curves: &[CenteredCurve], out: W) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k_bin_lo", "k_bin_hi", "v_star", "dv", "p"])?;
    for c in curves {
        for &(dv, p) in &c.points {
            w.write_record([
                c.k_lo.to_string(),
                c.k_hi.to_string(),
                c.v_star.to_string(),
                dv.to_string(),
                p.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `n` equally spaced densities over `[1, k_jam]` with the model speed.
pub fn curve_sweep(params: &FdParams, n: usize) -> Vec<(f64, f64)> {
    let (lo, hi) = (1.0, params.k_jam().max(1.0));
    (0..n)
        .filter_map(|i| {
            let k = if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
            params.speed(k).ok().map(|v| (k, v))
        })
        .collect()
}

pub fn write_curve_csv<W: Write>(params: &FdParams, n: usize, out: W) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k_veh_per_km", "v_km_per_h"])?;
    for (k, v) in curve_sweep(params, n) {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_csv_file(path: &Path, write: impl FnOnce(BufWriter<File>) -> Result<(), ArtifactError>) -> Result<(), ArtifactError> {
    write(create(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub speed: String,
    pub density: String,
}

impl Default for Units {
    fn default() -> Self {
        Units {
            speed: "km/h".into(),
            density: "veh/km".into(),
        }
    }
}

/// FD parameters with their units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsDocument {
    #[serde(flatten)]
    pub params: FdParams,
    #[serde(default)]
    pub units: Units,
}

impl From<FdParams> for ParamsDocument {
    fn from(params: FdParams) -> Self {
        ParamsDocument {
            params,
            units: Units::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: ModelKind,
    pub params: ParamsDocument,
    pub loss: LossKind,
    pub loss_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    pub m: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub starts: usize,
    pub seed: u64,
    pub bounds: Bounds,
    /// Sample file the fit used, relative to the report.
    pub samples: String,
}

impl FitReport {
    pub fn new(fit: &FitResult, samples: impl Into<String>) -> Self {
        FitReport {
            model: fit.params.kind(),
            params: fit.params.into(),
            loss: fit.loss,
            loss_value: fit.loss_value,
            omega: fit.omega,
            m: fit.m,
            iterations: fit.iterations,
            evaluations: fit.evaluations,
            converged: fit.converged,
            starts: fit.starts,
            seed: fit.seed,
            bounds: fit.bounds.clone(),
            samples: samples.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: ModelKind,
    pub loss: LossKind,
    pub params: BTreeMap<String, f64>,
    pub loss_value: f64,
    pub m: usize,
    pub converged: bool,
}

impl From<&FitReport> for ComparisonRow {
    fn from(r: &FitReport) -> Self {
        ComparisonRow {
            model: r.model,
            loss: r.loss,
            params: r
                .model
                .param_names()
                .iter()
                .map(|n| n.to_string())
                .zip(r.params.params.to_vec())
                .collect(),
            loss_value: r.loss_value,
            m: r.m,
            converged: r.converged,
        }
    }
}

const COMPARISON_PARAMS: [&str; 4] = ["v0", "k_crit", "lambda", "k_jam"];

/// Columns `model,loss,v0,k_crit,lambda,k_jam,loss_value,m,converged`;
/// parameters a model lacks are empty.
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["model", "loss"];
    header.extend(COMPARISON_PARAMS);
    header.extend(["loss_value", "m", "converged"]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.model.to_string(), r.loss.to_string()];
        rec.extend(COMPARISON_PARAMS.iter().map(|p| fmt_opt(r.params.get(*p).copied())));
        rec.extend([r.loss_value.to_string(), r.m.to_string(), r.converged.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anticipation::CellRef;

    #[test]
    fn nlkv_round_trip_in_reporting_units() {
        let mut s = NlkvSample::new(0.0123456789, 13.1, Sign::Decelerating);
        s.origin = Some(CellRef {
            segment: 0,
            i: 3,
            j: 4,
            accel: Some(-0.25),
        });
        let r = s.to_reporting_units();
        let mut buf = Vec::new();
        write_nlkv_csv(&[r], true, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k_a_veh_per_km,v_km_per_h,y,segment,i,j,accel_m_per_s2\n"));
        let back = read_nlkv_csv(&buf[..], "mem").unwrap();
        assert_eq!((back[0].k_a, back[0].v, back[0].y), (r.k_a, r.v, r.y));
    }

    #[test]
    fn lkv_round_trip() {
        let s: Vec<LkvSample> = [LkvSample { k: 0.02, v: 20.0 }, LkvSample { k: 0.1 / 3.0, v: 7.7 }]
            .iter()
            .map(LkvSample::to_reporting_units)
            .collect();
        let mut buf = Vec::new();
        write_lkv_csv(&s, &mut buf).unwrap();
        assert_eq!(read_lkv_csv(&buf[..], "mem").unwrap(), s);
    }

    #[test]
    fn bad_label_is_reported() {
        let csv = "k_a_veh_per_km,v_km_per_h,y\n10,20,2\n";
        assert!(matches!(
            read_nlkv_csv(csv.as_bytes(), "x.csv"),
            Err(ArtifactError::Format { .. })
        ));
    }

    #[test]
    fn heatmap_rows_skip_empty_cells() {
        let mut f = MacroField::empty(10, 10, Quantity::Speed);
        for i in 0..10 {
            for j in 0..10 {
                f.set(i, j, Some(10.0));
            }
        }
        for (i, j) in [(0, 0), (4, 5), (9, 9)] {
            f.set(i, j, None);
        }
        let mut buf = Vec::new();
        write_field_csv(&f, &GridSpec::default(), Origin::default(), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 97);

        let mut buf = Vec::new();
        write_heatmap_csv(&f, &GridSpec::default(), Origin::default(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 97);
        // first defined cell (0, 1): center at (25 s, 3 + 150 m)
        assert_eq!(text.lines().nth(1), Some("25,153,10"));
    }

    #[test]
    fn field_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = MacroField::empty(3, 4, Quantity::Acceleration);
        f.set(0, 1, Some(-0.125));
        f.set(2, 3, Some(1.0 / 3.0));
        let origin = Origin { t_s: 10.0, x_m: 0.0 };
        write_field(dir.path(), "a", &f, &GridSpec::default(), origin, 2).unwrap();
        let (back, sidecar) = read_field(dir.path(), "a").unwrap();
        assert_eq!(back, f);
        assert_eq!((sidecar.segment, sidecar.origin), (2, origin));
        assert!(matches!(
            read_field(dir.path(), "b"),
            Err(ArtifactError::Missing(_))
        ));
    }

    #[test]
    fn curve_sweep_is_monotone() {
        let p = FdParams::Smulders {
            v0: 86.8,
            k_crit: 65.0,
            k_jam: 199.9,
        };
        let c = curve_sweep(&p, CURVE_POINTS);
        assert_eq!(c.len(), 500);
        assert!(c.windows(2).all(|w| w[1].1 <= w[0].1));
        assert_eq!(c[499], (199.9, 0.0));
    }

    #[test]
    fn params_document_shape() {
        let doc: ParamsDocument = FdParams::Greenberg {
            v0: 46.3,
            k_jam: 189.9,
        }
        .into();
        let json = serde_json::to_value(&doc).unwrap();
        assert_eq!(
            json,
            serde_json::json!({
                "model": "greenberg",
                "params": {"v0": 46.3, "k_jam": 189.9},
                "units": {"speed": "km/h", "density": "veh/km"}
            })
        );
        let back: ParamsDocument = serde_json::from_value(json).unwrap();
        assert_eq!(back, doc);
    }

    #[test]
    fn comparison_csv_layout() {
        let row = ComparisonRow {
            model: ModelKind::Greenberg,
            loss: LossKind::Ece,
            params: [("v0".to_string(), 46.3), ("k_jam".to_string(), 189.9)].into(),
            loss_value: 0.5,
            m: 10,
            converged: true,
        };
        let mut buf = Vec::new();
        write_comparison_csv(&[row], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "model,loss,v0,k_crit,lambda,k_jam,loss_value,m,converged\ngreenberg,ece,46.3,,,189.9,0.5,10,true\n"
        );
    }
}
