//! Pipeline configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nlkv_core::fields::{GridSpec, DEFAULT_ZERO_TOL};
use nlkv_core::fitting::{BoundsConfig, FitConfig, LossKind};
use nlkv_core::ingest::{LengthUnit, Schema, TimeUnit, ValidationConfig};
use nlkv_core::models::{FdParams, ModelKind};
use nlkv_core::pipeline::{SampleConfig, DEFAULT_GAP_THRESHOLD_S};
use nlkv_core::anticipation::DEFAULT_MIN_SAMPLES;
use nlkv_core::validation::{density_walk, SyntheticScenario};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `vehicle_id,t_s,x_m`, comma or tab separated.
    #[default]
    Generic,
    /// NGSIM trajectory export: `Vehicle_ID`, `Frame_ID` at 10 Hz, `Local_Y` in feet.
    Ngsim,
}

/// Trajectory files. Each file is ingested as its own dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Relative paths resolve against the config file's directory.
    pub paths: Vec<PathBuf>,
    pub profile: Profile,
    pub id_column: Option<String>,
    pub time_column: Option<String>,
    pub position_column: Option<String>,
    pub time_unit: Option<TimeUnit>,
    pub position_unit: Option<LengthUnit>,
    pub lane_column: Option<String>,
    pub delimiter: Option<char>,
    pub split_gap_s: Option<f64>,
    pub max_backward_fraction: Option<f64>,
}

impl InputConfig {
    pub fn schema(&self) -> Schema {
        let mut s = match self.profile {
            Profile::Generic => Schema {
                delimiter: None,
                ..Schema::canonical()
            },
            Profile::Ngsim => Schema::ngsim(),
        };
        if let Some(c) = &self.id_column {
            s.id_column = c.clone();
        }
        if let Some(c) = &self.time_column {
            s.time_column = c.clone();
        }
        if let Some(c) = &self.position_column {
            s.position_column = c.clone();
        }
        if let Some(u) = self.time_unit {
            s.time_unit = u;
        }
        if let Some(u) = self.position_unit {
            s.position_unit = u;
        }
        if self.lane_column.is_some() {
            s.lane_column = self.lane_column.clone();
        }
        if self.delimiter.is_some() {
            s.delimiter = self.delimiter;
        }
        if self.split_gap_s.is_some() {
            s.split_gap_s = self.split_gap_s;
        }
        s
    }

    pub fn validation(&self) -> ValidationConfig {
        let mut v = ValidationConfig::default();
        if let Some(f) = self.max_backward_fraction {
            v.max_backward_fraction = f;
        }
        v
    }
}

/// Stationary-block scenario generated instead of reading files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub truth: FdParams,
    /// Ignored when `densities` is given.
    pub duration_s: f64,
    /// Per-block densities, veh/km. Drawn from a seeded walk when absent.
    pub densities: Option<Vec<f64>>,
    pub block_duration_s: f64,
    pub road_length_m: f64,
    pub ramp_s: f64,
    pub sample_interval_s: f64,
    pub label_noise: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let base = SyntheticScenario::new(
            FdParams::Smulders {
                v0: 86.8,
                k_crit: 65.0,
                k_jam: 199.9,
            },
            Vec::new(),
        );
        SyntheticConfig {
            truth: base.truth,
            duration_s: 2880.0,
            densities: None,
            block_duration_s: base.block_duration_s,
            road_length_m: base.road_length_m,
            ramp_s: base.ramp_s,
            sample_interval_s: base.sample_interval_s,
            label_noise: false,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn scenario(&self) -> SyntheticScenario {
        let densities = self.densities.clone().unwrap_or_else(|| {
            let blocks = (self.duration_s / self.block_duration_s).ceil().max(1.0) as usize;
            density_walk(self.seed, blocks, self.truth.k_jam())
        });
        SyntheticScenario {
            truth: self.truth,
            densities,
            block_duration_s: self.block_duration_s,
            road_length_m: self.road_length_m,
            ramp_s: self.ramp_s,
            sample_interval_s: self.sample_interval_s,
            label_noise: self.label_noise,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplesConfig {
    pub zero_tol: f64,
    pub gap_threshold_s: f64,
    pub min_samples: usize,
    /// Add segment, cell index and acceleration columns to the NLKV table.
    pub provenance: bool,
}

impl Default for SamplesConfig {
    fn default() -> Self {
        SamplesConfig {
            zero_tol: DEFAULT_ZERO_TOL,
            gap_threshold_s: DEFAULT_GAP_THRESHOLD_S,
            min_samples: DEFAULT_MIN_SAMPLES,
            provenance: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub models: Vec<ModelKind>,
    pub losses: Vec<LossKind>,
    pub starts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub xtol: f64,
    pub polish_rounds: usize,
    pub seed: u64,
    pub scale: f64,
    pub bounds: BoundsConfig,
}

impl Default for FitSection {
    fn default() -> Self {
        let f = FitConfig::default();
        FitSection {
            models: ModelKind::ALL.to_vec(),
            losses: vec![LossKind::Ece, LossKind::Lse],
            starts: f.starts,
            max_iter: f.max_iter,
            tol: f.tol,
            xtol: f.xtol,
            polish_rounds: f.polish_rounds,
            seed: f.seed,
            scale: f.scale,
            bounds: f.bounds,
        }
    }
}

impl FitSection {
    pub fn fit_config(&self, loss: LossKind) -> FitConfig {
        FitConfig {
            loss,
            starts: self.starts,
            max_iter: self.max_iter,
            tol: self.tol,
            xtol: self.xtol,
            polish_rounds: self.polish_rounds,
            seed: self.seed,
            scale: self.scale,
            bounds: self.bounds,
        }
    }

    /// Requested (model, loss) pairs, models outermost.
    pub fn pairs(&self) -> Vec<(ModelKind, LossKind)> {
        self.models
            .iter()
            .flat_map(|&m| self.losses.iter().map(move |&l| (m, l)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths resolve against the config file's directory.
    pub dir: PathBuf,
    pub speed_unit: String,
    pub density_unit: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            speed_unit: "km/h".into(),
            density_unit: "veh/km".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<InputConfig>,
    pub synthetic: Option<SyntheticConfig>,
    pub grid: GridSpec,
    pub samples: SamplesConfig,
    pub fit: FitSection,
    pub output: OutputConfig,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(input) = cfg.input.as_mut() {
            for p in input.paths.iter_mut() {
                *p = resolve(base, p);
            }
        }
        cfg.output.dir = resolve(base, &cfg.output.dir);
        Ok(cfg)
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig {
            grid: self.grid,
            zero_tol: self.samples.zero_tol,
            gap_threshold_s: self.samples.gap_threshold_s,
            min_samples: self.samples.min_samples,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("grid: {e}")))?;
        if self.fit.models.is_empty() {
            return Err(ConfigError::Invalid("fit.models is empty".into()));
        }
        if self.fit.losses.is_empty() {
            return Err(ConfigError::Invalid("fit.losses is empty".into()));
        }
        self.fit
            .fit_config(LossKind::Ece)
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("fit: {e}")))?;
        if !(self.samples.zero_tol >= 0.0 && self.samples.gap_threshold_s > 0.0) {
            return Err(ConfigError::Invalid(
                "samples: zero_tol must be non-negative and gap_threshold_s positive".into(),
            ));
        }
        if self.output.speed_unit != "km/h" || self.output.density_unit != "veh/km" {
            return Err(ConfigError::Invalid(format!(
                "output units must be km/h and veh/km, got {} and {}",
                self.output.speed_unit, self.output.density_unit
            )));
        }
        if self.input.is_some() && self.synthetic.is_some() {
            return Err(ConfigError::Invalid(
                "[input] and [synthetic] are mutually exclusive".into(),
            ));
        }
        if let Some(input) = &self.input {
            if input.paths.is_empty() {
                return Err(ConfigError::Invalid("input.paths is empty".into()));
            }
            if let Some(missing) = input.paths.iter().find(|p| !p.is_file()) {
                return Err(ConfigError::Invalid(format!(
                    "input file not found: {}",
                    missing.display()
                )));
            }
        }
        if let Some(syn) = &self.synthetic {
            syn.scenario()
                .validate_for_grid(&self.grid)
                .map_err(|e| ConfigError::Invalid(format!("synthetic: {e}")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = PipelineConfig::from_toml("", "test").unwrap();
        assert_eq!(cfg.grid, GridSpec::default());
        assert_eq!(cfg.samples.gap_threshold_s, 60.0);
        assert_eq!(cfg.fit.pairs().len(), 6);
        cfg.validate().unwrap();
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
            [synthetic]
            truth = { model = "smulders", params = { v0 = 86.8, k_crit = 65.0, k_jam = 199.9 } }
            densities = [20.0, 90.0, 30.0]
            label_noise = true
            seed = 7

            [grid]
            tm = 10.0

            [fit]
            models = ["smulders", "franklin_newell"]
            losses = ["ece"]
            starts = 4
            bounds = { v0 = [10.0, 150.0] }

            [output]
            dir = "results"
        "#;
        let cfg = PipelineConfig::from_toml(text, "test").unwrap();
        let syn = cfg.synthetic.as_ref().unwrap();
        assert_eq!(syn.scenario().densities, vec![20.0, 90.0, 30.0]);
        assert!(syn.label_noise);
        assert_eq!(cfg.grid.tm, 10.0);
        assert_eq!(cfg.grid.dt, 50.0);
        assert_eq!(
            cfg.fit.pairs(),
            vec![
                (ModelKind::Smulders, LossKind::Ece),
                (ModelKind::FranklinNewell, LossKind::Ece)
            ]
        );
        assert_eq!(cfg.fit.fit_config(LossKind::Ece).bounds.v0, [10.0, 150.0]);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("[grid]\ndtt = 3.0\n", "test").is_err());
        assert!(PipelineConfig::from_toml("[fit]\nmodels = [\"linear\"]\n", "test").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let bad = [
            "[fit]\nmodels = []\n",
            "[grid]\nts = 0.0\n",
            "[output]\nspeed_unit = \"m/s\"\n",
            "[input]\npaths = [\"/nonexistent/file.csv\"]\n",
            "[input]\npaths = []\n[synthetic]\n",
        ];
        for text in bad {
            let cfg = PipelineConfig::from_toml(text, "test").unwrap();
            assert!(cfg.validate().is_err(), "{text}");
        }
    }

    #[test]
    fn ngsim_profile_with_override() {
        let input = InputConfig {
            profile: Profile::Ngsim,
            position_unit: Some(LengthUnit::Meters),
            ..Default::default()
        };
        let s = input.schema();
        assert_eq!(s.time_column, "Frame_ID");
        assert_eq!(s.time_unit, TimeUnit::Deciseconds);
        assert_eq!(s.position_unit, LengthUnit::Meters);
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "vehicle_id,t_s,x_m\n").unwrap();
        let path = dir.path().join("pipeline.toml");
        std::fs::write(&path, "[input]\npaths = [\"a.csv\"]\n").unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.input.unwrap().paths[0], dir.path().join("a.csv"));
        assert_eq!(cfg.output.dir, dir.path().join("out"));
    }
}
