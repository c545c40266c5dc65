//! Config-driven pipeline from trajectory files to fitted fundamental diagrams.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod stages;

use std::path::PathBuf;

use nlkv_core::fitting::LossKind;
use nlkv_core::models::ModelKind;

use config::{InputConfig, PipelineConfig, Profile};

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub inputs: Vec<PathBuf>,
    pub profile: Option<Profile>,
    pub out: Option<PathBuf>,
    /// Fit seed, and the scenario seed for synthetic runs.
    pub seed: Option<u64>,
    pub models: Option<Vec<ModelKind>>,
    pub losses: Option<Vec<LossKind>>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        if !self.inputs.is_empty() {
            let input = cfg.input.get_or_insert_with(InputConfig::default);
            input.paths = self.inputs.clone();
            cfg.synthetic = None;
        }
        if let Some(profile) = self.profile {
            cfg.input.get_or_insert_with(InputConfig::default).profile = profile;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.fit.seed = seed;
            if let Some(syn) = cfg.synthetic.as_mut() {
                syn.seed = seed;
            }
        }
        if let Some(models) = &self.models {
            cfg.fit.models = models.clone();
        }
        if let Some(losses) = &self.losses {
            cfg.fit.losses = losses.clone();
        }
    }
}
