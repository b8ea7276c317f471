//! Experiment configuration: a single JSON document, with every field
//! overridable from the command line.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use ecog_core::fbcsp::FbcspConfig;
use ecog_core::preprocess::PreprocessConfig;
use ecog_core::rlda::DEFAULT_LAMBDA_GRID;
use ecog_convnet::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rlda,
    Fbcsp,
    Convnet,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Rlda => "rlda",
            Method::Fbcsp => "fbcsp",
            Method::Convnet => "convnet",
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Method>, String> {
        let mut out = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            out.push(match tok {
                "rlda" => Method::Rlda,
                "fbcsp" => Method::Fbcsp,
                "convnet" => Method::Convnet,
                other => return Err(format!("unknown method '{other}'")),
            });
        }
        if out.is_empty() {
            return Err("no methods given".into());
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RldaSettings {
    pub bin_ms: f64,
    pub lambda_grid: Vec<f64>,
}

impl Default for RldaSettings {
    fn default() -> Self {
        RldaSettings {
            bin_ms: 40.0,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
        }
    }
}

fn default_classes() -> u8 {
    2
}

fn default_methods() -> Vec<Method> {
    vec![Method::Rlda, Method::Fbcsp, Method::Convnet]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    #[serde(default = "default_classes")]
    pub classes: u8,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub rlda: RldaSettings,
    #[serde(default)]
    pub fbcsp: FbcspConfig,
    #[serde(default)]
    pub convnet: TrainConfig,
}

impl ExperimentConfig {
    pub fn new(dataset: PathBuf, out: PathBuf) -> Self {
        ExperimentConfig {
            dataset,
            out,
            classes: default_classes(),
            methods: default_methods(),
            seed: 0,
            preprocess: PreprocessConfig::default(),
            rlda: RldaSettings::default(),
            fbcsp: FbcspConfig::default(),
            convnet: TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.classes == 2 || self.classes == 3) {
            return Err(format!("classes must be 2 or 3, got {}", self.classes));
        }
        if self.methods.is_empty() {
            return Err("at least one method must be selected".into());
        }
        Ok(())
    }
}
