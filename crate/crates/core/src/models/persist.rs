//! Self-contained model files.
//!
//! Shape fields come first (`kind`, `version`, `hidden`, `steps`,
//! `feature_dim`, `param_count`), then the signal geometry, the pipeline
//! config, the scaler ranges and the flat parameter vector. Floats carry
//! 17 significant digits so a load reproduces every parameter bit.

use std::path::Path;

use thiserror::Error;

use crate::features::{Scaler, FEATURE_DIM};
use crate::kv::{KvDoc, KvError, KvWriter};
use crate::pipeline::{PipelineConfig, PipelineError};

use super::{Classifier, Model, ModelKind};

pub const MODEL_VERSION: u32 = 1;
const CONFIG_PREFIX: &str = "config.";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("unsupported model version {0} (this build reads {MODEL_VERSION})")]
    Version(u32),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

impl From<PipelineError> for PersistError {
    fn from(e: PipelineError) -> Self {
        PersistError::Corrupt(e.to_string())
    }
}

/// Everything needed to classify a raw signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub scaler: Scaler,
    pub steps: usize,
    pub sample_count: usize,
    /// Seasonal windows actually used at `sample_count`.
    pub windows: Vec<usize>,
    pub config: PipelineConfig,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn to_text(&self) -> String {
        let mut w = KvWriter::new();
        w.comment("pd-lstm model")
            .value("kind", self.kind())
            .value("version", MODEL_VERSION)
            .value("hidden", self.model.hidden())
            .value("steps", self.steps)
            .value("feature_dim", FEATURE_DIM)
            .value("param_count", self.model.params().len())
            .value("sample_count", self.sample_count)
            .list("effective_windows", &self.windows);
        let mut config = KvWriter::new();
        self.config.write_kv(&mut config);
        w.nested(CONFIG_PREFIX, &config);
        w.floats("scaler_min", &self.scaler.mins)
            .floats("scaler_max", &self.scaler.maxs)
            .floats("params", self.model.params());
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self, PersistError> {
        let doc = KvDoc::parse(text)?;
        let version: u32 = doc.get("version")?;
        if version != MODEL_VERSION {
            return Err(PersistError::Version(version));
        }
        let kind: ModelKind = doc.get_str("kind")?.parse().map_err(PersistError::Corrupt)?;
        let hidden: usize = doc.get("hidden")?;
        let steps: usize = doc.get("steps")?;
        let feature_dim: usize = doc.get("feature_dim")?;
        if feature_dim != FEATURE_DIM {
            return Err(PersistError::Corrupt(format!("feature_dim {feature_dim}, expected {FEATURE_DIM}")));
        }
        let param_count: usize = doc.get("param_count")?;
        let params: Vec<f64> = doc.get_list_len("params", param_count)?;
        let model = Model::from_params(kind, hidden, params).map_err(|e| PersistError::Corrupt(e.to_string()))?;
        let sample_count = doc.get("sample_count")?;
        let windows = doc.get_list_len("effective_windows", 4)?;
        let mut config = PipelineConfig::default();
        config.apply_kv(&doc.section(CONFIG_PREFIX), true)?;
        config.validate()?;
        if config.model != kind {
            return Err(PersistError::Corrupt(format!(
                "kind {kind} disagrees with config model {}",
                config.model
            )));
        }
        if steps != config.effective_steps() {
            return Err(PersistError::Corrupt(format!(
                "steps {steps} disagrees with config ({})",
                config.effective_steps()
            )));
        }
        let scaler = Scaler {
            mins: doc.get_list_len("scaler_min", FEATURE_DIM)?,
            maxs: doc.get_list_len("scaler_max", FEATURE_DIM)?,
        };
        if scaler.mins.iter().zip(&scaler.maxs).any(|(lo, hi)| !(lo <= hi)) {
            return Err(PersistError::Corrupt("scaler min exceeds max".into()));
        }
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(PersistError::Corrupt("non-finite parameter".into()));
        }
        Ok(Self {
            model,
            scaler,
            steps,
            sample_count,
            windows,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        std::fs::write(path, self.to_text()).map_err(|source| PersistError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        let text = std::fs::read_to_string(path).map_err(|source| PersistError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }
}
