//! End-to-end flow: signals -> residuals -> feature sequences -> trained
//! model -> predictions, plus the residual dump format shared by the staged
//! CLI commands.
//!
//! Residual files (`PDR1`, little-endian):
//!
//! ```text
//! magic "PDR1" | u32 version = 1 | u32 record_count | u32 sample_count
//! u32 window_count = 4 | u32 windows[4]
//! per record: u32 id | u8 label (0 NON_PD, 1 PD, 255 unknown)
//!             | window_count * sample_count f64 residual samples
//! ```

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::eval::{self, EvalError, Prediction};
use crate::features::{
    build_sequence, oversample, DenoiseConfig, FeatureSequence, FeatureError, LabeledSequence, Scaler, ALLOWED_STEPS,
};
use crate::kv::{KvDoc, KvError, KvWriter};
use crate::models::persist::TrainedModel;
use crate::models::train::{self, EpochStats, Optimizer, Sample, Selection, TrainConfig};
use crate::models::{Classifier, ModelError, ModelKind};
use crate::signal_io::{Dataset, Label, SignalIoError};
use crate::stl::{multi_decompose, scale_windows, ResidualSet, StlError, DEFAULT_WINDOWS};

pub const RESIDUAL_MAGIC: [u8; 4] = *b"PDR1";
pub const RESIDUAL_VERSION: u32 = 1;
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Signal(#[from] SignalIoError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("config: {0}")]
    Config(String),
    #[error("residual file: {0}")]
    Residual(String),
    #[error("{0}")]
    Mismatch(String),
}

pub fn io_error(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Seasonal windows at the reference length of 800,000 samples.
    pub windows: Vec<usize>,
    /// Scale `windows` to the actual signal length.
    pub auto_scale_windows: bool,
    pub steps: usize,
    pub denoise: DenoiseConfig,
    pub oversample: bool,
    pub oversample_before_split: bool,
    pub model: ModelKind,
    pub hidden: usize,
    pub train: TrainConfig,
    /// Share of each class held out for testing.
    pub split_fraction: f64,
    /// Share of the training split held out when selecting by validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            windows: DEFAULT_WINDOWS.to_vec(),
            auto_scale_windows: true,
            steps: 4,
            denoise: DenoiseConfig::default(),
            oversample: true,
            oversample_before_split: false,
            model: ModelKind::Lstm,
            hidden: 16,
            train: TrainConfig::default(),
            split_fraction: 0.2,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

const CONFIG_KEYS: [&str; 23] = [
    "windows",
    "auto_scale_windows",
    "steps",
    "trim_fraction",
    "elbow",
    "oversample",
    "oversample_before_split",
    "model",
    "hidden",
    "epochs",
    "learning_rate",
    "batch_size",
    "optimizer",
    "beta1",
    "beta2",
    "epsilon",
    "init_scale",
    "clip_norm",
    "selection",
    "split_fraction",
    "validation_fraction",
    "seed",
    "threshold",
];

fn optional_float(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), crate::kv::format_f64)
}

impl PipelineConfig {
    /// Time steps the configured model actually consumes.
    pub fn effective_steps(&self) -> usize {
        if self.model.is_recurrent() {
            self.steps
        } else {
            1
        }
    }

    pub fn effective_windows(&self, sample_count: usize) -> Vec<usize> {
        if self.auto_scale_windows {
            scale_windows(&self.windows, sample_count)
        } else {
            self.windows.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.windows.len() != 4 {
            return bad(format!("expected 4 windows, got {}", self.windows.len()));
        }
        if !ALLOWED_STEPS.contains(&self.steps) {
            return bad(format!("steps must be one of 1, 2, 4, 8 (got {})", self.steps));
        }
        self.denoise.validate()?;
        if self.model.is_recurrent() && self.hidden == 0 {
            return bad("hidden size must be positive".into());
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!("split fraction {} must lie in (0, 1)", self.split_fraction));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation fraction {} must lie in (0, 1)", self.validation_fraction));
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn write_kv(&self, w: &mut KvWriter) {
        let t = &self.train;
        w.list("windows", &self.windows)
            .value("auto_scale_windows", self.auto_scale_windows)
            .value("steps", self.steps)
            .float("trim_fraction", self.denoise.trim_fraction)
            .value("elbow", self.denoise.elbow_enabled)
            .value("oversample", self.oversample)
            .value("oversample_before_split", self.oversample_before_split)
            .value("model", self.model)
            .value("hidden", self.hidden)
            .value("epochs", t.epochs)
            .float("learning_rate", t.learning_rate)
            .value("batch_size", t.batch_size)
            .value(
                "optimizer",
                match t.optimizer {
                    Optimizer::Adam => "adam",
                    Optimizer::Sgd => "sgd",
                },
            )
            .float("beta1", t.beta1)
            .float("beta2", t.beta2)
            .float("epsilon", t.epsilon)
            .value("init_scale", optional_float(t.init_scale))
            .value("clip_norm", optional_float(t.clip_norm))
            .value(
                "selection",
                match t.selection {
                    Selection::Final => "final",
                    Selection::BestValidation => "best-validation",
                },
            )
            .float("split_fraction", self.split_fraction)
            .float("validation_fraction", self.validation_fraction)
            .value("seed", self.seed)
            .float("threshold", DECISION_THRESHOLD);
    }

    pub fn to_kv_text(&self) -> String {
        let mut w = KvWriter::new();
        self.write_kv(&mut w);
        w.finish()
    }

    /// `key = value` lines for provenance echoes.
    pub fn echo_lines(&self) -> Vec<String> {
        self.to_kv_text().lines().map(str::to_string).collect()
    }

    /// Overrides fields of `self` with whatever keys `doc` carries. With
    /// `strict`, keys outside the config vocabulary are rejected.
    pub fn apply_kv(&mut self, doc: &KvDoc, strict: bool) -> Result<(), PipelineError> {
        if strict {
            if let Some(k) = doc.keys().find(|k| !CONFIG_KEYS.contains(k)) {
                return Err(PipelineError::Config(format!("unknown key '{k}'")));
            }
        }
        let cfg_err = |key: &str, v: &str| PipelineError::Config(format!("{key}: cannot parse '{v}'"));
        let opt_float = |key: &str| -> Result<Option<Option<f64>>, PipelineError> {
            match doc.raw(key) {
                None => Ok(None),
                Some("none") => Ok(Some(None)),
                Some(v) => v.parse().map(|x| Some(Some(x))).map_err(|_| cfg_err(key, v)),
            }
        };
        if doc.contains("windows") {
            self.windows = doc.get_list("windows")?;
        }
        if let Some(v) = doc.get_opt("auto_scale_windows")? {
            self.auto_scale_windows = v;
        }
        if let Some(v) = doc.get_opt("steps")? {
            self.steps = v;
        }
        if let Some(v) = doc.get_opt("trim_fraction")? {
            self.denoise.trim_fraction = v;
        }
        if let Some(v) = doc.get_opt("elbow")? {
            self.denoise.elbow_enabled = v;
        }
        if let Some(v) = doc.get_opt("oversample")? {
            self.oversample = v;
        }
        if let Some(v) = doc.get_opt("oversample_before_split")? {
            self.oversample_before_split = v;
        }
        if let Some(v) = doc.raw("model") {
            self.model = v.parse().map_err(PipelineError::Config)?;
        }
        if let Some(v) = doc.get_opt("hidden")? {
            self.hidden = v;
        }
        let t = &mut self.train;
        if let Some(v) = doc.get_opt("epochs")? {
            t.epochs = v;
        }
        if let Some(v) = doc.get_opt("learning_rate")? {
            t.learning_rate = v;
        }
        if let Some(v) = doc.get_opt("batch_size")? {
            t.batch_size = v;
        }
        match doc.raw("optimizer") {
            None => {}
            Some("adam") => t.optimizer = Optimizer::Adam,
            Some("sgd") => t.optimizer = Optimizer::Sgd,
            Some(v) => return Err(cfg_err("optimizer", v)),
        }
        if let Some(v) = doc.get_opt("beta1")? {
            t.beta1 = v;
        }
        if let Some(v) = doc.get_opt("beta2")? {
            t.beta2 = v;
        }
        if let Some(v) = doc.get_opt("epsilon")? {
            t.epsilon = v;
        }
        if let Some(v) = opt_float("init_scale")? {
            t.init_scale = v;
        }
        if let Some(v) = opt_float("clip_norm")? {
            t.clip_norm = v;
        }
        match doc.raw("selection") {
            None => {}
            Some("final") => t.selection = Selection::Final,
            Some("best-validation") => t.selection = Selection::BestValidation,
            Some(v) => return Err(cfg_err("selection", v)),
        }
        if let Some(v) = doc.get_opt("split_fraction")? {
            self.split_fraction = v;
        }
        if let Some(v) = doc.get_opt("validation_fraction")? {
            self.validation_fraction = v;
        }
        if let Some(v) = doc.get_opt("seed")? {
            self.seed = v;
        }
        if let Some(v) = doc.get_opt::<f64>("threshold")? {
            if v != DECISION_THRESHOLD {
                return Err(PipelineError::Config(format!(
                    "threshold is fixed at {DECISION_THRESHOLD}, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        cfg.apply_kv(&KvDoc::parse(text)?, true)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledResiduals {
    pub label: Option<Label>,
    pub set: ResidualSet,
}

pub fn decompose_dataset(dataset: &Dataset, windows: &[usize]) -> Result<Vec<LabeledResiduals>, PipelineError> {
    dataset
        .records()
        .par_iter()
        .map(|r| {
            Ok(LabeledResiduals {
                label: r.label,
                set: multi_decompose(r.id, &r.signal, windows)?,
            })
        })
        .collect()
}

pub fn featurize(
    residuals: &[LabeledResiduals],
    steps: usize,
    denoise: &DenoiseConfig,
) -> Result<Vec<LabeledSequence>, PipelineError> {
    residuals
        .par_iter()
        .map(|r| {
            Ok(LabeledSequence {
                id: r.set.signal_id,
                label: r.label,
                sequence: build_sequence(&r.set, steps, denoise)?,
            })
        })
        .collect()
}

/// Windows and unscaled feature sequences of every record in `dataset`.
pub fn featurize_dataset(
    dataset: &Dataset,
    config: &PipelineConfig,
) -> Result<(Vec<usize>, Vec<LabeledSequence>), PipelineError> {
    let windows = config.effective_windows(dataset.sample_count());
    let residuals = decompose_dataset(dataset, &windows)?;
    let seqs = featurize(&residuals, config.effective_steps(), &config.denoise)?;
    Ok((windows, seqs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub trained: TrainedModel,
    pub history: Vec<EpochStats>,
    pub selected_epoch: usize,
    /// Records the model was fitted on (after any oversampling).
    pub train_records: usize,
    pub test: Vec<LabeledSequence>,
}

fn labels_of(seqs: &[LabeledSequence]) -> Result<Vec<Label>, PipelineError> {
    seqs.iter()
        .map(|s| {
            s.label
                .ok_or_else(|| PipelineError::Mismatch(format!("record {} has no label; training needs labels", s.id)))
        })
        .collect()
}

fn as_samples(v: &[(FeatureSequence, f64)]) -> Vec<Sample<'_>> {
    v.iter()
        .map(|(s, t)| Sample {
            sequence: s,
            target: *t,
        })
        .collect()
}

fn pick(seqs: &[LabeledSequence], idx: &[usize]) -> Vec<LabeledSequence> {
    idx.iter().map(|&i| seqs[i].clone()).collect()
}

/// Train/test partition used by `fit`, reproducible from the config alone.
pub fn split_records(
    seqs: &[LabeledSequence],
    config: &PipelineConfig,
) -> Result<(Vec<LabeledSequence>, Vec<LabeledSequence>), PipelineError> {
    let pool: Vec<LabeledSequence> = if config.oversample && config.oversample_before_split {
        oversample(seqs, |s| s.label, config.seed)?
    } else {
        seqs.to_vec()
    };
    let labels = labels_of(&pool)?;
    let (train_idx, test_idx) = eval::split(&labels, config.split_fraction, config.seed, true)?;
    Ok((pick(&pool, &train_idx), pick(&pool, &test_idx)))
}

/// Split, oversample, scale and train on unscaled sequences.
pub fn fit(
    seqs: &[LabeledSequence],
    config: &PipelineConfig,
    sample_count: usize,
    windows: &[usize],
) -> Result<FitResult, PipelineError> {
    config.validate()?;
    let steps = config.effective_steps();
    if let Some(bad) = seqs.iter().find(|s| s.sequence.len() != steps) {
        return Err(PipelineError::Mismatch(format!(
            "record {} has {} steps, {} expects {steps}",
            bad.id,
            bad.sequence.len(),
            config.model
        )));
    }
    let (mut train_part, test) = split_records(seqs, config)?;
    if config.oversample && !config.oversample_before_split {
        train_part = oversample(&train_part, |s| s.label, config.seed)?;
    }

    let train_cfg = config.train_config();
    let (fit_part, val_part) = if train_cfg.selection == Selection::BestValidation {
        let labels = labels_of(&train_part)?;
        let (a, b) = eval::split(&labels, config.validation_fraction, config.seed ^ 1, true)?;
        (pick(&train_part, &a), pick(&train_part, &b))
    } else {
        (train_part, Vec::new())
    };
    let scaler = Scaler::fit(fit_part.iter().map(|s| &s.sequence))?;
    let scale_all = |part: &[LabeledSequence]| -> Result<Vec<(FeatureSequence, f64)>, PipelineError> {
        part.iter()
            .map(|s| {
                let target = s.label.map_or(0.0, Label::as_target);
                Ok((scaler.apply(&s.sequence)?, target))
            })
            .collect()
    };
    let fit_scaled = scale_all(&fit_part)?;
    let val_scaled = scale_all(&val_part)?;
    let fit_samples = as_samples(&fit_scaled);
    let val_samples = as_samples(&val_scaled);
    let outcome = train::train(
        config.model,
        config.hidden,
        &fit_samples,
        (!val_samples.is_empty()).then_some(val_samples.as_slice()),
        &train_cfg,
    )?;
    Ok(FitResult {
        trained: TrainedModel {
            model: outcome.model,
            scaler,
            steps,
            sample_count,
            windows: windows.to_vec(),
            config: config.clone(),
        },
        history: outcome.history,
        selected_epoch: outcome.selected_epoch,
        train_records: fit_scaled.len(),
        test,
    })
}

/// Fused flow from raw signals.
pub fn train_pipeline(dataset: &Dataset, config: &PipelineConfig) -> Result<FitResult, PipelineError> {
    config.validate()?;
    let (windows, seqs) = featurize_dataset(dataset, config)?;
    fit(&seqs, config, dataset.sample_count(), &windows)
}

pub fn predict_sequences(trained: &TrainedModel, seqs: &[LabeledSequence]) -> Result<Vec<Prediction>, PipelineError> {
    seqs.par_iter()
        .map(|s| {
            if s.sequence.len() != trained.steps {
                return Err(PipelineError::Mismatch(format!(
                    "record {} has {} steps, model expects {}",
                    s.id,
                    s.sequence.len(),
                    trained.steps
                )));
            }
            let scaled = trained.scaler.apply(&s.sequence)?;
            let probability = trained.model.probability(&scaled)?;
            Ok(Prediction {
                id: s.id,
                probability,
                predicted: Label::from_probability(probability, DECISION_THRESHOLD),
                actual: s.label,
            })
        })
        .collect()
}

/// Features of `dataset` as the model's pipeline would compute them.
pub fn featurize_for_model(trained: &TrainedModel, dataset: &Dataset) -> Result<Vec<LabeledSequence>, PipelineError> {
    if dataset.sample_count() != trained.sample_count {
        return Err(PipelineError::Mismatch(format!(
            "model was trained on {}-sample signals, input has {}",
            trained.sample_count,
            dataset.sample_count()
        )));
    }
    let residuals = decompose_dataset(dataset, &trained.windows)?;
    featurize(&residuals, trained.steps, &trained.config.denoise)
}

pub fn predict_dataset(trained: &TrainedModel, dataset: &Dataset) -> Result<Vec<Prediction>, PipelineError> {
    predict_sequences(trained, &featurize_for_model(trained, dataset)?)
}

fn label_byte(label: Option<Label>) -> u8 {
    match label {
        Some(Label::NonPd) => 0,
        Some(Label::Pd) => 1,
        None => 255,
    }
}

pub fn encode_residuals(records: &[LabeledResiduals]) -> Result<Vec<u8>, PipelineError> {
    let first = records
        .first()
        .ok_or_else(|| PipelineError::Residual("no records to write".into()))?;
    let n = first.set.sample_count();
    let windows = &first.set.windows;
    let mut out = Vec::with_capacity(32 + records.len() * (5 + 4 * n * 8));
    out.extend_from_slice(&RESIDUAL_MAGIC);
    for v in [RESIDUAL_VERSION, records.len() as u32, n as u32, windows.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for w in windows {
        out.extend_from_slice(&(*w as u32).to_le_bytes());
    }
    for (i, r) in records.iter().enumerate() {
        if &r.set.windows != windows || r.set.sample_count() != n {
            return Err(PipelineError::Residual(format!("record {i} has a different shape")));
        }
        out.extend_from_slice(&r.set.signal_id.to_le_bytes());
        out.push(label_byte(r.label));
        for residual in &r.set.residuals {
            for v in residual {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn is_residual_file(bytes: &[u8]) -> bool {
    bytes.starts_with(&RESIDUAL_MAGIC)
}

pub fn decode_residuals(bytes: &[u8]) -> Result<Vec<LabeledResiduals>, PipelineError> {
    let err = |m: String| PipelineError::Residual(m);
    let u32_at = |off: usize| -> Result<u32, PipelineError> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| err(format!("truncated at byte {off}")))
    };
    if !is_residual_file(bytes) {
        return Err(err("bad magic".into()));
    }
    let version = u32_at(4)?;
    if version != RESIDUAL_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let count = u32_at(8)? as usize;
    let n = u32_at(12)? as usize;
    let wc = u32_at(16)? as usize;
    if wc != 4 {
        return Err(err(format!("{wc} windows, expected 4")));
    }
    let windows = (0..wc).map(|k| u32_at(20 + 4 * k).map(|w| w as usize)).collect::<Result<Vec<_>, _>>()?;
    let mut off = 20 + 4 * wc;
    let record_bytes = 5 + wc * n * 8;
    let expected = off + count * record_bytes;
    if bytes.len() != expected {
        return Err(err(format!("{} bytes, header implies {expected}", bytes.len())));
    }
    let mut out = Vec::with_capacity(count);
    for index in 0..count {
        let id = u32_at(off)?;
        let label = match bytes[off + 4] {
            0 => Some(Label::NonPd),
            1 => Some(Label::Pd),
            255 => None,
            other => return Err(err(format!("record {index}: unknown label byte {other}"))),
        };
        off += 5;
        let residuals = (0..wc)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
                        off += 8;
                        v
                    })
                    .collect()
            })
            .collect();
        out.push(LabeledResiduals {
            label,
            set: ResidualSet {
                signal_id: id,
                windows: windows.clone(),
                residuals,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_kv() {
        let cfg = PipelineConfig {
            windows: vec![8, 20, 200, 2000],
            auto_scale_windows: false,
            steps: 8,
            denoise: DenoiseConfig {
                trim_fraction: 0.1,
                elbow_enabled: false,
            },
            oversample: false,
            oversample_before_split: true,
            model: ModelKind::Rnn,
            hidden: 7,
            train: TrainConfig {
                learning_rate: 0.003,
                epochs: 9,
                init_scale: Some(0.25),
                clip_norm: None,
                selection: Selection::BestValidation,
                optimizer: Optimizer::Sgd,
                ..TrainConfig::default()
            },
            split_fraction: 0.3,
            validation_fraction: 0.2,
            seed: 99,
        };
        let back = PipelineConfig::from_kv_text(&cfg.to_kv_text()).unwrap();
        assert_eq!(back, PipelineConfig { train: TrainConfig { seed: 0, ..cfg.train.clone() }, ..cfg });
    }

    #[test]
    fn partial_config_keeps_defaults_and_rejects_unknown_keys() {
        let cfg = PipelineConfig::from_kv_text("steps = 2\nmodel = fnn\n").unwrap();
        assert_eq!(cfg.steps, 2);
        assert_eq!(cfg.model, ModelKind::Fnn);
        assert_eq!(cfg.effective_steps(), 1);
        assert_eq!(cfg.hidden, 16);
        assert!(PipelineConfig::from_kv_text("stepz = 2").is_err());
        assert!(PipelineConfig::from_kv_text("steps = 3").is_err());
        assert!(PipelineConfig::from_kv_text("threshold = 0.6").is_err());
    }

    #[test]
    fn residual_file_round_trips_exactly() {
        let records = vec![
            LabeledResiduals {
                label: Some(Label::Pd),
                set: ResidualSet {
                    signal_id: 3,
                    windows: vec![4, 10, 100, 1000],
                    residuals: vec![vec![0.1, -1e-300, 3.5], vec![1.0 / 3.0; 3], vec![0.0; 3], vec![-7.25; 3]],
                },
            },
            LabeledResiduals {
                label: None,
                set: ResidualSet {
                    signal_id: 8,
                    windows: vec![4, 10, 100, 1000],
                    residuals: vec![vec![f64::MIN_POSITIVE; 3]; 4],
                },
            },
        ];
        let bytes = encode_residuals(&records).unwrap();
        assert_eq!(decode_residuals(&bytes).unwrap(), records);
        assert!(decode_residuals(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode_residuals(&bad).is_err());
    }
}
