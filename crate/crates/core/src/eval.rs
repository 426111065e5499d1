//! Splits, confusion counts, per-class and macro metrics, and the experiment
//! grids (time steps, denoise/oversample ablation, classifier comparison).
//!
//! PD is the positive class. For NON_PD the roles swap: precision is
//! `TN / (TN + FN)` and recall `TN / (TN + FP)`. Zero denominators give 0
//! and are listed in `Metrics::degenerate`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::features::DenoiseConfig;
use crate::models::ModelKind;
use crate::pipeline::{decompose_dataset, featurize, fit, predict_sequences, PipelineConfig, PipelineError};
use crate::rng::SeededRng;
use crate::signal_io::{Dataset, Label};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("test fraction {0} must lie in (0, 1)")]
    Fraction(f64),
    #[error("stratified split needs both classes (PD {pd}, NON_PD {non_pd})")]
    SingleClass { pd: usize, non_pd: usize },
    #[error("{predicted} predictions but {actual} labels")]
    LengthMismatch { predicted: usize, actual: usize },
    #[error("no labeled predictions to score")]
    Empty,
}

/// Indices of the train and test parts, each sorted ascending. With
/// `stratified`, each class contributes `round(fraction * class_count)`
/// test records; otherwise the whole set is shuffled once.
pub fn split(labels: &[Label], test_fraction: f64, seed: u64, stratified: bool) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(EvalError::Fraction(test_fraction));
    }
    let mut rng = SeededRng::new(seed);
    let mut test = Vec::new();
    if stratified {
        let pd: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Pd).collect();
        let non_pd: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::NonPd).collect();
        if pd.is_empty() || non_pd.is_empty() {
            return Err(EvalError::SingleClass {
                pd: pd.len(),
                non_pd: non_pd.len(),
            });
        }
        for mut class in [pd, non_pd] {
            let take = (test_fraction * class.len() as f64).round() as usize;
            rng.shuffle(&mut class);
            test.extend_from_slice(&class[..take]);
        }
    } else {
        let mut all: Vec<usize> = (0..labels.len()).collect();
        rng.shuffle(&mut all);
        let take = (test_fraction * labels.len() as f64).round() as usize;
        test.extend_from_slice(&all[..take]);
    }
    test.sort_unstable();
    let mut in_test = vec![false; labels.len()];
    for &i in &test {
        in_test[i] = true;
    }
    let train = (0..labels.len()).filter(|&i| !in_test[i]).collect();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The same counts with PD and NON_PD exchanged.
    pub fn flipped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

pub fn confusion(predicted: &[Label], actual: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if predicted.len() != actual.len() {
        return Err(EvalError::LengthMismatch {
            predicted: predicted.len(),
            actual: actual.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (p, a) in predicted.iter().zip(actual) {
        match (p, a) {
            (Label::Pd, Label::Pd) => cm.tp += 1,
            (Label::Pd, Label::NonPd) => cm.fp += 1,
            (Label::NonPd, Label::NonPd) => cm.tn += 1,
            (Label::NonPd, Label::Pd) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub pd: ClassMetrics,
    pub non_pd: ClassMetrics,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Mean of the two class F1 scores.
    pub macro_f1: f64,
    /// Metrics that hit a zero denominator and were set to 0.
    pub degenerate: Vec<String>,
}

fn ratio(num: usize, den: usize, name: &str, degenerate: &mut Vec<String>) -> f64 {
    if den == 0 {
        degenerate.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64, name: &str, degenerate: &mut Vec<String>) -> f64 {
    if p + r == 0.0 {
        degenerate.push(name.to_string());
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::Empty);
    }
    let mut deg = Vec::new();
    let pd_p = ratio(cm.tp, cm.tp + cm.fp, "pd.precision", &mut deg);
    let pd_r = ratio(cm.tp, cm.tp + cm.fn_, "pd.recall", &mut deg);
    let pd_f = f1(pd_p, pd_r, "pd.f1", &mut deg);
    let np_p = ratio(cm.tn, cm.tn + cm.fn_, "non_pd.precision", &mut deg);
    let np_r = ratio(cm.tn, cm.tn + cm.fp, "non_pd.recall", &mut deg);
    let np_f = f1(np_p, np_r, "non_pd.f1", &mut deg);
    Ok(Metrics {
        pd: ClassMetrics {
            precision: pd_p,
            recall: pd_r,
            f1: pd_f,
        },
        non_pd: ClassMetrics {
            precision: np_p,
            recall: np_r,
            f1: np_f,
        },
        macro_precision: (pd_p + np_p) / 2.0,
        macro_recall: (pd_r + np_r) / 2.0,
        macro_f1: (pd_f + np_f) / 2.0,
        degenerate: deg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub id: u32,
    pub probability: f64,
    pub predicted: Label,
    pub actual: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Axis {
    pub name: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: BTreeMap<String, String>,
    pub axis: Vec<Axis>,
    pub subset: String,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub predictions: Vec<Prediction>,
}

fn config_echo(config: &PipelineConfig) -> BTreeMap<String, String> {
    config
        .echo_lines()
        .iter()
        .filter_map(|l| l.split_once(" = ").map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

/// Scores the labeled predictions; unlabeled ones stay in the list but do
/// not count.
pub fn report(
    config: &PipelineConfig,
    axis: Vec<Axis>,
    subset: &str,
    predictions: Vec<Prediction>,
) -> Result<EvalReport, EvalError> {
    let (p, a): (Vec<Label>, Vec<Label>) = predictions
        .iter()
        .filter_map(|x| x.actual.map(|a| (x.predicted, a)))
        .unzip();
    let cm = confusion(&p, &a)?;
    let m = metrics(&cm)?;
    Ok(EvalReport {
        config: config_echo(config),
        axis,
        subset: subset.to_string(),
        confusion: cm,
        metrics: m,
        predictions,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grid {
    TimeSteps,
    Ablation,
    Classifiers,
}

impl Grid {
    pub fn figure_file(self) -> &'static str {
        match self {
            Grid::TimeSteps => "fig11.csv",
            Grid::Ablation => "fig12.csv",
            Grid::Classifiers => "fig13.csv",
        }
    }

    /// One config per cell, in grid order, with its axis labels.
    pub fn cells(self, base: &PipelineConfig) -> Vec<(Vec<Axis>, PipelineConfig)> {
        let axis = |pairs: &[(&str, String)]| -> Vec<Axis> {
            pairs
                .iter()
                .map(|(n, v)| Axis {
                    name: n.to_string(),
                    value: v.clone(),
                })
                .collect()
        };
        match self {
            Grid::TimeSteps => [2, 4, 8]
                .iter()
                .map(|&k| {
                    let cfg = PipelineConfig {
                        steps: k,
                        ..base.clone()
                    };
                    (axis(&[("steps", k.to_string())]), cfg)
                })
                .collect(),
            Grid::Ablation => [(true, true), (true, false), (false, true), (false, false)]
                .iter()
                .map(|&(denoise, over)| {
                    let cfg = PipelineConfig {
                        denoise: if denoise { base.denoise } else { DenoiseConfig::disabled() },
                        oversample: over,
                        ..base.clone()
                    };
                    let on = |b: bool| if b { "on" } else { "off" }.to_string();
                    (axis(&[("denoise", on(denoise)), ("oversample", on(over))]), cfg)
                })
                .collect(),
            Grid::Classifiers => ModelKind::ALL
                .iter()
                .map(|&kind| {
                    let cfg = PipelineConfig {
                        model: kind,
                        ..base.clone()
                    };
                    (axis(&[("model", kind.to_string())]), cfg)
                })
                .collect(),
        }
    }
}

impl std::str::FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "time-steps" => Ok(Grid::TimeSteps),
            "ablation" => Ok(Grid::Ablation),
            "classifiers" => Ok(Grid::Classifiers),
            other => Err(format!("unknown grid '{other}' (time-steps, ablation, classifiers)")),
        }
    }
}

/// Trains and scores every cell of `grid` on the shared split of `dataset`.
/// Residuals are computed once and reused by every cell.
pub fn run_experiment(grid: Grid, dataset: &Dataset, base: &PipelineConfig) -> Result<Vec<EvalReport>, PipelineError> {
    base.validate()?;
    let windows = base.effective_windows(dataset.sample_count());
    let residuals = decompose_dataset(dataset, &windows)?;
    grid.cells(base)
        .into_par_iter()
        .map(|(axis, cfg)| {
            cfg.validate()?;
            let seqs = featurize(&residuals, cfg.effective_steps(), &cfg.denoise)?;
            let fitted = fit(&seqs, &cfg, dataset.sample_count(), &windows)?;
            let preds = predict_sequences(&fitted.trained, &fitted.test)?;
            Ok(report(&cfg, axis, "test", preds)?)
        })
        .collect()
}

/// Figure data: axis columns, then per-class and macro metrics.
pub fn summary_csv(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    if let Some(first) = reports.first() {
        for a in &first.axis {
            let _ = write!(out, "{},", a.name);
        }
    }
    out.push_str("pd_precision,pd_recall,pd_f1,non_pd_precision,non_pd_recall,non_pd_f1,macro_precision,macro_recall,macro_f1\n");
    for r in reports {
        for a in &r.axis {
            let _ = write!(out, "{},", a.value);
        }
        let m = &r.metrics;
        let vals = [
            m.pd.precision,
            m.pd.recall,
            m.pd.f1,
            m.non_pd.precision,
            m.non_pd.recall,
            m.non_pd.f1,
            m.macro_precision,
            m.macro_recall,
            m.macro_f1,
        ];
        let row: Vec<String> = vals.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
