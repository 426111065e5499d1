//! Residual denoising, peak features and the fused per-step feature vector.
//!
//! Per residual: zero the largest `trim_fraction` of samples (transients),
//! then zero the background below the elbow of the sorted magnitude curve.
//! Peaks of what survives are bucketed into `K` equal time steps and each
//! step gets three features: peak count `n`, sum of absolute peak heights
//! `S` and the sample standard deviation `SD` of absolute peak heights.
//! The four residuals are fused into one 12-vector per step, ordered
//! `n` x 4 windows, then `S` x 4, then `SD` x 4.

use std::fmt::Write as _;

use thiserror::Error;

use crate::rng::SeededRng;
use crate::signal_io::Label;
use crate::stl::ResidualSet;

pub const FEATURE_DIM: usize = 12;
pub const WINDOW_COUNT: usize = 4;
pub const ALLOWED_STEPS: [usize; 4] = [1, 2, 4, 8];

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("time steps must be one of 1, 2, 4, 8 (got {0})")]
    InvalidSteps(usize),
    #[error("trim fraction {0} must lie in [0, 0.5]")]
    InvalidTrim(f64),
    #[error("residual set has {found} residuals, expected 4")]
    ResidualCount { found: usize },
    #[error("scaler fitted on no data")]
    EmptyScalerFit,
    #[error("scaler expects {expected}-dimensional steps, got {found}")]
    ScalerDimension { expected: usize, found: usize },
    #[error("oversampling needs both classes (PD {pd}, NON_PD {non_pd})")]
    SingleClass { pd: usize, non_pd: usize },
    #[error("record at index {0} is unlabeled")]
    Unlabeled(usize),
    #[error("feature csv line {line}: {detail}")]
    Csv { line: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseConfig {
    pub trim_fraction: f64,
    pub elbow_enabled: bool,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            trim_fraction: 0.05,
            elbow_enabled: true,
        }
    }
}

impl DenoiseConfig {
    /// Leaves residuals untouched.
    pub fn disabled() -> Self {
        Self {
            trim_fraction: 0.0,
            elbow_enabled: false,
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(0.0..=0.5).contains(&self.trim_fraction) {
            return Err(FeatureError::InvalidTrim(self.trim_fraction));
        }
        Ok(())
    }
}

/// Absolute-value cuts recorded by [`denoise_with_memo`].
///
/// Re-applying them zeroes `|v| > transient_cut` and `|v| <= background_cut`;
/// on the denoised output that changes nothing.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DenoiseMemo {
    pub transient_cut: Option<f64>,
    pub background_cut: Option<f64>,
}

impl DenoiseMemo {
    pub fn apply(&self, series: &[f64]) -> Vec<f64> {
        series
            .iter()
            .map(|&v| {
                let a = v.abs();
                let transient = self.transient_cut.is_some_and(|c| a > c);
                let background = self.background_cut.is_some_and(|c| a <= c);
                if transient || background {
                    0.0
                } else {
                    v
                }
            })
            .collect()
    }
}

/// Index of the elbow on a descending curve: the point farthest from the
/// chord joining the first and last points, after scaling both axes to
/// `[0, 1]`. Ties go to the smallest index. `None` for curves with fewer
/// than three points, a flat curve, or a straight one.
pub fn elbow_index(sorted_desc: &[f64]) -> Option<usize> {
    let m = sorted_desc.len();
    if m < 3 {
        return None;
    }
    let hi = sorted_desc[0];
    let lo = sorted_desc[m - 1];
    let range = hi - lo;
    if range <= 0.0 {
        return None;
    }
    let span = (m - 1) as f64;
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in sorted_desc.iter().enumerate() {
        let x = i as f64 / span;
        let y = (v - lo) / range;
        // The chord runs from (0, 1) to (1, 0).
        let d = (x + y - 1.0).abs() / std::f64::consts::SQRT_2;
        if best.is_none_or(|(_, b)| d > b) {
            best = Some((i, d));
        }
    }
    best.filter(|&(_, d)| d > 1e-12).map(|(i, _)| i)
}

pub fn denoise(residual: &[f64], config: &DenoiseConfig) -> Vec<f64> {
    denoise_with_memo(residual, config).0
}

pub fn denoise_with_memo(residual: &[f64], config: &DenoiseConfig) -> (Vec<f64>, DenoiseMemo) {
    let n = residual.len();
    let mut out = residual.to_vec();
    let mut memo = DenoiseMemo::default();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| residual[b].abs().total_cmp(&residual[a].abs()).then(a.cmp(&b)));

    let trim = ((config.trim_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let trim = trim.min(n);
    if trim > 0 {
        for &i in &order[..trim] {
            out[i] = 0.0;
        }
        memo.transient_cut = Some(residual[order[trim - 1]].abs());
    }

    if config.elbow_enabled {
        let remaining: Vec<f64> = order[trim..].iter().map(|&i| residual[i].abs()).collect();
        if let Some(e) = elbow_index(&remaining) {
            let cut = remaining[e];
            for v in out.iter_mut() {
                if v.abs() <= cut {
                    *v = 0.0;
                }
            }
            memo.background_cut = Some(cut);
        }
    }
    (out, memo)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub position: usize,
    pub value: f64,
}

/// Nonzero samples whose magnitude is strictly above both neighbours'
/// (the series ends count as minus infinity). A flat top yields its
/// leftmost sample.
pub fn detect_peaks(series: &[f64]) -> Vec<Peak> {
    let n = series.len();
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        let a = series[i].abs();
        if a == 0.0 {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < n && series[j + 1].abs() == a {
            j += 1;
        }
        let left = if i == 0 { f64::NEG_INFINITY } else { series[i - 1].abs() };
        let right = if j + 1 == n { f64::NEG_INFINITY } else { series[j + 1].abs() };
        if a > left && a > right {
            peaks.push(Peak {
                position: i,
                value: series[i],
            });
        }
        i = j + 1;
    }
    peaks
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepFeatures {
    pub count: usize,
    pub sum_abs: f64,
    pub sd_abs: f64,
}

pub fn step_features(peak_values: &[f64]) -> StepFeatures {
    let n = peak_values.len();
    let sum_abs: f64 = peak_values.iter().map(|r| r.abs()).sum();
    let sd_abs = if n < 2 {
        0.0
    } else {
        let mean = sum_abs / n as f64;
        let ss: f64 = peak_values.iter().map(|r| (r.abs() - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    };
    StepFeatures {
        count: n,
        sum_abs,
        sd_abs,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub steps: Vec<[f64; FEATURE_DIM]>,
    pub scaled: bool,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Step index of `position` when `n` samples are cut into `k` steps; the
/// last step absorbs any remainder.
pub fn step_of(position: usize, n: usize, k: usize) -> usize {
    (position / (n / k)).min(k - 1)
}

pub fn build_sequence(
    residual_set: &ResidualSet,
    k: usize,
    denoise_config: &DenoiseConfig,
) -> Result<FeatureSequence, FeatureError> {
    if !ALLOWED_STEPS.contains(&k) {
        return Err(FeatureError::InvalidSteps(k));
    }
    if residual_set.residuals.len() != WINDOW_COUNT {
        return Err(FeatureError::ResidualCount {
            found: residual_set.residuals.len(),
        });
    }
    denoise_config.validate()?;
    let n = residual_set.sample_count();
    let mut steps = vec![[0.0; FEATURE_DIM]; k];
    for (w, residual) in residual_set.residuals.iter().enumerate() {
        let cleaned = denoise(residual, denoise_config);
        let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); k];
        for peak in detect_peaks(&cleaned) {
            buckets[step_of(peak.position, n, k)].push(peak.value);
        }
        for (step, bucket) in steps.iter_mut().zip(&buckets) {
            let f = step_features(bucket);
            step[w] = f.count as f64;
            step[WINDOW_COUNT + w] = f.sum_abs;
            step[2 * WINDOW_COUNT + w] = f.sd_abs;
        }
    }
    Ok(FeatureSequence {
        steps,
        scaled: false,
    })
}

/// Min-max ranges per feature dimension, pooled over steps and records.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl Scaler {
    pub fn fit<'a, I>(sequences: I) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = &'a FeatureSequence>,
    {
        let mut mins = vec![f64::INFINITY; FEATURE_DIM];
        let mut maxs = vec![f64::NEG_INFINITY; FEATURE_DIM];
        let mut seen = false;
        for seq in sequences {
            for step in &seq.steps {
                seen = true;
                for d in 0..FEATURE_DIM {
                    mins[d] = mins[d].min(step[d]);
                    maxs[d] = maxs[d].max(step[d]);
                }
            }
        }
        if !seen {
            return Err(FeatureError::EmptyScalerFit);
        }
        Ok(Self { mins, maxs })
    }

    pub fn scale_value(&self, d: usize, x: f64) -> f64 {
        let range = self.maxs[d] - self.mins[d];
        if range > 0.0 {
            ((x - self.mins[d]) / range).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn apply(&self, sequence: &FeatureSequence) -> Result<FeatureSequence, FeatureError> {
        if self.mins.len() != FEATURE_DIM || self.maxs.len() != FEATURE_DIM {
            return Err(FeatureError::ScalerDimension {
                expected: self.mins.len(),
                found: FEATURE_DIM,
            });
        }
        let steps = sequence
            .steps
            .iter()
            .map(|step| {
                let mut out = [0.0; FEATURE_DIM];
                for d in 0..FEATURE_DIM {
                    out[d] = self.scale_value(d, step[d]);
                }
                out
            })
            .collect();
        Ok(FeatureSequence {
            steps,
            scaled: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub id: u32,
    pub label: Option<Label>,
    pub sequence: FeatureSequence,
}

/// Oversampling factor `round(majority / minority)`, at least 1.
pub fn oversample_factor(pd: usize, non_pd: usize) -> usize {
    let (minority, majority) = if pd <= non_pd { (pd, non_pd) } else { (non_pd, pd) };
    ((majority as f64 / minority as f64).round() as usize).max(1)
}

/// Duplicates every minority-class record `factor` times in total and
/// shuffles the result with `seed`.
pub fn oversample<T: Clone>(
    records: &[T],
    label_of: impl Fn(&T) -> Option<Label>,
    seed: u64,
) -> Result<Vec<T>, FeatureError> {
    let mut pd = 0;
    let mut non_pd = 0;
    for (i, r) in records.iter().enumerate() {
        match label_of(r) {
            Some(Label::Pd) => pd += 1,
            Some(Label::NonPd) => non_pd += 1,
            None => return Err(FeatureError::Unlabeled(i)),
        }
    }
    if pd == 0 || non_pd == 0 {
        return Err(FeatureError::SingleClass { pd, non_pd });
    }
    let factor = oversample_factor(pd, non_pd);
    let minority = if pd <= non_pd { Label::Pd } else { Label::NonPd };
    let mut out = Vec::with_capacity(records.len() + (factor - 1) * pd.min(non_pd));
    for r in records {
        let copies = if label_of(r) == Some(minority) { factor } else { 1 };
        out.extend(std::iter::repeat_n(r, copies).cloned());
    }
    SeededRng::new(seed).shuffle(&mut out);
    Ok(out)
}

fn label_code(label: Option<Label>) -> &'static str {
    match label {
        Some(Label::Pd) => "1",
        Some(Label::NonPd) => "0",
        None => "-1",
    }
}

/// One row per (record, step): `id,label,step,` then the 12 features.
/// `comments` are written first as `# ` lines.
pub fn features_to_csv(windows: &[usize], records: &[LabeledSequence], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("id,label,step");
    for prefix in ["n", "S", "SD"] {
        for w in windows {
            let _ = write!(out, ",{prefix}_{w}");
        }
    }
    out.push('\n');
    for rec in records {
        for (k, step) in rec.sequence.steps.iter().enumerate() {
            let _ = write!(out, "{},{},{k}", rec.id, label_code(rec.label));
            for v in step {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
    }
    out
}

/// Parsed feature CSV: windows from the header, records in file order and
/// the `# ` comment lines.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub windows: Vec<usize>,
    pub records: Vec<LabeledSequence>,
    pub comments: Vec<String>,
}

pub fn features_from_csv(text: &str) -> Result<FeatureTable, FeatureError> {
    let err = |line: usize, detail: String| FeatureError::Csv { line, detail };
    let mut comments = Vec::new();
    let mut windows: Option<Vec<usize>> = None;
    let mut records: Vec<LabeledSequence> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        if let Some(c) = raw.strip_prefix('#') {
            comments.push(c.trim_start().to_string());
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        let Some(ws) = &windows else {
            if fields.len() != 3 + FEATURE_DIM || fields[..3] != ["id", "label", "step"] {
                return Err(err(line, "expected header id,label,step,<12 features>".into()));
            }
            let parsed = fields[3..3 + WINDOW_COUNT]
                .iter()
                .map(|f| {
                    f.strip_prefix("n_")
                        .and_then(|w| w.parse::<usize>().ok())
                        .ok_or_else(|| err(line, format!("bad header column '{f}'")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            windows = Some(parsed);
            continue;
        };
        let _ = ws;
        if fields.len() != 3 + FEATURE_DIM {
            return Err(err(line, format!("{} fields, expected {}", fields.len(), 3 + FEATURE_DIM)));
        }
        let id: u32 = fields[0].parse().map_err(|_| err(line, format!("bad id '{}'", fields[0])))?;
        let label = match fields[1] {
            "1" => Some(Label::Pd),
            "0" => Some(Label::NonPd),
            "-1" => None,
            other => return Err(err(line, format!("bad label '{other}'"))),
        };
        let step: usize = fields[2].parse().map_err(|_| err(line, format!("bad step '{}'", fields[2])))?;
        let mut values = [0.0; FEATURE_DIM];
        for (d, f) in fields[3..].iter().enumerate() {
            values[d] = f.parse().map_err(|_| err(line, format!("bad value '{f}'")))?;
        }
        match records.last_mut() {
            Some(last) if last.id == id && step == last.sequence.steps.len() => {
                if last.label != label {
                    return Err(err(line, format!("label changes within record {id}")));
                }
                last.sequence.steps.push(values);
            }
            _ if step == 0 => records.push(LabeledSequence {
                id,
                label,
                sequence: FeatureSequence {
                    steps: vec![values],
                    scaled: false,
                },
            }),
            _ => return Err(err(line, format!("step {step} out of order for record {id}"))),
        }
    }
    let windows = windows.ok_or_else(|| err(0, "missing header".into()))?;
    if let Some(first) = records.first() {
        let k = first.sequence.len();
        if let Some(bad) = records.iter().find(|r| r.sequence.len() != k) {
            return Err(err(0, format!("record {} has {} steps, expected {k}", bad.id, bad.sequence.len())));
        }
    }
    Ok(FeatureTable {
        windows,
        records,
        comments,
    })
}
