//! Waveform datasets and their on-disk formats.
//!
//! Binary layout (`PDS1`, all integers little-endian):
//!
//! ```text
//! header   magic "PDS1" | u32 version = 1 | u32 record_count | u32 sample_count
//! record   u32 id | u8 label (0 = NON_PD, 1 = PD, 255 = unlabeled) | sample_count x i16
//! ```
//!
//! CSV layout: one record per line, `id,label,s0,s1,...` with label in
//! `{0, 1, -1}` (`-1` = unlabeled). Record indices in diagnostics are 0-based.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"PDS1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 16;
/// id (u32) + label (u8) preceding each record's samples.
pub const RECORD_OVERHEAD_BYTES: usize = 5;
pub const MIN_SAMPLE_COUNT: usize = 16;
pub const DEFAULT_FREQUENCY_HZ: f64 = 50.0;

#[derive(Debug, Error)]
pub enum SignalIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected PDS1")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("record {index}: truncated payload ({detail})")]
    Truncated { index: usize, detail: String },
    #[error("record {index}: unknown label {label}")]
    UnknownLabel { index: usize, label: String },
    #[error("record {index}: has {found} samples, expected {expected}")]
    InconsistentSampleCount {
        index: usize,
        found: usize,
        expected: usize,
    },
    #[error("record {index}: malformed field: {detail}")]
    MalformedRecord { index: usize, detail: String },
    #[error("record {index}: duplicate id {id}")]
    DuplicateId { index: usize, id: u32 },
    #[error("sample_count {0} is below the minimum of 16")]
    TooFewSamples(usize),
    #[error("trailing bytes after record {0}")]
    TrailingBytes(usize),
    #[error("empty dataset")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "NON_PD")]
    NonPd,
    #[serde(rename = "PD")]
    Pd,
}

impl Label {
    pub fn as_target(self) -> f64 {
        match self {
            Label::Pd => 1.0,
            Label::NonPd => 0.0,
        }
    }

    pub fn from_probability(p: f64, threshold: f64) -> Self {
        if p >= threshold {
            Label::Pd
        } else {
            Label::NonPd
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Pd => Label::NonPd,
            Label::NonPd => Label::Pd,
        }
    }

    fn to_byte(label: Option<Label>) -> u8 {
        match label {
            Some(Label::NonPd) => 0,
            Some(Label::Pd) => 1,
            None => 255,
        }
    }

    fn from_byte(b: u8) -> Result<Option<Label>, u8> {
        match b {
            0 => Ok(Some(Label::NonPd)),
            1 => Ok(Some(Label::Pd)),
            255 => Ok(None),
            other => Err(other),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Pd => f.write_str("PD"),
            Label::NonPd => f.write_str("NON_PD"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Binary,
    Csv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(Format::Binary),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format '{other}' (expected binary or csv)")),
        }
    }
}

/// One-cycle waveform in raw meter units.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<i16>,
    pub nominal_frequency_hz: f64,
}

impl Signal {
    pub fn new(samples: Vec<i16>) -> Self {
        Self {
            samples,
            nominal_frequency_hz: DEFAULT_FREQUENCY_HZ,
        }
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| f64::from(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSignal {
    pub id: u32,
    pub label: Option<Label>,
    pub signal: Signal,
}

/// Non-empty, homogeneous collection of signals with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<LabeledSignal>,
    sample_count: usize,
}

impl Dataset {
    pub fn new(records: Vec<LabeledSignal>) -> Result<Self, SignalIoError> {
        let first = records.first().ok_or(SignalIoError::EmptyDataset)?;
        let sample_count = first.signal.sample_count();
        if sample_count < MIN_SAMPLE_COUNT {
            return Err(SignalIoError::TooFewSamples(sample_count));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (index, rec) in records.iter().enumerate() {
            if rec.signal.sample_count() != sample_count {
                return Err(SignalIoError::InconsistentSampleCount {
                    index,
                    found: rec.signal.sample_count(),
                    expected: sample_count,
                });
            }
            if !seen.insert(rec.id) {
                return Err(SignalIoError::DuplicateId { index, id: rec.id });
            }
        }
        Ok(Self {
            records,
            sample_count,
        })
    }

    pub fn records(&self) -> &[LabeledSignal] {
        &self.records
    }

    pub fn into_records(self) -> Vec<LabeledSignal> {
        self.records
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.records
            .iter()
            .filter(|r| r.label == Some(label))
            .count()
    }
}

pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset, SignalIoError> {
    let bytes = fs::read(path).map_err(|source| SignalIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        Format::Binary => decode_binary(&bytes),
        Format::Csv => {
            let text = String::from_utf8(bytes)
                .map_err(|e| SignalIoError::MalformedHeader(format!("not UTF-8 text: {e}")))?;
            decode_csv(&text)
        }
    }
}

pub fn save_dataset(dataset: &Dataset, path: &Path, format: Format) -> Result<(), SignalIoError> {
    if dataset.is_empty() {
        return Err(SignalIoError::EmptyDataset);
    }
    let bytes = match format {
        Format::Binary => encode_binary(dataset),
        Format::Csv => encode_csv(dataset).into_bytes(),
    };
    fs::write(path, bytes).map_err(|source| SignalIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// True when the bytes start with the `PDS1` magic.
pub fn is_binary_dataset(bytes: &[u8]) -> bool {
    bytes.len() >= 4 && &bytes[..4] == MAGIC
}

pub fn encode_binary(dataset: &Dataset) -> Vec<u8> {
    let n = dataset.sample_count();
    let mut out =
        Vec::with_capacity(HEADER_BYTES + dataset.len() * (RECORD_OVERHEAD_BYTES + 2 * n));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u32).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for rec in dataset.records() {
        out.extend_from_slice(&rec.id.to_le_bytes());
        out.push(Label::to_byte(rec.label));
        for s in &rec.signal.samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<Dataset, SignalIoError> {
    if bytes.len() < HEADER_BYTES {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(SignalIoError::BadMagic);
        }
        return Err(SignalIoError::MalformedHeader(format!(
            "{} bytes, header needs {HEADER_BYTES}",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(SignalIoError::BadMagic);
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(SignalIoError::UnsupportedVersion(version));
    }
    let record_count = word(8) as usize;
    let sample_count = word(12) as usize;
    if record_count == 0 {
        return Err(SignalIoError::EmptyDataset);
    }
    if sample_count < MIN_SAMPLE_COUNT {
        return Err(SignalIoError::TooFewSamples(sample_count));
    }

    let record_len = RECORD_OVERHEAD_BYTES + 2 * sample_count;
    let mut records = Vec::with_capacity(record_count);
    let mut at = HEADER_BYTES;
    for index in 0..record_count {
        let remaining = bytes.len() - at;
        if remaining < record_len {
            return Err(SignalIoError::Truncated {
                index,
                detail: format!("{remaining} bytes left, record needs {record_len}"),
            });
        }
        let id = word(at);
        let label = Label::from_byte(bytes[at + 4]).map_err(|b| SignalIoError::UnknownLabel {
            index,
            label: b.to_string(),
        })?;
        let samples = bytes[at + RECORD_OVERHEAD_BYTES..at + record_len]
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect();
        records.push(LabeledSignal {
            id,
            label,
            signal: Signal::new(samples),
        });
        at += record_len;
    }
    if at != bytes.len() {
        return Err(SignalIoError::TrailingBytes(record_count - 1));
    }
    Dataset::new(records)
}

pub fn encode_csv(dataset: &Dataset) -> String {
    let mut out = String::new();
    for rec in dataset.records() {
        let label = match rec.label {
            Some(Label::NonPd) => "0",
            Some(Label::Pd) => "1",
            None => "-1",
        };
        out.push_str(&rec.id.to_string());
        out.push(',');
        out.push_str(label);
        for s in &rec.signal.samples {
            out.push(',');
            out.push_str(&s.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn decode_csv(text: &str) -> Result<Dataset, SignalIoError> {
    let mut records = Vec::new();
    let mut expected: Option<usize> = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let index = records.len();
        let mut fields = line.split(',').map(str::trim);
        let id_field = fields.next().unwrap_or_default();
        let id = id_field
            .parse::<u32>()
            .map_err(|_| SignalIoError::MalformedRecord {
                index,
                detail: format!("bad id '{id_field}'"),
            })?;
        let label_field = fields.next().ok_or_else(|| SignalIoError::Truncated {
            index,
            detail: "missing label".into(),
        })?;
        let label = match label_field {
            "0" => Some(Label::NonPd),
            "1" => Some(Label::Pd),
            "-1" => None,
            other => {
                return Err(SignalIoError::UnknownLabel {
                    index,
                    label: other.to_string(),
                })
            }
        };
        let samples = fields
            .map(|f| {
                f.parse::<i16>().map_err(|_| SignalIoError::MalformedRecord {
                    index,
                    detail: format!("bad sample '{f}'"),
                })
            })
            .collect::<Result<Vec<i16>, _>>()?;
        match expected {
            None => expected = Some(samples.len()),
            Some(n) if samples.len() < n => {
                return Err(SignalIoError::Truncated {
                    index,
                    detail: format!("{} of {n} samples", samples.len()),
                })
            }
            Some(n) if samples.len() != n => {
                return Err(SignalIoError::InconsistentSampleCount {
                    index,
                    found: samples.len(),
                    expected: n,
                })
            }
            Some(_) => {}
        }
        records.push(LabeledSignal {
            id,
            label,
            signal: Signal::new(samples),
        });
    }
    Dataset::new(records)
}
