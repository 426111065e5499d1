//! Synthetic one-cycle waveforms for desk-scale experiments.
//!
//! A signal is the sum of a fundamental sinusoid (exactly one cycle over the
//! record), optional harmonics, Gaussian background noise, PD-like pulse
//! bursts and isolated transient spikes, rounded and clamped to `i16`.
//! Every additive part is kept separately as ground truth.

use thiserror::Error;

use crate::kv::{KvDoc, KvError};
use crate::rng::SeededRng;
use crate::signal_io::{Dataset, Label, LabeledSignal, Signal, SignalIoError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Dataset(#[from] SignalIoError),
    #[error(transparent)]
    Kv(#[from] KvError),
}

pub const SYNTH_KEYS: [&str; 8] = [
    "fundamental_amplitude",
    "noise_sigma",
    "burst_width",
    "burst_pulses",
    "burst_amplitude",
    "transient_fraction",
    "transient_amplitude",
    "harmonics",
];

fn pair(doc: &KvDoc, key: &str) -> Result<Option<(f64, f64)>, SynthError> {
    if !doc.contains(key) {
        return Ok(None);
    }
    let v: Vec<f64> = doc.get_list_len(key, 2)?;
    Ok(Some((v[0], v[1])))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BurstSpec {
    pub start_fraction: f64,
    pub end_fraction: f64,
    pub pulse_count: usize,
    /// Pulse magnitudes are drawn uniformly from `[lo, hi]`, sign at random.
    pub pulse_amplitude_range: (f64, f64),
}

/// `ceil(fraction n)` single-sample spikes with magnitudes in `[lo, hi)` and
/// alternating signs. Positions and magnitudes follow golden-ratio and
/// sqrt(2) Weyl sequences so they line up with no seasonal period.
pub fn desk_spikes(sample_count: usize, fraction: f64, (lo, hi): (f64, f64)) -> Vec<TransientSpike> {
    let count = (sample_count as f64 * fraction).ceil() as usize;
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    (0..count)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            TransientSpike {
                position_fraction: (0.5 + k as f64 * golden).fract(),
                amplitude: sign * (lo + (hi - lo) * (k as f64 * std::f64::consts::SQRT_2).fract()),
            }
        })
        .collect()
}

impl BurstSpec {
    fn validate(&self) -> Result<(), SynthError> {
        let (lo, hi) = self.pulse_amplitude_range;
        if !(0.0..1.0).contains(&self.start_fraction)
            || !(0.0..=1.0).contains(&self.end_fraction)
            || self.start_fraction >= self.end_fraction
        {
            return Err(SynthError::InvalidSpec(format!(
                "burst window [{}, {}) must satisfy 0 <= start < end <= 1",
                self.start_fraction, self.end_fraction
            )));
        }
        if self.pulse_count == 0 {
            return Err(SynthError::InvalidSpec("burst pulse_count must be positive".into()));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(SynthError::InvalidSpec(format!(
                "pulse amplitude range ({lo}, {hi}) must satisfy 0 < lo <= hi"
            )));
        }
        Ok(())
    }

    fn window(&self, n: usize) -> (usize, usize) {
        let start = (self.start_fraction * n as f64).floor() as usize;
        let end = ((self.end_fraction * n as f64).floor() as usize).min(n);
        (start, end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientSpike {
    pub position_fraction: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub sample_count: usize,
    pub fundamental_amplitude: f64,
    /// `(order, amplitude)` pairs, order >= 2.
    pub harmonic_amplitudes: Vec<(u32, f64)>,
    pub background_noise_sigma: f64,
    pub pd_bursts: Vec<BurstSpec>,
    pub transient_spikes: Vec<TransientSpike>,
    pub seed: u64,
}

impl SynthSpec {
    /// Baseline used by the CLI and the desk-scale tests: a 1000-unit
    /// fundamental with small odd harmonics, sigma 5 noise, a transient
    /// population covering 5% of the samples and, for PD records, one dense
    /// pulse burst.
    pub fn desk_default(sample_count: usize) -> Self {
        Self {
            sample_count,
            fundamental_amplitude: 1000.0,
            harmonic_amplitudes: vec![(3, 40.0), (5, 15.0)],
            background_noise_sigma: 5.0,
            pd_bursts: vec![BurstSpec::desk_default(sample_count)],
            transient_spikes: desk_spikes(sample_count, 0.05, (300.0, 900.0)),
            seed: 0,
        }
    }

    /// Desk default for `sample_count` with any `SYNTH_KEYS` in `doc`
    /// applied. `harmonics` is a flat `[order, amplitude, ...]` list.
    pub fn desk_from_kv(sample_count: usize, doc: &KvDoc) -> Result<Self, SynthError> {
        if let Some(k) = doc.keys().find(|k| !SYNTH_KEYS.contains(k)) {
            return Err(SynthError::InvalidSpec(format!("unknown synth key '{k}'")));
        }
        let mut spec = Self::desk_default(sample_count);
        if let Some(v) = doc.get_opt("fundamental_amplitude")? {
            spec.fundamental_amplitude = v;
        }
        if let Some(v) = doc.get_opt("noise_sigma")? {
            spec.background_noise_sigma = v;
        }
        if doc.contains("harmonics") {
            let flat: Vec<f64> = doc.get_list("harmonics")?;
            if flat.len() % 2 != 0 || flat.chunks(2).any(|c| c[0].fract() != 0.0 || c[0] < 0.0) {
                return Err(SynthError::InvalidSpec("harmonics must be [order, amplitude, ...] pairs".into()));
            }
            spec.harmonic_amplitudes = flat.chunks(2).map(|c| (c[0] as u32, c[1])).collect();
        }
        let burst = &mut spec.pd_bursts[0];
        if let Some(w) = doc.get_opt::<f64>("burst_width")? {
            burst.end_fraction = burst.start_fraction + w;
        }
        if let Some(v) = doc.get_opt("burst_pulses")? {
            burst.pulse_count = v;
        }
        if let Some(v) = pair(doc, "burst_amplitude")? {
            burst.pulse_amplitude_range = v;
        }
        let fraction = doc.get_opt("transient_fraction")?.unwrap_or(0.05);
        let range = pair(doc, "transient_amplitude")?.unwrap_or((300.0, 900.0));
        if !(0.0..=1.0).contains(&fraction) {
            return Err(SynthError::InvalidSpec(format!("transient fraction {fraction} outside [0, 1]")));
        }
        spec.transient_spikes = desk_spikes(sample_count, fraction, range);
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.sample_count == 0 {
            return Err(SynthError::InvalidSpec("sample_count must be positive".into()));
        }
        if !self.fundamental_amplitude.is_finite() {
            return Err(SynthError::InvalidSpec("fundamental amplitude must be finite".into()));
        }
        for &(order, amp) in &self.harmonic_amplitudes {
            if order < 2 || !amp.is_finite() {
                return Err(SynthError::InvalidSpec(format!(
                    "harmonic ({order}, {amp}) needs order >= 2 and a finite amplitude"
                )));
            }
        }
        if !(self.background_noise_sigma >= 0.0 && self.background_noise_sigma.is_finite()) {
            return Err(SynthError::InvalidSpec("noise sigma must be finite and >= 0".into()));
        }
        for burst in &self.pd_bursts {
            burst.validate()?;
            let (start, end) = burst.window(self.sample_count);
            if burst.pulse_count > end - start {
                return Err(SynthError::InvalidSpec(format!(
                    "{} pulses do not fit in a {}-sample burst window",
                    burst.pulse_count,
                    end - start
                )));
            }
        }
        for spike in &self.transient_spikes {
            if !(0.0..1.0).contains(&spike.position_fraction) || !spike.amplitude.is_finite() {
                return Err(SynthError::InvalidSpec(format!(
                    "spike at {} with amplitude {} is out of range",
                    spike.position_fraction, spike.amplitude
                )));
            }
        }
        Ok(())
    }
}

impl BurstSpec {
    /// Dense burst over a tenth of the cycle: one pulse every ~2.7 samples,
    /// magnitudes 6 to 16 noise sigmas.
    pub fn desk_default(sample_count: usize) -> Self {
        let width = (sample_count / 10).max(1);
        Self {
            start_fraction: 0.2,
            end_fraction: 0.3,
            pulse_count: (width * 3 / 8).max(1),
            pulse_amplitude_range: (30.0, 80.0),
        }
    }
}

/// Per-sample additive breakdown of a generated signal (before rounding).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub clean: Vec<f64>,
    pub noise: Vec<f64>,
    pub pulses: Vec<f64>,
    pub spikes: Vec<f64>,
}

impl GroundTruth {
    pub fn pulse_positions(&self) -> Vec<usize> {
        self.pulses
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedSignal {
    pub signal: Signal,
    pub truth: GroundTruth,
    pub clipped_samples: usize,
}

impl GeneratedSignal {
    /// Present when more than 1% of samples hit the `i16` limits.
    pub fn clipping_warning(&self) -> Option<String> {
        let n = self.signal.sample_count();
        (self.clipped_samples * 100 > n).then(|| {
            format!(
                "{} of {} samples clamped to the i16 range",
                self.clipped_samples, n
            )
        })
    }
}

pub fn generate_signal(spec: &SynthSpec) -> Result<GeneratedSignal, SynthError> {
    spec.validate()?;
    let n = spec.sample_count;
    let mut rng = SeededRng::new(spec.seed);
    let omega = 2.0 * std::f64::consts::PI / n as f64;

    let clean: Vec<f64> = (0..n)
        .map(|t| {
            let phase = omega * t as f64;
            let harmonics: f64 = spec
                .harmonic_amplitudes
                .iter()
                .map(|&(order, amp)| amp * (f64::from(order) * phase).sin())
                .sum();
            spec.fundamental_amplitude * phase.sin() + harmonics
        })
        .collect();

    let noise: Vec<f64> = if spec.background_noise_sigma > 0.0 {
        (0..n)
            .map(|_| spec.background_noise_sigma * rng.normal())
            .collect()
    } else {
        vec![0.0; n]
    };

    let mut pulses = vec![0.0; n];
    for burst in &spec.pd_bursts {
        let (start, end) = burst.window(n);
        let (lo, hi) = burst.pulse_amplitude_range;
        for offset in rng.sample_distinct(end - start, burst.pulse_count) {
            let magnitude = rng.uniform_range(lo, hi);
            let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            pulses[start + offset] += sign * magnitude;
        }
    }

    let mut spikes = vec![0.0; n];
    for spike in &spec.transient_spikes {
        let at = ((spike.position_fraction * n as f64).floor() as usize).min(n - 1);
        spikes[at] += spike.amplitude;
    }

    let mut clipped_samples = 0;
    let samples = (0..n)
        .map(|t| {
            let v = (clean[t] + noise[t] + pulses[t] + spikes[t]).round();
            if v > f64::from(i16::MAX) || v < f64::from(i16::MIN) {
                clipped_samples += 1;
            }
            v.clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
        })
        .collect();

    Ok(GeneratedSignal {
        signal: Signal::new(samples),
        truth: GroundTruth {
            clean,
            noise,
            pulses,
            spikes,
        },
        clipped_samples,
    })
}

/// Builds a labeled dataset from a base spec.
///
/// Record `id` uses seed `seed ^ id`. PD records keep the base bursts (or the
/// desk default burst when the base spec has none), each shifted to a random
/// start inside the cycle; NON_PD records have no bursts. Every record moves
/// each base transient spike to a random position and flips its sign at
/// random. Label order is shuffled with `seed`.
pub fn generate_dataset(
    n_pd: usize,
    n_non_pd: usize,
    base_spec: &SynthSpec,
    seed: u64,
) -> Result<Dataset, SynthError> {
    base_spec.validate()?;
    let mut labels: Vec<Label> = std::iter::repeat_n(Label::Pd, n_pd)
        .chain(std::iter::repeat_n(Label::NonPd, n_non_pd))
        .collect();
    SeededRng::new(seed).shuffle(&mut labels);

    let pd_bursts = if base_spec.pd_bursts.is_empty() {
        vec![BurstSpec::desk_default(base_spec.sample_count)]
    } else {
        base_spec.pd_bursts.clone()
    };

    let records = labels
        .iter()
        .enumerate()
        .map(|(id, &label)| {
            let record_seed = seed ^ id as u64;
            // Placement draws come from a stream separate from the signal's own.
            let mut placement = SeededRng::new(record_seed.rotate_left(32) ^ 0x5851_F42D_4C95_7F2D);
            let mut spec = base_spec.clone();
            spec.seed = record_seed;
            spec.pd_bursts = match label {
                Label::NonPd => Vec::new(),
                Label::Pd => pd_bursts
                    .iter()
                    .map(|b| {
                        let width = b.end_fraction - b.start_fraction;
                        let start = placement.uniform() * (1.0 - width);
                        BurstSpec {
                            start_fraction: start,
                            end_fraction: start + width,
                            ..b.clone()
                        }
                    })
                    .collect(),
            };
            for spike in &mut spec.transient_spikes {
                spike.position_fraction = placement.uniform();
                if placement.uniform() < 0.5 {
                    spike.amplitude = -spike.amplitude;
                }
            }
            let generated = generate_signal(&spec)?;
            Ok(LabeledSignal {
                id: id as u32,
                label: Some(label),
                signal: generated.signal,
            })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok(Dataset::new(records)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(n: usize, amplitude: f64) -> SynthSpec {
        SynthSpec {
            sample_count: n,
            fundamental_amplitude: amplitude,
            harmonic_amplitudes: vec![],
            background_noise_sigma: 0.0,
            pd_bursts: vec![],
            transient_spikes: vec![],
            seed: 1,
        }
    }

    #[test]
    fn noiseless_sinusoid_peaks_at_rounded_amplitude() {
        let g = generate_signal(&quiet(4000, 1234.4)).unwrap();
        let max = g.signal.samples.iter().map(|s| s.unsigned_abs()).max().unwrap();
        assert_eq!(max, 1234);
        assert!(g.truth.pulse_positions().is_empty());
    }

    #[test]
    fn same_seed_same_signal() {
        let spec = SynthSpec::desk_default(2000);
        let a = generate_signal(&spec).unwrap();
        let b = generate_signal(&spec).unwrap();
        assert_eq!(a.signal, b.signal);
        let mut other = spec.clone();
        other.seed = 2;
        assert_ne!(generate_signal(&other).unwrap().signal, a.signal);
    }

    #[test]
    fn burst_pulses_land_inside_window() {
        let n = 5000;
        let mut spec = quiet(n, 1000.0);
        spec.pd_bursts = vec![BurstSpec {
            start_fraction: 0.2,
            end_fraction: 0.3,
            pulse_count: 10,
            pulse_amplitude_range: (500.0, 500.0),
        }];
        let g = generate_signal(&spec).unwrap();
        let positions = g.truth.pulse_positions();
        assert_eq!(positions.len(), 10);
        assert!(positions.iter().all(|&p| (1000..1500).contains(&p)));
        assert!(g.truth.pulses.iter().all(|p| *p == 0.0 || p.abs() == 500.0));
    }

    #[test]
    fn clipping_is_reported() {
        let g = generate_signal(&quiet(1000, 40_000.0)).unwrap();
        assert!(g.clipped_samples > 10);
        assert!(g.clipping_warning().is_some());
        assert_eq!(*g.signal.samples.iter().max().unwrap(), i16::MAX);
        assert!(generate_signal(&quiet(1000, 100.0)).unwrap().clipping_warning().is_none());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = quiet(100, 1.0);
        spec.pd_bursts = vec![BurstSpec {
            start_fraction: 0.5,
            end_fraction: 0.4,
            pulse_count: 1,
            pulse_amplitude_range: (1.0, 2.0),
        }];
        assert!(generate_signal(&spec).is_err());
        spec.pd_bursts[0].end_fraction = 0.51;
        spec.pd_bursts[0].pulse_count = 5;
        assert!(generate_signal(&spec).is_err(), "5 pulses in 1 sample");
        let mut spec = quiet(100, 1.0);
        spec.harmonic_amplitudes = vec![(1, 3.0)];
        assert!(generate_signal(&spec).is_err());
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let base = SynthSpec::desk_default(400);
        let ds = generate_dataset(0, 5, &base, 9).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.count_label(Label::NonPd), 5);

        let a = generate_dataset(100, 100, &base, 4).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(a.count_label(Label::Pd), 100);
        assert_eq!(a, generate_dataset(100, 100, &base, 4).unwrap());
    }

    #[test]
    fn non_pd_records_carry_no_pulses() {
        // Regenerate the ground truth of each record through the same spec path.
        let base = SynthSpec::desk_default(800);
        let ds = generate_dataset(3, 3, &base, 21).unwrap();
        for rec in ds.records() {
            let mut spec = base.clone();
            spec.seed = 21 ^ u64::from(rec.id);
            spec.pd_bursts.clear();
            spec.transient_spikes.clear();
            let smooth = generate_signal(&spec).unwrap();
            let differs = rec
                .signal
                .samples
                .iter()
                .zip(&smooth.signal.samples)
                .filter(|(a, b)| a != b)
                .count();
            let spikes = base.transient_spikes.len();
            match rec.label {
                // only the transient spikes differ
                Some(Label::NonPd) => assert!(differs <= spikes, "{differs}"),
                Some(Label::Pd) => assert!(differs > spikes + 20, "{differs}"),
                None => unreachable!(),
            }
        }
    }

    #[test]
    fn kv_overrides_the_desk_spec() {
        let doc = KvDoc::parse(
            "noise_sigma = 2\nburst_pulses = 40\nburst_amplitude = [10, 20]\ntransient_fraction = 0.01\nharmonics = [3, 7]",
        )
        .unwrap();
        let spec = SynthSpec::desk_from_kv(1000, &doc).unwrap();
        assert_eq!(spec.background_noise_sigma, 2.0);
        assert_eq!(spec.pd_bursts[0].pulse_count, 40);
        assert_eq!(spec.pd_bursts[0].pulse_amplitude_range, (10.0, 20.0));
        assert_eq!(spec.transient_spikes.len(), 10);
        assert_eq!(spec.harmonic_amplitudes, vec![(3, 7.0)]);
        assert_eq!(SynthSpec::desk_from_kv(1000, &KvDoc::default()).unwrap(), SynthSpec::desk_default(1000));
        for bad in ["colour = 3", "burst_amplitude = [1]", "harmonics = [3]", "burst_pulses = 5000"] {
            assert!(SynthSpec::desk_from_kv(1000, &KvDoc::parse(bad).unwrap()).is_err(), "{bad}");
        }
    }
}
