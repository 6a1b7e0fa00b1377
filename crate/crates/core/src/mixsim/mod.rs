//! Synthetic two-speaker corpus with exact frame labels.
//!
//! Each "speaker" owns a frequency band; a token `k` is a tone burst at a
//! fixed relative position inside that band, so the frame labels are known
//! by construction. Utterances are reverberated with exponentially decaying
//! noise impulse responses, end-padded to a common length, summed and
//! corrupted with white noise at an exact SNR.

mod corpus;
mod mix;
mod render;
mod rir;

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::dsp::{DspError, StftConfig, Waveform};

pub use corpus::{read_corpus, write_corpus, write_corpus_data, Corpus, Split};
pub use mix::{dynamic_mixing_stream, example_seed, generate_example, mix, mix_with_rirs, DynamicMixer, RirPair};
pub use render::{render_tokens, render_utterance, SourceUtterance, SpeakerPool, SpeakerProfile};
pub use rir::{convolve_truncated, rir_envelope, rir_length, synth_rir, DECAY_60DB};

/// Label id reserved for silence.
pub const SILENCE: usize = 0;

#[derive(Debug, Error)]
pub enum MixError {
    #[error("corpus configuration: {0}")]
    Config(String),
    #[error("T60 must be positive, got {0}")]
    InvalidT60(f64),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {detail}")]
    Parse { path: PathBuf, line: usize, detail: String },
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub num_speakers_pool: usize,
    /// Label count including silence.
    pub alphabet_size: usize,
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    /// Streams are drawn from opposite band groups (low vs high).
    pub disjoint_bands: bool,
    pub low_band_hz: (f64, f64),
    pub high_band_hz: (f64, f64),
    pub min_burst_frames: usize,
    pub max_burst_frames: usize,
    pub min_gap_frames: usize,
    pub max_gap_frames: usize,
    pub min_lead_frames: usize,
    pub max_lead_frames: usize,
    pub tail_frames: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub amplitude: f64,
    pub t60_range_s: (f64, f64),
    pub snr_db: f64,
    /// Uniform jitter half-width around `snr_db`.
    pub snr_jitter_db: f64,
    /// Energy of the reverberant tail relative to the unit direct path.
    pub reverb_tail_energy: f64,
    pub rir_pool_size: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_speakers_pool: 8,
            alphabet_size: 12,
            sample_rate: 8000,
            fft_size: 256,
            hop: 128,
            disjoint_bands: true,
            low_band_hz: (250.0, 1750.0),
            high_band_hz: (2150.0, 3650.0),
            min_burst_frames: 5,
            max_burst_frames: 7,
            min_gap_frames: 1,
            max_gap_frames: 3,
            min_lead_frames: 1,
            max_lead_frames: 6,
            tail_frames: 2,
            min_tokens: 2,
            max_tokens: 5,
            amplitude: 0.2,
            t60_range_s: (0.2, 0.5),
            snr_db: 25.0,
            snr_jitter_db: 0.0,
            reverb_tail_energy: 0.5,
            rir_pool_size: 32,
            seed: 0,
        }
    }
}

fn parse_pair(v: &str) -> Option<(f64, f64)> {
    let (a, b) = v.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

impl CorpusConfig {
    pub fn stft(&self) -> StftConfig {
        StftConfig { fft_size: self.fft_size, hop: self.hop }
    }

    pub fn validate(&self) -> Result<(), MixError> {
        let mut problems = Vec::new();
        if self.alphabet_size < 3 {
            problems.push(format!("alphabet_size must be >= 3, got {}", self.alphabet_size));
        }
        if self.num_speakers_pool < 2 {
            problems.push("num_speakers_pool must be >= 2".to_string());
        }
        if !(self.t60_range_s.0 > 0.0 && self.t60_range_s.1 >= self.t60_range_s.0) {
            problems.push(format!("t60_range_s must be positive and ordered, got {:?}", self.t60_range_s));
        }
        if self.min_burst_frames == 0 || self.max_burst_frames < self.min_burst_frames {
            problems.push("burst frame range must be non-empty and positive".into());
        }
        if self.min_gap_frames == 0 || self.max_gap_frames < self.min_gap_frames {
            problems.push("gap frame range must be non-empty and positive".into());
        }
        if self.min_lead_frames == 0 || self.max_lead_frames < self.min_lead_frames {
            problems.push("lead frame range must be non-empty and positive".into());
        }
        if self.max_tokens < self.min_tokens {
            problems.push("token count range is empty".into());
        }
        for (name, (lo, hi)) in [("low_band_hz", self.low_band_hz), ("high_band_hz", self.high_band_hz)] {
            if !(lo > 0.0 && hi > lo && hi < self.sample_rate as f64 / 2.0) {
                problems.push(format!("{name} must lie strictly inside (0, Nyquist), got ({lo}, {hi})"));
            }
        }
        if self.reverb_tail_energy < 0.0 || self.amplitude <= 0.0 || self.rir_pool_size == 0 {
            problems.push("reverb_tail_energy >= 0, amplitude > 0 and rir_pool_size > 0 required".into());
        }
        if let Err(e) = self.stft().validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(MixError::Config(problems.join("; ")))
        }
    }

    /// Key/value form used by config files and the on-disk corpus header.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let pair = |p: (f64, f64)| format!("{},{}", p.0, p.1);
        [
            ("num_speakers_pool", self.num_speakers_pool.to_string()),
            ("alphabet_size", self.alphabet_size.to_string()),
            ("sample_rate", self.sample_rate.to_string()),
            ("fft_size", self.fft_size.to_string()),
            ("hop", self.hop.to_string()),
            ("disjoint_bands", self.disjoint_bands.to_string()),
            ("low_band_hz", pair(self.low_band_hz)),
            ("high_band_hz", pair(self.high_band_hz)),
            ("min_burst_frames", self.min_burst_frames.to_string()),
            ("max_burst_frames", self.max_burst_frames.to_string()),
            ("min_gap_frames", self.min_gap_frames.to_string()),
            ("max_gap_frames", self.max_gap_frames.to_string()),
            ("min_lead_frames", self.min_lead_frames.to_string()),
            ("max_lead_frames", self.max_lead_frames.to_string()),
            ("tail_frames", self.tail_frames.to_string()),
            ("min_tokens", self.min_tokens.to_string()),
            ("max_tokens", self.max_tokens.to_string()),
            ("amplitude", self.amplitude.to_string()),
            ("t60_range_s", pair(self.t60_range_s)),
            ("snr_db", self.snr_db.to_string()),
            ("snr_jitter_db", self.snr_jitter_db.to_string()),
            ("reverb_tail_energy", self.reverb_tail_energy.to_string()),
            ("rir_pool_size", self.rir_pool_size.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Applies one `key = value` setting. Returns a message for unknown keys
    /// or unparsable values.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("{key}: cannot parse `{v}`"))
        }
        let pair = |v: &str| parse_pair(v).ok_or_else(|| format!("{key}: expected `a,b`, got `{v}`"));
        match key {
            "num_speakers_pool" => self.num_speakers_pool = num(key, value)?,
            "alphabet_size" => self.alphabet_size = num(key, value)?,
            "sample_rate" => self.sample_rate = num(key, value)?,
            "fft_size" => self.fft_size = num(key, value)?,
            "hop" => self.hop = num(key, value)?,
            "disjoint_bands" => self.disjoint_bands = num(key, value)?,
            "low_band_hz" => self.low_band_hz = pair(value)?,
            "high_band_hz" => self.high_band_hz = pair(value)?,
            "min_burst_frames" => self.min_burst_frames = num(key, value)?,
            "max_burst_frames" => self.max_burst_frames = num(key, value)?,
            "min_gap_frames" => self.min_gap_frames = num(key, value)?,
            "max_gap_frames" => self.max_gap_frames = num(key, value)?,
            "min_lead_frames" => self.min_lead_frames = num(key, value)?,
            "max_lead_frames" => self.max_lead_frames = num(key, value)?,
            "tail_frames" => self.tail_frames = num(key, value)?,
            "min_tokens" => self.min_tokens = num(key, value)?,
            "max_tokens" => self.max_tokens = num(key, value)?,
            "amplitude" => self.amplitude = num(key, value)?,
            "t60_range_s" => self.t60_range_s = pair(value)?,
            "snr_db" => self.snr_db = num(key, value)?,
            "snr_jitter_db" => self.snr_jitter_db = num(key, value)?,
            "reverb_tail_energy" => self.reverb_tail_energy = num(key, value)?,
            "rir_pool_size" => self.rir_pool_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixMeta {
    pub snr_db: f64,
    pub t60_s: f64,
    pub seed: u64,
}

/// One two-speaker training/evaluation item.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample {
    pub id: String,
    pub mixture: Waveform,
    /// Reverberant per-speaker signals before noise, padded to mixture length.
    pub references: [Waveform; 2],
    pub noise: Waveform,
    /// Silence-padded frame labels, one sequence per speaker.
    pub frame_labels: [Vec<usize>; 2],
    pub speakers: [usize; 2],
    pub meta: MixMeta,
}

impl MixtureExample {
    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.frame_labels[0].len()
    }

    /// The example as it reads back from disk: 16-bit audio with the noise
    /// recomputed from the quantised signals.
    pub fn quantized(&self) -> MixtureExample {
        let q = crate::dsp::quantize_pcm16;
        let mixture = q(&self.mixture);
        let references = [q(&self.references[0]), q(&self.references[1])];
        let noise = residual_noise(&mixture, &references);
        MixtureExample { mixture, references, noise, ..self.clone() }
    }
}

pub(crate) fn residual_noise(mixture: &Waveform, refs: &[Waveform; 2]) -> Waveform {
    Waveform::new(
        mixture
            .samples
            .iter()
            .zip(&refs[0].samples)
            .zip(&refs[1].samples)
            .map(|((m, a), b)| m - a - b)
            .collect(),
        mixture.sample_rate,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let cfg = CorpusConfig { seed: 99, snr_db: f64::INFINITY, low_band_hz: (300.5, 1200.25), ..Default::default() };
        let mut back = CorpusConfig::default();
        for (k, v) in cfg.to_kv() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation_lists_all_problems() {
        let cfg = CorpusConfig { alphabet_size: 2, t60_range_s: (-0.1, 0.5), ..Default::default() };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("alphabet_size") && msg.contains("t60_range_s"), "{msg}");
        assert!(CorpusConfig::default().validate().is_ok());
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(CorpusConfig::default().set("bogus", "1").is_err());
    }
}
