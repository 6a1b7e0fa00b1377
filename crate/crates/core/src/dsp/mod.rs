//! Signal processing: STFT analysis/synthesis, log filterbank features,
//! SDR-style losses and metrics, and 16-bit WAV I/O.

mod features;
mod metrics;
mod stft;
mod wav;

use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

pub use features::{features, features_graph, mel_filterbank, FeatureConfig, FeatureSeq, LOG_FLOOR};
pub use metrics::{
    magnitude_mse, magnitude_mse_with, sdr, soft_bounded_sdr_loss, soft_bounded_sdr_loss_graph, MagnitudeScale,
    DEFAULT_SDR_BOUND_DB, SDR_CAP_DB,
};
pub use stft::{istft, istft_graph, stft, stft_graph, Spectrogram, StftConfig};
pub use wav::{quantize_pcm16, read_wav, write_wav};

pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("signal too short: need at least {needed} samples, got {got}")]
    Length { needed: usize, got: usize },
    #[error("STFT configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("reference signal is all zeros; SDR is undefined")]
    ZeroReference,
    #[error("{path}: {source}")]
    Wav { path: PathBuf, source: hound::Error },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Mono signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self { samples, sample_rate }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    pub fn scaled(&self, factor: f64) -> Waveform {
        Waveform::new(self.samples.iter().map(|v| v * factor).collect(), self.sample_rate)
    }

    /// Zero-pads at the end to `len` samples (no-op if already that long).
    pub fn padded_to(&self, len: usize) -> Waveform {
        let mut samples = self.samples.clone();
        if samples.len() < len {
            samples.resize(len, 0.0);
        }
        Waveform::new(samples, self.sample_rate)
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|v| v.is_finite())
    }
}
