use std::f64::consts::PI;

use rand::Rng;

use super::{CorpusConfig, SILENCE};
use crate::dsp::Waveform;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub id: usize,
    /// 0 = low band, 1 = high band (only meaningful with disjoint bands).
    pub group: usize,
    pub band_hz: (f64, f64),
    pub gain: f64,
}

impl SpeakerProfile {
    /// Tone frequency of token `k` (1-based; 0 is silence).
    pub fn token_frequency(&self, token: usize, alphabet_size: usize) -> f64 {
        let (lo, hi) = self.band_hz;
        lo + (token as f64 - 0.5) / (alphabet_size - 1) as f64 * (hi - lo)
    }
}

/// Speaker profiles are a pure function of the pool size and band layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerPool {
    pub speakers: Vec<SpeakerProfile>,
}

impl SpeakerPool {
    pub fn new(cfg: &CorpusConfig) -> Self {
        let n = cfg.num_speakers_pool;
        let speakers = (0..n)
            .map(|id| {
                let group = id % 2;
                let band_hz = if cfg.disjoint_bands {
                    if group == 0 {
                        cfg.low_band_hz
                    } else {
                        cfg.high_band_hz
                    }
                } else {
                    // staggered, overlapping bands spanning low..high
                    let (lo, hi) = (cfg.low_band_hz.0, cfg.high_band_hz.1);
                    let width = (hi - lo) / 2.0;
                    let start = lo + (hi - lo - width) * id as f64 / (n - 1).max(1) as f64;
                    (start, start + width)
                };
                let gain = 0.7 + 0.3 * ((id * 7) % n) as f64 / (n - 1).max(1) as f64;
                SpeakerProfile { id, group, band_hz, gain }
            })
            .collect();
        Self { speakers }
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    /// Draws two distinct speakers; with disjoint bands they come from
    /// opposite groups.
    pub fn sample_pair<R: Rng + ?Sized>(&self, cfg: &CorpusConfig, rng: &mut R) -> [usize; 2] {
        let n = self.speakers.len();
        let first = rng.gen_range(0..n);
        let candidates: Vec<usize> = (0..n)
            .filter(|&s| s != first && (!cfg.disjoint_bands || self.speakers[s].group != self.speakers[first].group))
            .collect();
        [first, candidates[rng.gen_range(0..candidates.len())]]
    }
}

/// One dry single-speaker signal with its per-frame labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceUtterance {
    pub waveform: Waveform,
    pub tokens: Vec<usize>,
    /// One label per STFT frame of `waveform`.
    pub frame_labels: Vec<usize>,
    pub speaker_id: usize,
}

/// Renders a random token sequence for `speaker`.
pub fn render_utterance<R: Rng + ?Sized>(
    cfg: &CorpusConfig,
    speaker: &SpeakerProfile,
    rng: &mut R,
) -> SourceUtterance {
    let n = rng.gen_range(cfg.min_tokens..=cfg.max_tokens);
    let tokens: Vec<usize> = (0..n).map(|_| rng.gen_range(1..cfg.alphabet_size)).collect();
    render_tokens(cfg, speaker, &tokens, rng)
}

/// Renders `tokens` as tone bursts. A burst labelled on frames `a..a+B`
/// occupies samples `[a·hop − hop/2, (a+B)·hop − hop/2)`, i.e. exactly the
/// span between the frame-centre midpoints.
pub fn render_tokens<R: Rng + ?Sized>(
    cfg: &CorpusConfig,
    speaker: &SpeakerProfile,
    tokens: &[usize],
    rng: &mut R,
) -> SourceUtterance {
    let hop = cfg.hop;
    let lead = rng.gen_range(cfg.min_lead_frames..=cfg.max_lead_frames);
    let mut spans = Vec::with_capacity(tokens.len());
    let mut frame = lead;
    for (i, &tok) in tokens.iter().enumerate() {
        let burst = rng.gen_range(cfg.min_burst_frames..=cfg.max_burst_frames);
        spans.push((tok, frame, burst));
        frame += burst;
        if i + 1 < tokens.len() {
            frame += rng.gen_range(cfg.min_gap_frames..=cfg.max_gap_frames);
        }
    }
    // at least fft_size/hop slots so the signal spans one full frame
    let slots = (frame + cfg.tail_frames).max(cfg.fft_size / hop);
    let len = slots * hop;

    let mut samples = vec![0.0; len];
    let mut labels = vec![SILENCE; slots + 1];
    let ramp = (hop / 8).max(1);
    for &(tok, start, burst) in &spans {
        labels[start..start + burst].iter_mut().for_each(|l| *l = tok);
        let s0 = start * hop - hop / 2;
        let s1 = (start + burst) * hop - hop / 2;
        let freq = speaker.token_frequency(tok, cfg.alphabet_size);
        let amp = cfg.amplitude * speaker.gain * rng.gen_range(0.8..1.2);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let w = 2.0 * PI * freq / cfg.sample_rate as f64;
        let dur = s1 - s0;
        for (i, s) in samples[s0..s1].iter_mut().enumerate() {
            let edge = i.min(dur - 1 - i);
            let env = if edge < ramp { 0.5 - 0.5 * (PI * (edge as f64 + 0.5) / ramp as f64).cos() } else { 1.0 };
            *s = amp * env * (w * i as f64 + phase).sin();
        }
    }
    SourceUtterance {
        waveform: Waveform::new(samples, cfg.sample_rate),
        tokens: tokens.to_vec(),
        frame_labels: labels,
        speaker_id: speaker.id,
    }
}
