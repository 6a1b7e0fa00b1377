use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::corpus::Split;
use super::render::{render_utterance, SourceUtterance, SpeakerPool};
use super::rir::{convolve_truncated, synth_rir};
use super::{CorpusConfig, MixError, MixMeta, MixtureExample, SILENCE};
use crate::dsp::Waveform;

/// One impulse response per source, simulated for the same T60.
#[derive(Debug, Clone, PartialEq)]
pub struct RirPair {
    pub t60_s: f64,
    pub rirs: [Vec<f64>; 2],
}

impl RirPair {
    pub fn synth<R: Rng + ?Sized>(cfg: &CorpusConfig, t60_s: f64, rng: &mut R) -> Result<Self, MixError> {
        let a = synth_rir(t60_s, cfg.sample_rate, cfg.reverb_tail_energy, rng)?;
        let b = synth_rir(t60_s, cfg.sample_rate, cfg.reverb_tail_energy, rng)?;
        Ok(Self { t60_s, rirs: [a, b] })
    }
}

/// Globally unique seed of example `index` in `split`.
pub fn example_seed(split: Split, index: u64) -> u64 {
    ((split.code() as u64) << 48) | (index & ((1 << 48) - 1))
}

fn example_rng(corpus_seed: u64, example_seed: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&corpus_seed.to_le_bytes());
    key[8..16].copy_from_slice(&example_seed.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn pad_labels(labels: &[usize], frames: usize) -> Vec<usize> {
    let mut out = labels.to_vec();
    out.resize(frames, SILENCE);
    out
}

/// Reverberates, pads, sums and adds noise at exactly `snr_db` (relative to
/// the power of the summed reverberant speech). `snr_db = +∞` disables noise.
#[allow(clippy::too_many_arguments)]
pub fn mix_with_rirs<R: Rng + ?Sized>(
    cfg: &CorpusConfig,
    utts: [&SourceUtterance; 2],
    rirs: &RirPair,
    snr_db: f64,
    id: String,
    seed: u64,
    rng: &mut R,
) -> MixtureExample {
    let len = utts[0].waveform.len().max(utts[1].waveform.len());
    let frames = cfg.stft().frame_count(len);
    let sr = cfg.sample_rate;
    let references = [0, 1].map(|s| {
        let mut wet = convolve_truncated(&utts[s].waveform.samples, &rirs.rirs[s]);
        wet.resize(len, 0.0);
        Waveform::new(wet, sr)
    });
    let speech: Vec<f64> = references[0].samples.iter().zip(&references[1].samples).map(|(a, b)| a + b).collect();
    let noise = if snr_db.is_finite() {
        let raw: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        let p_speech = speech.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64;
        let p_raw = raw.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64;
        let gain = if p_raw > 0.0 { (p_speech / p_raw / 10f64.powf(snr_db / 10.0)).sqrt() } else { 0.0 };
        raw.into_iter().map(|v| v * gain).collect()
    } else {
        vec![0.0; len]
    };
    let mixture = Waveform::new(speech.iter().zip(&noise).map(|(s, n)| s + n).collect(), sr);
    MixtureExample {
        id,
        mixture,
        references,
        noise: Waveform::new(noise, sr),
        frame_labels: [pad_labels(&utts[0].frame_labels, frames), pad_labels(&utts[1].frame_labels, frames)],
        speakers: [utts[0].speaker_id, utts[1].speaker_id],
        meta: MixMeta { snr_db, t60_s: rirs.t60_s, seed },
    }
}

/// [`mix_with_rirs`] with a fresh RIR pair for `t60_s`.
pub fn mix<R: Rng + ?Sized>(
    cfg: &CorpusConfig,
    utts: [&SourceUtterance; 2],
    t60_s: f64,
    snr_db: f64,
    rng: &mut R,
) -> Result<MixtureExample, MixError> {
    let rirs = RirPair::synth(cfg, t60_s, rng)?;
    Ok(mix_with_rirs(cfg, utts, &rirs, snr_db, String::new(), 0, rng))
}

fn draw_snr<R: Rng + ?Sized>(cfg: &CorpusConfig, rng: &mut R) -> f64 {
    if cfg.snr_jitter_db > 0.0 && cfg.snr_db.is_finite() {
        cfg.snr_db + rng.gen_range(-cfg.snr_jitter_db..=cfg.snr_jitter_db)
    } else {
        cfg.snr_db
    }
}

fn draw_t60<R: Rng + ?Sized>(cfg: &CorpusConfig, rng: &mut R) -> f64 {
    let (lo, hi) = cfg.t60_range_s;
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Example `index` of `split`; a pure function of `(cfg, split, index)`.
pub fn generate_example(cfg: &CorpusConfig, pool: &SpeakerPool, split: Split, index: u64) -> Result<MixtureExample, MixError> {
    let seed = example_seed(split, index);
    let mut rng = example_rng(cfg.seed, seed);
    let [a, b] = pool.sample_pair(cfg, &mut rng);
    let ua = render_utterance(cfg, &pool.speakers[a], &mut rng);
    let ub = render_utterance(cfg, &pool.speakers[b], &mut rng);
    let t60 = draw_t60(cfg, &mut rng);
    let rirs = RirPair::synth(cfg, t60, &mut rng)?;
    let snr = draw_snr(cfg, &mut rng);
    let id = format!("{}_{index:06}", split.name());
    Ok(mix_with_rirs(cfg, [&ua, &ub], &rirs, snr, id, seed, &mut rng))
}

/// Endless stream of fresh speaker combinations; RIRs come from a fixed
/// pool that is simulated once.
#[derive(Debug, Clone)]
pub struct DynamicMixer {
    cfg: CorpusConfig,
    pool: SpeakerPool,
    rirs: Vec<RirPair>,
    rng: ChaCha8Rng,
    count: u64,
    seed: u64,
}

impl DynamicMixer {
    pub fn new(cfg: &CorpusConfig, seed: u64) -> Result<Self, MixError> {
        cfg.validate()?;
        let mut rng = example_rng(cfg.seed ^ 0xD1A1_5EED, seed);
        let rirs = (0..cfg.rir_pool_size)
            .map(|_| {
                let t60 = draw_t60(cfg, &mut rng);
                RirPair::synth(cfg, t60, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { cfg: cfg.clone(), pool: SpeakerPool::new(cfg), rirs, rng, count: 0, seed })
    }

    pub fn rir_pool(&self) -> &[RirPair] {
        &self.rirs
    }

    pub fn next_example(&mut self) -> MixtureExample {
        let cfg = &self.cfg;
        let rng = &mut self.rng;
        let [a, b] = self.pool.sample_pair(cfg, rng);
        let ua = render_utterance(cfg, &self.pool.speakers[a], rng);
        let ub = render_utterance(cfg, &self.pool.speakers[b], rng);
        let rirs = &self.rirs[rng.gen_range(0..self.rirs.len())];
        let snr = draw_snr(cfg, rng);
        let id = format!("dyn{}_{:06}", self.seed, self.count);
        self.count += 1;
        mix_with_rirs(cfg, [&ua, &ub], rirs, snr, id, self.seed, rng)
    }
}

impl Iterator for DynamicMixer {
    type Item = MixtureExample;

    fn next(&mut self) -> Option<MixtureExample> {
        Some(self.next_example())
    }
}

pub fn dynamic_mixing_stream(cfg: &CorpusConfig, seed: u64) -> Result<DynamicMixer, MixError> {
    DynamicMixer::new(cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixsim::render_tokens;

    fn utt(cfg: &CorpusConfig, speaker: usize, tokens: &[usize], seed: u64) -> SourceUtterance {
        let pool = SpeakerPool::new(cfg);
        render_tokens(cfg, &pool.speakers[speaker], tokens, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn infinite_snr_is_noiseless_sum() {
        let cfg = CorpusConfig::default();
        let (a, b) = (utt(&cfg, 0, &[1, 2], 1), utt(&cfg, 1, &[3], 2));
        let ex = mix(&cfg, [&a, &b], 0.3, f64::INFINITY, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for i in 0..ex.len() {
            assert_eq!(ex.mixture.samples[i], ex.references[0].samples[i] + ex.references[1].samples[i]);
        }
    }

    #[test]
    fn measured_snr_matches_target() {
        let cfg = CorpusConfig::default();
        let pool = SpeakerPool::new(&cfg);
        let ex = generate_example(&cfg, &pool, Split::Train, 7).unwrap();
        let speech: f64 = (0..ex.len()).map(|i| (ex.references[0].samples[i] + ex.references[1].samples[i]).powi(2)).sum();
        let noise: f64 = ex.noise.samples.iter().map(|v| v * v).sum();
        assert!((10.0 * (speech / noise).log10() - 25.0).abs() < 0.1);
    }

    #[test]
    fn padding_to_longer_length() {
        let cfg = CorpusConfig::default();
        let short = SourceUtterance {
            waveform: Waveform::zeros(8000, 8000),
            tokens: vec![],
            frame_labels: vec![SILENCE; cfg.stft().frame_count(8000)],
            speaker_id: 0,
        };
        let long = SourceUtterance {
            waveform: Waveform::zeros(12000, 8000),
            frame_labels: vec![SILENCE; cfg.stft().frame_count(12000)],
            speaker_id: 1,
            ..short.clone()
        };
        let ex = mix(&cfg, [&short, &long], 0.2, 25.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(ex.len(), 12000);
        assert!(ex.references.iter().all(|r| r.len() == 12000));
        assert!(ex.frame_labels.iter().all(|l| l.len() == cfg.stft().frame_count(12000)));
    }

    #[test]
    fn example_seeds_never_collide_across_splits() {
        let mut seen = std::collections::HashSet::new();
        for split in [Split::Train, Split::Dev, Split::Eval] {
            for i in 0..500 {
                assert!(seen.insert(example_seed(split, i)));
            }
        }
    }

    #[test]
    fn stream_is_deterministic() {
        let cfg = CorpusConfig { rir_pool_size: 4, ..Default::default() };
        let a: Vec<_> = dynamic_mixing_stream(&cfg, 5).unwrap().take(3).collect();
        let b: Vec<_> = dynamic_mixing_stream(&cfg, 5).unwrap().take(3).collect();
        assert_eq!(a, b);
    }
}
