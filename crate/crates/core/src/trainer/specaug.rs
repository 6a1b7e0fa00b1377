use rand::Rng;

use crate::dsp::FeatureSeq;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecAugmentConfig {
    pub n_time_masks: usize,
    pub max_t: usize,
    pub n_freq_masks: usize,
    pub max_f: usize,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        Self { n_time_masks: 2, max_t: 10, n_freq_masks: 2, max_f: 8 }
    }
}

/// Masks random time and frequency blocks, filling them with the
/// per-utterance mean of each feature dimension.
pub fn spec_augment<R: Rng + ?Sized>(feats: &FeatureSeq, cfg: &SpecAugmentConfig, rng: &mut R) -> FeatureSeq {
    let mut out = feats.clone();
    if feats.frames == 0 || feats.dim == 0 {
        return out;
    }
    let means = feats.column_means();
    for _ in 0..cfg.n_time_masks {
        let width = rng.gen_range(0..=cfg.max_t).min(feats.frames);
        let start = rng.gen_range(0..=feats.frames - width);
        for t in start..start + width {
            out.data[t * feats.dim..(t + 1) * feats.dim].copy_from_slice(&means);
        }
    }
    for _ in 0..cfg.n_freq_masks {
        let width = rng.gen_range(0..=cfg.max_f).min(feats.dim);
        let start = rng.gen_range(0..=feats.dim - width);
        for t in 0..feats.frames {
            for d in start..start + width {
                out.data[t * feats.dim + d] = means[d];
            }
        }
    }
    out
}
