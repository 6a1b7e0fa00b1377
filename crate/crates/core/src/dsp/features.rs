use super::stft::{stft, stft_graph, StftConfig};
use super::{DspError, Waveform};
use crate::tensor::{Tape, Tensor, Var};

/// Additive floor inside the log.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub num_bands: usize,
    pub sample_rate: u32,
    pub f_min: f64,
    /// Upper band edge; `None` means Nyquist.
    pub f_max: Option<f64>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { num_bands: 40, sample_rate: 8000, f_min: 0.0, f_max: None }
    }
}

/// `frames × dim` log filterbank energies.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeq {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureSeq {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.frames, self.dim, self.data.clone()).expect("consistent shape")
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Self { frames: t.rows(), dim: t.cols(), data: t.data().to_vec() }
    }

    /// Per-dimension mean over frames.
    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.dim];
        for t in 0..self.frames {
            means.iter_mut().zip(self.row(t)).for_each(|(m, v)| *m += v);
        }
        means.iter_mut().for_each(|m| *m /= self.frames.max(1) as f64);
        means
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular auditory-scale filterbank as a `bins × bands` matrix.
pub fn mel_filterbank(stft_cfg: &StftConfig, cfg: &FeatureConfig) -> Tensor {
    let bins = stft_cfg.bins();
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max.unwrap_or(nyquist)));
    let edges: Vec<f64> = (0..cfg.num_bands + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.num_bands + 1) as f64))
        .collect();
    let mut fb = vec![0.0; bins * cfg.num_bands];
    for k in 0..bins {
        let f = k as f64 * cfg.sample_rate as f64 / stft_cfg.fft_size as f64;
        for b in 0..cfg.num_bands {
            let (l, c, r) = (edges[b], edges[b + 1], edges[b + 2]);
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            fb[k * cfg.num_bands + b] = w;
        }
    }
    Tensor::matrix(bins, cfg.num_bands, fb).expect("consistent shape")
}

/// `log(LOG_FLOOR + filterbank · |STFT|²)` per frame.
pub fn features(w: &Waveform, stft_cfg: &StftConfig, cfg: &FeatureConfig) -> Result<FeatureSeq, DspError> {
    let spec = stft(w, stft_cfg)?;
    let fb = mel_filterbank(stft_cfg, cfg);
    let power = spec.power();
    let (bins, dim) = (spec.bins, cfg.num_bands);
    let mut data = vec![0.0; spec.frames * dim];
    for t in 0..spec.frames {
        let out = &mut data[t * dim..(t + 1) * dim];
        for k in 0..bins {
            let p = power[t * bins + k];
            if p == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(fb.row(k)) {
                *o += p * w;
            }
        }
        out.iter_mut().for_each(|v| *v = (LOG_FLOOR + *v).ln());
    }
    Ok(FeatureSeq { frames: spec.frames, dim, data })
}

/// Differentiable [`features`] of a 1-D signal node; output `frames × bands`.
pub fn features_graph(tape: &mut Tape, signal: Var, stft_cfg: &StftConfig, cfg: &FeatureConfig) -> Result<Var, DspError> {
    let bins = stft_cfg.bins();
    let spec = stft_graph(tape, signal, stft_cfg)?;
    let re = tape.slice_cols(spec, 0, bins)?;
    let im = tape.slice_cols(spec, bins, bins)?;
    let re2 = tape.square(re)?;
    let im2 = tape.square(im)?;
    let power = tape.add(re2, im2)?;
    let fb = tape.constant(mel_filterbank(stft_cfg, cfg));
    let energy = tape.matmul(power, fb)?;
    let floored = tape.add_scalar(energy, LOG_FLOOR)?;
    Ok(tape.log(floored)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        Waveform::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(), 8000)
    }

    #[test]
    fn zero_signal_gives_log_floor() {
        let f = features(&Waveform::zeros(1000, 8000), &StftConfig::default(), &FeatureConfig::default()).unwrap();
        assert_eq!(f.dim, 40);
        assert!(f.data.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn frame_count_matches_stft() {
        let cfg = StftConfig::default();
        let f = features(&noise(3000), &cfg, &FeatureConfig::default()).unwrap();
        assert_eq!(f.frames, stft(&noise(3000), &cfg).unwrap().frames);
    }

    #[test]
    fn scaling_by_ten_shifts_by_two_ln_ten() {
        let cfg = StftConfig::default();
        let x = noise(4000);
        let a = features(&x, &cfg, &FeatureConfig::default()).unwrap();
        let b = features(&x.scaled(10.0), &cfg, &FeatureConfig::default()).unwrap();
        let shift = 2.0 * 10f64.ln();
        for (u, v) in a.data.iter().zip(&b.data) {
            // exact up to the LOG_FLOOR contribution, negligible at these energies
            assert!((v - u - shift).abs() < 1e-6, "{u} {v}");
        }
    }

    #[test]
    fn every_band_sees_some_bin() {
        let fb = mel_filterbank(&StftConfig::default(), &FeatureConfig::default());
        for b in 0..40 {
            assert!((0..129).any(|k| fb.at(k, b) > 0.0), "band {b} is empty");
        }
    }

    #[test]
    fn graph_matches_plain_features() {
        let cfg = StftConfig::default();
        let x = noise(1500);
        let plain = features(&x, &cfg, &FeatureConfig::default()).unwrap();
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::new(vec![x.len()], x.samples.clone()).unwrap());
        let f = features_graph(&mut tape, s, &cfg, &FeatureConfig::default()).unwrap();
        for (a, b) in plain.data.iter().zip(tape.value(f).data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
