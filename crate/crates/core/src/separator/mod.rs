//! Mask-based two-speaker separator: a bidirectional recurrent stack and two
//! feed-forward layers predict one sigmoid mask per speaker, applied to the
//! complex mixture STFT and resynthesised with the inverse STFT.

mod train;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::Rng;
use thiserror::Error;

use crate::dsp::{istft, istft_graph, sdr, soft_bounded_sdr_loss, stft, DspError, Spectrogram, StftConfig, Waveform};
use crate::mixsim::MixtureExample;
use crate::tensor::{lstm_params, recurrent_layer_forward, Direction, ParamSet, Tape, Tensor, TensorError, Var};

pub use train::{evaluate_separator, pretrain_separator, write_sep_log, PretrainConfig, SepEpochLog, TrainSource};

/// `p[s]` is the reference index paired with estimate `s`.
pub type Permutation = [usize; 2];
pub const IDENTITY: Permutation = [0, 1];
pub const SWAPPED: Permutation = [1, 0];
/// Both speaker permutations, identity first (ties resolve to it).
pub const PERMUTATIONS: [Permutation; 2] = [IDENTITY, SWAPPED];

pub const SEP_PREFIX: &str = "sep.";
const INPUT_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SepError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("separator configuration: {0}")]
    Config(String),
    #[error("training diverged in epoch {epoch} on example {example}: {detail}")]
    Divergence { epoch: usize, example: String, detail: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeparatorConfig {
    pub stft: StftConfig,
    pub recurrent_layers: usize,
    /// Units per direction.
    pub hidden: usize,
    pub ff_hidden: usize,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        Self { stft: StftConfig::default(), recurrent_layers: 3, hidden: 64, ff_hidden: 128 }
    }
}

impl SeparatorConfig {
    pub fn bins(&self) -> usize {
        self.stft.bins()
    }

    pub fn validate(&self) -> Result<(), SepError> {
        self.stft.validate()?;
        if self.hidden == 0 || self.ff_hidden == 0 {
            return Err(SepError::Config("hidden and ff_hidden must be positive".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        [
            ("fft_size", self.stft.fft_size),
            ("hop", self.stft.hop),
            ("recurrent_layers", self.recurrent_layers),
            ("hidden", self.hidden),
            ("ff_hidden", self.ff_hidden),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v: usize = value.parse().map_err(|_| format!("{key}: cannot parse `{value}`"))?;
        match key {
            "fft_size" => self.stft.fft_size = v,
            "hop" => self.stft.hop = v,
            "recurrent_layers" => self.recurrent_layers = v,
            "hidden" => self.hidden = v,
            "ff_hidden" => self.ff_hidden = v,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

fn layer_name(i: usize) -> String {
    format!("{SEP_PREFIX}blstm{i}")
}

/// Inserts freshly initialised separator weights (all under `sep.`).
pub fn init_separator<R: Rng + ?Sized>(params: &mut ParamSet, cfg: &SeparatorConfig, rng: &mut R) {
    let mut input = cfg.bins();
    for i in 0..cfg.recurrent_layers {
        lstm_params(params, &layer_name(i), input, cfg.hidden, Direction::Bidirectional, rng);
        input = 2 * cfg.hidden;
    }
    let out = 2 * cfg.bins();
    params.insert("sep.ff0.w", Tensor::uniform_init(vec![input, cfg.ff_hidden], input, rng).requiring_grad());
    params.insert("sep.ff0.b", Tensor::uniform_init(vec![cfg.ff_hidden], input, rng).requiring_grad());
    params.insert("sep.ff1.w", Tensor::uniform_init(vec![cfg.ff_hidden, out], cfg.ff_hidden, rng).requiring_grad());
    params.insert("sep.ff1.b", Tensor::uniform_init(vec![out], cfg.ff_hidden, rng).requiring_grad());
}

/// Per-bin mean/variance normalised `ln(1e-8 + |X|)`, `frames × bins`.
pub fn separator_input(spec: &Spectrogram) -> Tensor {
    let (frames, bins) = (spec.frames, spec.bins);
    let mut data: Vec<f64> = spec.magnitude().into_iter().map(|m| (INPUT_FLOOR + m).ln()).collect();
    for k in 0..bins {
        let mean = (0..frames).map(|t| data[t * bins + k]).sum::<f64>() / frames as f64;
        let var = (0..frames).map(|t| (data[t * bins + k] - mean).powi(2)).sum::<f64>() / frames as f64;
        let inv = 1.0 / var.sqrt().max(1e-5);
        for t in 0..frames {
            data[t * bins + k] = (data[t * bins + k] - mean) * inv;
        }
    }
    Tensor::matrix(frames, bins, data).expect("consistent shape")
}

/// Separator nodes recorded on a tape.
#[derive(Debug, Clone)]
pub struct SeparatorGraph {
    pub mixture_spec: Spectrogram,
    /// `frames × bins` masks.
    pub masks: [Var; 2],
    /// `frames × 2·bins` `[re ∥ im]` estimates.
    pub specs: [Var; 2],
    /// 1-D estimates of mixture length.
    pub waveforms: [Var; 2],
}

pub fn separator_graph(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &SeparatorConfig,
    mixture: &Waveform,
) -> Result<SeparatorGraph, SepError> {
    let mixture_spec = stft(mixture, &cfg.stft)?;
    let bins = cfg.bins();
    let mut h = tape.constant(separator_input(&mixture_spec));
    for i in 0..cfg.recurrent_layers {
        h = recurrent_layer_forward(tape, params, &layer_name(i), h, Direction::Bidirectional)?;
    }
    let (w0, b0) = (tape.param(params, "sep.ff0.w")?, tape.param(params, "sep.ff0.b")?);
    let a0 = tape.affine(h, w0, b0)?;
    let h = tape.relu(a0)?;
    let (w1, b1) = (tape.param(params, "sep.ff1.w")?, tape.param(params, "sep.ff1.b")?);
    let a1 = tape.affine(h, w1, b1)?;
    let m = tape.sigmoid(a1)?;
    let x = tape.constant(mixture_spec.to_tensor());
    let mut masks = [m; 2];
    let mut specs = [m; 2];
    let mut waveforms = [m; 2];
    for s in 0..2 {
        masks[s] = tape.slice_cols(m, s * bins, bins)?;
        let doubled = tape.concat_cols(&[masks[s], masks[s]])?;
        specs[s] = tape.mul(doubled, x)?;
        waveforms[s] = istft_graph(tape, specs[s], &cfg.stft, mixture.len())?;
    }
    Ok(SeparatorGraph { mixture_spec, masks, specs, waveforms })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    pub masks: [Vec<f64>; 2],
    pub est_specs: [Spectrogram; 2],
    pub est_waveforms: [Waveform; 2],
}

/// Applies the separator to `mixture`; deterministic and side-effect free.
pub fn separate(params: &ParamSet, cfg: &SeparatorConfig, mixture: &Waveform) -> Result<SeparationResult, SepError> {
    let mut tape = Tape::new();
    let g = separator_graph(&mut tape, params, cfg, mixture)?;
    let masks = g.masks.map(|m| tape.value(m).data().to_vec());
    let est_specs =
        [0, 1].map(|s| g.mixture_spec.masked(&masks[s]));
    let est_waveforms = [0, 1].map(|s| Waveform::new(tape.value(g.waveforms[s]).data().to_vec(), mixture.sample_rate));
    Ok(SeparationResult { masks, est_specs, est_waveforms })
}

/// Resynthesises `mask ⊙ spec` for externally supplied masks.
pub fn apply_masks(spec: &Spectrogram, masks: &[Vec<f64>; 2], len: usize) -> Result<[Waveform; 2], SepError> {
    let a = istft(&spec.masked(&masks[0]), &spec.config, len)?;
    let b = istft(&spec.masked(&masks[1]), &spec.config, len)?;
    Ok([a, b])
}

/// Mean per-speaker loss under `perm`.
pub fn permuted_loss(est: &[Waveform; 2], refs: &[Waveform; 2], perm: Permutation, bound_db: f64) -> Result<f64, DspError> {
    let a = soft_bounded_sdr_loss(&refs[perm[0]], &est[0], bound_db)?;
    let b = soft_bounded_sdr_loss(&refs[perm[1]], &est[1], bound_db)?;
    Ok(0.5 * (a + b))
}

/// Utterance-level PIT: minimum over both permutations of the mean
/// soft-bounded SDR loss, with the minimising permutation.
pub fn pit_loss(est: &[Waveform; 2], refs: &[Waveform; 2], bound_db: f64) -> Result<(f64, Permutation), DspError> {
    let identity = permuted_loss(est, refs, IDENTITY, bound_db)?;
    let swapped = permuted_loss(est, refs, SWAPPED, bound_db)?;
    Ok(if swapped < identity { (swapped, SWAPPED) } else { (identity, IDENTITY) })
}

/// [`pit_loss`] on tape nodes; the permutation is chosen on the forward
/// values and the returned node differentiates the chosen pairing.
pub fn pit_loss_graph(
    tape: &mut Tape,
    est: [Var; 2],
    refs: &[Waveform; 2],
    bound_db: f64,
) -> Result<(Var, Permutation), DspError> {
    let sr = refs[0].sample_rate;
    let values = est.map(|v| Waveform::new(tape.value(v).data().to_vec(), sr));
    let (_, perm) = pit_loss(&values, refs, bound_db)?;
    let a = crate::dsp::soft_bounded_sdr_loss_graph(tape, &refs[perm[0]].samples, est[0], bound_db)?;
    let b = crate::dsp::soft_bounded_sdr_loss_graph(tape, &refs[perm[1]].samples, est[1], bound_db)?;
    let sum = tape.add(a, b)?;
    Ok((tape.scale(sum, 0.5)?, perm))
}

/// Per-speaker `sdr(ref_s, est_{π(s)}) − sdr(ref_s, mixture)` under the
/// PIT-optimal permutation.
pub fn sdr_improvement(example: &MixtureExample, result: &SeparationResult, bound_db: f64) -> Result<[f64; 2], DspError> {
    let (_, perm) = pit_loss(&result.est_waveforms, &example.references, bound_db)?;
    let mut out = [0.0; 2];
    for s in 0..2 {
        let r = &example.references[perm[s]];
        out[perm[s]] = sdr(r, &result.est_waveforms[s])? - sdr(r, &example.mixture)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> SeparatorConfig {
        SeparatorConfig { stft: StftConfig { fft_size: 16, hop: 8 }, recurrent_layers: 1, hidden: 3, ff_hidden: 4 }
    }

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 8000)
    }

    fn forced(bias: f64) -> ParamSet {
        let cfg = tiny();
        let mut p = ParamSet::new();
        init_separator(&mut p, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        p.get_mut("sep.ff1.w").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        p.get_mut("sep.ff1.b").unwrap().data_mut().iter_mut().for_each(|v| *v = bias);
        p
    }

    #[test]
    fn unit_masks_reconstruct_mixture() {
        let x = noise(80, 1);
        let r = separate(&forced(50.0), &tiny(), &x).unwrap();
        for w in &r.est_waveforms {
            let err = w.samples.iter().zip(&x.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-10, "{err}");
        }
    }

    #[test]
    fn zero_masks_give_silence() {
        let r = separate(&forced(-800.0), &tiny(), &noise(80, 2)).unwrap();
        assert!(r.est_waveforms.iter().all(|w| w.samples.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn masks_are_independent_sigmoids() {
        let cfg = tiny();
        let mut p = ParamSet::new();
        init_separator(&mut p, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let r = separate(&p, &cfg, &noise(80, 3)).unwrap();
        assert!(r.masks.iter().flatten().all(|m| (0.0..=1.0).contains(m)));
        let off = r.masks[0].iter().zip(&r.masks[1]).map(|(a, b)| (a + b - 1.0).abs()).fold(0.0, f64::max);
        assert!(off > 1e-3);
    }

    #[test]
    fn swapped_perfect_estimates() {
        let refs = [noise(64, 4), noise(64, 5)];
        let est = [refs[1].clone(), refs[0].clone()];
        let (loss, perm) = pit_loss(&est, &refs, 30.0).unwrap();
        assert_eq!(perm, SWAPPED);
        assert!((loss + 30.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_equal_norm_tie_returns_identity() {
        let r0 = Waveform::new(vec![1.0, 0.0, 1.0, 0.0], 8000);
        let r1 = Waveform::new(vec![0.0, 1.0, 0.0, 1.0], 8000);
        let refs = [r0.clone(), r1];
        let (loss, perm) = pit_loss(&[r0.clone(), r0], &refs, 30.0).unwrap();
        assert_eq!(perm, IDENTITY);
        // one perfect (−30 dB floor) and one orthogonal estimate with ‖e‖² = 2‖r‖²
        let expect = 0.5 * (-30.0 + -10.0 * (1.0 / (2.0 + 1e-3f64)).log10());
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn graph_loss_matches_plain() {
        let refs = [noise(40, 6), noise(40, 7)];
        let est = [noise(40, 8), noise(40, 9)];
        let plain = pit_loss(&est, &refs, 30.0).unwrap();
        let mut tape = Tape::new();
        let vars = est.clone().map(|w| tape.leaf(Tensor::new(vec![40], w.samples).unwrap()));
        let (v, perm) = pit_loss_graph(&mut tape, vars, &refs, 30.0).unwrap();
        assert_eq!(perm, plain.1);
        assert!((tape.value(v).item() - plain.0).abs() < 1e-12);
    }

    #[test]
    fn kv_round_trip() {
        let cfg = tiny();
        let mut back = SeparatorConfig::default();
        for (k, v) in cfg.to_kv() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, cfg);
    }
}
