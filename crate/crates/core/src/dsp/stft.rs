use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{DspError, Waveform};
use crate::tensor::{CustomOp, Tape, Tensor, Var};

/// Frame layout and the sqrt-Hann analysis/synthesis window pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { fft_size: 256, hop: 128 }
    }
}

impl StftConfig {
    pub fn new(fft_size: usize, hop: usize) -> Result<Self, DspError> {
        let cfg = Self { fft_size, hop };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.fft_size < 4 || !self.fft_size.is_multiple_of(2) {
            return Err(DspError::Config(format!("fft_size {} must be even and >= 4", self.fft_size)));
        }
        if self.hop == 0 || !self.fft_size.is_multiple_of(self.hop) || self.fft_size / self.hop < 2 {
            return Err(DspError::Config(format!(
                "hop {} must divide fft_size {} at least twice",
                self.hop, self.fft_size
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames produced for a signal of `len` samples: the signal is padded
    /// by `fft_size/2` at the front so frame `t` is centred on sample `t·hop`.
    pub fn frame_count(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    fn padded_len(&self, frames: usize) -> usize {
        (frames - 1) * self.hop + self.fft_size
    }

    /// Periodic sqrt-Hann window.
    pub fn window(&self) -> Vec<f64> {
        let n = self.fft_size as f64;
        (0..self.fft_size).map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos()).sqrt()).collect()
    }

    /// Summed squared window over overlapping frames (the synthesis
    /// normaliser), on the padded time axis.
    fn window_energy(&self, frames: usize) -> Vec<f64> {
        let w = self.window();
        let mut env = vec![0.0; self.padded_len(frames)];
        for t in 0..frames {
            for (n, wv) in w.iter().enumerate() {
                env[t * self.hop + n] += wv * wv;
            }
        }
        env
    }
}

/// Complex STFT, `frames × bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn zeros(frames: usize, config: StftConfig, sample_rate: u32) -> Self {
        let bins = config.bins();
        Self { frames, bins, re: vec![0.0; frames * bins], im: vec![0.0; frames * bins], config, sample_rate }
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.re.iter().zip(&self.im).map(|(r, i)| r.hypot(*i)).collect()
    }

    pub fn power(&self) -> Vec<f64> {
        self.re.iter().zip(&self.im).map(|(r, i)| r * r + i * i).collect()
    }

    /// Multiplies every cell by a real mask of the same shape.
    pub fn masked(&self, mask: &[f64]) -> Spectrogram {
        assert_eq!(mask.len(), self.re.len());
        Spectrogram {
            re: self.re.iter().zip(mask).map(|(v, m)| v * m).collect(),
            im: self.im.iter().zip(mask).map(|(v, m)| v * m).collect(),
            ..self.clone()
        }
    }

    pub fn scaled(&self, factor: f64) -> Spectrogram {
        Spectrogram {
            re: self.re.iter().map(|v| v * factor).collect(),
            im: self.im.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// `[re ∥ im]` as a `frames × 2·bins` tensor (the layout used on the tape).
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.re.len() * 2);
        for t in 0..self.frames {
            data.extend_from_slice(&self.re[t * self.bins..(t + 1) * self.bins]);
            data.extend_from_slice(&self.im[t * self.bins..(t + 1) * self.bins]);
        }
        Tensor::matrix(self.frames, 2 * self.bins, data).expect("consistent shape")
    }

    pub fn from_tensor(t: &Tensor, config: StftConfig, sample_rate: u32) -> Result<Self, DspError> {
        let bins = config.bins();
        if t.cols() != 2 * bins {
            return Err(DspError::Shape(format!("expected {} columns, got {}", 2 * bins, t.cols())));
        }
        let frames = t.rows();
        let mut re = Vec::with_capacity(frames * bins);
        let mut im = Vec::with_capacity(frames * bins);
        for r in 0..frames {
            let row = t.row(r);
            re.extend_from_slice(&row[..bins]);
            im.extend_from_slice(&row[bins..]);
        }
        Ok(Spectrogram { frames, bins, re, im, config, sample_rate })
    }
}

type Plans = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

thread_local! {
    static PLANS: RefCell<HashMap<usize, Plans>> = RefCell::new(HashMap::new());
}

fn plans(n: usize) -> Plans {
    PLANS.with(|p| {
        p.borrow_mut()
            .entry(n)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
            })
            .clone()
    })
}

fn analyze(samples: &[f64], cfg: &StftConfig) -> Result<(Vec<f64>, Vec<f64>, usize), DspError> {
    cfg.validate()?;
    if samples.len() < cfg.fft_size {
        return Err(DspError::Length { needed: cfg.fft_size, got: samples.len() });
    }
    let (n, bins) = (cfg.fft_size, cfg.bins());
    let frames = cfg.frame_count(samples.len());
    let mut padded = vec![0.0; cfg.padded_len(frames)];
    padded[n / 2..n / 2 + samples.len()].copy_from_slice(samples);
    let window = cfg.window();
    let (fwd, _) = plans(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut re = Vec::with_capacity(frames * bins);
    let mut im = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let seg = &padded[t * cfg.hop..t * cfg.hop + n];
        for ((b, x), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new(x * w, 0.0);
        }
        fwd.process(&mut buf);
        for c in &buf[..bins] {
            re.push(c.re);
            im.push(c.im);
        }
    }
    Ok((re, im, frames))
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<Spectrogram, DspError> {
    let (re, im, frames) = analyze(&w.samples, cfg)?;
    Ok(Spectrogram { frames, bins: cfg.bins(), re, im, config: *cfg, sample_rate: w.sample_rate })
}

fn synthesize(re: &[f64], im: &[f64], frames: usize, cfg: &StftConfig, out_len: usize) -> Vec<f64> {
    let (n, bins) = (cfg.fft_size, cfg.bins());
    let window = cfg.window();
    let energy = cfg.window_energy(frames);
    let (_, inv) = plans(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut acc = vec![0.0; cfg.padded_len(frames)];
    for t in 0..frames {
        let (r, i) = (&re[t * bins..(t + 1) * bins], &im[t * bins..(t + 1) * bins]);
        for k in 0..bins {
            buf[k] = Complex64::new(r[k], i[k]);
        }
        for k in 1..n / 2 {
            buf[n - k] = Complex64::new(r[k], -i[k]);
        }
        inv.process(&mut buf);
        for (idx, (b, wv)) in buf.iter().zip(&window).enumerate() {
            acc[t * cfg.hop + idx] += wv * b.re / n as f64;
        }
    }
    (0..out_len)
        .map(|i| {
            let p = i + n / 2;
            if energy[p] > 1e-12 {
                acc[p] / energy[p]
            } else {
                0.0
            }
        })
        .collect()
}

fn check_synthesis(frames: usize, spec_cfg: &StftConfig, cfg: &StftConfig, out_len: usize) -> Result<(), DspError> {
    if spec_cfg != cfg {
        return Err(DspError::Config(format!("spectrogram made with {spec_cfg:?}, synthesis with {cfg:?}")));
    }
    if cfg.frame_count(out_len) != frames {
        return Err(DspError::Config(format!(
            "{frames} frames cannot produce {out_len} samples (expected {} frames)",
            cfg.frame_count(out_len)
        )));
    }
    Ok(())
}

/// Weighted overlap-add synthesis normalised by the summed squared window,
/// which makes `istft(stft(x)) == x` up to rounding on every sample.
pub fn istft(s: &Spectrogram, cfg: &StftConfig, out_len: usize) -> Result<Waveform, DspError> {
    cfg.validate()?;
    check_synthesis(s.frames, &s.config, cfg, out_len)?;
    Ok(Waveform::new(synthesize(&s.re, &s.im, s.frames, cfg, out_len), s.sample_rate))
}

struct StftOp {
    cfg: StftConfig,
    frames: usize,
    len: usize,
}

impl CustomOp for StftOp {
    fn name(&self) -> &'static str {
        "stft"
    }

    fn backward(&self, _inputs: &[&Tensor], grad_output: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (n, bins) = (self.cfg.fft_size, self.cfg.bins());
        let window = self.cfg.window();
        let (_, inv) = plans(n);
        let mut padded = vec![0.0; self.cfg.padded_len(self.frames)];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..self.frames {
            let row = &grad_output[t * 2 * bins..(t + 1) * 2 * bins];
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for k in 0..bins {
                buf[k] = Complex64::new(row[k], row[bins + k]);
            }
            inv.process(&mut buf);
            for (idx, (b, w)) in buf.iter().zip(&window).enumerate() {
                padded[t * self.cfg.hop + idx] += w * b.re;
            }
        }
        vec![Some(padded[n / 2..n / 2 + self.len].to_vec())]
    }
}

/// Differentiable STFT of a 1-D signal node; the output is `frames × 2·bins`
/// laid out as `[re ∥ im]`.
pub fn stft_graph(tape: &mut Tape, signal: Var, cfg: &StftConfig) -> Result<Var, DspError> {
    let samples = tape.value(signal).data().to_vec();
    let (re, im, frames) = analyze(&samples, cfg)?;
    let spec = Spectrogram { frames, bins: cfg.bins(), re, im, config: *cfg, sample_rate: 0 };
    let op = StftOp { cfg: *cfg, frames, len: samples.len() };
    Ok(tape.custom(&[signal], spec.to_tensor(), Box::new(op))?)
}

struct IstftOp {
    cfg: StftConfig,
    frames: usize,
}

impl CustomOp for IstftOp {
    fn name(&self) -> &'static str {
        "istft"
    }

    fn backward(&self, _inputs: &[&Tensor], grad_output: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (n, bins) = (self.cfg.fft_size, self.cfg.bins());
        let window = self.cfg.window();
        let energy = self.cfg.window_energy(self.frames);
        let mut g_pad = vec![0.0; energy.len()];
        for (i, g) in grad_output.iter().enumerate() {
            let p = i + n / 2;
            if energy[p] > 1e-12 {
                g_pad[p] = g / energy[p];
            }
        }
        let (fwd, _) = plans(n);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut out = vec![0.0; self.frames * 2 * bins];
        for t in 0..self.frames {
            for (idx, (b, w)) in buf.iter_mut().zip(&window).enumerate() {
                *b = Complex64::new(w * g_pad[t * self.cfg.hop + idx], 0.0);
            }
            fwd.process(&mut buf);
            let row = &mut out[t * 2 * bins..(t + 1) * 2 * bins];
            for k in 0..bins {
                let edge = k == 0 || k == n / 2;
                let c = if edge { 1.0 } else { 2.0 } / n as f64;
                row[k] = c * buf[k].re;
                row[bins + k] = if edge { 0.0 } else { c * buf[k].im };
            }
        }
        vec![Some(out)]
    }
}

/// Differentiable inverse of [`stft_graph`]: consumes a `frames × 2·bins`
/// `[re ∥ im]` node and yields a 1-D signal of `out_len` samples.
pub fn istft_graph(tape: &mut Tape, spec: Var, cfg: &StftConfig, out_len: usize) -> Result<Var, DspError> {
    cfg.validate()?;
    let s = Spectrogram::from_tensor(tape.value(spec), *cfg, 0)?;
    check_synthesis(s.frames, cfg, cfg, out_len)?;
    let samples = synthesize(&s.re, &s.im, s.frames, cfg, out_len);
    let op = IstftOp { cfg: *cfg, frames: s.frames };
    Ok(tape.custom(&[spec], Tensor::new(vec![out_len], samples)?, Box::new(op))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 8000)
    }

    #[test]
    fn frame_count_and_bins() {
        let cfg = StftConfig::default();
        let s = stft(&noise(1000, 1), &cfg).unwrap();
        assert_eq!(s.bins, 129);
        assert_eq!(s.frames, 1 + 1000 / 128);
    }

    #[test]
    fn too_short_is_length_error() {
        let cfg = StftConfig::default();
        assert!(matches!(stft(&noise(100, 1), &cfg), Err(DspError::Length { needed: 256, got: 100 })));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(StftConfig::new(256, 100).is_err());
        assert!(StftConfig::new(256, 256).is_err());
        assert!(StftConfig::new(255, 5).is_err());
        assert!(StftConfig::new(256, 64).is_ok());
    }

    #[test]
    fn zero_in_zero_out() {
        let cfg = StftConfig::default();
        let s = stft(&Waveform::zeros(800, 8000), &cfg).unwrap();
        assert!(s.re.iter().chain(&s.im).all(|&v| v == 0.0));
        let w = istft(&s, &cfg, 800).unwrap();
        assert!(w.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_and_linearity() {
        let cfg = StftConfig::default();
        let x = noise(8000, 7);
        let s = stft(&x, &cfg).unwrap();
        let y = istft(&s, &cfg, x.len()).unwrap();
        let err = x.samples.iter().zip(&y.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-10, "round trip error {err}");

        let half = istft(&s.scaled(0.5), &cfg, x.len()).unwrap();
        let err = x.samples.iter().zip(&half.samples).map(|(a, b)| (0.5 * a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-10);
    }

    #[test]
    fn synthesis_rejects_mismatched_config_and_length() {
        let cfg = StftConfig::default();
        let s = stft(&noise(1024, 3), &cfg).unwrap();
        let other = StftConfig::new(256, 64).unwrap();
        assert!(matches!(istft(&s, &other, 1024), Err(DspError::Config(_))));
        assert!(matches!(istft(&s, &cfg, 4000), Err(DspError::Config(_))));
    }
}
