use std::f64::consts::LN_10;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::MixError;

/// `ln(10³)`: an amplitude envelope `exp(−DECAY_60DB·t/T60)` is at −60 dB at `t = T60`.
pub const DECAY_60DB: f64 = 3.0 * LN_10;

pub fn rir_envelope(t_s: f64, t60_s: f64) -> f64 {
    (-DECAY_60DB * t_s / t60_s).exp()
}

/// Samples until the envelope reaches −80 dB.
pub fn rir_length(t60_s: f64, sample_rate: u32) -> usize {
    (t60_s * sample_rate as f64 * 80.0 / 60.0).ceil() as usize
}

/// Exponentially decaying white-noise impulse response with a unit direct
/// path at `h[0]`; the tail is rescaled to carry `tail_energy`.
pub fn synth_rir<R: Rng + ?Sized>(
    t60_s: f64,
    sample_rate: u32,
    tail_energy: f64,
    rng: &mut R,
) -> Result<Vec<f64>, MixError> {
    if !t60_s.is_finite() || t60_s <= 0.0 {
        return Err(MixError::InvalidT60(t60_s));
    }
    let len = rir_length(t60_s, sample_rate).max(1);
    let fs = sample_rate as f64;
    let mut h: Vec<f64> = (0..len)
        .map(|n| {
            let z: f64 = rng.sample(StandardNormal);
            z * rir_envelope(n as f64 / fs, t60_s)
        })
        .collect();
    h[0] = 0.0;
    let realized: f64 = h.iter().map(|v| v * v).sum();
    let gain = if realized > 0.0 { (tail_energy / realized).sqrt() } else { 0.0 };
    h.iter_mut().for_each(|v| *v *= gain);
    h[0] = 1.0;
    Ok(h)
}

/// Linear convolution truncated to the length of `x`.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let (fwd, inv) = (planner.plan_fft_forward(n), planner.plan_fft_inverse(n));
    let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(n, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    a[..x.len()].iter().map(|c| c.re / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn envelope_is_minus_60_db_at_t60() {
        assert!((rir_envelope(0.3, 0.3) - 1e-3).abs() < 1e-15);
        assert!((rir_envelope(0.3 * 4.0 / 3.0, 0.3) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn length_follows_minus_80_db_threshold() {
        // independent: smallest n with envelope(n/fs) <= 1e-4 (−80 dB)
        let fs = 8000.0;
        let oracle = (0..).find(|&n| (-(3.0 * 10f64.ln()) * n as f64 / (fs * 0.2)).exp() <= 1e-4 + 1e-15).unwrap();
        let len = rir_length(0.2, 8000);
        assert_eq!(len, 2134);
        assert!((len as i64 - oracle as i64).abs() <= 1);
    }

    #[test]
    fn rejects_non_positive_t60() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(synth_rir(0.0, 8000, 0.5, &mut rng), Err(MixError::InvalidT60(_))));
        assert!(synth_rir(-1.0, 8000, 0.5, &mut rng).is_err());
    }

    #[test]
    fn direct_path_and_tail_energy() {
        let h = synth_rir(0.35, 8000, 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(h[0], 1.0);
        let tail: f64 = h[1..].iter().map(|v| v * v).sum();
        assert!((tail - 0.5).abs() < 1e-12);
    }

    #[test]
    fn energy_decay_curve_is_monotone() {
        let h = synth_rir(0.5, 8000, 0.5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut edc = Vec::with_capacity(h.len());
        let mut acc = 0.0;
        for v in h.iter().rev() {
            acc += v * v;
            edc.push(acc);
        }
        edc.reverse();
        assert!(edc.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fft_convolution_matches_direct_sum() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let h = [1.0, 0.5, -0.25, 0.125];
        let fast = convolve_truncated(&x, &h);
        for n in 0..x.len() {
            let direct: f64 = (0..h.len()).filter(|&k| k <= n).map(|k| h[k] * x[n - k]).sum();
            assert!((fast[n] - direct).abs() < 1e-12);
        }
    }
}
