use std::f64::consts::PI;

use mixenc::dsp::{
    features, istft, magnitude_mse, sdr, soft_bounded_sdr_loss, stft, FeatureConfig, StftConfig, Waveform,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CFG: StftConfig = StftConfig { fft_size: 256, hop: 128 };

fn white(rng: &mut ChaCha8Rng, len: usize) -> Waveform {
    Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 8000)
}

/// Naive DFT of one windowed frame, bins `0..=N/2`.
fn direct_dft(frame: &[f64]) -> Vec<(f64, f64)> {
    let n = frame.len();
    (0..=n / 2)
        .map(|k| {
            frame.iter().enumerate().fold((0.0, 0.0), |(re, im), (i, x)| {
                let phase = -2.0 * PI * (k * i) as f64 / n as f64;
                (re + x * phase.cos(), im + x * phase.sin())
            })
        })
        .collect()
}

#[test]
fn bin_centred_sine_concentrates_in_its_bin() {
    let k = 20;
    let x = Waveform::new((0..4000).map(|i| (2.0 * PI * k as f64 * i as f64 / 256.0).sin()).collect(), 8000);
    let s = stft(&x, &CFG).unwrap();
    for t in 2..s.frames - 2 {
        let row = t * s.bins;
        let power: Vec<f64> = (0..s.bins).map(|b| s.re[row + b].powi(2) + s.im[row + b].powi(2)).collect();
        let total: f64 = power.iter().sum();
        let peak = (0..s.bins).max_by(|&a, &b| power[a].total_cmp(&power[b])).unwrap();
        assert_eq!(peak, k);
        assert!(power[k - 1] + power[k] + power[k + 1] >= 0.99 * total, "frame {t}");
    }
}

#[test]
fn frames_match_a_direct_dft_and_parseval() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = white(&mut rng, 2000);
    let s = stft(&x, &CFG).unwrap();
    let w = CFG.window();
    let t = 5;
    let start = t * CFG.hop - CFG.fft_size / 2;
    let frame: Vec<f64> = (0..CFG.fft_size).map(|n| w[n] * x.samples[start + n]).collect();
    let dft = direct_dft(&frame);
    for (b, (re, im)) in dft.iter().enumerate() {
        assert!((s.re[t * s.bins + b] - re).abs() < 1e-10);
        assert!((s.im[t * s.bins + b] - im).abs() < 1e-10);
    }
    let time_energy: f64 = frame.iter().map(|v| v * v).sum();
    let n = CFG.fft_size;
    let spec_energy: f64 = (0..s.bins)
        .map(|b| {
            let e = s.re[t * s.bins + b].powi(2) + s.im[t * s.bins + b].powi(2);
            if b == 0 || b == n / 2 {
                e
            } else {
                2.0 * e
            }
        })
        .sum::<f64>()
        / n as f64;
    assert!((time_energy - spec_energy).abs() / time_energy <= 1e-10);
}

#[test]
fn white_noise_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = white(&mut rng, 8000);
    let y = istft(&stft(&x, &CFG).unwrap(), &CFG, x.len()).unwrap();
    let err = x.samples.iter().zip(&y.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-10);
}

#[test]
fn features_shift_by_two_ln_ten_under_tenfold_gain() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = white(&mut rng, 4000);
    let cfg = FeatureConfig::default();
    let a = features(&x, &CFG, &cfg).unwrap();
    let b = features(&x.scaled(10.0), &CFG, &cfg).unwrap();
    assert_eq!(a.frames, CFG.frame_count(x.len()));
    for (u, v) in a.data.iter().zip(&b.data) {
        assert!((v - u - 2.0 * 10f64.ln()).abs() < 1e-6);
    }
}

#[test]
fn sdr_and_loss_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let r = white(&mut rng, 500);
    assert!((sdr(&r, &r.scaled(0.5)).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
    assert!(sdr(&r, &Waveform::zeros(500, 8000)).unwrap().abs() < 1e-12);
    assert_eq!(soft_bounded_sdr_loss(&r, &r, 30.0).unwrap(), -30.0);
    let zero = soft_bounded_sdr_loss(&r, &Waveform::zeros(500, 8000), 30.0).unwrap();
    assert!((zero - 10.0 * (1.0f64 + 1e-3).log10()).abs() < 1e-12);
}

#[test]
fn magnitude_mse_matches_a_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = stft(&white(&mut rng, 1000), &CFG).unwrap();
    let b = stft(&white(&mut rng, 1000), &CFG).unwrap();
    let mut sum = 0.0;
    for t in 0..a.frames {
        for f in 0..a.bins {
            let i = t * a.bins + f;
            let d = (a.re[i].powi(2) + a.im[i].powi(2)).sqrt() - (b.re[i].powi(2) + b.im[i].powi(2)).sqrt();
            sum += d * d;
        }
    }
    let oracle = sum / (a.frames * a.bins) as f64;
    assert!((magnitude_mse(&a, &b).unwrap() - oracle).abs() <= 1e-12 * oracle.max(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sdr_is_invariant_to_joint_scaling(seed in 0u64..1000, k in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = white(&mut rng, 200);
        let e = white(&mut rng, 200);
        let base = sdr(&r, &e).unwrap();
        let scaled = sdr(&r.scaled(k), &e.scaled(k)).unwrap();
        prop_assert!((base - scaled).abs() < 1e-9);
    }

    #[test]
    fn soft_loss_stays_above_the_bound(seed in 0u64..1000, eps in 1e-6f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = white(&mut rng, 100);
        let mut e = r.clone();
        e.samples[rng.gen_range(0..100)] += eps;
        prop_assert!(soft_bounded_sdr_loss(&r, &e, 30.0).unwrap() > -30.0);
    }

    #[test]
    fn round_trip_holds_for_any_length(len in 32usize..3000, seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = StftConfig { fft_size: 32, hop: 16 };
        let x = white(&mut rng, len);
        let y = istft(&stft(&x, &cfg).unwrap(), &cfg, len).unwrap();
        let err = x.samples.iter().zip(&y.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-10);
    }
}
