use mixenc::am::{
    am_forward, am_loss, argmax_rows, assign_targets, greedy_decode, init_am, AmConfig, AmOutput, VariantSpec,
};
use mixenc::dsp::{stft, FeatureSeq, StftConfig, Waveform};
use mixenc::separator::{IDENTITY, SWAPPED};
use mixenc::tensor::{ParamSet, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn feats(rng: &mut ChaCha8Rng, frames: usize, dim: usize) -> FeatureSeq {
    FeatureSeq { frames, dim, data: (0..frames * dim).map(|_| rng.gen_range(-2.0..2.0)).collect() }
}

fn tiny(variant: VariantSpec) -> AmConfig {
    AmConfig { variant, feature_dim: 5, num_classes: 6, enc_width: 3, comb_width: 4, aux_scale: 0.3 }
}

fn log_softmax(rng: &mut ChaCha8Rng, frames: usize, classes: usize) -> Tensor {
    let mut data = Vec::with_capacity(frames * classes);
    for _ in 0..frames {
        let row: Vec<f64> = (0..classes).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        data.extend(row.iter().map(|v| v - lse));
    }
    Tensor::matrix(frames, classes, data).unwrap()
}

#[test]
fn table_rows_produce_normalised_posteriors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for v in VariantSpec::TABLE_ROWS {
        let cfg = tiny(VariantSpec::new(v.sep_layers.min(2), v.mix_layers.min(2), v.mas_layers, v.comb_layers));
        let mut params = ParamSet::new();
        init_am(&mut params, &cfg, &mut rng).unwrap();
        let out = am_forward(&params, &cfg, &feats(&mut rng, 7, 5), &[feats(&mut rng, 7, 5), feats(&mut rng, 7, 5)])
            .unwrap();
        for lp in &out.log_posteriors {
            assert_eq!(lp.shape(), &[7, 6]);
            for r in 0..7 {
                let lse = lp.row(r).iter().map(|v| v.exp()).sum::<f64>().ln();
                assert!(lse.abs() <= 1e-10, "{v}: {lse}");
            }
        }
    }
}

#[test]
fn modular_baseline_shares_weights_across_speakers() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = tiny(VariantSpec::new(2, -1, 0, 0));
    let mut params = ParamSet::new();
    init_am(&mut params, &cfg, &mut rng).unwrap();
    let f = feats(&mut rng, 6, 5);
    let out = am_forward(&params, &cfg, &feats(&mut rng, 6, 5), &[f.clone(), f]).unwrap();
    assert_eq!(out.log_posteriors[0], out.log_posteriors[1]);
}

#[test]
fn loss_matches_independent_cross_entropy_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (frames, classes) = (8, 5);
    let out = AmOutput {
        log_posteriors: [log_softmax(&mut rng, frames, classes), log_softmax(&mut rng, frames, classes)],
        aux_log_posteriors: Some([log_softmax(&mut rng, frames, classes), log_softmax(&mut rng, frames, classes)]),
    };
    let targets = [0, 1].map(|_| (0..frames).map(|_| rng.gen_range(0..classes)).collect::<Vec<_>>());
    for perm in [IDENTITY, SWAPPED] {
        let ce = |t: &Tensor, y: &[usize]| -> f64 {
            let mut s = 0.0;
            for (r, &label) in y.iter().enumerate() {
                s -= t.at(r, label);
            }
            s / y.len() as f64
        };
        let aux = out.aux_log_posteriors.as_ref().unwrap();
        let main = 0.5 * (ce(&out.log_posteriors[0], &targets[perm[0]]) + ce(&out.log_posteriors[1], &targets[perm[1]]));
        let a = 0.5 * (ce(&aux[0], &targets[perm[0]]) + ce(&aux[1], &targets[perm[1]]));
        let got = am_loss(&out, &targets, perm, 0.3).unwrap();
        assert!((got - (main + 0.3 * a)).abs() <= 1e-12);
        assert!((am_loss(&out, &targets, perm, 0.0).unwrap() - main).abs() <= 1e-12);
    }
}

#[test]
fn decoding_matches_a_per_frame_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let out = AmOutput {
        log_posteriors: [log_softmax(&mut rng, 20, 7), log_softmax(&mut rng, 20, 7)],
        aux_log_posteriors: None,
    };
    let hyp = greedy_decode(&out);
    for s in 0..2 {
        for t in 0..20 {
            let row = out.log_posteriors[s].row(t);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(row[hyp[s][t]], max);
        }
    }
    let uniform = Tensor::matrix(3, 4, vec![-(4f64.ln()); 12]).unwrap();
    assert_eq!(argmax_rows(&uniform), vec![0, 0, 0]);
}

#[test]
fn assignment_closed_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = StftConfig { fft_size: 32, hop: 16 };
    let w = |rng: &mut ChaCha8Rng| {
        stft(&Waveform::new((0..200).map(|_| rng.gen_range(-1.0..1.0)).collect(), 8000), &cfg).unwrap()
    };
    let refs = [w(&mut rng), w(&mut rng)];
    assert_eq!(assign_targets(&[refs[1].clone(), refs[0].clone()], &refs).unwrap(), SWAPPED);
    assert_eq!(assign_targets(&refs, &refs).unwrap(), IDENTITY);
    let same = w(&mut rng);
    assert_eq!(assign_targets(&[same.clone(), same], &refs).unwrap(), IDENTITY);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn comb_free_variants_are_swap_equivariant(seed in 0u64..10_000, which in 0usize..4) {
        let variants = [
            VariantSpec::new(2, -1, 0, 0),
            VariantSpec::new(0, 2, 1, 0),
            VariantSpec::new(2, 2, 1, 0),
            VariantSpec::new(2, 0, 1, 0),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = tiny(variants[which]);
        let mut params = ParamSet::new();
        init_am(&mut params, &cfg, &mut rng).unwrap();
        let frames = rng.gen_range(2..8);
        let mix = feats(&mut rng, frames, 5);
        let s = [feats(&mut rng, frames, 5), feats(&mut rng, frames, 5)];
        let a = am_forward(&params, &cfg, &mix, &s).unwrap();
        let b = am_forward(&params, &cfg, &mix, &[s[1].clone(), s[0].clone()]).unwrap();
        prop_assert_eq!(&a.log_posteriors[0], &b.log_posteriors[1]);
        prop_assert_eq!(&a.log_posteriors[1], &b.log_posteriors[0]);
    }
}
