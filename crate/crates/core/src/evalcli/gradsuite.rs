use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::am::{am_forward_graph, am_loss_graph, init_am, AmConfig, VariantSpec};
use crate::dsp::{features_graph, FeatureConfig, StftConfig, Waveform, DEFAULT_SDR_BOUND_DB};
use crate::separator::{init_separator, pit_loss_graph, separator_graph, SeparatorConfig, IDENTITY};
use crate::tensor::{gradient_check, GradCheckOptions, GradCheckReport, ParamSet, Tape, Tensor};
use crate::trainer::TrainError;

/// Largest relative error accepted by the `gradcheck` command.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradSuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

fn tiny_separator() -> SeparatorConfig {
    SeparatorConfig { stft: StftConfig { fft_size: 16, hop: 8 }, recurrent_layers: 1, hidden: 3, ff_hidden: 4 }
}

fn signal(rng: &mut ChaCha8Rng, len: usize, amp: f64) -> Waveform {
    Waveform::new((0..len).map(|_| amp * rng.gen_range(-1.0..1.0)).collect(), 8000)
}

fn tiny_am(variant: VariantSpec, feature_dim: usize) -> AmConfig {
    AmConfig { variant, feature_dim, num_classes: 3, enc_width: 2, comb_width: 3, aux_scale: 0.3 }
}

fn labels(rng: &mut ChaCha8Rng, frames: usize) -> [Vec<usize>; 2] {
    [0, 1].map(|_| (0..frames).map(|_| rng.gen_range(0..3)).collect())
}

/// The tiny variants used for the acoustic-model checks, one per structure.
pub const GRADCHECK_VARIANTS: [(&str, VariantSpec); 4] = [
    ("am.modular", VariantSpec::new(1, -1, 0, 0)),
    ("am.mixture_aware", VariantSpec::new(1, 1, 1, 0)),
    ("am.combination", VariantSpec::new(1, 1, 0, 1)),
    ("am.combination_mas", VariantSpec::new(1, 1, 1, 1)),
];

/// Soft-bounded SDR loss through the separator masks.
pub fn check_separator_loss(seed: u64) -> Result<GradCheckReport, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tiny_separator();
    let mut params = ParamSet::new();
    init_separator(&mut params, &cfg, &mut rng);
    let refs = [signal(&mut rng, 64, 0.5), signal(&mut rng, 64, 0.3)];
    let mixture = Waveform::new(refs[0].samples.iter().zip(&refs[1].samples).map(|(a, b)| a + b).collect(), 8000);
    gradient_check(&params, GradCheckOptions::default(), |tape: &mut Tape, p: &ParamSet| -> Result<_, TrainError> {
        let g = separator_graph(tape, p, &cfg, &mixture)?;
        Ok(pit_loss_graph(tape, g.waveforms, &refs, DEFAULT_SDR_BOUND_DB)?.0)
    })
}

/// Acoustic-model loss (main plus auxiliary) for one variant.
pub fn check_am_loss(variant: VariantSpec, seed: u64) -> Result<GradCheckReport, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (frames, dim) = (5, 4);
    let cfg = tiny_am(variant, dim);
    let mut params = ParamSet::new();
    init_am(&mut params, &cfg, &mut rng)?;
    let feat = |rng: &mut ChaCha8Rng| {
        Tensor::matrix(frames, dim, (0..frames * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
    };
    let (mix, s0, s1) = (feat(&mut rng), feat(&mut rng), feat(&mut rng));
    let targets = labels(&mut rng, frames);
    gradient_check(&params, GradCheckOptions::default(), |tape: &mut Tape, p: &ParamSet| -> Result<_, TrainError> {
        let m = tape.constant(mix.clone());
        let s = [tape.constant(s0.clone()), tape.constant(s1.clone())];
        let g = am_forward_graph(tape, p, &cfg, m, s, None)?;
        Ok(am_loss_graph(tape, &g, &targets, IDENTITY, cfg.aux_scale)?)
    })
}

/// Separator, feature front end and acoustic model chained as in joint
/// training.
pub fn check_joint_loss(seed: u64) -> Result<GradCheckReport, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sep = tiny_separator();
    let feats = FeatureConfig { num_bands: 4, ..FeatureConfig::default() };
    let am = tiny_am(VariantSpec::new(1, 1, 1, 1), feats.num_bands);
    let mut params = ParamSet::new();
    init_separator(&mut params, &sep, &mut rng);
    init_am(&mut params, &am, &mut rng)?;
    let mixture = signal(&mut rng, 48, 0.5);
    let targets = labels(&mut rng, sep.stft.frame_count(mixture.len()));
    let mix_feats = crate::dsp::features(&mixture, &sep.stft, &feats)?.to_tensor();
    gradient_check(&params, GradCheckOptions::default(), |tape: &mut Tape, p: &ParamSet| -> Result<_, TrainError> {
        let g = separator_graph(tape, p, &sep, &mixture)?;
        let f0 = features_graph(tape, g.waveforms[0], &sep.stft, &feats)?;
        let f1 = features_graph(tape, g.waveforms[1], &sep.stft, &feats)?;
        let m = tape.constant(mix_feats.clone());
        let out = am_forward_graph(tape, p, &am, m, [f0, f1], None)?;
        Ok(am_loss_graph(tape, &out, &targets, IDENTITY, am.aux_scale)?)
    })
}

/// Every check run by the `gradcheck` command.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradSuiteEntry>, TrainError> {
    let mut out = vec![GradSuiteEntry { name: "separator.sdr_loss".into(), report: check_separator_loss(seed)? }];
    for (name, v) in GRADCHECK_VARIANTS {
        out.push(GradSuiteEntry { name: name.into(), report: check_am_loss(v, seed)? });
    }
    out.push(GradSuiteEntry { name: "joint".into(), report: check_joint_loss(seed)? });
    Ok(out)
}
