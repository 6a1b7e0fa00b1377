use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::Model;
use super::optim::{apply_regularizers, Adam, AdamConfig, FreezeMask, Newbob, NewbobConfig};
use super::specaug::{spec_augment, SpecAugmentConfig};
use super::TrainError;
use crate::am::{
    am_forward, am_forward_graph, am_loss, am_loss_graph, assign_targets, feature_statistics, is_constant_param,
    set_feature_normalization, Dropout,
};
use crate::dsp::{features_graph, stft, FeatureSeq, Spectrogram, DEFAULT_SDR_BOUND_DB};
use crate::mixsim::{DynamicMixer, MixtureExample};
use crate::separator::{evaluate_separator, pretrain_separator, separator_graph, Permutation, PretrainConfig, TrainSource, SEP_PREFIX};
use crate::tensor::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    SepPretrain,
    AmTrain,
    Joint,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::SepPretrain, Phase::AmTrain, Phase::Joint];

    pub fn name(self) -> &'static str {
        match self {
            Phase::SepPretrain => "sep_pretrain",
            Phase::AmTrain => "am_train",
            Phase::Joint => "joint",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    pub phase: Phase,
    pub epochs: usize,
    pub initial_lr: f64,
    pub newbob: NewbobConfig,
    pub l2: f64,
    pub dropout: f64,
    pub grad_noise_std: f64,
    pub specaug: bool,
    pub specaug_config: SpecAugmentConfig,
    pub batch_size: usize,
    /// Separator pretraining only: fresh mixtures per epoch (0 = use the corpus).
    pub dynamic_mixing: usize,
    pub bound_db: f64,
}

impl PhaseConfig {
    pub fn default_for(phase: Phase) -> Self {
        let base = PhaseConfig {
            phase,
            epochs: 20,
            initial_lr: 4e-4,
            newbob: NewbobConfig::default(),
            l2: 1e-2,
            dropout: 0.1,
            grad_noise_std: 0.1,
            specaug: true,
            specaug_config: SpecAugmentConfig::default(),
            batch_size: 4,
            dynamic_mixing: 0,
            bound_db: DEFAULT_SDR_BOUND_DB,
        };
        match phase {
            Phase::SepPretrain => PhaseConfig {
                epochs: 10,
                initial_lr: 1e-3,
                l2: 0.0,
                dropout: 0.0,
                grad_noise_std: 0.0,
                specaug: false,
                batch_size: 8,
                ..base
            },
            Phase::AmTrain => base,
            Phase::Joint => PhaseConfig { initial_lr: 3e-5, specaug: false, ..base },
        }
    }

    /// Recipe used for the small synthetic corpus: Adam at 1e-3 without L2
    /// or gradient noise; dropout, SpecAugment and Newbob as by default.
    pub fn desk_scale(phase: Phase) -> Self {
        let base = Self::default_for(phase);
        match phase {
            Phase::AmTrain => PhaseConfig { initial_lr: 1e-3, l2: 0.0, grad_noise_std: 0.0, ..base },
            Phase::Joint => PhaseConfig { l2: 0.0, grad_noise_std: 0.0, ..base },
            Phase::SepPretrain => base,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let name = self.phase.name();
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            problems.push(format!("[phase.{name}] lr must be positive, got {}", self.initial_lr));
        }
        if self.batch_size == 0 {
            problems.push(format!("[phase.{name}] batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("[phase.{name}] dropout must lie in [0, 1)"));
        }
        if self.l2 < 0.0 || self.grad_noise_std < 0.0 {
            problems.push(format!("[phase.{name}] l2 and grad_noise_std must be non-negative"));
        }
        if self.phase == Phase::Joint && self.specaug {
            problems.push("[phase.joint] specaug must be off in the joint phase".into());
        }
        problems
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("{key}: cannot parse `{v}`"))
        }
        match key {
            "epochs" => self.epochs = num(key, value)?,
            "lr" => self.initial_lr = num(key, value)?,
            "newbob_decay" => self.newbob.decay = num(key, value)?,
            "newbob_threshold" => self.newbob.threshold = num(key, value)?,
            "min_lr" => self.newbob.min_lr = num(key, value)?,
            "l2" => self.l2 = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "grad_noise_std" => self.grad_noise_std = num(key, value)?,
            "specaug" => self.specaug = num(key, value)?,
            "specaug_time_masks" => self.specaug_config.n_time_masks = num(key, value)?,
            "specaug_max_t" => self.specaug_config.max_t = num(key, value)?,
            "specaug_freq_masks" => self.specaug_config.n_freq_masks = num(key, value)?,
            "specaug_max_f" => self.specaug_config.max_f = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "dynamic_mixing" => self.dynamic_mixing = num(key, value)?,
            "bound_db" => self.bound_db = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub current_lr: f64,
    pub best_dev_loss: f64,
    pub rng: ChaCha8Rng,
    pub freeze: FreezeMask,
}

impl TrainState {
    pub fn new(phase: &PhaseConfig, seed: u64) -> Self {
        let freeze = match phase.phase {
            Phase::AmTrain => FreezeMask::prefixes(&[SEP_PREFIX]),
            Phase::SepPretrain | Phase::Joint => FreezeMask::none(),
        };
        Self {
            epoch: 0,
            current_lr: phase.initial_lr,
            best_dev_loss: f64::INFINITY,
            rng: ChaCha8Rng::seed_from_u64(seed ^ ((phase.phase as u64 + 1) << 56)),
            freeze,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseEpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOutcome {
    pub phase: Phase,
    pub log: Vec<PhaseEpochLog>,
    /// Dev loss of the incoming model.
    pub initial_dev_loss: f64,
    pub best_dev_loss: f64,
    /// 0 when no epoch improved on the incoming model.
    pub best_epoch: usize,
    /// Separator pretraining: final dev SDR improvement.
    pub dev_sdr_improvement_db: Option<f64>,
}

/// CSV with header `epoch,lr,train_loss,dev_loss`.
pub fn write_phase_log(path: &Path, log: &[PhaseEpochLog]) -> Result<(), TrainError> {
    let mut s = String::from("epoch,lr,train_loss,dev_loss\n");
    for r in log {
        writeln!(s, "{},{},{},{}", r.epoch, r.lr, r.train_loss, r.dev_loss).unwrap();
    }
    std::fs::write(path, s).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })
}

/// Per-example inputs of the acoustic model while the separator is fixed.
#[derive(Debug, Clone)]
struct AmExample<'a> {
    ex: &'a MixtureExample,
    mix_feats: FeatureSeq,
    sep_feats: [FeatureSeq; 2],
    ref_specs: [Spectrogram; 2],
    perm: Permutation,
}

fn reference_specs(model: &Model, ex: &MixtureExample) -> Result<[Spectrogram; 2], TrainError> {
    Ok([stft(&ex.references[0], &model.separator.stft)?, stft(&ex.references[1], &model.separator.stft)?])
}

fn prepare<'a>(model: &Model, ex: &'a MixtureExample) -> Result<AmExample<'a>, TrainError> {
    let sep = model.separate(&ex.mixture)?;
    let ref_specs = reference_specs(model, ex)?;
    let perm = assign_targets(&sep.est_specs, &ref_specs)?;
    Ok(AmExample {
        ex,
        mix_feats: model.features_of(&ex.mixture)?,
        sep_feats: [model.features_of(&sep.est_waveforms[0])?, model.features_of(&sep.est_waveforms[1])?],
        ref_specs,
        perm,
    })
}

fn prepare_all<'a>(model: &Model, set: &'a [MixtureExample]) -> Result<Vec<AmExample<'a>>, TrainError> {
    set.iter().map(|ex| prepare(model, ex)).collect()
}

fn cached_dev_loss(model: &Model, dev: &[AmExample<'_>]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for d in dev {
        let out = am_forward(&model.params, &model.am, &d.mix_feats, &d.sep_feats)?;
        total += am_loss(&out, &d.ex.frame_labels, d.perm, model.am.aux_scale)?;
    }
    Ok(total / dev.len().max(1) as f64)
}

/// Dev loss of separator + AM with targets assigned on the current
/// separator outputs.
pub fn dev_am_loss(model: &Model, dev: &[MixtureExample]) -> Result<f64, TrainError> {
    cached_dev_loss(model, &prepare_all(model, dev)?)
}

fn ensure_finite(phase: Phase, epoch: usize, ex: &MixtureExample, loss: f64, last_good: &Option<PathBuf>) -> Result<(), TrainError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(TrainError::Divergence {
            phase: phase.name(),
            epoch,
            detail: format!("non-finite loss on {}", ex.id),
            last_good: last_good.clone(),
        })
    }
}

fn wrap_divergence<'a>(
    phase: Phase,
    epoch: usize,
    ex: &MixtureExample,
    last_good: &'a Option<PathBuf>,
) -> impl FnOnce(TrainError) -> TrainError + 'a {
    let id = ex.id.clone();
    move |e| match e {
        TrainError::Tensor(t) => TrainError::Divergence {
            phase: phase.name(),
            epoch,
            detail: format!("{t} on {id}"),
            last_good: last_good.clone(),
        },
        other => other,
    }
}

fn am_step_cached(
    model: &Model,
    d: &AmExample<'_>,
    pcfg: &PhaseConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Tape, f64), TrainError> {
    let (mix, sep) = if pcfg.specaug {
        let m = spec_augment(&d.mix_feats, &pcfg.specaug_config, rng);
        let s0 = spec_augment(&d.sep_feats[0], &pcfg.specaug_config, rng);
        let s1 = spec_augment(&d.sep_feats[1], &pcfg.specaug_config, rng);
        (m, [s0, s1])
    } else {
        (d.mix_feats.clone(), d.sep_feats.clone())
    };
    let mut tape = Tape::new();
    let m = tape.constant(mix.to_tensor());
    let s = [tape.constant(sep[0].to_tensor()), tape.constant(sep[1].to_tensor())];
    let dropout = if pcfg.dropout > 0.0 { Some(Dropout { rate: pcfg.dropout, rng }) } else { None };
    let g = am_forward_graph(&mut tape, &model.params, &model.am, m, s, dropout)?;
    let loss = am_loss_graph(&mut tape, &g, &d.ex.frame_labels, d.perm, model.am.aux_scale)?;
    tape.backward(loss)?;
    let value = tape.value(loss).item();
    Ok((tape, value))
}

fn joint_step(
    model: &Model,
    d: &AmExample<'_>,
    pcfg: &PhaseConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Tape, f64), TrainError> {
    assert!(!pcfg.specaug, "SpecAugment is disabled in the joint phase");
    let mut tape = Tape::new();
    let sg = separator_graph(&mut tape, &model.params, &model.separator, &d.ex.mixture)?;
    let stft_cfg = model.separator.stft;
    let sr = d.ex.mixture.sample_rate;
    let est_specs = [
        Spectrogram::from_tensor(tape.value(sg.specs[0]), stft_cfg, sr)?,
        Spectrogram::from_tensor(tape.value(sg.specs[1]), stft_cfg, sr)?,
    ];
    let perm = assign_targets(&est_specs, &d.ref_specs)?;
    let f0 = features_graph(&mut tape, sg.waveforms[0], &stft_cfg, &model.features)?;
    let f1 = features_graph(&mut tape, sg.waveforms[1], &stft_cfg, &model.features)?;
    let m = tape.constant(d.mix_feats.to_tensor());
    let dropout = if pcfg.dropout > 0.0 { Some(Dropout { rate: pcfg.dropout, rng }) } else { None };
    let g = am_forward_graph(&mut tape, &model.params, &model.am, m, [f0, f1], dropout)?;
    let loss = am_loss_graph(&mut tape, &g, &d.ex.frame_labels, perm, model.am.aux_scale)?;
    tape.backward(loss)?;
    let value = tape.value(loss).item();
    Ok((tape, value))
}

fn save_to(model: &Model, dir: &Option<PathBuf>, name: &str) -> Result<Option<PathBuf>, TrainError> {
    match dir {
        Some(d) => {
            let path = d.join(name);
            model.save(&path)?;
            Ok(Some(path))
        }
        None => Ok(None),
    }
}

/// Trains one phase in place. For the acoustic-model phases the model is
/// left at the best dev epoch (or unchanged if none improved).
pub fn train_phase(
    model: &mut Model,
    pcfg: &PhaseConfig,
    train: &[MixtureExample],
    dev: &[MixtureExample],
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<PhaseOutcome, TrainError> {
    let problems = pcfg.validate();
    if !problems.is_empty() {
        return Err(TrainError::Config(problems));
    }
    match pcfg.phase {
        Phase::SepPretrain => pretrain_phase(model, pcfg, train, dev, seed, checkpoint_dir),
        Phase::AmTrain | Phase::Joint => am_phase(model, pcfg, train, dev, seed, checkpoint_dir),
    }
}

fn pretrain_phase(
    model: &mut Model,
    pcfg: &PhaseConfig,
    train: &[MixtureExample],
    dev: &[MixtureExample],
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<PhaseOutcome, TrainError> {
    if pcfg.dynamic_mixing > 0 {
        return Err(TrainError::Config(vec![
            "[phase.sep_pretrain] dynamic_mixing needs a mixer; use train_separator_dynamic".into(),
        ]));
    }
    run_pretrain(model, pcfg, TrainSource::Fixed(train), dev, seed, checkpoint_dir)
}

fn run_pretrain(
    model: &mut Model,
    pcfg: &PhaseConfig,
    source: TrainSource<'_>,
    dev: &[MixtureExample],
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<PhaseOutcome, TrainError> {
    if !model.has_separator() {
        model.init_separator(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    FreezeMask::none().apply(&mut model.params, |n| !n.starts_with(SEP_PREFIX) || is_constant_param(n));
    let pre = PretrainConfig {
        epochs: pcfg.epochs,
        lr: pcfg.initial_lr,
        batch_size: pcfg.batch_size,
        bound_db: pcfg.bound_db,
        seed,
        checkpoint_dir: checkpoint_dir.map(Path::to_path_buf),
    };
    let (initial_dev_loss, _) = evaluate_separator(&model.params, &model.separator, dev, pcfg.bound_db)?;
    let log = pretrain_separator(&mut model.params, &model.separator, &pre, source, dev)?;
    Ok(sep_outcome(pcfg, initial_dev_loss, &log))
}

fn sep_outcome(pcfg: &PhaseConfig, initial_dev_loss: f64, log: &[crate::separator::SepEpochLog]) -> PhaseOutcome {
    let rows: Vec<PhaseEpochLog> = log
        .iter()
        .map(|r| PhaseEpochLog { epoch: r.epoch, lr: pcfg.initial_lr, train_loss: r.train_loss, dev_loss: r.dev_loss })
        .collect();
    let (best_epoch, best_dev_loss) = rows
        .iter()
        .fold((0, initial_dev_loss), |(e, b), r| if r.dev_loss < b { (r.epoch, r.dev_loss) } else { (e, b) });
    PhaseOutcome {
        phase: Phase::SepPretrain,
        log: rows,
        initial_dev_loss,
        best_dev_loss,
        best_epoch,
        dev_sdr_improvement_db: log.last().map(|r| r.dev_sdr_improvement_db),
    }
}

/// Separator pretraining on a dynamic-mixing stream of
/// `pcfg.dynamic_mixing` fresh mixtures per epoch.
pub fn train_separator_dynamic(
    model: &mut Model,
    pcfg: &PhaseConfig,
    mixer: DynamicMixer,
    dev: &[MixtureExample],
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<PhaseOutcome, TrainError> {
    let source = TrainSource::Dynamic { mixer, per_epoch: pcfg.dynamic_mixing.max(1) };
    run_pretrain(model, pcfg, source, dev, seed, checkpoint_dir)
}

fn am_phase(
    model: &mut Model,
    pcfg: &PhaseConfig,
    train: &[MixtureExample],
    dev: &[MixtureExample],
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<PhaseOutcome, TrainError> {
    let phase = pcfg.phase;
    if !model.has_separator() {
        return Err(TrainError::MissingPrerequisite(format!("{} needs a pretrained separator", phase.name())));
    }
    if phase == Phase::Joint && !model.has_am() {
        return Err(TrainError::MissingPrerequisite("joint needs a trained acoustic model".into()));
    }
    let mut state = TrainState::new(pcfg, seed);
    if !model.has_am() {
        model.init_am(&mut state.rng)?;
    }
    state.freeze.apply(&mut model.params, is_constant_param);
    let dir = checkpoint_dir.map(Path::to_path_buf);

    let train_set = prepare_all(model, train)?;
    let mut dev_set = prepare_all(model, dev)?;
    if phase == Phase::AmTrain {
        let (mean, std) = feature_statistics(
            train_set.iter().flat_map(|d| [&d.mix_feats, &d.sep_feats[0], &d.sep_feats[1]]),
            model.am.feature_dim,
        );
        set_feature_normalization(&mut model.params, &mean, &std);
    }
    let initial_dev_loss = cached_dev_loss(model, &dev_set)?;
    state.best_dev_loss = initial_dev_loss;
    let mut best = model.params.clone();
    let mut best_epoch = 0;
    let mut last_good = save_to(model, &dir, &format!("{}_last.ckpt", phase.name()))?;

    let mut adam = Adam::new(AdamConfig::default());
    let mut newbob = Newbob::new(pcfg.initial_lr, pcfg.newbob);
    newbob.best_dev_loss = initial_dev_loss;
    let mut log = Vec::with_capacity(pcfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=pcfg.epochs {
        state.epoch = epoch;
        order.shuffle(&mut state.rng);
        let lr = state.current_lr;
        let mut total = 0.0;
        for chunk in order.chunks(pcfg.batch_size) {
            model.params.zero_grad();
            for &i in chunk {
                let d = &train_set[i];
                let step = match phase {
                    Phase::Joint => joint_step(model, d, pcfg, &mut state.rng),
                    _ => am_step_cached(model, d, pcfg, &mut state.rng),
                };
                let (tape, loss) = step.map_err(wrap_divergence(phase, epoch, d.ex, &last_good))?;
                ensure_finite(phase, epoch, d.ex, loss, &last_good)?;
                tape.accumulate_into(&mut model.params);
                total += loss;
            }
            model.params.scale_grads(1.0 / chunk.len() as f64);
            apply_regularizers(&mut model.params, pcfg.l2, pcfg.grad_noise_std, &mut state.rng);
            adam.step(&mut model.params, lr);
        }
        model.params.zero_grad();
        if phase == Phase::Joint {
            dev_set = prepare_all(model, dev)?;
        }
        let dev_loss = cached_dev_loss(model, &dev_set)?;
        if !dev_loss.is_finite() {
            return Err(TrainError::Divergence {
                phase: phase.name(),
                epoch,
                detail: "non-finite dev loss".into(),
                last_good,
            });
        }
        log.push(PhaseEpochLog { epoch, lr, train_loss: total / train_set.len().max(1) as f64, dev_loss });
        if dev_loss < state.best_dev_loss {
            state.best_dev_loss = dev_loss;
            best = model.params.clone();
            best_epoch = epoch;
            save_to(model, &dir, &format!("{}_best.ckpt", phase.name()))?;
        }
        state.current_lr = newbob.step(dev_loss);
        last_good = save_to(model, &dir, &format!("{}_last.ckpt", phase.name()))?;
    }
    model.params = best;
    model.params.zero_grad();
    Ok(PhaseOutcome {
        phase,
        log,
        initial_dev_loss,
        best_dev_loss: state.best_dev_loss,
        best_epoch,
        dev_sdr_improvement_db: None,
    })
}
