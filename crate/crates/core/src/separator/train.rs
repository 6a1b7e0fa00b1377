use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{pit_loss, pit_loss_graph, sdr_improvement, separate, separator_graph, SepError, SeparatorConfig, SEP_PREFIX};
use crate::dsp::DEFAULT_SDR_BOUND_DB;
use crate::mixsim::{DynamicMixer, MixtureExample};
use crate::tensor::{save_checkpoint, Checkpoint, ParamSet, Tape};
use crate::trainer::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub bound_db: f64,
    pub seed: u64,
    /// Writes `sep_epoch{N}.ckpt` after every epoch when set.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 10, lr: 1e-3, batch_size: 8, bound_db: DEFAULT_SDR_BOUND_DB, seed: 0, checkpoint_dir: None }
    }
}

pub enum TrainSource<'a> {
    Fixed(&'a [MixtureExample]),
    /// Fresh mixtures drawn from the stream every epoch.
    Dynamic { mixer: DynamicMixer, per_epoch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SepEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_sdr_improvement_db: f64,
}

/// Mean PIT loss and mean per-speaker SDR improvement over `dev`.
pub fn evaluate_separator(
    params: &ParamSet,
    cfg: &SeparatorConfig,
    dev: &[MixtureExample],
    bound_db: f64,
) -> Result<(f64, f64), SepError> {
    let (mut loss, mut gain) = (0.0, 0.0);
    for ex in dev {
        let r = separate(params, cfg, &ex.mixture)?;
        loss += pit_loss(&r.est_waveforms, &ex.references, bound_db)?.0;
        let imp = sdr_improvement(ex, &r, bound_db)?;
        gain += 0.5 * (imp[0] + imp[1]);
    }
    let n = dev.len().max(1) as f64;
    Ok((loss / n, gain / n))
}

fn diverged(epoch: usize, example: &str, e: impl std::fmt::Display) -> SepError {
    SepError::Divergence { epoch, example: example.to_string(), detail: e.to_string() }
}

/// Minimises the PIT loss over the `sep.` tensors of `params` with Adam.
/// The returned log has one row per epoch.
pub fn pretrain_separator(
    params: &mut ParamSet,
    cfg: &SeparatorConfig,
    pcfg: &PretrainConfig,
    mut source: TrainSource<'_>,
    dev: &[MixtureExample],
) -> Result<Vec<SepEpochLog>, SepError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(pcfg.seed);
    let mut adam = Adam::new(AdamConfig::default());
    let mut log = Vec::with_capacity(pcfg.epochs);
    let batch = pcfg.batch_size.max(1);
    for epoch in 1..=pcfg.epochs {
        let examples: Vec<MixtureExample> = match &mut source {
            TrainSource::Fixed(set) => {
                let mut v = set.to_vec();
                v.shuffle(&mut rng);
                v
            }
            TrainSource::Dynamic { mixer, per_epoch } => mixer.take(*per_epoch).collect(),
        };
        let mut total = 0.0;
        for chunk in examples.chunks(batch) {
            params.zero_grad();
            for ex in chunk {
                let mut tape = Tape::new();
                let step = |tape: &mut Tape| -> Result<f64, SepError> {
                    let g = separator_graph(tape, params, cfg, &ex.mixture)?;
                    let (loss, _) = pit_loss_graph(tape, g.waveforms, &ex.references, pcfg.bound_db)?;
                    tape.backward(loss)?;
                    Ok(tape.value(loss).item())
                };
                let loss = step(&mut tape).map_err(|e| diverged(epoch, &ex.id, e))?;
                if !loss.is_finite() {
                    return Err(diverged(epoch, &ex.id, "non-finite loss"));
                }
                total += loss;
                tape.accumulate_into(params);
            }
            params.scale_grads(1.0 / chunk.len() as f64);
            adam.step(params, pcfg.lr);
        }
        let (dev_loss, dev_gain) = evaluate_separator(params, cfg, dev, pcfg.bound_db)?;
        log.push(SepEpochLog {
            epoch,
            train_loss: total / examples.len().max(1) as f64,
            dev_loss,
            dev_sdr_improvement_db: dev_gain,
        });
        if let Some(dir) = &pcfg.checkpoint_dir {
            let path = dir.join(format!("sep_epoch{epoch}.ckpt"));
            let metadata = cfg.to_kv();
            save_checkpoint(&path, &Checkpoint { params: params.subset(SEP_PREFIX), metadata })
                .map_err(|source| SepError::Io { path, source })?;
        }
    }
    params.zero_grad();
    Ok(log)
}

/// CSV with header `epoch,train_loss,dev_loss,dev_sdr_improvement_db`.
pub fn write_sep_log(path: &Path, log: &[SepEpochLog]) -> Result<(), SepError> {
    let mut s = String::from("epoch,train_loss,dev_loss,dev_sdr_improvement_db\n");
    for r in log {
        writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.dev_loss, r.dev_sdr_improvement_db).unwrap();
    }
    std::fs::write(path, s).map_err(|source| SepError::Io { path: path.to_path_buf(), source })
}
