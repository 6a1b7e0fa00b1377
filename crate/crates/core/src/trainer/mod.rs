mod experiment;
mod model;
mod optim;
mod phases;
mod specaug;

use std::path::PathBuf;

pub use experiment::{load_corpus, load_experiment, parse_experiment, run_experiment, ExperimentConfig, ExperimentSummary, PhaseSummary};
pub use model::{Model, Recognition};
pub use optim::{apply_regularizers, regularize_grad, Adam, AdamConfig, FreezeMask, Newbob, NewbobConfig};
pub use phases::{
    dev_am_loss, train_phase, train_separator_dynamic, write_phase_log, Phase, PhaseConfig, PhaseEpochLog, PhaseOutcome,
    TrainState,
};
pub use specaug::{spec_augment, SpecAugmentConfig};

use crate::am::AmError;
use crate::dsp::DspError;
use crate::mixsim::MixError;
use crate::separator::SepError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),
    #[error("training diverged in {phase} epoch {epoch}: {detail}{}", last_good.as_ref().map(|p| format!(" (last good checkpoint: {})", p.display())).unwrap_or_default())]
    Divergence { phase: &'static str, epoch: usize, detail: String, last_good: Option<PathBuf> },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint {}: {detail}", path.display())]
    Checkpoint { path: PathBuf, detail: String },
    #[error(transparent)]
    Separator(#[from] SepError),
    #[error(transparent)]
    Am(#[from] AmError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Mix(#[from] MixError),
}
