use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::Model;
use super::phases::{train_phase, train_separator_dynamic, write_phase_log, Phase, PhaseConfig, PhaseOutcome};
use super::TrainError;
use crate::am::{am_parameter_count, AmConfig};
use crate::dsp::FeatureConfig;
use crate::evalcli::{evaluate_model, evaluate_split};
use crate::mixsim::{read_corpus, Corpus, CorpusConfig, DynamicMixer, Split};
use crate::separator::SeparatorConfig;

/// Parsed experiment file.
///
/// ```text
/// seed = 0
/// phases = sep_pretrain, am_train, joint
/// checkpoint = runs/base/model.ckpt   # optional starting weights
/// corpus_dir = data/toy               # optional; otherwise generated
///
/// [corpus]
/// n_train = 200
/// n_dev = 50
/// n_eval = 50
/// snr_db = 20
///
/// [separator]
/// hidden = 64
///
/// [am]
/// variant = 6,4,1,1
///
/// [phase.am_train]
/// epochs = 20
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub phases: Vec<Phase>,
    pub checkpoint: Option<PathBuf>,
    pub corpus_dir: Option<PathBuf>,
    pub corpus: CorpusConfig,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_eval: usize,
    pub separator: SeparatorConfig,
    pub am: AmConfig,
    pub features: FeatureConfig,
    pub phase_configs: BTreeMap<Phase, PhaseConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let corpus = CorpusConfig::default();
        let features = FeatureConfig { sample_rate: corpus.sample_rate, ..FeatureConfig::default() };
        let am = AmConfig { num_classes: corpus.alphabet_size, feature_dim: features.num_bands, ..AmConfig::default() };
        Self {
            seed: 0,
            phases: Phase::ALL.to_vec(),
            checkpoint: None,
            corpus_dir: None,
            separator: SeparatorConfig { stft: corpus.stft(), ..SeparatorConfig::default() },
            corpus,
            n_train: 200,
            n_dev: 50,
            n_eval: 50,
            am,
            features,
            phase_configs: Phase::ALL.into_iter().map(|p| (p, PhaseConfig::default_for(p))).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn phase(&self, p: Phase) -> &PhaseConfig {
        &self.phase_configs[&p]
    }

    pub fn phase_mut(&mut self, p: Phase) -> &mut PhaseConfig {
        self.phase_configs.get_mut(&p).expect("every phase has a config")
    }

    /// All schema problems at once.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if let Err(e) = self.corpus.validate() {
            problems.push(format!("[corpus] {e}"));
        }
        if let Err(e) = self.separator.validate() {
            problems.push(format!("[separator] {e}"));
        }
        if self.separator.stft != self.corpus.stft() {
            problems.push("[separator] fft_size/hop must match [corpus]".into());
        }
        if let Err(e) = self.am.validate() {
            problems.push(format!("[am] {e}"));
        }
        if self.n_dev == 0 {
            problems.push("[corpus] n_dev must be positive".into());
        }
        let mut sorted = self.phases.clone();
        sorted.sort();
        sorted.dedup();
        if sorted != self.phases {
            problems.push("phases must be listed once each in sep_pretrain, am_train, joint order".into());
        }
        for p in &self.phases {
            problems.extend(self.phase(*p).validate());
        }
        problems
    }
}

/// Parses the experiment text format. Every unknown key, bad value or
/// section is reported with its line number.
pub fn parse_experiment(text: &str) -> Result<ExperimentConfig, TrainError> {
    let mut cfg = ExperimentConfig::default();
    let mut problems = Vec::new();
    let mut section = String::new();
    let mut sep_stft_given = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            let known = matches!(section.as_str(), "corpus" | "separator" | "am")
                || section.strip_prefix("phase.").and_then(Phase::parse).is_some();
            if !known {
                problems.push(format!("line {line_no}: unknown section [{section}]"));
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            problems.push(format!("line {line_no}: expected `key = value`"));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let result: Result<(), String> = match section.as_str() {
            "" => match key {
                "seed" => value.parse().map(|v| cfg.seed = v).map_err(|_| format!("seed: cannot parse `{value}`")),
                "phases" => value
                    .split(',')
                    .map(|p| Phase::parse(p.trim()).ok_or_else(|| format!("phases: unknown phase `{}`", p.trim())))
                    .collect::<Result<Vec<_>, _>>()
                    .map(|v| cfg.phases = v),
                "checkpoint" => {
                    cfg.checkpoint = Some(PathBuf::from(value));
                    Ok(())
                }
                "corpus_dir" => {
                    cfg.corpus_dir = Some(PathBuf::from(value));
                    Ok(())
                }
                _ => Err(format!("unknown key `{key}`")),
            },
            "corpus" => match key {
                "n_train" | "n_dev" | "n_eval" => match value.parse::<usize>() {
                    Ok(n) => {
                        *match key {
                            "n_train" => &mut cfg.n_train,
                            "n_dev" => &mut cfg.n_dev,
                            _ => &mut cfg.n_eval,
                        } = n;
                        Ok(())
                    }
                    Err(_) => Err(format!("{key}: cannot parse `{value}`")),
                },
                _ => cfg.corpus.set(key, value),
            },
            "separator" => {
                sep_stft_given |= key == "fft_size" || key == "hop";
                cfg.separator.set(key, value)
            }
            "am" => match key {
                "num_bands" => {
                    value.parse().map(|n| cfg.features.num_bands = n).map_err(|_| format!("{key}: cannot parse `{value}`"))
                }
                _ => cfg.am.set(key, value),
            },
            s => match s.strip_prefix("phase.").and_then(Phase::parse) {
                Some(p) => cfg.phase_mut(p).set(key, value),
                None => Ok(()),
            },
        };
        if let Err(e) = result {
            let at = if section.is_empty() { String::new() } else { format!(" [{section}]") };
            problems.push(format!("line {line_no}{at}: {e}"));
        }
    }
    if !sep_stft_given {
        cfg.separator.stft = cfg.corpus.stft();
    }
    cfg.features.sample_rate = cfg.corpus.sample_rate;
    cfg.am.num_classes = cfg.corpus.alphabet_size;
    cfg.am.feature_dim = cfg.features.num_bands;
    problems.extend(cfg.validate());
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(TrainError::Config(problems))
    }
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig, TrainError> {
    let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
    parse_experiment(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: String,
    pub epochs: usize,
    pub initial_dev_loss: f64,
    pub final_dev_loss: f64,
    pub best_dev_loss: f64,
    pub best_epoch: usize,
    pub first_train_loss: f64,
    pub final_train_loss: f64,
    pub dev_sdr_improvement_db: Option<f64>,
}

impl PhaseSummary {
    fn from_outcome(o: &PhaseOutcome) -> Self {
        Self {
            phase: o.phase.name().into(),
            epochs: o.log.len(),
            initial_dev_loss: o.initial_dev_loss,
            final_dev_loss: o.log.last().map_or(o.initial_dev_loss, |r| r.dev_loss),
            best_dev_loss: o.best_dev_loss,
            best_epoch: o.best_epoch,
            first_train_loss: o.log.first().map_or(f64::NAN, |r| r.train_loss),
            final_train_loss: o.log.last().map_or(f64::NAN, |r| r.train_loss),
            dev_sdr_improvement_db: o.dev_sdr_improvement_db,
        }
    }
}

/// Machine-readable result of [`run_experiment`], written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub seed: u64,
    pub variant: String,
    pub am_params: usize,
    pub phases: Vec<PhaseSummary>,
    /// Dev token error rate of the freshly initialised acoustic model.
    pub untrained_dev_token_error_rate: Option<f64>,
    pub dev_frame_error_rate: Option<f64>,
    pub dev_token_error_rate: Option<f64>,
    pub eval_frame_error_rate: Option<f64>,
    pub eval_token_error_rate: Option<f64>,
    pub dev_sdr_improvement_db: Option<f64>,
}

pub fn load_corpus(cfg: &ExperimentConfig) -> Result<Corpus, TrainError> {
    match &cfg.corpus_dir {
        Some(dir) => {
            let corpus = read_corpus(dir)?;
            if corpus.config.stft() != cfg.separator.stft || corpus.config.alphabet_size != cfg.am.num_classes {
                return Err(TrainError::Config(vec![format!(
                    "corpus in {} disagrees with [corpus] on fft_size, hop or alphabet_size",
                    dir.display()
                )]));
            }
            Ok(corpus)
        }
        None => Ok(Corpus::generate(&cfg.corpus, cfg.n_train, cfg.n_dev, cfg.n_eval)?),
    }
}

fn initial_model(cfg: &ExperimentConfig) -> Result<Model, TrainError> {
    let fresh = Model::new(cfg.separator, cfg.am, cfg.features);
    let Some(path) = &cfg.checkpoint else { return Ok(fresh) };
    let loaded = Model::load(path)?;
    if loaded.separator != fresh.separator {
        return Err(TrainError::Checkpoint { path: path.clone(), detail: "separator shape differs from [separator]".into() });
    }
    if loaded.has_am() && (loaded.am != fresh.am || loaded.features != fresh.features) {
        return Err(TrainError::Checkpoint { path: path.clone(), detail: "acoustic model differs from [am]".into() });
    }
    Ok(Model { params: loaded.params, ..fresh })
}

/// Runs the configured phases in order and writes, into `out`:
/// `{phase}.csv` logs, `{phase}.ckpt` after each phase, the per-phase
/// best/last checkpoints, `model.ckpt`, `eval_report.{json,csv}` (when an
/// acoustic model exists) and `summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentSummary, TrainError> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(TrainError::Config(problems));
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TrainError::Io { path, source }
    };
    std::fs::create_dir_all(out).map_err(io(out))?;
    let corpus = load_corpus(cfg)?;
    let mut model = initial_model(cfg)?;
    let mut summary = ExperimentSummary {
        seed: cfg.seed,
        variant: cfg.am.variant.to_string(),
        am_params: 0,
        phases: Vec::new(),
        untrained_dev_token_error_rate: None,
        dev_frame_error_rate: None,
        dev_token_error_rate: None,
        eval_frame_error_rate: None,
        eval_token_error_rate: None,
        dev_sdr_improvement_db: None,
    };
    for &phase in &cfg.phases {
        let pcfg = cfg.phase(phase);
        if phase == Phase::AmTrain && model.has_separator() && !model.has_am() {
            model.init_am(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA3))?;
            let dev = evaluate_split(&model, Split::Dev, corpus.split(Split::Dev))?;
            summary.untrained_dev_token_error_rate = Some(dev.token_error_rate);
        }
        let outcome = if phase == Phase::SepPretrain && pcfg.dynamic_mixing > 0 {
            let mixer = DynamicMixer::new(&corpus.config, cfg.seed)?;
            train_separator_dynamic(&mut model, pcfg, mixer, corpus.split(Split::Dev), cfg.seed, Some(out))?
        } else {
            train_phase(&mut model, pcfg, corpus.split(Split::Train), corpus.split(Split::Dev), cfg.seed, Some(out))?
        };
        write_phase_log(&out.join(format!("{}.csv", phase.name())), &outcome.log)?;
        model.save(&out.join(format!("{}.ckpt", phase.name())))?;
        summary.phases.push(PhaseSummary::from_outcome(&outcome));
        if let Some(sdr) = outcome.dev_sdr_improvement_db {
            summary.dev_sdr_improvement_db = Some(sdr);
        }
    }
    model.save(&out.join("model.ckpt"))?;
    if model.has_separator() && model.has_am() {
        summary.am_params = am_parameter_count(&model.params);
        let checkpoint = out.join("model.ckpt").display().to_string();
        let report = evaluate_model(&model, &corpus, checkpoint)?;
        if let Some(d) = report.split(Split::Dev) {
            summary.dev_frame_error_rate = Some(d.frame_error_rate);
            summary.dev_token_error_rate = Some(d.token_error_rate);
            summary.dev_sdr_improvement_db = Some(d.mean_sdr_improvement_db);
        }
        if let Some(e) = report.split(Split::Eval) {
            summary.eval_frame_error_rate = Some(e.frame_error_rate);
            summary.eval_token_error_rate = Some(e.token_error_rate);
        }
        report.write(&out.join("eval_report.json"), &out.join("eval_report.csv")).map_err(|e| match e {
            crate::evalcli::EvalError::Io { path, source } => TrainError::Io { path, source },
            other => TrainError::Checkpoint { path: out.join("eval_report.json"), detail: other.to_string() },
        })?;
    }
    let json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    let path = out.join("summary.json");
    std::fs::write(&path, json).map_err(io(&path))?;
    Ok(summary)
}
