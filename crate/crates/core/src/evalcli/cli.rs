use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::{comparison_table, evaluate_model, gradient_suite, write_comparison_table, EvalReport, GRADCHECK_TOLERANCE};
use crate::am::VariantSpec;
use crate::mixsim::write_corpus_data;
use crate::trainer::{load_corpus, load_experiment, run_experiment, ExperimentConfig, Model, Phase};

#[derive(Debug, Parser)]
#[command(name = "mixenc", about = "Mixture-aware speaker encoding on a synthetic two-speaker corpus")]
pub struct Cli {
    /// Experiment config file (defaults apply when omitted).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Acoustic-model layer counts `sep,mix,mas,comb`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub variant: Option<VariantSpec>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (or CSV file for `report`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Starting weights.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes the corpus as WAV files plus labels.
    Simulate,
    /// Separator pretraining.
    TrainSep,
    /// Acoustic-model training on frozen separator outputs.
    TrainAm,
    /// Joint fine-tuning of separator and acoustic model.
    TrainJoint,
    /// Scores a checkpoint on the dev and eval splits.
    Eval,
    /// Finite-difference checks of every model gradient.
    Gradcheck,
    /// Merges eval reports into one comparison table.
    Report {
        /// `eval_report.json` files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn usage(msg: &str) -> Box<dyn std::error::Error> {
    Box::new(UsageError(msg.to_string()))
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn experiment(cli: &Cli) -> Result<ExperimentConfig, Box<dyn std::error::Error>> {
    let mut cfg = match &cli.config {
        Some(path) => load_experiment(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(v) = cli.variant {
        cfg.am.variant = v;
    }
    if let Some(c) = &cli.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<&Path, Box<dyn std::error::Error>> {
    cli.out.as_deref().ok_or_else(|| usage("--out is required"))
}

fn train(cli: &Cli, phase: Phase) -> CliResult {
    let mut cfg = experiment(cli)?;
    if phase != Phase::SepPretrain {
        let path = cfg.checkpoint.clone().ok_or_else(|| usage("--checkpoint is required"))?;
        let loaded = Model::load(&path)?;
        if loaded.has_am() && cli.variant.is_none() {
            cfg.am = loaded.am;
            cfg.features = loaded.features;
        }
    }
    cfg.phases = vec![phase];
    let out = out_dir(cli)?;
    let summary = run_experiment(&cfg, out)?;
    for p in &summary.phases {
        eprintln!("{}: {} epochs, dev loss {:.4} -> {:.4}", p.phase, p.epochs, p.initial_dev_loss, p.final_dev_loss);
    }
    if let Some(t) = summary.dev_token_error_rate {
        eprintln!("dev token error rate {t:.4}");
    }
    eprintln!("results in {}", out.display());
    Ok(())
}

fn simulate(cli: &Cli) -> CliResult {
    let mut cfg = experiment(cli)?;
    if let Some(seed) = cli.seed {
        cfg.corpus.seed = seed;
    }
    cfg.corpus_dir = None;
    let out = out_dir(cli)?;
    let corpus = load_corpus(&cfg)?;
    write_corpus_data(out, &corpus)?;
    eprintln!("wrote {} / {} / {} mixtures to {}", corpus.train.len(), corpus.dev.len(), corpus.eval.len(), out.display());
    Ok(())
}

fn eval(cli: &Cli) -> CliResult {
    let mut cfg = experiment(cli)?;
    let path = cfg.checkpoint.clone().ok_or_else(|| usage("--checkpoint is required"))?;
    let model = Model::load(&path)?;
    if !(model.has_separator() && model.has_am()) {
        return Err(format!("{} lacks separator or acoustic-model weights", path.display()).into());
    }
    cfg.am = model.am;
    let corpus = load_corpus(&cfg)?;
    let report = evaluate_model(&model, &corpus, path.display().to_string())?;
    let out = out_dir(cli)?;
    std::fs::create_dir_all(out)?;
    report.write(&out.join("eval_report.json"), &out.join("eval_report.csv"))?;
    for s in &report.splits {
        eprintln!(
            "{}: FER {:.4} TER {:.4} SDRi {:.2} dB",
            s.split, s.frame_error_rate, s.token_error_rate, s.mean_sdr_improvement_db
        );
    }
    Ok(())
}

fn gradcheck(cli: &Cli) -> CliResult {
    let entries = gradient_suite(cli.seed.unwrap_or(0))?;
    let mut worst: f64 = 0.0;
    for e in &entries {
        eprintln!("{:<22} max rel. error {:.3e} ({} coords)", e.name, e.report.max_rel_error, e.report.coords_checked);
        worst = worst.max(e.report.max_rel_error);
    }
    if worst > GRADCHECK_TOLERANCE {
        return Err(format!("gradient check failed: {worst:.3e} > {GRADCHECK_TOLERANCE:e}").into());
    }
    Ok(())
}

fn report(cli: &Cli, reports: &[PathBuf]) -> CliResult {
    let out = cli.out.as_deref().ok_or_else(|| usage("--out is required"))?;
    let loaded = reports.iter().map(|p| EvalReport::read(p)).collect::<Result<Vec<_>, _>>()?;
    let rows = comparison_table(&loaded)?;
    write_comparison_table(out, &rows)?;
    eprintln!("{} rows written to {}", rows.len(), out.display());
    Ok(())
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 success, 1 runtime failure, 2 usage error.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            eprint!("{}", e.render());
            return code;
        }
    };
    let result = match &cli.command {
        Command::Simulate => simulate(&cli),
        Command::TrainSep => train(&cli, Phase::SepPretrain),
        Command::TrainAm => train(&cli, Phase::AmTrain),
        Command::TrainJoint => train(&cli, Phase::Joint),
        Command::Eval => eval(&cli),
        Command::Gradcheck => gradcheck(&cli),
        Command::Report { reports } => report(&cli, reports),
    };
    match result {
        Ok(()) => 0,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
