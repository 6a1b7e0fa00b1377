//! Scoring under the oracle speaker permutation, report files and the
//! `mixenc` command line.

mod cli;
mod gradsuite;
mod metrics;
mod report;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cli::{run_cli, Cli, Command};
pub use gradsuite::{
    check_am_loss, check_joint_loss, check_separator_loss, gradient_suite, GradSuiteEntry, GRADCHECK_TOLERANCE,
    GRADCHECK_VARIANTS,
};
pub use metrics::{
    collapse_tokens, frame_errors, levenshtein, oracle_permutation_score, token_error_rate, Metric, PermutationScore,
};
pub use report::{comparison_table, render_comparison_table, write_comparison_table, ComparisonRow, COMPARISON_HEADER};

use crate::am::{am_parameter_count, greedy_decode};
use crate::dsp::DEFAULT_SDR_BOUND_DB;
use crate::mixsim::{Corpus, MixtureExample, Split};
use crate::separator::sdr_improvement;
use crate::trainer::{Model, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },
    #[error("report for {0} has no {1} split")]
    MissingSplit(String, &'static str),
}

/// Scores of one mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub frame_errors: usize,
    pub frames: usize,
    pub token_errors: usize,
    pub reference_tokens: usize,
    pub frame_permutation: [usize; 2],
    pub token_permutation: [usize; 2],
    /// Indexed by reference speaker.
    pub sdr_improvement_db: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    /// Σ frame errors / Σ frames.
    pub frame_error_rate: f64,
    /// Σ token edits / max(1, Σ reference tokens).
    pub token_error_rate: f64,
    pub mean_sdr_improvement_db: f64,
    pub records: Vec<ExampleRecord>,
}

impl SplitReport {
    /// Aggregates from counts, so the result does not depend on record order.
    pub fn from_records(split: &str, records: Vec<ExampleRecord>) -> Self {
        let sum = |f: fn(&ExampleRecord) -> usize| records.iter().map(f).sum::<usize>();
        let frames = sum(|r| r.frames);
        let tokens = sum(|r| r.reference_tokens);
        let sdr: f64 = records.iter().map(|r| 0.5 * (r.sdr_improvement_db[0] + r.sdr_improvement_db[1])).sum();
        Self {
            split: split.to_string(),
            frame_error_rate: sum(|r| r.frame_errors) as f64 / frames.max(1) as f64,
            token_error_rate: sum(|r| r.token_errors) as f64 / tokens.max(1) as f64,
            mean_sdr_improvement_db: sdr / records.len().max(1) as f64,
            records,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `sep,mix,mas,comb` layer counts.
    pub variant: String,
    pub checkpoint: String,
    pub am_params: usize,
    pub splits: Vec<SplitReport>,
}

impl EvalReport {
    pub fn new(model: &Model, checkpoint: String) -> Self {
        Self {
            variant: model.am.variant.to_string(),
            checkpoint,
            am_params: am_parameter_count(&model.params),
            splits: Vec::new(),
        }
    }

    pub fn split(&self, split: Split) -> Option<&SplitReport> {
        self.splits.iter().find(|s| s.split == split.name())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// One row per example: `split,id,frame_errors,frames,token_errors,
    /// reference_tokens,sdr_improvement_db_0,sdr_improvement_db_1`.
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("split,id,frame_errors,frames,token_errors,reference_tokens,sdr_improvement_db_0,sdr_improvement_db_1\n");
        for sp in &self.splits {
            for r in &sp.records {
                writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    sp.split,
                    r.id,
                    r.frame_errors,
                    r.frames,
                    r.token_errors,
                    r.reference_tokens,
                    r.sdr_improvement_db[0],
                    r.sdr_improvement_db[1]
                )
                .unwrap();
            }
        }
        s
    }

    pub fn write(&self, json: &Path, csv: &Path) -> Result<(), EvalError> {
        for (path, body) in [(json, self.to_json()), (csv, self.to_csv())] {
            std::fs::write(path, body).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| EvalError::Format { path: path.to_path_buf(), detail: e.to_string() })
    }
}

/// Recognises one mixture and scores both output streams.
pub fn evaluate_example(model: &Model, ex: &MixtureExample) -> Result<ExampleRecord, TrainError> {
    let rec = model.recognize_example(ex)?;
    let hyp = greedy_decode(&rec.output);
    let frames = oracle_permutation_score(&hyp, &ex.frame_labels, Metric::Frames);
    let hyp_tokens = [collapse_tokens(&hyp[0]), collapse_tokens(&hyp[1])];
    let ref_tokens = [collapse_tokens(&ex.frame_labels[0]), collapse_tokens(&ex.frame_labels[1])];
    let tokens = oracle_permutation_score(&hyp_tokens, &ref_tokens, Metric::Tokens);
    Ok(ExampleRecord {
        id: ex.id.clone(),
        frame_errors: frames.errors,
        frames: frames.reference_length,
        token_errors: tokens.errors,
        reference_tokens: tokens.reference_length,
        frame_permutation: frames.permutation,
        token_permutation: tokens.permutation,
        sdr_improvement_db: sdr_improvement(ex, &rec.separation, DEFAULT_SDR_BOUND_DB)?,
    })
}

/// Dev and eval reports (empty splits skipped) for `model`.
pub fn evaluate_model(model: &Model, corpus: &Corpus, checkpoint: String) -> Result<EvalReport, TrainError> {
    let mut report = EvalReport::new(model, checkpoint);
    for split in [Split::Dev, Split::Eval] {
        if !corpus.split(split).is_empty() {
            report.splits.push(evaluate_split(model, split, corpus.split(split))?);
        }
    }
    Ok(report)
}

pub fn evaluate_split(model: &Model, split: Split, examples: &[MixtureExample]) -> Result<SplitReport, TrainError> {
    let records = examples.iter().map(|ex| evaluate_example(model, ex)).collect::<Result<Vec<_>, _>>()?;
    Ok(SplitReport::from_records(split.name(), records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(fe: usize, f: usize, te: usize, t: usize) -> ExampleRecord {
        ExampleRecord {
            id: "x".into(),
            frame_errors: fe,
            frames: f,
            token_errors: te,
            reference_tokens: t,
            frame_permutation: [0, 1],
            token_permutation: [1, 0],
            sdr_improvement_db: [2.0, 4.0],
        }
    }

    #[test]
    fn aggregates_from_counts() {
        let r = SplitReport::from_records("dev", vec![record(1, 10, 1, 2), record(3, 30, 0, 6)]);
        assert_eq!(r.frame_error_rate, 0.1);
        assert_eq!(r.token_error_rate, 0.125);
        assert_eq!(r.mean_sdr_improvement_db, 3.0);
    }

    #[test]
    fn json_round_trip() {
        let report = EvalReport {
            variant: "6,4,1,1".into(),
            checkpoint: "m.ckpt".into(),
            am_params: 5,
            splits: vec![SplitReport::from_records("dev", vec![record(1, 4, 0, 1)])],
        };
        let back: EvalReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
        assert_eq!(report.to_csv().lines().count(), 2);
    }
}
