use std::fmt::Write as _;
use std::path::Path;

use super::{EvalError, EvalReport};
use crate::am::VariantSpec;
use crate::mixsim::Split;

pub const COMPARISON_HEADER: &str = "sep,mix,mas,comb,params,dev_FER,dev_TER,eval_FER,eval_TER";

/// One row of the variant comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub variant: VariantSpec,
    pub params: usize,
    pub dev: (f64, f64),
    /// `None` when the report has no eval split.
    pub eval: Option<(f64, f64)>,
}

/// Rows in input order; every report needs a dev split.
pub fn comparison_table(reports: &[EvalReport]) -> Result<Vec<ComparisonRow>, EvalError> {
    reports
        .iter()
        .map(|r| {
            let variant: VariantSpec = r.variant.parse().map_err(|e: String| EvalError::Format {
                path: r.checkpoint.clone().into(),
                detail: e,
            })?;
            let dev = r.split(Split::Dev).ok_or_else(|| EvalError::MissingSplit(r.checkpoint.clone(), "dev"))?;
            Ok(ComparisonRow {
                variant,
                params: r.am_params,
                dev: (dev.frame_error_rate, dev.token_error_rate),
                eval: r.split(Split::Eval).map(|e| (e.frame_error_rate, e.token_error_rate)),
            })
        })
        .collect()
}

pub fn render_comparison_table(rows: &[ComparisonRow]) -> String {
    let mut s = format!("{COMPARISON_HEADER}\n");
    for r in rows {
        let v = r.variant;
        let (ef, et) = r.eval.map_or((String::new(), String::new()), |(f, t)| (format!("{f:.4}"), format!("{t:.4}")));
        writeln!(
            s,
            "{},{},{},{},{},{:.4},{:.4},{ef},{et}",
            v.sep_layers, v.mix_layers, v.mas_layers, v.comb_layers, r.params, r.dev.0, r.dev.1
        )
        .unwrap();
    }
    s
}

pub fn write_comparison_table(path: &Path, rows: &[ComparisonRow]) -> Result<(), EvalError> {
    std::fs::write(path, render_comparison_table(rows)).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalcli::SplitReport;

    #[test]
    fn one_row_per_report() {
        let reports: Vec<EvalReport> = VariantSpec::TABLE_ROWS
            .iter()
            .map(|v| EvalReport {
                variant: v.to_string(),
                checkpoint: "c".into(),
                am_params: 10,
                splits: vec![SplitReport::from_records("dev", vec![]), SplitReport::from_records("eval", vec![])],
            })
            .collect();
        let rows = comparison_table(&reports).unwrap();
        let csv = render_comparison_table(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[0], COMPARISON_HEADER);
        assert!(lines[1].starts_with("6,-1,0,0,10,"));
    }

    #[test]
    fn dev_split_required() {
        let r = EvalReport { variant: "6,-1,0,0".into(), checkpoint: "c".into(), am_params: 1, splits: vec![] };
        assert!(matches!(comparison_table(&[r]), Err(EvalError::MissingSplit(..))));
    }
}
