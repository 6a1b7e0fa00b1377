use crate::mixsim::SILENCE;
use crate::separator::{Permutation, IDENTITY, SWAPPED};

/// Merges runs of identical labels, then drops silence.
pub fn collapse_tokens(frame_labels: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &l in frame_labels {
        if prev != Some(l) && l != SILENCE {
            out.push(l);
        }
        prev = Some(l);
    }
    out
}

/// Unit-cost edit distance.
pub fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = diag + usize::from(x != y);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(row[j + 1] + 1);
        }
    }
    row[b.len()]
}

/// `levenshtein(hyp, ref) / max(1, |ref|)`.
pub fn token_error_rate(hyp: &[usize], reference: &[usize]) -> f64 {
    levenshtein(hyp, reference) as f64 / reference.len().max(1) as f64
}

/// Mismatching frames; sequences must have equal length.
pub fn frame_errors(hyp: &[usize], reference: &[usize]) -> usize {
    assert_eq!(hyp.len(), reference.len(), "frame sequences differ in length");
    hyp.iter().zip(reference).filter(|(a, b)| a != b).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Edit distance over token sequences.
    Tokens,
    /// Frame-wise label mismatches.
    Frames,
}

impl Metric {
    fn errors(self, hyp: &[usize], reference: &[usize]) -> usize {
        match self {
            Metric::Tokens => levenshtein(hyp, reference),
            Metric::Frames => frame_errors(hyp, reference),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationScore {
    /// `(e₀ + e₁) / max(1, n₀ + n₁)` under `permutation`.
    pub rate: f64,
    pub permutation: Permutation,
    pub errors: usize,
    pub reference_length: usize,
}

/// Scores both hypothesis streams against the references under the
/// error-minimising assignment (`hyp[s]` ↔ `ref[p[s]]`); ties go to
/// identity.
pub fn oracle_permutation_score(hyp: &[Vec<usize>; 2], refs: &[Vec<usize>; 2], metric: Metric) -> PermutationScore {
    let n = refs[0].len() + refs[1].len();
    let score = |p: Permutation| {
        let errors = metric.errors(&hyp[0], &refs[p[0]]) + metric.errors(&hyp[1], &refs[p[1]]);
        PermutationScore { rate: errors as f64 / n.max(1) as f64, permutation: p, errors, reference_length: n }
    };
    let (a, b) = (score(IDENTITY), score(SWAPPED));
    if b.errors < a.errors {
        b
    } else {
        a
    }
}
