use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

use mixenc::am::VariantSpec;
use mixenc::evalcli::{levenshtein, oracle_permutation_score, EvalReport, Metric, SplitReport, COMPARISON_HEADER};
use mixenc::separator::{IDENTITY, SWAPPED};
use mixenc::trainer::{parse_experiment, Model};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mixenc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixenc")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited")
}

/// Edit distance by memoised recursion over suffixes.
fn edit_oracle(a: &[usize], b: &[usize]) -> usize {
    fn go(a: &[usize], b: &[usize], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let sub = go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]);
        let del = go(a, b, i + 1, j, memo) + 1;
        let ins = go(a, b, i, j + 1, memo) + 1;
        let v = sub.min(del).min(ins);
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

fn seq() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..4, 0..9)
}

proptest! {
    #[test]
    fn levenshtein_matches_recursive_oracle(a in seq(), b in seq()) {
        prop_assert_eq!(levenshtein(&a, &b), edit_oracle(&a, &b));
    }

    #[test]
    fn oracle_score_is_the_enumerated_minimum(h0 in seq(), h1 in seq(), r0 in seq(), r1 in seq()) {
        let hyp = [h0, h1];
        let refs = [r0, r1];
        let s = oracle_permutation_score(&hyp, &refs, Metric::Tokens);
        let errs = |p: [usize; 2]| edit_oracle(&hyp[0], &refs[p[0]]) + edit_oracle(&hyp[1], &refs[p[1]]);
        let (ei, es) = (errs(IDENTITY), errs(SWAPPED));
        let (best, perm) = if es < ei { (es, SWAPPED) } else { (ei, IDENTITY) };
        prop_assert_eq!(s.errors, best);
        prop_assert_eq!(s.permutation, perm);
        prop_assert_eq!(s.rate, best as f64 / (refs[0].len() + refs[1].len()).max(1) as f64);
        prop_assert!(s.errors <= ei && s.errors <= es);
    }
}

const CONFIG: &str = "seed = 1\n\
    [corpus]\nn_train = 2\nn_dev = 6\nn_eval = 6\n\
    [separator]\nrecurrent_layers = 1\nhidden = 8\nff_hidden = 8\n\
    [am]\nvariant = 6,-1,0,0\n";

fn write_untrained_checkpoint(dir: &Path) -> (String, String) {
    let cfg_path = dir.join("exp.cfg");
    std::fs::write(&cfg_path, CONFIG).unwrap();
    let cfg = parse_experiment(CONFIG).unwrap();
    let mut model = Model::new(cfg.separator, cfg.am, cfg.features);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    model.init_separator(&mut rng);
    model.init_am(&mut rng).unwrap();
    let ckpt = dir.join("untrained.ckpt");
    model.save(&ckpt).unwrap();
    (cfg_path.display().to_string(), ckpt.display().to_string())
}

#[test]
fn eval_of_an_untrained_model_is_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ckpt) = write_untrained_checkpoint(dir.path());
    let out = dir.path().join("eval");
    let run = mixenc(&["eval", "--config", &cfg, "--checkpoint", &ckpt, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let report = EvalReport::read(&out.join("eval_report.json")).unwrap();
    assert_eq!(report.variant, "6,-1,0,0");
    for split in &report.splits {
        assert!((split.token_error_rate - 1.0).abs() <= 0.25, "{}: {}", split.split, split.token_error_rate);
        let frames: usize = split.records.iter().map(|r| r.frames).sum();
        let errors: usize = split.records.iter().map(|r| r.frame_errors).sum();
        assert_eq!(split.frame_error_rate, errors as f64 / frames as f64);
        assert!((0.0..=1.0).contains(&split.frame_error_rate));
    }
    let csv = std::fs::read_to_string(out.join("eval_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 12);
}

#[test]
fn report_merges_eight_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for (i, v) in VariantSpec::TABLE_ROWS.iter().enumerate() {
        let split = |name: &str, rate: f64| SplitReport {
            split: name.into(),
            frame_error_rate: rate,
            token_error_rate: rate / 2.0,
            mean_sdr_improvement_db: 10.0,
            records: Vec::new(),
        };
        let r = EvalReport {
            variant: v.to_string(),
            checkpoint: format!("run{i}/model.ckpt"),
            am_params: 1000 + i,
            splits: vec![split("dev", 0.1 * i as f64), split("eval", 0.05 * i as f64)],
        };
        let path = dir.path().join(format!("r{i}.json"));
        std::fs::write(&path, r.to_json()).unwrap();
        paths.push(path.display().to_string());
    }
    let table = dir.path().join("table.csv");
    let mut args = vec!["report", "--out", table.to_str().unwrap()];
    args.extend(paths.iter().map(String::as_str));
    let run = mixenc(&args);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let text = std::fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 9);
    assert_eq!(lines[0], COMPARISON_HEADER);
    assert!(lines[1].starts_with("6,-1,0,0,1000,"));
    assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 9));
}

#[test]
fn gradcheck_command_passes() {
    let run = mixenc(&["gradcheck"]);
    assert_eq!(code(&run), 0);
    let stderr = String::from_utf8_lossy(&run.stderr);
    let errors: Vec<f64> = stderr
        .lines()
        .filter_map(|l| l.split("max rel. error ").nth(1))
        .map(|rest| rest.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(errors.len(), 6, "{stderr}");
    assert!(errors.iter().all(|&e| e <= 1e-4));
}

#[test]
fn exit_codes_distinguish_usage_and_runtime_errors() {
    assert_eq!(code(&mixenc(&["--help"])), 0);
    assert_eq!(code(&mixenc(&["frobnicate"])), 2);
    assert_eq!(code(&mixenc(&["train-am", "--out", "x"])), 2);
    assert_eq!(code(&mixenc(&["eval", "--variant", "6,-1,1,0", "--checkpoint", "m.ckpt"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ckpt");
    let out = dir.path().join("o");
    let run = mixenc(&["eval", "--checkpoint", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&run), 1);
    assert!(String::from_utf8_lossy(&run.stderr).contains("missing.ckpt"));
    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "[am]\nvariant = 6,-1,0,1\nnonsense = 3\n").unwrap();
    let run = mixenc(&["train-sep", "--config", bad_cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&run), 1);
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("line 2") && stderr.contains("line 3"), "{stderr}");
}

#[test]
fn simulate_then_train_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, CONFIG).unwrap();
    let run = mixenc(&["simulate", "--config", cfg.to_str().unwrap(), "--out", corpus.to_str().unwrap()]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let with_dir = format!("corpus_dir = {}\n{CONFIG}[phase.sep_pretrain]\nepochs = 1\n", corpus.display());
    std::fs::write(&cfg, with_dir).unwrap();
    let out = dir.path().join("sep");
    let run = mixenc(&["train-sep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out.join("sep_pretrain.csv").exists() && out.join("model.ckpt").exists());
}
