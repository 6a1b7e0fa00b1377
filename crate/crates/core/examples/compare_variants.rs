//! Trains several acoustic-model variants on one shared separator and
//! prints the comparison table.
//!
//! cargo run --release --example compare_variants -- [epochs] [variant ...]
//!
//! Defaults to all eight table rows.

use mixenc::am::{AmConfig, VariantSpec};
use mixenc::evalcli::{comparison_table, evaluate_model, render_comparison_table};
use mixenc::mixsim::{Corpus, CorpusConfig};
use mixenc::trainer::{train_phase, Model, Phase, PhaseConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().map_or(Ok(10), |v| v.parse())?;
    let variants: Vec<VariantSpec> = if args.len() > 1 {
        args[1..].iter().map(|v| v.parse()).collect::<Result<_, _>>()?
    } else {
        VariantSpec::TABLE_ROWS.to_vec()
    };

    let corpus = Corpus::generate(&CorpusConfig::default(), 200, 50, 50)?;
    let mut sep = Model::new(Default::default(), Default::default(), Default::default());
    train_phase(&mut sep, &PhaseConfig::default_for(Phase::SepPretrain), &corpus.train, &corpus.dev, 0, None)?;

    let mut reports = Vec::new();
    for v in variants {
        let mut model = sep.clone();
        model.am = AmConfig { variant: v, ..model.am };
        model.init_am(&mut ChaCha8Rng::seed_from_u64(0))?;
        let pcfg = PhaseConfig { epochs, ..PhaseConfig::desk_scale(Phase::AmTrain) };
        train_phase(&mut model, &pcfg, &corpus.train, &corpus.dev, 0, None)?;
        let report = evaluate_model(&model, &corpus, format!("in-memory {v}"))?;
        eprintln!("{v} done");
        reports.push(report);
    }
    print!("{}", render_comparison_table(&comparison_table(&reports)?));
    Ok(())
}
