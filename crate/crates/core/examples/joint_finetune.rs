//! Full three-phase pipeline on a small corpus: separator pretraining,
//! acoustic-model training on frozen separator outputs, then joint
//! fine-tuning through the feature front end.
//!
//! cargo run --release --example joint_finetune -- [variant] [am_epochs] [joint_epochs]

use mixenc::am::{AmConfig, VariantSpec};
use mixenc::evalcli::evaluate_split;
use mixenc::mixsim::{Corpus, CorpusConfig, Split};
use mixenc::separator::SEP_PREFIX;
use mixenc::trainer::{train_phase, Model, Phase, PhaseConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant: VariantSpec = args.first().map_or(Ok(VariantSpec::COMB_MAS), |v| v.parse())?;
    let am_epochs = args.get(1).map_or(Ok(10), |v| v.parse())?;
    let joint_epochs = args.get(2).map_or(Ok(3), |v| v.parse())?;

    let corpus = Corpus::generate(&CorpusConfig::default(), 120, 30, 0)?;
    let am = AmConfig { variant, ..AmConfig::default() };
    let mut model = Model::new(Default::default(), am, Default::default());

    let sep = PhaseConfig { epochs: 5, ..PhaseConfig::default_for(Phase::SepPretrain) };
    let out = train_phase(&mut model, &sep, &corpus.train, &corpus.dev, 0, None)?;
    println!("sep_pretrain: dev SDRi {:.2} dB", out.dev_sdr_improvement_db.unwrap_or(f64::NAN));

    model.init_am(&mut ChaCha8Rng::seed_from_u64(0))?;
    let frozen = model.params.subset(SEP_PREFIX);
    let am = PhaseConfig { epochs: am_epochs, ..PhaseConfig::desk_scale(Phase::AmTrain) };
    let out = train_phase(&mut model, &am, &corpus.train, &corpus.dev, 0, None)?;
    let unchanged = model.params.subset(SEP_PREFIX).values_bitwise_eq(&frozen);
    println!("am_train: dev CE {:.4} -> {:.4}, separator unchanged: {unchanged}", out.initial_dev_loss, out.best_dev_loss);
    let before = evaluate_split(&model, Split::Dev, &corpus.dev)?;

    let joint = PhaseConfig { epochs: joint_epochs, ..PhaseConfig::desk_scale(Phase::Joint) };
    let out = train_phase(&mut model, &joint, &corpus.train, &corpus.dev, 0, None)?;
    for r in &out.log {
        println!("joint epoch {}  lr {:.1e}  train CE {:.4}  dev CE {:.4}", r.epoch, r.lr, r.train_loss, r.dev_loss);
    }
    let after = evaluate_split(&model, Split::Dev, &corpus.dev)?;
    println!(
        "dev TER {:.4} -> {:.4}, SDRi {:.2} -> {:.2} dB",
        before.token_error_rate, after.token_error_rate, before.mean_sdr_improvement_db, after.mean_sdr_improvement_db
    );
    Ok(())
}
