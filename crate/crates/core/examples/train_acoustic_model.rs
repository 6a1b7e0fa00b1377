//! Trains the acoustic model on frozen separator outputs and reports dev
//! error rates before and after.
//!
//! cargo run --release --example train_acoustic_model -- [variant] [epochs] [sep.ckpt]
//!
//! Without a separator checkpoint one is pretrained first and written to
//! `sep.ckpt` in the working directory.

use std::path::PathBuf;
use std::time::Instant;

use mixenc::am::{AmConfig, VariantSpec};
use mixenc::dsp::FeatureConfig;
use mixenc::evalcli::evaluate_split;
use mixenc::mixsim::{Corpus, CorpusConfig, Split};
use mixenc::separator::SeparatorConfig;
use mixenc::trainer::{train_phase, Model, Phase, PhaseConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant: VariantSpec = args.first().map_or(Ok(VariantSpec::COMB_MAS), |v| v.parse())?;
    let epochs: usize = args.get(1).map_or(Ok(20), |e| e.parse())?;
    let sep_path = PathBuf::from(args.get(2).map_or("sep.ckpt", String::as_str));
    let seed = std::env::var("SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(0);

    let corpus = Corpus::generate(&CorpusConfig::default(), 200, 50, 0)?;
    let am = AmConfig { variant, ..AmConfig::default() };
    let mut model = Model::new(SeparatorConfig::default(), am, FeatureConfig::default());
    let start = Instant::now();
    if sep_path.exists() {
        model.params = Model::load(&sep_path)?.params;
    } else {
        let pcfg = PhaseConfig::default_for(Phase::SepPretrain);
        let out = train_phase(&mut model, &pcfg, &corpus.train, &corpus.dev, 0, None)?;
        println!("separator: dev SDRi {:.2} dB", out.dev_sdr_improvement_db.unwrap_or(f64::NAN));
        model.save(&sep_path)?;
    }

    model.init_am(&mut ChaCha8Rng::seed_from_u64(seed))?;
    let before = evaluate_split(&model, Split::Dev, &corpus.dev)?;
    let pcfg = PhaseConfig { epochs, ..PhaseConfig::desk_scale(Phase::AmTrain) };
    let t = Instant::now();
    let out = train_phase(&mut model, &pcfg, &corpus.train, &corpus.dev, seed, None)?;
    for r in &out.log {
        println!("epoch {:2}  lr {:.2e}  train CE {:.4}  dev CE {:.4}", r.epoch, r.lr, r.train_loss, r.dev_loss);
    }
    let after = evaluate_split(&model, Split::Dev, &corpus.dev)?;
    println!(
        "variant {variant}: dev TER {:.4} -> {:.4}, FER {:.4} -> {:.4} ({:.1} s training, {:.1} s total)",
        before.token_error_rate,
        after.token_error_rate,
        before.frame_error_rate,
        after.frame_error_rate,
        t.elapsed().as_secs_f64(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
