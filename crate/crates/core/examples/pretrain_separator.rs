//! Pretrains the separator on a small disjoint-band corpus and prints the
//! per-epoch log.
//!
//! cargo run --release --example pretrain_separator -- [n_train] [epochs]

use std::time::Instant;

use mixenc::mixsim::{Corpus, CorpusConfig};
use mixenc::separator::{init_separator, pretrain_separator, PretrainConfig, SeparatorConfig, TrainSource};
use mixenc::tensor::ParamSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let n_train = args.first().copied().unwrap_or(200);
    let epochs = args.get(1).copied().unwrap_or(10);
    let corpus = Corpus::generate(&CorpusConfig::default(), n_train, 50, 0)?;
    let cfg = SeparatorConfig::default();
    let mut params = ParamSet::new();
    init_separator(&mut params, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
    let pcfg = PretrainConfig { epochs, ..Default::default() };
    let start = Instant::now();
    let log = pretrain_separator(&mut params, &cfg, &pcfg, TrainSource::Fixed(&corpus.train), &corpus.dev)?;
    for row in &log {
        println!(
            "epoch {:2}  train {:8.3}  dev {:8.3}  dev SDRi {:6.2} dB",
            row.epoch, row.train_loss, row.dev_loss, row.dev_sdr_improvement_db
        );
    }
    println!("{} parameters, {:.1} s", params.numel(), start.elapsed().as_secs_f64());
    Ok(())
}
