//! Simulates a two-speaker corpus, writes it as WAV files plus labels and
//! prints per-example statistics.
//!
//! cargo run --release --example simulate_corpus -- <out_dir> [n_train] [n_dev] [n_eval]

use mixenc::mixsim::{write_corpus, CorpusConfig, SILENCE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().ok_or("usage: simulate_corpus <out_dir> [n_train] [n_dev] [n_eval]")?;
    let n = |i: usize, default: usize| args.get(i).map_or(Ok(default), |v| v.parse::<usize>());
    let cfg = CorpusConfig::default();
    let corpus = write_corpus(out.as_ref(), n(1, 20)?, n(2, 5)?, n(3, 5)?, &cfg)?;

    println!("{:<14} {:>7} {:>6} {:>6} {:>8} {:>14}", "id", "samples", "t60", "snr", "speakers", "speech frames");
    for ex in corpus.train.iter().chain(&corpus.dev).chain(&corpus.eval) {
        let active = ex.frame_labels.each_ref().map(|l| l.iter().filter(|&&v| v != SILENCE).count());
        println!(
            "{:<14} {:>7} {:>6.3} {:>6.1} {:>4},{:<3} {:>6}/{:<3}{:>4}",
            ex.id,
            ex.len(),
            ex.meta.t60_s,
            ex.meta.snr_db,
            ex.speakers[0],
            ex.speakers[1],
            active[0],
            active[1],
            ex.frames()
        );
    }
    println!("wrote {} mixtures to {out}", corpus.train.len() + corpus.dev.len() + corpus.eval.len());
    Ok(())
}
