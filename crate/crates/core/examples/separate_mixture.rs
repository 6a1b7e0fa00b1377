//! Separates a few dev mixtures with a briefly trained separator and
//! shows the PIT permutation, the target assignment from magnitude
//! spectra and per-speaker SDR improvements.
//!
//! cargo run --release --example separate_mixture -- [epochs]

use mixenc::am::assign_targets;
use mixenc::dsp::{stft, DEFAULT_SDR_BOUND_DB};
use mixenc::mixsim::{Corpus, CorpusConfig};
use mixenc::separator::{pit_loss, sdr_improvement};
use mixenc::trainer::{train_phase, Model, Phase, PhaseConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map_or(Ok(3), |s| s.parse())?;
    let corpus = Corpus::generate(&CorpusConfig::default(), 100, 8, 0)?;
    let mut model = Model::new(Default::default(), Default::default(), Default::default());
    let pcfg = PhaseConfig { epochs, ..PhaseConfig::default_for(Phase::SepPretrain) };
    train_phase(&mut model, &pcfg, &corpus.train, &corpus.dev, 0, None)?;

    let cfg = corpus.config.stft();
    for ex in &corpus.dev {
        let r = model.separate(&ex.mixture)?;
        let (loss, pit) = pit_loss(&r.est_waveforms, &ex.references, DEFAULT_SDR_BOUND_DB)?;
        let refs = ex.references.clone().map(|w| stft(&w, &cfg)).into_iter().collect::<Result<Vec<_>, _>>()?;
        let assigned = assign_targets(&r.est_specs, &[refs[0].clone(), refs[1].clone()])?;
        let gain = sdr_improvement(ex, &r, DEFAULT_SDR_BOUND_DB)?;
        println!(
            "{}  PIT loss {loss:7.2}  pit {pit:?}  assigned {assigned:?}  SDRi {:5.2} / {:5.2} dB",
            ex.id, gain[0], gain[1]
        );
    }
    Ok(())
}
