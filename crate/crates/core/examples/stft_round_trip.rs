//! Analysis/synthesis round trip and log-mel features of one simulated
//! mixture.
//!
//! cargo run --release --example stft_round_trip

use mixenc::dsp::{features, istft, stft, FeatureConfig};
use mixenc::mixsim::{generate_example, CorpusConfig, SpeakerPool, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = CorpusConfig::default();
    let ex = generate_example(&cfg, &SpeakerPool::new(&cfg), Split::Train, 0)?;
    let stft_cfg = cfg.stft();

    let spec = stft(&ex.mixture, &stft_cfg)?;
    let back = istft(&spec, &stft_cfg, ex.len())?;
    let err = ex.mixture.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("{} samples -> {} frames x {} bins, max round-trip error {err:.2e}", ex.len(), spec.frames, spec.bins);

    let half = istft(&spec.scaled(0.5), &stft_cfg, ex.len())?;
    let lin = ex.mixture.samples.iter().zip(&half.samples).map(|(a, b)| (0.5 * a - b).abs()).fold(0.0, f64::max);
    println!("halved spectrum reconstructs 0.5 x mixture to {lin:.2e}");

    let feats = features(&ex.mixture, &stft_cfg, &FeatureConfig::default())?;
    let means = feats.column_means();
    println!("log-mel features {} x {}", feats.frames, feats.dim);
    for (band, m) in means.iter().enumerate().step_by(5) {
        println!("  band {band:2}: mean {m:7.3}");
    }
    Ok(())
}
