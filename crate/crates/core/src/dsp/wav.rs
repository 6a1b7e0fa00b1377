use std::path::Path;

use super::{DspError, Waveform};

const FULL_SCALE: f64 = 32768.0;

fn to_pcm(v: f64) -> i16 {
    (v * FULL_SCALE).round().clamp(-FULL_SCALE, FULL_SCALE - 1.0) as i16
}

/// The waveform exactly as it reads back after a 16-bit write.
pub fn quantize_pcm16(w: &Waveform) -> Waveform {
    Waveform::new(w.samples.iter().map(|&v| to_pcm(v) as f64 / FULL_SCALE).collect(), w.sample_rate)
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<(), DspError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |source| DspError::Wav { path: path.to_path_buf(), source };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &v in &w.samples {
        writer.write_sample(to_pcm(v)).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

/// Reads a mono 16-bit PCM file into floats in `[−1, 1)`.
pub fn read_wav(path: &Path) -> Result<Waveform, DspError> {
    let wrap = |source| DspError::Wav { path: path.to_path_buf(), source };
    let mut reader = hound::WavReader::open(path).map_err(wrap)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(DspError::Wav { path: path.to_path_buf(), source: hound::Error::Unsupported });
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<Result<Vec<_>, _>>()
        .map_err(wrap)?;
    Ok(Waveform::new(samples, spec.sample_rate))
}
