use std::f64::consts::LN_10;

use super::stft::Spectrogram;
use super::{DspError, Waveform};
use crate::tensor::{Tape, Var};

/// Reported SDR for a perfect estimate.
pub const SDR_CAP_DB: f64 = 100.0;
pub const DEFAULT_SDR_BOUND_DB: f64 = 30.0;

fn check_pair(reference: &[f64], estimate: &[f64]) -> Result<f64, DspError> {
    if reference.len() != estimate.len() {
        return Err(DspError::Shape(format!("reference {} vs estimate {} samples", reference.len(), estimate.len())));
    }
    let energy: f64 = reference.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(DspError::ZeroReference);
    }
    Ok(energy)
}

/// `10·log10(‖ref‖² / ‖ref − est‖²)`, capped at [`SDR_CAP_DB`].
pub fn sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64, DspError> {
    let energy = check_pair(&reference.samples, &estimate.samples)?;
    let err: f64 = reference.samples.iter().zip(&estimate.samples).map(|(r, e)| (r - e) * (r - e)).sum();
    if err == 0.0 {
        return Ok(SDR_CAP_DB);
    }
    Ok((10.0 * (energy / err).log10()).min(SDR_CAP_DB))
}

/// `−10·log10(‖ref‖² / (‖ref − est‖² + τ‖ref‖²))` with `τ = 10^(−bound/10)`;
/// bounded below by `−bound_db`, attained only at `est = ref`.
pub fn soft_bounded_sdr_loss(reference: &Waveform, estimate: &Waveform, bound_db: f64) -> Result<f64, DspError> {
    let energy = check_pair(&reference.samples, &estimate.samples)?;
    let err: f64 = reference.samples.iter().zip(&estimate.samples).map(|(r, e)| (r - e) * (r - e)).sum();
    let tau = 10f64.powf(-bound_db / 10.0);
    Ok(-10.0 * (energy / (err + tau * energy)).log10())
}

/// [`soft_bounded_sdr_loss`] with a differentiable 1-D estimate node.
pub fn soft_bounded_sdr_loss_graph(
    tape: &mut Tape,
    reference: &[f64],
    estimate: Var,
    bound_db: f64,
) -> Result<Var, DspError> {
    let energy = check_pair(reference, tape.value(estimate).data())?;
    let tau = 10f64.powf(-bound_db / 10.0);
    let r = tape.constant(crate::tensor::Tensor::new(vec![reference.len()], reference.to_vec())?);
    let diff = tape.sub(r, estimate)?;
    let sq = tape.square(diff)?;
    let err = tape.sum(sq)?;
    let denom = tape.add_scalar(err, tau * energy)?;
    let log = tape.log(denom)?;
    let scaled = tape.scale(log, 10.0 / LN_10)?;
    Ok(tape.add_scalar(scaled, -10.0 * energy.log10())?)
}

/// Magnitude compression applied before [`magnitude_mse_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MagnitudeScale {
    #[default]
    Raw,
    /// `ln(1e-8 + |X|)`.
    Log,
}

/// Mean over all cells of `(|a| − |b|)²`.
pub fn magnitude_mse(a: &Spectrogram, b: &Spectrogram) -> Result<f64, DspError> {
    magnitude_mse_with(a, b, MagnitudeScale::Raw)
}

pub fn magnitude_mse_with(a: &Spectrogram, b: &Spectrogram, scale: MagnitudeScale) -> Result<f64, DspError> {
    if a.frames != b.frames || a.bins != b.bins {
        return Err(DspError::Shape(format!("{}×{} vs {}×{}", a.frames, a.bins, b.frames, b.bins)));
    }
    let f = |m: f64| match scale {
        MagnitudeScale::Raw => m,
        MagnitudeScale::Log => (1e-8 + m).ln(),
    };
    let n = a.re.len();
    let sum: f64 = (0..n)
        .map(|i| {
            let d = f(a.re[i].hypot(a.im[i])) - f(b.re[i].hypot(b.im[i]));
            d * d
        })
        .sum();
    Ok(sum / n.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftConfig;

    fn wave(v: &[f64]) -> Waveform {
        Waveform::new(v.to_vec(), 8000)
    }

    #[test]
    fn sdr_closed_forms() {
        let r = wave(&[0.5, -1.0, 0.25, 2.0]);
        assert_eq!(sdr(&r, &r).unwrap(), SDR_CAP_DB);
        assert!((sdr(&r, &r.scaled(0.5)).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert!(sdr(&r, &Waveform::zeros(4, 8000)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn sdr_errors() {
        let z = Waveform::zeros(4, 8000);
        assert!(matches!(sdr(&z, &z), Err(DspError::ZeroReference)));
        assert!(matches!(sdr(&wave(&[1.0]), &z), Err(DspError::Shape(_))));
    }

    #[test]
    fn soft_loss_closed_forms() {
        let r = wave(&[0.5, -1.0, 0.25, 2.0]);
        assert_eq!(soft_bounded_sdr_loss(&r, &r, 30.0).unwrap(), -30.0);
        let zero = soft_bounded_sdr_loss(&r, &Waveform::zeros(4, 8000), 30.0).unwrap();
        let expect = -10.0 * (1.0 / (1.0 + 1e-3f64)).log10();
        assert!((zero - expect).abs() < 1e-15);
        assert!((zero - 0.00434).abs() < 1e-5);
    }

    #[test]
    fn soft_loss_graph_matches_plain() {
        let r = wave(&[0.5, -1.0, 0.25, 2.0]);
        let e = wave(&[0.4, -0.8, 0.5, 1.0]);
        let plain = soft_bounded_sdr_loss(&r, &e, 30.0).unwrap();
        let mut tape = Tape::new();
        let ev = tape.constant(crate::tensor::Tensor::new(vec![4], e.samples.clone()).unwrap());
        let l = soft_bounded_sdr_loss_graph(&mut tape, &r.samples, ev, 30.0).unwrap();
        assert!((tape.value(l).item() - plain).abs() < 1e-12);
    }

    #[test]
    fn magnitude_mse_closed_forms() {
        let cfg = StftConfig::default();
        let mut a = Spectrogram::zeros(3, cfg, 8000);
        let mut b = Spectrogram::zeros(3, cfg, 8000);
        a.re.iter_mut().for_each(|v| *v = 1.0);
        b.im.iter_mut().for_each(|v| *v = -3.0);
        assert_eq!(magnitude_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(magnitude_mse(&a, &b).unwrap(), 4.0);
        let c = Spectrogram::zeros(4, cfg, 8000);
        assert!(magnitude_mse(&a, &c).is_err());
    }
}
