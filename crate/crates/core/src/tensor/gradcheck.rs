use super::{ParamSet, Tape, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Gradients smaller than this are compared absolutely rather than
    /// relatively.
    pub abs_floor: f64,
    /// Check at most this many evenly strided coordinates per tensor.
    pub max_coords_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-5, abs_floor: 1e-6, max_coords_per_param: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of the scalar graph built by `f` with
/// central differences over every trainable coordinate of `params`.
pub fn gradient_check<E, F>(params: &ParamSet, options: GradCheckOptions, mut f: F) -> Result<GradCheckReport, E>
where
    E: From<TensorError>,
    F: FnMut(&mut Tape, &ParamSet) -> Result<Var, E>,
{
    let mut analytic_params = params.clone();
    analytic_params.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, &analytic_params)?;
    tape.backward(out)?;
    tape.accumulate_into(&mut analytic_params);

    let mut eval = |p: &ParamSet| -> Result<f64, E> {
        let mut tape = Tape::new();
        let out = f(&mut tape, p)?;
        Ok(tape.value(out).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    let mut probe = params.clone();
    let names: Vec<String> = params.iter().filter(|(_, t)| t.requires_grad()).map(|(n, _)| n.to_string()).collect();
    for name in names {
        let numel = params.get(&name).map_or(0, |t| t.numel());
        let stride = options.max_coords_per_param.map_or(1, |m| numel.div_ceil(m.max(1)).max(1));
        let zeros = vec![0.0; numel];
        let grads = analytic_params.get(&name).and_then(|t| t.grad()).unwrap_or(&zeros).to_vec();
        for idx in (0..numel).step_by(stride) {
            let orig = params.get(&name).map(|t| t.data()[idx]).unwrap_or_default();
            let eps = options.epsilon * orig.abs().max(1.0);
            set(&mut probe, &name, idx, orig + eps);
            let plus = eval(&probe)?;
            set(&mut probe, &name, idx, orig - eps);
            let minus = eval(&probe)?;
            set(&mut probe, &name, idx, orig);
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(grads[idx], numeric, options.abs_floor);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = idx;
                report.analytic = grads[idx];
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn set(params: &mut ParamSet, name: &str, idx: usize, value: f64) {
    if let Some(t) = params.get_mut(name) {
        t.data_mut()[idx] = value;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_norm_is_exact() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::new(vec![4], vec![0.3, -1.7, 2.2, 0.9]).unwrap().requiring_grad());
        let report = gradient_check::<TensorError, _>(&params, GradCheckOptions::default(), |tape, p| {
            let w = tape.param(p, "w")?;
            let sq = tape.square(w)?;
            tape.sum(sq)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-8, "{report:?}");
        assert_eq!(report.coords_checked, 4);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu at exactly 0 has a kink: central differences see slope 0.5.
        let mut params = ParamSet::new();
        params.insert("w", Tensor::new(vec![1], vec![0.0]).unwrap().requiring_grad());
        let report = gradient_check::<TensorError, _>(&params, GradCheckOptions::default(), |tape, p| {
            let w = tape.param(p, "w")?;
            let r = tape.relu(w)?;
            tape.sum(r)
        })
        .unwrap();
        assert!(report.max_rel_error > 0.4);
    }
}
