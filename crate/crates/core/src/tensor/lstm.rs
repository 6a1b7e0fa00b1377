//! Fused LSTM layer (input, forget, cell and output gates) with hand-written
//! backpropagation through time.

use rand::Rng;

use super::kernels::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, sigmoid};
use super::{ParamSet, Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
    Bidirectional,
}

impl Direction {
    /// Output width for a hidden size `hidden`.
    pub fn output_dim(self, hidden: usize) -> usize {
        match self {
            Direction::Bidirectional => 2 * hidden,
            _ => hidden,
        }
    }
}

/// Parameter names of a single-direction LSTM: `wx: D×4H`, `wh: H×4H`,
/// `b: 4H`, gate blocks ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmWeights {
    pub wx: String,
    pub wh: String,
    pub b: String,
}

impl LstmWeights {
    pub fn named(prefix: &str) -> Self {
        Self { wx: format!("{prefix}.wx"), wh: format!("{prefix}.wh"), b: format!("{prefix}.b") }
    }

    fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, input_dim: usize, hidden: usize, rng: &mut R) {
        let mut wx = Tensor::uniform_init(vec![input_dim, 4 * hidden], input_dim, rng);
        wx.data_mut().iter_mut().for_each(|v| *v *= INPUT_GAIN);
        params.insert(&self.wx, wx.requiring_grad());
        params.insert(&self.wh, Tensor::uniform_init(vec![hidden, 4 * hidden], hidden, rng).requiring_grad());
        let mut b = Tensor::uniform_init(vec![4 * hidden], hidden, rng);
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v += 1.0);
        params.insert(&self.b, b.requiring_grad());
    }

    fn apply(&self, tape: &mut Tape, params: &ParamSet, input: Var, reverse: bool) -> Result<Var> {
        let wx = tape.param(params, &self.wx)?;
        let wh = tape.param(params, &self.wh)?;
        let b = tape.param(params, &self.b)?;
        tape.lstm(input, wx, wh, b, reverse)
    }
}

/// Input weights start at `Uniform(±INPUT_GAIN/√D)`, forget biases near 1.
const INPUT_GAIN: f64 = 3.0;

fn direction_weights(prefix: &str, direction: Direction) -> Vec<(LstmWeights, bool)> {
    match direction {
        Direction::Forward => vec![(LstmWeights::named(prefix), false)],
        Direction::Backward => vec![(LstmWeights::named(prefix), true)],
        Direction::Bidirectional => vec![
            (LstmWeights::named(&format!("{prefix}.fwd")), false),
            (LstmWeights::named(&format!("{prefix}.bwd")), true),
        ],
    }
}

/// Registers the weights of one recurrent layer under `prefix`. A
/// bidirectional layer gets `{prefix}.fwd.*` and `{prefix}.bwd.*`.
pub fn lstm_params<R: Rng + ?Sized>(
    params: &mut ParamSet,
    prefix: &str,
    input_dim: usize,
    hidden: usize,
    direction: Direction,
    rng: &mut R,
) {
    for (w, _) in direction_weights(prefix, direction) {
        w.init(params, input_dim, hidden, rng);
    }
}

/// Runs one recurrent layer over the `T × D` input. Bidirectional output is
/// `[forward ∥ backward]` per frame.
pub fn recurrent_layer_forward(
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &str,
    input: Var,
    direction: Direction,
) -> Result<Var> {
    let outs = direction_weights(prefix, direction)
        .into_iter()
        .map(|(w, reverse)| w.apply(tape, params, input, reverse))
        .collect::<Result<Vec<_>>>()?;
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat_cols(&outs)
    }
}

pub(crate) struct LstmCache {
    reverse: bool,
    hidden: usize,
    /// Post-activation gates, `T × 4H` in time order.
    gates: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
    /// Hidden outputs, `T × H` in time order.
    out: Vec<f64>,
}

pub(crate) struct LstmGrads {
    pub x: Vec<f64>,
    pub wx: Vec<f64>,
    pub wh: Vec<f64>,
    pub b: Vec<f64>,
}

fn time_index(step: usize, frames: usize, reverse: bool) -> usize {
    if reverse {
        frames - 1 - step
    } else {
        step
    }
}

pub(crate) fn forward(x: &Tensor, wx: &Tensor, wh: &Tensor, b: &Tensor, reverse: bool) -> Result<(Tensor, LstmCache)> {
    let (frames, d) = (x.rows(), x.cols());
    let hidden = wh.rows();
    let g4 = 4 * hidden;
    if x.shape().len() != 2
        || frames == 0
        || wx.shape() != [d, g4]
        || wh.shape() != [hidden, g4]
        || b.numel() != g4
    {
        return Err(TensorError::Dimension {
            op: "lstm",
            detail: format!("x {:?}, wx {:?}, wh {:?}, b {:?}", x.shape(), wx.shape(), wh.shape(), b.shape()),
        });
    }

    let mut pre: Vec<f64> = (0..frames).flat_map(|_| b.data().iter().copied()).collect();
    gemm_acc(x.data(), wx.data(), &mut pre, frames, d, g4);

    let mut gates = pre;
    let mut cell = vec![0.0; frames * hidden];
    let mut tanh_cell = vec![0.0; frames * hidden];
    let mut out = vec![0.0; frames * hidden];
    let mut h_prev = vec![0.0; hidden];
    let mut c_prev = vec![0.0; hidden];

    for step in 0..frames {
        let t = time_index(step, frames, reverse);
        let a = &mut gates[t * g4..(t + 1) * g4];
        gemm_acc(&h_prev, wh.data(), a, 1, hidden, g4);
        for j in 0..hidden {
            let i = sigmoid(a[j]);
            let f = sigmoid(a[hidden + j]);
            let g = a[2 * hidden + j].tanh();
            let o = sigmoid(a[3 * hidden + j]);
            a[j] = i;
            a[hidden + j] = f;
            a[2 * hidden + j] = g;
            a[3 * hidden + j] = o;
            let c = f * c_prev[j] + i * g;
            let tc = c.tanh();
            cell[t * hidden + j] = c;
            tanh_cell[t * hidden + j] = tc;
            out[t * hidden + j] = o * tc;
        }
        h_prev.copy_from_slice(&out[t * hidden..(t + 1) * hidden]);
        c_prev.copy_from_slice(&cell[t * hidden..(t + 1) * hidden]);
    }

    let value = Tensor::matrix(frames, hidden, out.clone())?;
    Ok((value, LstmCache { reverse, hidden, gates, cell, tanh_cell, out }))
}

pub(crate) fn backward(cache: &LstmCache, x: &Tensor, wx: &Tensor, wh: &Tensor, grad_out: &[f64]) -> LstmGrads {
    let (frames, d) = (x.rows(), x.cols());
    let hidden = cache.hidden;
    let g4 = 4 * hidden;

    let mut da_all = vec![0.0; frames * g4];
    let mut gwh = vec![0.0; hidden * g4];
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];

    for step in (0..frames).rev() {
        let t = time_index(step, frames, cache.reverse);
        let prev = (step > 0).then(|| time_index(step - 1, frames, cache.reverse));
        let gate = &cache.gates[t * g4..(t + 1) * g4];
        let da = &mut da_all[t * g4..(t + 1) * g4];
        for j in 0..hidden {
            let (i, f, g, o) = (gate[j], gate[hidden + j], gate[2 * hidden + j], gate[3 * hidden + j]);
            let tc = cache.tanh_cell[t * hidden + j];
            let c_prev = prev.map_or(0.0, |p| cache.cell[p * hidden + j]);
            let dh = grad_out[t * hidden + j] + dh_next[j];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            da[j] = dc * g * i * (1.0 - i);
            da[hidden + j] = dc * c_prev * f * (1.0 - f);
            da[2 * hidden + j] = dc * i * (1.0 - g * g);
            da[3 * hidden + j] = d_o * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        gemm_a_bt_acc(da, wh.data(), &mut dh_next, 1, g4, hidden);
        if let Some(p) = prev {
            gemm_at_b_acc(&cache.out[p * hidden..(p + 1) * hidden], da, &mut gwh, 1, hidden, g4);
        }
    }

    let mut gwx = vec![0.0; d * g4];
    gemm_at_b_acc(x.data(), &da_all, &mut gwx, frames, d, g4);
    let mut gx = vec![0.0; frames * d];
    gemm_a_bt_acc(&da_all, wx.data(), &mut gx, frames, g4, d);
    let mut gb = vec![0.0; g4];
    for row in da_all.chunks(g4) {
        gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    LstmGrads { x: gx, wx: gwx, wh: gwh, b: gb }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(frames: usize, d: usize, h: usize, direction: Direction) -> (ParamSet, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = ParamSet::new();
        lstm_params(&mut params, "l", d, h, direction, &mut rng);
        let x = Tensor::uniform_init(vec![frames, d], 1, &mut rng);
        (params, x)
    }

    #[test]
    fn single_frame_equals_one_cell_step_from_zero_state() {
        let (params, x) = setup(1, 3, 2, Direction::Forward);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = recurrent_layer_forward(&mut tape, &params, "l", xv, Direction::Forward).unwrap();

        let wx = params.get("l.wx").unwrap();
        let b = params.get("l.b").unwrap();
        let h = 2;
        let mut a = b.data().to_vec();
        for (dd, xv) in x.data().iter().enumerate() {
            for j in 0..4 * h {
                a[j] += xv * wx.at(dd, j);
            }
        }
        for j in 0..h {
            let i = sigmoid(a[j]);
            let g = a[2 * h + j].tanh();
            let o = sigmoid(a[3 * h + j]);
            let expect = o * (i * g).tanh();
            assert!((tape.value(y).data()[j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_direction_is_time_reversed_forward() {
        let (params, x) = setup(6, 3, 4, Direction::Forward);
        let reversed: Vec<f64> = (0..6).rev().flat_map(|t| x.row(t).to_vec()).collect();
        let xr = Tensor::matrix(6, 3, reversed).unwrap();

        let mut tape = Tape::new();
        let a = tape.constant(x);
        let b = tape.constant(xr);
        let fwd = recurrent_layer_forward(&mut tape, &params, "l", a, Direction::Forward).unwrap();
        let bwd = recurrent_layer_forward(&mut tape, &params, "l", b, Direction::Backward).unwrap();
        for t in 0..6 {
            assert_eq!(tape.value(fwd).row(t), tape.value(bwd).row(5 - t));
        }
    }

    #[test]
    fn bidirectional_output_width() {
        let (params, x) = setup(4, 3, 5, Direction::Bidirectional);
        let mut tape = Tape::new();
        let a = tape.constant(x);
        let y = recurrent_layer_forward(&mut tape, &params, "l", a, Direction::Bidirectional).unwrap();
        assert_eq!(tape.value(y).shape(), &[4, 10]);
    }
}
