use mixenc::am::{am_forward_graph, am_loss_graph, init_am, AmConfig, VariantSpec};
use mixenc::separator::IDENTITY;
use mixenc::tensor::{
    gradient_check, lstm_params, recurrent_layer_forward, Direction, GradCheckOptions, ParamSet, Tape, Tensor,
    TensorError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Central difference of a scalar function of one coordinate.
fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[test]
fn matmul_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParamSet::new();
    params.insert("a", random_matrix(&mut rng, 3, 4).requiring_grad());
    params.insert("b", random_matrix(&mut rng, 4, 2).requiring_grad());
    let weights = random_matrix(&mut rng, 3, 2);
    let report = gradient_check(&params, GradCheckOptions::default(), |tape: &mut Tape, p: &ParamSet| -> Result<_, TensorError> {
        let a = tape.param(p, "a")?;
        let b = tape.param(p, "b")?;
        let ab = tape.matmul(a, b)?;
        let w = tape.constant(weights.clone());
        let weighted = tape.mul(ab, w)?;
        tape.sum(weighted)
    })
    .unwrap();
    assert_eq!(report.coords_checked, 20);
    assert!(report.max_rel_error <= 1e-6, "{report:?}");
}

#[test]
fn sigmoid_derivative_at_one() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(1.0).requiring_grad());
    let y = tape.sigmoid(x).unwrap();
    tape.backward(y).unwrap();
    let analytic = tape.grad(x).unwrap()[0];
    let numeric = central_difference(|v| 1.0 / (1.0 + (-v).exp()), 1.0, 1e-5);
    assert!((analytic - numeric).abs() / numeric.abs() <= 1e-6);
}

#[test]
fn cross_entropy_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let logits = random_matrix(&mut rng, 5, 3);
    let targets: Vec<usize> = (0..5).map(|_| rng.gen_range(0..3)).collect();
    let mut tape = Tape::new();
    let x = tape.constant(logits.clone());
    let logp = tape.log_softmax_rows(x).unwrap();
    let ce = tape.cross_entropy(logp, &targets, None).unwrap();

    let mut oracle = 0.0;
    for (r, &y) in targets.iter().enumerate() {
        let row = logits.row(r);
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        oracle += -(row[y].exp() / z).ln();
    }
    oracle /= 5.0;
    assert!((tape.value(ce).item() - oracle).abs() <= 1e-12);
}

#[test]
fn two_layer_recurrent_net_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = ParamSet::new();
    lstm_params(&mut params, "l0", 3, 4, Direction::Bidirectional, &mut rng);
    lstm_params(&mut params, "l1", 8, 3, Direction::Forward, &mut rng);
    let input = random_matrix(&mut rng, 10, 3);
    let weights = random_matrix(&mut rng, 10, 3);
    let report = gradient_check(&params, GradCheckOptions::default(), |tape: &mut Tape, p: &ParamSet| -> Result<_, TensorError> {
        let x = tape.constant(input.clone());
        let h = recurrent_layer_forward(tape, p, "l0", x, Direction::Bidirectional)?;
        let h = recurrent_layer_forward(tape, p, "l1", h, Direction::Forward)?;
        let w = tape.constant(weights.clone());
        let y = tape.mul(h, w)?;
        tape.sum(y)
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

#[test]
fn comb_mas_acoustic_model_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = AmConfig {
        variant: VariantSpec::new(2, 1, 1, 1),
        feature_dim: 3,
        num_classes: 4,
        enc_width: 2,
        comb_width: 3,
        aux_scale: 0.3,
    };
    let mut params = ParamSet::new();
    init_am(&mut params, &cfg, &mut rng).unwrap();
    let feats: Vec<Tensor> = (0..3).map(|_| random_matrix(&mut rng, 4, 3)).collect();
    let targets = [0, 1].map(|_| (0..4).map(|_| rng.gen_range(0..4)).collect::<Vec<_>>());
    let report = gradient_check(&params, GradCheckOptions::default(), |tape: &mut Tape, p: &ParamSet| -> Result<_, mixenc::am::AmError> {
        let m = tape.constant(feats[0].clone());
        let s = [tape.constant(feats[1].clone()), tape.constant(feats[2].clone())];
        let g = am_forward_graph(tape, p, &cfg, m, s, None)?;
        am_loss_graph(tape, &g, &targets, IDENTITY, cfg.aux_scale)
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

#[test]
fn softmax_rows_are_normalised() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(6, 5, (0..30).map(|_| rng.gen_range(-50.0..50.0)).collect()).unwrap());
    let p = tape.softmax_rows(x).unwrap();
    let out = tape.value(p);
    for r in 0..6 {
        assert!((out.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn forward_ops_reject_non_finite_results() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::scalar(800.0));
    assert!(tape.exp(x).is_err());
}
