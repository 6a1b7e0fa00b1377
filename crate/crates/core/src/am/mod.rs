//! Acoustic models on separated speech: separation encoders, the mixture
//! encoder, mixture-aware speaker (MAS) encoders and the combination layer,
//! with auxiliary outputs and target-permutation assignment.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::dsp::{magnitude_mse, DspError, FeatureSeq, Spectrogram};
use crate::separator::{Permutation, IDENTITY, SWAPPED};
use crate::tensor::{lstm_params, recurrent_layer_forward, Direction, ParamSet, Tape, Tensor, TensorError, Var};

pub const AM_PREFIX: &str = "am.";
pub const NORM_SCALE: &str = "am.norm.scale";
pub const NORM_SHIFT: &str = "am.norm.shift";
pub const DEFAULT_AUX_SCALE: f64 = 0.3;

#[derive(Debug, Error)]
pub enum AmError {
    #[error("invalid variant {variant}: {detail}")]
    Variant { variant: String, detail: String },
    #[error("frame alignment: {0}")]
    Alignment(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

/// Layer counts of the encoder components. `sep = 0` and `mix = 0` are
/// identities, `mix < 0` removes the mixture encoder, `mas = 0` and
/// `comb = 0` remove those components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VariantSpec {
    pub sep_layers: usize,
    pub mix_layers: i32,
    pub mas_layers: usize,
    pub comb_layers: usize,
}

/// The four structures the layer counts select.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    /// Separation encoder and a shared head per speaker.
    Modular,
    /// Separation and mixture encodings fused, then the MAS encoder.
    MixtureAware,
    /// Combination layer over `sep₀ ∥ mix ∥ sep₁`.
    Combination,
    /// Combination layer over `mas₀ ∥ mas₁`.
    CombinationMas,
}

impl VariantSpec {
    pub const fn new(sep_layers: usize, mix_layers: i32, mas_layers: usize, comb_layers: usize) -> Self {
        Self { sep_layers, mix_layers, mas_layers, comb_layers }
    }

    pub const MODULAR_BASELINE: VariantSpec = VariantSpec::new(6, -1, 0, 0);
    pub const COMB_MAS: VariantSpec = VariantSpec::new(6, 4, 1, 1);

    /// All eight layer configurations of the published comparison table.
    pub const TABLE_ROWS: [VariantSpec; 8] = [
        VariantSpec::new(6, -1, 0, 0),
        VariantSpec::new(8, -1, 0, 0),
        VariantSpec::new(0, 6, 4, 0),
        VariantSpec::new(6, 0, 4, 0),
        VariantSpec::new(6, 4, 0, 0),
        VariantSpec::new(6, 4, 0, 1),
        VariantSpec::new(6, 4, 2, 0),
        VariantSpec::new(6, 4, 1, 1),
    ];

    pub fn has_mix(&self) -> bool {
        self.mix_layers >= 0
    }

    pub fn has_sep_encoder(&self) -> bool {
        self.sep_layers > 0
    }

    pub fn has_comb(&self) -> bool {
        self.comb_layers > 0
    }

    /// Element-wise addition only when both encoders are real encoders.
    pub fn fuses_by_addition(&self) -> bool {
        self.sep_layers > 0 && self.mix_layers > 0
    }

    pub fn structure(&self) -> Structure {
        match (self.has_mix(), self.has_comb(), self.mas_layers > 0) {
            (false, _, _) => Structure::Modular,
            (true, false, _) => Structure::MixtureAware,
            (true, true, false) => Structure::Combination,
            (true, true, true) => Structure::CombinationMas,
        }
    }

    pub fn validate(&self) -> Result<(), AmError> {
        let bad = |detail: &str| Err(AmError::Variant { variant: self.to_string(), detail: detail.into() });
        if self.mix_layers < -1 {
            return bad("mix layers must be >= -1");
        }
        if !self.has_mix() && self.mas_layers > 0 {
            return bad("a MAS encoder needs the mixture encoder");
        }
        if !self.has_mix() && self.has_comb() {
            return bad("the combination layer needs the mixture encoder");
        }
        Ok(())
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.sep_layers, self.mix_layers, self.mas_layers, self.comb_layers)
    }
}

impl FromStr for VariantSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let err = || format!("expected four comma-separated integers `sep,mix,mas,comb`, got `{s}`");
        if parts.len() != 4 {
            return Err(err());
        }
        let u = |p: &str| p.parse::<usize>().map_err(|_| err());
        let v = VariantSpec::new(u(parts[0])?, parts[1].parse().map_err(|_| err())?, u(parts[2])?, u(parts[3])?);
        v.validate().map_err(|e| e.to_string())?;
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmConfig {
    pub variant: VariantSpec,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Units per direction of the separation, mixture and MAS encoders.
    pub enc_width: usize,
    /// Units per direction of the combination layer.
    pub comb_width: usize,
    pub aux_scale: f64,
}

impl Default for AmConfig {
    fn default() -> Self {
        Self {
            variant: VariantSpec::MODULAR_BASELINE,
            feature_dim: 40,
            num_classes: 12,
            enc_width: 32,
            comb_width: 64,
            aux_scale: DEFAULT_AUX_SCALE,
        }
    }
}

impl AmConfig {
    pub fn validate(&self) -> Result<(), AmError> {
        self.variant.validate()?;
        if self.num_classes < 2 || self.feature_dim == 0 || self.enc_width == 0 || self.comb_width == 0 {
            return Err(AmError::Variant {
                variant: self.variant.to_string(),
                detail: "feature_dim, enc_width and comb_width must be positive and num_classes >= 2".into(),
            });
        }
        Ok(())
    }

    /// Key/value form without `num_classes` and `feature_dim`, which follow
    /// the corpus and the feature front end.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        [
            ("variant", self.variant.to_string()),
            ("enc_width", self.enc_width.to_string()),
            ("comb_width", self.comb_width.to_string()),
            ("aux_scale", self.aux_scale.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let bad = || format!("{key}: cannot parse `{value}`");
        match key {
            "variant" => self.variant = value.parse()?,
            "enc_width" => self.enc_width = value.parse().map_err(|_| bad())?,
            "comb_width" => self.comb_width = value.parse().map_err(|_| bad())?,
            "aux_scale" => self.aux_scale = value.parse().map_err(|_| bad())?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    fn sep_dim(&self) -> usize {
        if self.variant.sep_layers > 0 {
            2 * self.enc_width
        } else {
            self.feature_dim
        }
    }

    fn mix_dim(&self) -> usize {
        if self.variant.mix_layers > 0 {
            2 * self.enc_width
        } else {
            self.feature_dim
        }
    }

    fn fused_dim(&self) -> usize {
        if self.variant.fuses_by_addition() {
            2 * self.enc_width
        } else {
            self.sep_dim() + self.mix_dim()
        }
    }

    fn mas_dim(&self) -> usize {
        if self.variant.mas_layers > 0 {
            2 * self.enc_width
        } else {
            self.fused_dim()
        }
    }

    /// Width of the representation each output head reads.
    fn head_input_dim(&self) -> usize {
        match self.variant.structure() {
            Structure::Modular => self.sep_dim(),
            Structure::MixtureAware => self.mas_dim(),
            Structure::Combination | Structure::CombinationMas => 2 * self.comb_width,
        }
    }

    fn comb_input_dim(&self) -> usize {
        match self.variant.structure() {
            Structure::Combination => 2 * self.sep_dim() + self.mix_dim(),
            _ => 2 * self.mas_dim(),
        }
    }
}

fn stack_name(component: &str, layer: usize) -> String {
    format!("{AM_PREFIX}{component}.l{layer}")
}

fn init_stack<R: Rng + ?Sized>(params: &mut ParamSet, component: &str, layers: usize, input: usize, width: usize, rng: &mut R) {
    let mut d = input;
    for l in 0..layers {
        lstm_params(params, &stack_name(component, l), d, width, Direction::Bidirectional, rng);
        d = 2 * width;
    }
}

fn init_head<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, input: usize, classes: usize, rng: &mut R) {
    params.insert(format!("{AM_PREFIX}{name}.w"), Tensor::uniform_init(vec![input, classes], input, rng).requiring_grad());
    params.insert(format!("{AM_PREFIX}{name}.b"), Tensor::uniform_init(vec![classes], input, rng).requiring_grad());
}

/// Head names: one shared head without a combination layer, one per
/// speaker with it.
pub fn head_names(cfg: &AmConfig) -> [&'static str; 2] {
    if cfg.variant.has_comb() {
        ["head0", "head1"]
    } else {
        ["head", "head"]
    }
}

/// Inserts freshly initialised weights for `cfg` (all under `am.`), plus
/// identity feature normalisation that is never trained.
pub fn init_am<R: Rng + ?Sized>(params: &mut ParamSet, cfg: &AmConfig, rng: &mut R) -> Result<(), AmError> {
    cfg.validate()?;
    let v = cfg.variant;
    init_stack(params, "sep", v.sep_layers, cfg.feature_dim, cfg.enc_width, rng);
    if v.mix_layers > 0 {
        init_stack(params, "mix", v.mix_layers as usize, cfg.feature_dim, cfg.enc_width, rng);
    }
    init_stack(params, "mas", v.mas_layers, cfg.fused_dim(), cfg.enc_width, rng);
    init_stack(params, "comb", v.comb_layers, cfg.comb_input_dim(), cfg.comb_width, rng);
    let heads = head_names(cfg);
    init_head(params, heads[0], cfg.head_input_dim(), cfg.num_classes, rng);
    if heads[1] != heads[0] {
        init_head(params, heads[1], cfg.head_input_dim(), cfg.num_classes, rng);
    }
    if v.has_sep_encoder() {
        init_head(params, "aux", cfg.sep_dim(), cfg.num_classes, rng);
    }
    set_feature_normalization(params, &vec![0.0; cfg.feature_dim], &vec![1.0; cfg.feature_dim]);
    Ok(())
}

/// Stores `(x − mean) / std` as constant scale/shift tensors.
pub fn set_feature_normalization(params: &mut ParamSet, mean: &[f64], std: &[f64]) {
    let scale: Vec<f64> = std.iter().map(|s| 1.0 / s.max(1e-5)).collect();
    let shift: Vec<f64> = mean.iter().zip(&scale).map(|(m, s)| -m * s).collect();
    params.insert(NORM_SCALE, Tensor::new(vec![scale.len()], scale).expect("1-D"));
    params.insert(NORM_SHIFT, Tensor::new(vec![shift.len()], shift).expect("1-D"));
}

/// Per-dimension mean and standard deviation over all frames of `feats`.
pub fn feature_statistics<'a>(feats: impl IntoIterator<Item = &'a FeatureSeq>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let (mut sum, mut sq, mut n) = (vec![0.0; dim], vec![0.0; dim], 0usize);
    for f in feats {
        for t in 0..f.frames {
            for (d, v) in f.row(t).iter().enumerate() {
                sum[d] += v;
                sq[d] += v * v;
            }
        }
        n += f.frames;
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0).sqrt()).collect();
    (mean, std)
}

pub fn is_constant_param(name: &str) -> bool {
    name == NORM_SCALE || name == NORM_SHIFT
}

/// Dropout applied after every recurrent layer when present.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn rand::RngCore,
}

fn stack(
    tape: &mut Tape,
    params: &ParamSet,
    component: &str,
    layers: usize,
    mut h: Var,
    dropout: &mut Option<Dropout<'_>>,
) -> Result<Var, AmError> {
    for l in 0..layers {
        h = recurrent_layer_forward(tape, params, &stack_name(component, l), h, Direction::Bidirectional)?;
        if let Some(d) = dropout.as_mut() {
            h = tape.dropout(h, d.rate, &mut d.rng)?;
        }
    }
    Ok(h)
}

fn head(tape: &mut Tape, params: &ParamSet, name: &str, h: Var) -> Result<Var, AmError> {
    let w = tape.param(params, &format!("{AM_PREFIX}{name}.w"))?;
    let b = tape.param(params, &format!("{AM_PREFIX}{name}.b"))?;
    let logits = tape.affine(h, w, b)?;
    Ok(tape.log_softmax_rows(logits)?)
}

/// Output nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct AmGraph {
    pub log_posteriors: [Var; 2],
    pub aux_log_posteriors: Option<[Var; 2]>,
}

/// Records the acoustic model on `tape`. Feature inputs are `T × D` nodes;
/// `dropout` is `Some` only while training.
pub fn am_forward_graph(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &AmConfig,
    feats_mix: Var,
    feats_sep: [Var; 2],
    mut dropout: Option<Dropout<'_>>,
) -> Result<AmGraph, AmError> {
    let frames = tape.value(feats_mix).rows();
    for (name, v) in [("separated stream 0", feats_sep[0]), ("separated stream 1", feats_sep[1])] {
        let t = tape.value(v);
        if t.rows() != frames {
            return Err(AmError::Alignment(format!("{name} has {} frames, mixture has {frames}", t.rows())));
        }
    }
    let v = cfg.variant;
    let norm = |tape: &mut Tape, x: Var| -> Result<Var, AmError> {
        let scale = params.get(NORM_SCALE).ok_or_else(|| TensorError::UnknownParam(NORM_SCALE.into()))?;
        let shift = params.get(NORM_SHIFT).ok_or_else(|| TensorError::UnknownParam(NORM_SHIFT.into()))?;
        Ok(tape.scale_shift_cols(x, scale.data(), shift.data())?)
    };
    let mut z_sep = [feats_sep[0]; 2];
    for s in 0..2 {
        let x = norm(tape, feats_sep[s])?;
        z_sep[s] = stack(tape, params, "sep", v.sep_layers, x, &mut dropout)?;
    }
    let aux = if v.has_sep_encoder() {
        Some([head(tape, params, "aux", z_sep[0])?, head(tape, params, "aux", z_sep[1])?])
    } else {
        None
    };
    let heads = head_names(cfg);
    let log_posteriors = match v.structure() {
        Structure::Modular => [head(tape, params, heads[0], z_sep[0])?, head(tape, params, heads[1], z_sep[1])?],
        structure => {
            let x = norm(tape, feats_mix)?;
            let z_mix = stack(tape, params, "mix", v.mix_layers.max(0) as usize, x, &mut dropout)?;
            let comb_input = if structure == Structure::Combination {
                tape.concat_cols(&[z_sep[0], z_mix, z_sep[1]])?
            } else {
                let mut z_mas = [z_mix; 2];
                for s in 0..2 {
                    let fused = if v.fuses_by_addition() {
                        tape.add(z_sep[s], z_mix)?
                    } else {
                        tape.concat_cols(&[z_sep[s], z_mix])?
                    };
                    z_mas[s] = stack(tape, params, "mas", v.mas_layers, fused, &mut dropout)?;
                }
                if structure == Structure::MixtureAware {
                    let out = [head(tape, params, heads[0], z_mas[0])?, head(tape, params, heads[1], z_mas[1])?];
                    return Ok(AmGraph { log_posteriors: out, aux_log_posteriors: aux });
                }
                tape.concat_cols(&[z_mas[0], z_mas[1]])?
            };
            let z = stack(tape, params, "comb", v.comb_layers, comb_input, &mut dropout)?;
            [head(tape, params, heads[0], z)?, head(tape, params, heads[1], z)?]
        }
    };
    Ok(AmGraph { log_posteriors, aux_log_posteriors: aux })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmOutput {
    /// `T × C` log-posteriors per output stream.
    pub log_posteriors: [Tensor; 2],
    pub aux_log_posteriors: Option<[Tensor; 2]>,
}

/// Inference forward pass (no dropout).
pub fn am_forward(
    params: &ParamSet,
    cfg: &AmConfig,
    feats_mix: &FeatureSeq,
    feats_sep: &[FeatureSeq; 2],
) -> Result<AmOutput, AmError> {
    let mut tape = Tape::new();
    let m = tape.constant(feats_mix.to_tensor());
    let s = [tape.constant(feats_sep[0].to_tensor()), tape.constant(feats_sep[1].to_tensor())];
    let g = am_forward_graph(&mut tape, params, cfg, m, s, None)?;
    Ok(AmOutput {
        log_posteriors: g.log_posteriors.map(|v| tape.value(v).clone()),
        aux_log_posteriors: g.aux_log_posteriors.map(|a| a.map(|v| tape.value(v).clone())),
    })
}

/// `mean_s CE(main_s, y_{π(s)}) + aux_scale · mean_s CE(aux_s, y_{π(s)})`.
pub fn am_loss_graph(
    tape: &mut Tape,
    out: &AmGraph,
    targets: &[Vec<usize>; 2],
    perm: Permutation,
    aux_scale: f64,
) -> Result<Var, AmError> {
    let mean_ce = |tape: &mut Tape, streams: [Var; 2]| -> Result<Var, AmError> {
        let a = tape.cross_entropy(streams[0], &targets[perm[0]], None)?;
        let b = tape.cross_entropy(streams[1], &targets[perm[1]], None)?;
        let sum = tape.add(a, b)?;
        Ok(tape.scale(sum, 0.5)?)
    };
    let main = mean_ce(tape, out.log_posteriors)?;
    match out.aux_log_posteriors {
        Some(aux) if aux_scale != 0.0 => {
            let a = mean_ce(tape, aux)?;
            let scaled = tape.scale(a, aux_scale)?;
            Ok(tape.add(main, scaled)?)
        }
        _ => Ok(main),
    }
}

/// Plain-value [`am_loss_graph`].
pub fn am_loss(out: &AmOutput, targets: &[Vec<usize>; 2], perm: Permutation, aux_scale: f64) -> Result<f64, AmError> {
    let mut tape = Tape::new();
    let main = out.log_posteriors.clone().map(|t| tape.constant(t));
    let aux = out.aux_log_posteriors.clone().map(|a| a.map(|t| tape.constant(t)));
    let g = AmGraph { log_posteriors: main, aux_log_posteriors: aux };
    let l = am_loss_graph(&mut tape, &g, targets, perm, aux_scale)?;
    Ok(tape.value(l).item())
}

/// Permutation minimising the summed magnitude MSE between separated and
/// reference spectrograms; ties resolve to identity.
pub fn assign_targets(sep: &[Spectrogram; 2], refs: &[Spectrogram; 2]) -> Result<Permutation, AmError> {
    let cost = |p: Permutation| -> Result<f64, AmError> {
        Ok(magnitude_mse(&sep[0], &refs[p[0]])? + magnitude_mse(&sep[1], &refs[p[1]])?)
    };
    let (identity, swapped) = (cost(IDENTITY)?, cost(SWAPPED)?);
    Ok(if swapped < identity { SWAPPED } else { IDENTITY })
}

/// Frame-wise argmax per stream; ties go to the lowest label id.
pub fn greedy_decode(out: &AmOutput) -> [Vec<usize>; 2] {
    out.log_posteriors.clone().map(|t| argmax_rows(&t))
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Number of trainable AM scalars (normalisation excluded).
pub fn am_parameter_count(params: &ParamSet) -> usize {
    params.iter().filter(|(n, _)| n.starts_with(AM_PREFIX) && !is_constant_param(n)).map(|(_, t)| t.numel()).sum()
}
