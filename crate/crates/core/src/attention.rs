//! Single-block attention model and its output variants.
//!
//! Matrices use the row convention: a sequence is an `n × d` matrix whose
//! rows are tokens, and a projection is a right multiplication `X W`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to logit inputs before inversion.
pub const LOGIT_CLAMP: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Derivative of SiLU.
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Inverse sigmoid with the input clamped to `[LOGIT_CLAMP, 1 − LOGIT_CLAMP]`.
/// Returns the logit and whether clamping happened.
pub fn logit_clamped(p: f64) -> (f64, bool) {
    let q = p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
    ((q / (1.0 - q)).ln(), q != p)
}

pub fn logit(p: f64) -> f64 {
    logit_clamped(p).0
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(scores: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = scores.clone();
    for mut row in out.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Query/key/value/output projections of one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    pub w_o: DMatrix<f64>,
    pub scale: f64,
}

impl AttentionParams {
    /// All-zero projections with the standard `1/√d` scale.
    pub fn zeros(d_model: usize) -> Self {
        Self {
            w_q: DMatrix::zeros(d_model, d_model),
            w_k: DMatrix::zeros(d_model, d_model),
            w_v: DMatrix::zeros(d_model, d_model),
            w_o: DMatrix::zeros(d_model, d_model),
            scale: 1.0 / (d_model as f64).sqrt(),
        }
    }

    pub fn d_model(&self) -> usize {
        self.w_q.nrows()
    }

    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        let d = self.d_model();
        if x.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                got: x.ncols(),
            });
        }
        for w in [&self.w_q, &self.w_k, &self.w_v] {
            if w.shape() != (d, d) {
                return Err(Error::Dimension {
                    expected: d,
                    got: w.ncols(),
                });
            }
        }
        if self.w_o.nrows() != d {
            return Err(Error::Dimension {
                expected: d,
                got: self.w_o.nrows(),
            });
        }
        if !(self.scale > 0.0) {
            return Err(Error::Config(format!("attention scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }
}

/// Softmax attention weights `softmax(s · X W_Q (X W_K)ᵀ)`; every row is a
/// point of the probability simplex.
pub fn attention_weights(x: &DMatrix<f64>, params: &AttentionParams) -> Result<DMatrix<f64>> {
    params.check(x)?;
    let q = x * &params.w_q;
    let k = x * &params.w_k;
    Ok(softmax_rows(&((q * k.transpose()) * params.scale)))
}

/// `Y = A(X) · X W_V W_O`: each output row is a convex combination of the
/// value-projected tokens.
pub fn attention_output(x: &DMatrix<f64>, params: &AttentionParams) -> Result<DMatrix<f64>> {
    let weights = attention_weights(x, params)?;
    let values = (x * &params.w_v) * &params.w_o;
    Ok(weights * values)
}

/// Raw multiplicative gate `Y ⊙ σ(X_g W_θ)` with an external gating input.
pub fn gated_output(y: &DMatrix<f64>, gate_input: &DMatrix<f64>, w_theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if gate_input.ncols() != w_theta.nrows() {
        return Err(Error::Dimension {
            expected: w_theta.nrows(),
            got: gate_input.ncols(),
        });
    }
    let pre = gate_input * w_theta;
    if pre.shape() != y.shape() {
        return Err(Error::Dimension {
            expected: y.ncols(),
            got: pre.ncols(),
        });
    }
    Ok(y.component_mul(&pre.map(sigmoid)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateVariant {
    Ungated,
    Silu,
    GatedSigmoid,
    GatedNonsparse,
    Strength,
}

impl GateVariant {
    pub const ALL: [GateVariant; 5] = [
        GateVariant::Ungated,
        GateVariant::Silu,
        GateVariant::GatedSigmoid,
        GateVariant::GatedNonsparse,
        GateVariant::Strength,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GateVariant::Ungated => "ungated",
            GateVariant::Silu => "silu",
            GateVariant::GatedSigmoid => "gated_sigmoid",
            GateVariant::GatedNonsparse => "gated_nonsparse",
            GateVariant::Strength => "strength",
        }
    }

    /// Whether the variant reads the trainable gate matrix.
    pub fn uses_gate_weights(self) -> bool {
        matches!(
            self,
            GateVariant::GatedSigmoid | GateVariant::GatedNonsparse | GateVariant::Strength
        )
    }
}

impl fmt::Display for GateVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GateVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        GateVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown gate variant `{s}`")))
    }
}

/// Which output transform follows attention, and its strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub variant: GateVariant,
    /// Gate strength; read only by [`GateVariant::Strength`].
    #[serde(default)]
    pub alpha: f64,
}

impl GateSpec {
    pub fn new(variant: GateVariant) -> Self {
        Self { variant, alpha: 1.0 }
    }

    pub fn strength(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("gate strength must be >= 0, got {alpha}")));
        }
        Ok(Self {
            variant: GateVariant::Strength,
            alpha,
        })
    }

    /// Gate factor and its derivative with respect to the pre-activation
    /// `z`, for the multiplicative variants.
    ///
    /// The strength gate is evaluated as `(1 − α) + α σ(z)`, the same function
    /// as `1 + α(σ(z) − 1)`, so that `α = 1` reproduces `σ(z)` and `α = 0`
    /// reproduces `1` bit for bit.
    pub fn gate_factor(&self, z: f64) -> (f64, f64) {
        let s = sigmoid(z);
        let ds = s * (1.0 - s);
        match self.variant {
            GateVariant::GatedSigmoid => (s, ds),
            GateVariant::GatedNonsparse => (0.5 + 0.5 * s, 0.5 * ds),
            GateVariant::Strength => ((1.0 - self.alpha) + self.alpha * s, self.alpha * ds),
            GateVariant::Ungated | GateVariant::Silu => (1.0, 0.0),
        }
    }
}

/// Applies the output transform to the attention output `Y`, with the gate
/// reading `Y W_gate`.
pub fn apply_gate(y: &DMatrix<f64>, spec: &GateSpec, w_gate: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match spec.variant {
        GateVariant::Ungated => Ok(y.clone()),
        GateVariant::Silu => Ok(y.map(silu)),
        _ => {
            if w_gate.nrows() != y.ncols() || w_gate.ncols() != y.ncols() {
                return Err(Error::Dimension {
                    expected: y.ncols(),
                    got: w_gate.nrows(),
                });
            }
            let z = y * w_gate;
            Ok(y.zip_map(&z, |yv, zv| yv * spec.gate_factor(zv).0))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    #[default]
    LayerNorm,
    /// Skips normalization; used to isolate the affine regime in tests.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_model: usize,
    pub d_hidden: usize,
    pub ln_eps: f64,
    #[serde(default)]
    pub norm: NormMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: 2,
            d_model: 64,
            d_hidden: 64,
            ln_eps: 1e-5,
            norm: NormMode::LayerNorm,
        }
    }
}

/// Trainable tensors. Bias vectors are stored as `1 × n` matrices so every
/// parameter shares one type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub input_proj: DMatrix<f64>,
    pub input_bias: DMatrix<f64>,
    pub attention: AttentionParams,
    pub w_gate: DMatrix<f64>,
    pub ln_gain: DMatrix<f64>,
    pub ln_bias: DMatrix<f64>,
    pub mlp_w1: DMatrix<f64>,
    pub mlp_b1: DMatrix<f64>,
    pub mlp_w2: DMatrix<f64>,
    pub mlp_b2: DMatrix<f64>,
}

pub const PARAM_NAMES: [&str; 13] = [
    "input_proj",
    "input_bias",
    "w_q",
    "w_k",
    "w_v",
    "w_o",
    "w_gate",
    "ln_gain",
    "ln_bias",
    "mlp_w1",
    "mlp_b1",
    "mlp_w2",
    "mlp_b2",
];

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let (d_in, d, h) = (config.d_in, config.d_model, config.d_hidden);
        Self {
            input_proj: DMatrix::zeros(d_in, d),
            input_bias: DMatrix::zeros(1, d),
            attention: AttentionParams::zeros(d),
            w_gate: DMatrix::zeros(d, d),
            ln_gain: DMatrix::zeros(1, d),
            ln_bias: DMatrix::zeros(1, d),
            mlp_w1: DMatrix::zeros(d, h),
            mlp_b1: DMatrix::zeros(1, h),
            mlp_w2: DMatrix::zeros(h, 2),
            mlp_b2: DMatrix::zeros(1, 2),
        }
    }

    /// Same shapes, all entries zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    pub fn tensors(&self) -> [&DMatrix<f64>; 13] {
        [
            &self.input_proj,
            &self.input_bias,
            &self.attention.w_q,
            &self.attention.w_k,
            &self.attention.w_v,
            &self.attention.w_o,
            &self.w_gate,
            &self.ln_gain,
            &self.ln_bias,
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut DMatrix<f64>; 13] {
        [
            &mut self.input_proj,
            &mut self.input_bias,
            &mut self.attention.w_q,
            &mut self.attention.w_k,
            &mut self.attention.w_v,
            &mut self.attention.w_o,
            &mut self.w_gate,
            &mut self.ln_gain,
            &mut self.ln_bias,
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
        ]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// A configured model: architecture, output variant and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub gate: GateSpec,
    pub params: ModelParams,
}

impl Model {
    pub fn zeros(config: ModelConfig, gate: GateSpec) -> Self {
        Self {
            params: ModelParams::zeros(&config),
            config,
            gate,
        }
    }

    fn embed(&self, tokens: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if tokens.ncols() != self.config.d_in {
            return Err(Error::Dimension {
                expected: self.config.d_in,
                got: tokens.ncols(),
            });
        }
        if tokens.nrows() == 0 {
            return Err(Error::Config("empty input sequence".into()));
        }
        let mut x = tokens * &self.params.input_proj;
        for mut row in x.row_iter_mut() {
            row += self.params.input_bias.row(0);
        }
        Ok(x)
    }

    fn normalize(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        match self.config.norm {
            NormMode::Identity => r.clone(),
            NormMode::LayerNorm => {
                let mut out = r.clone();
                let d = r.ncols() as f64;
                for mut row in out.row_iter_mut() {
                    let mean = row.sum() / d;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                    let rstd = 1.0 / (var + self.config.ln_eps).sqrt();
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = (*v - mean) * rstd * self.params.ln_gain[(0, j)] + self.params.ln_bias[(0, j)];
                    }
                }
                out
            }
        }
    }

    /// Mean over positions of the post-normalization block output.
    pub fn pooled_representation(&self, tokens: &DMatrix<f64>) -> Result<DVector<f64>> {
        let x = self.embed(tokens)?;
        let y = attention_output(&x, &self.params.attention)?;
        let gated = apply_gate(&y, &self.gate, &self.params.w_gate)?;
        let normed = self.normalize(&(x + gated));
        let n = normed.nrows() as f64;
        Ok(normed.row_sum().transpose() / n)
    }

    /// MLP head on a pooled vector.
    pub fn head(&self, pooled: &DVector<f64>) -> DVector<f64> {
        let p = pooled.transpose();
        let h: RowDVector<f64> = p * &self.params.mlp_w1 + self.params.mlp_b1.row(0);
        let a = h.map(silu);
        (a * &self.params.mlp_w2 + self.params.mlp_b2.row(0)).transpose()
    }

    /// Two class logits.
    pub fn forward(&self, tokens: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.head(&self.pooled_representation(tokens)?))
    }
}

/// `softmax` of a logit vector.
pub fn probabilities(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let e = logits.map(|v| (v - max).exp());
    let s = e.sum();
    e / s
}
