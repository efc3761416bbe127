//! Forward and reverse passes of the model, factored through the augmented
//! input.
//!
//! With `T̃ = [T, 1]` (tokens plus a ones column) and `P̃ = [W_in; b_in]`, the
//! embedded sequence is `X = T̃ P̃`. Every pre-gate quantity is a product of
//! `T̃` with a small parameter-only matrix:
//!
//! * scores `S = T̃ C T̃ᵀ` with `C = s · P̃W_Q (P̃W_K)ᵀ`,
//! * attention output `Y = (A T̃) M_vo` with `M_vo = P̃ W_V W_O`,
//! * gate pre-activation `Z = (A T̃) M_g` with `M_g = M_vo W_gate`.
//!
//! [`Prepared`] computes those matrices once per parameter set, after which a
//! sample costs `O(n · d · (d_in + 1))` instead of `O(n · d²)`. The reverse
//! pass accumulates gradients with respect to the small matrices over a batch
//! and maps them back to the parameters once.

use nalgebra::{DMatrix, DVector};

use crate::attention::{silu, silu_grad, softmax_rows, GateVariant, Model, ModelParams, NormMode};
use crate::error::{Error, Result};

pub struct Prepared<'a> {
    model: &'a Model,
    p_aug: DMatrix<f64>,
    m_q: DMatrix<f64>,
    m_k: DMatrix<f64>,
    c: DMatrix<f64>,
    pv: DMatrix<f64>,
    m_vo: DMatrix<f64>,
    m_g: DMatrix<f64>,
}

/// Intermediate values of one forward pass, kept for the reverse pass.
pub struct SampleCache {
    t_aug: DMatrix<f64>,
    attn: DMatrix<f64>,
    at: DMatrix<f64>,
    y: DMatrix<f64>,
    z: DMatrix<f64>,
    normed: DMatrix<f64>,
    rstd: Vec<f64>,
    pub pooled: DVector<f64>,
    hidden_pre: DVector<f64>,
    hidden: DVector<f64>,
    pub logits: DVector<f64>,
}

/// Batch accumulators for the factored gradients.
pub struct Accumulator {
    g_vo: DMatrix<f64>,
    g_g: DMatrix<f64>,
    g_c: DMatrix<f64>,
    g_x: DMatrix<f64>,
    direct: ModelParams,
}

impl<'a> Prepared<'a> {
    pub fn new(model: &'a Model) -> Self {
        let p = &model.params;
        let d_in = model.config.d_in;
        let d = model.config.d_model;
        let mut p_aug = DMatrix::zeros(d_in + 1, d);
        p_aug.rows_mut(0, d_in).copy_from(&p.input_proj);
        p_aug.row_mut(d_in).copy_from(&p.input_bias.row(0));
        let m_q = &p_aug * &p.attention.w_q;
        let m_k = &p_aug * &p.attention.w_k;
        let c = (&m_q * m_k.transpose()) * p.attention.scale;
        let pv = &p_aug * &p.attention.w_v;
        let m_vo = &pv * &p.attention.w_o;
        let m_g = if model.gate.variant.uses_gate_weights() {
            &m_vo * &p.w_gate
        } else {
            DMatrix::zeros(d_in + 1, d)
        };
        Self {
            model,
            p_aug,
            m_q,
            m_k,
            c,
            pv,
            m_vo,
            m_g,
        }
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    fn augment(&self, tokens: &[[f64; 2]]) -> Result<DMatrix<f64>> {
        if self.model.config.d_in != 2 {
            return Err(Error::Dimension {
                expected: self.model.config.d_in,
                got: 2,
            });
        }
        if tokens.is_empty() {
            return Err(Error::Config("empty input sequence".into()));
        }
        Ok(DMatrix::from_fn(tokens.len(), 3, |i, j| if j < 2 { tokens[i][j] } else { 1.0 }))
    }

    pub fn forward(&self, tokens: &[[f64; 2]]) -> Result<SampleCache> {
        let cfg = &self.model.config;
        let params = &self.model.params;
        let gate = &self.model.gate;
        let t_aug = self.augment(tokens)?;
        let n = t_aug.nrows();
        let d = cfg.d_model;

        let scores = &t_aug * &self.c * t_aug.transpose();
        let attn = softmax_rows(&scores);
        let at = &attn * &t_aug;
        let y = &at * &self.m_vo;
        let z = if gate.variant.uses_gate_weights() {
            &at * &self.m_g
        } else {
            DMatrix::zeros(n, d)
        };
        let gated = match gate.variant {
            GateVariant::Ungated => y.clone(),
            GateVariant::Silu => y.map(silu),
            _ => y.zip_map(&z, |yv, zv| yv * gate.gate_factor(zv).0),
        };
        let mut r = &t_aug * &self.p_aug;
        r += gated;

        let mut normed = r;
        let mut rstd = vec![1.0; n];
        let mut out = DMatrix::zeros(n, d);
        match cfg.norm {
            NormMode::Identity => out.copy_from(&normed),
            NormMode::LayerNorm => {
                for i in 0..n {
                    let mut row = normed.row_mut(i);
                    let mean = row.sum() / d as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let s = 1.0 / (var + cfg.ln_eps).sqrt();
                    rstd[i] = s;
                    row.apply(|v| *v = (*v - mean) * s);
                    for j in 0..d {
                        out[(i, j)] = normed[(i, j)] * params.ln_gain[(0, j)] + params.ln_bias[(0, j)];
                    }
                }
            }
        }
        let pooled: DVector<f64> = out.row_sum().transpose() / n as f64;
        let hidden_pre: DVector<f64> =
            (pooled.transpose() * &params.mlp_w1 + params.mlp_b1.row(0)).transpose();
        let hidden = hidden_pre.map(silu);
        let logits = (hidden.transpose() * &params.mlp_w2 + params.mlp_b2.row(0)).transpose();
        Ok(SampleCache {
            t_aug,
            attn,
            at,
            y,
            z,
            normed,
            rstd,
            pooled,
            hidden_pre,
            hidden,
            logits,
        })
    }

    pub fn logits(&self, tokens: &[[f64; 2]]) -> Result<DVector<f64>> {
        Ok(self.forward(tokens)?.logits)
    }

    pub fn pooled(&self, tokens: &[[f64; 2]]) -> Result<DVector<f64>> {
        Ok(self.forward(tokens)?.pooled)
    }

    pub fn accumulator(&self) -> Accumulator {
        let a = self.p_aug.nrows();
        let d = self.model.config.d_model;
        Accumulator {
            g_vo: DMatrix::zeros(a, d),
            g_g: DMatrix::zeros(a, d),
            g_c: DMatrix::zeros(a, a),
            g_x: DMatrix::zeros(a, d),
            direct: self.model.params.zeros_like(),
        }
    }

    /// Adds the gradient of `dlogits · logits` for one sample.
    pub fn backward(&self, cache: &SampleCache, dlogits: &DVector<f64>, acc: &mut Accumulator) {
        let cfg = &self.model.config;
        let params = &self.model.params;
        let gate = &self.model.gate;
        let n = cache.t_aug.nrows();
        let d = cfg.d_model;

        // head
        acc.direct.mlp_w2.ger(1.0, &cache.hidden, dlogits, 1.0);
        for (b, g) in acc.direct.mlp_b2.iter_mut().zip(dlogits.iter()) {
            *b += g;
        }
        let d_hidden = (&params.mlp_w2 * dlogits).component_mul(&cache.hidden_pre.map(silu_grad));
        acc.direct.mlp_w1.ger(1.0, &cache.pooled, &d_hidden, 1.0);
        for (b, g) in acc.direct.mlp_b1.iter_mut().zip(d_hidden.iter()) {
            *b += g;
        }
        let d_pooled = &params.mlp_w1 * d_hidden;

        // mean pooling and normalization
        let inv_n = 1.0 / n as f64;
        let mut d_r = DMatrix::zeros(n, d);
        match cfg.norm {
            NormMode::Identity => {
                for i in 0..n {
                    for j in 0..d {
                        d_r[(i, j)] = d_pooled[j] * inv_n;
                    }
                }
            }
            NormMode::LayerNorm => {
                let mut d_norm = vec![0.0; d];
                for i in 0..n {
                    let mut mean_dn = 0.0;
                    let mut mean_dn_n = 0.0;
                    for j in 0..d {
                        let d_out = d_pooled[j] * inv_n;
                        let nv = cache.normed[(i, j)];
                        acc.direct.ln_gain[(0, j)] += d_out * nv;
                        acc.direct.ln_bias[(0, j)] += d_out;
                        d_norm[j] = d_out * params.ln_gain[(0, j)];
                        mean_dn += d_norm[j];
                        mean_dn_n += d_norm[j] * nv;
                    }
                    mean_dn /= d as f64;
                    mean_dn_n /= d as f64;
                    let s = cache.rstd[i];
                    for j in 0..d {
                        d_r[(i, j)] = s * (d_norm[j] - mean_dn - cache.normed[(i, j)] * mean_dn_n);
                    }
                }
            }
        }

        // residual: X receives d_r directly
        acc.g_x.gemm_tr(1.0, &cache.t_aug, &d_r, 1.0);

        // output transform
        let (d_y, d_z) = match gate.variant {
            GateVariant::Ungated => (d_r, None),
            GateVariant::Silu => (d_r.zip_map(&cache.y, |g, yv| g * silu_grad(yv)), None),
            _ => {
                let mut d_y = d_r.clone();
                let mut d_z = d_r;
                for i in 0..n {
                    for j in 0..d {
                        let (factor, dfactor) = gate.gate_factor(cache.z[(i, j)]);
                        let upstream = d_y[(i, j)];
                        d_y[(i, j)] = upstream * factor;
                        d_z[(i, j)] = upstream * cache.y[(i, j)] * dfactor;
                    }
                }
                (d_y, Some(d_z))
            }
        };

        acc.g_vo.gemm_tr(1.0, &cache.at, &d_y, 1.0);
        let mut d_at = &d_y * self.m_vo.transpose();
        if let Some(d_z) = &d_z {
            acc.g_g.gemm_tr(1.0, &cache.at, d_z, 1.0);
            d_at.gemm(1.0, d_z, &self.m_g.transpose(), 1.0);
        }

        // attention weights and softmax
        let d_attn = &d_at * cache.t_aug.transpose();
        let mut d_scores = DMatrix::zeros(n, n);
        for i in 0..n {
            let dot: f64 = (0..n).map(|k| d_attn[(i, k)] * cache.attn[(i, k)]).sum();
            for k in 0..n {
                d_scores[(i, k)] = cache.attn[(i, k)] * (d_attn[(i, k)] - dot);
            }
        }
        let tmp = cache.t_aug.transpose() * d_scores;
        acc.g_c.gemm(1.0, &tmp, &cache.t_aug, 1.0);
    }

    /// Maps accumulated factored gradients back to parameter gradients.
    pub fn finish(&self, acc: Accumulator) -> ModelParams {
        let params = &self.model.params;
        let d_in = self.model.config.d_in;
        let scale = params.attention.scale;
        let mut grads = acc.direct;

        let mut d_p_aug = acc.g_x;
        let mut d_m_vo = acc.g_vo;
        if self.model.gate.variant.uses_gate_weights() {
            grads.w_gate = self.m_vo.transpose() * &acc.g_g;
            d_m_vo.gemm(1.0, &acc.g_g, &params.w_gate.transpose(), 1.0);
        }
        grads.attention.w_o = self.pv.transpose() * &d_m_vo;
        let d_pv = &d_m_vo * params.attention.w_o.transpose();
        grads.attention.w_v = self.p_aug.transpose() * &d_pv;
        d_p_aug.gemm(1.0, &d_pv, &params.attention.w_v.transpose(), 1.0);

        let d_m_q = (&acc.g_c * &self.m_k) * scale;
        let d_m_k = (acc.g_c.transpose() * &self.m_q) * scale;
        grads.attention.w_q = self.p_aug.transpose() * &d_m_q;
        grads.attention.w_k = self.p_aug.transpose() * &d_m_k;
        d_p_aug.gemm(1.0, &d_m_q, &params.attention.w_q.transpose(), 1.0);
        d_p_aug.gemm(1.0, &d_m_k, &params.attention.w_k.transpose(), 1.0);

        grads.input_proj = d_p_aug.rows(0, d_in).into_owned();
        grads.input_bias = d_p_aug.rows(d_in, 1).into_owned();
        grads
    }
}

/// Mean softmax cross-entropy over two logits, with its gradient.
pub fn cross_entropy(logits: &DVector<f64>, label: u8) -> (f64, DVector<f64>) {
    let max = logits.max();
    let exp = logits.map(|v| (v - max).exp());
    let sum = exp.sum();
    let probs = exp / sum;
    let loss = -(logits[label as usize] - max - sum.ln());
    let mut grad = probs;
    grad[label as usize] -= 1.0;
    (loss, grad)
}

/// Loss and exact parameter gradients of the mean cross-entropy over a batch.
pub fn backward(model: &Model, batch: &[(&[[f64; 2]], u8)]) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let prepared = Prepared::new(model);
    let mut acc = prepared.accumulator();
    let inv_b = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (tokens, label) in batch {
        let cache = prepared.forward(tokens)?;
        let (l, g) = cross_entropy(&cache.logits, *label);
        loss += l * inv_b;
        prepared.backward(&cache, &(g * inv_b), &mut acc);
    }
    Ok((loss, prepared.finish(acc)))
}

/// Mean cross-entropy only.
pub fn loss(model: &Model, batch: &[(&[[f64; 2]], u8)]) -> Result<f64> {
    let prepared = Prepared::new(model);
    let inv_b = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (tokens, label) in batch {
        total += cross_entropy(&prepared.logits(tokens)?, *label).0 * inv_b;
    }
    Ok(total)
}
