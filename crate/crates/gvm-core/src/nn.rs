//! Attention and transformer building blocks shared by the encoder,
//! feature transform, decoder and scorer.
//!
//! Blocks are pre-norm residual: `x + sublayer(layer_norm(x))`.

use crate::error::Result;
use crate::math;
use crate::params::{Init, ParamId, Params, WEIGHT_INIT};
use crate::tape::{Mask, Tape, ValueId};
use alloc::format;
use alloc::rc::Rc;
use alloc::vec::Vec;

/// Scaled dot-product attention: softmax(q kᵀ / √Dk) v, with an optional
/// boolean mask. Returns the output and the post-softmax weight matrix.
pub fn attention(
    tape: &mut Tape,
    q: ValueId,
    k: ValueId,
    v: ValueId,
    mask: Option<Rc<Mask>>,
) -> Result<(ValueId, ValueId)> {
    let (_, dk) = tape.shape(k);
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.affine(scores, 1.0 / math::sqrt(dk as f64), 0.0)?;
    let weights = tape.softmax_rows(scaled, mask)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Layer norm gain/bias pair.
#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new(params: &mut Params, prefix: &str, dim: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gain: params.create(&format!("{prefix}.g"), 1, dim, Init::Const(1.0))?,
            bias: params.create(&format!("{prefix}.b"), 1, dim, Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, params: &Params, x: ValueId) -> Result<ValueId> {
        let g = tape.param(params, self.gain);
        let b = tape.param(params, self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Multi-head attention with input projections and an output projection.
/// Queries may come from a different width than keys/values.
#[derive(Clone, Debug)]
pub struct Mha {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub d_model: usize,
}

impl Mha {
    pub fn new(
        params: &mut Params,
        prefix: &str,
        d_q: usize,
        d_kv: usize,
        d_model: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(Mha {
            wq: params.create(&format!("{prefix}.wq"), d_q, d_model, WEIGHT_INIT)?,
            wk: params.create(&format!("{prefix}.wk"), d_kv, d_model, WEIGHT_INIT)?,
            wv: params.create(&format!("{prefix}.wv"), d_kv, d_model, WEIGHT_INIT)?,
            wo: params.create(&format!("{prefix}.wo"), d_model, d_model, WEIGHT_INIT)?,
            heads,
            d_model,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Params,
        q_in: ValueId,
        kv_in: ValueId,
        mask: Option<Rc<Mask>>,
    ) -> Result<ValueId> {
        let wq = tape.param(params, self.wq);
        let wk = tape.param(params, self.wk);
        let wv = tape.param(params, self.wv);
        let q = tape.matmul(q_in, wq)?;
        let k = tape.matmul(kv_in, wk)?;
        let v = tape.matmul(kv_in, wv)?;
        let dh = self.d_model / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let (oh, _) = attention(tape, qh, kh, vh, mask.clone())?;
            outs.push(oh);
        }
        let cat = tape.concat_cols(&outs)?;
        let wo = tape.param(params, self.wo);
        tape.matmul(cat, wo)
    }
}

/// Two-layer feed-forward with GELU, hidden width 4x.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Ffn {
    pub fn new(params: &mut Params, prefix: &str, dim: usize) -> Result<Self> {
        let hidden = 4 * dim;
        Ok(Ffn {
            w1: params.create(&format!("{prefix}.w1"), dim, hidden, WEIGHT_INIT)?,
            b1: params.create(&format!("{prefix}.b1"), 1, hidden, Init::Const(0.0))?,
            w2: params.create(&format!("{prefix}.w2"), hidden, dim, WEIGHT_INIT)?,
            b2: params.create(&format!("{prefix}.b2"), 1, dim, Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, params: &Params, x: ValueId) -> Result<ValueId> {
        let w1 = tape.param(params, self.w1);
        let b1 = tape.param(params, self.b1);
        let w2 = tape.param(params, self.w2);
        let b2 = tape.param(params, self.b2);
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.gelu(h)?;
        let out = tape.matmul(h, w2)?;
        tape.add_row(out, b2)
    }
}

/// Pre-norm self-attention block: attention sublayer plus feed-forward.
#[derive(Clone, Debug)]
pub struct SelfBlock {
    pub ln1: LayerNormParams,
    pub attn: Mha,
    pub ln2: LayerNormParams,
    pub ffn: Ffn,
}

impl SelfBlock {
    pub fn new(params: &mut Params, prefix: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(SelfBlock {
            ln1: LayerNormParams::new(params, &format!("{prefix}.ln1"), dim)?,
            attn: Mha::new(params, &format!("{prefix}.attn"), dim, dim, dim, heads)?,
            ln2: LayerNormParams::new(params, &format!("{prefix}.ln2"), dim)?,
            ffn: Ffn::new(params, &format!("{prefix}.ffn"), dim)?,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Params,
        x: ValueId,
        mask: Option<Rc<Mask>>,
    ) -> Result<ValueId> {
        let a = self.ln1.forward(tape, params, x)?;
        let attn = self.attn.forward(tape, params, a, a, mask)?;
        let x = tape.add(x, attn)?;
        let a = self.ln2.forward(tape, params, x)?;
        let ffn = self.ffn.forward(tape, params, a)?;
        tape.add(x, ffn)
    }
}

/// Pre-norm cross-attention block: queries are normalized, keys/values
/// come from an external memory, then feed-forward.
#[derive(Clone, Debug)]
pub struct CrossBlock {
    pub ln1: LayerNormParams,
    pub attn: Mha,
    pub ln2: LayerNormParams,
    pub ffn: Ffn,
}

impl CrossBlock {
    pub fn new(
        params: &mut Params,
        prefix: &str,
        dim: usize,
        d_kv: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(CrossBlock {
            ln1: LayerNormParams::new(params, &format!("{prefix}.ln1"), dim)?,
            attn: Mha::new(params, &format!("{prefix}.attn"), dim, d_kv, dim, heads)?,
            ln2: LayerNormParams::new(params, &format!("{prefix}.ln2"), dim)?,
            ffn: Ffn::new(params, &format!("{prefix}.ffn"), dim)?,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Params,
        x: ValueId,
        memory: ValueId,
    ) -> Result<ValueId> {
        let a = self.ln1.forward(tape, params, x)?;
        let attn = self.attn.forward(tape, params, a, memory, None)?;
        let x = tape.add(x, attn)?;
        let a = self.ln2.forward(tape, params, x)?;
        let ffn = self.ffn.forward(tape, params, a)?;
        tape.add(x, ffn)
    }
}
