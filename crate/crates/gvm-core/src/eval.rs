//! Trainable video-music correspondence scorer.
//!
//! Both streams are reduced to one feature vector per second, projected
//! to a unified width, and related by a single t x t cross-attention
//! whose row-stochastic weights serve double duty: their diagonal mean
//! is the temporal-alignment score, and the attended features, pooled
//! and normalized, give the cross-modal relevance cosine. Training
//! combines a diagonal-deviation loss with a symmetric contrastive loss
//! over in-batch pairs.

use crate::config::{EvalConfig, TaLossVariant};
use crate::decoder::TokenSeq;
use crate::encoder::{VideoClip, VisualEncoder};
use crate::error::{Error, Result};
use crate::params::{ParamId, Params, WEIGHT_INIT};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec::Vec;

const SOFT_NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalScores {
    /// Temporal alignment: mean diagonal of the cross-attention, in [0,1].
    pub ta: f64,
    /// Cross-modal relevance: cosine of the pooled features, in [-1,1].
    pub cmr: f64,
}

/// Tape handles for one scored pair.
pub struct PairTrace {
    /// Row-stochastic t x t attention matrix.
    pub attn: ValueId,
    /// Unit-norm pooled video feature [1, H].
    pub f_v: ValueId,
    /// Unit-norm pooled music feature [1, H].
    pub f_m: ValueId,
}

#[derive(Clone, Debug)]
pub struct EvalModel {
    pub cfg: EvalConfig,
    pub encoder: VisualEncoder,
    tables: Vec<ParamId>,
    w_v: ParamId,
    w_m: ParamId,
    sum_w: ParamId,
}

impl EvalModel {
    pub fn new(params: &mut Params, cfg: &EvalConfig) -> Result<Self> {
        cfg.validate()?;
        let encoder = VisualEncoder::new(params, "eval.encoder", &cfg.vis)?;
        let mut tables = Vec::with_capacity(cfg.k);
        for j in 0..cfg.k {
            tables.push(params.create(&format!("eval.embed{j}"), cfg.vocab, cfg.hm, WEIGHT_INIT)?);
        }
        Ok(EvalModel {
            encoder,
            tables,
            w_v: params.create("eval.proj_v", cfg.vis.d, cfg.h, WEIGHT_INIT)?,
            w_m: params.create("eval.proj_m", cfg.hm, cfg.h, WEIGHT_INIT)?,
            sum_w: params.create("eval.sum.w", cfg.h, cfg.h, WEIGHT_INIT)?,
            cfg: cfg.clone(),
        })
    }

    /// Per-second video features: cls vectors of each frame, mean-pooled
    /// within each second. [t, D].
    pub fn video_stream(&self, tape: &mut Tape, params: &Params, clip: &VideoClip) -> Result<ValueId> {
        let cls = self.encoder.cls_rows(tape, params, clip)?;
        per_second_mean(tape, cls, self.cfg.t, self.cfg.f)
    }

    /// Per-second music features: summed codebook embeddings per step,
    /// mean-pooled within each second. [t, Hm].
    pub fn music_stream(&self, tape: &mut Tape, params: &Params, tokens: &TokenSeq) -> Result<ValueId> {
        if tokens.k() != self.cfg.k || tokens.vocab() != self.cfg.vocab {
            return Err(Error::invalid_config(format!(
                "tokens (k {}, vocab {}) do not match scorer (k {}, vocab {})",
                tokens.k(),
                tokens.vocab(),
                self.cfg.k,
                self.cfg.vocab
            )));
        }
        let mut emb: Option<ValueId> = None;
        for j in 0..self.cfg.k {
            let table = tape.param(params, self.tables[j]);
            let g = tape.gather_rows(table, &tokens.codebook_column(j))?;
            emb = Some(match emb {
                None => g,
                Some(e) => tape.add(e, g)?,
            });
        }
        per_second_mean(tape, emb.expect("k >= 1"), self.cfg.t, self.cfg.f_prime)
    }

    /// The t x t row-stochastic cross-attention between projected
    /// streams. Scores are temperature-scaled cosines of the per-second
    /// rows: softmax(v̂ m̂ᵀ / tau) row-wise, with a zero-safe row
    /// normalization so all-zero inputs degrade to uniform rows.
    ///
    /// The cosine is load-bearing: raw dot products at the 0.02 init
    /// scale leave the softmax effectively uniform and the alignment
    /// head untrainable.
    pub fn cross_attention_matrix(
        &self,
        tape: &mut Tape,
        v_proj: ValueId,
        m_proj: ValueId,
    ) -> Result<ValueId> {
        let (tv, h) = tape.shape(v_proj);
        let (tm, hm) = tape.shape(m_proj);
        if tv == 0 || tv != tm || h != hm {
            return Err(Error::ShapeMismatch { op: "cross_attention_matrix", left: (tv, h), right: (tm, hm) });
        }
        let vn = tape.normalize_rows_soft(v_proj, SOFT_NORM_EPS)?;
        let mn = tape.normalize_rows_soft(m_proj, SOFT_NORM_EPS)?;
        let mt = tape.transpose(mn)?;
        let scores = tape.matmul(vn, mt)?;
        let scaled = tape.affine(scores, 1.0 / self.cfg.tau, 0.0)?;
        tape.softmax_rows(scaled, None)
    }

    /// Attend both streams with the shared weights: z_v uses the video
    /// values, z_m the music values.
    pub fn fused_features(
        &self,
        tape: &mut Tape,
        attn: ValueId,
        v_proj: ValueId,
        m_proj: ValueId,
    ) -> Result<(ValueId, ValueId)> {
        let z_v = tape.matmul(attn, v_proj)?;
        let z_m = tape.matmul(attn, m_proj)?;
        Ok((z_v, z_m))
    }

    /// Temporal mean pooling, a shared bias-free linear map, unit
    /// normalization. Linearity before the normalization is what makes
    /// the relevance cosine invariant to feature scaling.
    pub fn summarize(&self, tape: &mut Tape, params: &Params, z: ValueId) -> Result<ValueId> {
        let pooled = tape.mean_rows(z)?;
        let w = tape.param(params, self.sum_w);
        let lin = tape.matmul(pooled, w)?;
        tape.l2_normalize_rows(lin)
    }

    /// Full trace from already-projected [t, H] streams.
    pub fn trace_projected(
        &self,
        tape: &mut Tape,
        params: &Params,
        v_proj: ValueId,
        m_proj: ValueId,
    ) -> Result<PairTrace> {
        let attn = self.cross_attention_matrix(tape, v_proj, m_proj)?;
        let (z_v, z_m) = self.fused_features(tape, attn, v_proj, m_proj)?;
        let f_v = self.summarize(tape, params, z_v)?;
        let f_m = self.summarize(tape, params, z_m)?;
        Ok(PairTrace { attn, f_v, f_m })
    }

    /// Full trace for a raw (clip, tokens) pair.
    pub fn trace_pair(
        &self,
        tape: &mut Tape,
        params: &Params,
        clip: &VideoClip,
        tokens: &TokenSeq,
    ) -> Result<PairTrace> {
        let v = self.video_stream(tape, params, clip)?;
        let m = self.music_stream(tape, params, tokens)?;
        self.trace_from_streams(tape, params, v, m)
    }

    /// Full trace from unprojected feature streams ([t, D] video rows,
    /// [t, Hm] music rows), e.g. read from feature files.
    pub fn trace_from_streams(
        &self,
        tape: &mut Tape,
        params: &Params,
        v_stream: ValueId,
        m_stream: ValueId,
    ) -> Result<PairTrace> {
        let wv = tape.param(params, self.w_v);
        let wm = tape.param(params, self.w_m);
        let v_proj = tape.matmul(v_stream, wv)?;
        let m_proj = tape.matmul(m_stream, wm)?;
        self.trace_projected(tape, params, v_proj, m_proj)
    }

    /// Diagonal-deviation loss over a row-stochastic matrix:
    /// mean of |1 - a_ii| (or its square for the mse variant).
    pub fn ta_loss(&self, tape: &mut Tape, attn: ValueId) -> Result<ValueId> {
        ta_loss(tape, attn, self.cfg.loss_variant)
    }

    /// Scores for one pair on a throwaway tape.
    pub fn score(&self, params: &Params, clip: &VideoClip, tokens: &TokenSeq) -> Result<EvalScores> {
        let mut tape = Tape::new();
        let trace = self.trace_pair(&mut tape, params, clip, tokens)?;
        Ok(scores_from_trace(&tape, &trace))
    }

    /// Scores from externally supplied per-second feature streams.
    pub fn score_features(&self, params: &Params, v: &Tensor, m: &Tensor) -> Result<EvalScores> {
        let (vr, vc, _) = v.as_rows();
        let (mr, mc, _) = m.as_rows();
        if vr != mr {
            return Err(Error::ShapeMismatch { op: "score_features", left: (vr, vc), right: (mr, mc) });
        }
        if vc != self.cfg.vis.d || mc != self.cfg.hm {
            return Err(Error::invalid_config(format!(
                "feature widths ({vc}, {mc}) do not match scorer ({}, {})",
                self.cfg.vis.d, self.cfg.hm
            )));
        }
        let mut tape = Tape::new();
        let vs = tape.leaf_tensor(v)?;
        let ms = tape.leaf_tensor(m)?;
        let trace = self.trace_from_streams(&mut tape, params, vs, ms)?;
        Ok(scores_from_trace(&tape, &trace))
    }

    /// Unit-norm pooled features for a set of pairs (retrieval input).
    pub fn pair_features(
        &self,
        params: &Params,
        pairs: &[(&VideoClip, &TokenSeq)],
    ) -> Result<FeatureRows> {
        let mut fm = Vec::with_capacity(pairs.len());
        let mut fv = Vec::with_capacity(pairs.len());
        for &(clip, tokens) in pairs {
            let mut tape = Tape::new();
            let trace = self.trace_pair(&mut tape, params, clip, tokens)?;
            fm.push(tape.value(trace.f_m).to_vec());
            fv.push(tape.value(trace.f_v).to_vec());
        }
        Ok((fm, fv))
    }

    /// Joint batch loss: mean diagonal-deviation loss plus
    /// lambda * the symmetric contrastive loss.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        params: &Params,
        batch: &[(&VideoClip, &TokenSeq)],
    ) -> Result<(ValueId, BatchTrace)> {
        if batch.len() < 2 {
            return Err(Error::DegenerateBatch { size: batch.len() });
        }
        let mut l1s = Vec::with_capacity(batch.len());
        let mut fms = Vec::with_capacity(batch.len());
        let mut fvs = Vec::with_capacity(batch.len());
        let mut ta_sum = 0.0;
        for &(clip, tokens) in batch {
            let trace = self.trace_pair(tape, params, clip, tokens)?;
            ta_sum += mean_diag(tape, trace.attn);
            l1s.push(self.ta_loss(tape, trace.attn)?);
            fms.push(trace.f_m);
            fvs.push(trace.f_v);
        }
        let l1_stack = tape.concat_rows(&l1s)?;
        let l1 = tape.mean_all(l1_stack)?;
        let fm = tape.concat_rows(&fms)?;
        let fv = tape.concat_rows(&fvs)?;
        let l2 = infonce(tape, fm, fv, self.cfg.tau)?;
        let l2_scaled = tape.affine(l2, self.cfg.lambda, 0.0)?;
        let total = tape.add(l1, l2_scaled)?;
        Ok((
            total,
            BatchTrace {
                l1: tape.scalar(l1),
                l2: tape.scalar(l2),
                mean_ta: ta_sum / batch.len() as f64,
            },
        ))
    }
}

/// Pooled (music, video) feature rows for a set of pairs.
pub type FeatureRows = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Scalar diagnostics of one eval batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchTrace {
    pub l1: f64,
    pub l2: f64,
    pub mean_ta: f64,
}

/// Mean-pool rows within each of `t` groups of `per` consecutive rows.
fn per_second_mean(tape: &mut Tape, x: ValueId, t: usize, per: usize) -> Result<ValueId> {
    if per == 1 {
        return Ok(x);
    }
    let mut rows = Vec::with_capacity(t);
    for s in 0..t {
        let slice = tape.slice_rows(x, s * per, per)?;
        rows.push(tape.mean_rows(slice)?);
    }
    tape.concat_rows(&rows)
}

/// mean of |1 - a_ii| over the diagonal (squared for `Mse`).
pub fn ta_loss(tape: &mut Tape, attn: ValueId, variant: TaLossVariant) -> Result<ValueId> {
    let d = tape.diag(attn)?;
    let dev = tape.affine(d, -1.0, 1.0)?;
    let per_row = match variant {
        TaLossVariant::Abs => tape.abs(dev)?,
        TaLossVariant::Mse => tape.hadamard(dev, dev)?,
    };
    tape.mean_all(per_row)
}

/// Symmetric contrastive loss over unit-norm feature rows:
/// 0.5 * (sum_i -log softmax(S/tau)[i,i] + same for Sᵀ), S = F_m F_vᵀ.
/// No 1/N: at uniform similarity each direction equals N ln N.
pub fn infonce(tape: &mut Tape, f_m: ValueId, f_v: ValueId, tau: f64) -> Result<ValueId> {
    let (n, hm) = tape.shape(f_m);
    let (nv, hv) = tape.shape(f_v);
    if n != nv || hm != hv {
        return Err(Error::ShapeMismatch { op: "infonce", left: (n, hm), right: (nv, hv) });
    }
    if n < 2 {
        return Err(Error::DegenerateBatch { size: n });
    }
    let fvt = tape.transpose(f_v)?;
    let sims = tape.matmul(f_m, fvt)?;
    let scaled = tape.affine(sims, 1.0 / tau, 0.0)?;
    let diagonal: Vec<usize> = (0..n).collect();
    let ce_mv = tape.cross_entropy_rows(scaled, &diagonal)?;
    let l_mv = tape.sum_all(ce_mv)?;
    let scaled_t = tape.transpose(scaled)?;
    let ce_vm = tape.cross_entropy_rows(scaled_t, &diagonal)?;
    let l_vm = tape.sum_all(ce_vm)?;
    let both = tape.add(l_mv, l_vm)?;
    tape.affine(both, 0.5, 0.0)
}

pub fn mean_diag(tape: &Tape, attn: ValueId) -> f64 {
    let (t, _) = tape.shape(attn);
    let v = tape.value(attn);
    (0..t).map(|i| v[i * t + i]).sum::<f64>() / t as f64
}

fn scores_from_trace(tape: &Tape, trace: &PairTrace) -> EvalScores {
    let fm = tape.value(trace.f_m);
    let fv = tape.value(trace.f_v);
    let cmr = fm.iter().zip(fv).map(|(a, b)| a * b).sum::<f64>();
    EvalScores { ta: mean_diag(tape, trace.attn), cmr }
}

/// Mean retrieval top-1 accuracy over `n_batches` batches of `batch`
/// pairs drawn from a feature pool, averaged over both directions.
/// Argmax ties resolve to the lower index.
pub fn retrieval_accuracy(
    f_m: &[Vec<f64>],
    f_v: &[Vec<f64>],
    batch: usize,
    n_batches: usize,
    seed: u64,
) -> f64 {
    assert_eq!(f_m.len(), f_v.len());
    assert!(batch >= 2 && f_m.len() >= batch);
    let mut rng = crate::rng::Rng::from_seed_stream(seed, 0x726574726965);
    let mut hits = 0usize;
    let mut trials = 0usize;
    for _ in 0..n_batches {
        let perm = rng.permutation(f_m.len());
        let idx = &perm[..batch];
        for (dir, (rows, cols)) in [(f_m, f_v), (f_v, f_m)].into_iter().enumerate() {
            let _ = dir;
            for (qi, &q) in idx.iter().enumerate() {
                let mut best = 0usize;
                let mut best_sim = f64::NEG_INFINITY;
                for (ci, &c) in idx.iter().enumerate() {
                    let sim: f64 = rows[q].iter().zip(&cols[c]).map(|(a, b)| a * b).sum();
                    if sim > best_sim {
                        best_sim = sim;
                        best = ci;
                    }
                }
                if best == qi {
                    hits += 1;
                }
                trials += 1;
            }
        }
    }
    hits as f64 / trials as f64
}
