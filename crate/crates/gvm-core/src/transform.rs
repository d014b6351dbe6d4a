//! Feature transformation: trainable music queries attend among
//! themselves and cross-attend onto a frame's patch features, projecting
//! visual content into the shared visual-musical space, then pool to one
//! vector per frame.
//!
//! Layer layout: `n_cross` groups, each holding a run of self-attention
//! blocks (`n_self` spread evenly across groups) followed by one
//! cross-attention onto the patches. All but the last cross-attention are
//! residual blocks; the last is a plain projected attention whose output
//! is the per-query attended feature matrix itself.

use crate::config::{GenConfig, Pooling};
use crate::error::Result;
use crate::nn::{attention, CrossBlock, SelfBlock};
use crate::params::{ParamId, Params, WEIGHT_INIT};
use crate::tape::{Tape, ValueId};
use alloc::format;
use alloc::vec::Vec;

#[derive(Clone, Debug)]
struct Group {
    selfs: Vec<SelfBlock>,
    /// None marks the final, non-residual cross-attention.
    cross: Option<CrossBlock>,
}

#[derive(Clone, Debug)]
pub struct FeatureTransform {
    pub queries: ParamId,
    pub n_queries: usize,
    pub pooling: Pooling,
    groups: Vec<Group>,
    final_wq: ParamId,
    final_wk: ParamId,
    final_wv: ParamId,
}

impl FeatureTransform {
    pub fn new(params: &mut Params, prefix: &str, cfg: &GenConfig) -> Result<Self> {
        let d = cfg.vis.d;
        let queries = params.create(&format!("{prefix}.queries"), cfg.n_queries, d, WEIGHT_INIT)?;
        let per_group = cfg.n_self / cfg.n_cross;
        let extra = cfg.n_self % cfg.n_cross;
        let mut groups = Vec::with_capacity(cfg.n_cross);
        let mut self_idx = 0;
        for g in 0..cfg.n_cross {
            let count = per_group + usize::from(g < extra);
            let mut selfs = Vec::with_capacity(count);
            for _ in 0..count {
                selfs.push(SelfBlock::new(
                    params,
                    &format!("{prefix}.self{self_idx}"),
                    d,
                    cfg.vis.heads,
                )?);
                self_idx += 1;
            }
            let cross = if g + 1 < cfg.n_cross {
                Some(CrossBlock::new(params, &format!("{prefix}.cross{g}"), d, d, cfg.vis.heads)?)
            } else {
                None
            };
            groups.push(Group { selfs, cross });
        }
        Ok(FeatureTransform {
            queries,
            n_queries: cfg.n_queries,
            pooling: cfg.pooling,
            groups,
            final_wq: params.create(&format!("{prefix}.final.wq"), d, d, WEIGHT_INIT)?,
            final_wk: params.create(&format!("{prefix}.final.wk"), d, d, WEIGHT_INIT)?,
            final_wv: params.create(&format!("{prefix}.final.wv"), d, d, WEIGHT_INIT)?,
        })
    }

    /// Per-query attended features for one frame: [p, D] -> [n, D].
    pub fn transform_frame(&self, tape: &mut Tape, params: &Params, patches: ValueId) -> Result<ValueId> {
        let mut x = tape.param(params, self.queries);
        for group in &self.groups {
            for block in &group.selfs {
                x = block.forward(tape, params, x, None)?;
            }
            if let Some(cross) = &group.cross {
                x = cross.forward(tape, params, x, patches)?;
            }
        }
        let wq = tape.param(params, self.final_wq);
        let wk = tape.param(params, self.final_wk);
        let wv = tape.param(params, self.final_wv);
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(patches, wk)?;
        let v = tape.matmul(patches, wv)?;
        let (out, _) = attention(tape, q, k, v, None)?;
        Ok(out)
    }

    /// Pool per-query features: avg and sum give [1, D]; none passes the
    /// full [n, D] through.
    pub fn pool_queries(&self, tape: &mut Tape, attended: ValueId) -> Result<ValueId> {
        pool(tape, attended, self.pooling)
    }

    /// Transform and pool every frame independently, stacking results in
    /// temporal order: [t*f, D] for avg/sum, [t*f*n, D] for none.
    pub fn transform_clip(
        &self,
        tape: &mut Tape,
        params: &Params,
        frame_features: &[ValueId],
    ) -> Result<ValueId> {
        let mut rows = Vec::with_capacity(frame_features.len());
        for &patches in frame_features {
            let attended = self.transform_frame(tape, params, patches)?;
            rows.push(self.pool_queries(tape, attended)?);
        }
        tape.concat_rows(&rows)
    }
}

/// Standalone pooling over query rows.
pub fn pool(tape: &mut Tape, attended: ValueId, mode: Pooling) -> Result<ValueId> {
    match mode {
        Pooling::Avg => tape.mean_rows(attended),
        Pooling::Sum => tape.sum_rows(attended),
        Pooling::None => Ok(attended),
    }
}
