//! Conditional autoregressive music-token decoder.
//!
//! Causal self-attention over shifted-right token embeddings, temporal
//! cross-attention onto the per-frame visual features, a feed-forward
//! sublayer, and K parallel output heads predicting one codebook each.

use crate::config::GenConfig;
use crate::error::{Error, Result};
use crate::nn::{Ffn, LayerNormParams, Mha};
use crate::params::{ParamId, Params, WEIGHT_INIT};
use crate::tape::{Mask, Tape, ValueId};
use alloc::format;
use alloc::rc::Rc;
use alloc::vec::Vec;

/// Music as T' steps of K codebook token ids, each in [0, vocab).
/// Row-major [steps, k]. The begin-of-sequence id equals `vocab` and is
/// only ever an input, never stored here.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSeq {
    steps: usize,
    k: usize,
    vocab: usize,
    codes: Vec<u16>,
}

impl TokenSeq {
    pub fn new(steps: usize, k: usize, vocab: usize, codes: Vec<u16>) -> Result<Self> {
        if steps == 0 || k == 0 {
            return Err(Error::invalid_config("token sequences need at least one step and one codebook"));
        }
        if codes.len() != steps * k {
            return Err(Error::BadShape { expected: steps * k, got: codes.len() });
        }
        for &c in &codes {
            if usize::from(c) >= vocab {
                return Err(Error::IndexOutOfRange {
                    what: "token id",
                    index: usize::from(c),
                    bound: vocab,
                });
            }
        }
        Ok(TokenSeq { steps, k, vocab, codes })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn get(&self, step: usize, codebook: usize) -> u16 {
        self.codes[step * self.k + codebook]
    }

    /// Token ids of one codebook across all steps.
    pub fn codebook_column(&self, codebook: usize) -> Vec<usize> {
        (0..self.steps).map(|i| usize::from(self.get(i, codebook))).collect()
    }

    /// Teacher-forcing inputs: the sequence shifted right by one step
    /// with a begin-of-sequence row in front. Output length equals
    /// `steps`; row i holds the tokens of step i-1.
    pub fn shifted_inputs(&self) -> Vec<Vec<usize>> {
        let bos = self.vocab;
        let mut rows = Vec::with_capacity(self.steps);
        rows.push(alloc::vec![bos; self.k]);
        for i in 0..self.steps.saturating_sub(1) {
            rows.push((0..self.k).map(|j| usize::from(self.get(i, j))).collect());
        }
        rows
    }
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    ln_self: LayerNormParams,
    self_attn: Mha,
    ln_cross: LayerNormParams,
    cross: Mha,
    ln_ffn: LayerNormParams,
    ffn: Ffn,
}

#[derive(Clone, Debug)]
pub struct MusicDecoder {
    pub k: usize,
    pub vocab: usize,
    pub hm: usize,
    max_steps: usize,
    max_frames: usize,
    tca: bool,
    self_attn_on: bool,
    tables: Vec<ParamId>,
    pos: ParamId,
    /// Temporal positions added to the visual rows before cross-attention;
    /// without them the keys are pure content and the alignment between
    /// token steps and frames is unlearnable.
    mem_pos: ParamId,
    blocks: Vec<DecoderBlock>,
    final_ln: LayerNormParams,
    heads_out: Vec<ParamId>,
}

impl MusicDecoder {
    pub fn new(params: &mut Params, prefix: &str, cfg: &GenConfig) -> Result<Self> {
        let hm = cfg.hm;
        let mut tables = Vec::with_capacity(cfg.k);
        for j in 0..cfg.k {
            // One extra row for the begin-of-sequence token.
            tables.push(params.create(&format!("{prefix}.embed{j}"), cfg.vocab + 1, hm, WEIGHT_INIT)?);
        }
        let pos = params.create(&format!("{prefix}.pos"), cfg.steps(), hm, WEIGHT_INIT)?;
        let mem_pos = params.create(&format!("{prefix}.mem_pos"), cfg.frames(), cfg.vis.d, WEIGHT_INIT)?;
        let mut blocks = Vec::with_capacity(cfg.dec_blocks);
        for i in 0..cfg.dec_blocks {
            let p = format!("{prefix}.layer{i}");
            blocks.push(DecoderBlock {
                ln_self: LayerNormParams::new(params, &format!("{p}.ln_self"), hm)?,
                self_attn: Mha::new(params, &format!("{p}.self"), hm, hm, hm, cfg.dec_heads)?,
                ln_cross: LayerNormParams::new(params, &format!("{p}.ln_cross"), hm)?,
                cross: Mha::new(params, &format!("{p}.cross"), hm, cfg.vis.d, hm, cfg.dec_heads)?,
                ln_ffn: LayerNormParams::new(params, &format!("{p}.ln_ffn"), hm)?,
                ffn: Ffn::new(params, &format!("{p}.ffn"), hm)?,
            });
        }
        let final_ln = LayerNormParams::new(params, &format!("{prefix}.final_ln"), hm)?;
        let mut heads_out = Vec::with_capacity(cfg.k);
        for j in 0..cfg.k {
            heads_out.push(params.create(&format!("{prefix}.head{j}"), hm, cfg.vocab, WEIGHT_INIT)?);
        }
        Ok(MusicDecoder {
            k: cfg.k,
            vocab: cfg.vocab,
            hm,
            max_steps: cfg.steps(),
            max_frames: cfg.frames(),
            tca: cfg.tca,
            self_attn_on: cfg.dec_self_attn,
            tables,
            pos,
            mem_pos,
            blocks,
            final_ln,
            heads_out,
        })
    }

    /// Sum the K per-step codebook embeddings and add the temporal
    /// positional embedding: one Hm row per step.
    pub fn embed_tokens(
        &self,
        tape: &mut Tape,
        params: &Params,
        input_rows: &[Vec<usize>],
    ) -> Result<ValueId> {
        let steps = input_rows.len();
        if steps == 0 || steps > self.max_steps {
            return Err(Error::invalid_config(format!(
                "decoder steps must be in [1, {}], got {steps}",
                self.max_steps
            )));
        }
        if input_rows.iter().any(|row| row.len() != self.k) {
            return Err(Error::invalid_config(format!(
                "every input row must hold {} codebook ids",
                self.k
            )));
        }
        let mut emb: Option<ValueId> = None;
        for j in 0..self.k {
            let ids: Vec<usize> = input_rows.iter().map(|row| row[j]).collect();
            let table = tape.param(params, self.tables[j]);
            let g = tape.gather_rows(table, &ids)?;
            emb = Some(match emb {
                None => g,
                Some(e) => tape.add(e, g)?,
            });
        }
        let emb = emb.expect("k >= 1");
        let pos = tape.param(params, self.pos);
        let pos = tape.slice_rows(pos, 0, steps)?;
        tape.add(emb, pos)
    }

    /// Teacher-forced forward pass: per-codebook logits [steps, vocab].
    /// Logits at step i depend only on input rows 0..=i and on the whole
    /// visual feature matrix.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Params,
        input_rows: &[Vec<usize>],
        z_v: ValueId,
    ) -> Result<Vec<ValueId>> {
        let steps = input_rows.len();
        let (z_rows, _) = tape.shape(z_v);
        if z_rows == 0 || steps == 0 {
            return Err(Error::invalid_config(
                "decoder needs at least one step and one visual row",
            ));
        }
        if z_rows % self.max_frames != 0 {
            return Err(Error::invalid_config(format!(
                "visual rows {z_rows} not a multiple of frame count {}",
                self.max_frames
            )));
        }
        // Tag visual rows with their frame position (rows_per_frame > 1
        // happens with unpooled queries: each frame's block shares one
        // position).
        let rows_per_frame = z_rows / self.max_frames;
        let ids: Vec<usize> = (0..z_rows).map(|r| r / rows_per_frame).collect();
        let mem_pos = tape.param(params, self.mem_pos);
        let mem_pos = tape.gather_rows(mem_pos, &ids)?;
        let z_v = tape.add(z_v, mem_pos)?;
        let mut x = self.embed_tokens(tape, params, input_rows)?;
        let causal = Rc::new(Mask::causal(steps));
        for block in &self.blocks {
            if self.self_attn_on {
                let a = block.ln_self.forward(tape, params, x)?;
                let attn = block.self_attn.forward(tape, params, a, a, Some(causal.clone()))?;
                x = tape.add(x, attn)?;
            }
            if self.tca {
                let a = block.ln_cross.forward(tape, params, x)?;
                let attn = block.cross.forward(tape, params, a, z_v, None)?;
                x = tape.add(x, attn)?;
            } else {
                // Ablation: no temporal cross-attention. The mean visual
                // feature, passed through the block's value and output
                // projections, is added to every step.
                let mean = tape.mean_rows(z_v)?;
                let wv = tape.param(params, block.cross.wv);
                let wo = tape.param(params, block.cross.wo);
                let v = tape.matmul(mean, wv)?;
                let v = tape.matmul(v, wo)?;
                x = tape.add_row(x, v)?;
            }
            let a = block.ln_ffn.forward(tape, params, x)?;
            let ffn = block.ffn.forward(tape, params, a)?;
            x = tape.add(x, ffn)?;
        }
        let x = self.final_ln.forward(tape, params, x)?;
        let mut logits = Vec::with_capacity(self.k);
        for j in 0..self.k {
            let head = tape.param(params, self.heads_out[j]);
            logits.push(tape.matmul(x, head)?);
        }
        Ok(logits)
    }

    /// Training loss: cross entropy of each codebook at each step,
    /// weighted per codebook, averaged over steps and codebooks.
    pub fn loss(
        &self,
        tape: &mut Tape,
        logits: &[ValueId],
        targets: &TokenSeq,
        codebook_weights: &[f64],
    ) -> Result<ValueId> {
        if logits.len() != self.k || codebook_weights.len() != self.k {
            return Err(Error::BadShape { expected: self.k, got: logits.len().min(codebook_weights.len()) });
        }
        if targets.k() != self.k || targets.vocab() != self.vocab {
            return Err(Error::invalid_config(format!(
                "targets (k {}, vocab {}) do not match decoder (k {}, vocab {})",
                targets.k(),
                targets.vocab(),
                self.k,
                self.vocab
            )));
        }
        let mut per_codebook = Vec::with_capacity(self.k);
        for j in 0..self.k {
            let ce = tape.cross_entropy_rows(logits[j], &targets.codebook_column(j))?;
            per_codebook.push(tape.affine(ce, codebook_weights[j], 0.0)?);
        }
        let all = tape.concat_rows(&per_codebook)?;
        tape.mean_all(all)
    }
}

/// Teacher-forced argmax accuracy per codebook: (correct, total) pairs.
/// Argmax ties resolve to the lower index.
pub fn token_accuracy(tape: &Tape, logits: &[ValueId], targets: &TokenSeq) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(logits.len());
    for (j, &lid) in logits.iter().enumerate() {
        let (steps, vocab) = tape.shape(lid);
        let values = tape.value(lid);
        let mut correct = 0;
        for i in 0..steps {
            let row = &values[i * vocab..(i + 1) * vocab];
            let mut best = 0usize;
            for (t, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = t;
                }
            }
            if best == usize::from(targets.get(i, j)) {
                correct += 1;
            }
        }
        out.push((correct, steps));
    }
    out
}


#[cfg(test)]
mod single_codebook_tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn k1_loss_is_plain_mean_cross_entropy() {
        let mut cfg = GenConfig::gradcheck_scale();
        cfg.k = 1;
        let mut params = Params::new(3);
        let dec = MusicDecoder::new(&mut params, "dec", &cfg).unwrap();
        let steps = cfg.steps();
        let mut rng = Rng::new(4);
        let codes: Vec<u16> = (0..steps).map(|_| rng.below(cfg.vocab) as u16).collect();
        let targets = TokenSeq::new(steps, 1, cfg.vocab, codes).unwrap();

        let mut tape = Tape::new();
        let data: Vec<f64> = (0..steps * cfg.vocab).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let logits = tape.leaf(steps, cfg.vocab, data).unwrap();
        let loss = dec.loss(&mut tape, &[logits], &targets, &[1.0]).unwrap();
        let ce = tape.cross_entropy_rows(logits, &targets.codebook_column(0)).unwrap();
        let want = tape.value(ce).iter().sum::<f64>() / steps as f64;
        assert!((tape.scalar(loss) - want).abs() <= 1e-15);
    }

    #[test]
    fn k1_embedding_is_lookup_plus_position() {
        let mut cfg = GenConfig::gradcheck_scale();
        cfg.k = 1;
        let mut params = Params::new(5);
        let dec = MusicDecoder::new(&mut params, "dec", &cfg).unwrap();
        let rows = vec![vec![2usize], vec![0], vec![cfg.vocab]]; // incl. start token
        let mut tape = Tape::new();
        let emb = dec.embed_tokens(&mut tape, &params, &rows).unwrap();
        let table = params.data(params.id_of("dec.embed0").unwrap()).to_vec();
        let pos = params.data(params.id_of("dec.pos").unwrap()).to_vec();
        let hm = cfg.hm;
        for (i, row) in rows.iter().enumerate() {
            for d in 0..hm {
                let want = table[row[0] * hm + d] + pos[i * hm + d];
                assert_eq!(tape.value(emb)[i * hm + d], want);
            }
        }
    }
}

#[cfg(test)]
mod validation_tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn degenerate_token_shapes_are_rejected() {
        assert!(TokenSeq::new(0, 2, 8, vec![]).is_err());
        assert!(TokenSeq::new(4, 0, 8, vec![]).is_err());
    }

    #[test]
    fn loss_rejects_mismatched_targets() {
        let cfg = GenConfig::gradcheck_scale();
        let mut params = Params::new(1);
        let dec = MusicDecoder::new(&mut params, "dec", &cfg).unwrap();
        let mut tape = Tape::new();
        let logits: alloc::vec::Vec<ValueId> = (0..cfg.k)
            .map(|_| tape.leaf(cfg.steps(), cfg.vocab, vec![0.0; cfg.steps() * cfg.vocab]).unwrap())
            .collect();
        // Wrong vocabulary.
        let bad = TokenSeq::new(cfg.steps(), cfg.k, cfg.vocab * 2, vec![0; cfg.steps() * cfg.k]).unwrap();
        assert!(dec.loss(&mut tape, &logits, &bad, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn ragged_input_rows_are_rejected() {
        let cfg = GenConfig::gradcheck_scale();
        let mut params = Params::new(2);
        let dec = MusicDecoder::new(&mut params, "dec", &cfg).unwrap();
        let mut tape = Tape::new();
        let rows = vec![vec![0usize; cfg.k], vec![0usize; cfg.k + 1]];
        assert!(dec.embed_tokens(&mut tape, &params, &rows).is_err());
    }
}
