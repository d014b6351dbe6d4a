//! Deterministic training drivers for the generator and the scorer.
//!
//! Pure compute: callers observe progress through a per-step callback
//! and do their own logging/checkpointing. Batch order is derived from
//! (seed, epoch), so a run can resume from any step boundary and
//! continue bit-identically.

use crate::error::{Error, Result};
use crate::eval::EvalModel;
use crate::model::Generator;
use crate::optim::{cosine_warmup_lr, Adam};
use crate::params::Params;
use crate::rng::Rng;
use crate::synth::PairedSample;
use crate::tape::Tape;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup: usize,
    pub seed: u64,
    /// Per-codebook loss weights; empty means all ones.
    pub codebook_weights: Vec<f64>,
    /// Stop once teacher-forced accuracy reaches this level (generator
    /// training only).
    pub target_acc: Option<f64>,
}

impl TrainConfig {
    pub fn new(steps: usize, batch: usize, lr: f64, seed: u64) -> Self {
        TrainConfig {
            steps,
            batch,
            lr,
            weight_decay: 0.01,
            warmup: 0,
            seed,
            codebook_weights: Vec::new(),
            target_acc: None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Teacher-forced token accuracy for the generator; mean diagonal
    /// attention for the scorer.
    pub metric: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps_run: usize,
    pub final_loss: f64,
    pub final_metric: f64,
    /// Per-codebook accuracy at the last step (generator only).
    pub per_codebook_acc: Vec<f64>,
}

/// Deterministic batch indices for one step: epochs shuffle the dataset
/// with an rng seeded by (seed, epoch) and partial tail batches are
/// dropped.
fn batch_indices(n: usize, batch: usize, seed: u64, step: usize) -> Vec<usize> {
    let per_epoch = (n / batch).max(1);
    let epoch = step / per_epoch;
    let slot = step % per_epoch;
    let mut rng = Rng::from_seed_stream(seed, 0x65706f6368 ^ (epoch as u64).wrapping_mul(0x9e37));
    let perm = rng.permutation(n);
    perm[slot * batch..(slot * batch + batch).min(n)].to_vec()
}

/// Train the generator with teacher forcing over `range` (a fresh run
/// is `0..cfg.steps`; a resume continues from the checkpointed step).
/// The learning-rate schedule always spans `cfg.steps`, so a split run
/// reproduces an unsplit one bit for bit.
pub fn train_generator<F>(
    gen: &Generator,
    params: &mut Params,
    adam: &mut Adam,
    data: &[PairedSample],
    cfg: &TrainConfig,
    range: core::ops::Range<usize>,
    mut on_step: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&StepStats),
{
    if data.is_empty() {
        return Err(Error::invalid_config("empty training set"));
    }
    let batch = cfg.batch.min(data.len()).max(1);
    let weights = if cfg.codebook_weights.is_empty() {
        vec![1.0; gen.cfg.k]
    } else {
        cfg.codebook_weights.clone()
    };
    let mut outcome = TrainOutcome {
        steps_run: range.start,
        final_loss: f64::NAN,
        final_metric: 0.0,
        per_codebook_acc: vec![0.0; gen.cfg.k],
    };
    for step in range.start..range.end.min(cfg.steps) {
        let idx = batch_indices(data.len(), batch, cfg.seed, step);
        let pairs: Vec<(&crate::encoder::VideoClip, &crate::decoder::TokenSeq)> =
            idx.iter().map(|&i| (&data[i].clip, &data[i].tokens)).collect();

        let mut tape = Tape::new();
        let fwd = gen.batch_loss(&mut tape, params, &pairs, &weights)?;
        let loss = tape.scalar(fwd.loss);
        let acc = fwd.correct as f64 / fwd.total.max(1) as f64;
        tape.backward(fwd.loss, params)?;
        let lr = cosine_warmup_lr(cfg.lr, cfg.warmup, cfg.steps, step);
        adam.step(params, lr)?;
        params.clear_grads();

        outcome.steps_run = step + 1;
        outcome.final_loss = loss;
        outcome.final_metric = acc;
        outcome.per_codebook_acc = fwd
            .per_codebook
            .iter()
            .map(|&(c, t)| c as f64 / t.max(1) as f64)
            .collect();
        on_step(&StepStats { step, lr, loss, metric: acc });

        if let Some(target) = cfg.target_acc {
            if acc >= target && outcome.per_codebook_acc.iter().all(|&a| a >= target) {
                break;
            }
        }
    }
    Ok(outcome)
}

/// Train the correspondence scorer on matched pairs over `range`.
pub fn train_eval_model<F>(
    model: &EvalModel,
    params: &mut Params,
    adam: &mut Adam,
    data: &[PairedSample],
    cfg: &TrainConfig,
    range: core::ops::Range<usize>,
    mut on_step: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&StepStats),
{
    if data.len() < 2 {
        return Err(Error::DegenerateBatch { size: data.len() });
    }
    let batch = cfg.batch.min(data.len()).max(2);
    let mut outcome = TrainOutcome {
        steps_run: range.start,
        final_loss: f64::NAN,
        final_metric: 0.0,
        per_codebook_acc: Vec::new(),
    };
    for step in range.start..range.end.min(cfg.steps) {
        let idx = batch_indices(data.len(), batch, cfg.seed, step);
        if idx.len() < 2 {
            return Err(Error::DegenerateBatch { size: idx.len() });
        }
        let pairs: Vec<(&crate::encoder::VideoClip, &crate::decoder::TokenSeq)> =
            idx.iter().map(|&i| (&data[i].clip, &data[i].tokens)).collect();

        let mut tape = Tape::new();
        let (loss_id, trace) = model.batch_loss(&mut tape, params, &pairs)?;
        let loss = tape.scalar(loss_id);
        tape.backward(loss_id, params)?;
        let lr = cosine_warmup_lr(cfg.lr, cfg.warmup, cfg.steps, step);
        adam.step(params, lr)?;
        params.clear_grads();

        outcome.steps_run = step + 1;
        outcome.final_loss = loss;
        outcome.final_metric = trace.mean_ta;
        on_step(&StepStats { step, lr, loss, metric: trace.mean_ta });
    }
    Ok(outcome)
}

/// Epoch-averaged losses from a per-step log (for monotonicity checks).
pub fn epoch_means(losses: &[f64], per_epoch: usize) -> Vec<f64> {
    losses
        .chunks(per_epoch.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}
