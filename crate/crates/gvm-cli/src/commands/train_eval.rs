//! `gvm train-eval`: train the video-music correspondence scorer.

use super::{base_config, check_geometry};
use crate::checkpoint::{self, Kind};
use crate::dataset;
use crate::{CliError, Result};
use clap::Args;
use gvm_core::config::TaLossVariant;
use gvm_core::eval::EvalModel;
use gvm_core::optim::Adam;
use gvm_core::params::Params;
use gvm_core::train::{train_eval_model, TrainConfig};
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct TrainEvalArgs {
    /// Training dataset (.gvmd).
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint (.gvmc).
    #[arg(short, long)]
    pub out: PathBuf,
    /// Seed for init and batch order (fresh runs; forbidden with --resume).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Resume from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Contrastive weight in the joint loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Contrastive temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Alignment loss flavor: abs|mse.
    #[arg(long)]
    pub loss_variant: Option<String>,
    /// Stop after this step (schedule keeps --steps).
    #[arg(long)]
    pub stop_at: Option<usize>,
    #[arg(long, default_value_t = 25)]
    pub log_every: usize,
}

pub fn run(args: &TrainEvalArgs) -> Result<()> {
    let ds = dataset::load(&args.data)?;

    let (cfg, mut params, model, mut adam, start) = match &args.resume {
        Some(path) => {
            if args.seed.is_some() || args.config.is_some() || args.lr.is_some()
                || args.batch.is_some() || args.warmup.is_some() || args.weight_decay.is_some()
                || args.steps.is_some() || args.lambda.is_some() || args.tau.is_some()
                || args.loss_variant.is_some()
            {
                return Err(CliError::usage(
                    "--resume takes its seed, config and optimizer settings from the checkpoint; \
                     only --stop-at, --log-every and -o may be combined with it",
                ));
            }
            let (ck, model, params, adam) = checkpoint::load_eval(path)?;
            (ck.config.clone(), params, model, adam, ck.step)
        }
        None => {
            let seed = args
                .seed
                .ok_or_else(|| CliError::usage("--seed is required for a fresh training run"))?;
            let mut cfg = base_config(args.config.as_deref())?;
            if let Some(v) = args.steps {
                cfg.steps = v;
            }
            if let Some(v) = args.batch {
                cfg.batch = v;
            }
            if let Some(v) = args.lr {
                cfg.lr = v;
            }
            if let Some(v) = args.weight_decay {
                cfg.weight_decay = v;
            }
            if let Some(v) = args.warmup {
                cfg.warmup = v;
            }
            if let Some(v) = args.lambda {
                cfg.lambda = v;
            }
            if let Some(v) = args.tau {
                cfg.tau = v;
            }
            if let Some(v) = &args.loss_variant {
                cfg.loss_variant = TaLossVariant::parse(v)?;
            }
            cfg.validate()?;
            let mut params = Params::new(seed);
            let model = EvalModel::new(&mut params, &cfg.eval_config())?;
            let adam = Adam::new(checkpoint::adam_config(&cfg), &params);
            (cfg, params, model, adam, 0)
        }
    };
    check_geometry(&cfg, &ds)?;

    let tcfg = TrainConfig {
        steps: cfg.steps,
        batch: cfg.batch,
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        warmup: cfg.warmup,
        seed: params.seed(),
        codebook_weights: Vec::new(),
        target_acc: None,
    };
    let end = args.stop_at.unwrap_or(cfg.steps).min(cfg.steps);
    if start > end {
        return Err(CliError::usage(format!(
            "checkpoint is at step {start}, past the requested stop {end}"
        )));
    }

    let log_every = args.log_every.max(1);
    let outcome =
        train_eval_model(&model, &mut params, &mut adam, &ds.samples, &tcfg, start..end, |s| {
            if s.step % log_every == 0 {
                eprintln!("step={} loss={:.6} ta={:.6} lr={:.3e}", s.step, s.loss, s.metric, s.lr);
            }
        })?;

    checkpoint::save(
        &args.out,
        Kind::Eval,
        &cfg,
        &params,
        &adam,
        outcome.steps_run,
        outcome.final_loss,
        outcome.final_metric,
    )?;
    eprintln!(
        "event=train_eval_done steps={} final_loss={:.6} final_ta={:.6} out={}",
        outcome.steps_run,
        outcome.final_loss,
        outcome.final_metric,
        args.out.display()
    );
    Ok(())
}
