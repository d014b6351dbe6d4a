//! `gvm train-gen`: teacher-forced training of the generator.

use super::{base_config, check_geometry};
use crate::checkpoint::{self, Kind};
use crate::dataset;
use crate::runconfig::RunConfig;
use crate::{CliError, Result};
use clap::Args;
use gvm_core::config::Pooling;
use gvm_core::model::Generator;
use gvm_core::optim::Adam;
use gvm_core::params::Params;
use gvm_core::train::{train_generator, TrainConfig};
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct TrainGenArgs {
    /// Training dataset (.gvmd).
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint (.gvmc).
    #[arg(short, long)]
    pub out: PathBuf,
    /// Seed for init and batch order (fresh runs; forbidden with --resume).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Config file (fresh runs).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Resume from a checkpoint; model and optimizer settings come from it.
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
    /// Music query count (ablation axis).
    #[arg(long)]
    pub queries: Option<usize>,
    /// Query pooling: avg|sum|none (ablation axis).
    #[arg(long)]
    pub pooling: Option<String>,
    /// Temporal cross-attention: on|off (ablation axis).
    #[arg(long)]
    pub tca: Option<String>,
    /// Comma-separated per-codebook loss weights.
    #[arg(long)]
    pub codebook_weights: Option<String>,
    /// Stop after this step (checkpoint mid-run; schedule keeps --steps).
    #[arg(long)]
    pub stop_at: Option<usize>,
    /// Stop early once teacher-forced accuracy reaches this level.
    #[arg(long)]
    pub target_acc: Option<f64>,
    /// Log every n steps.
    #[arg(long, default_value_t = 25)]
    pub log_every: usize,
}

pub fn run(args: &TrainGenArgs) -> Result<()> {
    let ds = dataset::load(&args.data)?;

    let (cfg, mut params, gen, mut adam, start) = match &args.resume {
        Some(path) => {
            if args.seed.is_some() || args.config.is_some() || args.queries.is_some()
                || args.pooling.is_some() || args.tca.is_some() || args.lr.is_some()
                || args.batch.is_some() || args.warmup.is_some() || args.weight_decay.is_some()
                || args.steps.is_some() || args.codebook_weights.is_some()
            {
                return Err(CliError::usage(
                    "--resume takes its seed, config and optimizer settings from the checkpoint; \
                     only --stop-at, --target-acc, --log-every and -o may be combined with it",
                ));
            }
            let (ck, gen, params, adam) = checkpoint::load_generator(path)?;
            (ck.config.clone(), params, gen, adam, ck.step)
        }
        None => {
            let seed = args
                .seed
                .ok_or_else(|| CliError::usage("--seed is required for a fresh training run"))?;
            let mut cfg = base_config(args.config.as_deref())?;
            apply_flags(&mut cfg, args)?;
            cfg.validate()?;
            let mut params = Params::new(seed);
            let gen = Generator::new(&mut params, &cfg.gen)?;
            let adam = Adam::new(checkpoint::adam_config(&cfg), &params);
            (cfg, params, gen, adam, 0)
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
        codebook_weights: cfg.codebook_weights_or_ones(),
        target_acc: args.target_acc,
    };
    let end = args.stop_at.unwrap_or(cfg.steps).min(cfg.steps);
    if start > end {
        return Err(CliError::usage(format!(
            "checkpoint is at step {start}, past the requested stop {end}"
        )));
    }

    let log_every = args.log_every.max(1);
    let outcome = train_generator(&gen, &mut params, &mut adam, &ds.samples, &tcfg, start..end, |s| {
        if s.step % log_every == 0 {
            eprintln!("step={} loss={:.6} acc={:.6} lr={:.3e}", s.step, s.loss, s.metric, s.lr);
        }
    })?;

    checkpoint::save(
        &args.out,
        Kind::Generator,
        &cfg,
        &params,
        &adam,
        outcome.steps_run,
        outcome.final_loss,
        outcome.final_metric,
    )?;
    let codebook_acc = outcome
        .per_codebook_acc
        .iter()
        .map(|a| format!("{a:.6}"))
        .collect::<Vec<_>>()
        .join(",");
    eprintln!(
        "event=train_gen_done steps={} final_loss={:.6} final_acc={:.6} codebook_acc={} out={}",
        outcome.steps_run,
        outcome.final_loss,
        outcome.final_metric,
        codebook_acc,
        args.out.display()
    );
    Ok(())
}

fn apply_flags(cfg: &mut RunConfig, args: &TrainGenArgs) -> Result<()> {
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
    if let Some(v) = args.queries {
        cfg.gen.n_queries = v;
    }
    if let Some(v) = &args.pooling {
        cfg.gen.pooling = Pooling::parse(v)?;
    }
    if let Some(v) = &args.tca {
        cfg.gen.tca = parse_on_off("--tca", v)?;
    }
    if let Some(v) = &args.codebook_weights {
        cfg.set("optim.codebook_weights", v)?;
    }
    Ok(())
}

pub(super) fn parse_on_off(flag: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        other => Err(CliError::usage(format!("{flag}: expected on|off, got '{other}'"))),
    }
}
