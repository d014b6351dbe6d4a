//! `gvm ablate`: the query-count x pooling x cross-attention grid.
//!
//! For each variant: train a generator on the train split of the given
//! data, sample music for the held-out clips (argmax decoding), score it
//! with the supplied scorer checkpoint, and print one aligned table row
//! of final training loss, mean TA and mean CMR.

use super::{base_config, check_geometry, parse_list};
use crate::checkpoint;
use crate::dataset;
use crate::{CliError, Result};
use clap::Args;
use gvm_core::config::Pooling;
use gvm_core::model::Generator;
use gvm_core::optim::Adam;
use gvm_core::params::Params;
use gvm_core::synth::split_indices;
use gvm_core::train::{train_generator, TrainConfig};
use std::io::Write;
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Planted dataset; split 0.85/0.15 into train and scoring parts.
    #[arg(long)]
    pub data: PathBuf,
    /// Trained scorer checkpoint used to evaluate generations.
    #[arg(long)]
    pub eval_checkpoint: PathBuf,
    /// Comma-separated query counts, e.g. 4,16.
    #[arg(long, default_value = "16")]
    pub queries: String,
    /// Comma-separated pooling modes, e.g. avg,sum.
    #[arg(long, default_value = "avg")]
    pub pooling: String,
    /// Comma-separated cross-attention switches, e.g. on,off.
    #[arg(long, default_value = "on")]
    pub tca: String,
    #[arg(long)]
    pub seed: u64,
    /// Training budget per variant.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the table here instead of stdout.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &AblateArgs) -> Result<()> {
    let ds = dataset::load(&args.data)?;
    if ds.samples.len() < 4 {
        return Err(CliError::usage(format!(
            "ablation needs at least 4 samples, got {}",
            ds.samples.len()
        )));
    }
    let (ck, scorer, scorer_params, _) = checkpoint::load_eval(&args.eval_checkpoint)?;
    check_geometry(&ck.config, &ds)?;

    let queries: Vec<usize> = parse_list("--queries", &args.queries)?;
    let poolings: Vec<Pooling> = args
        .pooling
        .split(',')
        .map(|s| Pooling::parse(s.trim()).map_err(CliError::from))
        .collect::<Result<_>>()?;
    let tcas: Vec<bool> = args
        .tca
        .split(',')
        .map(|s| super::train_gen::parse_on_off("--tca", s.trim()))
        .collect::<Result<_>>()?;

    let mut base = base_config(args.config.as_deref())?;
    if let Some(v) = args.steps {
        base.steps = v;
    }
    if let Some(v) = args.batch {
        base.batch = v;
    }
    if let Some(v) = args.lr {
        base.lr = v;
    }
    if let Some(v) = args.warmup {
        base.warmup = v;
    }
    check_geometry(&base, &ds)?;

    let (train_idx, held_idx) = split_indices(ds.samples.len(), 0.85, args.seed)?;
    let train: Vec<_> = train_idx.iter().map(|&i| ds.samples[i].clone()).collect();

    let mut table = String::new();
    table.push_str(&format!(
        "{:<18} {:>10} {:>8} {:>8}\n",
        "variant", "loss", "ta", "cmr"
    ));
    for &q in &queries {
        for &pool in &poolings {
            for &tca in &tcas {
                let mut cfg = base.clone();
                cfg.gen.n_queries = q;
                cfg.gen.pooling = pool;
                cfg.gen.tca = tca;
                cfg.validate()?;

                let mut params = Params::new(args.seed);
                let gen = Generator::new(&mut params, &cfg.gen)?;
                let mut adam = Adam::new(checkpoint::adam_config(&cfg), &params);
                let tcfg = TrainConfig {
                    steps: cfg.steps,
                    batch: cfg.batch,
                    lr: cfg.lr,
                    weight_decay: cfg.weight_decay,
                    warmup: cfg.warmup,
                    seed: args.seed,
                    codebook_weights: cfg.codebook_weights_or_ones(),
                    target_acc: None,
                };
                let outcome =
                    train_generator(&gen, &mut params, &mut adam, &train, &tcfg, 0..cfg.steps, |_| {})?;

                let mut ta_sum = 0.0;
                let mut cmr_sum = 0.0;
                for (gi, &i) in held_idx.iter().enumerate() {
                    let sample = &ds.samples[i];
                    let tokens = gen.generate(&params, &sample.clip, 1, gi as u64)?;
                    let s = scorer.score(&scorer_params, &sample.clip, &tokens)?;
                    ta_sum += s.ta;
                    cmr_sum += s.cmr;
                }
                let n = held_idx.len() as f64;
                let name = format!("q{q}-{}-{}", pool.as_str(), if tca { "tca" } else { "notca" });
                table.push_str(&format!(
                    "{:<18} {:>10.6} {:>8.4} {:>8.4}\n",
                    name,
                    outcome.final_loss,
                    ta_sum / n,
                    cmr_sum / n
                ));
                eprintln!(
                    "event=ablate_variant variant={name} steps={} loss={:.6} acc={:.4}",
                    outcome.steps_run, outcome.final_loss, outcome.final_metric
                );
            }
        }
    }

    match &args.out {
        Some(path) => std::fs::write(path, table.as_bytes())?,
        None => std::io::stdout().write_all(table.as_bytes())?,
    }
    Ok(())
}
