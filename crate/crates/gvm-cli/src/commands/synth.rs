//! `gvm synth`: generate a paired dataset with a planted correlation.

use super::base_config;
use crate::dataset::{self, Dataset};
use crate::{CliError, Result};
use clap::Args;
use gvm_core::synth::make_dataset;
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of paired samples to generate.
    #[arg(long)]
    pub n: usize,
    /// Planted correlation strength in [0, 1].
    #[arg(long)]
    pub rho: f64,
    /// Generation seed.
    #[arg(long)]
    pub seed: u64,
    /// Output dataset file (.gvmd).
    #[arg(short, long)]
    pub out: PathBuf,
    /// Config file; geometry defaults come from it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scene classes (default from config).
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Frame noise amplitude.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Scene change probability per frame boundary.
    #[arg(long)]
    pub change_prob: Option<f64>,
}

pub fn run(args: &SynthArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.rho) {
        return Err(CliError::usage(format!(
            "--rho must be in [0, 1], got {}",
            args.rho
        )));
    }
    let mut cfg = base_config(args.config.as_deref())?;
    cfg.rho = args.rho;
    if let Some(s) = args.scenes {
        cfg.scenes = s;
    }
    if let Some(n) = args.noise {
        cfg.noise = n;
    }
    if let Some(c) = args.change_prob {
        cfg.change_prob = c;
    }
    let synth = cfg.synth_config();
    synth.validate()?;

    let samples = make_dataset(&synth, args.seed, args.n)?;
    let ds = Dataset { cfg: synth, seed: args.seed, samples };
    dataset::save(&args.out, &ds)?;
    eprintln!(
        "event=synth n={} rho={} seed={} out={}",
        args.n,
        args.rho,
        args.seed,
        args.out.display()
    );
    Ok(())
}
