//! `gvm score`: temporal-alignment and cross-modal-relevance scores.
//!
//! Scores either every pair of a dataset, or one pair of per-second
//! feature files. Output is one UTF-8 line per pair: `pair_id ta cmr`.

use crate::checkpoint;
use crate::dataset;
use crate::gvmt;
use crate::{CliError, Result};
use clap::Args;
use std::io::Write;
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Scorer checkpoint (.gvmc, kind eval).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Paired dataset (.gvmd): scores every pair.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Per-second video features, GVMT f64 [t, D] (with --music-features).
    #[arg(long)]
    pub video_features: Option<PathBuf>,
    /// Per-second music features, GVMT f64 [t, Hm].
    #[arg(long)]
    pub music_features: Option<PathBuf>,
    /// Write the score lines here instead of stdout.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &ScoreArgs) -> Result<()> {
    let (ck, model, params, _adam) = checkpoint::load_eval(&args.checkpoint)?;

    let mut lines = String::new();
    match (&args.data, &args.video_features, &args.music_features) {
        (Some(data), None, None) => {
            let ds = dataset::load(data)?;
            super::check_geometry(&ck.config, &ds)?;
            for (i, s) in ds.samples.iter().enumerate() {
                let scores = model.score(&params, &s.clip, &s.tokens)?;
                lines.push_str(&format!("{i} {:.6} {:.6}\n", scores.ta, scores.cmr));
            }
        }
        (None, Some(v), Some(m)) => {
            let v = gvmt::load(v)?.expect_float("video features")?;
            let m = gvmt::load(m)?.expect_float("music features")?;
            let scores = model.score_features(&params, &v, &m)?;
            lines.push_str(&format!("0 {:.6} {:.6}\n", scores.ta, scores.cmr));
        }
        _ => {
            return Err(CliError::usage(
                "provide either --data FILE, or both --video-features and --music-features",
            ))
        }
    }

    match &args.out {
        Some(path) => std::fs::write(path, lines.as_bytes())?,
        None => {
            std::io::stdout().write_all(lines.as_bytes())?;
        }
    }
    Ok(())
}
