//! `gvm generate`: sample music tokens for a video and render them.

use crate::checkpoint;
use crate::dataset;
use crate::gvmt;
use crate::wav;
use crate::{CliError, Result};
use clap::Args;
use gvm_core::encoder::VideoClip;
use gvm_core::render;
use std::path::{Path, PathBuf};

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Generator checkpoint (.gvmc).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Video input: a GVMT f64 tensor [t*f, H, W, C].
    #[arg(long)]
    pub video: Option<PathBuf>,
    /// Alternative video input: a dataset file plus --index.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<usize>,
    /// Output prefix; writes <prefix>.tokens.gvmt, <prefix>.wav, <prefix>.svg.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Keep this many top logits when sampling (default from the config echo).
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Sampling seed.
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 32000)]
    pub sample_rate: u32,
}

pub fn run(args: &GenerateArgs) -> Result<()> {
    let (ck, gen, params, _adam) = checkpoint::load_generator(&args.checkpoint)?;
    let cfg = &ck.config;

    let clip = match (&args.video, &args.data, args.index) {
        (Some(v), None, None) => {
            let t = gvmt::load(v)?.expect_float("video tensor")?;
            VideoClip::new(cfg.gen.t, cfg.gen.f, t)?
        }
        (None, Some(d), Some(i)) => {
            let ds = dataset::load(d)?;
            let sample = ds.samples.get(i).ok_or_else(|| {
                CliError::usage(format!("--index {i} out of range ({} samples)", ds.samples.len()))
            })?;
            sample.clip.clone()
        }
        _ => {
            return Err(CliError::usage(
                "provide exactly one video source: --video FILE, or --data FILE --index N",
            ))
        }
    };

    let top_k = args.top_k.unwrap_or(cfg.top_k);
    if top_k == 0 {
        return Err(CliError::usage("--top-k must be positive"));
    }
    let tokens = gen.generate(&params, &clip, top_k, args.seed)?;

    let tokens_path = suffixed(&args.out, "tokens.gvmt");
    gvmt::save_u16(&tokens_path, &[tokens.steps(), tokens.k()], tokens.codes())?;
    let samples = render::tokens_to_samples(&tokens, cfg.gen.f_prime, args.sample_rate)?;
    let wav_path = suffixed(&args.out, "wav");
    wav::save_wav(&wav_path, &samples, args.sample_rate)?;
    let svg_path = suffixed(&args.out, "svg");
    std::fs::write(&svg_path, render::pitch_contour_svg(&tokens))?;

    eprintln!(
        "event=generate steps={} k={} top_k={} seed={} tokens={} wav={} svg={}",
        tokens.steps(),
        tokens.k(),
        top_k,
        args.seed,
        tokens_path.display(),
        wav_path.display(),
        svg_path.display()
    );
    Ok(())
}

fn suffixed(prefix: &Path, ext: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(ext);
    prefix.with_file_name(name)
}
