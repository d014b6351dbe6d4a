//! Subcommand implementations.

pub mod ablate;
pub mod generate;
pub mod gradcheck;
pub mod score;
pub mod synth;
pub mod train_eval;
pub mod train_gen;

use crate::dataset::Dataset;
use crate::runconfig::RunConfig;
use crate::{CliError, Result};

/// Training and scoring require the dataset geometry to agree with the
/// model configuration; anything else is a configuration error.
pub fn check_geometry(cfg: &RunConfig, ds: &Dataset) -> Result<()> {
    let g = &cfg.gen;
    let d = &ds.cfg;
    let ok = g.t == d.t
        && g.f == d.f
        && g.f_prime == d.f_prime
        && g.k == d.k
        && g.vocab == d.vocab
        && g.vis.img_h == d.img_h
        && g.vis.img_w == d.img_w
        && g.vis.channels == d.channels;
    if !ok {
        return Err(CliError::usage(format!(
            "dataset geometry (t={} f={} f'={} k={} vocab={} frame {}x{}x{}) does not match \
             the model configuration (t={} f={} f'={} k={} vocab={} frame {}x{}x{})",
            d.t, d.f, d.f_prime, d.k, d.vocab, d.img_h, d.img_w, d.channels,
            g.t, g.f, g.f_prime, g.k, g.vocab, g.vis.img_h, g.vis.img_w, g.vis.channels,
        )));
    }
    Ok(())
}

/// Base config for a command: the given file, or defaults.
pub fn base_config(path: Option<&std::path::Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

pub fn parse_list<T: std::str::FromStr>(what: &str, csv: &str) -> Result<Vec<T>> {
    csv.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| CliError::usage(format!("{what}: cannot parse '{s}'")))
        })
        .collect()
}
