//! `gvm gradcheck`: finite-difference verification of the full models.
//!
//! Checks every element of every parameter on a small-but-complete
//! geometry (all modules, attention heads, both codebooks). Exit code 1
//! when the worst relative error exceeds the tolerance.

use super::base_config;
use crate::{CliError, Result};
use clap::Args;
use gvm_core::config::{EvalConfig, GenConfig};
use gvm_core::gradcheck::{check_eval_model, check_generator, GradCheckReport};
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Which model to check: gen|eval|both.
    #[arg(long, default_value = "both")]
    pub model: String,
    /// Seed for parameters, inputs and the synthetic batch.
    #[arg(long)]
    pub seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Maximum acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Corrupt one analytic gradient first; the check must then fail
    /// (harness self-test).
    #[arg(long)]
    pub inject_error: bool,
    /// Check a custom geometry instead of the built-in check scale.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(args: &GradcheckArgs) -> Result<()> {
    let (gen_cfg, eval_cfg) = match &args.config {
        Some(path) => {
            let rc = base_config(Some(path))?;
            (rc.gen.clone(), rc.eval_config())
        }
        None => (GenConfig::gradcheck_scale(), EvalConfig::gradcheck_scale()),
    };
    let inject = args.inject_error.then_some(1e-2);

    let mut all_ok = true;
    let mut worst_line = String::new();
    let mut run_one = |name: &str, report: GradCheckReport| {
        let ok = report.max_rel_err <= args.tol;
        println!(
            "model={name} elements={} max_rel_err={:.3e} worst={} index={} tol={:.1e} status={}",
            report.checked,
            report.max_rel_err,
            report.worst_param,
            report.worst_index,
            args.tol,
            if ok { "pass" } else { "fail" }
        );
        if !ok {
            all_ok = false;
            worst_line = format!(
                "{name}: max relative error {:.3e} at {}[{}] exceeds {:.1e}",
                report.max_rel_err, report.worst_param, report.worst_index, args.tol
            );
        }
    };

    match args.model.as_str() {
        "gen" => run_one("generator", check_generator(&gen_cfg, args.seed, args.eps, inject)?),
        "eval" => run_one("eval", check_eval_model(&eval_cfg, args.seed, args.eps, inject)?),
        "both" => {
            run_one("generator", check_generator(&gen_cfg, args.seed, args.eps, inject)?);
            run_one("eval", check_eval_model(&eval_cfg, args.seed, args.eps, inject)?);
        }
        other => {
            return Err(CliError::usage(format!(
                "--model must be gen|eval|both, got '{other}'"
            )))
        }
    }

    if !all_ok {
        return Err(CliError::check(worst_line));
    }
    Ok(())
}
