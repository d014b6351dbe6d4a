//! The dotted-key run configuration: one schema for model geometry,
//! scorer geometry, optimizer, sampling and data synthesis.
//!
//! Files are plain text, one `key = value` per line, `#` comments.
//! Unknown keys are rejected. Command-line flags override file values.
//! `to_text` emits the full schema sorted by key; a checkpoint embeds
//! that echo so a model can always be rebuilt from its own file.

use crate::{CliError, Result};
use gvm_core::config::{EvalConfig, GenConfig, Pooling, TaLossVariant};
use gvm_core::synth::SynthConfig;
use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub eval_hm: usize,
    pub eval_h: usize,
    pub tau: f64,
    pub lambda: f64,
    pub loss_variant: TaLossVariant,

    pub lr: f64,
    pub weight_decay: f64,
    pub warmup: usize,
    pub steps: usize,
    pub batch: usize,
    pub codebook_weights: Vec<f64>,

    pub top_k: usize,

    pub scenes: usize,
    pub rho: f64,
    pub noise: f64,
    pub change_prob: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gen: GenConfig::toy(),
            eval_hm: 32,
            eval_h: 32,
            tau: 0.07,
            lambda: 1.0,
            loss_variant: TaLossVariant::Abs,
            lr: 1e-5,
            weight_decay: 0.01,
            warmup: 4000,
            steps: 2000,
            batch: 6,
            codebook_weights: Vec::new(),
            top_k: 250,
            scenes: 8,
            rho: 0.9,
            noise: 0.05,
            change_prob: 0.5,
        }
    }
}

impl RunConfig {
    /// Scorer configuration sharing the generator's clip geometry.
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            vis: self.gen.vis.clone(),
            hm: self.eval_hm,
            h: self.eval_h,
            tau: self.tau,
            lambda: self.lambda,
            loss_variant: self.loss_variant,
            k: self.gen.k,
            vocab: self.gen.vocab,
            t: self.gen.t,
            f: self.gen.f,
            f_prime: self.gen.f_prime,
        }
    }

    /// Synthesis configuration sharing the generator's clip geometry.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            t: self.gen.t,
            f: self.gen.f,
            f_prime: self.gen.f_prime,
            scenes: self.scenes,
            img_h: self.gen.vis.img_h,
            img_w: self.gen.vis.img_w,
            channels: self.gen.vis.channels,
            k: self.gen.k,
            vocab: self.gen.vocab,
            rho: self.rho,
            noise: self.noise,
            change_prob: self.change_prob,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.eval_config().validate()?;
        self.synth_config().validate()?;
        if !self.codebook_weights.is_empty() && self.codebook_weights.len() != self.gen.k {
            return Err(CliError::usage(format!(
                "optim.codebook_weights needs {} entries, got {}",
                self.gen.k,
                self.codebook_weights.len()
            )));
        }
        if self.top_k == 0 {
            return Err(CliError::usage("sampling.top_k must be positive"));
        }
        Ok(())
    }

    /// Apply one dotted-key assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str, value: &str| {
            CliError::usage(format!("config key '{what}': cannot parse '{value}'"))
        };
        macro_rules! num {
            ($field:expr, $ty:ty) => {{
                $field = value.parse::<$ty>().map_err(|_| bad(key, value))?;
            }};
        }
        match key {
            "model.img_h" => num!(self.gen.vis.img_h, usize),
            "model.img_w" => num!(self.gen.vis.img_w, usize),
            "model.channels" => num!(self.gen.vis.channels, usize),
            "model.patch" => num!(self.gen.vis.patch, usize),
            "model.d" => num!(self.gen.vis.d, usize),
            "model.layers" => num!(self.gen.vis.layers, usize),
            "model.heads" => num!(self.gen.vis.heads, usize),
            "model.feature_layer" => num!(self.gen.vis.feature_layer, usize),
            "model.queries" => num!(self.gen.n_queries, usize),
            "model.pooling" => self.gen.pooling = Pooling::parse(value)?,
            "model.n_self" => num!(self.gen.n_self, usize),
            "model.n_cross" => num!(self.gen.n_cross, usize),
            "model.hm" => num!(self.gen.hm, usize),
            "model.dec_blocks" => num!(self.gen.dec_blocks, usize),
            "model.dec_heads" => num!(self.gen.dec_heads, usize),
            "model.k" => num!(self.gen.k, usize),
            "model.vocab" => num!(self.gen.vocab, usize),
            "model.tca" => self.gen.tca = parse_bool(key, value)?,
            "model.dec_self_attn" => self.gen.dec_self_attn = parse_bool(key, value)?,
            "model.t" => num!(self.gen.t, usize),
            "model.f" => num!(self.gen.f, usize),
            "model.f_prime" => num!(self.gen.f_prime, usize),
            "eval.hm" => num!(self.eval_hm, usize),
            "eval.h" => num!(self.eval_h, usize),
            "eval.tau" => num!(self.tau, f64),
            "eval.lambda" => num!(self.lambda, f64),
            "eval.loss_variant" => self.loss_variant = TaLossVariant::parse(value)?,
            "optim.lr" => num!(self.lr, f64),
            "optim.weight_decay" => num!(self.weight_decay, f64),
            "optim.warmup" => num!(self.warmup, usize),
            "optim.steps" => num!(self.steps, usize),
            "optim.batch" => num!(self.batch, usize),
            "optim.codebook_weights" => {
                self.codebook_weights = if value.trim().is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|s| s.trim().parse::<f64>().map_err(|_| bad(key, value)))
                        .collect::<Result<Vec<f64>>>()?
                };
            }
            "sampling.top_k" => num!(self.top_k, usize),
            "synth.scenes" => num!(self.scenes, usize),
            "synth.rho" => num!(self.rho, f64),
            "synth.noise" => num!(self.noise, f64),
            "synth.change_prob" => num!(self.change_prob, f64),
            other => return Err(CliError::usage(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse a config file's text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::usage(format!(
                    "config line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::usage(format!("config line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_text(&text)
    }

    /// Full schema as sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        let weights = self
            .codebook_weights
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut pairs: Vec<(&str, String)> = vec![
            ("model.img_h", self.gen.vis.img_h.to_string()),
            ("model.img_w", self.gen.vis.img_w.to_string()),
            ("model.channels", self.gen.vis.channels.to_string()),
            ("model.patch", self.gen.vis.patch.to_string()),
            ("model.d", self.gen.vis.d.to_string()),
            ("model.layers", self.gen.vis.layers.to_string()),
            ("model.heads", self.gen.vis.heads.to_string()),
            ("model.feature_layer", self.gen.vis.feature_layer.to_string()),
            ("model.queries", self.gen.n_queries.to_string()),
            ("model.pooling", self.gen.pooling.as_str().to_string()),
            ("model.n_self", self.gen.n_self.to_string()),
            ("model.n_cross", self.gen.n_cross.to_string()),
            ("model.hm", self.gen.hm.to_string()),
            ("model.dec_blocks", self.gen.dec_blocks.to_string()),
            ("model.dec_heads", self.gen.dec_heads.to_string()),
            ("model.k", self.gen.k.to_string()),
            ("model.vocab", self.gen.vocab.to_string()),
            ("model.tca", self.gen.tca.to_string()),
            ("model.dec_self_attn", self.gen.dec_self_attn.to_string()),
            ("model.t", self.gen.t.to_string()),
            ("model.f", self.gen.f.to_string()),
            ("model.f_prime", self.gen.f_prime.to_string()),
            ("eval.hm", self.eval_hm.to_string()),
            ("eval.h", self.eval_h.to_string()),
            ("eval.tau", self.tau.to_string()),
            ("eval.lambda", self.lambda.to_string()),
            ("eval.loss_variant", self.loss_variant.as_str().to_string()),
            ("optim.lr", self.lr.to_string()),
            ("optim.weight_decay", self.weight_decay.to_string()),
            ("optim.warmup", self.warmup.to_string()),
            ("optim.steps", self.steps.to_string()),
            ("optim.batch", self.batch.to_string()),
            ("optim.codebook_weights", weights),
            ("sampling.top_k", self.top_k.to_string()),
            ("synth.scenes", self.scenes.to_string()),
            ("synth.rho", self.rho.to_string()),
            ("synth.noise", self.noise.to_string()),
            ("synth.change_prob", self.change_prob.to_string()),
        ];
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Weights for the codebook loss, defaulting to ones.
    pub fn codebook_weights_or_ones(&self) -> Vec<f64> {
        if self.codebook_weights.is_empty() {
            vec![1.0; self.gen.k]
        } else {
            self.codebook_weights.clone()
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        other => Err(CliError::usage(format!(
            "config key '{key}': expected true/false/on/off, got '{other}'"
        ))),
    }
}
