//! Model geometry and hyperparameter configuration.
//!
//! Defaults are desk-scale so tests and gradient checks run in seconds.
//! [`GenConfig::full_scale`] stores the published full-scale geometry;
//! it validates but is never exercised by tests.

use crate::error::{Error, Result};
use alloc::format;

/// How per-query attended features are pooled into one vector per frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Avg,
    Sum,
    /// Pass all query vectors downstream unpooled.
    None,
}

impl Pooling {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(Pooling::Avg),
            "sum" => Ok(Pooling::Sum),
            "none" => Ok(Pooling::None),
            other => Err(Error::invalid_config(format!(
                "pooling must be avg|sum|none, got '{other}'"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Avg => "avg",
            Pooling::Sum => "sum",
            Pooling::None => "none",
        }
    }
}

/// Temporal-alignment loss flavor: the absolute-deviation form is the
/// default; `Mse` squares the deviations instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaLossVariant {
    Abs,
    Mse,
}

impl TaLossVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "abs" => Ok(TaLossVariant::Abs),
            "mse" => Ok(TaLossVariant::Mse),
            other => Err(Error::invalid_config(format!(
                "loss variant must be abs|mse, got '{other}'"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaLossVariant::Abs => "abs",
            TaLossVariant::Mse => "mse",
        }
    }
}

/// Frame geometry and the patch self-attention encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualConfig {
    pub img_h: usize,
    pub img_w: usize,
    pub channels: usize,
    /// Patch side length; must divide both image dimensions.
    pub patch: usize,
    /// Hidden width of patch embeddings.
    pub d: usize,
    /// Number of self-attention blocks.
    pub layers: usize,
    pub heads: usize,
    /// Features are read after this many blocks (defaults to `layers`,
    /// i.e. the final layer).
    pub feature_layer: usize,
}

impl VisualConfig {
    pub fn toy() -> Self {
        VisualConfig {
            img_h: 16,
            img_w: 16,
            channels: 1,
            patch: 4,
            d: 32,
            layers: 2,
            heads: 4,
            feature_layer: 2,
        }
    }

    /// Patches per frame including the leading cls token.
    pub fn patches_with_cls(&self) -> usize {
        (self.img_h / self.patch) * (self.img_w / self.patch) + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        check_nonzero("visual.d", self.d)?;
        check_nonzero("visual.patch", self.patch)?;
        check_nonzero("visual.channels", self.channels)?;
        check_nonzero("visual.heads", self.heads)?;
        if !self.img_h.is_multiple_of(self.patch) || !self.img_w.is_multiple_of(self.patch) {
            return Err(Error::invalid_config(format!(
                "image {}x{} not divisible by patch {}",
                self.img_h, self.img_w, self.patch
            )));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(Error::invalid_config(format!(
                "visual.d {} not divisible by heads {}",
                self.d, self.heads
            )));
        }
        if self.feature_layer > self.layers {
            return Err(Error::invalid_config(format!(
                "feature_layer {} exceeds layer count {}",
                self.feature_layer, self.layers
            )));
        }
        Ok(())
    }
}

/// Full generator configuration: visual encoder, query-based feature
/// transform, and the conditional token decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub vis: VisualConfig,

    /// Trainable music query count.
    pub n_queries: usize,
    pub pooling: Pooling,
    /// Self-attention layers over the queries.
    pub n_self: usize,
    /// Cross-attention layers from queries onto patch features.
    pub n_cross: usize,

    /// Decoder hidden width.
    pub hm: usize,
    pub dec_blocks: usize,
    pub dec_heads: usize,
    /// Codebooks per step.
    pub k: usize,
    /// Vocabulary size per codebook.
    pub vocab: usize,
    /// Temporal cross-attention onto the visual features; when off, the
    /// mean-pooled visual feature is added to every step instead.
    pub tca: bool,
    /// Causal self-attention over music steps.
    pub dec_self_attn: bool,

    /// Clip duration in seconds.
    pub t: usize,
    /// Video frames per second.
    pub f: usize,
    /// Music token steps per second.
    pub f_prime: usize,
}

impl GenConfig {
    pub fn toy() -> Self {
        GenConfig {
            vis: VisualConfig::toy(),
            n_queries: 16,
            pooling: Pooling::Avg,
            n_self: 2,
            n_cross: 1,
            hm: 32,
            dec_blocks: 2,
            dec_heads: 4,
            k: 2,
            vocab: 64,
            tca: true,
            dec_self_attn: true,
            t: 8,
            f: 1,
            f_prime: 4,
        }
    }

    /// Published full-scale geometry. Stored for reference and config
    /// echo; far too large to train or check here.
    pub fn full_scale() -> Self {
        GenConfig {
            vis: VisualConfig {
                img_h: 336,
                img_w: 336,
                channels: 3,
                patch: 14,
                d: 1024,
                layers: 24,
                heads: 16,
                feature_layer: 24,
            },
            n_queries: 16,
            pooling: Pooling::Avg,
            n_self: 6,
            n_cross: 3,
            hm: 1536,
            dec_blocks: 48,
            dec_heads: 16,
            k: 4,
            vocab: 2048,
            tca: true,
            dec_self_attn: true,
            t: 30,
            f: 1,
            f_prime: 50,
        }
    }

    /// Tiny-but-complete geometry for exhaustive finite-difference
    /// checks: every module present, every parameter element checked.
    pub fn gradcheck_scale() -> Self {
        GenConfig {
            vis: VisualConfig {
                img_h: 8,
                img_w: 8,
                channels: 1,
                patch: 4,
                d: 8,
                layers: 1,
                heads: 2,
                feature_layer: 1,
            },
            n_queries: 4,
            pooling: Pooling::Avg,
            n_self: 1,
            n_cross: 1,
            hm: 8,
            dec_blocks: 1,
            dec_heads: 2,
            k: 2,
            vocab: 8,
            tca: true,
            dec_self_attn: true,
            t: 2,
            f: 1,
            f_prime: 2,
        }
    }

    /// Video frames per clip.
    pub fn frames(&self) -> usize {
        self.t * self.f
    }

    /// Music token steps per clip.
    pub fn steps(&self) -> usize {
        self.t * self.f_prime
    }

    pub fn validate(&self) -> Result<()> {
        self.vis.validate()?;
        check_nonzero("queries", self.n_queries)?;
        check_nonzero("hm", self.hm)?;
        check_nonzero("k", self.k)?;
        check_nonzero("vocab", self.vocab)?;
        check_nonzero("t", self.t)?;
        check_nonzero("f", self.f)?;
        check_nonzero("f_prime", self.f_prime)?;
        check_nonzero("dec_heads", self.dec_heads)?;
        if self.vocab > u16::MAX as usize {
            return Err(Error::invalid_config(format!(
                "vocab {} exceeds the u16 token range",
                self.vocab
            )));
        }
        if !self.hm.is_multiple_of(self.dec_heads) {
            return Err(Error::invalid_config(format!(
                "hm {} not divisible by dec_heads {}",
                self.hm, self.dec_heads
            )));
        }
        if !self.vis.d.is_multiple_of(self.dec_heads) {
            return Err(Error::invalid_config(format!(
                "visual.d {} not divisible by dec_heads {}",
                self.vis.d, self.dec_heads
            )));
        }
        check_nonzero("n_cross", self.n_cross)?;
        Ok(())
    }
}

/// Correspondence-scorer configuration. The scorer owns a small visual
/// encoder of the same structural form plus its own token embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub vis: VisualConfig,
    /// Music embedding width before projection.
    pub hm: usize,
    /// Unified hidden size both streams are projected to.
    pub h: usize,
    /// InfoNCE temperature.
    pub tau: f64,
    /// Weight of the contrastive term in the joint loss.
    pub lambda: f64,
    pub loss_variant: TaLossVariant,
    pub k: usize,
    pub vocab: usize,
    pub t: usize,
    pub f: usize,
    pub f_prime: usize,
}

impl EvalConfig {
    pub fn toy() -> Self {
        EvalConfig {
            vis: VisualConfig::toy(),
            hm: 32,
            h: 32,
            tau: 0.07,
            lambda: 1.0,
            loss_variant: TaLossVariant::Abs,
            k: 2,
            vocab: 64,
            t: 8,
            f: 1,
            f_prime: 4,
        }
    }

    pub fn gradcheck_scale() -> Self {
        EvalConfig {
            vis: GenConfig::gradcheck_scale().vis,
            hm: 8,
            h: 8,
            tau: 0.07,
            lambda: 1.0,
            loss_variant: TaLossVariant::Abs,
            k: 2,
            vocab: 8,
            t: 2,
            f: 1,
            f_prime: 2,
        }
    }

    pub fn frames(&self) -> usize {
        self.t * self.f
    }

    pub fn steps(&self) -> usize {
        self.t * self.f_prime
    }

    pub fn validate(&self) -> Result<()> {
        self.vis.validate()?;
        check_nonzero("eval.hm", self.hm)?;
        check_nonzero("eval.h", self.h)?;
        check_nonzero("eval.k", self.k)?;
        check_nonzero("eval.vocab", self.vocab)?;
        check_nonzero("eval.t", self.t)?;
        check_nonzero("eval.f", self.f)?;
        check_nonzero("eval.f_prime", self.f_prime)?;
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::invalid_config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::invalid_config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

fn check_nonzero(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::invalid_config(format!("{name} must be positive")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        GenConfig::toy().validate().unwrap();
        GenConfig::full_scale().validate().unwrap();
        GenConfig::gradcheck_scale().validate().unwrap();
        EvalConfig::toy().validate().unwrap();
        EvalConfig::gradcheck_scale().validate().unwrap();
    }

    #[test]
    fn patch_shape_law() {
        // p = (H/s)(W/s) + 1 across a grid of geometries.
        for (h, w, s) in [(16usize, 16usize, 4usize), (8, 16, 4), (12, 20, 2), (336, 336, 14)] {
            let v = VisualConfig { img_h: h, img_w: w, channels: 1, patch: s, d: 8, layers: 1, heads: 2, feature_layer: 1 };
            assert_eq!(v.patches_with_cls(), (h / s) * (w / s) + 1);
        }
    }

    #[test]
    fn indivisible_patch_rejected() {
        let mut v = VisualConfig::toy();
        v.patch = 5;
        assert!(v.validate().is_err());
    }

    #[test]
    fn pooling_parse_roundtrip() {
        for p in [Pooling::Avg, Pooling::Sum, Pooling::None] {
            assert_eq!(Pooling::parse(p.as_str()).unwrap(), p);
        }
        assert!(Pooling::parse("max").is_err());
    }
}
