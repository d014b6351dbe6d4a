//! Synthetic paired video/music data with a planted cross-modal
//! correlation of tunable strength.
//!
//! A latent scene sequence drives both modalities: each scene paints a
//! distinct block-constant frame texture, and each (scene, codebook)
//! pair has a designated token. Per token step, with probability rho the
//! scene's token is emitted, otherwise a uniform draw — so rho = 1 makes
//! the music a deterministic function of the scenes and rho = 0 makes
//! the streams independent.

use crate::decoder::TokenSeq;
use crate::encoder::VideoClip;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub t: usize,
    pub f: usize,
    pub f_prime: usize,
    /// Number of scene classes (at most 16: textures are 4-bit quadrant
    /// patterns).
    pub scenes: usize,
    pub img_h: usize,
    pub img_w: usize,
    pub channels: usize,
    pub k: usize,
    pub vocab: usize,
    /// Planted correlation strength in [0, 1].
    pub rho: f64,
    /// Additive uniform frame noise amplitude.
    pub noise: f64,
    /// Probability of drawing a fresh scene at each frame boundary.
    pub change_prob: f64,
}

impl SynthConfig {
    pub fn toy(rho: f64) -> Self {
        SynthConfig {
            t: 8,
            f: 1,
            f_prime: 4,
            scenes: 8,
            img_h: 16,
            img_w: 16,
            channels: 1,
            k: 2,
            vocab: 64,
            rho,
            noise: 0.05,
            change_prob: 0.5,
        }
    }

    pub fn frames(&self) -> usize {
        self.t * self.f
    }

    pub fn steps(&self) -> usize {
        self.t * self.f_prime
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t", self.t),
            ("f", self.f),
            ("f_prime", self.f_prime),
            ("k", self.k),
            ("vocab", self.vocab),
            ("img_h", self.img_h),
            ("img_w", self.img_w),
            ("channels", self.channels),
        ] {
            if v == 0 {
                return Err(Error::invalid_config(format!("synth {name} must be positive")));
            }
        }
        if self.scenes == 0 || self.scenes > 16 {
            return Err(Error::invalid_config(format!(
                "scenes must be in [1, 16], got {}",
                self.scenes
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid_config(format!("rho must be in [0, 1], got {}", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.change_prob) {
            return Err(Error::invalid_config(format!(
                "change_prob must be in [0, 1], got {}",
                self.change_prob
            )));
        }
        if self.noise.is_nan() || self.noise < 0.0 {
            return Err(Error::invalid_config(format!(
                "noise must be non-negative, got {}",
                self.noise
            )));
        }
        if self.vocab > u16::MAX as usize {
            return Err(Error::invalid_config(format!(
                "vocab {} exceeds the u16 token range",
                self.vocab
            )));
        }
        Ok(())
    }
}

/// One paired sample plus its ground-truth scene script (test-only
/// information, never shown to models at training time).
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub clip: VideoClip,
    pub tokens: TokenSeq,
    pub scenes: Vec<u16>,
}

/// The token a scene emits on a given codebook when the planted signal
/// fires.
pub fn scene_token(scene: usize, codebook: usize, scenes: usize, vocab: usize) -> u16 {
    let spread = (vocab / scenes).max(1);
    ((scene * spread + codebook) % vocab) as u16
}

/// Deterministic block-constant texture: the frame is split into
/// quadrants and quadrant q is bright iff bit q of the scene id is set.
fn paint_frame(frame: &mut [f64], scene: usize, h: usize, w: usize, c: usize) {
    for y in 0..h {
        for x in 0..w {
            let q = usize::from(y >= h / 2) * 2 + usize::from(x >= w / 2);
            let bit = (scene >> q) & 1;
            let v = 0.25 + 0.5 * bit as f64;
            for ch in 0..c {
                frame[(y * w + x) * c + ch] = v;
            }
        }
    }
}

/// Generate one sample. Fully determined by (config, seed, index);
/// samples are independent streams, so generation order is free.
pub fn make_pair(cfg: &SynthConfig, seed: u64, index: u64) -> Result<PairedSample> {
    cfg.validate()?;
    let mut rng = Rng::from_seed_stream(seed, index.wrapping_mul(2).wrapping_add(0x5ce0e9a5));

    // Scene script: piecewise-constant with random change points.
    let n_frames = cfg.frames();
    let mut scenes = Vec::with_capacity(n_frames);
    let mut current = rng.below(cfg.scenes);
    scenes.push(current as u16);
    for _ in 1..n_frames {
        if rng.uniform() < cfg.change_prob {
            current = rng.below(cfg.scenes);
        }
        scenes.push(current as u16);
    }

    // Frames: scene texture plus clipped uniform noise.
    let (h, w, c) = (cfg.img_h, cfg.img_w, cfg.channels);
    let mut frames = vec![0.0; n_frames * h * w * c];
    for (i, &scene) in scenes.iter().enumerate() {
        let frame = &mut frames[i * h * w * c..(i + 1) * h * w * c];
        paint_frame(frame, scene as usize, h, w, c);
        if cfg.noise > 0.0 {
            for v in frame.iter_mut() {
                *v = (*v + rng.uniform_in(-cfg.noise, cfg.noise)).clamp(0.0, 1.0);
            }
        }
    }
    let clip = VideoClip::new(
        cfg.t,
        cfg.f,
        Tensor::new(vec![n_frames, h, w, c], frames)?,
    )?;

    // Tokens: per step, the scene of the covering frame emits its token
    // with probability rho; otherwise uniform.
    let steps = cfg.steps();
    let mut codes = Vec::with_capacity(steps * cfg.k);
    for step in 0..steps {
        let frame = (step * cfg.f) / cfg.f_prime;
        let scene = scenes[frame] as usize;
        for j in 0..cfg.k {
            let tok = if rng.uniform() < cfg.rho {
                scene_token(scene, j, cfg.scenes, cfg.vocab)
            } else {
                rng.below(cfg.vocab) as u16
            };
            codes.push(tok);
        }
    }
    let tokens = TokenSeq::new(steps, cfg.k, cfg.vocab, codes)?;

    Ok(PairedSample { clip, tokens, scenes })
}

/// Generate `n` samples with per-sample seeds derived from (seed, index).
pub fn make_dataset(cfg: &SynthConfig, seed: u64, n: usize) -> Result<Vec<PairedSample>> {
    (0..n).map(|i| make_pair(cfg, seed, i as u64)).collect()
}

/// Deterministic shuffled split into (train, test) index sets; disjoint
/// and exhaustive, with train receiving round(ratio * n) elements
/// clamped so neither side is empty.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid_config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    if n < 2 {
        return Err(Error::invalid_config(format!("cannot split {n} samples")));
    }
    let mut rng = Rng::from_seed_stream(seed, 0x73706c6974);
    let perm = rng.permutation(n);
    let n_train = (crate::math::round(ratio * n as f64) as usize).clamp(1, n - 1);
    let train = perm[..n_train].to_vec();
    let test = perm[n_train..].to_vec();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    #[test]
    fn identical_seeds_give_bit_identical_pairs() {
        let cfg = SynthConfig::toy(0.7);
        let a = make_pair(&cfg, 42, 3).unwrap();
        let b = make_pair(&cfg, 42, 3).unwrap();
        assert_eq!(a, b);
        let c = make_pair(&cfg, 42, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rho_one_noise_zero_tokens_are_a_function_of_scenes() {
        let mut cfg = SynthConfig::toy(1.0);
        cfg.noise = 0.0;
        for idx in 0..5 {
            let s = make_pair(&cfg, 7, idx).unwrap();
            for step in 0..cfg.steps() {
                let frame = (step * cfg.f) / cfg.f_prime;
                let scene = s.scenes[frame] as usize;
                for j in 0..cfg.k {
                    assert_eq!(
                        s.tokens.get(step, j),
                        scene_token(scene, j, cfg.scenes, cfg.vocab)
                    );
                }
            }
        }
    }

    #[test]
    fn scene_tokens_are_distinct_across_scenes() {
        let cfg = SynthConfig::toy(1.0);
        for j in 0..cfg.k {
            let set: BTreeSet<u16> = (0..cfg.scenes)
                .map(|s| scene_token(s, j, cfg.scenes, cfg.vocab))
                .collect();
            assert_eq!(set.len(), cfg.scenes);
        }
    }

    #[test]
    fn frames_are_in_unit_range_and_textures_differ_by_scene() {
        let mut cfg = SynthConfig::toy(0.5);
        cfg.noise = 0.0;
        let s = make_pair(&cfg, 9, 0).unwrap();
        for &v in s.clip.frames.data() {
            assert!((0.0..=1.0).contains(&v));
        }
        // Two frames with different scenes have different pixels.
        if let Some((i, j)) = distinct_scene_frames(&s) {
            assert_ne!(s.clip.frame(i).unwrap(), s.clip.frame(j).unwrap());
        }
    }

    fn distinct_scene_frames(s: &PairedSample) -> Option<(usize, usize)> {
        for i in 0..s.scenes.len() {
            for j in i + 1..s.scenes.len() {
                if s.scenes[i] != s.scenes[j] {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Plug-in mutual information (nats) between scene and codebook-0
    /// token over many generated steps.
    fn empirical_mi(rho: f64, samples: usize, seed: u64) -> f64 {
        let cfg = SynthConfig::toy(rho);
        let mut joint = alloc::collections::BTreeMap::new();
        let mut scene_counts = alloc::collections::BTreeMap::new();
        let mut token_counts = alloc::collections::BTreeMap::new();
        let mut n = 0usize;
        for idx in 0..samples {
            let s = make_pair(&cfg, seed, idx as u64).unwrap();
            for step in 0..cfg.steps() {
                let frame = (step * cfg.f) / cfg.f_prime;
                let scene = s.scenes[frame];
                let tok = s.tokens.get(step, 0);
                *joint.entry((scene, tok)).or_insert(0usize) += 1;
                *scene_counts.entry(scene).or_insert(0usize) += 1;
                *token_counts.entry(tok).or_insert(0usize) += 1;
                n += 1;
            }
        }
        let nf = n as f64;
        let mut mi = 0.0;
        for (&(s, t), &c) in &joint {
            let p = c as f64 / nf;
            let ps = scene_counts[&s] as f64 / nf;
            let pt = token_counts[&t] as f64 / nf;
            mi += p * crate::math::ln(p / (ps * pt));
        }
        mi
    }

    #[test]
    fn mutual_information_tracks_rho() {
        // 10k+ steps: the plug-in estimator's bias is about
        // (S-1)(V-1)/(2N) = 0.022 nats, so 0.08 is a safe null bound.
        let mi0 = empirical_mi(0.0, 320, 11);
        assert!(mi0 < 0.08, "MI at rho=0 is {mi0}");
        let mi1 = empirical_mi(1.0, 320, 11);
        assert!(mi1 > 1.0, "MI at rho=1 is {mi1}");
        assert!(mi1 > mi0);
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_deterministic() {
        let (train, test) = split_indices(100, 0.85, 5).unwrap();
        assert_eq!(train.len(), 85);
        assert_eq!(test.len(), 15);
        let mut all: Vec<usize> = train.iter().chain(test.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());

        let (train2, test2) = split_indices(100, 0.85, 5).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        let (train3, _) = split_indices(100, 0.85, 6).unwrap();
        assert_ne!(train, train3);
    }

    #[test]
    fn invalid_parameters_are_config_errors() {
        let mut cfg = SynthConfig::toy(1.5);
        assert!(cfg.validate().is_err());
        cfg.rho = 0.5;
        cfg.scenes = 17;
        assert!(cfg.validate().is_err());
        assert!(split_indices(10, 1.0, 0).is_err());
        assert!(split_indices(1, 0.5, 0).is_err());
    }
}
