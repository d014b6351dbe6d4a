//! Per-frame visual encoding: patch splitting, patch embedding with a
//! cls token and learned positions, and a stack of spatial self-attention
//! blocks. Frames never attend to each other here; temporal structure is
//! preserved for the downstream modules.

use crate::config::VisualConfig;
use crate::error::{Error, Result};
use crate::nn::SelfBlock;
use crate::params::{Init, ParamId, Params, WEIGHT_INIT};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec::Vec;

/// A video as `t * f` frames of shape [H, W, C], values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub t: usize,
    pub f: usize,
    pub frames: Tensor,
}

impl VideoClip {
    pub fn new(t: usize, f: usize, frames: Tensor) -> Result<Self> {
        if t == 0 || f == 0 {
            return Err(Error::invalid_config("clips need positive duration and frame rate"));
        }
        let shape = frames.shape();
        if shape.len() != 4 || shape[0] != t * f {
            return Err(Error::invalid_config(format!(
                "clip frames must be [t*f, H, W, C] with t*f={}, got {:?}",
                t * f,
                shape
            )));
        }
        Ok(VideoClip { t, f, frames })
    }

    pub fn n_frames(&self) -> usize {
        self.t * self.f
    }

    /// (H, W, C)
    pub fn frame_shape(&self) -> (usize, usize, usize) {
        let s = self.frames.shape();
        (s[1], s[2], s[3])
    }

    pub fn frame(&self, i: usize) -> Result<&[f64]> {
        self.frames.index_axis0(i)
    }
}

/// Split a [H, W, C] frame into non-overlapping s x s patches, row-major
/// over the patch grid, each flattened in (row, col, channel) order.
/// Output is [(H/s)*(W/s), s*s*C]. Lossless: see [`unpatchify`].
pub fn patchify(frame: &Tensor, s: usize) -> Result<Tensor> {
    let shape = frame.shape();
    if shape.len() != 3 {
        return Err(Error::invalid_config(format!("patchify wants [H,W,C], got {shape:?}")));
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::invalid_config(format!(
            "frame {h}x{w} not divisible by patch size {s}"
        )));
    }
    let data = patchify_raw(frame.data(), h, w, c, s);
    Tensor::matrix((h / s) * (w / s), s * s * c, data)
}

pub(crate) fn patchify_raw(frame: &[f64], h: usize, w: usize, c: usize, s: usize) -> Vec<f64> {
    let (gh, gw) = (h / s, w / s);
    let mut out = Vec::with_capacity(h * w * c);
    for pr in 0..gh {
        for pc in 0..gw {
            for row in 0..s {
                for col in 0..s {
                    let y = pr * s + row;
                    let x = pc * s + col;
                    let base = (y * w + x) * c;
                    out.extend_from_slice(&frame[base..base + c]);
                }
            }
        }
    }
    out
}

/// Inverse of [`patchify`]; reconstructs the [H, W, C] frame bit-exactly.
pub fn unpatchify(patches: &Tensor, h: usize, w: usize, c: usize, s: usize) -> Result<Tensor> {
    let (gh, gw) = (h / s, w / s);
    let expected = [gh * gw, s * s * c];
    if patches.shape() != expected {
        return Err(Error::invalid_config(format!(
            "unpatchify wants {expected:?}, got {:?}",
            patches.shape()
        )));
    }
    let src = patches.data();
    let mut out = alloc::vec![0.0; h * w * c];
    for p in 0..gh * gw {
        let (pr, pc) = (p / gw, p % gw);
        let patch = &src[p * s * s * c..(p + 1) * s * s * c];
        for row in 0..s {
            for col in 0..s {
                let y = pr * s + row;
                let x = pc * s + col;
                for ch in 0..c {
                    out[(y * w + x) * c + ch] = patch[(row * s + col) * c + ch];
                }
            }
        }
    }
    Tensor::new(alloc::vec![h, w, c], out)
}

/// Patch encoder: linear embedding, cls token, learned positions,
/// `layers` self-attention blocks. Features are read after
/// `feature_layer` blocks.
#[derive(Clone, Debug)]
pub struct VisualEncoder {
    pub cfg: VisualConfig,
    w_embed: ParamId,
    b_embed: ParamId,
    cls: ParamId,
    pos: ParamId,
    blocks: Vec<SelfBlock>,
}

impl VisualEncoder {
    pub fn new(params: &mut Params, prefix: &str, cfg: &VisualConfig) -> Result<Self> {
        cfg.validate()?;
        let p = cfg.patches_with_cls();
        let w_embed = params.create(&format!("{prefix}.embed.w"), cfg.patch_dim(), cfg.d, WEIGHT_INIT)?;
        let b_embed = params.create(&format!("{prefix}.embed.b"), 1, cfg.d, Init::Const(0.0))?;
        let cls = params.create(&format!("{prefix}.cls"), 1, cfg.d, WEIGHT_INIT)?;
        let pos = params.create(&format!("{prefix}.pos"), p, cfg.d, WEIGHT_INIT)?;
        let mut blocks = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            blocks.push(SelfBlock::new(params, &format!("{prefix}.layer{i}"), cfg.d, cfg.heads)?);
        }
        Ok(VisualEncoder { cfg: cfg.clone(), w_embed, b_embed, cls, pos, blocks })
    }

    /// Project patch vectors, prepend the cls token and add positions:
    /// [h*w, s*s*C] -> [p, D].
    pub fn embed_patches(&self, tape: &mut Tape, params: &Params, patches: ValueId) -> Result<ValueId> {
        let w = tape.param(params, self.w_embed);
        let b = tape.param(params, self.b_embed);
        let proj = tape.matmul(patches, w)?;
        let proj = tape.add_row(proj, b)?;
        let cls = tape.param(params, self.cls);
        let x = tape.concat_rows(&[cls, proj])?;
        let pos = tape.param(params, self.pos);
        tape.add(x, pos)
    }

    /// Encode one frame given as raw [H, W, C] data.
    pub fn encode_frame(&self, tape: &mut Tape, params: &Params, frame: &[f64]) -> Result<ValueId> {
        let c = &self.cfg;
        let patch_data = patchify_raw(frame, c.img_h, c.img_w, c.channels, c.patch);
        let grid = (c.img_h / c.patch) * (c.img_w / c.patch);
        let patches = tape.leaf(grid, c.patch_dim(), patch_data)?;
        let mut x = self.embed_patches(tape, params, patches)?;
        for block in &self.blocks[..c.feature_layer] {
            x = block.forward(tape, params, x, None)?;
        }
        Ok(x)
    }

    /// Encode every frame independently; returns one [p, D] feature map
    /// per frame in temporal order.
    pub fn encode_clip(&self, tape: &mut Tape, params: &Params, clip: &VideoClip) -> Result<Vec<ValueId>> {
        let (h, w, c) = clip.frame_shape();
        if (h, w, c) != (self.cfg.img_h, self.cfg.img_w, self.cfg.channels) {
            return Err(Error::invalid_config(format!(
                "clip frames {h}x{w}x{c} do not match encoder geometry {}x{}x{}",
                self.cfg.img_h, self.cfg.img_w, self.cfg.channels
            )));
        }
        let mut out = Vec::with_capacity(clip.n_frames());
        for i in 0..clip.n_frames() {
            out.push(self.encode_frame(tape, params, clip.frame(i)?)?);
        }
        Ok(out)
    }

    /// Per-frame cls vectors stacked into [t*f, D].
    pub fn cls_rows(&self, tape: &mut Tape, params: &Params, clip: &VideoClip) -> Result<ValueId> {
        let frames = self.encode_clip(tape, params, clip)?;
        let mut rows = Vec::with_capacity(frames.len());
        for f in frames {
            rows.push(tape.slice_rows(f, 0, 1)?);
        }
        tape.concat_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::vec;

    fn rand_frame(rng: &mut Rng, h: usize, w: usize, c: usize) -> Tensor {
        let data = (0..h * w * c).map(|_| rng.uniform()).collect();
        Tensor::new(vec![h, w, c], data).unwrap()
    }

    #[test]
    fn four_by_four_single_channel_gives_four_patches() {
        let frame = Tensor::new(vec![4, 4, 1], (0..16).map(|i| i as f64).collect()).unwrap();
        let p = patchify(&frame, 2).unwrap();
        assert_eq!(p.shape(), &[4, 4]);
        // Top-left patch is rows 0-1, cols 0-1 in (row, col) order.
        assert_eq!(&p.data()[0..4], &[0.0, 1.0, 4.0, 5.0]);
        // Patch order is row-major over the grid: next is top-right.
        assert_eq!(&p.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn constant_frame_gives_identical_patch_vectors() {
        let frame = Tensor::filled(vec![8, 8, 2], 0.37);
        let p = patchify(&frame, 4).unwrap();
        let first = p.index_axis0(0).unwrap().to_vec();
        for i in 1..p.shape()[0] {
            assert_eq!(p.index_axis0(i).unwrap(), &first[..]);
        }
    }

    #[test]
    fn patchify_roundtrip_is_bit_exact() {
        let mut rng = Rng::new(3);
        for (h, w, c, s) in [(8usize, 8usize, 1usize, 4usize), (6, 9, 3, 3), (16, 16, 1, 4)] {
            let frame = rand_frame(&mut rng, h, w, c);
            let p = patchify(&frame, s).unwrap();
            let back = unpatchify(&p, h, w, c, s).unwrap();
            assert_eq!(frame, back);
        }
    }

    #[test]
    fn indivisible_patch_size_is_an_error() {
        let frame = Tensor::zeros(vec![5, 4, 1]);
        assert!(patchify(&frame, 2).is_err());
    }

    #[test]
    fn zero_frame_embeds_to_cls_and_bias() {
        let cfg = VisualConfig { img_h: 8, img_w: 8, channels: 1, patch: 4, d: 8, layers: 0, heads: 2, feature_layer: 0 };
        let mut params = Params::new(5);
        let enc = VisualEncoder::new(&mut params, "enc", &cfg).unwrap();
        // Zero the positional table so rows are purely cls / bias.
        params.load("enc.pos", &vec![0.0; cfg.patches_with_cls() * cfg.d]).unwrap();

        let mut tape = Tape::new();
        let x = enc.encode_frame(&mut tape, &params, &vec![0.0; 64]).unwrap();
        let d = cfg.d;
        let cls = params.data(params.id_of("enc.cls").unwrap()).to_vec();
        let bias = params.data(params.id_of("enc.embed.b").unwrap()).to_vec();
        assert_eq!(&tape.value(x)[..d], &cls[..]);
        for r in 1..cfg.patches_with_cls() {
            assert_eq!(&tape.value(x)[r * d..(r + 1) * d], &bias[..]);
        }
    }

    #[test]
    fn zero_layers_returns_embedding_unchanged() {
        let cfg = VisualConfig { img_h: 8, img_w: 8, channels: 1, patch: 4, d: 8, layers: 0, heads: 2, feature_layer: 0 };
        let mut params = Params::new(9);
        let enc = VisualEncoder::new(&mut params, "enc", &cfg).unwrap();
        let mut rng = Rng::new(2);
        let frame: alloc::vec::Vec<f64> = (0..64).map(|_| rng.uniform()).collect();

        let mut tape = Tape::new();
        let got = enc.encode_frame(&mut tape, &params, &frame).unwrap();
        let patches = tape
            .leaf(4, 16, patchify_raw(&frame, 8, 8, 1, 4))
            .unwrap();
        let want = enc.embed_patches(&mut tape, &params, patches).unwrap();
        assert_eq!(tape.value(got), tape.value(want));
    }

    #[test]
    fn identical_frames_encode_identically_and_permutation_is_equivariant() {
        let cfg = VisualConfig { img_h: 8, img_w: 8, channels: 1, patch: 4, d: 8, layers: 2, heads: 2, feature_layer: 2 };
        let mut params = Params::new(21);
        let enc = VisualEncoder::new(&mut params, "enc", &cfg).unwrap();
        let mut rng = Rng::new(8);

        let a: alloc::vec::Vec<f64> = (0..64).map(|_| rng.uniform()).collect();
        let b: alloc::vec::Vec<f64> = (0..64).map(|_| rng.uniform()).collect();
        let mut frames = a.clone();
        frames.extend_from_slice(&b);
        frames.extend_from_slice(&a);
        let clip = VideoClip::new(3, 1, Tensor::new(vec![3, 8, 8, 1], frames).unwrap()).unwrap();

        let mut tape = Tape::new();
        let feats = enc.encode_clip(&mut tape, &params, &clip).unwrap();
        // Frames 0 and 2 are identical: bit-identical features.
        assert_eq!(tape.value(feats[0]), tape.value(feats[2]));
        assert_ne!(tape.value(feats[0]), tape.value(feats[1]));

        // Permuting input frames permutes outputs identically.
        let mut swapped = b.clone();
        swapped.extend_from_slice(&a);
        swapped.extend_from_slice(&a);
        let clip2 = VideoClip::new(3, 1, Tensor::new(vec![3, 8, 8, 1], swapped).unwrap()).unwrap();
        let mut tape2 = Tape::new();
        let feats2 = enc.encode_clip(&mut tape2, &params, &clip2).unwrap();
        assert_eq!(tape.value(feats[1]), tape2.value(feats2[0]));
        assert_eq!(tape.value(feats[0]), tape2.value(feats2[1]));
    }

    #[test]
    fn attention_rows_inside_blocks_are_stochastic() {
        let cfg = VisualConfig::toy();
        let mut params = Params::new(33);
        let enc = VisualEncoder::new(&mut params, "enc", &cfg).unwrap();
        let mut rng = Rng::new(4);
        let frame: alloc::vec::Vec<f64> = (0..cfg.img_h * cfg.img_w).map(|_| rng.uniform()).collect();
        let mut tape = Tape::new();
        enc.encode_frame(&mut tape, &params, &frame).unwrap();
        let softmaxes = tape.softmax_nodes();
        // layers * heads attention sites.
        assert_eq!(softmaxes.len(), cfg.layers * cfg.heads);
        for id in softmaxes {
            let (r, c) = tape.shape(id);
            let v = tape.value(id);
            for i in 0..r {
                let sum: f64 = v[i * c..(i + 1) * c].iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12, "row sum {sum}");
            }
        }
    }
}
