//! GVMD: the paired-dataset container.
//!
//! Layout, little-endian:
//!   magic   "GVMD", version u32 = 1, count u32
//!   t, f, f_prime, scenes, img_h, img_w, channels, k, vocab  (u32 each)
//!   rho, noise, change_prob  (f64 raw bits)
//!   seed  (u64)
//!   then per sample: frames (GVMT f64 [n,H,W,C]),
//!                    tokens (GVMT u16 [T',K]),
//!                    scenes (GVMT u16 [n])
//!
//! Round-trips are bit-exact; the header echoes the generation
//! parameters so downstream commands can validate geometry.

use crate::gvmt;
use crate::{CliError, Result};
use gvm_core::decoder::TokenSeq;
use gvm_core::encoder::VideoClip;
use gvm_core::synth::{PairedSample, SynthConfig};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"GVMD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub cfg: SynthConfig,
    pub seed: u64,
    pub samples: Vec<PairedSample>,
}

pub fn write<W: Write>(w: &mut W, ds: &Dataset) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(ds.samples.len() as u32).to_le_bytes())?;
    for v in [
        ds.cfg.t,
        ds.cfg.f,
        ds.cfg.f_prime,
        ds.cfg.scenes,
        ds.cfg.img_h,
        ds.cfg.img_w,
        ds.cfg.channels,
        ds.cfg.k,
        ds.cfg.vocab,
    ] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for v in [ds.cfg.rho, ds.cfg.noise, ds.cfg.change_prob] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&ds.seed.to_le_bytes())?;

    for s in &ds.samples {
        gvmt::write_f64(w, &s.clip.frames)?;
        gvmt::write_u16(w, &[s.tokens.steps(), s.tokens.k()], s.tokens.codes())?;
        gvmt::write_u16(w, &[s.scenes.len()], &s.scenes)?;
    }
    Ok(())
}

pub fn read<R: Read>(r: &mut R) -> Result<Dataset> {
    let mut pos: u64 = 0;
    let magic = take::<4, R>(r, &mut pos, "magic")?;
    if magic != MAGIC {
        return Err(CliError::Format {
            offset: 0,
            message: format!("bad magic {magic:02X?}, expected {MAGIC:02X?}"),
        });
    }
    let version = u32::from_le_bytes(take::<4, R>(r, &mut pos, "version")?);
    if version != VERSION {
        return Err(CliError::Format { offset: 4, message: format!("unsupported version {version}") });
    }
    let count = u32::from_le_bytes(take::<4, R>(r, &mut pos, "count")?) as usize;
    let mut u = [0usize; 9];
    for slot in u.iter_mut() {
        *slot = u32::from_le_bytes(take::<4, R>(r, &mut pos, "header field")?) as usize;
    }
    let rho = f64::from_le_bytes(take::<8, R>(r, &mut pos, "rho")?);
    let noise = f64::from_le_bytes(take::<8, R>(r, &mut pos, "noise")?);
    let change_prob = f64::from_le_bytes(take::<8, R>(r, &mut pos, "change_prob")?);
    let seed = u64::from_le_bytes(take::<8, R>(r, &mut pos, "seed")?);
    let cfg = SynthConfig {
        t: u[0],
        f: u[1],
        f_prime: u[2],
        scenes: u[3],
        img_h: u[4],
        img_w: u[5],
        channels: u[6],
        k: u[7],
        vocab: u[8],
        rho,
        noise,
        change_prob,
    };
    cfg.validate().map_err(|e| CliError::Format {
        offset: 12,
        message: format!("invalid dataset header: {e}"),
    })?;

    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let sample_at = pos;
        let (frames, next) = gvmt::read_block(r, pos)?;
        let frames = frames.expect_float("sample frames")?;
        pos = next;
        let (tokens, next) = gvmt::read_block(r, pos)?;
        let (tshape, tvalues) = tokens.expect_tokens("sample tokens")?;
        pos = next;
        let (scenes, next) = gvmt::read_block(r, pos)?;
        let (sshape, svalues) = scenes.expect_tokens("sample scenes")?;
        pos = next;

        let bad = |message: String| CliError::Format { offset: sample_at, message };
        if frames.shape() != [cfg.frames(), cfg.img_h, cfg.img_w, cfg.channels] {
            return Err(bad(format!("sample {i}: frame shape {:?} does not match header", frames.shape())));
        }
        if tshape != [cfg.steps(), cfg.k] {
            return Err(bad(format!("sample {i}: token shape {tshape:?} does not match header")));
        }
        if sshape != [cfg.frames()] {
            return Err(bad(format!("sample {i}: scene shape {sshape:?} does not match header")));
        }
        let clip = VideoClip::new(cfg.t, cfg.f, frames).map_err(CliError::Core)?;
        let tokens = TokenSeq::new(cfg.steps(), cfg.k, cfg.vocab, tvalues).map_err(CliError::Core)?;
        samples.push(PairedSample { clip, tokens, scenes: svalues });
    }

    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(CliError::Format { offset: pos, message: "trailing bytes after last sample".into() });
    }
    Ok(Dataset { cfg, seed, samples })
}

pub fn save(path: &Path, ds: &Dataset) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write(&mut f, ds)
}

pub fn load(path: &Path) -> Result<Dataset> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read(&mut f)
}

fn take<const N: usize, R: Read>(r: &mut R, pos: &mut u64, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    let mut filled = 0;
    while filled < N {
        let n = r.read(&mut buf[filled..]).map_err(CliError::Io)?;
        if n == 0 {
            return Err(CliError::Format {
                offset: *pos + filled as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        filled += n;
    }
    *pos += N as u64;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gvm_core::synth::make_dataset;

    fn sample_dataset(n: usize) -> Dataset {
        let cfg = SynthConfig {
            t: 2,
            f: 1,
            f_prime: 2,
            scenes: 4,
            img_h: 8,
            img_w: 8,
            channels: 1,
            k: 2,
            vocab: 16,
            rho: 0.8,
            noise: 0.05,
            change_prob: 0.5,
        };
        let samples = make_dataset(&cfg, 99, n).unwrap();
        Dataset { cfg, seed: 99, samples }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ds = sample_dataset(10);
        let mut buf = Vec::new();
        write(&mut buf, &ds).unwrap();
        let back = read(&mut buf.as_slice()).unwrap();
        assert_eq!(ds, back);

        // Same dataset serializes to the same bytes.
        let mut buf2 = Vec::new();
        write(&mut buf2, &ds).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn empty_dataset_roundtrips() {
        let mut ds = sample_dataset(0);
        ds.samples.clear();
        let mut buf = Vec::new();
        write(&mut buf, &ds).unwrap();
        let back = read(&mut buf.as_slice()).unwrap();
        assert_eq!(back.samples.len(), 0);
        assert_eq!(back.cfg, ds.cfg);
    }

    #[test]
    fn truncation_is_a_format_error_with_offset() {
        let ds = sample_dataset(3);
        let mut buf = Vec::new();
        write(&mut buf, &ds).unwrap();
        for cut in [buf.len() - 1, buf.len() / 2, 10] {
            match read(&mut &buf[..cut]) {
                Err(CliError::Format { message, .. }) => {
                    assert!(message.contains("truncated"), "{message}");
                }
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let ds = sample_dataset(1);
        let mut buf = Vec::new();
        write(&mut buf, &ds).unwrap();
        buf[1] = b'!';
        match read(&mut buf.as_slice()) {
            Err(CliError::Format { offset: 0, message }) => {
                assert!(message.contains("bad magic"));
            }
            other => panic!("{other:?}"),
        }
    }
}
