//! Minimal RIFF/WAVE writer (PCM16 little-endian mono) plus a strict
//! header parser used by tests and the score tooling.

use crate::{CliError, Result};
use std::io::Write;
use std::path::Path;

pub fn write_wav<W: Write>(w: &mut W, samples: &[i16], sample_rate: u32) -> Result<()> {
    let data_len = (samples.len() * 2) as u32;
    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_len).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&sample_rate.to_le_bytes())?;
    w.write_all(&(sample_rate * 2).to_le_bytes())?; // byte rate
    w.write_all(&2u16.to_le_bytes())?; // block align
    w.write_all(&16u16.to_le_bytes())?; // bits per sample
    w.write_all(b"data")?;
    w.write_all(&data_len.to_le_bytes())?;
    for s in samples {
        w.write_all(&s.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_wav(path: &Path, samples: &[i16], sample_rate: u32) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_wav(&mut f, samples, sample_rate)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WavInfo {
    pub channels: u16,
    pub sample_rate: u32,
    pub bits_per_sample: u16,
    pub n_samples: usize,
}

/// Parse and validate a PCM WAV header.
pub fn parse_wav(bytes: &[u8]) -> Result<WavInfo> {
    let err = |offset: u64, message: &str| CliError::Format { offset, message: message.into() };
    if bytes.len() < 44 {
        return Err(err(bytes.len() as u64, "file shorter than a WAV header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(err(0, "missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(err(8, "missing WAVE tag"));
    }
    if &bytes[12..16] != b"fmt " {
        return Err(err(12, "missing fmt chunk"));
    }
    let audio_format = u16::from_le_bytes([bytes[20], bytes[21]]);
    if audio_format != 1 {
        return Err(err(20, "not PCM"));
    }
    let channels = u16::from_le_bytes([bytes[22], bytes[23]]);
    let sample_rate = u32::from_le_bytes([bytes[24], bytes[25], bytes[26], bytes[27]]);
    let bits_per_sample = u16::from_le_bytes([bytes[34], bytes[35]]);
    if &bytes[36..40] != b"data" {
        return Err(err(36, "missing data chunk"));
    }
    let data_len = u32::from_le_bytes([bytes[40], bytes[41], bytes[42], bytes[43]]) as usize;
    if bytes.len() != 44 + data_len {
        return Err(err(40, "data length does not match file size"));
    }
    Ok(WavInfo {
        channels,
        sample_rate,
        bits_per_sample,
        n_samples: data_len / usize::from(bits_per_sample / 8) / usize::from(channels),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_parses_back() {
        let samples: Vec<i16> = (0..100).map(|i| (i * 300) as i16).collect();
        let mut buf = Vec::new();
        write_wav(&mut buf, &samples, 32000).unwrap();
        let info = parse_wav(&buf).unwrap();
        assert_eq!(
            info,
            WavInfo { channels: 1, sample_rate: 32000, bits_per_sample: 16, n_samples: 100 }
        );
    }

    #[test]
    fn bad_headers_are_rejected() {
        let mut buf = Vec::new();
        write_wav(&mut buf, &[0, 1, 2], 8000).unwrap();
        let mut broken = buf.clone();
        broken[0] = b'X';
        assert!(parse_wav(&broken).is_err());
        assert!(parse_wav(&buf[..30]).is_err());
    }
}
