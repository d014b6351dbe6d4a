//! Deterministic token-to-audio rendering.
//!
//! A stand-in for a real neural audio decoder: codebook 0 picks a pitch
//! class on a chromatic scale, codebook 1 (when present) picks an
//! amplitude bucket, and a phase-continuous sine bank turns the token
//! grid into PCM16 samples. Also renders the pitch contour as an SVG
//! with one polyline per codebook.

use crate::decoder::TokenSeq;
use crate::error::{Error, Result};
use crate::math;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// Middle C.
const BASE_FREQ_HZ: f64 = 261.625_565_300_598_6;
const PITCH_CLASSES: usize = 12;
const AMP_BUCKETS: usize = 8;
const PEAK: f64 = 0.9;

pub fn pitch_hz(token: u16) -> f64 {
    let class = usize::from(token) % PITCH_CLASSES;
    BASE_FREQ_HZ * math::powf(2.0, class as f64 / 12.0)
}

pub fn amplitude(token: u16) -> f64 {
    let bucket = usize::from(token) % AMP_BUCKETS;
    0.15 + 0.75 * bucket as f64 / (AMP_BUCKETS - 1) as f64
}

/// Synthesize mono PCM16 samples at `sample_rate`; each token step lasts
/// 1/f_prime seconds. The oscillator phase is continuous across steps,
/// so constant tokens produce one pure tone.
pub fn tokens_to_samples(tokens: &TokenSeq, f_prime: usize, sample_rate: u32) -> Result<Vec<i16>> {
    if f_prime == 0 || sample_rate == 0 {
        return Err(Error::invalid_config("f_prime and sample_rate must be positive"));
    }
    let rate = u64::from(sample_rate);
    let steps = tokens.steps() as u64;
    let total = (steps * rate) / f_prime as u64;
    let mut out = Vec::with_capacity(total as usize);
    let mut phase = 0.0f64;
    for step in 0..tokens.steps() {
        let freq = pitch_hz(tokens.get(step, 0));
        let amp = if tokens.k() >= 2 { amplitude(tokens.get(step, 1)) } else { 0.5 };
        let start = (step as u64 * rate) / f_prime as u64;
        let end = ((step as u64 + 1) * rate) / f_prime as u64;
        let dphase = 2.0 * math::PI * freq / rate as f64;
        for _ in start..end {
            let s = amp * math::sin(phase) * PEAK;
            out.push(math::round(s * f64::from(i16::MAX)) as i16);
            phase += dphase;
            if phase > 2.0 * math::PI {
                phase -= 2.0 * math::PI;
            }
        }
    }
    Ok(out)
}

/// Pitch-contour drawing: one polyline per codebook, token id on the
/// vertical axis, step on the horizontal.
pub fn pitch_contour_svg(tokens: &TokenSeq) -> String {
    const W: f64 = 640.0;
    const H: f64 = 240.0;
    const MARGIN: f64 = 10.0;
    let steps = tokens.steps().max(1);
    let vocab = tokens.vocab().max(1);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"];

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{W}\" height=\"{H}\" fill=\"#ffffff\" stroke=\"#cccccc\"/>\n"
    ));
    for j in 0..tokens.k() {
        let color = colors[j % colors.len()];
        let mut points = String::new();
        for i in 0..tokens.steps() {
            let x = MARGIN + (W - 2.0 * MARGIN) * i as f64 / (steps.max(2) - 1) as f64;
            let y = H - MARGIN
                - (H - 2.0 * MARGIN) * f64::from(tokens.get(i, j)) / (vocab - 1).max(1) as f64;
            points.push_str(&format!("{x:.2},{y:.2} "));
        }
        svg.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.trim_end()
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
