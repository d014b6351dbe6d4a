//! Finite-difference verification of analytic gradients.
//!
//! Central differences (f(θ+ε) − f(θ−ε)) / 2ε are compared elementwise
//! against the gradients the tape produces. The relative error uses a
//! max(|analytic|, |numeric|, 1e-8) denominator so near-zero gradients
//! do not blow up the ratio.

use crate::error::{Error, Result};
use crate::params::Params;
use crate::tape::{Tape, ValueId};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub const DEFAULT_EPS: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Name of the parameter holding the worst element.
    pub worst_param: String,
    /// Flat index of the worst element within that parameter.
    pub worst_index: usize,
    /// Number of scalar elements checked.
    pub checked: usize,
}

/// Check every element of every parameter against central differences.
///
/// `build` must construct the scalar loss on the given tape from the
/// current parameter values; it is re-invoked for each perturbed
/// evaluation, so it must not cache anything derived from the values.
pub fn grad_check<F>(params: &mut Params, eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&Params, &mut Tape) -> Result<ValueId>,
{
    grad_check_impl(params, eps, build, None)
}

/// Same as [`grad_check`], but corrupts one analytic gradient element
/// before comparing. A harness self-test: the report must then fail any
/// sane tolerance.
pub fn grad_check_injected<F>(
    params: &mut Params,
    eps: f64,
    build: F,
    inject: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&Params, &mut Tape) -> Result<ValueId>,
{
    grad_check_impl(params, eps, build, Some(inject))
}

fn grad_check_impl<F>(
    params: &mut Params,
    eps: f64,
    build: F,
    inject: Option<f64>,
) -> Result<GradCheckReport>
where
    F: Fn(&Params, &mut Tape) -> Result<ValueId>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let loss = build(params, &mut tape)?;
    let loss_value = tape.scalar(loss);
    if !loss_value.is_finite() {
        return Err(Error::NonFinite { context: "grad_check loss" });
    }
    tape.backward(loss, params)?;

    let ids = params.ids_by_name();
    let mut analytic: Vec<Vec<f64>> = Vec::with_capacity(ids.len());
    for &id in &ids {
        let n = params.data(id).len();
        analytic.push(params.grad(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; n]));
    }
    if let Some(delta) = inject {
        analytic[0][0] += delta;
    }

    let eval = |params: &Params| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(params, &mut tape)?;
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(Error::NonFinite { context: "grad_check loss" });
        }
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for (pi, &id) in ids.iter().enumerate() {
        #[allow(clippy::needless_range_loop)]
        for e in 0..params.data(id).len() {
            let original = params.data(id)[e];
            params.data_mut(id)[e] = original + eps;
            let plus = eval(params)?;
            params.data_mut(id)[e] = original - eps;
            let minus = eval(params)?;
            params.data_mut(id)[e] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = params.name(id).into();
                report.worst_index = e;
            }
        }
    }
    Ok(report)
}

/// Check the complete generation model (encoder -> transform -> decoder,
/// codebook cross-entropy loss) on a small synthetic batch. Every
/// element of every parameter is compared against central differences.
/// The parameter point is jittered away from the tiny training init so
/// no true gradient sits below finite-difference noise.
pub fn check_generator(
    cfg: &crate::config::GenConfig,
    seed: u64,
    eps: f64,
    inject: Option<f64>,
) -> Result<GradCheckReport> {
    let mut params = Params::new(seed);
    let gen = crate::model::Generator::new(&mut params, cfg)?;
    params.perturb_all(0.3, seed ^ 0xC0FFEE);
    let data = gradcheck_batch(cfg, seed, 2)?;
    let weights = alloc::vec![1.0; cfg.k];
    let build = move |p: &Params, tape: &mut Tape| {
        let pairs: alloc::vec::Vec<_> = data.iter().map(|s| (&s.clip, &s.tokens)).collect();
        let fwd = gen.batch_loss(tape, p, &pairs, &weights)?;
        Ok(fwd.loss)
    };
    match inject {
        None => grad_check(&mut params, eps, build),
        Some(delta) => grad_check_injected(&mut params, eps, build, delta),
    }
}

/// Check the complete correspondence scorer (joint alignment +
/// contrastive loss) the same way.
pub fn check_eval_model(
    cfg: &crate::config::EvalConfig,
    seed: u64,
    eps: f64,
    inject: Option<f64>,
) -> Result<GradCheckReport> {
    let mut params = Params::new(seed);
    let model = crate::eval::EvalModel::new(&mut params, cfg)?;
    params.perturb_all(0.3, seed ^ 0xC0FFEE);
    let synth = crate::synth::SynthConfig {
        t: cfg.t,
        f: cfg.f,
        f_prime: cfg.f_prime,
        scenes: 4,
        img_h: cfg.vis.img_h,
        img_w: cfg.vis.img_w,
        channels: cfg.vis.channels,
        k: cfg.k,
        vocab: cfg.vocab,
        rho: 0.8,
        noise: 0.05,
        change_prob: 0.5,
    };
    let data = crate::synth::make_dataset(&synth, seed ^ 0xE7A1, 3)?;
    let build = move |p: &Params, tape: &mut Tape| {
        let pairs: alloc::vec::Vec<_> = data.iter().map(|s| (&s.clip, &s.tokens)).collect();
        let (loss, _) = model.batch_loss(tape, p, &pairs)?;
        Ok(loss)
    };
    match inject {
        None => grad_check(&mut params, eps, build),
        Some(delta) => grad_check_injected(&mut params, eps, build, delta),
    }
}

fn gradcheck_batch(
    cfg: &crate::config::GenConfig,
    seed: u64,
    n: usize,
) -> Result<alloc::vec::Vec<crate::synth::PairedSample>> {
    let synth = crate::synth::SynthConfig {
        t: cfg.t,
        f: cfg.f,
        f_prime: cfg.f_prime,
        scenes: 4,
        img_h: cfg.vis.img_h,
        img_w: cfg.vis.img_w,
        channels: cfg.vis.channels,
        k: cfg.k,
        vocab: cfg.vocab,
        rho: 0.8,
        noise: 0.05,
        change_prob: 0.5,
    };
    crate::synth::make_dataset(&synth, seed ^ 0x5EED, n)
}
