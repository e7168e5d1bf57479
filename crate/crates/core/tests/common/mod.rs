//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod grad_suite;

use inpaint_vad::data::Label;
use inpaint_vad::model::{bind, Bound, Hyper, ModelParameters, Variant};
use inpaint_vad::tensor::{Tape, Tensor, Var};
use inpaint_vad::Result;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_PROBES: usize = 20;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Small model with every parameter (head and biases included) randomized,
/// so no gradient is trivially zero.
pub fn random_params(hyper: &Hyper, seed: u64) -> ModelParameters<f64> {
    let mut r = rng(seed);
    let mut p = ModelParameters::<f64>::init(hyper, &mut r).unwrap();
    for (_, t) in p.iter_mut() {
        let fan = (t.numel() / t.shape()[0]).max(1) as f64;
        for v in t.values_mut() {
            *v = r.gen_range(-1.0..1.0) * (3.0 / fan).sqrt();
        }
    }
    p
}

pub fn tiny_hyper(variant: Variant) -> Hyper {
    Hyper {
        height: 6,
        width: 7,
        channels: 1,
        hidden: 3,
        context_len: 2,
        bins: 8,
        decoder_width: 4,
        meta_hidden: 5,
        variant,
        ..Hyper::default()
    }
}

/// Scalar `sum(x * weights)` with a fixed weight tensor, which makes every
/// output element contribute to the checked gradient.
pub fn project(tape: &mut Tape<f64>, x: Var, weights: &[f64]) -> Var {
    let shape = tape.shape(x).to_vec();
    let w = tape.constant(&shape, weights.to_vec()).unwrap();
    let y = tape.mul(x, w).unwrap();
    tape.sum(y)
}

pub fn projection(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

/// Which value a probe perturbs.
#[derive(Clone, Copy, Debug)]
pub enum Slot {
    Param(usize),
    Input(usize),
}

/// Values a check perturbs: parameters whose name starts with one of
/// `params`, and the extra inputs when `inputs` is set.
#[derive(Clone, Copy, Debug)]
pub struct Probe<'a> {
    pub params: &'a [&'a str],
    pub inputs: bool,
}

pub const INPUTS_ONLY: Probe<'static> = Probe { params: &[], inputs: true };
pub const ALL_PARAMS: Probe<'static> = Probe { params: &[""], inputs: false };

/// Outcome of a finite-difference check.
#[derive(Debug)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub probes: usize,
    /// Probes where either gradient was distinguishable from zero.
    pub informative: usize,
}

fn rel_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compares reverse-mode gradients against central differences.
///
/// `build` maps (tape, bound params, input vars) to a scalar. `value` maps
/// (params, inputs) to the same scalar without the tape's gradient path;
/// pass `None` to reuse `build` for the numeric side.
pub fn finite_difference_check<B>(
    params: &ModelParameters<f64>,
    inputs: &[Tensor<f64>],
    probe: Probe<'_>,
    build: B,
    value: Option<&dyn Fn(&ModelParameters<f64>, &[Tensor<f64>]) -> f64>,
    seed: u64,
) -> FdReport
where
    B: Fn(&mut Tape<f64>, &Bound, &[Var]) -> Result<Var>,
{
    let eval_tape = |p: &ModelParameters<f64>, xs: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let bound = bind(p, &mut tape, false);
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf_with(t, false)).collect();
        let out = build(&mut tape, &bound, &vars).unwrap();
        tape.value(out)[0]
    };
    let f = |p: &ModelParameters<f64>, xs: &[Tensor<f64>]| match value {
        Some(v) => v(p, xs),
        None => eval_tape(p, xs),
    };

    let mut tape = Tape::new();
    let bound = bind(params, &mut tape, true);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf_with(t, true)).collect();
    let out = build(&mut tape, &bound, &vars).unwrap();
    let grads = tape.backward(out).unwrap();

    let mut slots = Vec::new();
    for (i, (name, t)) in params.iter().enumerate() {
        if probe.params.iter().any(|p| name.starts_with(p)) {
            slots.extend((0..t.numel()).map(|j| (Slot::Param(i), j)));
        }
    }
    if probe.inputs {
        for (i, t) in inputs.iter().enumerate() {
            slots.extend((0..t.numel()).map(|j| (Slot::Input(i), j)));
        }
    }
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let mut informative = 0;
    for _ in 0..FD_PROBES {
        let (slot, j) = slots[r.gen_range(0..slots.len())];
        let analytic = match slot {
            Slot::Param(i) => grads.get(bound.vars()[i]).map_or(0.0, |g| g[j]),
            Slot::Input(i) => grads.get(vars[i]).map_or(0.0, |g| g[j]),
        };
        let shifted = |delta: f64| {
            let mut p = params.clone();
            let mut xs = inputs.to_vec();
            match slot {
                Slot::Param(i) => p.iter_mut().nth(i).unwrap().1.values_mut()[j] += delta,
                Slot::Input(i) => xs[i].values_mut()[j] += delta,
            }
            f(&p, &xs)
        };
        let numeric = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
        if analytic.abs().max(numeric.abs()) >= 1e-10 {
            informative += 1;
        }
        let e = rel_error(analytic, numeric);
        assert!(e.is_finite(), "{slot:?}[{j}]: analytic {analytic}, numeric {numeric}");
        worst = worst.max(e);
    }
    FdReport { max_rel_error: worst, probes: FD_PROBES, informative }
}

/// Direct same-padded convolution by nested loops.
pub fn direct_conv(input: &[f64], c_in: usize, h: usize, w: usize, filters: &[f64], c_out: usize, k: usize, bias: &[f64]) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; c_out * h * w];
    for o in 0..c_out {
        for i in 0..h {
            for j in 0..w {
                let mut acc = bias[o];
                for c in 0..c_in {
                    for di in 0..k {
                        for dj in 0..k {
                            let (y, x) = (i as isize + di as isize - pad, j as isize + dj as isize - pad);
                            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                                acc += input[(c * h + y as usize) * w + x as usize] * filters[((o * c_in + c) * k + di) * k + dj];
                            }
                        }
                    }
                }
                out[(o * h + i) * w + j] = acc;
            }
        }
    }
    out
}

/// EER by exhaustive sweep: every candidate threshold is evaluated by
/// counting directly, with no sorting or incremental state.
pub fn brute_force_eer(scores: &[(Label, f64)]) -> (f64, f64) {
    let n_normal = scores.iter().filter(|(l, _)| *l == Label::Normal).count() as f64;
    let n_corrupt = scores.len() as f64 - n_normal;
    let mut distinct: Vec<f64> = Vec::new();
    for &(_, s) in scores {
        if !distinct.contains(&s) {
            distinct.push(s);
        }
    }
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = distinct[0];
    let hi = distinct[distinct.len() - 1];
    let mut thresholds = vec![f64::NEG_INFINITY];
    for i in 1..distinct.len() {
        thresholds.push(distinct[i - 1] + (distinct[i] - distinct[i - 1]) / 2.0);
    }
    thresholds.push(f64::INFINITY);
    let point = |t: f64| {
        let fp = scores.iter().filter(|(l, s)| *l == Label::Normal && *s >= t).count() as f64 / n_normal;
        let fn_ = scores.iter().filter(|(l, s)| *l == Label::Corrupted && *s < t).count() as f64 / n_corrupt;
        (fp, fn_)
    };
    let rates: Vec<(f64, f64)> = thresholds.iter().map(|&t| point(t)).collect();
    // Exact balance at the lowest threshold where it occurs.
    if let Some(i) = rates.iter().position(|(fp, fn_)| fp == fn_) {
        return (rates[i].0, thresholds[i].clamp(lo, hi));
    }
    // Otherwise the bracketing pair around the sign change, interpolated.
    for i in 1..rates.len() {
        let (da, db) = (rates[i - 1].0 - rates[i - 1].1, rates[i].0 - rates[i].1);
        if da > 0.0 && db < 0.0 {
            let alpha = da / (da - db);
            let ea = (rates[i - 1].0 + rates[i - 1].1) / 2.0;
            let eb = (rates[i].0 + rates[i].1) / 2.0;
            let (ta, tb) = (thresholds[i - 1].clamp(lo, hi), thresholds[i].clamp(lo, hi));
            return (ea + alpha * (eb - ea), ta + alpha * (tb - ta));
        }
    }
    unreachable!("rates cross between -inf and +inf")
}

/// Random labeled score set of `n >= 2` items with both classes present and
/// frequent ties.
pub fn random_score_set(n: usize, r: &mut ChaCha8Rng) -> Vec<(Label, f64)> {
    let levels = r.gen_range(1..=n.max(2));
    let mut out: Vec<(Label, f64)> = (0..n)
        .map(|_| {
            let label = if r.gen_bool(0.5) { Label::Normal } else { Label::Corrupted };
            let bump = if label == Label::Corrupted { r.gen_range(0..=levels / 2) } else { 0 };
            (label, ((r.gen_range(0..levels) + bump) as f64) * 0.37 + 1.0)
        })
        .collect();
    out[0].0 = Label::Normal;
    out[1].0 = Label::Corrupted;
    out
}
