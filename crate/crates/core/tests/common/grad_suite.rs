//! Finite-difference checks of the differentiable building blocks.

use super::*;
use inpaint_vad::loss::{frame_nll, nll_on_tape, Scope};
use inpaint_vad::masking::{apply_mask, Mask};
use inpaint_vad::model::{
    apply_attention, convlstm_step, forward, make_dynamic_filters, ConvLstmState, DynamicFilters, Hyper, ModelParameters,
    Variant,
};
use inpaint_vad::tensor::Tensor;
use inpaint_vad::{Frame, Result};
use rand::Rng;

pub fn conv2d_check() -> FdReport {
    let mut r = rng(1);
    let params = random_params(&tiny_hyper(Variant::Full), 0);
    let inputs = vec![random_tensor(&[2, 5, 6], 1.0, &mut r), random_tensor(&[3, 2, 3, 3], 0.5, &mut r), random_tensor(&[3], 0.5, &mut r)];
    let proj = projection(3 * 5 * 6, 2);
    finite_difference_check(
        &params,
        &inputs,
        INPUTS_ONLY,
        |tape, _, v| {
            let y = tape.conv2d(v[0], v[1], Some(v[2]))?;
            Ok(project(tape, y, &proj))
        },
        None,
        3,
    )
}



pub fn convlstm_check() -> FdReport {
    let hyper = tiny_hyper(Variant::Full);
    let params = random_params(&hyper, 5);
    let mut r = rng(6);
    let shape = [hyper.hidden, hyper.height, hyper.width];
    let inputs = vec![random_tensor(&shape, 1.0, &mut r), random_tensor(&shape, 1.0, &mut r), random_tensor(&shape, 1.0, &mut r)];
    let n = shape.iter().product();
    let (p1, p2) = (projection(n, 7), projection(n, 8));
    finite_difference_check(
        &params,
        &inputs,
        Probe { params: &["convlstm."], inputs: true },
        |tape, bound, v| {
            let s = convlstm_step(tape, bound, &hyper, v[0], ConvLstmState { h: v[1], c: v[2] })?;
            let a = project(tape, s.h, &p1);
            let b = project(tape, s.c, &p2);
            tape.add(a, b)
        },
        None,
        9,
    )
}


fn context_inputs(seed: u64) -> (Hyper, ModelParameters<f64>, Vec<Tensor<f64>>) {
    let hyper = tiny_hyper(Variant::Full);
    let params = random_params(&hyper, seed);
    let mut r = rng(seed + 1);
    let shape = [hyper.hidden, hyper.height, hyper.width];
    let hs = (0..hyper.context_len).map(|_| random_tensor(&shape, 1.0, &mut r)).collect();
    (hyper, params, hs)
}

pub fn dynamic_filters_check() -> FdReport {
    let (hyper, params, hs) = context_inputs(10);
    let c_in = hyper.context_channels();
    let (pf, pb) = (projection(hyper.hidden * c_in * 9, 12), projection(hyper.hidden, 13));
    finite_difference_check(
        &params,
        &hs,
        Probe { params: &["meta."], inputs: true },
        |tape, bound, v| {
            let d = make_dynamic_filters(tape, bound, &hyper, v)?;
            let a = project(tape, d.filters, &pf);
            let b = project(tape, d.bias, &pb);
            tape.add(a, b)
        },
        None,
        14,
    )
}


pub fn attention_check() -> FdReport {
    let (hyper, params, mut inputs) = context_inputs(20);
    let mut r = rng(21);
    let c_in = hyper.context_channels();
    inputs.push(random_tensor(&[hyper.hidden, c_in, 3, 3], 0.5, &mut r));
    inputs.push(random_tensor(&[hyper.hidden], 0.5, &mut r));
    let proj = projection(hyper.hidden * hyper.height * hyper.width, 22);
    let ctx = hyper.context_len;
    finite_difference_check(
        &params,
        &inputs,
        INPUTS_ONLY,
        |tape, _, v| {
            let dynamic = DynamicFilters { filters: v[ctx], bias: v[ctx + 1] };
            let y = apply_attention(tape, &v[..ctx], dynamic)?;
            Ok(project(tape, y, &proj))
        },
        None,
        23,
    )
}


fn random_frame(h: usize, w: usize, r: &mut impl Rng) -> Frame {
    Frame::new(h, w, 1, (0..h * w).map(|_| r.gen()).collect()).unwrap()
}

/// Composite check: the analytic side runs forward + on-tape NLL, the
/// numeric side runs inference + `frame_nll` on the resulting grid.
pub fn composite_check(variant: Variant) -> FdReport {
    let hyper = tiny_hyper(variant);
    let params = random_params(&hyper, 30);
    let mut r = rng(31);
    let context: Vec<Frame> = (0..hyper.context_len).map(|_| random_frame(hyper.height, hyper.width, &mut r)).collect();
    let target = random_frame(hyper.height, hyper.width, &mut r);
    let mask = Mask::lattice(hyper.height, hyper.width, 2, 3, 1, 0).unwrap();
    let masked = apply_mask(&target, &mask).unwrap();
    let numeric = |p: &ModelParameters<f64>, _: &[Tensor<f64>]| -> f64 {
        let grid = p.predict(&context, &masked).unwrap();
        frame_nll(&grid, &target, &mask, Scope::All).unwrap().1.total_nll
    };
    finite_difference_check(
        &params,
        &[],
        ALL_PARAMS,
        |tape, bound, _| -> Result<_> {
            let probs = forward(tape, bound, &hyper, &context, &masked)?;
            Ok(nll_on_tape(tape, probs, &target, &mask, Scope::All)?.0)
        },
        Some(&numeric),
        32,
    )
}


/// Every check of the suite, by name.
pub fn all() -> Vec<(&'static str, FdReport)> {
    vec![
        ("conv2d", conv2d_check()),
        ("convlstm_step", convlstm_check()),
        ("make_dynamic_filters", dynamic_filters_check()),
        ("apply_attention", attention_check()),
        ("forward+frame_nll (full)", composite_check(Variant::Full)),
        ("forward+frame_nll (no-attention)", composite_check(Variant::NoAttention)),
        ("forward+frame_nll (no-masked-frame)", composite_check(Variant::NoMaskedFrame)),
    ]
}
