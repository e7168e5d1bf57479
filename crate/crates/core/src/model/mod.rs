//! The inpainting anomaly model.
//!
//! Context frames are encoded one at a time by a same-padded CNN and folded
//! through a ConvLSTM. A meta-network looks at the pooled ConvLSTM outputs
//! and emits a convolution filter bank, which is applied to the
//! channel-concatenated outputs (the attention step). The attention features,
//! the masked target frame and the mask indicator are stacked and decoded by
//! a plain CNN into one categorical distribution per pixel and channel.
//! Every layer keeps the frame's height and width, and all pixels are
//! predicted in one pass.

mod checkpoint;
mod params;

pub use checkpoint::{
    load_checkpoint, peek_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION,
};
pub use params::{Collection, ModelParameters, ParamInit, ParamSpec};

use std::collections::HashMap;

pub use crate::frame::{Frame, Sequence};
use crate::error::{Error, Result};
use crate::masking::MaskedFrame;
use crate::tensor::{Gradients, Scalar, Tape, Var};

/// Side of the run-time generated attention filters.
pub const ATTENTION_KERNEL: usize = 3;

/// Which parts of the architecture are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Variant {
    #[default]
    Full,
    /// The decoder receives the last ConvLSTM output instead of the attention output.
    NoAttention,
    /// The decoder does not receive the masked target frame or mask indicator.
    NoMaskedFrame,
}

impl Variant {
    pub fn code(self) -> u32 {
        match self {
            Variant::Full => 0,
            Variant::NoAttention => 1,
            Variant::NoMaskedFrame => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Variant::Full),
            1 => Some(Variant::NoAttention),
            2 => Some(Variant::NoMaskedFrame),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoAttention => "no-attention",
            Variant::NoMaskedFrame => "no-masked-frame",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no-attention" => Ok(Variant::NoAttention),
            "no-masked-frame" => Ok(Variant::NoMaskedFrame),
            other => Err(Error::InvalidArgument(format!("unknown model variant `{other}`"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Hyper {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// ConvLSTM hidden channels; also the attention output width.
    pub hidden: usize,
    /// Number of conditioning frames before the target.
    pub context_len: usize,
    /// Intensity bins per channel.
    pub bins: usize,
    pub kernel: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub decoder_width: usize,
    pub meta_hidden: usize,
    pub variant: Variant,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 1,
            hidden: 32,
            context_len: 9,
            bins: 256,
            kernel: 3,
            encoder_layers: 2,
            decoder_layers: 4,
            decoder_width: 32,
            meta_hidden: 32,
            variant: Variant::Full,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("hidden", self.hidden),
            ("context_len", self.context_len),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("decoder_width", self.decoder_width),
            ("meta_hidden", self.meta_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("hyperparameter `{name}` must be positive")));
        }
        if self.bins < 2 || 256 % self.bins != 0 {
            return Err(Error::InvalidArgument(format!("bins = {} must divide 256 and be >= 2", self.bins)));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!("kernel = {} must be odd", self.kernel)));
        }
        Ok(())
    }

    /// Channels entering the ConvLSTM-side attention stage.
    pub fn context_channels(&self) -> usize {
        self.context_len * self.hidden
    }

    /// Length of the meta-network output: filter bank followed by bias.
    pub fn meta_outputs(&self) -> usize {
        self.hidden * self.context_channels() * ATTENTION_KERNEL * ATTENTION_KERNEL + self.hidden
    }

    pub fn decoder_inputs(&self) -> usize {
        match self.variant {
            Variant::NoMaskedFrame => self.hidden,
            _ => self.hidden + self.channels + 1,
        }
    }
}

/// Parameters placed on a tape, addressable by name.
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Shape(format!("model has no parameter `{name}`")))
    }

    /// Vars in [`ModelParameters`] order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Copies all parameters onto `tape`.
pub fn bind<T: Scalar>(params: &ModelParameters<T>, tape: &mut Tape<T>, trainable: bool) -> Bound {
    let mut vars = Vec::with_capacity(params.len());
    let mut index = HashMap::with_capacity(params.len());
    for (i, (name, tensor)) in params.iter().enumerate() {
        vars.push(tape.leaf_with(tensor, trainable));
        index.insert(name.to_string(), i);
    }
    Bound { vars, index }
}

/// ConvLSTM hidden and cell state.
#[derive(Clone, Copy, Debug)]
pub struct ConvLstmState {
    pub h: Var,
    pub c: Var,
}

impl ConvLstmState {
    pub fn zeros<T: Scalar>(tape: &mut Tape<T>, hyper: &Hyper) -> Self {
        let shape = [hyper.hidden, hyper.height, hyper.width];
        Self { h: tape.zeros(&shape), c: tape.zeros(&shape) }
    }
}

/// Filters emitted by the meta-network for one context.
#[derive(Clone, Copy, Debug)]
pub struct DynamicFilters {
    /// `[hidden, context_len * hidden, 3, 3]`
    pub filters: Var,
    /// `[hidden]`
    pub bias: Var,
}

/// Per-pixel, per-channel categorical distributions, laid out `[H, W, C, K]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionGrid<T: Scalar> {
    height: usize,
    width: usize,
    channels: usize,
    bins: usize,
    probs: Vec<T>,
}

impl<T: Scalar> PredictionGrid<T> {
    pub fn new(height: usize, width: usize, channels: usize, bins: usize, probs: Vec<T>) -> Result<Self> {
        if probs.len() != height * width * channels * bins {
            return Err(Error::Shape(format!(
                "prediction grid [{height}, {width}, {channels}, {bins}] needs {} values, got {}",
                height * width * channels * bins,
                probs.len()
            )));
        }
        Ok(Self { height, width, channels, bins, probs })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    /// Distribution over bins for pixel `(row, col)`, channel `c`.
    pub fn distribution(&self, row: usize, col: usize, c: usize) -> &[T] {
        let start = ((row * self.width + col) * self.channels + c) * self.bins;
        &self.probs[start..start + self.bins]
    }
}

fn check_frame(hyper: &Hyper, frame: &Frame, what: &str) -> Result<()> {
    if frame.dims() != (hyper.channels, hyper.height, hyper.width) {
        return Err(Error::Shape(format!(
            "{what} has dims {:?} (C,H,W) but the model expects {:?}",
            frame.dims(),
            (hyper.channels, hyper.height, hyper.width)
        )));
    }
    Ok(())
}

/// Frame intensities rescaled to `[0, 1]`, as a `[C, H, W]` constant.
pub fn frame_input<T: Scalar>(tape: &mut Tape<T>, frame: &Frame) -> Var {
    let scale = T::one() / T::of(255.0);
    let values = frame.values().iter().map(|&v| T::of(v as f64) * scale).collect();
    tape.constant(&[frame.channels(), frame.height(), frame.width()], values)
        .expect("frame dims are consistent")
}

/// Resolution-preserving CNN encoder: `encoder_layers` same-padded convolutions with relu.
pub fn encode_frame<T: Scalar>(tape: &mut Tape<T>, bound: &Bound, hyper: &Hyper, frame: &Frame) -> Result<Var> {
    check_frame(hyper, frame, "frame")?;
    let mut x = frame_input(tape, frame);
    for l in 0..hyper.encoder_layers {
        let w = bound.var(&format!("encoder.{l}.weight"))?;
        let b = bound.var(&format!("encoder.{l}.bias"))?;
        let y = tape.conv2d(x, w, Some(b))?;
        x = tape.relu(y);
    }
    Ok(x)
}

/// One ConvLSTM update. Gates are computed by a single convolution over
/// `[x; h]` whose output channels are ordered input, forget, output, candidate.
pub fn convlstm_step<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    hyper: &Hyper,
    x: Var,
    state: ConvLstmState,
) -> Result<ConvLstmState> {
    let want = [hyper.hidden, hyper.height, hyper.width];
    for (what, v) in [("input", x), ("h", state.h), ("c", state.c)] {
        if tape.shape(v) != want {
            return Err(Error::Shape(format!(
                "convlstm_step: {what} has shape {:?}, expected {want:?}",
                tape.shape(v)
            )));
        }
    }
    let n = hyper.hidden;
    let xh = tape.concat_channels(&[x, state.h])?;
    let w = bound.var("convlstm.weight")?;
    let b = bound.var("convlstm.bias")?;
    let pre = tape.conv2d(xh, w, Some(b))?;
    let i = tape.narrow_channels(pre, 0, n)?;
    let f = tape.narrow_channels(pre, n, n)?;
    let o = tape.narrow_channels(pre, 2 * n, n)?;
    let g = tape.narrow_channels(pre, 3 * n, n)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let o = tape.sigmoid(o);
    let g = tape.tanh(g);
    let keep = tape.mul(f, state.c)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let squashed = tape.tanh(c);
    let h = tape.mul(o, squashed)?;
    Ok(ConvLstmState { h, c })
}

/// Encodes each context frame and folds it through the ConvLSTM from a zero
/// state. Returns the hidden output of every step.
pub fn encode_context<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    hyper: &Hyper,
    context: &[Frame],
) -> Result<Vec<Var>> {
    if context.is_empty() {
        return Err(Error::InvalidArgument("encode_context: empty context".into()));
    }
    let mut state = ConvLstmState::zeros(tape, hyper);
    let mut hs = Vec::with_capacity(context.len());
    for frame in context {
        let x = encode_frame(tape, bound, hyper, frame)?;
        state = convlstm_step(tape, bound, hyper, x, state)?;
        hs.push(state.h);
    }
    Ok(hs)
}

/// Runs the meta-network on the pooled context and reshapes its output into
/// a filter bank and bias. The filters are scaled by `1/sqrt(fan_in)` of the
/// attention convolution.
pub fn make_dynamic_filters<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    hyper: &Hyper,
    context_hs: &[Var],
) -> Result<DynamicFilters> {
    if context_hs.is_empty() {
        return Err(Error::InvalidArgument("make_dynamic_filters: empty context".into()));
    }
    if context_hs.len() != hyper.context_len {
        return Err(Error::Shape(format!(
            "make_dynamic_filters: got {} context outputs, model is built for {}",
            context_hs.len(),
            hyper.context_len
        )));
    }
    let stacked = tape.concat_channels(context_hs)?;
    let pooled = tape.mean_pool(stacked)?;
    let w0 = bound.var("meta.0.weight")?;
    let b0 = bound.var("meta.0.bias")?;
    let w1 = bound.var("meta.1.weight")?;
    let b1 = bound.var("meta.1.bias")?;
    let hidden = tape.linear(pooled, w0, Some(b0))?;
    let hidden = tape.tanh(hidden);
    let out = tape.linear(hidden, w1, Some(b1))?;

    let c_in = hyper.context_channels();
    let k = ATTENTION_KERNEL;
    let n_filters = hyper.hidden * c_in * k * k;
    let flat = tape.narrow(out, 0, n_filters)?;
    let flat = tape.scale(flat, T::one() / T::of(((c_in * k * k) as f64).sqrt()));
    let filters = tape.reshape(flat, &[hyper.hidden, c_in, k, k])?;
    let bias = tape.narrow(out, n_filters, hyper.hidden)?;
    Ok(DynamicFilters { filters, bias })
}

/// Convolves the channel-concatenated context outputs with the dynamic filters.
pub fn apply_attention<T: Scalar>(tape: &mut Tape<T>, context_hs: &[Var], dynamic: DynamicFilters) -> Result<Var> {
    let stacked = tape.concat_channels(context_hs)?;
    tape.conv2d(stacked, dynamic.filters, Some(dynamic.bias))
}

/// Features for the decoder: attention output (or last hidden state), then
/// the masked frame and the visibility indicator when the variant uses them.
fn decoder_input<T: Scalar>(tape: &mut Tape<T>, hyper: &Hyper, features: Var, masked: &MaskedFrame) -> Result<Var> {
    if hyper.variant == Variant::NoMaskedFrame {
        return Ok(features);
    }
    let frame = frame_input(tape, masked.frame());
    let indicator = masked
        .mask()
        .visible()
        .iter()
        .map(|&v| if v { T::one() } else { T::zero() })
        .collect();
    let indicator = tape.constant(&[1, hyper.height, hyper.width], indicator)?;
    tape.concat_channels(&[features, frame, indicator])
}

/// Inpainting decoder and categorical head. Returns probabilities `[H, W, C, K]`.
pub fn decode<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    hyper: &Hyper,
    features: Var,
    masked: &MaskedFrame,
) -> Result<Var> {
    let mut x = decoder_input(tape, hyper, features, masked)?;
    for l in 0..hyper.decoder_layers {
        let w = bound.var(&format!("decoder.{l}.weight"))?;
        let b = bound.var(&format!("decoder.{l}.bias"))?;
        let y = tape.conv2d(x, w, Some(b))?;
        x = tape.relu(y);
    }
    let logits = tape.conv2d(x, bound.var("head.weight")?, Some(bound.var("head.bias")?))?;
    let logits = tape.pixel_major(logits)?;
    let logits = tape.reshape(logits, &[hyper.height, hyper.width, hyper.channels, hyper.bins])?;
    tape.softmax(logits)
}

/// Full forward pass on a tape. Returns the probability node `[H, W, C, K]`.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    hyper: &Hyper,
    context: &[Frame],
    masked: &MaskedFrame,
) -> Result<Var> {
    check_frame(hyper, masked.frame(), "masked frame")?;
    if hyper.variant != Variant::NoAttention && context.len() != hyper.context_len {
        return Err(Error::Shape(format!(
            "context has {} frames, model is built for {}",
            context.len(),
            hyper.context_len
        )));
    }
    let hs = encode_context(tape, bound, hyper, context)?;
    let features = match hyper.variant {
        Variant::NoAttention => *hs.last().expect("context is non-empty"),
        _ => {
            let dynamic = make_dynamic_filters(tape, bound, hyper, &hs)?;
            apply_attention(tape, &hs, dynamic)?
        }
    };
    decode(tape, bound, hyper, features, masked)
}

impl<T: Scalar> ModelParameters<T> {
    /// Inference without gradient tracking.
    pub fn predict(&self, context: &[Frame], masked: &MaskedFrame) -> Result<PredictionGrid<T>> {
        let hyper = self.hyper();
        let mut tape = Tape::new();
        let bound = bind(self, &mut tape, false);
        let probs = forward(&mut tape, &bound, hyper, context, masked)?;
        let probs = tape.tensor(probs).into_values();
        PredictionGrid::new(hyper.height, hyper.width, hyper.channels, hyper.bins, probs)
    }
}

/// Collects gradients of `bound` into one flat vector per parameter.
pub fn collect_grads<T: Scalar>(params: &ModelParameters<T>, bound: &Bound, grads: &Gradients<T>) -> Vec<Vec<T>> {
    params
        .iter()
        .zip(bound.vars())
        .map(|((_, t), v)| grads.get(*v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); t.numel()]))
        .collect()
}
