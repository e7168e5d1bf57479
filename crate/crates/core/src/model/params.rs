use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Hyper, Variant, ATTENTION_KERNEL};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Named parameter groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Collection {
    Encoder,
    ConvLstm,
    Meta,
    Decoder,
    Head,
}

impl Collection {
    pub fn of(name: &str) -> Option<Self> {
        match name.split('.').next()? {
            "encoder" => Some(Collection::Encoder),
            "convlstm" => Some(Collection::ConvLstm),
            "meta" => Some(Collection::Meta),
            "decoder" => Some(Collection::Decoder),
            "head" => Some(Collection::Head),
            _ => None,
        }
    }
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamInit {
    /// Zero-mean normal with variance `1 / fan_in`.
    FanIn(usize),
    Zeros,
    /// ConvLSTM gate bias: zero except `+1` on the forget-gate slice.
    ForgetBias { hidden: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: ParamInit,
}

impl ParamSpec {
    fn new(name: impl Into<String>, shape: &[usize], init: ParamInit) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), init }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Parameter names, shapes and initializers implied by `hyper`, in storage order.
pub fn layout(hyper: &Hyper) -> Vec<ParamSpec> {
    let k = hyper.kernel;
    let n = hyper.hidden;
    let mut specs = Vec::new();

    let mut c_in = hyper.channels;
    for l in 0..hyper.encoder_layers {
        specs.push(ParamSpec::new(format!("encoder.{l}.weight"), &[n, c_in, k, k], ParamInit::FanIn(c_in * k * k)));
        specs.push(ParamSpec::new(format!("encoder.{l}.bias"), &[n], ParamInit::Zeros));
        c_in = n;
    }

    specs.push(ParamSpec::new("convlstm.weight", &[4 * n, 2 * n, k, k], ParamInit::FanIn(2 * n * k * k)));
    specs.push(ParamSpec::new("convlstm.bias", &[4 * n], ParamInit::ForgetBias { hidden: n }));

    if hyper.variant != Variant::NoAttention {
        let ctx = hyper.context_channels();
        let mh = hyper.meta_hidden;
        specs.push(ParamSpec::new("meta.0.weight", &[mh, ctx], ParamInit::FanIn(ctx)));
        specs.push(ParamSpec::new("meta.0.bias", &[mh], ParamInit::Zeros));
        specs.push(ParamSpec::new("meta.1.weight", &[hyper.meta_outputs(), mh], ParamInit::FanIn(mh)));
        specs.push(ParamSpec::new("meta.1.bias", &[hyper.meta_outputs()], ParamInit::Zeros));
        debug_assert_eq!(hyper.meta_outputs(), n * ctx * ATTENTION_KERNEL * ATTENTION_KERNEL + n);
    }

    let dw = hyper.decoder_width;
    let mut c_in = hyper.decoder_inputs();
    for l in 0..hyper.decoder_layers {
        specs.push(ParamSpec::new(format!("decoder.{l}.weight"), &[dw, c_in, k, k], ParamInit::FanIn(c_in * k * k)));
        specs.push(ParamSpec::new(format!("decoder.{l}.bias"), &[dw], ParamInit::Zeros));
        c_in = dw;
    }

    let out = hyper.channels * hyper.bins;
    specs.push(ParamSpec::new("head.weight", &[out, dw, 1, 1], ParamInit::Zeros));
    specs.push(ParamSpec::new("head.bias", &[out], ParamInit::Zeros));
    specs
}

/// All trainable tensors of a model plus the hyperparameters that shape them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters<T: Scalar> {
    hyper: Hyper,
    tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ModelParameters<T> {
    /// Draws fresh parameters according to [`layout`].
    pub fn init<R: Rng + ?Sized>(hyper: &Hyper, rng: &mut R) -> Result<Self> {
        hyper.validate()?;
        let tensors = layout(hyper)
            .into_iter()
            .map(|spec| {
                let numel = spec.numel();
                let values: Vec<T> = match spec.init {
                    ParamInit::Zeros => vec![T::zero(); numel],
                    ParamInit::FanIn(fan_in) => {
                        let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("finite std");
                        (0..numel).map(|_| T::of(normal.sample(rng))).collect()
                    }
                    ParamInit::ForgetBias { hidden } => (0..numel)
                        .map(|i| if (hidden..2 * hidden).contains(&i) { T::one() } else { T::zero() })
                        .collect(),
                };
                let tensor = Tensor::new(&spec.shape, values).expect("layout shape").with_grad();
                (spec.name, tensor)
            })
            .collect();
        Ok(Self { hyper: hyper.clone(), tensors })
    }

    /// Assembles parameters from named tensors, checking them against [`layout`].
    pub fn from_tensors(hyper: Hyper, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        hyper.validate()?;
        let specs = layout(&hyper);
        if specs.len() != tensors.len() {
            return Err(Error::Checkpoint {
                field: "tensor_count".into(),
                reason: format!("expected {} tensors for these hyperparameters, found {}", specs.len(), tensors.len()),
            });
        }
        for (spec, (name, t)) in specs.iter().zip(&tensors) {
            if &spec.name != name {
                return Err(Error::Checkpoint {
                    field: name.clone(),
                    reason: format!("expected tensor `{}` at this position", spec.name),
                });
            }
            if spec.shape != t.shape() {
                return Err(Error::Checkpoint {
                    field: name.clone(),
                    reason: format!("shape {:?} does not match expected {:?}", t.shape(), spec.shape),
                });
            }
        }
        let tensors = tensors.into_iter().map(|(n, t)| (n, t.with_grad())).collect();
        Ok(Self { hyper, tensors })
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|(_, t)| t.is_finite())
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in &mut self.tensors {
            t.zero_grad();
        }
    }

    /// Converts every tensor to another precision.
    pub fn cast<U: Scalar>(&self) -> ModelParameters<U> {
        ModelParameters {
            hyper: self.hyper.clone(),
            tensors: self.tensors.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }
}
