//! Adam training on anomaly-free sequences.
//!
//! Each step samples `batch_size` windows of `context_len + 1` consecutive
//! frames, draws a fresh grid mask per window, and minimizes the mean
//! per-term NLL of the window's last frame. Batch items are independent and
//! may be evaluated in parallel; their gradients are summed in item order so
//! the result does not depend on the number of workers.

use std::io::Write;
use std::time::Instant;

use rand::Rng;

use crate::data::{Label, LabeledSequence};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::loss::{nll_on_tape, Scope};
use crate::masking::{apply_mask, grid_mask, DEFAULT_PERIODS};
use crate::model::{bind, collect_grads, forward, Hyper, ModelParameters, Variant};
use crate::rng::{derive, seeded};
use crate::tensor::{Precision, Scalar, Tape};

const STREAM_INIT: u64 = 0x494e4954;
const STREAM_STEP: u64 = 0x53544550;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Architecture choices that do not follow from the data.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub context_len: usize,
    pub bins: usize,
    pub decoder_width: usize,
    pub meta_hidden: usize,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let h = Hyper::default();
        Self {
            hidden: h.hidden,
            context_len: h.context_len,
            bins: h.bins,
            decoder_width: h.decoder_width,
            meta_hidden: h.meta_hidden,
            variant: h.variant,
        }
    }
}

impl ModelConfig {
    pub fn hyper(&self, height: usize, width: usize, channels: usize) -> Hyper {
        Hyper {
            height,
            width,
            channels,
            hidden: self.hidden,
            context_len: self.context_len,
            bins: self.bins,
            decoder_width: self.decoder_width,
            meta_hidden: self.meta_hidden,
            variant: self.variant,
            ..Hyper::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub mask_periods: (usize, usize),
    pub loss_scope: Scope,
    pub log_interval: usize,
    pub checkpoint_interval: usize,
    pub precision: Precision,
    pub model: ModelConfig,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 8,
            steps: 1000,
            seed: 0,
            mask_periods: DEFAULT_PERIODS,
            loss_scope: Scope::All,
            log_interval: 10,
            checkpoint_interval: 500,
            precision: Precision::F32,
            model: ModelConfig::default(),
            exec: Exec::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("log_interval", self.log_interval),
            ("checkpoint_interval", self.checkpoint_interval),
            ("mask period rows", self.mask_periods.0),
            ("mask period cols", self.mask_periods.1),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if ![32, 64, 128, 256].contains(&self.model.bins) {
            return Err(Error::InvalidArgument(format!("bins = {} must be one of 32, 64, 128, 256", self.model.bins)));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainLogRecord {
    pub step: usize,
    /// Batch mean of the per pixel-channel NLL.
    pub mean_nll: f64,
    pub wall_ms: f64,
    pub grad_norm: f64,
}

impl TrainLogRecord {
    /// Tab-separated: step, mean NLL, wall-clock ms, gradient norm.
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{:.3}\t{}", self.step, self.mean_nll, self.wall_ms, self.grad_norm)
    }

    pub fn write_all<W: Write>(records: &[TrainLogRecord], mut out: W) -> std::io::Result<()> {
        for r in records {
            writeln!(out, "{}", r.to_line())?;
        }
        Ok(())
    }
}

/// Fresh parameters: fan-in scaled normal weights, zero head and biases,
/// forget-gate bias +1. Deterministic in `seed`.
pub fn init_params<T: Scalar>(hyper: &Hyper, seed: u64) -> Result<ModelParameters<T>> {
    ModelParameters::init(hyper, &mut seeded(derive(seed, STREAM_INIT, 0)))
}

struct Adam<T: Scalar> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    fn new<U: Scalar>(params: &ModelParameters<U>) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    fn step(&mut self, params: &mut ModelParameters<T>, grads: &[Vec<T>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let lr = T::of(lr);
        let eps = T::of(ADAM_EPS);
        for ((((_, p), g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, gi), mi), vi) in p.values_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * *gi;
                *vi = b2 * *vi + (T::one() - b2) * *gi * *gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi = *pi - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// One training example: window start in a sequence and mask shifts.
#[derive(Clone, Copy, Debug)]
struct ItemSpec {
    sequence: usize,
    start: usize,
    mask_seed: u64,
}

fn check_dataset(hyper: &Hyper, dataset: &[LabeledSequence]) -> Result<()> {
    if let Some(i) = dataset.iter().position(|s| s.label != Label::Normal || s.corruption.is_some()) {
        return Err(Error::Contract(format!("training sequence {i} is labeled anomalous; train only on anomaly-free data")));
    }
    let want = (hyper.channels, hyper.height, hyper.width);
    for (i, s) in dataset.iter().enumerate() {
        if s.sequence.dims() != want {
            return Err(Error::Shape(format!("sequence {i} has dims {:?}, model expects {want:?}", s.sequence.dims())));
        }
        if s.sequence.len() < hyper.context_len + 1 {
            return Err(Error::Shape(format!(
                "sequence {i} has {} frames, a window needs {}",
                s.sequence.len(),
                hyper.context_len + 1
            )));
        }
    }
    Ok(())
}

/// Loss and parameter gradients for one window.
pub fn example_gradients<T: Scalar>(
    params: &ModelParameters<T>,
    seq: &LabeledSequence,
    start: usize,
    mask_seed: u64,
    periods: (usize, usize),
    scope: Scope,
) -> Result<(f64, Vec<Vec<T>>)> {
    let hyper = params.hyper();
    let frames = seq.sequence.frames();
    let context = &frames[start..start + hyper.context_len];
    let target = &frames[start + hyper.context_len];
    let mask = grid_mask(hyper.height, hyper.width, periods.0, periods.1, &mut seeded(mask_seed))?;
    let masked = apply_mask(target, &mask)?;
    let mut tape = Tape::new();
    let bound = bind(params, &mut tape, true);
    let probs = forward(&mut tape, &bound, hyper, context, &masked)?;
    let (total, n) = nll_on_tape(&mut tape, probs, target, &mask, scope)?;
    let mean = tape.scale(total, T::one() / T::of(n as f64));
    let value = tape.value(mean)[0].to_f64_lossy();
    let grads = tape.backward(mean)?;
    Ok((value, collect_grads(params, &bound, &grads)))
}

/// Architecture for `config` on frames shaped like the first sequence.
pub fn hyper_for(config: &TrainConfig, dataset: &[LabeledSequence]) -> Result<Hyper> {
    let first = dataset.first().ok_or_else(|| Error::Contract("training set is empty".into()))?;
    let (c, h, w) = first.sequence.dims();
    let hyper = config.model.hyper(h, w, c);
    hyper.validate()?;
    Ok(hyper)
}

/// Trains from [`init_params`]. `on_checkpoint(step, params)` runs every
/// `checkpoint_interval` steps after a finiteness check.
pub fn train_with<T, F>(
    config: &TrainConfig,
    dataset: &[LabeledSequence],
    mut on_checkpoint: F,
) -> Result<(ModelParameters<T>, Vec<TrainLogRecord>)>
where
    T: Scalar,
    F: FnMut(usize, &ModelParameters<T>) -> Result<()>,
{
    config.validate()?;
    if T::PRECISION != config.precision {
        return Err(Error::Precision { expected: config.precision.to_string(), found: T::PRECISION.to_string() });
    }
    let hyper = &hyper_for(config, dataset)?;
    check_dataset(hyper, dataset)?;
    let mut params = init_params::<T>(hyper, config.seed)?;
    let mut adam = Adam::<T>::new(&params);
    let mut logs = Vec::new();
    let window = hyper.context_len + 1;
    let clock = Instant::now();

    for step in 0..config.steps {
        let mut rng = seeded(derive(config.seed, STREAM_STEP, step as u64));
        let items: Vec<ItemSpec> = (0..config.batch_size)
            .map(|_| {
                let sequence = rng.gen_range(0..dataset.len());
                let start = rng.gen_range(0..=dataset[sequence].sequence.len() - window);
                ItemSpec { sequence, start, mask_seed: rng.gen() }
            })
            .collect();
        let results = config.exec.map(&items, |_, it| {
            example_gradients(
                &params,
                &dataset[it.sequence],
                it.start,
                it.mask_seed,
                config.mask_periods,
                config.loss_scope,
            )
        });

        let mut total = params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect::<Vec<_>>();
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l;
            for (acc, gi) in total.iter_mut().zip(&g) {
                for (a, b) in acc.iter_mut().zip(gi) {
                    *a = *a + *b;
                }
            }
        }
        let inv = T::one() / T::of(config.batch_size as f64);
        let mut sq = 0.0;
        for g in total.iter_mut() {
            for v in g.iter_mut() {
                *v = *v * inv;
                sq += v.to_f64_lossy().powi(2);
            }
        }
        let mean_nll = loss / config.batch_size as f64;
        if !mean_nll.is_finite() {
            return Err(Error::Contract(format!("training loss became non-finite at step {step}")));
        }
        adam.step(&mut params, &total, config.learning_rate);

        let done = step + 1;
        if done % config.log_interval == 0 || done == config.steps {
            logs.push(TrainLogRecord {
                step: done,
                mean_nll,
                wall_ms: clock.elapsed().as_secs_f64() * 1e3,
                grad_norm: sq.sqrt(),
            });
        }
        if done % config.checkpoint_interval == 0 {
            if !params.is_finite() {
                return Err(Error::Contract(format!("parameters became non-finite by step {done}")));
            }
            on_checkpoint(done, &params)?;
        }
    }
    Ok((params, logs))
}

pub fn train<T: Scalar>(
    config: &TrainConfig,
    dataset: &[LabeledSequence],
) -> Result<(ModelParameters<T>, Vec<TrainLogRecord>)> {
    train_with(config, dataset, |_, _| Ok(()))
}
