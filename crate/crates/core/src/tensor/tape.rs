use super::kernels::{col2im_same, im2col_same, matmul, matmul_at, matmul_bt};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Sigmoid => {
                // Split on sign so exp never overflows.
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(T::zero()),
        }
    }

    /// Derivative expressed through the activation's output.
    fn slope<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        input: Var,
        filters: Var,
        bias: Option<Var>,
        cols: Vec<T>,
        c_in: usize,
        c_out: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Act(Var, Activation),
    Concat(Vec<Var>),
    Narrow {
        input: Var,
        offset: usize,
    },
    Reshape(Var),
    Scale(Var, T),
    Sum(Var),
    MeanPool(Var),
    PixelMajor(Var),
    Softmax(Var),
    NllSelect {
        probs: Var,
        picks: Vec<usize>,
        floor: T,
    },
}

struct Node<T: Scalar> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is a topological order because
/// an operation can only reference nodes that already exist.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn spatial(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Some((c, h, w)),
        _ => None,
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies a tensor onto the tape. It receives a gradient iff it requires one.
    pub fn leaf(&mut self, tensor: &Tensor<T>) -> Var {
        self.push(tensor.shape().to_vec(), tensor.values().to_vec(), Op::Leaf, tensor.requires_grad())
    }

    /// Copies a tensor onto the tape with an explicit gradient flag.
    pub fn leaf_with(&mut self, tensor: &Tensor<T>, requires_grad: bool) -> Var {
        self.push(tensor.shape().to_vec(), tensor.values().to_vec(), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, shape: &[usize], values: Vec<T>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Shape(format!(
                "constant of shape {shape:?} needs {numel} values, got {}",
                values.len()
            )));
        }
        Ok(self.push(shape.to_vec(), values, Op::Leaf, false))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        let numel = shape.iter().product();
        self.push(shape.to_vec(), vec![T::zero(); numel], Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let node = &self.nodes[v.0];
        Tensor::new(&node.shape, node.value.clone()).expect("node shape is consistent")
    }

    /// Same-padded stride-1 2-D convolution.
    ///
    /// `input: [c_in, h, w]`, `filters: [c_out, c_in, kh, kw]` with odd kernel
    /// sides, optional `bias: [c_out]`. Output is `[c_out, h, w]`.
    pub fn conv2d(&mut self, input: Var, filters: Var, bias: Option<Var>) -> Result<Var> {
        let in_shape = self.shape(input).to_vec();
        let f_shape = self.shape(filters).to_vec();
        let mismatch = || Error::Shape(format!("conv2d: input {in_shape:?} incompatible with filters {f_shape:?}"));
        let (c_in, h, w) = spatial(&in_shape).ok_or_else(mismatch)?;
        let (c_out, fc, kh, kw) = match f_shape[..] {
            [a, b, c, d] => (a, b, c, d),
            _ => return Err(mismatch()),
        };
        if fc != c_in {
            return Err(mismatch());
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!("conv2d: kernel {kh}x{kw} must have odd sides")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(Error::Shape(format!(
                    "conv2d: bias {:?} does not match {c_out} output channels of filters {f_shape:?}",
                    self.shape(b)
                )));
            }
        }
        let hw = h * w;
        let cols = im2col_same(self.value(input), c_in, h, w, kh, kw);
        let mut out = vec![T::zero(); c_out * hw];
        if let Some(b) = bias {
            let bv = self.value(b);
            for (o, row) in out.chunks_exact_mut(hw).enumerate() {
                row.fill(bv[o]);
            }
        }
        matmul(c_out, c_in * kh * kw, hw, self.value(filters), &cols, &mut out, bias.is_some());
        let rg = self.rg(input) || self.rg(filters) || bias.is_some_and(|b| self.rg(b));
        // Columns are only needed to form the filter gradient.
        let cols = if self.rg(filters) { cols } else { Vec::new() };
        Ok(self.push(
            vec![c_out, h, w],
            out,
            Op::Conv2d { input, filters, bias, cols, c_in, c_out, h, w, kh, kw },
            rg,
        ))
    }

    /// Dense layer `weight[out, in] * input[in] + bias[out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let ws = self.shape(weight).to_vec();
        let n_in = self.nodes[input.0].value.len();
        let (n_out, w_in) = match ws[..] {
            [a, b] => (a, b),
            _ => return Err(Error::Shape(format!("linear: weight must be rank 2, got {ws:?}"))),
        };
        if w_in != n_in {
            return Err(Error::Shape(format!(
                "linear: input {:?} incompatible with weight {ws:?}",
                self.shape(input)
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [n_out] {
                return Err(Error::Shape(format!("linear: bias {:?} vs weight {ws:?}", self.shape(b))));
            }
        }
        let mut out = match bias {
            Some(b) => self.value(b).to_vec(),
            None => vec![T::zero(); n_out],
        };
        matmul(n_out, n_in, 1, self.value(weight), self.value(input), &mut out, true);
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(vec![n_out], out, Op::Linear { input, weight, bias }, rg))
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), rg))
    }

    pub fn pointwise(&mut self, x: Var, kind: Activation) -> Var {
        let out = self.value(x).iter().map(|v| kind.apply(*v)).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Act(x, kind), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.pointwise(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.pointwise(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.pointwise(x, Activation::Relu)
    }

    /// Stacks `[c_i, h, w]` tensors along the channel axis, in argument order.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Shape("concat_channels: no inputs".into()))?;
        let (_, h, w) = spatial(self.shape(first))
            .ok_or_else(|| Error::Shape(format!("concat_channels: {:?} is not [C,H,W]", self.shape(first))))?;
        let mut channels = 0;
        for &p in parts {
            match spatial(self.shape(p)) {
                Some((c, ph, pw)) if ph == h && pw == w => channels += c,
                _ => {
                    return Err(Error::Shape(format!(
                        "concat_channels: {:?} does not match spatial dims {h}x{w} of {:?}",
                        self.shape(p),
                        self.shape(first)
                    )))
                }
            }
        }
        let mut out = Vec::with_capacity(channels * h * w);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![channels, h, w], out, Op::Concat(parts.to_vec()), rg))
    }

    /// Channels `start..start + len` of a `[c, h, w]` tensor.
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (c, h, w) = spatial(self.shape(x))
            .ok_or_else(|| Error::Shape(format!("narrow_channels: {:?} is not [C,H,W]", self.shape(x))))?;
        if start + len > c {
            return Err(Error::Shape(format!("narrow_channels: {start}+{len} exceeds {c} channels")));
        }
        let hw = h * w;
        let out = self.value(x)[start * hw..(start + len) * hw].to_vec();
        let rg = self.rg(x);
        Ok(self.push(vec![len, h, w], out, Op::Narrow { input: x, offset: start * hw }, rg))
    }

    /// Elements `start..start + len` of a rank-1 tensor.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.value(x).len();
        if self.shape(x).len() != 1 || start + len > n {
            return Err(Error::Shape(format!("narrow: {start}+{len} out of {:?}", self.shape(x))));
        }
        let out = self.value(x)[start..start + len].to_vec();
        let rg = self.rg(x);
        Ok(self.push(vec![len], out, Op::Narrow { input: x, offset: start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::Shape(format!("reshape: {:?} into {shape:?}", self.shape(x))));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x), rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).iter().map(|v| *v * factor).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, factor), rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(vec![], vec![total], Op::Sum(x), rg)
    }

    /// Global average pool `[c, h, w] -> [c]`.
    pub fn mean_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = spatial(self.shape(x))
            .ok_or_else(|| Error::Shape(format!("mean_pool: {:?} is not [C,H,W]", self.shape(x))))?;
        let inv = T::one() / T::of((h * w) as f64);
        let out = self.value(x).chunks_exact(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let rg = self.rg(x);
        Ok(self.push(vec![c], out, Op::MeanPool(x), rg))
    }

    /// Moves the channel axis last: `[x, h, w] -> [h, w, x]`.
    pub fn pixel_major(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = spatial(self.shape(x))
            .ok_or_else(|| Error::Shape(format!("pixel_major: {:?} is not [C,H,W]", self.shape(x))))?;
        let hw = h * w;
        let src = self.value(x);
        let mut out = vec![T::zero(); c * hw];
        for ci in 0..c {
            for p in 0..hw {
                out[p * c + ci] = src[ci * hw + p];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![h, w, c], out, Op::PixelMajor(x), rg))
    }

    /// Softmax along the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let k = *self.shape(x).last().unwrap_or(&0);
        if k < 2 {
            return Err(Error::Shape(format!("softmax: last axis of {:?} must be >= 2", self.shape(x))));
        }
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(k) {
            softmax_row(row);
        }
        let rg = self.rg(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::Softmax(x), rg))
    }

    /// `-sum log(max(p[i], floor))` over the flat indices `picks` of `probs`.
    pub fn nll_select(&mut self, probs: Var, picks: Vec<usize>, floor: T) -> Result<Var> {
        let values = self.value(probs);
        if let Some(&bad) = picks.iter().find(|&&i| i >= values.len()) {
            return Err(Error::Shape(format!("nll_select: index {bad} out of {} probabilities", values.len())));
        }
        let total = picks.iter().map(|&i| -values[i].max(floor).ln()).sum();
        let rg = self.rg(probs);
        Ok(self.push(vec![], vec![total], Op::NllSelect { probs, picks, floor }, rg))
    }

    /// Reverse pass from a scalar root. Consumes the tape.
    pub fn backward(self, root: Var) -> Result<Gradients<T>> {
        let root_shape = &self.nodes[root.0].shape;
        if self.nodes[root.0].value.len() != 1 || !root_shape.iter().all(|&d| d == 1) {
            return Err(Error::Shape(format!("backward: root must be a scalar, got shape {root_shape:?}")));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);

        for idx in (0..=root.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let gy = match &node.op {
                Op::Leaf => continue,
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            let mut acc = Accumulator { nodes: &nodes, grads: &mut grads };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { input, filters, bias, cols, c_in, c_out, h, w, kh, kw } => {
                    let hw = h * w;
                    let kk = c_in * kh * kw;
                    if let Some(g) = acc.slot(*filters) {
                        matmul_bt(*c_out, hw, kk, &gy, cols, g);
                    }
                    if let Some(b) = bias {
                        if let Some(g) = acc.slot(*b) {
                            for (o, row) in gy.chunks_exact(hw).enumerate() {
                                g[o] = g[o] + row.iter().copied().sum();
                            }
                        }
                    }
                    if acc.wants(*input) {
                        let mut dcols = vec![T::zero(); kk * hw];
                        matmul_at(kk, *c_out, hw, &nodes[filters.0].value, &gy, &mut dcols);
                        let g = acc.slot(*input).expect("wants checked");
                        col2im_same(&dcols, *c_in, *h, *w, *kh, *kw, g);
                    }
                }
                Op::Linear { input, weight, bias } => {
                    let x = &nodes[input.0].value;
                    let n_in = x.len();
                    if let Some(g) = acc.slot(*weight) {
                        for (o, go) in gy.iter().enumerate() {
                            let row = &mut g[o * n_in..(o + 1) * n_in];
                            for (r, xi) in row.iter_mut().zip(x) {
                                *r = *r + *go * *xi;
                            }
                        }
                    }
                    if let Some(b) = bias {
                        if let Some(g) = acc.slot(*b) {
                            for (gb, go) in g.iter_mut().zip(&gy) {
                                *gb = *gb + *go;
                            }
                        }
                    }
                    if acc.wants(*input) {
                        let mut gx = vec![T::zero(); n_in];
                        matmul_at(n_in, gy.len(), 1, &nodes[weight.0].value, &gy, &mut gx);
                        add_into(acc.slot(*input).expect("wants checked"), &gx);
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(g) = acc.slot(v) {
                            add_into(g, &gy);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(g) = acc.slot(*a) {
                        for ((gi, dy), o) in g.iter_mut().zip(&gy).zip(bv) {
                            *gi = *gi + *dy * *o;
                        }
                    }
                    if let Some(g) = acc.slot(*b) {
                        for ((gi, dy), o) in g.iter_mut().zip(&gy).zip(av) {
                            *gi = *gi + *dy * *o;
                        }
                    }
                }
                Op::Act(x, kind) => {
                    if let Some(g) = acc.slot(*x) {
                        for ((gi, dy), y) in g.iter_mut().zip(&gy).zip(&node.value) {
                            *gi = *gi + *dy * kind.slope(*y);
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = nodes[p.0].value.len();
                        if let Some(g) = acc.slot(p) {
                            add_into(g, &gy[offset..offset + n]);
                        }
                        offset += n;
                    }
                }
                Op::Narrow { input, offset } => {
                    if let Some(g) = acc.slot(*input) {
                        add_into(&mut g[*offset..*offset + gy.len()], &gy);
                    }
                }
                Op::Reshape(x) => {
                    if let Some(g) = acc.slot(*x) {
                        add_into(g, &gy);
                    }
                }
                Op::Scale(x, factor) => {
                    if let Some(g) = acc.slot(*x) {
                        for (gi, dy) in g.iter_mut().zip(&gy) {
                            *gi = *gi + *dy * *factor;
                        }
                    }
                }
                Op::Sum(x) => {
                    if let Some(g) = acc.slot(*x) {
                        for gi in g.iter_mut() {
                            *gi = *gi + gy[0];
                        }
                    }
                }
                Op::MeanPool(x) => {
                    let hw = nodes[x.0].value.len() / gy.len();
                    let inv = T::one() / T::of(hw as f64);
                    if let Some(g) = acc.slot(*x) {
                        for (plane, dy) in g.chunks_exact_mut(hw).zip(&gy) {
                            for gi in plane {
                                *gi = *gi + *dy * inv;
                            }
                        }
                    }
                }
                Op::PixelMajor(x) => {
                    let c = node.shape[2];
                    let hw = gy.len() / c;
                    if let Some(g) = acc.slot(*x) {
                        for ci in 0..c {
                            for p in 0..hw {
                                g[ci * hw + p] = g[ci * hw + p] + gy[p * c + ci];
                            }
                        }
                    }
                }
                Op::Softmax(x) => {
                    let k = *node.shape.last().expect("softmax rank >= 1");
                    if let Some(g) = acc.slot(*x) {
                        for ((grow, dy), y) in g.chunks_exact_mut(k).zip(gy.chunks_exact(k)).zip(node.value.chunks_exact(k)) {
                            let dot: T = dy.iter().zip(y).map(|(a, b)| *a * *b).sum();
                            for ((gi, d), yi) in grow.iter_mut().zip(dy).zip(y) {
                                *gi = *gi + *yi * (*d - dot);
                            }
                        }
                    }
                }
                Op::NllSelect { probs, picks, floor } => {
                    let p = &nodes[probs.0].value;
                    if let Some(g) = acc.slot(*probs) {
                        for &i in picks {
                            if p[i] > *floor {
                                g[i] = g[i] - gy[0] / p[i];
                            }
                        }
                    }
                }
            }
        }

        Ok(Gradients { grads })
    }
}

struct Accumulator<'a, T: Scalar> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Scalar> Accumulator<'_, T> {
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn slot(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.wants(v) {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

pub(crate) fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` (if any) into `tensor`'s gradient buffer.
    pub fn accumulate_into(&self, v: Var, tensor: &mut Tensor<T>) {
        if let Some(g) = self.get(v) {
            tensor.accumulate_grad(g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pointwise_reference_values() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(&[3], vec![0.0, -2.0, 5.0]).unwrap();
        let s = t.sigmoid(x);
        let th = t.tanh(x);
        let r = t.relu(x);
        assert_eq!(t.value(s)[0], 0.5);
        assert_eq!(t.value(th)[0], 0.0);
        assert_eq!(t.value(r), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn sigmoid_is_finite_for_extreme_inputs() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(&[2], vec![-1e4, 1e4]).unwrap();
        let s = t.sigmoid(x);
        assert!(t.value(s).iter().all(|v| v.is_finite()));
        assert_eq!(t.value(s), &[0.0, 1.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap().with_grad());
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn square_sum_gradient_is_twice_input() {
        let values = vec![1.5, -2.0, 0.25, 4.0];
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&Tensor::new(&[4], values.clone()).unwrap().with_grad());
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        let g = t.backward(s).unwrap();
        for (gi, v) in g.get(x).unwrap().iter().zip(&values) {
            assert_abs_diff_eq!(*gi, 2.0 * v, epsilon = 1e-12);
        }
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&Tensor::zeros(&[2]).with_grad());
        assert!(matches!(t.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_shape_mismatch_names_both_shapes() {
        let mut t = Tape::<f32>::new();
        let x = t.zeros(&[2, 4, 4]);
        let f = t.zeros(&[1, 3, 3, 3]);
        let err = t.conv2d(x, f, None).unwrap_err().to_string();
        assert!(err.contains("[2, 4, 4]") && err.contains("[1, 3, 3, 3]"), "{err}");
    }

    #[test]
    fn conv_rejects_even_kernels() {
        let mut t = Tape::<f32>::new();
        let x = t.zeros(&[1, 4, 4]);
        let f = t.zeros(&[1, 1, 2, 2]);
        assert!(t.conv2d(x, f, None).is_err());
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let input: Vec<f32> = (0..2 * 5 * 6).map(|i| (i as f32 * 0.37).sin()).collect();
        let mut filt = vec![0.0f32; 2 * 2 * 9];
        filt[4] = 1.0; // out 0 <- in 0 center
        filt[3 * 9 + 4] = 1.0; // out 1 <- in 1 center
        let mut t = Tape::<f32>::new();
        let x = t.constant(&[2, 5, 6], input.clone()).unwrap();
        let f = t.constant(&[2, 2, 3, 3], filt).unwrap();
        let y = t.conv2d(x, f, None).unwrap();
        assert_eq!(t.value(y), &input[..]);
    }

    #[test]
    fn affine_one_by_one_conv_on_constants() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(&[1, 4, 4], vec![1.0; 16]).unwrap();
        let f = t.constant(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let b = t.constant(&[1], vec![1.0]).unwrap();
        let y = t.conv2d(x, f, Some(b)).unwrap();
        assert_eq!(t.shape(y), &[1, 4, 4]);
        assert!(t.value(y).iter().all(|v| *v == 3.0));
    }

    #[test]
    fn softmax_uniform_and_shift_invariant() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(&[256], vec![0.7; 256]).unwrap();
        let p = t.softmax(x).unwrap();
        assert!(t.value(p).iter().all(|v| (*v - 1.0 / 256.0).abs() < 1e-15));

        let logits = vec![0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 123.0).collect();
        let a = t.constant(&[4], logits).unwrap();
        let b = t.constant(&[4], shifted).unwrap();
        let pa = t.softmax(a).unwrap();
        let pb = t.softmax(b).unwrap();
        for (u, v) in t.value(pa).iter().zip(t.value(pb)) {
            assert_abs_diff_eq!(*u, *v, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_matches_direct_normalization() {
        let logits = [10.0f64, 0.0, 0.0, 0.0];
        // Direct exp-normalize without max subtraction.
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        let expected: Vec<f64> = logits.iter().map(|v| v.exp() / z).collect();
        let mut t = Tape::<f64>::new();
        let x = t.constant(&[1, 4], logits.to_vec()).unwrap();
        let p = t.softmax(x).unwrap();
        assert!(t.value(p)[0] > 0.99);
        for (u, v) in t.value(p).iter().zip(&expected) {
            assert_abs_diff_eq!(*u, *v, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(t.value(p).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn softmax_rejects_single_bin() {
        let mut t = Tape::<f32>::new();
        let x = t.zeros(&[3, 1]);
        assert!(t.softmax(x).is_err());
    }

    #[test]
    fn concat_orders_channels_and_splits_gradient() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(&Tensor::full(&[1, 2, 2], 1.0).with_grad());
        let b = t.leaf(&Tensor::full(&[2, 2, 2], 2.0).with_grad());
        let c = t.concat_channels(&[a, b]).unwrap();
        assert_eq!(t.shape(c), &[3, 2, 2]);
        assert_eq!(&t.value(c)[..4], &[1.0; 4]);
        assert_eq!(&t.value(c)[4..], &[2.0; 8]);
        let single = t.concat_channels(&[a]).unwrap();
        assert_eq!(t.value(single), t.value(a));
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &[1.0; 4]);
        assert_eq!(g.get(b).unwrap(), &[1.0; 8]);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let mut t = Tape::<f64>::new();
        let a = t.zeros(&[1, 2, 2]);
        let b = t.zeros(&[1, 3, 2]);
        assert!(t.concat_channels(&[a, b]).is_err());
    }

    #[test]
    fn fan_out_accumulates() {
        // y = sum(x) + sum(x) -> grad 2
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&Tensor::full(&[3], 1.0).with_grad());
        let s1 = t.sum(x);
        let s2 = t.sum(x);
        let y = t.add(s1, s2).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0; 3]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&Tensor::full(&[3], 1.0).with_grad());
        let c = t.constant(&[3], vec![2.0; 3]).unwrap();
        let y = t.mul(x, c).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap(), &[2.0; 3]);
    }

    #[test]
    fn nll_select_clamps_zero_probability() {
        let mut t = Tape::<f64>::new();
        let p = t.leaf(&Tensor::new(&[4], vec![0.0, 0.5, 0.5, 0.0]).unwrap().with_grad());
        let l = t.nll_select(p, vec![0, 1], 1e-12).unwrap();
        let v = t.value(l)[0];
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, -(1e-12f64).ln() - 0.5f64.ln(), epsilon = 1e-9);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(p).unwrap(), &[0.0, -2.0, 0.0, 0.0]);
    }
}
