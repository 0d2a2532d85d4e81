//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its forward value. Inputs always
//! precede their consumers, so the node order is a topological order and the
//! backward pass is a single reverse sweep that visits each node once.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::gemm::gemm;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv2d { input: Var, kernel: Var, mask: Option<Tensor>, padding: usize },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    Upsample2(Var),
    Concat(Var, Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy { logits: Var, targets: Vec<u32>, classes: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).map(|x| x * factor);
        self.push(v, Op::Scale(a, factor), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(shape_err("matmul", format!("{sa:?} x {sb:?}"))),
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds a per-channel bias `[C]` to a `[N, C, ...]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(bias).shape());
        if sx.len() < 2 || sb != [sx[1]] {
            return Err(shape_err("add_bias", format!("input {sx:?}, bias {sb:?}")));
        }
        let (c, inner) = (sx[1], sx[2..].iter().product::<usize>());
        let mut v = self.value(x).clone();
        let b = self.value(bias).data();
        for (i, chunk) in v.data_mut().chunks_mut(inner).enumerate() {
            let bc = b[i % c];
            chunk.iter_mut().for_each(|e| *e += bc);
        }
        Ok(self.push(v, Op::AddBias(x, bias), &[x, bias]))
    }

    /// Stride-1 cross-correlation of `[N, C, H, W]` input with a `[K, C, kh, kw]`
    /// kernel, optionally multiplied elementwise by a constant mask first.
    pub fn conv2d(&mut self, input: Var, kernel: Var, mask: Option<&Tensor>, padding: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("conv2d")?;
        let [k, kc, kh, kw] = self.value(kernel).dims4("conv2d")?;
        if kc != c {
            return Err(shape_err("conv2d", format!("input has {c} channels, kernel expects {kc}")));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(shape_err("conv2d", format!("kernel spatial dims must be odd, got {kh}x{kw}")));
        }
        if let Some(m) = mask {
            if m.shape() != self.value(kernel).shape() {
                return Err(shape_err(
                    "conv2d",
                    format!("mask {:?} vs kernel {:?}", m.shape(), self.value(kernel).shape()),
                ));
            }
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(shape_err("conv2d", format!("kernel {kh}x{kw} larger than padded input {h}x{w}")));
        }
        let geo = ConvGeometry { c, h, w, k, kh, kw, pad: padding };
        let weights = effective_kernel(self.value(kernel), mask);
        let out = conv_forward(&geo, n, self.value(input).data(), &weights);
        let v = Tensor::new(vec![n, k, geo.ho(), geo.wo()], out)?;
        let op = Op::Conv2d { input, kernel, mask: mask.cloned(), padding };
        Ok(self.push(v, op, &[input, kernel]))
    }

    /// 2x2 max pooling with stride 2; ties resolve to the first position in
    /// raster order.
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("max_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err("max_pool2", format!("spatial size {h}x{w} not even")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(input).data();
        let mut out = vec![0.0; n * c * ho * wo];
        let mut argmax = vec![0usize; out.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    let o = plane * ho * wo + oy * wo + ox;
                    out[o] = src[best];
                    argmax[o] = best;
                }
            }
        }
        let v = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(v, Op::MaxPool2 { input, argmax }, &[input]))
    }

    /// Nearest-neighbour 2x spatial upsampling.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("upsample2")?;
        let src = self.value(input).data();
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![0.0; n * c * ho * wo];
        for plane in 0..n * c {
            for y in 0..ho {
                let row = &src[plane * h * w + (y / 2) * w..][..w];
                let dst = &mut out[plane * ho * wo + y * wo..][..wo];
                for (x, d) in dst.iter_mut().enumerate() {
                    *d = row[x / 2];
                }
            }
        }
        let v = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(v, Op::Upsample2(input), &[input]))
    }

    /// Concatenation along the channel axis of two NCHW tensors.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = self.value(a).dims4("concat")?;
        let [nb, cb, hb, wb] = self.value(b).dims4("concat")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(shape_err("concat", format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape())));
        }
        let (pa, pb) = (ca * h * w, cb * h * w);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (pa + pb));
        for i in 0..n {
            out.extend_from_slice(&da[i * pa..(i + 1) * pa]);
            out.extend_from_slice(&db[i * pb..(i + 1) * pb]);
        }
        let v = Tensor::new(vec![n, ca + cb, h, w], out)?;
        Ok(self.push(v, Op::Concat(a, b), &[a, b]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Mean categorical cross-entropy in nats.
    ///
    /// `logits` is `[N, G*classes, ...]`: channel group `g` holds the
    /// `classes` logits for the `g`-th target channel. `targets` lists class
    /// indices in `(n, g, spatial)` row-major order.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], classes: usize) -> Result<Var> {
        let shape = self.value(logits).shape().to_vec();
        if shape.len() < 2 || classes == 0 || !shape[1].is_multiple_of(classes) {
            return Err(shape_err("cross_entropy", format!("logits {shape:?} with {classes} classes")));
        }
        let (n, groups, inner) = (shape[0], shape[1] / classes, shape[2..].iter().product::<usize>());
        let positions = n * groups * inner;
        if targets.len() != positions {
            return Err(shape_err("cross_entropy", format!("{} targets for {positions} positions", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t as usize >= classes) {
            return Err(Error::Invalid(format!("target class {t} out of range 0..{classes}")));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; src.len()];
        let mut total = 0.0;
        for (pos, &t) in targets.iter().enumerate() {
            let (ng, s) = (pos / inner, pos % inner);
            let base = ng * classes * inner + s;
            let mx = (0..classes).map(|q| src[base + q * inner]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for q in 0..classes {
                let e = libm::exp(src[base + q * inner] - mx);
                probs[base + q * inner] = e;
                z += e;
            }
            for q in 0..classes {
                probs[base + q * inner] /= z;
            }
            total += libm::log(z) + mx - src[base + t as usize * inner];
        }
        let v = Tensor::scalar(total / positions as f64);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), classes, probs };
        Ok(self.push(v, op, &[logits]))
    }

    /// Back-propagates from a scalar `loss` through every node that requires
    /// a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(Error::NonScalarLoss { numel });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.filter(|_| node.requires_grad)
                    .map(|g| Tensor::new(node.value.shape().to_vec(), g).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, g));
                self.accumulate(grads, *b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, g));
                self.accumulate(grads, *b, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| {
                    d.iter_mut().zip(g).zip(vb).for_each(|((d, g), y)| *d += g * y)
                });
                self.accumulate(grads, *b, |d| {
                    d.iter_mut().zip(g).zip(va).for_each(|((d, g), x)| *d += g * x)
                });
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g)),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |d| {
                    d.iter_mut().zip(g).zip(x).for_each(|((d, g), &x)| {
                        if x > 0.0 {
                            *d += g
                        }
                    })
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, |d| {
                    d.iter_mut().zip(g).zip(y).for_each(|((d, g), y)| *d += g * (1.0 - y * y))
                });
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| gemm(m, n, k, g, false, vb, true, 1.0, d));
                self.accumulate(grads, *b, |d| gemm(k, m, n, va, true, g, false, 1.0, d));
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, |d| add_into(d, g));
                let shape = self.value(*x).shape();
                let (c, inner) = (shape[1], shape[2..].iter().product::<usize>());
                self.accumulate(grads, *b, |d| {
                    for (j, chunk) in g.chunks(inner).enumerate() {
                        d[j % c] += chunk.iter().sum::<f64>();
                    }
                });
            }
            Op::Conv2d { input, kernel, mask, padding } => {
                let [n, c, h, w] = self.value(*input).dims4("conv2d").expect("checked");
                let [k, _, kh, kw] = self.value(*kernel).dims4("conv2d").expect("checked");
                let geo = ConvGeometry { c, h, w, k, kh, kw, pad: *padding };
                let weights = effective_kernel(self.value(*kernel), mask.as_ref());
                let x = self.value(*input).data();
                if self.nodes[kernel.0].requires_grad {
                    let mut dk = conv_backward_kernel(&geo, n, x, g);
                    if let Some(m) = mask {
                        dk.iter_mut().zip(m.data()).for_each(|(d, m)| *d *= m);
                    }
                    self.accumulate(grads, *kernel, |d| add_into(d, &dk));
                }
                self.accumulate(grads, *input, |d| conv_backward_input(&geo, n, &weights, g, d));
            }
            Op::MaxPool2 { input, argmax } => {
                self.accumulate(grads, *input, |d| {
                    argmax.iter().zip(g).for_each(|(&j, g)| d[j] += g);
                });
            }
            Op::Upsample2(a) => {
                let [n, c, h, w] = self.value(*a).dims4("upsample2").expect("checked");
                let wo = 2 * w;
                self.accumulate(grads, *a, |d| {
                    for plane in 0..n * c {
                        for y in 0..2 * h {
                            let src = &g[plane * 4 * h * w + y * wo..][..wo];
                            let dst = &mut d[plane * h * w + (y / 2) * w..][..w];
                            for (x, v) in src.iter().enumerate() {
                                dst[x / 2] += v;
                            }
                        }
                    }
                });
            }
            Op::Concat(a, b) => {
                let [n, ca, h, w] = self.value(*a).dims4("concat").expect("checked");
                let cb = self.value(*b).shape()[1];
                let (pa, pb) = (ca * h * w, cb * h * w);
                self.accumulate(grads, *a, |d| {
                    for i in 0..n {
                        add_into(&mut d[i * pa..(i + 1) * pa], &g[i * (pa + pb)..i * (pa + pb) + pa]);
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for i in 0..n {
                        add_into(&mut d[i * pb..(i + 1) * pb], &g[i * (pa + pb) + pa..(i + 1) * (pa + pb)]);
                    }
                });
            }
            Op::Sum(a) => self.accumulate(grads, *a, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let scale = g[0] / self.value(*a).numel() as f64;
                self.accumulate(grads, *a, |d| d.iter_mut().for_each(|d| *d += scale));
            }
            Op::CrossEntropy { logits, targets, classes, probs } => {
                let shape = self.value(*logits).shape();
                let inner = shape[2..].iter().product::<usize>();
                let scale = g[0] / targets.len() as f64;
                self.accumulate(grads, *logits, |d| {
                    d.iter_mut().zip(probs).for_each(|(d, p)| *d += scale * p);
                    for (pos, &t) in targets.iter().enumerate() {
                        let (ng, s) = (pos / inner, pos % inner);
                        d[ng * classes * inner + t as usize * inner + s] -= scale;
                    }
                });
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        let slot = grads[var.0].get_or_insert_with(|| vec![0.0; self.nodes[var.0].value.numel()]);
        f(slot);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn effective_kernel(kernel: &Tensor, mask: Option<&Tensor>) -> Vec<f64> {
    match mask {
        Some(m) => kernel.data().iter().zip(m.data()).map(|(k, m)| k * m).collect(),
        None => kernel.data().to_vec(),
    }
}

struct ConvGeometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    kh: usize,
    kw: usize,
    pad: usize,
}

impl ConvGeometry {
    fn ho(&self) -> usize {
        self.h + 2 * self.pad + 1 - self.kh
    }

    fn wo(&self) -> usize {
        self.w + 2 * self.pad + 1 - self.kw
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad == 0
    }

    /// Output columns `ox` whose input column `ox + kx - pad` is in bounds.
    fn valid_cols(&self, kx: usize) -> core::ops::Range<usize> {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.wo());
        lo..hi.max(lo)
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (ho, wo) = (self.ho(), self.wo());
        for c in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                    let valid = self.valid_cols(kx);
                    for oy in 0..ho {
                        let line = &mut dst[oy * wo..(oy + 1) * wo];
                        let iy = oy + ky;
                        if iy < self.pad || iy - self.pad >= self.h {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &x[(c * self.h + iy - self.pad) * self.w..][..self.w];
                        line[..valid.start].fill(0.0);
                        line[valid.end..].fill(0.0);
                        for ox in valid.clone() {
                            line[ox] = src[ox + kx - self.pad];
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let (ho, wo) = (self.ho(), self.wo());
        for c in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src_rows = &cols[row * ho * wo..(row + 1) * ho * wo];
                    let valid = self.valid_cols(kx);
                    for oy in 0..ho {
                        let iy = oy + ky;
                        if iy < self.pad || iy - self.pad >= self.h {
                            continue;
                        }
                        let dst = &mut dx[(c * self.h + iy - self.pad) * self.w..][..self.w];
                        let line = &src_rows[oy * wo..(oy + 1) * wo];
                        for ox in valid.clone() {
                            dst[ox + kx - self.pad] += line[ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(geo: &ConvGeometry, n: usize, x: &[f64], weights: &[f64]) -> Vec<f64> {
    let (plane_in, plane_out, kk) = (geo.c * geo.h * geo.w, geo.ho() * geo.wo(), geo.patch_len());
    let mut out = vec![0.0; n * geo.k * plane_out];
    let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![0.0; kk * plane_out] };
    for i in 0..n {
        let xi = &x[i * plane_in..(i + 1) * plane_in];
        let oi = &mut out[i * geo.k * plane_out..(i + 1) * geo.k * plane_out];
        if geo.is_pointwise() {
            gemm(geo.k, kk, plane_out, weights, false, xi, false, 0.0, oi);
        } else {
            geo.im2col(xi, &mut cols);
            gemm(geo.k, kk, plane_out, weights, false, &cols, false, 0.0, oi);
        }
    }
    out
}

fn conv_backward_kernel(geo: &ConvGeometry, n: usize, x: &[f64], g: &[f64]) -> Vec<f64> {
    let (plane_in, plane_out, kk) = (geo.c * geo.h * geo.w, geo.ho() * geo.wo(), geo.patch_len());
    let mut dk = vec![0.0; geo.k * kk];
    let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![0.0; kk * plane_out] };
    for i in 0..n {
        let xi = &x[i * plane_in..(i + 1) * plane_in];
        let gi = &g[i * geo.k * plane_out..(i + 1) * geo.k * plane_out];
        if geo.is_pointwise() {
            gemm(geo.k, plane_out, kk, gi, false, xi, true, 1.0, &mut dk);
        } else {
            geo.im2col(xi, &mut cols);
            gemm(geo.k, plane_out, kk, gi, false, &cols, true, 1.0, &mut dk);
        }
    }
    dk
}

fn conv_backward_input(geo: &ConvGeometry, n: usize, weights: &[f64], g: &[f64], dx: &mut [f64]) {
    let (plane_in, plane_out, kk) = (geo.c * geo.h * geo.w, geo.ho() * geo.wo(), geo.patch_len());
    let mut dcols = if geo.is_pointwise() { Vec::new() } else { vec![0.0; kk * plane_out] };
    for i in 0..n {
        let gi = &g[i * geo.k * plane_out..(i + 1) * geo.k * plane_out];
        let di = &mut dx[i * plane_in..(i + 1) * plane_in];
        if geo.is_pointwise() {
            gemm(kk, geo.k, plane_out, weights, true, gi, false, 1.0, di);
        } else {
            gemm(kk, geo.k, plane_out, weights, true, gi, false, 0.0, &mut dcols);
            geo.col2im(&dcols, di);
        }
    }
}
