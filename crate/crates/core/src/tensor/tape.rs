use std::sync::Arc;

use num_complex::Complex64;

use super::Tensor;
use crate::error::{Error, Result};
use crate::image::RealImage;
use crate::kspace::{fft2c_inplace, Direction};
use crate::metrics::{ssim_and_grad, SsimConfig};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    ScaleBy,
    AddScalar,
    MatMul,
    Conv2d,
    Relu,
    AvgPool2,
    Upsample2,
    ConcatChannels,
    ComplexMul,
    Fft2c,
    ComplexAbs,
    ReduceMean,
    SsimLoss,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    AddScalar(Var),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Conv2d { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    AvgPool2(Var),
    Upsample2(Var),
    Concat(Var, Var),
    ComplexMul(Var, Var),
    Fft2c { x: Var, direction: Direction },
    ComplexAbs(Var),
    Mean(Var),
    /// d(loss)/dx saved from the forward pass.
    SsimLoss { x: Var, grad: Vec<f64> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::ScaleBy(..) => OpKind::ScaleBy,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Relu(..) => OpKind::Relu,
            Op::AvgPool2(..) => OpKind::AvgPool2,
            Op::Upsample2(..) => OpKind::Upsample2,
            Op::Concat(..) => OpKind::ConcatChannels,
            Op::ComplexMul(..) => OpKind::ComplexMul,
            Op::Fft2c { .. } => OpKind::Fft2c,
            Op::ComplexAbs(..) => OpKind::ComplexAbs,
            Op::Mean(..) => OpKind::ReduceMean,
            Op::SsimLoss { .. } => OpKind::SsimLoss,
        }
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Single-owner record of a forward computation.
///
/// Nodes are appended in evaluation order, so inputs always precede their
/// consumers and [`Tape::backward`] is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn chw(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::shape(op, format!("expected [C,H,W], got {s:?}"))),
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Shares an existing tensor as a constant without copying it.
    pub fn constant_shared(&mut self, t: Arc<Tensor>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Multiplication by a fixed scalar.
    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |x| x * s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Multiplication by a one-element tensor that may itself be trainable.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::shape("scale_by", format!("scale must have one element, got {:?}", self.value(s).shape())));
        }
        let sv = self.value(s).item();
        let out = self.map(a, |x| x * sv);
        let rg = self.rg(&[a, s]);
        Ok(self.push(out, Op::ScaleBy(a, s), rg))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |x| x + s);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, k2, n) = match (self.value(a).shape(), self.value(b).shape()) {
            ([m, k], [k2, n]) => (*m, *k, *k2, *n),
            (sa, sb) => return Err(Error::shape("matmul", format!("expected 2-D operands, got {sa:?} and {sb:?}"))),
        };
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner extents {k} and {k2} differ")));
        }
        let (da, db) = (&self.value(a).data, &self.value(b).data);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = da[i * k + p];
                let row = &db[p * n..(p + 1) * n];
                for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *o += av * bv;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul { a, b, m, k, n }, rg))
    }

    /// Stride-1 convolution with zero "same" padding.
    ///
    /// `x: [Ci, H, W]`, `w: [Co, Ci, k, k]` with odd `k`, `b: [Co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (ci, h, wd) = chw("conv2d", self.value(x))?;
        let (co, ci2, k) = match self.value(w).shape() {
            [co, ci2, k1, k2] if k1 == k2 && k1 % 2 == 1 => (*co, *ci2, *k1),
            s => return Err(Error::shape("conv2d", format!("kernel must be [Co,Ci,k,k] with odd k, got {s:?}"))),
        };
        if ci != ci2 {
            return Err(Error::shape("conv2d", format!("input has {ci} channels, kernel expects {ci2}")));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [co] {
                return Err(Error::shape("conv2d", format!("bias must be [{co}], got {:?}", self.value(b).shape())));
            }
        }
        let mut out = vec![0.0; co * h * wd];
        if let Some(b) = b {
            let bd = &self.value(b).data;
            for (o, plane) in out.chunks_exact_mut(h * wd).enumerate() {
                plane.fill(bd[o]);
            }
        }
        conv_forward(&self.value(x).data, &self.value(w).data, &mut out, ci, co, h, wd, k);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(Tensor { shape: vec![co, h, wd], data: out }, Op::Conv2d { x, w, b }, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    /// 2x2 average pooling; extents must be even.
    pub fn avgpool2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = chw("avgpool2", self.value(a))?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("avgpool2", format!("extents {h}x{w} must be even")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = &self.value(a).data;
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for r in 0..ho {
                for col in 0..wo {
                    let base = ch * h * w + 2 * r * w + 2 * col;
                    out[ch * ho * wo + r * wo + col] = 0.25 * (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]);
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape: vec![c, ho, wo], data: out }, Op::AvgPool2(a), rg))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = chw("upsample2", self.value(a))?;
        let (ho, wo) = (2 * h, 2 * w);
        let src = &self.value(a).data;
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for r in 0..ho {
                for col in 0..wo {
                    out[ch * ho * wo + r * wo + col] = src[ch * h * w + (r / 2) * w + col / 2];
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape: vec![c, ho, wo], data: out }, Op::Upsample2(a), rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = chw("concat_channels", self.value(a))?;
        let (cb, hb, wb) = chw("concat_channels", self.value(b))?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::shape("concat_channels", format!("spatial extents {ha}x{wa} vs {hb}x{wb}")));
        }
        let mut data = self.value(a).data.clone();
        data.extend_from_slice(&self.value(b).data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape: vec![ca + cb, ha, wa], data }, Op::Concat(a, b), rg))
    }

    /// Pointwise complex product of two `[2, H, W]` tensors.
    pub fn complex_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("complex_mul", a, b)?;
        let (c, h, w) = chw("complex_mul", self.value(a))?;
        if c != 2 {
            return Err(Error::shape("complex_mul", format!("expected 2 channels, got {c}")));
        }
        let n = h * w;
        let (da, db) = (&self.value(a).data, &self.value(b).data);
        let mut out = vec![0.0; 2 * n];
        for i in 0..n {
            let (ar, ai, br, bi) = (da[i], da[n + i], db[i], db[n + i]);
            out[i] = ar * br - ai * bi;
            out[n + i] = ar * bi + ai * br;
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape: vec![2, h, w], data: out }, Op::ComplexMul(a, b), rg))
    }

    /// Centered unitary 2D FFT of a `[2, H, W]` complex tensor.
    pub fn fft2c(&mut self, a: Var, direction: Direction) -> Result<Var> {
        let (c, h, w) = chw("fft2c", self.value(a))?;
        if c != 2 {
            return Err(Error::shape("fft2c", format!("expected 2 channels, got {c}")));
        }
        let out = fft_2ch(&self.value(a).data, h, w, direction);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape: vec![2, h, w], data: out }, Op::Fft2c { x: a, direction }, rg))
    }

    /// Magnitude of a `[2, H, W]` complex tensor, giving `[1, H, W]`.
    pub fn complex_abs(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = chw("complex_abs", self.value(a))?;
        if c != 2 {
            return Err(Error::shape("complex_abs", format!("expected 2 channels, got {c}")));
        }
        let n = h * w;
        let d = &self.value(a).data;
        let out = (0..n).map(|i| d[i].hypot(d[n + i])).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape: vec![1, h, w], data: out }, Op::ComplexAbs(a), rg))
    }

    /// Mean over all elements, giving a one-element tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data.iter().sum::<f64>() / t.numel().max(1) as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// `1 - SSIM(x, target)` for `x: [1, H, W]` or `[H, W]`; the target is
    /// a constant.
    pub fn ssim_loss(&mut self, x: Var, target: &RealImage, cfg: &SsimConfig, data_range: f64) -> Result<Var> {
        let xi = self
            .value(x)
            .to_real_image()
            .map_err(|_| Error::shape("ssim_loss", format!("expected [1,H,W], got {:?}", self.value(x).shape())))?;
        if !xi.same_extents(target) {
            return Err(Error::shape(
                "ssim_loss",
                format!("input {}x{} vs target {}x{}", xi.height, xi.width, target.height, target.width),
            ));
        }
        let (s, grad) = ssim_and_grad(&xi, target, cfg, data_range)?;
        let rg = self.rg(&[x]);
        let grad = if rg { grad.into_iter().map(|g| -g).collect() } else { Vec::new() };
        Ok(self.push(Tensor::scalar(1.0 - s), Op::SsimLoss { x, grad }, rg))
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(&mut self, x: Var, target: &Tensor) -> Result<Var> {
        let t = self.constant(target.clone());
        let d = self.sub(x, t)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got shape {:?}", lt.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, n)| g.map(|data| Tensor { shape: n.value.shape.clone(), data }))
                .collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(slot);
    }

    fn backprop(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(grads, v, |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                self.accumulate(grads, *b, |s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (da, db) = (&self.value(*a).data, &self.value(*b).data);
                self.accumulate(grads, *a, |s| {
                    for ((s, g), y) in s.iter_mut().zip(g).zip(db) {
                        *s += g * y;
                    }
                });
                self.accumulate(grads, *b, |s| {
                    for ((s, g), x) in s.iter_mut().zip(g).zip(da) {
                        *s += g * x;
                    }
                });
            }
            Op::Scale(a, k) => {
                self.accumulate(grads, *a, |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += k * g));
            }
            Op::ScaleBy(a, k) => {
                let kv = self.value(*k).item();
                let da = &self.value(*a).data;
                self.accumulate(grads, *a, |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += kv * g));
                self.accumulate(grads, *k, |s| s[0] += g.iter().zip(da).map(|(g, x)| g * x).sum::<f64>());
            }
            Op::AddScalar(a) => {
                self.accumulate(grads, *a, |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            }
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (da, db) = (&self.value(*a).data, &self.value(*b).data);
                // dA = G B^T, dB = A^T G
                self.accumulate(grads, *a, |s| {
                    for i in 0..m {
                        for p in 0..k {
                            s[i * k + p] += (0..n).map(|j| g[i * n + j] * db[p * n + j]).sum::<f64>();
                        }
                    }
                });
                self.accumulate(grads, *b, |s| {
                    for i in 0..m {
                        for p in 0..k {
                            let av = da[i * k + p];
                            for j in 0..n {
                                s[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b } => {
                let (ci, h, wd) = chw("conv2d", self.value(*x)).expect("checked in forward");
                let ws = self.value(*w).shape();
                let (co, k) = (ws[0], ws[2]);
                let (dx, dw) = (&self.value(*x).data, &self.value(*w).data);
                self.accumulate(grads, *x, |s| conv_backward_input(g, dw, s, ci, co, h, wd, k));
                self.accumulate(grads, *w, |s| conv_backward_weight(g, dx, s, ci, co, h, wd, k));
                if let Some(b) = b {
                    self.accumulate(grads, *b, |s| {
                        for (o, plane) in g.chunks_exact(h * wd).enumerate() {
                            s[o] += plane.iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::Relu(a) => {
                let da = &self.value(*a).data;
                self.accumulate(grads, *a, |s| {
                    for ((s, g), x) in s.iter_mut().zip(g).zip(da) {
                        if *x > 0.0 {
                            *s += g;
                        }
                    }
                });
            }
            Op::AvgPool2(a) => {
                let (c, h, w) = chw("avgpool2", self.value(*a)).expect("checked in forward");
                let (ho, wo) = (h / 2, w / 2);
                self.accumulate(grads, *a, |s| {
                    for ch in 0..c {
                        for r in 0..h {
                            for col in 0..w {
                                s[ch * h * w + r * w + col] += 0.25 * g[ch * ho * wo + (r / 2) * wo + col / 2];
                            }
                        }
                    }
                });
            }
            Op::Upsample2(a) => {
                let (c, h, w) = chw("upsample2", self.value(*a)).expect("checked in forward");
                let (ho, wo) = (2 * h, 2 * w);
                self.accumulate(grads, *a, |s| {
                    for ch in 0..c {
                        for r in 0..ho {
                            for col in 0..wo {
                                s[ch * h * w + (r / 2) * w + col / 2] += g[ch * ho * wo + r * wo + col];
                            }
                        }
                    }
                });
            }
            Op::Concat(a, b) => {
                let na = self.value(*a).numel();
                self.accumulate(grads, *a, |s| s.iter_mut().zip(&g[..na]).for_each(|(s, g)| *s += g));
                self.accumulate(grads, *b, |s| s.iter_mut().zip(&g[na..]).for_each(|(s, g)| *s += g));
            }
            Op::ComplexMul(a, b) => {
                // z = a b  =>  dL/da = g conj(b), dL/db = g conj(a)
                let n = self.value(*a).numel() / 2;
                let (da, db) = (&self.value(*a).data, &self.value(*b).data);
                let back = |other: &[f64], s: &mut [f64]| {
                    for i in 0..n {
                        let (gr, gi, or, oi) = (g[i], g[n + i], other[i], other[n + i]);
                        s[i] += gr * or + gi * oi;
                        s[n + i] += gi * or - gr * oi;
                    }
                };
                self.accumulate(grads, *a, |s| back(db, s));
                self.accumulate(grads, *b, |s| back(da, s));
            }
            Op::Fft2c { x, direction } => {
                let (_, h, w) = chw("fft2c", self.value(*x)).expect("checked in forward");
                // unitary: the adjoint is the opposite direction
                let adjoint = match direction {
                    Direction::Forward => Direction::Inverse,
                    Direction::Inverse => Direction::Forward,
                };
                let back = fft_2ch(g, h, w, adjoint);
                self.accumulate(grads, *x, |s| s.iter_mut().zip(&back).for_each(|(s, g)| *s += g));
            }
            Op::ComplexAbs(a) => {
                let d = &self.value(*a).data;
                let out = &node.value.data;
                let n = out.len();
                self.accumulate(grads, *a, |s| {
                    for i in 0..n {
                        if out[i] > 0.0 {
                            s[i] += g[i] * d[i] / out[i];
                            s[n + i] += g[i] * d[n + i] / out[i];
                        }
                    }
                });
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel().max(1) as f64;
                self.accumulate(grads, *a, |s| s.iter_mut().for_each(|s| *s += g[0] / n));
            }
            Op::SsimLoss { x, grad } => {
                self.accumulate(grads, *x, |s| s.iter_mut().zip(grad).for_each(|(s, d)| *s += g[0] * d));
            }
        }
    }
}

fn fft_2ch(data: &[f64], h: usize, w: usize, direction: Direction) -> Vec<f64> {
    let n = h * w;
    let mut buf: Vec<Complex64> = (0..n).map(|i| Complex64::new(data[i], data[n + i])).collect();
    fft2c_inplace(&mut buf, h, w, direction);
    let mut out = vec![0.0; 2 * n];
    for (i, v) in buf.iter().enumerate() {
        out[i] = v.re;
        out[n + i] = v.im;
    }
    out
}

/// Valid output range `[lo, hi)` for kernel offset `d` (relative to the
/// center) along an axis of length `len`.
#[inline]
fn span(d: isize, len: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d.max(0)).max(0) as usize;
    (lo.min(len), hi.max(lo.min(len)))
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(x: &[f64], w: &[f64], out: &mut [f64], ci: usize, co: usize, h: usize, wd: usize, k: usize) {
    let p = (k / 2) as isize;
    let hw = h * wd;
    for o in 0..co {
        let plane = &mut out[o * hw..(o + 1) * hw];
        for i in 0..ci {
            let src = &x[i * hw..(i + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (r0, r1) = span(dy, h);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (c0, c1) = span(dx, wd);
                    let wv = w[((o * ci + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for r in r0..r1 {
                        let sr = (r as isize + dy) as usize;
                        let srow = &src[sr * wd..(sr + 1) * wd];
                        let orow = &mut plane[r * wd..(r + 1) * wd];
                        let sc0 = (c0 as isize + dx) as usize;
                        for (ov, sv) in orow[c0..c1].iter_mut().zip(&srow[sc0..sc0 + (c1 - c0)]) {
                            *ov += wv * sv;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward_input(g: &[f64], w: &[f64], gx: &mut [f64], ci: usize, co: usize, h: usize, wd: usize, k: usize) {
    let p = (k / 2) as isize;
    let hw = h * wd;
    for o in 0..co {
        let gplane = &g[o * hw..(o + 1) * hw];
        for i in 0..ci {
            let dst = &mut gx[i * hw..(i + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (r0, r1) = span(dy, h);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (c0, c1) = span(dx, wd);
                    let wv = w[((o * ci + i) * k + ky) * k + kx];
                    for r in r0..r1 {
                        let sr = (r as isize + dy) as usize;
                        let sc0 = (c0 as isize + dx) as usize;
                        let grow = &gplane[r * wd + c0..r * wd + c1];
                        let drow = &mut dst[sr * wd + sc0..sr * wd + sc0 + (c1 - c0)];
                        for (d, gv) in drow.iter_mut().zip(grow) {
                            *d += wv * gv;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward_weight(g: &[f64], x: &[f64], gw: &mut [f64], ci: usize, co: usize, h: usize, wd: usize, k: usize) {
    let p = (k / 2) as isize;
    let hw = h * wd;
    for o in 0..co {
        let gplane = &g[o * hw..(o + 1) * hw];
        for i in 0..ci {
            let src = &x[i * hw..(i + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (r0, r1) = span(dy, h);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (c0, c1) = span(dx, wd);
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        let sr = (r as isize + dy) as usize;
                        let sc0 = (c0 as isize + dx) as usize;
                        let grow = &gplane[r * wd + c0..r * wd + c1];
                        let srow = &src[sr * wd + sc0..sr * wd + sc0 + (c1 - c0)];
                        acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    gw[((o * ci + i) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
}

/// Gradients from one backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a node; `None` when no path reaches it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zero-filled when `v` is disconnected
    /// from the loss.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}
