use super::kernels::{self, ConvDims, ConvGeom, NormLayout};
use super::{accumulate, Graph, Node, NodeId, Op, Unary, Var};
use crate::error::{Error, Result};
use crate::nn::{SELU_ALPHA, SELU_LAMBDA};
use crate::tensor::{numel, Tensor};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn phi_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}

fn phi_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}


impl Unary {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Relu => x.max(0.0),
            Unary::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Erf => libm::erf(x),
            Unary::Gelu => x * phi_cdf(x),
            Unary::Elu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x.exp_m1()
                }
            }
            Unary::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Erf => 2.0 * INV_SQRT_2PI * SQRT_2 * (-x * x).exp(),
            Unary::Gelu => phi_cdf(x) + x * phi_pdf(x),
            Unary::Elu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a * x.exp()
                }
            }
            Unary::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
        }
    }
}

fn same_graph(a: &Var<'_>, b: &Var<'_>) {
    assert!(std::ptr::eq(a.graph, b.graph), "vars belong to different graphs");
}

fn as4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(Error::shape(op, format!("expected [B, C, H, W], got {shape:?}"))),
    }
}

impl<'g> Var<'g> {
    fn value(&self) -> std::cell::Ref<'_, Tensor> {
        std::cell::Ref::map(self.graph.nodes.borrow(), |n| &n[self.id].value)
    }

    fn emit(&self, shape: Vec<usize>, data: Vec<f64>, rg: bool, op: Op) -> Var<'g> {
        let t = Tensor::new(shape, data).expect("op produced consistent shape");
        self.graph.push(t, rg, op)
    }

    fn binary(
        &self,
        other: Var<'g>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'g>> {
        same_graph(self, &other);
        let (shape, data) = {
            let a = self.value();
            let b = other.value();
            if a.shape() != b.shape() {
                return Err(Error::shape(
                    name,
                    format!("lhs {:?} vs rhs {:?}", a.shape(), b.shape()),
                ));
            }
            let d = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
            (a.shape().to_vec(), d)
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.emit(shape, data, rg, op))
    }

    fn map(&self, f: impl Fn(f64) -> f64, op: Op) -> Var<'g> {
        let (shape, data) = {
            let a = self.value();
            (a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
        };
        self.emit(shape, data, self.requires_grad(), op)
    }

    pub fn add(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "div", |a, b| a / b, Op::Div(self.id, other.id))
    }

    pub fn scale(&self, s: f64) -> Var<'g> {
        self.map(|x| x * s, Op::Scale(self.id, s))
    }

    pub fn add_scalar(&self, s: f64) -> Var<'g> {
        self.map(|x| x + s, Op::Shift(self.id))
    }

    /// Elementwise product with a constant array of the same length.
    pub fn mul_const(&self, c: &[f64]) -> Result<Var<'g>> {
        if c.len() != self.numel() {
            return Err(Error::shape(
                "mul_const",
                format!("{} constants for {:?}", c.len(), self.shape()),
            ));
        }
        let (shape, data) = {
            let a = self.value();
            (a.shape().to_vec(), a.data().iter().zip(c).map(|(x, k)| x * k).collect())
        };
        Ok(self.emit(shape, data, self.requires_grad(), Op::MulConst(self.id, c.to_vec())))
    }

    /// Elementwise sum with a constant array of the same length.
    pub fn add_const(&self, c: &[f64]) -> Result<Var<'g>> {
        if c.len() != self.numel() {
            return Err(Error::shape(
                "add_const",
                format!("{} constants for {:?}", c.len(), self.shape()),
            ));
        }
        let (shape, data) = {
            let a = self.value();
            (a.shape().to_vec(), a.data().iter().zip(c).map(|(x, k)| x + k).collect())
        };
        Ok(self.emit(shape, data, self.requires_grad(), Op::Shift(self.id)))
    }

    pub fn powf(&self, p: f64) -> Var<'g> {
        self.map(|x| x.powf(p), Op::Powf(self.id, p))
    }

    /// Clips into `[lo, hi]`; the gradient is zero where clipping is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'g> {
        self.map(|x| x.clamp(lo, hi), Op::Clamp(self.id, lo, hi))
    }

    pub(crate) fn unary(&self, u: Unary) -> Var<'g> {
        self.map(|x| u.apply(x), Op::Unary(self.id, u))
    }

    pub fn neg(&self) -> Var<'g> {
        self.unary(Unary::Neg)
    }

    pub fn relu(&self) -> Var<'g> {
        self.unary(Unary::Relu)
    }

    pub fn sigmoid(&self) -> Var<'g> {
        self.unary(Unary::Sigmoid)
    }

    pub fn exp(&self) -> Var<'g> {
        self.unary(Unary::Exp)
    }

    pub fn ln(&self) -> Var<'g> {
        self.unary(Unary::Log)
    }

    pub fn erf(&self) -> Var<'g> {
        self.unary(Unary::Erf)
    }

    /// `x·Φ(x)` with the exact error-function CDF.
    pub fn gelu(&self) -> Var<'g> {
        self.unary(Unary::Gelu)
    }

    pub fn elu(&self, alpha: f64) -> Var<'g> {
        self.unary(Unary::Elu(alpha))
    }

    pub fn selu(&self) -> Var<'g> {
        self.unary(Unary::Selu)
    }

    /// Constant 0/1 mask of `x > threshold`. Not differentiable.
    pub fn gt_mask(&self, threshold: f64) -> Var<'g> {
        let (shape, data) = {
            let a = self.value();
            let d = a.data().iter().map(|&x| if x > threshold { 1.0 } else { 0.0 }).collect();
            (a.shape().to_vec(), d)
        };
        self.emit(shape, data, false, Op::Leaf)
    }

    pub fn sum(&self) -> Var<'g> {
        let s = self.value().data().iter().sum();
        self.emit(vec![1], vec![s], self.requires_grad(), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'g> {
        let m = {
            let v = self.value();
            v.data().iter().sum::<f64>() / v.numel() as f64
        };
        self.emit(vec![1], vec![m], self.requires_grad(), Op::Mean(self.id))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g>> {
        let data = {
            let v = self.value();
            if numel(shape) != v.numel() {
                return Err(Error::shape(
                    "reshape",
                    format!("cannot view {:?} as {shape:?}", v.shape()),
                ));
            }
            v.data().to_vec()
        };
        Ok(self.emit(shape.to_vec(), data, self.requires_grad(), Op::Reshape(self.id)))
    }

    /// Collapses everything after the first axis.
    pub fn flatten(&self) -> Result<Var<'g>> {
        let s = self.shape();
        let rest: usize = s[1..].iter().product();
        self.reshape(&[s[0], rest])
    }

    /// Reorders axes: `out.shape[i] = shape[perm[i]]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var<'g>> {
        let (shape, data) = {
            let v = self.value();
            let nd = v.shape().len();
            let mut seen = vec![false; nd];
            if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
                return Err(Error::shape(
                    "permute",
                    format!("{perm:?} is not a permutation of the axes of {:?}", v.shape()),
                ));
            }
            let shape: Vec<usize> = perm.iter().map(|&p| v.shape()[p]).collect();
            (shape, kernels::permute(v.data(), v.shape(), perm, false))
        };
        Ok(self.emit(shape, data, self.requires_grad(), Op::Permute(self.id, perm.to_vec())))
    }

    /// Batched matrix product `[N, M, K] × [N, K, P] → [N, M, P]`.
    pub fn bmm(&self, other: Var<'g>) -> Result<Var<'g>> {
        same_graph(self, &other);
        let (shape, data) = {
            let a = self.value();
            let b = other.value();
            let (n, m, k, p) = match (a.shape(), b.shape()) {
                ([n, m, k], [n2, k2, p]) if n == n2 && k == k2 => (*n, *m, *k, *p),
                (sa, sb) => {
                    return Err(Error::shape("bmm", format!("{sa:?} × {sb:?}")));
                }
            };
            (vec![n, m, p], kernels::bmm(a.data(), b.data(), n, m, k, p))
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.emit(shape, data, rg, Op::Bmm(self.id, other.id)))
    }

    /// Affine map over the last axis: `x[.., in] · wᵀ + b`, `w: [out, in]`.
    pub fn linear(&self, w: Var<'g>, b: Option<Var<'g>>) -> Result<Var<'g>> {
        same_graph(self, &w);
        let (shape, data) = {
            let x = self.value();
            let wv = w.value();
            let xs = x.shape();
            let fin = *xs.last().expect("non-empty shape");
            let (fout, win) = match wv.shape() {
                [o, i] => (*o, *i),
                s => return Err(Error::shape("linear", format!("weight must be 2-D, got {s:?}"))),
            };
            if win != fin {
                return Err(Error::shape(
                    "linear",
                    format!("input {xs:?} vs weight {:?}", wv.shape()),
                ));
            }
            let rows = x.numel() / fin;
            let mut y = kernels::linear(x.data(), wv.data(), rows, fin, fout);
            if let Some(b) = &b {
                let bv = b.value();
                if bv.numel() != fout {
                    return Err(Error::shape("linear", format!("bias {:?} for {fout} outputs", bv.shape())));
                }
                for r in 0..rows {
                    for (yv, bb) in y[r * fout..(r + 1) * fout].iter_mut().zip(bv.data()) {
                        *yv += bb;
                    }
                }
            }
            let mut shape = xs.to_vec();
            *shape.last_mut().unwrap() = fout;
            (shape, y)
        };
        let rg = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        Ok(self.emit(
            shape,
            data,
            rg,
            Op::Linear {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
            },
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Var<'g> {
        let (shape, data) = {
            let v = self.value();
            let n = *v.shape().last().unwrap();
            let mut out = v.data().to_vec();
            for row in out.chunks_mut(n) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - m).exp();
                    s += *x;
                }
                row.iter_mut().for_each(|x| *x /= s);
            }
            (v.shape().to_vec(), out)
        };
        self.emit(shape, data, self.requires_grad(), Op::Softmax(self.id))
    }

    /// 2-D convolution. `x: [B, Cin, H, W]`, `w: [Cout, Cin, kh, kw]`.
    pub fn conv2d(&self, w: Var<'g>, b: Option<Var<'g>>, stride: (usize, usize), padding: (usize, usize)) -> Result<Var<'g>> {
        same_graph(self, &w);
        let (shape, data, geom) = {
            let x = self.value();
            let wv = w.value();
            let [bn, cin, h, wd] = as4("conv2d", x.shape())?;
            let [cout, wcin, kh, kw] = as4("conv2d", wv.shape())?;
            if wcin != cin {
                return Err(Error::shape(
                    "conv2d",
                    format!("input channels {cin} vs kernel {:?}", wv.shape()),
                ));
            }
            let geom = ConvGeom::new((kh, kw), stride, padding);
            let ho = ConvGeom::conv_out(h, kh, stride.0, padding.0);
            let wo = ConvGeom::conv_out(wd, kw, stride.1, padding.1);
            let (Some(ho), Some(wo)) = (ho, wo) else {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernel {:?} does not fit input {:?} with padding {padding:?}", (kh, kw), x.shape()),
                ));
            };
            let dims = ConvDims {
                batch: bn,
                c_small: cout,
                c_big: cin,
                small: (ho, wo),
                big: (h, wd),
            };
            let mut y = vec![0.0; bn * cout * ho * wo];
            kernels::gather(&dims, &geom, wv.data(), x.data(), &mut y);
            if let Some(b) = &b {
                let bv = b.value();
                if bv.numel() != cout {
                    return Err(Error::shape("conv2d", format!("bias {:?} for {cout} channels", bv.shape())));
                }
                kernels::add_channel_bias(&mut y, bv.data(), bn, cout, ho * wo);
            }
            (vec![bn, cout, ho, wo], y, geom)
        };
        let rg = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        Ok(self.emit(
            shape,
            data,
            rg,
            Op::Conv2d {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                geom,
            },
        ))
    }

    /// Transposed 2-D convolution (the adjoint of [`Var::conv2d`]).
    /// `x: [B, Cin, H, W]`, `w: [Cin, Cout, kh, kw]`.
    pub fn conv_transpose2d(
        &self,
        w: Var<'g>,
        b: Option<Var<'g>>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var<'g>> {
        same_graph(self, &w);
        let (shape, data, geom) = {
            let x = self.value();
            let wv = w.value();
            let [bn, cin, h, wd] = as4("conv_transpose2d", x.shape())?;
            let [wcin, cout, kh, kw] = as4("conv_transpose2d", wv.shape())?;
            if wcin != cin {
                return Err(Error::shape(
                    "conv_transpose2d",
                    format!("input channels {cin} vs kernel {:?}", wv.shape()),
                ));
            }
            if stride.0 == 0 || stride.1 == 0 {
                return Err(Error::shape("conv_transpose2d", "zero stride"));
            }
            let geom = ConvGeom::new((kh, kw), stride, padding);
            let ho = ConvGeom::conv_t_out(h, kh, stride.0, padding.0);
            let wo = ConvGeom::conv_t_out(wd, kw, stride.1, padding.1);
            let (Some(ho), Some(wo)) = (ho, wo) else {
                return Err(Error::shape(
                    "conv_transpose2d",
                    format!("padding {padding:?} consumes the whole output of {:?}", x.shape()),
                ));
            };
            let dims = ConvDims {
                batch: bn,
                c_small: cin,
                c_big: cout,
                small: (h, wd),
                big: (ho, wo),
            };
            let mut y = vec![0.0; bn * cout * ho * wo];
            kernels::scatter(&dims, &geom, wv.data(), x.data(), &mut y);
            if let Some(b) = &b {
                let bv = b.value();
                if bv.numel() != cout {
                    return Err(Error::shape("conv_transpose2d", format!("bias {:?} for {cout} channels", bv.shape())));
                }
                kernels::add_channel_bias(&mut y, bv.data(), bn, cout, ho * wo);
            }
            (vec![bn, cout, ho, wo], y, geom)
        };
        let rg = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        Ok(self.emit(
            shape,
            data,
            rg,
            Op::ConvTranspose2d {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                geom,
            },
        ))
    }

    /// Non-overlapping max pooling; the gradient goes to the first maximal
    /// element of each window.
    pub fn max_pool2d(&self, kernel: (usize, usize)) -> Result<Var<'g>> {
        let (shape, data, argmax) = {
            let x = self.value();
            let s = as4("max_pool2d", x.shape())?;
            if kernel.0 == 0 || kernel.1 == 0 || kernel.0 > s[2] || kernel.1 > s[3] {
                return Err(Error::shape(
                    "max_pool2d",
                    format!("kernel {kernel:?} does not fit input {:?}", x.shape()),
                ));
            }
            let (y, arg, os) = kernels::max_pool(x.data(), s, kernel);
            (os.to_vec(), y, arg)
        };
        Ok(self.emit(shape, data, self.requires_grad(), Op::MaxPool { x: self.id, argmax }))
    }

    /// Mean over the spatial axes: `[B, C, H, W] → [B, C]`.
    pub fn global_avg_pool(&self) -> Result<Var<'g>> {
        let (shape, data) = {
            let x = self.value();
            let [b, c, h, w] = as4("global_avg_pool", x.shape())?;
            let plane = h * w;
            let d = x.data().chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
            (vec![b, c], d)
        };
        Ok(self.emit(shape, data, self.requires_grad(), Op::GlobalAvgPool(self.id)))
    }

    /// Scales each `(b, c)` plane of `x: [B, C, H, W]` by `gate: [B, C]`.
    pub fn channel_gate(&self, gate: Var<'g>) -> Result<Var<'g>> {
        same_graph(self, &gate);
        let (shape, data) = {
            let x = self.value();
            let g = gate.value();
            let [b, c, h, w] = as4("channel_gate", x.shape())?;
            if g.shape() != [b, c] {
                return Err(Error::shape(
                    "channel_gate",
                    format!("gate {:?} for input {:?}", g.shape(), x.shape()),
                ));
            }
            let plane = h * w;
            let mut d = x.data().to_vec();
            for (p, gv) in d.chunks_mut(plane).zip(g.data()) {
                p.iter_mut().for_each(|v| *v *= gv);
            }
            (x.shape().to_vec(), d)
        };
        let rg = self.requires_grad() || gate.requires_grad();
        Ok(self.emit(shape, data, rg, Op::ChannelGate { x: self.id, gate: gate.id }))
    }

    /// `y[b, c, ..] = scale[c] · x[b, c, ..] + shift[c]`.
    pub fn channel_affine(&self, scale: Var<'g>, shift: Var<'g>) -> Result<Var<'g>> {
        same_graph(self, &scale);
        same_graph(self, &shift);
        let (shape, data) = {
            let x = self.value();
            let sc = scale.value();
            let sh = shift.value();
            let [b, c, h, w] = as4("channel_affine", x.shape())?;
            if sc.numel() != c || sh.numel() != c {
                return Err(Error::shape(
                    "channel_affine",
                    format!("scale {:?} / shift {:?} for {c} channels", sc.shape(), sh.shape()),
                ));
            }
            let plane = h * w;
            let mut d = x.data().to_vec();
            for (i, p) in d.chunks_mut(plane).enumerate() {
                let ch = i % c;
                let (k, o) = (sc.data()[ch], sh.data()[ch]);
                p.iter_mut().for_each(|v| *v = *v * k + o);
            }
            let _ = b;
            (x.shape().to_vec(), d)
        };
        let rg = self.requires_grad() || scale.requires_grad() || shift.requires_grad();
        Ok(self.emit(
            shape,
            data,
            rg,
            Op::ChannelAffine {
                x: self.id,
                scale: scale.id,
                shift: shift.id,
            },
        ))
    }

    /// Standardizes `x: [B, C, H, W]` with statistics over the given layout.
    /// Returns the normalized tensor with the batch mean and biased variance
    /// of each statistic group.
    pub fn normalize(&self, layout: NormLayout, eps: f64) -> Result<(Var<'g>, Vec<f64>, Vec<f64>)> {
        let (shape, data, inv, mean, var) = {
            let x = self.value();
            let s = as4("normalize", x.shape())?;
            if let NormLayout::PerGroup(g) = layout {
                if g == 0 || s[1] % g != 0 {
                    return Err(Error::shape(
                        "group_norm",
                        format!("{} channels not divisible into {g} groups", s[1]),
                    ));
                }
            }
            let (y, inv, mean, var) = kernels::normalize(x.data(), s, layout, eps);
            (x.shape().to_vec(), y, inv, mean, var)
        };
        let v = self.emit(
            shape,
            data,
            self.requires_grad(),
            Op::Normalize {
                x: self.id,
                layout,
                inv_std: inv,
            },
        );
        Ok((v, mean, var))
    }
}

fn dims4(t: &Tensor) -> [usize; 4] {
    let s = t.shape();
    [s[0], s[1], s[2], s[3]]
}

pub(super) fn backward_node(nodes: &[Node], node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |id: NodeId| &nodes[id].value;
    let needs = |id: NodeId| nodes[id].requires_grad;
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, dy.to_vec());
            }
            if needs(*b) {
                accumulate(grads, *b, dy.to_vec());
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, dy.to_vec());
            }
            if needs(*b) {
                accumulate(grads, *b, dy.iter().map(|g| -g).collect());
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            if needs(*a) {
                accumulate(grads, *a, dy.iter().zip(bv).map(|(g, x)| g * x).collect());
            }
            if needs(*b) {
                accumulate(grads, *b, dy.iter().zip(av).map(|(g, x)| g * x).collect());
            }
        }
        Op::Div(a, b) => {
            let bv = val(*b).data();
            if needs(*a) {
                accumulate(grads, *a, dy.iter().zip(bv).map(|(g, d)| g / d).collect());
            }
            if needs(*b) {
                // d(a/b)/db = -y/b
                let g = dy.iter().zip(y).zip(bv).map(|((g, q), d)| -g * q / d).collect();
                accumulate(grads, *b, g);
            }
        }
        Op::Scale(a, s) => accumulate(grads, *a, dy.iter().map(|g| g * s).collect()),
        Op::Shift(a) | Op::Reshape(a) => accumulate(grads, *a, dy.to_vec()),
        Op::MulConst(a, c) => accumulate(grads, *a, dy.iter().zip(c).map(|(g, k)| g * k).collect()),
        Op::Powf(a, p) => {
            let x = val(*a).data();
            let g = dy
                .iter()
                .zip(x)
                .map(|(g, &xv)| if *p == 0.0 { 0.0 } else { g * p * xv.powf(p - 1.0) })
                .collect();
            accumulate(grads, *a, g);
        }
        Op::Clamp(a, lo, hi) => {
            let x = val(*a).data();
            let g = dy
                .iter()
                .zip(x)
                .map(|(g, &xv)| if xv < *lo || xv > *hi { 0.0 } else { *g })
                .collect();
            accumulate(grads, *a, g);
        }
        Op::Unary(a, u) => {
            let x = val(*a).data();
            let g = dy
                .iter()
                .zip(x)
                .zip(y)
                .map(|((g, &xv), &yv)| g * u.derivative(xv, yv))
                .collect();
            accumulate(grads, *a, g);
        }
        Op::Sum(a) => accumulate(grads, *a, vec![dy[0]; val(*a).numel()]),
        Op::Mean(a) => {
            let n = val(*a).numel();
            accumulate(grads, *a, vec![dy[0] / n as f64; n]);
        }
        Op::Permute(a, perm) => {
            let g = kernels::permute(dy, val(*a).shape(), perm, true);
            accumulate(grads, *a, g);
        }
        Op::Bmm(a, b) => {
            let (at, bt) = (val(*a), val(*b));
            let (n, m, k) = (at.shape()[0], at.shape()[1], at.shape()[2]);
            let p = bt.shape()[2];
            let (da, db) = kernels::bmm_backward(at.data(), bt.data(), dy, n, m, k, p);
            if needs(*a) {
                accumulate(grads, *a, da);
            }
            if needs(*b) {
                accumulate(grads, *b, db);
            }
        }
        Op::Linear { x, w, b } => {
            let (xt, wt) = (val(*x), val(*w));
            let (fout, fin) = (wt.shape()[0], wt.shape()[1]);
            let rows = xt.numel() / fin;
            let (dx, dw) = kernels::linear_backward(xt.data(), wt.data(), dy, rows, fin, fout);
            if needs(*x) {
                accumulate(grads, *x, dx);
            }
            if needs(*w) {
                accumulate(grads, *w, dw);
            }
            if let Some(b) = b {
                if needs(*b) {
                    let mut db = vec![0.0; fout];
                    for row in dy.chunks(fout) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                    accumulate(grads, *b, db);
                }
            }
        }
        Op::Softmax(a) => {
            let n = *node.value.shape().last().unwrap();
            let mut g = vec![0.0; dy.len()];
            for ((gr, yr), dr) in g.chunks_mut(n).zip(y.chunks(n)).zip(dy.chunks(n)) {
                let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                for i in 0..n {
                    gr[i] = yr[i] * (dr[i] - dot);
                }
            }
            accumulate(grads, *a, g);
        }
        Op::Conv2d { x, w, b, geom } => {
            let (xt, wt) = (val(*x), val(*w));
            let [bn, cin, h, wd] = dims4(xt);
            let [_, cout, ho, wo] = dims4(&node.value);
            let dims = ConvDims {
                batch: bn,
                c_small: cout,
                c_big: cin,
                small: (ho, wo),
                big: (h, wd),
            };
            if needs(*x) {
                let mut dx = vec![0.0; xt.numel()];
                kernels::scatter(&dims, geom, wt.data(), dy, &mut dx);
                accumulate(grads, *x, dx);
            }
            if needs(*w) {
                let mut dw = vec![0.0; wt.numel()];
                kernels::weight_grad(&dims, geom, dy, xt.data(), &mut dw);
                accumulate(grads, *w, dw);
            }
            if let Some(b) = b {
                if needs(*b) {
                    accumulate(grads, *b, kernels::channel_sums(dy, bn, cout, ho * wo));
                }
            }
        }
        Op::ConvTranspose2d { x, w, b, geom } => {
            let (xt, wt) = (val(*x), val(*w));
            let [bn, cin, h, wd] = dims4(xt);
            let [_, cout, ho, wo] = dims4(&node.value);
            let dims = ConvDims {
                batch: bn,
                c_small: cin,
                c_big: cout,
                small: (h, wd),
                big: (ho, wo),
            };
            if needs(*x) {
                let mut dx = vec![0.0; xt.numel()];
                kernels::gather(&dims, geom, wt.data(), dy, &mut dx);
                accumulate(grads, *x, dx);
            }
            if needs(*w) {
                let mut dw = vec![0.0; wt.numel()];
                kernels::weight_grad(&dims, geom, xt.data(), dy, &mut dw);
                accumulate(grads, *w, dw);
            }
            if let Some(b) = b {
                if needs(*b) {
                    accumulate(grads, *b, kernels::channel_sums(dy, bn, cout, ho * wo));
                }
            }
        }
        Op::MaxPool { x, argmax } => {
            let mut dx = vec![0.0; val(*x).numel()];
            for (g, &i) in dy.iter().zip(argmax) {
                dx[i] += g;
            }
            accumulate(grads, *x, dx);
        }
        Op::GlobalAvgPool(x) => {
            let [_, _, h, w] = dims4(val(*x));
            let plane = h * w;
            let mut dx = vec![0.0; val(*x).numel()];
            for (p, g) in dx.chunks_mut(plane).zip(dy) {
                let v = g / plane as f64;
                p.iter_mut().for_each(|d| *d = v);
            }
            accumulate(grads, *x, dx);
        }
        Op::ChannelGate { x, gate } => {
            let (xt, gt) = (val(*x), val(*gate));
            let [_, _, h, w] = dims4(xt);
            let plane = h * w;
            if needs(*x) {
                let mut dx = dy.to_vec();
                for (p, gv) in dx.chunks_mut(plane).zip(gt.data()) {
                    p.iter_mut().for_each(|d| *d *= gv);
                }
                accumulate(grads, *x, dx);
            }
            if needs(*gate) {
                let dg = dy
                    .chunks(plane)
                    .zip(xt.data().chunks(plane))
                    .map(|(d, xv)| d.iter().zip(xv).map(|(a, b)| a * b).sum())
                    .collect();
                accumulate(grads, *gate, dg);
            }
        }
        Op::ChannelAffine { x, scale, shift } => {
            let xt = val(*x);
            let [_, c, h, w] = dims4(xt);
            let plane = h * w;
            let sc = val(*scale).data();
            if needs(*x) {
                let mut dx = dy.to_vec();
                for (i, p) in dx.chunks_mut(plane).enumerate() {
                    let k = sc[i % c];
                    p.iter_mut().for_each(|d| *d *= k);
                }
                accumulate(grads, *x, dx);
            }
            if needs(*scale) {
                let mut ds = vec![0.0; c];
                for (i, (d, xv)) in dy.chunks(plane).zip(xt.data().chunks(plane)).enumerate() {
                    ds[i % c] += d.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
                }
                accumulate(grads, *scale, ds);
            }
            if needs(*shift) {
                let mut ds = vec![0.0; c];
                for (i, d) in dy.chunks(plane).enumerate() {
                    ds[i % c] += d.iter().sum::<f64>();
                }
                accumulate(grads, *shift, ds);
            }
        }
        Op::Normalize { x, layout, inv_std } => {
            let s = dims4(val(*x));
            let dx = kernels::normalize_backward(y, inv_std, dy, s, *layout);
            accumulate(grads, *x, dx);
        }
    }
}

impl Graph {
    /// Shorthand for a constant scalar.
    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.push(Tensor::scalar(v), false, Op::Leaf)
    }
}
