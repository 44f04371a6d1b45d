//! Reverse-mode tape over [`FieldTensor`] values.
//!
//! Every op appends one node; [`Graph::backward`] walks the tape once from a
//! scalar root. Leading axes of `affine` and `conv2d` inputs are batch axes.

use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::FieldTensor;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Sparse linear map `out[row] += value * input[col]`.
#[derive(Debug, Clone)]
pub struct SparseMap {
    pub out_len: usize,
    pub in_len: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Affine { x: Var, w: Var, b: Var },
    Conv2d { x: Var, k: Var, geom: ConvGeom, cols: Vec<f64> },
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum(Var),
    Mean(Var),
    MaxOverAxis { x: Var, argmax: Vec<usize> },
    Concat { parts: Vec<Var>, outer: usize, widths: Vec<usize>, inner: usize },
    Slice { x: Var, outer: usize, axis_len: usize, start: usize, inner: usize },
    Reshape(Var),
    AddBias { x: Var, b: Var, inner: usize },
    Gather { src: Var, index: Arc<Vec<usize>> },
    Sparse { src: Var, map: Arc<SparseMap> },
    SpatialProject { x: Var, maps: Arc<Vec<f64>>, k: usize, c: usize, plane: usize },
    GaussianLogProb { mean: Var, log_std: Var, action: Arc<Vec<f64>> },
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

#[derive(Debug)]
struct Node {
    value: FieldTensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the slices are sized by the callers for the strides given and
    // `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &FieldTensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn push(&mut self, value: FieldTensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn vals(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.values
    }

    fn tensor(shape: Vec<usize>, values: Vec<f64>) -> FieldTensor {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        FieldTensor {
            shape,
            values,
            rep_tag: None,
        }
    }

    /// Constant leaf; never receives a gradient.
    pub fn input(&mut self, value: FieldTensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Trainable leaf holding a copy of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.value(id).clone();
        self.push(value, Op::Param(id), true)
    }

    /// `y = x Wᵀ + b` over the last axis of `x`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 {
            return Err(shape_err(format!("affine weight must be 2-d, got {ws:?}")));
        }
        let (out, inn) = (ws[0], ws[1]);
        let xs = self.shape(x).to_vec();
        if xs.last() != Some(&inn) {
            return Err(shape_err(format!("affine input {xs:?} vs weight {ws:?}")));
        }
        if self.shape(b) != [out] {
            return Err(shape_err(format!("affine bias {:?} vs {out}", self.shape(b))));
        }
        let rows = self.value(x).numel() / inn;
        let mut y = vec![0.0; rows * out];
        let bv = self.vals(b);
        for r in 0..rows {
            y[r * out..(r + 1) * out].copy_from_slice(bv);
        }
        gemm(rows, inn, out, self.vals(x), inn, 1, self.vals(w), 1, inn, 1.0, &mut y);
        let mut shape = xs;
        *shape.last_mut().unwrap() = out;
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(Self::tensor(shape, y), Op::Affine { x, w, b }, ng))
    }

    /// Cross-correlation of `x [B?, Cin, H, W]` with `k [Cout, Cin, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(k).to_vec();
        let (batch, cin, h, w, batched) = match xs.len() {
            3 => (1, xs[0], xs[1], xs[2], false),
            4 => (xs[0], xs[1], xs[2], xs[3], true),
            _ => return Err(shape_err(format!("conv input must be 3-d or 4-d, got {xs:?}"))),
        };
        if ks.len() != 4 || ks[1] != cin {
            return Err(shape_err(format!("conv kernel {ks:?} vs input {xs:?}")));
        }
        if stride == 0 {
            return Err(shape_err("conv stride must be positive"));
        }
        let (cout, kh, kw) = (ks[0], ks[2], ks[3]);
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(shape_err(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        };
        let ckk = cin * kh * kw;
        let npos = ho * wo;
        let mut cols = vec![0.0; batch * ckk * npos];
        let xv = self.vals(x);
        for b in 0..batch {
            let col = &mut cols[b * ckk * npos..(b + 1) * ckk * npos];
            im2col(&xv[b * cin * h * w..(b + 1) * cin * h * w], &geom, col);
        }
        let kv = self.vals(k);
        let mut y = vec![0.0; batch * cout * npos];
        for b in 0..batch {
            gemm(
                cout,
                ckk,
                npos,
                kv,
                ckk,
                1,
                &cols[b * ckk * npos..],
                npos,
                1,
                0.0,
                &mut y[b * cout * npos..(b + 1) * cout * npos],
            );
        }
        let shape = if batched {
            vec![batch, cout, ho, wo]
        } else {
            vec![cout, ho, wo]
        };
        let ng = self.ng(x) || self.ng(k);
        let cols = if ng && self.ng(k) { cols } else { Vec::new() };
        Ok(self.push(Self::tensor(shape, y), Op::Conv2d { x, k, geom, cols }, ng))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let values = v.values.iter().map(|&a| f(a)).collect();
        let shape = v.shape.clone();
        let ng = self.ng(x);
        self.push(Self::tensor(shape, values), op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |a| if a > 0.0 { a } else { 0.0 }, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |a| a * a, Op::Square(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |a| a * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |a| a + c, Op::AddScalar(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |a| a.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "elementwise operands {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let values = self
            .vals(a)
            .iter()
            .zip(self.vals(b))
            .map(|(&p, &q)| f(p, q))
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Self::tensor(shape, values), op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |p, q| if q < p { q } else { p }, Op::Min(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.vals(x).iter().sum();
        let ng = self.ng(x);
        self.push(FieldTensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::Empty("mean of an empty tensor"));
        }
        let s: f64 = self.vals(x).iter().sum();
        let ng = self.ng(x);
        Ok(self.push(FieldTensor::scalar(s / n as f64), Op::Mean(x), ng))
    }

    /// Max over one axis; the gradient goes to the first maximal index.
    pub fn max_over_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err(format!("axis {axis} out of range for {shape:?}")));
        }
        let len = shape[axis];
        if len == 0 {
            return Err(Error::Empty("max over an empty axis"));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.vals(x);
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut best = base;
                for a in 1..len {
                    let idx = base + a * inner;
                    if xv[idx] > xv[best] {
                        best = idx;
                    }
                }
                out.push(xv[best]);
                argmax.push(best);
            }
        }
        let mut oshape = shape;
        oshape.remove(axis);
        let ng = self.ng(x);
        Ok(self.push(Self::tensor(oshape, out), Op::MaxOverAxis { x, argmax }, ng))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat of no tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err(format!("axis {axis} out of range for {base:?}")));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s[..axis] != base[..axis]
                || s[axis + 1..] != base[axis + 1..]
            {
                return Err(shape_err(format!("concat {s:?} with {base:?} on axis {axis}")));
            }
            widths.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &wd) in parts.iter().zip(&widths) {
                let v = self.vals(*p);
                out.extend_from_slice(&v[o * wd * inner..(o + 1) * wd * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Self::tensor(shape, out),
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                widths,
                inner,
            },
            ng,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(shape_err(format!(
                "slice {start}..{} on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let axis_len = shape[axis];
        let xv = self.vals(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let off = o * axis_len * inner + start * inner;
            out.extend_from_slice(&xv[off..off + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let ng = self.ng(x);
        Ok(self.push(
            Self::tensor(oshape, out),
            Op::Slice {
                x,
                outer,
                axis_len,
                start,
                inner,
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(shape_err(format!("reshape {:?} to {shape:?}", self.shape(x))));
        }
        let values = self.vals(x).to_vec();
        let ng = self.ng(x);
        Ok(self.push(Self::tensor(shape, values), Op::Reshape(x), ng))
    }

    /// Adds `b[c]` along `axis` of `x`, broadcasting over every other axis.
    pub fn add_bias(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || self.shape(b) != [shape[axis]] {
            return Err(shape_err(format!(
                "bias {:?} on axis {axis} of {shape:?}",
                self.shape(b)
            )));
        }
        let c = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let bv = self.vals(b);
        let values = self
            .vals(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[(i / inner) % c])
            .collect();
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(Self::tensor(shape, values), Op::AddBias { x, b, inner }, ng))
    }

    /// `out[e] = src[index[e]]`.
    pub fn gather(&mut self, src: Var, index: Arc<Vec<usize>>, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != index.len() {
            return Err(shape_err("gather index length does not match shape"));
        }
        let sv = self.vals(src);
        if let Some(&bad) = index.iter().find(|&&i| i >= sv.len()) {
            return Err(shape_err(format!("gather index {bad} out of range {}", sv.len())));
        }
        let out = index.iter().map(|&i| sv[i]).collect();
        let ng = self.ng(src);
        Ok(self.push(Self::tensor(shape, out), Op::Gather { src, index }, ng))
    }

    /// Applies a fixed sparse linear map to the flattened `src`.
    pub fn sparse(&mut self, src: Var, map: Arc<SparseMap>, shape: Vec<usize>) -> Result<Var> {
        if self.value(src).numel() != map.in_len || shape.iter().product::<usize>() != map.out_len {
            return Err(shape_err("sparse map dimensions do not match"));
        }
        let sv = self.vals(src);
        let mut out = vec![0.0; map.out_len];
        for &(r, c, v) in &map.entries {
            out[r] += v * sv[c];
        }
        let ng = self.ng(src);
        Ok(self.push(Self::tensor(shape, out), Op::Sparse { src, map }, ng))
    }

    /// Projects every channel of `x [B, C, H, W]` onto `k` fixed spatial maps,
    /// giving `[B, k * C]` laid out map-major.
    pub fn spatial_project(&mut self, x: Var, maps: Arc<Vec<f64>>, k: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err(format!("spatial projection expects [B,C,H,W], got {xs:?}")));
        }
        let (b, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        if maps.len() != k * plane {
            return Err(shape_err("spatial maps do not match the feature plane"));
        }
        let xv = self.vals(x);
        let mut out = vec![0.0; b * k * c];
        for bi in 0..b {
            for kk in 0..k {
                let m = &maps[kk * plane..(kk + 1) * plane];
                for ci in 0..c {
                    let f = &xv[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
                    out[bi * k * c + kk * c + ci] = f.iter().zip(m).map(|(a, w)| a * w).sum();
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Self::tensor(vec![b, k * c], out),
            Op::SpatialProject { x, maps, k, c, plane },
            ng,
        ))
    }

    /// Diagonal-Gaussian log density of `action` summed over the last axis.
    /// `mean` is `[.., d]`, `log_std` is `[d]`.
    pub fn gaussian_logprob(&mut self, mean: Var, log_std: Var, action: &[f64]) -> Result<Var> {
        let ms = self.shape(mean).to_vec();
        let d = *ms.last().ok_or_else(|| shape_err("scalar mean"))?;
        if self.shape(log_std) != [d] || action.len() != self.value(mean).numel() {
            return Err(shape_err(format!(
                "log-prob of mean {ms:?}, log_std {:?}, action length {}",
                self.shape(log_std),
                action.len()
            )));
        }
        if !action.iter().all(|a| a.is_finite())
            || !self.value(mean).is_finite()
            || !self.value(log_std).is_finite()
        {
            return Err(Error::NonFinite("gaussian_logprob inputs"));
        }
        let mv = self.vals(mean);
        let ls = self.vals(log_std);
        let rows = mv.len() / d;
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut lp = 0.0;
            for i in 0..d {
                let z = (action[r * d + i] - mv[r * d + i]) * (-ls[i]).exp();
                lp += -0.5 * z * z - ls[i] - 0.5 * LN_2PI;
            }
            out.push(lp);
        }
        let oshape = ms[..ms.len() - 1].to_vec();
        let ng = self.ng(mean) || self.ng(log_std);
        Ok(self.push(
            Self::tensor(oshape, out),
            Op::GaussianLogProb {
                mean,
                log_std,
                action: Arc::new(action.to_vec()),
            },
            ng,
        ))
    }

    /// Reverse pass from a single-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(shape_err("backward root must be a scalar"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.ng(v) {
            return None;
        }
        let n = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value.values;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Affine { x, w, b } => {
                let ws = self.shape(*w);
                let (o, inn) = (ws[0], ws[1]);
                let rows = self.value(*x).numel() / inn;
                if let Some(gx) = self.acc(grads, *x) {
                    gemm(rows, o, inn, g, o, 1, self.vals(*w), inn, 1, 1.0, gx);
                }
                if let Some(gw) = self.acc(grads, *w) {
                    gemm(o, rows, inn, g, 1, o, self.vals(*x), inn, 1, 1.0, gw);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for r in 0..rows {
                        for (acc, &v) in gb.iter_mut().zip(&g[r * o..(r + 1) * o]) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::Conv2d { x, k, geom, cols } => {
                let ckk = geom.cin * geom.kh * geom.kw;
                let npos = geom.ho * geom.wo;
                if let Some(gk) = self.acc(grads, *k) {
                    for b in 0..geom.batch {
                        gemm(
                            geom.cout,
                            npos,
                            ckk,
                            &g[b * geom.cout * npos..],
                            npos,
                            1,
                            &cols[b * ckk * npos..],
                            1,
                            npos,
                            1.0,
                            gk,
                        );
                    }
                }
                if self.ng(*x) {
                    let kv = self.vals(*k);
                    let mut dcol = vec![0.0; ckk * npos];
                    let plane_in = geom.cin * geom.h * geom.w;
                    let gx = self.acc(grads, *x).expect("needs grad");
                    for b in 0..geom.batch {
                        gemm(
                            ckk,
                            geom.cout,
                            npos,
                            kv,
                            1,
                            ckk,
                            &g[b * geom.cout * npos..],
                            npos,
                            1,
                            0.0,
                            &mut dcol,
                        );
                        col2im(&dcol, geom, &mut gx[b * plane_in..(b + 1) * plane_in]);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for ((a, &gi), &o) in gx.iter_mut().zip(g).zip(out) {
                        if o > 0.0 {
                            *a += gi;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for ((a, &gi), &o) in gx.iter_mut().zip(g).zip(out) {
                        *a += gi * (1.0 - o * o);
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for ((a, &gi), &o) in gx.iter_mut().zip(g).zip(out) {
                        *a += gi * o;
                    }
                }
            }
            Op::Square(x) => {
                let xv = self.vals(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    for ((a, &gi), &v) in gx.iter_mut().zip(g).zip(xv) {
                        *a += 2.0 * gi * v;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (a, &gi) in gx.iter_mut().zip(g) {
                        *a += gi * c;
                    }
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (a, &gi) in gx.iter_mut().zip(g) {
                        *a += gi;
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.vals(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    for ((a, &gi), &v) in gx.iter_mut().zip(g).zip(xv) {
                        if v >= *lo && v <= *hi {
                            *a += gi;
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(ga) = self.acc(grads, *a) {
                    for (acc, &gi) in ga.iter_mut().zip(g) {
                        *acc += gi;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (acc, &gi) in gb.iter_mut().zip(g) {
                        *acc += sign * gi;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.vals(*a), self.vals(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    for ((acc, &gi), &q) in ga.iter_mut().zip(g).zip(bv) {
                        *acc += gi * q;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((acc, &gi), &p) in gb.iter_mut().zip(g).zip(av) {
                        *acc += gi * p;
                    }
                }
            }
            Op::Min(a, b) => {
                let (av, bv) = (self.vals(*a), self.vals(*b));
                let pick_b: Vec<bool> = av.iter().zip(bv).map(|(p, q)| q < p).collect();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((acc, &gi), &pb) in ga.iter_mut().zip(g).zip(&pick_b) {
                        if !pb {
                            *acc += gi;
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((acc, &gi), &pb) in gb.iter_mut().zip(g).zip(&pick_b) {
                        if pb {
                            *acc += gi;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for a in gx.iter_mut() {
                        *a += g[0];
                    }
                }
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                if let Some(gx) = self.acc(grads, *x) {
                    for a in gx.iter_mut() {
                        *a += g[0] / n;
                    }
                }
            }
            Op::MaxOverAxis { x, argmax } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (&src, &gi) in argmax.iter().zip(g) {
                        gx[src] += gi;
                    }
                }
            }
            Op::Concat {
                parts,
                outer,
                widths,
                inner,
            } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (p, &wd) in parts.iter().zip(widths) {
                    if let Some(gp) = self.acc(grads, *p) {
                        for o in 0..*outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + wd) * inner];
                            for (a, &v) in gp[o * wd * inner..(o + 1) * wd * inner].iter_mut().zip(src) {
                                *a += v;
                            }
                        }
                    }
                    offset += wd;
                }
            }
            Op::Slice {
                x,
                outer,
                axis_len,
                start,
                inner,
            } => {
                let len = g.len() / (outer * inner).max(1);
                if let Some(gx) = self.acc(grads, *x) {
                    for o in 0..*outer {
                        let off = o * axis_len * inner + start * inner;
                        for (a, &v) in gx[off..off + len * inner]
                            .iter_mut()
                            .zip(&g[o * len * inner..(o + 1) * len * inner])
                        {
                            *a += v;
                        }
                    }
                }
            }
            Op::AddBias { x, b, inner } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (a, &gi) in gx.iter_mut().zip(g) {
                        *a += gi;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    let c = gb.len();
                    for (i, &gi) in g.iter().enumerate() {
                        gb[(i / inner) % c] += gi;
                    }
                }
            }
            Op::Gather { src, index } => {
                if let Some(gs) = self.acc(grads, *src) {
                    for (&i, &gi) in index.iter().zip(g) {
                        gs[i] += gi;
                    }
                }
            }
            Op::Sparse { src, map } => {
                if let Some(gs) = self.acc(grads, *src) {
                    for &(r, c, v) in &map.entries {
                        gs[c] += v * g[r];
                    }
                }
            }
            Op::SpatialProject { x, maps, k, c, plane } => {
                if let Some(gx) = self.acc(grads, *x) {
                    let b = g.len() / (k * c);
                    for bi in 0..b {
                        for kk in 0..*k {
                            let m = &maps[kk * plane..(kk + 1) * plane];
                            for ci in 0..*c {
                                let gi = g[bi * k * c + kk * c + ci];
                                let dst = &mut gx[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
                                for (a, &wv) in dst.iter_mut().zip(m) {
                                    *a += gi * wv;
                                }
                            }
                        }
                    }
                }
            }
            Op::GaussianLogProb {
                mean,
                log_std,
                action,
            } => {
                let mv = self.vals(*mean);
                let ls = self.vals(*log_std);
                let d = ls.len();
                let rows = mv.len() / d;
                if let Some(gm) = self.acc(grads, *mean) {
                    for r in 0..rows {
                        for i in 0..d {
                            let var = (2.0 * ls[i]).exp();
                            gm[r * d + i] += g[r] * (action[r * d + i] - mv[r * d + i]) / var;
                        }
                    }
                }
                if let Some(gl) = self.acc(grads, *log_std) {
                    for r in 0..rows {
                        for i in 0..d {
                            let z = (action[r * d + i] - mv[r * d + i]) * (-ls[i]).exp();
                            gl[i] += g[r] * (z * z - 1.0);
                        }
                    }
                }
            }
        }
    }

    /// Copies the gradients of every parameter leaf into `store`, summing
    /// repeated uses. Parameters that did not appear get zero gradients.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        store.ensure_grads();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                store.add_grad(*id, g);
            }
        }
    }
}

fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let npos = g.ho * g.wo;
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * npos..(row + 1) * npos];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let src_row = &x[(c * g.h + ii as usize) * g.w..(c * g.h + ii as usize + 1) * g.w];
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst[oi * g.wo + oj] = src_row[jj as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let npos = g.ho * g.wo;
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * npos..(row + 1) * npos];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + ii as usize) * g.w;
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            x[base + jj as usize] += src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}
