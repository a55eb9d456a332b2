//! Define-by-run tape. Every op records its inputs and whatever it needs for
//! the backward pass; `backward` walks the tape once in reverse.

use super::kernels::{self, ConvGeom, Padding};
use super::{Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        col: Vec<T>,
        geom: ConvGeom,
        cout: usize,
    },
    Relu(Var),
    Add(Var, Var),
    MulConst(Var, Tensor<T>),
    Scale(Var, T),
    Concat(Vec<Var>),
    Crop {
        x: Var,
        row: usize,
        col: usize,
    },
    MaxPool {
        x: Var,
        arg: Vec<usize>,
    },
    Upsample(Var),
    Bce {
        x: Var,
        index: usize,
        label: f64,
    },
    Mean(Vec<Var>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A trainable leaf; its gradient is available after `backward`.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Convolution. `w` is `[O, C, k, k]`, or `[C, k, k]` for a single output.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: Padding) -> Result<Var, TensorError> {
        let bias = b.map(|b| &self.nodes[b.0].value);
        let (out, col, geom) = kernels::conv2d_with_cols(&self.nodes[x.0].value, &self.nodes[w.0].value, bias, stride, padding)?;
        let cout = out.shape()[0];
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv { x, w, b, col, geom, cout }, rg))
    }

    /// Correlate a `[C, k, k]` kernel over a `[C, H, W]` feature map.
    pub fn cross_convolve(&mut self, scene: Var, kernel: Var, padding: Padding) -> Result<Var, TensorError> {
        if self.nodes[kernel.0].value.shape().len() != 3 {
            return Err(TensorError::Shape(format!(
                "cross-convolution kernel must be [C,k,k], got {:?}",
                self.nodes[kernel.0].value.shape()
            )));
        }
        self.conv2d(scene, kernel, None, 1, padding)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = kernels::relu(&self.nodes[x.0].value);
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(TensorError::Shape(format!("add {:?} + {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product with a constant of the same shape (e.g. a 0/1 mask).
    pub fn mul_const(&mut self, x: Var, c: Tensor<T>) -> Result<Var, TensorError> {
        let vx = &self.nodes[x.0].value;
        if vx.shape() != c.shape() {
            return Err(TensorError::Shape(format!("mul {:?} * {:?}", vx.shape(), c.shape())));
        }
        let data = vx.data().iter().zip(c.data()).map(|(&a, &b)| a * b).collect();
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::MulConst(x, c), rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.nodes[x.0].value.map(|v| v * s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    /// Concatenate `[C_i, H, W]` maps along channels.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = self
            .nodes
            .get(parts.first().ok_or_else(|| TensorError::Shape("concat of nothing".into()))?.0)
            .map(|n| n.value.shape().to_vec())
            .unwrap_or_default();
        if first.len() != 3 {
            return Err(TensorError::Shape(format!("concat needs [C,H,W], got {first:?}")));
        }
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            let s = self.nodes[p.0].value.shape();
            if s.len() != 3 || s[1..] != first[1..] {
                return Err(TensorError::Shape(format!("concat {first:?} with {s:?}")));
            }
            channels += s[0];
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        let out = Tensor::new(vec![channels, first[1], first[2]], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Spatial window `[row, row+h) x [col, col+w)` of a `[C, H, W]` map.
    pub fn crop(&mut self, x: Var, row: usize, col: usize, h: usize, w: usize) -> Result<Var, TensorError> {
        let v = &self.nodes[x.0].value;
        let &[c, hh, ww] = v.shape() else {
            return Err(TensorError::Shape(format!("crop needs [C,H,W], got {:?}", v.shape())));
        };
        if row + h > hh || col + w > ww {
            return Err(TensorError::Shape(format!("crop {h}x{w} at ({row},{col}) exceeds {hh}x{ww}")));
        }
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for r in row..row + h {
                let base = (ch * hh + r) * ww;
                data.extend_from_slice(&v.data()[base + col..base + col + w]);
            }
        }
        let out = Tensor::new(vec![c, h, w], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Crop { x, row, col }, rg))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var, TensorError> {
        let (out, arg) = kernels::max_pool2d(&self.nodes[x.0].value)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::MaxPool { x, arg }, rg))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = kernels::upsample2x(&self.nodes[x.0].value)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Upsample(x), rg))
    }

    /// Binary cross-entropy of `sigmoid(x[index])` against `label`, as a scalar.
    pub fn bce_at(&mut self, x: Var, index: usize, label: f64) -> Result<Var, TensorError> {
        let v = &self.nodes[x.0].value;
        if index >= v.len() {
            return Err(TensorError::Index { index: vec![index], shape: v.shape().to_vec() });
        }
        let z = v.data()[index].to_f64();
        let out = Tensor::scalar(T::from_f64(kernels::bce_with_logit(z, label)));
        let rg = self.rg(x);
        Ok(self.push(out, Op::Bce { x, index, label }, rg))
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        if xs.is_empty() {
            return Err(TensorError::Shape("mean of nothing".into()));
        }
        let mut s = 0.0;
        for x in xs {
            let v = &self.nodes[x.0].value;
            if v.len() != 1 {
                return Err(TensorError::Shape(format!("mean expects scalars, got {:?}", v.shape())));
            }
            s += v.data()[0].to_f64();
        }
        let out = Tensor::scalar(T::from_f64(s / xs.len() as f64));
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(out, Op::Mean(xs.to_vec()), rg))
    }

    fn accumulate<'a>(grads: &'a mut [Option<Tensor<T>>], shape: &[usize], v: Var) -> &'a mut Tensor<T> {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    /// Reverse pass from a scalar `loss`. Fails if any gradient is non-finite.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::Shape("backward needs a scalar loss".into()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::ONE));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = self.grads[i].take() else { continue };
            if !gy.all_finite() {
                return Err(TensorError::NonFinite(format!("gradient at node {i}")));
            }
            let nodes = &self.nodes;
            let grads = &mut self.grads;
            let shape_of = |v: Var| nodes[v.0].value.shape().to_vec();
            match &nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(gy);
                    continue;
                }
                Op::Conv { x, w, b, col, geom, cout } => {
                    let wv = nodes[w.0].value.data();
                    let mut dw = nodes[w.0].requires_grad.then(|| Tensor::zeros(&shape_of(*w)));
                    let mut dx = nodes[x.0].requires_grad.then(|| Tensor::zeros(&shape_of(*x)));
                    let mut db = b.filter(|b| nodes[b.0].requires_grad).map(|b| Tensor::zeros(&shape_of(b)));
                    kernels::conv2d_backward(
                        geom,
                        *cout,
                        wv,
                        col,
                        gy.data(),
                        dw.as_mut().map(|t| t.data_mut()),
                        dx.as_mut().map(|t| t.data_mut()),
                        db.as_mut().map(|t| t.data_mut()),
                    );
                    if let Some(dw) = dw {
                        Self::accumulate(grads, dw.shape(), *w).add_assign(&dw);
                    }
                    if let Some(dx) = dx {
                        Self::accumulate(grads, dx.shape(), *x).add_assign(&dx);
                    }
                    if let (Some(db), Some(b)) = (db, b) {
                        Self::accumulate(grads, db.shape(), *b).add_assign(&db);
                    }
                }
                Op::Relu(x) => {
                    if nodes[x.0].requires_grad {
                        let out = nodes[i].value.data();
                        let g = Self::accumulate(grads, gy.shape(), *x);
                        for ((d, &o), &gv) in g.data_mut().iter_mut().zip(out).zip(gy.data()) {
                            if o > T::ZERO {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if nodes[v.0].requires_grad {
                            Self::accumulate(grads, gy.shape(), *v).add_assign(&gy);
                        }
                    }
                }
                Op::MulConst(x, c) => {
                    if nodes[x.0].requires_grad {
                        let g = Self::accumulate(grads, gy.shape(), *x);
                        for ((d, &cv), &gv) in g.data_mut().iter_mut().zip(c.data()).zip(gy.data()) {
                            *d += cv * gv;
                        }
                    }
                }
                Op::Scale(x, s) => {
                    if nodes[x.0].requires_grad {
                        let g = Self::accumulate(grads, gy.shape(), *x);
                        for (d, &gv) in g.data_mut().iter_mut().zip(gy.data()) {
                            *d += *s * gv;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let s = shape_of(*p);
                        let n: usize = s.iter().product();
                        if nodes[p.0].requires_grad {
                            let g = Self::accumulate(grads, &s, *p);
                            for (d, &gv) in g.data_mut().iter_mut().zip(&gy.data()[off..off + n]) {
                                *d += gv;
                            }
                        }
                        off += n;
                    }
                }
                Op::Crop { x, row, col } => {
                    if nodes[x.0].requires_grad {
                        let s = shape_of(*x);
                        let (hh, ww) = (s[1], s[2]);
                        let (c, h, w) = (gy.shape()[0], gy.shape()[1], gy.shape()[2]);
                        let g = Self::accumulate(grads, &s, *x);
                        let gd = g.data_mut();
                        for ch in 0..c {
                            for r in 0..h {
                                let dst = (ch * hh + row + r) * ww + col;
                                let src = (ch * h + r) * w;
                                for k in 0..w {
                                    gd[dst + k] += gy.data()[src + k];
                                }
                            }
                        }
                    }
                }
                Op::MaxPool { x, arg } => {
                    if nodes[x.0].requires_grad {
                        let g = Self::accumulate(grads, &shape_of(*x), *x);
                        let gd = g.data_mut();
                        for (&a, &gv) in arg.iter().zip(gy.data()) {
                            gd[a] += gv;
                        }
                    }
                }
                Op::Upsample(x) => {
                    if nodes[x.0].requires_grad {
                        let s = shape_of(*x);
                        let (c, h, w) = (s[0], s[1], s[2]);
                        let g = Self::accumulate(grads, &s, *x);
                        let gd = g.data_mut();
                        for ch in 0..c {
                            for y in 0..2 * h {
                                for xx in 0..2 * w {
                                    gd[(ch * h + y / 2) * w + xx / 2] += gy.data()[(ch * 2 * h + y) * 2 * w + xx];
                                }
                            }
                        }
                    }
                }
                Op::Bce { x, index, label } => {
                    if nodes[x.0].requires_grad {
                        let z = nodes[x.0].value.data()[*index].to_f64();
                        let d = (kernels::sigmoid(z) - label) * gy.data()[0].to_f64();
                        let g = Self::accumulate(grads, &shape_of(*x), *x);
                        g.data_mut()[*index] += T::from_f64(d);
                    }
                }
                Op::Mean(xs) => {
                    let d = T::from_f64(gy.data()[0].to_f64() / xs.len() as f64);
                    for x in xs {
                        if nodes[x.0].requires_grad {
                            let g = Self::accumulate(grads, &shape_of(*x), *x);
                            g.data_mut()[0] += d;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
