//! Graph-free numeric kernels. The autodiff ops and the inference path both
//! call into these, so forward values agree bit for bit.

use super::{Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k / 2`; preserves spatial size at stride 1.
    Same,
    Valid,
}

impl Padding {
    pub fn amount(self, k: usize) -> usize {
        match self {
            Padding::Same => k / 2,
            Padding::Valid => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, padding: Padding) -> Result<Self, TensorError> {
        if k % 2 == 0 {
            return Err(TensorError::Shape(format!("kernel extent {k} must be odd")));
        }
        if stride == 0 {
            return Err(TensorError::Shape("stride must be positive".into()));
        }
        let pad = padding.amount(k);
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(TensorError::Shape(format!("input {h}x{w} smaller than kernel {k}")));
        }
        Ok(Self {
            cin,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn out_len(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfold `x [cin, h, w]` into `col [cin*k*k, ho*wo]`.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let n = g.out_len();
    debug_assert_eq!(col.len(), g.col_rows() * n);
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize { T::ZERO } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Fold `col` back, accumulating into `dx [cin, h, w]`.
pub fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let n = g.out_len();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Validate shapes and return `(geometry, cout)`. A rank-3 weight `[cin, k, k]`
/// is a single-output kernel.
pub fn conv_shapes(x: &[usize], w: &[usize], stride: usize, padding: Padding) -> Result<(ConvGeom, usize), TensorError> {
    if x.len() != 3 {
        return Err(TensorError::Shape(format!("conv input must be [C,H,W], got {x:?}")));
    }
    let (cout, cin, kh, kw) = match *w {
        [cout, cin, kh, kw] => (cout, cin, kh, kw),
        [cin, kh, kw] => (1, cin, kh, kw),
        _ => return Err(TensorError::Shape(format!("conv weight must be [O,C,k,k] or [C,k,k], got {w:?}"))),
    };
    if kh != kw {
        return Err(TensorError::Shape(format!("kernel must be square, got {kh}x{kw}")));
    }
    if cin != x[0] {
        return Err(TensorError::Shape(format!("channel mismatch: input {} vs kernel {cin}", x[0])));
    }
    Ok((ConvGeom::new(cin, x[1], x[2], kh, stride, padding)?, cout))
}

/// Convolution returning the output and the unfolded input for reuse in backward.
pub fn conv2d_with_cols<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, Vec<T>, ConvGeom), TensorError> {
    let (g, cout) = conv_shapes(x.shape(), w.shape(), stride, padding)?;
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(TensorError::Shape(format!("bias length {} vs {cout} outputs", b.len())));
        }
    }
    let n = g.out_len();
    let mut col = vec![T::ZERO; g.col_rows() * n];
    im2col(x.data(), &g, &mut col);
    let mut out = vec![T::ZERO; cout * n];
    if let Some(b) = bias {
        for (o, &bv) in b.data().iter().enumerate() {
            out[o * n..(o + 1) * n].fill(bv);
        }
    }
    let beta = if bias.is_some() { T::ONE } else { T::ZERO };
    T::gemm(cout, g.col_rows(), n, w.data(), g.col_rows() as isize, 1, &col, n as isize, 1, beta, &mut out);
    Ok((Tensor::new(vec![cout, g.ho, g.wo], out)?, col, g))
}

pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>, TensorError> {
    conv2d_with_cols(x, w, bias, stride, padding).map(|(t, _, _)| t)
}

/// Stride-1, same-padded convolution by shifted row updates, without
/// unfolding. Each output accumulates in f64 in ascending (channel, row,
/// column) tap order, independent of every other output channel. Cheaper
/// than the GEMM path when there are few output channels.
pub fn conv2d_direct<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>, TensorError> {
    let (g, cout) = conv_shapes(x.shape(), w.shape(), 1, Padding::Same)?;
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(TensorError::Shape(format!("bias length {} vs {cout} outputs", b.len())));
        }
    }
    let (h, wd, k, p) = (g.h, g.w, g.k, g.pad as isize);
    let mut out = Vec::with_capacity(cout * h * wd);
    let mut dst = vec![0.0f64; h * wd];
    for o in 0..cout {
        dst.fill(bias.map_or(0.0, |b| b.data()[o].to_f64()));
        for c in 0..g.cin {
            let plane = &x.data()[c * h * wd..(c + 1) * h * wd];
            for ki in 0..k {
                for kj in 0..k {
                    let wv = w.data()[((o * g.cin + c) * k + ki) * k + kj].to_f64();
                    let dy = ki as isize - p;
                    let dx = kj as isize - p;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (wd as isize - dx).min(wd as isize).max(0) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &plane[sy as usize * wd..(sy as usize + 1) * wd];
                        let row = &mut dst[y * wd..(y + 1) * wd];
                        let shifted = &src[(x0 as isize + dx) as usize..(x1 as isize + dx) as usize];
                        for (r, &sv) in row[x0..x1].iter_mut().zip(shifted) {
                            *r += wv * sv.to_f64();
                        }
                    }
                }
            }
        }
        out.extend(dst.iter().map(|&v| T::from_f64(v)));
    }
    Tensor::new(vec![cout, h, wd], out)
}

/// Slide `kernel [C, k, k]` over `scene [C, H, W]`, producing `[1, H', W']`.
pub fn cross_convolve<T: Scalar>(scene: &Tensor<T>, kernel: &Tensor<T>, padding: Padding) -> Result<Tensor<T>, TensorError> {
    if kernel.shape().len() != 3 {
        return Err(TensorError::Shape(format!("cross-convolution kernel must be [C,k,k], got {:?}", kernel.shape())));
    }
    conv2d(scene, kernel, None, 1, padding)
}

/// Gradients of a convolution given the upstream gradient `dy [cout, ho, wo]`.
/// Accumulates into `dw` (same layout as the weight) and, when present, `dx` and `db`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    cout: usize,
    w: &[T],
    col: &[T],
    dy: &[T],
    dw: Option<&mut [T]>,
    dx: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let n = g.out_len();
    let r = g.col_rows();
    if let Some(dw) = dw {
        // dW += dY · colᵀ
        T::gemm(cout, n, r, dy, n as isize, 1, col, 1, n as isize, T::ONE, dw);
    }
    if let Some(dx) = dx {
        // dcol = Wᵀ · dY
        let mut dcol = vec![T::ZERO; r * n];
        T::gemm(r, cout, n, w, 1, r as isize, dy, n as isize, 1, T::ZERO, &mut dcol);
        col2im(&dcol, g, dx);
    }
    if let Some(db) = db {
        for o in 0..cout {
            let mut s = T::ZERO;
            for &v in &dy[o * n..(o + 1) * n] {
                s += v;
            }
            db[o] += s;
        }
    }
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

pub fn relu_inplace<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        if !(*v > T::ZERO) {
            *v = T::ZERO;
        }
    }
}

/// 2x2 max pooling with stride 2 over `[C, H, W]` (H, W even). Returns the
/// pooled map and the flat source index of every maximum.
pub fn max_pool2d<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), TensorError> {
    let &[c, h, w] = x.shape() else {
        return Err(TensorError::Shape(format!("max_pool2d needs [C,H,W], got {:?}", x.shape())));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::Shape(format!("max_pool2d needs even extents, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    let d = x.data();
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (ch * h + 2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                    if d[idx] > d[best] {
                        best = idx;
                    }
                }
                out.push(d[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, ho, wo], out)?, arg))
}

/// Nearest-neighbour 2x upsampling of `[C, H, W]`.
pub fn upsample2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let &[c, h, w] = x.shape() else {
        return Err(TensorError::Shape(format!("upsample2x needs [C,H,W], got {:?}", x.shape())));
    };
    let d = x.data();
    let mut out = vec![T::ZERO; c * 4 * h * w];
    for ch in 0..c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out[(ch * 2 * h + y) * 2 * w + xx] = d[(ch * h + y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::new(vec![c, 2 * h, 2 * w], out)
}

/// Numerically stable `-y log σ(z) - (1-y) log(1-σ(z))`.
pub fn bce_with_logit(z: f64, label: f64) -> f64 {
    z.max(0.0) - z * label + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
