//! Layer primitives with hand-written gradients.

use super::{gemm, Scalar, Tensor};
use crate::{Error, RandomSource, Result};

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub fn elu_scalar<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp() - T::one()
    }
}

pub fn elu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::from_fn(x.shape(), |i| elu_scalar(x.data()[i]))
}

pub(crate) fn elu_in_place<T: Scalar>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = elu_scalar(*v));
}

/// Gradient through ELU given its output `y`; for the negative branch the
/// derivative `exp(x)` equals `y + 1`.
pub(crate) fn elu_backward_in_place<T: Scalar>(y: &[T], grad: &mut [T]) {
    for (g, &y) in grad.iter_mut().zip(y) {
        if y <= T::zero() {
            *g *= y + T::one();
        }
    }
}

/// Geometry of a same-padded, stride-1 convolution on one CHW sample.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvShape {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Output columns `[lo, hi)` whose source column `x + offset` lies inside
/// a row of `width`.
fn valid_span(width: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).clamp(0, width as isize) as usize;
    let hi = (width as isize - offset).clamp(lo as isize, width as isize) as usize;
    (lo, hi)
}

fn im2col<T: Scalar>(s: &ConvShape, x: &[T], cols: &mut [T]) {
    let (h, w, k) = (s.height, s.width, s.kernel);
    let pad = (k / 2) as isize;
    let hw = s.pixels();
    for c in 0..s.in_channels {
        let plane = &x[c * hw..(c + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let out = &mut cols[row * hw..(row + 1) * hw];
                let dx = kj as isize - pad;
                let (lo, hi) = valid_span(w, dx);
                for y in 0..h {
                    let sy = y as isize + ki as isize - pad;
                    let dst = &mut out[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    let start = (lo as isize + dx) as usize;
                    dst[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                }
            }
        }
    }
}

fn col2im<T: Scalar>(s: &ConvShape, cols: &[T], dx: &mut [T]) {
    let (h, w, k) = (s.height, s.width, s.kernel);
    let pad = (k / 2) as isize;
    let hw = s.pixels();
    dx.fill(T::zero());
    for c in 0..s.in_channels {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                let off = kj as isize - pad;
                let (lo, hi) = valid_span(w, off);
                for y in 0..h {
                    let sy = y as isize + ki as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let start = (lo as isize + off) as usize;
                    let dst = &mut plane[sy as usize * w + start..sy as usize * w + start + (hi - lo)];
                    for (d, &v) in dst.iter_mut().zip(&src[y * w + lo..y * w + hi]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Forward convolution of one sample; `out` holds `out_channels × H × W`.
pub(crate) fn conv_forward<T: Scalar>(
    s: &ConvShape,
    x: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
    scratch: &mut Vec<T>,
) {
    let hw = s.pixels();
    scratch.resize(s.patch_len() * hw, T::zero());
    im2col(s, x, scratch);
    for (o, row) in out.chunks_mut(hw).enumerate() {
        row.fill(bias[o]);
    }
    gemm(
        false,
        false,
        s.out_channels,
        s.patch_len(),
        hw,
        T::one(),
        weight,
        scratch,
        T::one(),
        out,
    );
}

/// Accumulates weight and bias gradients into `dw`/`db` and, when `dx` is
/// given, writes the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    s: &ConvShape,
    x: &[T],
    weight: &[T],
    dout: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
    scratch: &mut Vec<T>,
) {
    let hw = s.pixels();
    let patch = s.patch_len();
    scratch.resize(patch * hw, T::zero());
    im2col(s, x, scratch);
    gemm(
        false,
        true,
        s.out_channels,
        hw,
        patch,
        T::one(),
        dout,
        scratch,
        T::one(),
        dw,
    );
    for (o, row) in dout.chunks(hw).enumerate() {
        db[o] += row.iter().copied().sum();
    }
    if let Some(dx) = dx {
        gemm(
            true,
            false,
            patch,
            s.out_channels,
            hw,
            T::one(),
            weight,
            dout,
            T::zero(),
            scratch,
        );
        col2im(s, scratch, dx);
    }
}

fn conv_shape<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, ConvShape)> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::Shape("conv2d expects NCHW input and OCKK weights".into()));
    }
    if ws[1] != xs[1] || ws[2] != ws[3] || ws[2] % 2 == 0 {
        return Err(Error::Shape(format!(
            "conv2d weight {ws:?} incompatible with input {xs:?}"
        )));
    }
    if b.shape() != [ws[0]] {
        return Err(Error::Shape(format!("conv2d bias {:?} for {} filters", b.shape(), ws[0])));
    }
    Ok((
        xs[0],
        ConvShape {
            in_channels: xs[1],
            out_channels: ws[0],
            height: xs[2],
            width: xs[3],
            kernel: ws[2],
        },
    ))
}

/// Same-padded stride-1 cross-correlation over an NCHW batch.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, s) = conv_shape(x, w, b)?;
    let mut out = Tensor::zeros(&[n, s.out_channels, s.height, s.width]);
    let in_len = s.in_channels * s.pixels();
    let out_len = s.out_channels * s.pixels();
    let mut scratch = Vec::new();
    for i in 0..n {
        conv_forward(
            &s,
            &x.data()[i * in_len..(i + 1) * in_len],
            w.data(),
            b.data(),
            &mut out.data_mut()[i * out_len..(i + 1) * out_len],
            &mut scratch,
        );
    }
    Ok(out)
}

/// Gradients of a convolution: `(dx, dw, db)`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    dout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, s) = conv_shape(x, w, b)?;
    if dout.shape() != [n, s.out_channels, s.height, s.width] {
        return Err(Error::Shape(format!("conv2d output gradient {:?}", dout.shape())));
    }
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(b.shape());
    let in_len = s.in_channels * s.pixels();
    let out_len = s.out_channels * s.pixels();
    let mut scratch = Vec::new();
    for i in 0..n {
        conv_backward(
            &s,
            &x.data()[i * in_len..(i + 1) * in_len],
            w.data(),
            &dout.data()[i * out_len..(i + 1) * out_len],
            dw.data_mut(),
            db.data_mut(),
            Some(&mut dx.data_mut()[i * in_len..(i + 1) * in_len]),
            &mut scratch,
        );
    }
    Ok((dx, dw, db))
}

/// 2×2 stride-2 max pooling of `channels` planes of `h × w`; trailing odd
/// rows/columns are dropped. `argmax` receives the flat input index of each
/// output, taking the first maximum in row-major window order.
pub(crate) fn maxpool_forward<T: Scalar>(
    channels: usize,
    h: usize,
    w: usize,
    x: &[T],
    out: &mut [T],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / 2, w / 2);
    for c in 0..channels {
        for y in 0..oh {
            for xo in 0..ow {
                let base = c * h * w + 2 * y * w + 2 * xo;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = (c * oh + y) * ow + xo;
                out[o] = x[best];
                argmax[o] = best as u32;
            }
        }
    }
}

pub(crate) fn maxpool_backward<T: Scalar>(argmax: &[u32], dout: &[T], dx: &mut [T]) {
    dx.fill(T::zero());
    for (&i, &g) in argmax.iter().zip(dout) {
        dx[i as usize] += g;
    }
}

/// 2×2 stride-2 max pooling over an NCHW batch; returns the pooled tensor
/// and the flat argmax index (into the input) of every output element.
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let s = x.shape();
    if s.len() != 4 || s[2] < 2 || s[3] < 2 {
        return Err(Error::Shape(format!("maxpool2d input {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = Tensor::zeros(&[n, c, h / 2, w / 2]);
    let mut argmax = vec![0u32; out.len()];
    maxpool_forward(n * c, h, w, x.data(), out.data_mut(), &mut argmax);
    Ok((out, argmax))
}

/// Routes `dout` back to the recorded argmax positions of an input of
/// shape `input_shape`.
pub fn maxpool2d_backward<T: Scalar>(input_shape: &[usize], argmax: &[u32], dout: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    maxpool_backward(argmax, dout.data(), dx.data_mut());
    dx
}

const LANES: usize = 8;

/// Dot product accumulated in a fixed lane order.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES * LANES;
    for (ca, cb) in a[..chunks].chunks_exact(LANES).zip(b[..chunks].chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut total = acc.iter().copied().sum::<T>();
    for (&x, &y) in a[chunks..].iter().zip(&b[chunks..]) {
        total += x * y;
    }
    total
}

fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// `y = W x + b` for a single vector, `W` stored `out × in`.
pub(crate) fn dense_forward<T: Scalar>(w: &[T], b: &[T], x: &[T], y: &mut [T]) {
    for ((y, row), &b) in y.iter_mut().zip(w.chunks_exact(x.len())).zip(b) {
        *y = b + dot(row, x);
    }
}

/// Accumulates `dW += dy xᵀ`, `db += dy` and optionally writes `dx = Wᵀ dy`.
pub(crate) fn dense_backward<T: Scalar>(
    w: &[T],
    x: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    for (row, &g) in dw.chunks_exact_mut(x.len()).zip(dy) {
        axpy(g, x, row);
    }
    for (d, &g) in db.iter_mut().zip(dy) {
        *d += g;
    }
    if let Some(dx) = dx {
        dx.fill(T::zero());
        for (row, &g) in w.chunks_exact(x.len()).zip(dy) {
            axpy(g, row, dx);
        }
    }
}

/// Affine map of a batch: `x` is `N × in`, `w` is `out × in`, `b` is `out`.
pub fn dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || b.shape() != [ws[0]] {
        return Err(Error::Shape(format!(
            "dense input {xs:?}, weight {ws:?}, bias {:?}",
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(&[xs[0], ws[0]]);
    for (xi, yi) in x.data().chunks(xs[1]).zip(out.data_mut().chunks_mut(ws[0])) {
        dense_forward(w.data(), b.data(), xi, yi);
    }
    Ok(out)
}

/// Gradients of a batched affine map: `(dx, dw, db)`.
pub fn dense_backward_batch<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (xs, ws) = (x.shape(), w.shape());
    if dout.shape() != [xs[0], ws[0]] {
        return Err(Error::Shape(format!("dense output gradient {:?}", dout.shape())));
    }
    let mut dx = Tensor::zeros(xs);
    let mut dw = Tensor::zeros(ws);
    let mut db = Tensor::zeros(&[ws[0]]);
    for ((xi, gi), dxi) in x
        .data()
        .chunks(xs[1])
        .zip(dout.data().chunks(ws[0]))
        .zip(dx.data_mut().chunks_mut(xs[1]))
    {
        dense_backward(w.data(), xi, gi, dw.data_mut(), db.data_mut(), Some(dxi));
    }
    Ok((dx, dw, db))
}

/// Inverted dropout applied in place. Returns the per-element multiplier
/// (0 or `1/(1-rate)`) used in train mode, or `None` when nothing was
/// dropped.
pub(crate) fn dropout_in_place<T: Scalar>(
    x: &mut [T],
    rate: f64,
    mode: Mode,
    rng: &mut RandomSource,
) -> Option<Vec<T>> {
    if mode == Mode::Infer || rate <= 0.0 {
        return None;
    }
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.chance(rate) { T::zero() } else { scale })
        .collect();
    for (v, &m) in x.iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}

pub(crate) fn apply_mask<T: Scalar>(grad: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(mask) = mask {
        for (g, &m) in grad.iter_mut().zip(mask) {
            *g *= m;
        }
    }
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1/(1-rate)`; infer mode is identity.
pub fn dropout<T: Scalar>(x: &Tensor<T>, rate: f64, mode: Mode, rng: &mut RandomSource) -> Tensor<T> {
    let mut out = x.clone();
    dropout_in_place(out.data_mut(), rate, mode, rng);
    out
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of a softmax over `logits` against `target`; returns the
/// loss and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], target: usize) -> (T, Vec<T>) {
    assert!(target < logits.len(), "target class out of range");
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let total: T = logits.iter().map(|&l| (l - max).exp()).sum();
    let log_sum = max + total.ln();
    let loss = log_sum - logits[target];
    let mut grad: Vec<T> = logits.iter().map(|&l| (l - log_sum).exp()).collect();
    grad[target] = grad[target] - T::one();
    (loss, grad)
}
