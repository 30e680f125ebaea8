use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 2-D convolution (cross-correlation) with zero padding.
///
/// Weights are stored `out × in × kernel_h × kernel_w`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Fully connected layer, weights stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub window: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    Linear(Linear<T>),
    Relu,
    MaxPool2d(MaxPool2d),
    Flatten,
}

/// Numeric code of a layer kind in the model file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum LayerKind {
    Conv2d = 0,
    Linear = 1,
    Relu = 2,
    MaxPool2d = 3,
    Flatten = 4,
}

impl LayerKind {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => LayerKind::Conv2d,
            1 => LayerKind::Linear,
            2 => LayerKind::Relu,
            3 => LayerKind::MaxPool2d,
            4 => LayerKind::Flatten,
            _ => return None,
        })
    }
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        weight: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        let conv = Conv2d {
            in_channels,
            out_channels,
            kernel_h: kernel.0,
            kernel_w: kernel.1,
            stride,
            padding,
            weight,
            bias,
        };
        conv.validate()?;
        Ok(conv)
    }

    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel_h: kernel.0,
            kernel_w: kernel.1,
            stride,
            padding,
            weight: vec![T::zero(); out_channels * in_channels * kernel.0 * kernel.1],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel_h == 0 || self.kernel_w == 0
        {
            return Err(Error::invalid("conv2d extents must be positive"));
        }
        if self.stride == 0 {
            return Err(Error::invalid("conv2d stride must be at least 1"));
        }
        if self.weight.len() != self.out_channels * self.fan_in() {
            return Err(Error::invalid(format!(
                "conv2d weight has {} entries, expected {}",
                self.weight.len(),
                self.out_channels * self.fan_in()
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::invalid("conv2d bias length differs from out_channels"));
        }
        Ok(())
    }

    /// Output shape for a `C × H × W` input, or `None` if the kernel does not fit.
    pub fn output_shape(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let [c, h, w] = input;
        if c != self.in_channels {
            return None;
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < self.kernel_h || pw < self.kernel_w {
            return None;
        }
        Some([
            self.out_channels,
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ])
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = as3(input.shape())
            .and_then(|s| self.output_shape(s))
            .ok_or_else(|| Error::invalid(format!("conv2d does not accept input of shape {:?}", input.shape())))?;
        let in_shape = as3(input.shape()).expect("checked");
        Tensor::new(out_shape.to_vec(), conv2d_forward(self, input.data(), in_shape, out_shape))
    }
}

/// Output positions `o` in `0..out_len` with `0 <= o*stride + k - pad < in_len`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if in_len + pad > k {
        out_len.min((in_len + pad - k - 1) / stride + 1)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfolds the input into a `(in·kh·kw) × (oh·ow)` patch matrix; padded
/// positions stay zero.
fn im2col<T: Scalar>(conv: &Conv2d<T>, input: &[T], in_shape: [usize; 3], out_shape: [usize; 3]) -> Vec<T> {
    let [ic_n, h, w] = in_shape;
    let [_, oh, ow] = out_shape;
    let (s, p) = (conv.stride, conv.padding);
    let plane = oh * ow;
    let mut cols = vec![T::zero(); ic_n * conv.kernel_h * conv.kernel_w * plane];
    let mut row = 0;
    for ic in 0..ic_n {
        let src = &input[ic * h * w..(ic + 1) * h * w];
        for ky in 0..conv.kernel_h {
            let (oy_lo, oy_hi) = valid_range(ky, p, s, h, oh);
            for kx in 0..conv.kernel_w {
                let (ox_lo, ox_hi) = valid_range(kx, p, s, w, ow);
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ky - p;
                    let src_row = &src[iy * w..(iy + 1) * w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if s == 1 {
                        let ix0 = ox_lo + kx - p;
                        dst_row[ox_lo..ox_hi].copy_from_slice(&src_row[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst_row[ox] = src_row[ox * s + kx - p];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Inverse scatter of [`im2col`]: adds every patch-matrix entry back onto the
/// input position it was read from.
fn col2im_add<T: Scalar>(conv: &Conv2d<T>, cols: &[T], in_shape: [usize; 3], out_shape: [usize; 3], grad_input: &mut [T]) {
    let [ic_n, h, w] = in_shape;
    let [_, oh, ow] = out_shape;
    let (s, p) = (conv.stride, conv.padding);
    let plane = oh * ow;
    let mut row = 0;
    for ic in 0..ic_n {
        let dst = &mut grad_input[ic * h * w..(ic + 1) * h * w];
        for ky in 0..conv.kernel_h {
            let (oy_lo, oy_hi) = valid_range(ky, p, s, h, oh);
            for kx in 0..conv.kernel_w {
                let (ox_lo, ox_hi) = valid_range(kx, p, s, w, ow);
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ky - p;
                    let dst_row = &mut dst[iy * w..(iy + 1) * w];
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    for ox in ox_lo..ox_hi {
                        dst_row[ox * s + kx - p] += src_row[ox];
                    }
                }
                row += 1;
            }
        }
    }
}

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (d, &v) in y.iter_mut().zip(x) {
        *d += a * v;
    }
}

#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        acc += a * b;
    }
    acc
}

pub(crate) fn conv2d_forward<T: Scalar>(conv: &Conv2d<T>, input: &[T], in_shape: [usize; 3], out_shape: [usize; 3]) -> Vec<T> {
    let [oc_n, oh, ow] = out_shape;
    let plane = oh * ow;
    let fan_in = conv.fan_in();
    let cols = im2col(conv, input, in_shape, out_shape);
    let mut out = vec![T::zero(); oc_n * plane];
    for (oc, dst) in out.chunks_exact_mut(plane).enumerate() {
        dst.iter_mut().for_each(|v| *v = conv.bias[oc]);
        let w_row = &conv.weight[oc * fan_in..(oc + 1) * fan_in];
        for (&wv, col) in w_row.iter().zip(cols.chunks_exact(plane)) {
            axpy(wv, col, dst);
        }
    }
    out
}

/// Accumulates weight/bias gradients and, when `grad_input` is given, the
/// gradient with respect to the layer input.
pub(crate) fn conv2d_backward<T: Scalar>(
    conv: &Conv2d<T>,
    input: &[T],
    in_shape: [usize; 3],
    grad_out: &[T],
    out_shape: [usize; 3],
    grad_w: Option<(&mut [T], &mut [T])>,
    grad_input: Option<&mut [T]>,
) {
    let [oc_n, oh, ow] = out_shape;
    let plane = oh * ow;
    let fan_in = conv.fan_in();
    if let Some((gw, gb)) = grad_w {
        let cols = im2col(conv, input, in_shape, out_shape);
        for oc in 0..oc_n {
            let g = &grad_out[oc * plane..(oc + 1) * plane];
            gb[oc] += g.iter().copied().sum::<T>();
            for (d, col) in gw[oc * fan_in..(oc + 1) * fan_in].iter_mut().zip(cols.chunks_exact(plane)) {
                *d += dot(g, col);
            }
        }
    }
    if let Some(gi) = grad_input {
        let mut grad_cols = vec![T::zero(); fan_in * plane];
        for oc in 0..oc_n {
            let g = &grad_out[oc * plane..(oc + 1) * plane];
            let w_row = &conv.weight[oc * fan_in..(oc + 1) * fan_in];
            for (&wv, dst) in w_row.iter().zip(grad_cols.chunks_exact_mut(plane)) {
                axpy(wv, g, dst);
            }
        }
        col2im_add(conv, &grad_cols, in_shape, out_shape, gi);
    }
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("linear extents must be positive"));
        }
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::invalid(format!(
                "linear {in_dim}->{out_dim} needs {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weight.len(),
                bias.len()
            )));
        }
        Ok(Linear {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.in_dim {
            return Err(Error::invalid(format!("linear expects {} inputs, got {}", self.in_dim, x.len())));
        }
        Ok(linear_forward(self, x))
    }
}

pub(crate) fn linear_forward<T: Scalar>(lin: &Linear<T>, x: &[T]) -> Vec<T> {
    lin.weight
        .chunks_exact(lin.in_dim)
        .zip(&lin.bias)
        .map(|(row, &b)| {
            let mut acc = T::zero();
            for (&wv, &xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            acc + b
        })
        .collect()
}

pub(crate) fn linear_backward<T: Scalar>(
    lin: &Linear<T>,
    x: &[T],
    grad_out: &[T],
    grad_w: Option<(&mut [T], &mut [T])>,
    mut grad_input: Option<&mut [T]>,
) {
    let mut grad_w = grad_w;
    for (o, &g) in grad_out.iter().enumerate() {
        let row = &lin.weight[o * lin.in_dim..(o + 1) * lin.in_dim];
        if let Some(gi) = grad_input.as_deref_mut() {
            for (d, &wv) in gi.iter_mut().zip(row) {
                *d += wv * g;
            }
        }
        if let Some((gw, gb)) = grad_w.as_mut() {
            gb[o] += g;
            for (d, &xv) in gw[o * lin.in_dim..(o + 1) * lin.in_dim].iter_mut().zip(x) {
                *d += g * xv;
            }
        }
    }
}

impl MaxPool2d {
    pub fn output_shape(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let [c, h, w] = input;
        if self.window == 0 || self.stride == 0 || h < self.window || w < self.window {
            return None;
        }
        Some([
            c,
            (h - self.window) / self.stride + 1,
            (w - self.window) / self.stride + 1,
        ])
    }

    /// Flat input index of the first maximal element of each pooling window.
    fn argmax(&self, input: &[impl Scalar], in_shape: [usize; 3], out_shape: [usize; 3]) -> Vec<usize> {
        let [c_n, h, w] = in_shape;
        let [_, oh, ow] = out_shape;
        let mut idx = Vec::with_capacity(c_n * oh * ow);
        for c in 0..c_n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = c * h * w + oy * self.stride * w + ox * self.stride;
                    for dy in 0..self.window {
                        for dx in 0..self.window {
                            let i = c * h * w + (oy * self.stride + dy) * w + ox * self.stride + dx;
                            if input[i] > input[best] {
                                best = i;
                            }
                        }
                    }
                    idx.push(best);
                }
            }
        }
        idx
    }
}

pub(crate) fn maxpool_forward<T: Scalar>(pool: &MaxPool2d, input: &[T], in_shape: [usize; 3], out_shape: [usize; 3]) -> Vec<T> {
    pool.argmax(input, in_shape, out_shape)
        .into_iter()
        .map(|i| input[i])
        .collect()
}

pub(crate) fn maxpool_backward<T: Scalar>(
    pool: &MaxPool2d,
    input: &[T],
    in_shape: [usize; 3],
    grad_out: &[T],
    out_shape: [usize; 3],
    grad_input: &mut [T],
) {
    for (i, &g) in pool.argmax(input, in_shape, out_shape).into_iter().zip(grad_out) {
        grad_input[i] += g;
    }
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::Linear(_) => LayerKind::Linear,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2d(_) => LayerKind::MaxPool2d,
            Layer::Flatten => LayerKind::Flatten,
        }
    }

    /// Conv2d and linear layers carry parameters and cast votes.
    pub fn is_parametric(&self) -> bool {
        matches!(self, Layer::Conv2d(_) | Layer::Linear(_))
    }

    pub fn params(&self) -> Option<(&[T], &[T])> {
        match self {
            Layer::Conv2d(c) => Some((&c.weight, &c.bias)),
            Layer::Linear(l) => Some((&l.weight, &l.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut [T], &mut [T])> {
        match self {
            Layer::Conv2d(c) => Some((&mut c.weight, &mut c.bias)),
            Layer::Linear(l) => Some((&mut l.weight, &mut l.bias)),
            _ => None,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            Layer::Conv2d(c) => c.validate(),
            Layer::Linear(l) => Linear::new(l.in_dim, l.out_dim, l.weight.clone(), l.bias.clone()).map(|_| ()),
            Layer::MaxPool2d(p) if p.window == 0 || p.stride == 0 => {
                Err(Error::invalid("maxpool window and stride must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    /// Shape this layer produces from `input`, `None` if they do not compose.
    pub fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match self {
            Layer::Conv2d(c) => c.output_shape(as3(input)?).map(|s| s.to_vec()),
            Layer::MaxPool2d(p) => p.output_shape(as3(input)?).map(|s| s.to_vec()),
            Layer::Linear(l) => (input.len() == 1 && input[0] == l.in_dim).then(|| vec![l.out_dim]),
            Layer::Relu => Some(input.to_vec()),
            Layer::Flatten => Some(vec![input.iter().product()]),
        }
    }
}

pub(crate) fn as3(shape: &[usize]) -> Option<[usize; 3]> {
    match *shape {
        [c, h, w] => Some([c, h, w]),
        _ => None,
    }
}
