//! Forward and backward kernels for the layer set used by the model zoo.
//!
//! Activations are NCHW. Every kernel here is a pure function of its inputs;
//! the tape in [`super::tape`] owns the bookkeeping.

use super::gemm::{gemm, Mat};
use super::{EngineError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self, EngineError> {
        let mismatch = || EngineError::ShapeMismatch {
            op: "conv2d",
            lhs: input.to_vec(),
            rhs: weight.to_vec(),
        };
        if input.len() != 4 || weight.len() != 4 || input[1] != weight[1] {
            return Err(mismatch());
        }
        if stride == 0 {
            return Err(EngineError::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let (h, w, kh, kw) = (input[2], input[3], weight[2], weight[3]);
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(mismatch());
        }
        Ok(Self {
            batch: input[0],
            in_channels: input[1],
            height: h,
            width: w,
            out_channels: weight[0],
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_spatial(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_channels, self.out_h, self.out_w]
    }
}

fn im2col(g: &ConvGeom, image: &[f32], col: &mut [f32]) {
    let p = g.out_spatial();
    for c in 0..g.in_channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, col: &[f32], image: &mut [f32]) {
    let p = g.out_spatial();
    for c in 0..g.in_channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation, `[N,Cin,H,W] * [Cout,Cin,kh,kw] + bias[Cout]`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, EngineError> {
    let g = ConvGeom::new(input.shape(), weight.shape(), stride, padding)?;
    if bias.shape() != [g.out_channels] {
        return Err(EngineError::ShapeMismatch {
            op: "conv2d bias",
            lhs: weight.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let p = g.out_spatial();
    let k = g.patch_len();
    let in_len = g.in_channels * g.height * g.width;
    let out_len = g.out_channels * p;
    let mut out = vec![0.0f32; g.batch * out_len];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0f32; k * p] };
    for n in 0..g.batch {
        let image = &input.data()[n * in_len..(n + 1) * in_len];
        let dst = &mut out[n * out_len..(n + 1) * out_len];
        for (oc, chunk) in dst.chunks_mut(p).enumerate() {
            chunk.fill(bias.data()[oc]);
        }
        let cols: &[f32] = if g.is_pointwise() {
            image
        } else {
            im2col(&g, image, &mut col);
            &col
        };
        gemm(g.out_channels, k, p, Mat::n(weight.data()), Mat::n(cols), 1.0, dst);
    }
    Tensor::new(g.output_shape(), out)
}

/// Accumulates `d_input` (if requested), `d_weight` and `d_bias` for a conv.
pub fn conv2d_backward(
    g: &ConvGeom,
    input: &[f32],
    weight: &[f32],
    d_out: &[f32],
    mut d_input: Option<&mut [f32]>,
    d_weight: &mut [f32],
    d_bias: &mut [f32],
) {
    let p = g.out_spatial();
    let k = g.patch_len();
    let in_len = g.in_channels * g.height * g.width;
    let out_len = g.out_channels * p;
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0f32; k * p] };
    let mut d_col = vec![0.0f32; k * p];
    for n in 0..g.batch {
        let image = &input[n * in_len..(n + 1) * in_len];
        let dy = &d_out[n * out_len..(n + 1) * out_len];
        for (oc, chunk) in dy.chunks(p).enumerate() {
            d_bias[oc] += chunk.iter().sum::<f32>();
        }
        let cols: &[f32] = if g.is_pointwise() {
            image
        } else {
            im2col(g, image, &mut col);
            &col
        };
        // dW[Cout,K] += dY[Cout,P] · colᵀ[P,K]
        gemm(g.out_channels, p, k, Mat::n(dy), Mat::t(cols), 1.0, d_weight);
        if let Some(dx) = d_input.as_deref_mut() {
            let dx_img = &mut dx[n * in_len..(n + 1) * in_len];
            if g.is_pointwise() {
                gemm(k, g.out_channels, p, Mat::t(weight), Mat::n(dy), 1.0, dx_img);
            } else {
                gemm(k, g.out_channels, p, Mat::t(weight), Mat::n(dy), 0.0, &mut d_col);
                col2im(g, &d_col, dx_img);
            }
        }
    }
}

/// Fully connected layer, `[N,In] · [Out,In]ᵀ + bias[Out]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, EngineError> {
    let (xs, ws) = (input.shape(), weight.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
        return Err(EngineError::ShapeMismatch {
            op: "linear",
            lhs: xs.to_vec(),
            rhs: ws.to_vec(),
        });
    }
    if bias.shape() != [ws[0]] {
        return Err(EngineError::ShapeMismatch {
            op: "linear bias",
            lhs: ws.to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let (n, inp, out) = (xs[0], xs[1], ws[0]);
    let mut y = Vec::with_capacity(n * out);
    for _ in 0..n {
        y.extend_from_slice(bias.data());
    }
    gemm(n, inp, out, Mat::n(input.data()), Mat::t(weight.data()), 1.0, &mut y);
    Tensor::new(vec![n, out], y)
}

pub fn linear_backward(
    input: &[f32],
    weight: &[f32],
    dims: (usize, usize, usize),
    d_out: &[f32],
    d_input: Option<&mut [f32]>,
    d_weight: &mut [f32],
    d_bias: &mut [f32],
) {
    let (n, inp, out) = dims;
    for row in d_out.chunks(out) {
        for (db, dy) in d_bias.iter_mut().zip(row) {
            *db += dy;
        }
    }
    // dW[Out,In] += dYᵀ[Out,N] · X[N,In]
    gemm(out, n, inp, Mat::t(d_out), Mat::n(input), 1.0, d_weight);
    if let Some(dx) = d_input {
        gemm(n, out, inp, Mat::n(d_out), Mat::n(weight), 1.0, dx);
    }
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor::new(
        input.shape().to_vec(),
        input.data().iter().map(|v| v.max(0.0)).collect(),
    )
    .expect("same shape")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeom {
    pub fn new(
        input: &[usize],
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self, EngineError> {
        if input.len() != 4 {
            return Err(EngineError::InvalidShape(input.to_vec()));
        }
        if kernel == 0 || stride == 0 || padding >= kernel {
            return Err(EngineError::InvalidArgument(format!(
                "maxpool kernel {kernel} stride {stride} padding {padding}"
            )));
        }
        let (h, w) = (input[2], input[3]);
        if h + 2 * padding < kernel || w + 2 * padding < kernel {
            return Err(EngineError::InvalidShape(input.to_vec()));
        }
        Ok(Self {
            batch: input[0],
            channels: input[1],
            height: h,
            width: w,
            kernel,
            stride,
            padding,
            out_h: (h + 2 * padding - kernel) / stride + 1,
            out_w: (w + 2 * padding - kernel) / stride + 1,
        })
    }
}

/// Max pooling; padded positions never win. Returns output and, for every
/// output element, the flat input index that produced it.
pub fn maxpool2d(
    input: &Tensor,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Vec<u32>), EngineError> {
    let g = PoolGeom::new(input.shape(), kernel, stride, padding)?;
    let planes = g.batch * g.channels;
    let mut out = Vec::with_capacity(planes * g.out_h * g.out_w);
    let mut arg = Vec::with_capacity(out.capacity());
    let x = input.data();
    for plane in 0..planes {
        let base = plane * g.height * g.width;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= g.width as isize {
                            continue;
                        }
                        let idx = base + iy as usize * g.width + ix as usize;
                        if best_idx == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx as u32);
            }
        }
    }
    let t = Tensor::new(vec![g.batch, g.channels, g.out_h, g.out_w], out)?;
    Ok((t, arg))
}

/// `[N,C,H,W] -> [N,C]` spatial mean.
pub fn global_avgpool(input: &Tensor) -> Result<Tensor, EngineError> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(EngineError::InvalidShape(s.to_vec()));
    }
    let hw = s[2] * s[3];
    let inv = 1.0 / hw as f32;
    let out = input
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().sum::<f32>() * inv)
        .collect();
    Tensor::new(vec![s[0], s[1]], out)
}

/// Concatenation along the channel axis of NCHW tensors.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor, EngineError> {
    let first = inputs
        .first()
        .ok_or_else(|| EngineError::InvalidArgument("concat of zero tensors".into()))?
        .shape();
    if first.len() != 4 {
        return Err(EngineError::InvalidShape(first.to_vec()));
    }
    let (n, h, w) = (first[0], first[2], first[3]);
    let mut channels = 0;
    for t in inputs {
        let s = t.shape();
        if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
            return Err(EngineError::ShapeMismatch {
                op: "concat",
                lhs: first.to_vec(),
                rhs: s.to_vec(),
            });
        }
        channels += s[1];
    }
    let mut out = Vec::with_capacity(n * channels * h * w);
    for b in 0..n {
        for t in inputs {
            let len = t.shape()[1] * h * w;
            out.extend_from_slice(&t.data()[b * len..(b + 1) * len]);
        }
    }
    Tensor::new(vec![n, channels, h, w], out)
}

/// Row-wise softmax of a `[N,C]` tensor.
pub fn softmax(input: &Tensor) -> Result<Tensor, EngineError> {
    let s = input.shape();
    if s.len() != 2 {
        return Err(EngineError::InvalidShape(s.to_vec()));
    }
    let mut out = Vec::with_capacity(input.numel());
    for row in input.data().chunks(s[1]) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let start = out.len();
        let mut z = 0.0;
        for v in row {
            let e = (v - m).exp();
            z += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e /= z);
    }
    Tensor::new(s.to_vec(), out)
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
/// Returns the loss and the softmax probabilities.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor), EngineError> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(EngineError::ShapeMismatch {
            op: "cross_entropy",
            lhs: s.to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= s[1]) {
        return Err(EngineError::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            s[1]
        )));
    }
    let probs = softmax(logits)?;
    let mut total = 0.0f64;
    for (row, &label) in logits.data().chunks(s[1]).zip(labels) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse = m as f64 + row.iter().map(|v| ((v - m) as f64).exp()).sum::<f64>().ln();
        total += lse - row[label] as f64;
    }
    Ok(((total / labels.len() as f64) as f32, probs))
}
