//! Forward and backward kernels for the layer types the pose network uses.
//!
//! Images are NHWC; convolution kernels are `[kh, kw, cin, cout]`;
//! fully connected weights are `[din, dout]`.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::NdArray;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Padding {
    /// Output spatial size is `ceil(input / stride)`, padding split with the
    /// smaller half before.
    Same,
    Valid,
}

/// Resolved sizes of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn same_dim(input: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(input);
    (out, total / 2)
}

impl ConvGeometry {
    pub fn new(input: [usize; 4], kernel: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        let [batch, in_h, in_w, in_c] = input;
        let &[k_h, k_w, k_in, out_c] = kernel else {
            return Err(Error::Shape {
                op: "conv2d kernel",
                expected: vec![0, 0, in_c, 0],
                actual: kernel.to_vec(),
            });
        };
        if k_in != in_c {
            return Err(Error::Shape {
                op: "conv2d",
                expected: vec![k_h, k_w, in_c, out_c],
                actual: kernel.to_vec(),
            });
        }
        if !matches!(k_h, 1 | 3) || !matches!(k_w, 1 | 3) {
            return Err(Error::InvalidConfig(alloc::format!(
                "conv2d kernel must be 1x1 or 3x3, got {k_h}x{k_w}"
            )));
        }
        if !matches!(stride, 1 | 2) {
            return Err(Error::InvalidConfig(alloc::format!(
                "conv2d stride must be 1 or 2, got {stride}"
            )));
        }
        let (out_h, pad_top, out_w, pad_left) = match padding {
            Padding::Same => {
                let (oh, pt) = same_dim(in_h, k_h, stride);
                let (ow, pl) = same_dim(in_w, k_w, stride);
                (oh, pt, ow, pl)
            }
            Padding::Valid => {
                if in_h < k_h || in_w < k_w {
                    return Err(Error::Shape {
                        op: "conv2d valid padding",
                        expected: vec![k_h, k_w],
                        actual: vec![in_h, in_w],
                    });
                }
                ((in_h - k_h) / stride + 1, 0, (in_w - k_w) / stride + 1, 0)
            }
        };
        Ok(Self {
            batch,
            in_h,
            in_w,
            in_c,
            k_h,
            k_w,
            out_c,
            stride,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_h, self.out_w, self.out_c]
    }

    /// Input row/column hit by output `o` and kernel tap `k`, if inside the image.
    #[inline]
    fn source(o: usize, k: usize, stride: usize, pad: usize, limit: usize) -> Option<usize> {
        let pos = (o * stride + k).checked_sub(pad)?;
        (pos < limit).then_some(pos)
    }

    pub(crate) fn forward(&self, input: &[f64], kernel: &[f64], out: &mut [f64]) {
        let (ci, co) = (self.in_c, self.out_c);
        for n in 0..self.batch {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let o_base = ((n * self.out_h + oy) * self.out_w + ox) * co;
                    let out_px = &mut out[o_base..o_base + co];
                    for ky in 0..self.k_h {
                        let Some(iy) = Self::source(oy, ky, self.stride, self.pad_top, self.in_h) else {
                            continue;
                        };
                        for kx in 0..self.k_w {
                            let Some(ix) = Self::source(ox, kx, self.stride, self.pad_left, self.in_w) else {
                                continue;
                            };
                            let i_base = ((n * self.in_h + iy) * self.in_w + ix) * ci;
                            let k_base = (ky * self.k_w + kx) * ci * co;
                            for (c, &v) in input[i_base..i_base + ci].iter().enumerate() {
                                if v == 0.0 {
                                    continue;
                                }
                                let row = &kernel[k_base + c * co..k_base + (c + 1) * co];
                                for (o, &k) in out_px.iter_mut().zip(row) {
                                    *o += v * k;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates input and kernel gradients for upstream gradient `grad_out`.
    pub(crate) fn backward(
        &self,
        input: &[f64],
        kernel: &[f64],
        grad_out: &[f64],
        mut grad_in: Option<&mut [f64]>,
        grad_kernel: &mut [f64],
    ) {
        let (ci, co) = (self.in_c, self.out_c);
        for n in 0..self.batch {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let o_base = ((n * self.out_h + oy) * self.out_w + ox) * co;
                    let g_px = &grad_out[o_base..o_base + co];
                    if g_px.iter().all(|&g| g == 0.0) {
                        continue;
                    }
                    for ky in 0..self.k_h {
                        let Some(iy) = Self::source(oy, ky, self.stride, self.pad_top, self.in_h) else {
                            continue;
                        };
                        for kx in 0..self.k_w {
                            let Some(ix) = Self::source(ox, kx, self.stride, self.pad_left, self.in_w) else {
                                continue;
                            };
                            let i_base = ((n * self.in_h + iy) * self.in_w + ix) * ci;
                            let k_base = (ky * self.k_w + kx) * ci * co;
                            for c in 0..ci {
                                let k_range = k_base + c * co..k_base + (c + 1) * co;
                                let v = input[i_base + c];
                                if v != 0.0 {
                                    for (gk, &g) in grad_kernel[k_range.clone()].iter_mut().zip(g_px) {
                                        *gk += v * g;
                                    }
                                }
                                if let Some(gi) = grad_in.as_deref_mut() {
                                    let row = &kernel[k_range];
                                    gi[i_base + c] += dot(row, g_px);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// 2-D convolution of an NHWC (or HWC) input.
pub fn conv2d(input: &NdArray, kernel: &NdArray, stride: usize, padding: Padding) -> Result<NdArray> {
    let geom = ConvGeometry::new(input.nhwc()?, kernel.shape(), stride, padding)?;
    let mut out = NdArray::zeros(&geom.output_shape());
    geom.forward(input.data(), kernel.data(), out.data_mut());
    if input.shape().len() == 3 {
        return out.reshape(&[geom.out_h, geom.out_w, geom.out_c]);
    }
    Ok(out)
}

pub fn relu(input: &NdArray) -> NdArray {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// `input [n, din] · weights [din, dout] + bias [dout]`; a rank-1 input is one row.
pub fn fully_connected(input: &NdArray, weights: &NdArray, bias: &NdArray) -> Result<NdArray> {
    let (rows, din) = match *input.shape() {
        [d] => (1, d),
        [n, d] => (n, d),
        _ => {
            return Err(Error::Shape {
                op: "fully_connected input",
                expected: vec![1, 0],
                actual: input.shape().to_vec(),
            })
        }
    };
    let &[w_in, dout] = weights.shape() else {
        return Err(Error::Shape {
            op: "fully_connected weights",
            expected: vec![din, 0],
            actual: weights.shape().to_vec(),
        });
    };
    if w_in != din || bias.len() != dout {
        return Err(Error::Shape {
            op: "fully_connected",
            expected: vec![din, bias.len()],
            actual: weights.shape().to_vec(),
        });
    }
    let mut out = NdArray::zeros(&[rows, dout]);
    linear_forward(input.data(), weights.data(), bias.data(), rows, din, dout, out.data_mut());
    Ok(out)
}

pub(crate) fn linear_forward(x: &[f64], w: &[f64], b: &[f64], rows: usize, din: usize, dout: usize, out: &mut [f64]) {
    for r in 0..rows {
        let o = &mut out[r * dout..(r + 1) * dout];
        o.copy_from_slice(b);
        for (i, &v) in x[r * din..(r + 1) * din].iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (acc, &wv) in o.iter_mut().zip(&w[i * dout..(i + 1) * dout]) {
                *acc += v * wv;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BatchNormConfig {
    /// Weight given to the newest batch statistic when updating running
    /// statistics: `running = (1 - momentum) * running + momentum * batch`.
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            epsilon: 1e-5,
        }
    }
}

/// Running per-channel statistics used in eval mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub(crate) fn update(mean: &mut [f64], var: &mut [f64], batch: &BatchStats, momentum: f64) {
        for (r, b) in mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in var.iter_mut().zip(&batch.var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

/// Biased per-channel moments of one batch plus what backward needs.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn channel_moments(x: &[f64], channels: usize, eps: f64) -> BatchStats {
    let count = (x.len() / channels) as f64;
    let mut mean = vec![0.0; channels];
    for px in x.chunks_exact(channels) {
        for (m, v) in mean.iter_mut().zip(px) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; channels];
    for px in x.chunks_exact(channels) {
        for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= count);
    let inv_std = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
    BatchStats { mean, var, inv_std }
}

/// Normalizes `x` per channel with `(x - mean) * inv_std * scale + shift`.
pub(crate) fn normalize(x: &[f64], channels: usize, mean: &[f64], inv_std: &[f64], scale: &[f64], shift: &[f64], out: &mut [f64]) {
    for (px, o) in x.chunks_exact(channels).zip(out.chunks_exact_mut(channels)) {
        for c in 0..channels {
            o[c] = (px[c] - mean[c]) * inv_std[c] * scale[c] + shift[c];
        }
    }
}

/// Batch normalization over every axis but the last.
///
/// Train mode normalizes with batch moments and folds them into `stats`;
/// eval mode normalizes with `stats` as they stand.
pub fn batch_norm(
    input: &NdArray,
    scale: &[f64],
    shift: &[f64],
    stats: &mut RunningStats,
    mode: Mode,
    config: BatchNormConfig,
) -> Result<NdArray> {
    let channels = *input.shape().last().unwrap_or(&0);
    if scale.len() != channels || shift.len() != channels || stats.mean.len() != channels {
        return Err(Error::Shape {
            op: "batch_norm",
            expected: vec![channels],
            actual: vec![scale.len(), shift.len(), stats.mean.len()],
        });
    }
    let mut out = NdArray::zeros(input.shape());
    match mode {
        Mode::Train => {
            let batch = channel_moments(input.data(), channels, config.epsilon);
            normalize(input.data(), channels, &batch.mean, &batch.inv_std, scale, shift, out.data_mut());
            RunningStats::update(&mut stats.mean, &mut stats.var, &batch, config.momentum);
        }
        Mode::Eval => {
            let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / libm::sqrt(v + config.epsilon)).collect();
            normalize(input.data(), channels, &stats.mean, &inv_std, scale, shift, out.data_mut());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> NdArray {
        NdArray::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct sliding-window oracle with explicit zero padding.
    fn conv_oracle(x: &NdArray, k: &NdArray, stride: usize) -> (Vec<f64>, usize, usize) {
        let &[h, w, ci] = x.shape() else { panic!() };
        let &[kh, kw, _, co] = k.shape() else { panic!() };
        let oh = h.div_ceil(stride);
        let ow = w.div_ceil(stride);
        let pt = (((oh - 1) * stride + kh) as isize - h as isize).max(0) / 2;
        let pl = (((ow - 1) * stride + kw) as isize - w as isize).max(0) / 2;
        let mut out = vec![0.0; oh * ow * co];
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..co {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pt;
                            let ix = (ox * stride + kx) as isize - pl;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for c in 0..ci {
                                acc += x.data()[(iy as usize * w + ix as usize) * ci + c]
                                    * k.data()[((ky * kw + kx) * ci + c) * co + o];
                            }
                        }
                    }
                    out[(oy * ow + ox) * co + o] = acc;
                }
            }
        }
        (out, oh, ow)
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[5, 4, 3], &mut rng);
        let k = NdArray::from_fn(&[1, 1, 3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        assert_eq!(conv2d(&x, &k, 1, Padding::Same).unwrap(), x);
    }

    #[test]
    fn same_padding_keeps_block4_shape() {
        let x = NdArray::filled(&[15, 10, 8], 0.5);
        let k = NdArray::filled(&[3, 3, 8, 16], 0.1);
        assert_eq!(conv2d(&x, &k, 1, Padding::Same).unwrap().shape(), &[15, 10, 16]);
    }

    #[test]
    fn stride_two_matches_sliding_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[4, 4, 1], &mut rng);
        let k = random(&[3, 3, 1, 1], &mut rng);
        let got = conv2d(&x, &k, 2, Padding::Same).unwrap();
        let (want, oh, ow) = conv_oracle(&x, &k, 2);
        assert_eq!(got.shape(), &[oh, ow, 1]);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        // multi-channel, odd sizes
        let x = random(&[7, 5, 3], &mut rng);
        let k = random(&[3, 3, 3, 2], &mut rng);
        for stride in [1, 2] {
            let got = conv2d(&x, &k, stride, Padding::Same).unwrap();
            let (want, _, _) = conv_oracle(&x, &k, stride);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ceil_mode_spatial_sequence() {
        let mut dims = (30, 20);
        let mut seen = vec![dims];
        for _ in 0..5 {
            let g = ConvGeometry::new([1, dims.0, dims.1, 1], &[3, 3, 1, 1], 2, Padding::Same).unwrap();
            dims = (g.out_h, g.out_w);
            seen.push(dims);
        }
        assert_eq!(seen, vec![(30, 20), (15, 10), (8, 5), (4, 3), (2, 2), (1, 1)]);
    }

    #[test]
    fn channel_mismatch_is_structural_error() {
        let x = NdArray::zeros(&[4, 4, 2]);
        let k = NdArray::zeros(&[3, 3, 3, 1]);
        assert!(matches!(conv2d(&x, &k, 1, Padding::Same), Err(Error::Shape { .. })));
        let k5 = NdArray::zeros(&[5, 5, 2, 1]);
        assert!(matches!(conv2d(&x, &k5, 1, Padding::Same), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn relu_examples() {
        let x = NdArray::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = NdArray::filled(&[4], -3.0);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fully_connected_examples() {
        let x = NdArray::new(vec![1, 3], vec![0.3, -1.2, 2.0]).unwrap();
        let eye = NdArray::from_fn(&[3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        assert_eq!(fully_connected(&x, &eye, &NdArray::zeros(&[3])).unwrap().data(), x.data());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random(&[3, 2], &mut rng);
        let b = random(&[2], &mut rng);
        let got = fully_connected(&x, &w, &b).unwrap();
        for j in 0..2 {
            let want: f64 = (0..3).map(|i| x.data()[i] * w.data()[i * 2 + j]).sum::<f64>() + b.data()[j];
            assert!((got.data()[j] - want).abs() < 1e-12);
        }
        let bad = NdArray::zeros(&[4, 2]);
        assert!(fully_connected(&x, &bad, &b).is_err());
    }

    #[test]
    fn batch_norm_constant_input_is_zero() {
        let x = NdArray::filled(&[2, 3, 3, 2], 4.2);
        let mut stats = RunningStats::new(2);
        let y = batch_norm(&x, &[1.0, 1.0], &[0.0, 0.0], &mut stats, Mode::Train, BatchNormConfig::default()).unwrap();
        // mean rounding leaves at most a few ulps, amplified by 1/sqrt(eps)
        assert!(y.data().iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn batch_norm_moments_match_scale_and_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[4, 3, 3, 2], &mut rng);
        let mut stats = RunningStats::new(2);
        let y = batch_norm(&x, &[2.0, 2.0], &[3.0, 3.0], &mut stats, Mode::Train, BatchNormConfig::default()).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = y.data().iter().skip(c).step_by(2).copied().collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = libm::sqrt(vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64);
            assert!((mean - 3.0).abs() < 1e-6);
            assert!((std - 2.0).abs() < 1e-3);
        }
    }

    #[test]
    fn momentum_one_makes_eval_match_train() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[3, 2, 2, 3], &mut rng);
        let cfg = BatchNormConfig { momentum: 1.0, epsilon: 1e-5 };
        let (scale, shift) = ([0.5, 1.5, -1.0], [0.1, 0.0, -0.2]);
        let mut stats = RunningStats::new(3);
        let train = batch_norm(&x, &scale, &shift, &mut stats, Mode::Train, cfg).unwrap();
        let eval = batch_norm(&x, &scale, &shift, &mut stats, Mode::Eval, cfg).unwrap();
        for (a, b) in train.data().iter().zip(eval.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_before_training_uses_unit_statistics() {
        let x = NdArray::new(vec![1, 1, 1, 2], vec![2.0, -1.0]).unwrap();
        let mut stats = RunningStats::new(2);
        let y = batch_norm(&x, &[1.0, 1.0], &[0.0, 0.0], &mut stats, Mode::Eval, BatchNormConfig::default()).unwrap();
        let f = 1.0 / libm::sqrt(1.0 + 1e-5);
        assert!((y.data()[0] - 2.0 * f).abs() < 1e-15);
        assert!((y.data()[1] + f).abs() < 1e-15);
    }
}
