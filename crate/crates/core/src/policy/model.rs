//! Small convolutional policy with hand-written backpropagation.
//!
//! raster -> conv -> relu -> conv -> relu -> (flatten, speed) -> dense ->
//! relu -> dense heads. The heads emit, for every command and speed bin,
//! 9 steering logits, 3 throttle logits and one brake logit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::render::{RASTER_CHANNELS, RASTER_SIZE};
use crate::world::Command;

pub const N_STEER: usize = 9;
pub const N_THROTTLE: usize = 3;
/// Logits per (command, speed bin) head.
pub const HEAD_WIDTH: usize = N_STEER + N_THROTTLE + 1;
/// Speed divisor for the scalar speed input.
const SPEED_SCALE: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyArch {
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub hidden: usize,
    pub speed_bins: usize,
}

impl Default for PolicyArch {
    fn default() -> Self {
        Self {
            conv1_channels: 8,
            conv2_channels: 8,
            kernel: 3,
            stride: 2,
            hidden: 128,
            speed_bins: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvShape {
    in_c: usize,
    in_hw: usize,
    out_c: usize,
    out_hw: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl ConvShape {
    fn new(in_c: usize, in_hw: usize, out_c: usize, k: usize, stride: usize) -> Self {
        let pad = k / 2;
        Self {
            in_c,
            in_hw,
            out_c,
            out_hw: (in_hw + 2 * pad - k) / stride + 1,
            k,
            stride,
            pad,
        }
    }

    /// Output columns whose tap `kx` lands inside the input.
    #[inline]
    fn valid(&self, kx: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let kx = kx as isize;
        let lo = ((p - kx).max(0) + s - 1) / s;
        let hi = ((self.in_hw as isize - 1 + p - kx) / s + 1).min(self.out_hw as isize);
        (lo as usize, hi.max(lo as isize) as usize)
    }

    fn rows(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.out_hw * self.out_hw
    }

    /// Unfolds `x` into `[in_c * k * k][out_hw * out_hw]`; taps outside the input are 0.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (ih, oh, k, s) = (self.in_hw, self.out_hw, self.k, self.stride);
        cols.fill(0.0);
        for c in 0..self.in_c {
            let src = &x[c * ih * ih..(c + 1) * ih * ih];
            for ky in 0..k {
                let (ylo, yhi) = self.valid(ky);
                for kx in 0..k {
                    let (xlo, xhi) = self.valid(kx);
                    let r = (c * k + ky) * k + kx;
                    let dst = &mut cols[r * oh * oh..(r + 1) * oh * oh];
                    for oy in ylo..yhi {
                        let row = &src[(oy * s + ky - self.pad) * ih..];
                        for ox in xlo..xhi {
                            dst[oy * oh + ox] = row[ox * s + kx - self.pad];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvShape::im2col`], accumulating into `dx`.
    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let (ih, oh, k, s) = (self.in_hw, self.out_hw, self.k, self.stride);
        for c in 0..self.in_c {
            let dst = &mut dx[c * ih * ih..(c + 1) * ih * ih];
            for ky in 0..k {
                let (ylo, yhi) = self.valid(ky);
                for kx in 0..k {
                    let (xlo, xhi) = self.valid(kx);
                    let r = (c * k + ky) * k + kx;
                    let src = &cols[r * oh * oh..(r + 1) * oh * oh];
                    for oy in ylo..yhi {
                        let row = &mut dst[(oy * s + ky - self.pad) * ih..];
                        for ox in xlo..xhi {
                            row[ox * s + kx - self.pad] += src[oy * oh + ox];
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64], cols: &mut [f64]) {
        let p = self.positions();
        self.im2col(x, cols);
        for (o, dst) in out.chunks_mut(p).enumerate() {
            dst.fill(b[o]);
        }
        gemm(self.out_c, self.rows(), p, w, (self.rows(), 1), cols, (p, 1), out);
    }

    /// Accumulates weight and bias gradients; accumulates the input gradient when asked.
    fn backward(&self, x: &[f64], w: &[f64], dout: &[f64], dw: &mut [f64], db: &mut [f64], dx: Option<&mut [f64]>, cols: &mut [f64]) {
        let (p, kk) = (self.positions(), self.rows());
        for (o, g) in dout.chunks(p).enumerate() {
            db[o] += g.iter().sum::<f64>();
        }
        self.im2col(x, cols);
        gemm(self.out_c, p, kk, dout, (p, 1), cols, (1, p), dw);
        if let Some(dx) = dx {
            cols.fill(0.0);
            gemm(kk, self.out_c, p, w, (1, kk), dout, (p, 1), cols);
            self.col2im(cols, dx);
        }
    }
}

/// `c[m x n] += a[m x k] * b[k x n]` for arbitrarily strided `a` and `b`
/// (row stride, column stride); `c` is dense row-major.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!((m - 1) * sa.0 + (k - 1) * sa.1 < a.len());
    assert!((k - 1) * sb.0 + (n - 1) * sb.1 < b.len());
    assert!(m * n <= c.len());
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// A named parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: &str, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }
}

const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const FC_W: usize = 4;
const FC_B: usize = 5;
const HEAD_W: usize = 6;
const HEAD_B: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub arch: PolicyArch,
    pub params: Vec<Tensor>,
}

/// Activations of a batch, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub batch: usize,
    input: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    hidden: Vec<f64>,
    /// `[batch][output_len]`
    pub logits: Vec<f64>,
}

impl PolicyModel {
    fn shapes(arch: &PolicyArch) -> (ConvShape, ConvShape, usize) {
        let c1 = ConvShape::new(RASTER_CHANNELS, RASTER_SIZE, arch.conv1_channels, arch.kernel, arch.stride);
        let c2 = ConvShape::new(arch.conv1_channels, c1.out_hw, arch.conv2_channels, arch.kernel, arch.stride);
        let flat = c2.out_c * c2.out_hw * c2.out_hw + 1;
        (c1, c2, flat)
    }

    pub fn output_len(&self) -> usize {
        Command::COUNT * self.arch.speed_bins * HEAD_WIDTH
    }

    /// He-initialized weights, zero biases.
    pub fn new(arch: PolicyArch, seed: u64) -> Result<Self> {
        if arch.conv1_channels == 0 || arch.conv2_channels == 0 || arch.hidden == 0 || arch.speed_bins == 0 || arch.kernel == 0 || arch.stride == 0 {
            return Err(Error::Config("policy architecture sizes must be positive".into()));
        }
        let (c1, c2, flat) = Self::shapes(&arch);
        let out = Command::COUNT * arch.speed_bins * HEAD_WIDTH;
        let mut params = vec![
            Tensor::zeros("conv1.weight", &[c1.out_c, c1.in_c, c1.k, c1.k]),
            Tensor::zeros("conv1.bias", &[c1.out_c]),
            Tensor::zeros("conv2.weight", &[c2.out_c, c2.in_c, c2.k, c2.k]),
            Tensor::zeros("conv2.bias", &[c2.out_c]),
            Tensor::zeros("fc.weight", &[arch.hidden, flat]),
            Tensor::zeros("fc.bias", &[arch.hidden]),
            Tensor::zeros("head.weight", &[out, arch.hidden]),
            Tensor::zeros("head.bias", &[out]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = [c1.in_c * c1.k * c1.k, c2.in_c * c2.k * c2.k, flat, arch.hidden];
        for (t, fan) in [CONV1_W, CONV2_W, FC_W, HEAD_W].into_iter().zip(fan_in) {
            let scale = if t == HEAD_W { 0.1 } else { 1.0 };
            let normal = Normal::new(0.0, scale * (2.0 / fan as f64).sqrt()).expect("valid std");
            for v in &mut params[t].data {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(Self { arch, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.params.iter().map(|t| Tensor::zeros(&t.name, &t.shape)).collect()
    }

    /// Forward pass over a batch. Each raster is channel-major `[C][H][W]`
    /// in [0, 1].
    pub fn forward_batch(&self, rasters: &[&[f32]], speeds: &[f64]) -> Activations {
        let (c1, c2, flat) = Self::shapes(&self.arch);
        let p = &self.params;
        let b = rasters.len();
        let (h, out) = (self.arch.hidden, self.output_len());
        let in_len = c1.in_c * c1.in_hw * c1.in_hw;
        let l1 = c1.out_c * c1.positions();
        let input: Vec<f64> = rasters.iter().flat_map(|r| r.iter().map(|&v| f64::from(v))).collect();
        assert_eq!(input.len(), b * in_len, "raster size");
        let mut a1 = vec![0.0; b * l1];
        let mut a2 = vec![0.0; b * flat];
        let mut cols = vec![0.0; c1.rows() * c1.positions()];
        let mut cols2 = vec![0.0; c2.rows() * c2.positions()];
        for i in 0..b {
            let x1 = &mut a1[i * l1..(i + 1) * l1];
            c1.forward(&input[i * in_len..(i + 1) * in_len], &p[CONV1_W].data, &p[CONV1_B].data, x1, &mut cols);
            relu(x1);
            let x2 = &mut a2[i * flat..(i + 1) * flat];
            c2.forward(&a1[i * l1..(i + 1) * l1], &p[CONV2_W].data, &p[CONV2_B].data, &mut x2[..flat - 1], &mut cols2);
            relu(&mut x2[..flat - 1]);
            x2[flat - 1] = speeds[i] / SPEED_SCALE;
        }
        let mut hidden = repeat_rows(&p[FC_B].data, b);
        gemm(b, flat, h, &a2, (flat, 1), &p[FC_W].data, (1, flat), &mut hidden);
        relu(&mut hidden);
        let mut logits = repeat_rows(&p[HEAD_B].data, b);
        gemm(b, h, out, &hidden, (h, 1), &p[HEAD_W].data, (1, h), &mut logits);
        Activations {
            batch: b,
            input,
            a1,
            a2,
            hidden,
            logits,
        }
    }

    pub fn forward(&self, raster: &[f32], speed: f64) -> Activations {
        self.forward_batch(&[raster], &[speed])
    }

    pub fn logits(&self, raster: &[f32], speed: f64) -> Vec<f64> {
        self.forward(raster, speed).logits
    }

    /// Adds the parameter gradient for `dlogits` (`[batch][output_len]`) into `grads`.
    pub fn backward(&self, acts: &Activations, dlogits: &[f64], grads: &mut [Tensor]) {
        let (c1, c2, flat) = Self::shapes(&self.arch);
        let p = &self.params;
        let b = acts.batch;
        let (h, out) = (self.arch.hidden, self.output_len());
        assert_eq!(dlogits.len(), b * out);
        // heads
        add_column_sums(&mut grads[HEAD_B].data, dlogits, out);
        gemm(out, b, h, dlogits, (1, out), &acts.hidden, (h, 1), &mut grads[HEAD_W].data);
        let mut dhidden = vec![0.0; b * h];
        gemm(b, out, h, dlogits, (out, 1), &p[HEAD_W].data, (h, 1), &mut dhidden);
        mask_relu(&mut dhidden, &acts.hidden);
        // dense
        add_column_sums(&mut grads[FC_B].data, &dhidden, h);
        gemm(h, b, flat, &dhidden, (1, h), &acts.a2, (flat, 1), &mut grads[FC_W].data);
        let mut da2 = vec![0.0; b * flat];
        gemm(b, h, flat, &dhidden, (h, 1), &p[FC_W].data, (flat, 1), &mut da2);
        mask_relu(&mut da2, &acts.a2);
        // convolutions, one sample at a time
        let in_len = c1.in_c * c1.in_hw * c1.in_hw;
        let l1 = c1.out_c * c1.positions();
        let mut cols1 = vec![0.0; c1.rows() * c1.positions()];
        let mut cols2 = vec![0.0; c2.rows() * c2.positions()];
        let mut da1 = vec![0.0; l1];
        let (g1, g2) = grads.split_at_mut(CONV2_W);
        let (g1w, g1b) = g1.split_at_mut(CONV1_B);
        let (g2w, g2b) = g2.split_at_mut(1);
        for i in 0..b {
            let a1 = &acts.a1[i * l1..(i + 1) * l1];
            da1.fill(0.0);
            let d2 = &da2[i * flat..(i + 1) * flat - 1];
            c2.backward(a1, &p[CONV2_W].data, d2, &mut g2w[0].data, &mut g2b[0].data, Some(&mut da1), &mut cols2);
            mask_relu(&mut da1, a1);
            c1.backward(&acts.input[i * in_len..(i + 1) * in_len], &p[CONV1_W].data, &da1, &mut g1w[CONV1_W].data, &mut g1b[0].data, None, &mut cols1);
        }
    }

    /// Logits of one (command, speed bin) head.
    pub fn head<'a>(&self, logits: &'a [f64], command: Command, bin: usize) -> &'a [f64] {
        let off = (command.index() * self.arch.speed_bins + bin) * HEAD_WIDTH;
        &logits[off..off + HEAD_WIDTH]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

fn repeat_rows(row: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(row.len() * n);
    for _ in 0..n {
        out.extend_from_slice(row);
    }
    out
}

fn add_column_sums(acc: &mut [f64], m: &[f64], width: usize) {
    for row in m.chunks(width) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}

/// Zeroes gradients where the post-activation value is not positive.
fn mask_relu(grad: &mut [f64], act: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(act) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

fn relu(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_valid_ranges_cover_in_bounds_taps() {
        let c = ConvShape::new(1, 64, 1, 3, 2);
        assert_eq!(c.out_hw, 32);
        assert_eq!(c.valid(0), (1, 32));
        assert_eq!(c.valid(1), (0, 32));
        assert_eq!(c.valid(2), (0, 32));
        let c = ConvShape::new(1, 5, 1, 3, 1);
        assert_eq!(c.valid(0), (1, 5));
        assert_eq!(c.valid(2), (0, 4));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let c = ConvShape::new(2, 7, 3, 3, 2);
        let x: Vec<f64> = (0..2 * 49).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i * 13) % 7) as f64 * 0.1).collect();
        let b = vec![0.5, -1.0, 0.0];
        let mut out = vec![0.0; 3 * c.out_hw * c.out_hw];
        let mut cols = vec![0.0; c.rows() * c.positions()];
        c.forward(&x, &w, &b, &mut out, &mut cols);
        for o in 0..3 {
            for oy in 0..c.out_hw {
                for ox in 0..c.out_hw {
                    let mut s = b[o];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if (0..7).contains(&iy) && (0..7).contains(&ix) {
                                    s += w[((o * 2 + ci) * 3 + ky) * 3 + kx] * x[ci * 49 + (iy * 7 + ix) as usize];
                                }
                            }
                        }
                    }
                    assert!((s - out[(o * c.out_hw + oy) * c.out_hw + ox]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn default_output_layout() {
        let m = PolicyModel::new(PolicyArch::default(), 0).unwrap();
        assert_eq!(m.output_len(), 6 * 4 * 13);
        let l = m.logits(&vec![0.0; RASTER_CHANNELS * RASTER_SIZE * RASTER_SIZE], 3.0);
        assert_eq!(l.len(), 312);
        assert!(l.iter().all(|v| v.is_finite()));
        assert_eq!(m.head(&l, Command::ChangeRight, 3).len(), HEAD_WIDTH);
    }

    #[test]
    fn backward_matches_central_differences() {
        use rand::Rng;
        let arch = PolicyArch {
            conv1_channels: 3,
            conv2_channels: 4,
            hidden: 12,
            speed_bins: 2,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = PolicyModel::new(arch, 1).unwrap();
        let n_in = RASTER_CHANNELS * RASTER_SIZE * RASTER_SIZE;
        let xs: Vec<Vec<f32>> = (0..2).map(|_| (0..n_in).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let views: Vec<&[f32]> = xs.iter().map(|x| x.as_slice()).collect();
        let speeds = [2.0, 5.5];
        let r: Vec<f64> = (0..2 * m.output_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |m: &PolicyModel| -> f64 { m.forward_batch(&views, &speeds).logits.iter().zip(&r).map(|(a, b)| a * b).sum() };
        let mut grads = m.zeros_like();
        m.backward(&m.forward_batch(&views, &speeds), &r, &mut grads);
        for t in 0..m.params.len() {
            let dir: Vec<f64> = (0..m.params[t].data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let analytic: f64 = grads[t].data.iter().zip(&dir).map(|(g, d)| g * d).sum();
            let eps = 1e-6;
            let base = m.params[t].data.clone();
            for (w, (b, d)) in m.params[t].data.iter_mut().zip(base.iter().zip(&dir)) {
                *w = b + eps * d;
            }
            let up = objective(&m);
            for (w, (b, d)) in m.params[t].data.iter_mut().zip(base.iter().zip(&dir)) {
                *w = b - eps * d;
            }
            let down = objective(&m);
            m.params[t].data = base;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-12);
            assert!(rel < 1e-5, "{}: {numeric} vs {analytic}", m.params[t].name);
        }
    }
}
