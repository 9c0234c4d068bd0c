//! Normal images, a small strided convolutional encoder, and pixel-aligned
//! bilinear lookup.
//!
//! Images and feature maps share one sampling convention: texel `(i, j)`
//! covers `[i, i+1) × [j, j+1)` in its own grid, so its centre sits at
//! `(i + 0.5, j + 0.5)`. A feature map with downsample factor `f` is sampled
//! at `uv / f`. Coordinates outside the grid are clamped to the border
//! centres, so far-away queries return the nearest border texel.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dense::Activation;
use crate::geometry::Facing;
use crate::math::{floor, sqrt, Vec3};
use crate::{Error, Result};

/// Tolerance on the unit length of masked normals.
pub const UNIT_TOLERANCE: f64 = 1e-3;

/// Four bilinear taps `(flat index, weight)` on an `h × w` grid.
#[inline]
fn taps(x: f64, y: f64, h: usize, w: usize) -> [(usize, f64); 4] {
    let fx = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let (i0, j0) = (floor(fx) as usize, floor(fy) as usize);
    let (i1, j1) = ((i0 + 1).min(w - 1), (j0 + 1).min(h - 1));
    let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
    [
        (j0 * w + i0, (1.0 - tx) * (1.0 - ty)),
        (j0 * w + i1, tx * (1.0 - ty)),
        (j1 * w + i0, (1.0 - tx) * ty),
        (j1 * w + i1, tx * ty),
    ]
}

/// Per-pixel normals in the image convention of the rendering camera
/// (x right, y down, z toward the viewer), with a foreground mask.
/// Background pixels store the zero vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalImage {
    pub height: usize,
    pub width: usize,
    /// Row-major, index `v * width + u`.
    pub normals: Vec<Vec3>,
    pub mask: Vec<bool>,
    pub side: Facing,
}

impl NormalImage {
    pub fn empty(height: usize, width: usize, side: Facing) -> Self {
        NormalImage {
            height,
            width,
            normals: vec![Vec3::ZERO; height * width],
            mask: vec![false; height * width],
            side,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("normal image must be non-empty"));
        }
        Error::check_len("normal image pixels", self.height * self.width, self.normals.len())?;
        Error::check_len("normal image mask", self.height * self.width, self.mask.len())?;
        for (n, m) in self.normals.iter().zip(&self.mask) {
            if !n.is_finite() {
                return Err(Error::NonFinite("normal image"));
            }
            if *m && (n.norm() - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::invalid("masked normal is not unit length"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<Vec3> {
        let i = v * self.width + u;
        self.mask[i].then(|| self.normals[i])
    }

    pub fn set(&mut self, u: usize, v: usize, n: Option<Vec3>) {
        let i = v * self.width + u;
        self.mask[i] = n.is_some();
        self.normals[i] = n.unwrap_or(Vec3::ZERO);
    }

    pub fn coverage(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Bilinear normal at continuous pixel coordinates and the validity
    /// weight `Σ wᵢ·maskᵢ` of the taps. The vector is not renormalised.
    pub fn sample(&self, u: f64, v: f64) -> (Vec3, f64) {
        let mut n = Vec3::ZERO;
        let mut valid = 0.0;
        for (i, w) in taps(u, v, self.height, self.width) {
            if self.mask[i] {
                n += self.normals[i] * w;
                valid += w;
            }
        }
        (n, valid)
    }

    /// Channel-major `3 × H × W` encoder input; background is zero.
    pub fn to_channels(&self) -> Vec<f64> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; 3 * hw];
        for (i, n) in self.normals.iter().enumerate() {
            if self.mask[i] {
                out[i] = n.x;
                out[hw + i] = n.y;
                out[2 * hw + i] = n.z;
            }
        }
        out
    }
}

/// Channel-major `C × H × W` feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Source-image pixels per feature texel along each axis.
    pub factor: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize, factor: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            factor,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    fn taps(&self, u: f64, v: f64) -> [(usize, f64); 4] {
        let f = self.factor as f64;
        taps(u / f, v / f, self.height, self.width)
    }

    /// Bilinear feature at source-image pixel coordinates.
    pub fn sample_into(&self, u: f64, v: f64, out: &mut [f64]) {
        let hw = self.height * self.width;
        let t = self.taps(u, v);
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let plane = &self.data[c * hw..(c + 1) * hw];
            *o = t.iter().map(|(i, w)| plane[*i] * w).sum();
        }
    }

    pub fn sample(&self, u: f64, v: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.sample_into(u, v, &mut out);
        out
    }

    /// Adds the pullback of a feature adjoint at `(u, v)` into `grad`
    /// (same layout as `data`).
    pub fn sample_backward(&self, u: f64, v: f64, adj: &[f64], grad: &mut [f64]) {
        let hw = self.height * self.width;
        let t = self.taps(u, v);
        for (c, a) in adj.iter().enumerate().take(self.channels) {
            if *a == 0.0 {
                continue;
            }
            for (i, w) in t {
                grad[c * hw + i] += a * w;
            }
        }
    }
}

/// `ceil(n / 2)`, the output size of a stride-2, pad-1, 3×3 convolution.
#[inline]
fn half(n: usize) -> usize {
    n.div_ceil(2)
}

/// Shape of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub const KERNEL: usize = 3;

    pub fn out_dims(&self) -> (usize, usize) {
        let k = Self::KERNEL;
        (
            (self.h_in + 2 * self.pad - k) / self.stride + 1,
            (self.w_in + 2 * self.pad - k) / self.stride + 1,
        )
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * Self::KERNEL * Self::KERNEL
    }

    #[inline]
    fn src(&self, o: usize, k: usize, n: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < n).then_some(i as usize)
    }
}

/// 3×3 cross-correlation, weight layout `[c_out][c_in][ky][kx]`.
pub fn conv2d(shape: &ConvShape, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let k = ConvShape::KERNEL;
    let (ho, wo) = shape.out_dims();
    let (hi, wi) = (shape.h_in, shape.w_in);
    let mut out = vec![0.0; shape.c_out * ho * wo];
    for co in 0..shape.c_out {
        let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
        plane.fill(bias[co]);
        for ci in 0..shape.c_in {
            let src = &input[ci * hi * wi..(ci + 1) * hi * wi];
            let wk = &weight[(co * shape.c_in + ci) * k * k..(co * shape.c_in + ci + 1) * k * k];
            for oy in 0..ho {
                for ky in 0..k {
                    let Some(iy) = shape.src(oy, ky, hi) else { continue };
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for kx in 0..k {
                            if let Some(ix) = shape.src(ox, kx, wi) {
                                acc += wk[ky * k + kx] * src[iy * wi + ix];
                            }
                        }
                        plane[oy * wo + ox] += acc;
                    }
                }
            }
        }
    }
    out
}

/// Reverse pass of [`conv2d`]: accumulates weight and bias gradients and
/// returns the input adjoint.
fn conv2d_backward(
    shape: &ConvShape,
    input: &[f64],
    weight: &[f64],
    out_adj: &[f64],
    w_grad: &mut [f64],
    b_grad: &mut [f64],
    want_input: bool,
) -> Vec<f64> {
    let k = ConvShape::KERNEL;
    let (ho, wo) = shape.out_dims();
    let (hi, wi) = (shape.h_in, shape.w_in);
    let mut in_adj = if want_input {
        vec![0.0; shape.c_in * hi * wi]
    } else {
        Vec::new()
    };
    for co in 0..shape.c_out {
        let g = &out_adj[co * ho * wo..(co + 1) * ho * wo];
        b_grad[co] += g.iter().sum::<f64>();
        for ci in 0..shape.c_in {
            let src = &input[ci * hi * wi..(ci + 1) * hi * wi];
            let base = (co * shape.c_in + ci) * k * k;
            for oy in 0..ho {
                for ky in 0..k {
                    let Some(iy) = shape.src(oy, ky, hi) else { continue };
                    for ox in 0..wo {
                        let a = g[oy * wo + ox];
                        if a == 0.0 {
                            continue;
                        }
                        for kx in 0..k {
                            if let Some(ix) = shape.src(ox, kx, wi) {
                                w_grad[base + ky * k + kx] += a * src[iy * wi + ix];
                                if want_input {
                                    in_adj[ci * hi * wi + iy * wi + ix] += a * weight[base + ky * k + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    in_adj
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    /// Output channels of each stride-2 layer; the last entry is `C′`.
    pub channels: Vec<usize>,
    /// Applied after every layer but the last.
    pub activation: Activation,
}

impl EncoderSpec {
    pub fn new(height: usize, width: usize) -> Self {
        EncoderSpec {
            height,
            width,
            in_channels: 3,
            channels: vec![16, 32, 64, 64],
            activation: Activation::Softplus { beta: 1.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.in_channels == 0 {
            return Err(Error::invalid("encoder input must be non-empty"));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::invalid("encoder needs at least one non-empty layer"));
        }
        Ok(())
    }

    pub fn factor(&self) -> usize {
        1 << self.channels.len()
    }

    pub fn output_channels(&self) -> usize {
        *self.channels.last().unwrap_or(&0)
    }

    pub fn output_dims(&self) -> (usize, usize) {
        let f = self.factor();
        (self.height.div_ceil(f), self.width.div_ceil(f))
    }

    pub fn shapes(&self) -> Vec<ConvShape> {
        let (mut h, mut w, mut c) = (self.height, self.width, self.in_channels);
        self.channels
            .iter()
            .map(|&co| {
                let s = ConvShape {
                    c_in: c,
                    c_out: co,
                    h_in: h,
                    w_in: w,
                    stride: 2,
                    pad: 1,
                };
                (h, w, c) = (half(h), half(w), co);
                s
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.shapes().iter().map(|s| s.weight_len() + s.c_out).sum()
    }
}

/// Activations recorded by [`Encoder::forward_tape`].
#[derive(Debug, Clone)]
pub struct EncoderTape {
    /// Input of each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub spec: EncoderSpec,
    shapes: Vec<ConvShape>,
    /// Weight offset of each layer; its bias follows the weights.
    offsets: Vec<usize>,
    len: usize,
}

impl Encoder {
    pub fn new(spec: EncoderSpec) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.shapes();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut len = 0;
        for s in &shapes {
            offsets.push(len);
            len += s.weight_len() + s.c_out;
        }
        Ok(Encoder {
            spec,
            shapes,
            offsets,
            len,
        })
    }

    pub fn param_count(&self) -> usize {
        self.len
    }

    fn layer_params<'a>(&self, params: &'a [f64], l: usize) -> (&'a [f64], &'a [f64]) {
        let s = &self.shapes[l];
        let o = self.offsets[l];
        let (w, b) = params[o..o + s.weight_len() + s.c_out].split_at(s.weight_len());
        (w, b)
    }

    /// He-style normal weights, zero biases.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng_from_seed(seed);
        let mut p = vec![0.0; self.len];
        for (l, s) in self.shapes.iter().enumerate() {
            let fan_in = (s.c_in * ConvShape::KERNEL * ConvShape::KERNEL) as f64;
            let d = Normal::new(0.0, sqrt(2.0 / fan_in)).unwrap();
            let o = self.offsets[l];
            for w in &mut p[o..o + s.weight_len()] {
                *w = d.sample(&mut rng);
            }
        }
        p
    }

    fn check(&self, params: &[f64], image: &NormalImage) -> Result<()> {
        Error::check_len("encoder parameters", self.len, params.len())?;
        Error::check_len("encoder input height", self.spec.height, image.height)?;
        Error::check_len("encoder input width", self.spec.width, image.width)?;
        Error::check_len("encoder input channels", self.spec.in_channels, 3)
    }

    pub fn forward_tape(&self, params: &[f64], image: &NormalImage) -> Result<(FeatureMap, EncoderTape)> {
        self.check(params, image)?;
        let n = self.shapes.len();
        let mut tape = EncoderTape {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
        };
        let mut x = image.to_channels();
        for (l, s) in self.shapes.iter().enumerate() {
            let (w, b) = self.layer_params(params, l);
            let z = conv2d(s, &x, w, b);
            tape.inputs.push(x);
            x = if l + 1 < n {
                z.iter().map(|v| self.spec.activation.value(*v)).collect()
            } else {
                z.clone()
            };
            tape.pre.push(z);
        }
        let (h, w) = self.spec.output_dims();
        let fmap = FeatureMap {
            channels: self.spec.output_channels(),
            height: h,
            width: w,
            factor: self.spec.factor(),
            data: x,
        };
        Ok((fmap, tape))
    }

    pub fn encode(&self, params: &[f64], image: &NormalImage) -> Result<FeatureMap> {
        Ok(self.forward_tape(params, image)?.0)
    }

    /// Accumulates `∂L/∂params` given `∂L/∂fmap.data`.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &EncoderTape,
        fmap_adj: &[f64],
        param_grad: &mut [f64],
    ) -> Result<()> {
        Error::check_len("encoder parameters", self.len, params.len())?;
        Error::check_len("encoder gradient", self.len, param_grad.len())?;
        let n = self.shapes.len();
        Error::check_len("feature map adjoint", tape.pre[n - 1].len(), fmap_adj.len())?;
        let mut adj = fmap_adj.to_vec();
        for l in (0..n).rev() {
            if l + 1 < n {
                for (a, z) in adj.iter_mut().zip(&tape.pre[l]) {
                    *a *= self.spec.activation.derivs(*z).1;
                }
            }
            let s = &self.shapes[l];
            let (w, _) = self.layer_params(params, l);
            let o = self.offsets[l];
            let (gw, gb) = param_grad[o..o + s.weight_len() + s.c_out].split_at_mut(s.weight_len());
            adj = conv2d_backward(s, &tape.inputs[l], w, &adj, gw, gb, l > 0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> NormalImage {
        let mut rng = crate::rng_from_seed(seed);
        let mut img = NormalImage::empty(h, w, Facing::Front);
        for v in 0..h {
            for u in 0..w {
                if rng.random::<f64>() < 0.7 {
                    let n = Vec3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(0.1..1.0),
                    );
                    img.set(u, v, Some(n.normalize_or_zero()));
                }
            }
        }
        img
    }

    #[test]
    fn output_dims_follow_factor() {
        for (h, w) in [(64, 64), (37, 50), (1, 1), (17, 16)] {
            let enc = Encoder::new(EncoderSpec::new(h, w)).unwrap();
            let p = enc.init(1);
            let img = random_image(h, w, 2);
            let f = enc.encode(&p, &img).unwrap();
            assert_eq!((f.height, f.width), (h.div_ceil(16), w.div_ceil(16)));
            assert_eq!(f.data.len(), 64 * f.height * f.width);
        }
    }

    #[test]
    fn zero_encoder_gives_zero_map() {
        let enc = Encoder::new(EncoderSpec::new(32, 32)).unwrap();
        let p = vec![0.0; enc.param_count()];
        let f = enc.encode(&p, &NormalImage::empty(32, 32, Facing::Front)).unwrap();
        assert!(f.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn wrong_size_rejected() {
        let enc = Encoder::new(EncoderSpec::new(32, 32)).unwrap();
        let p = enc.init(0);
        assert!(enc.encode(&p, &NormalImage::empty(32, 31, Facing::Front)).is_err());
    }

    #[test]
    fn encoder_backward_matches_finite_differences() {
        let mut spec = EncoderSpec::new(9, 7);
        spec.channels = vec![3, 4];
        let enc = Encoder::new(spec).unwrap();
        let p = enc.init(5);
        let img = random_image(9, 7, 6);
        let (f, tape) = enc.forward_tape(&p, &img).unwrap();
        let mut rng = crate::rng_from_seed(7);
        let c: Vec<f64> = (0..f.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |q: &[f64]| -> f64 {
            let f = enc.encode(q, &img).unwrap();
            f.data.iter().zip(&c).map(|(a, b)| a * b).sum()
        };
        let mut g = vec![0.0; p.len()];
        enc.backward(&p, &tape, &c, &mut g).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] += h;
            let lp = loss(&q);
            q[i] -= 2.0 * h;
            let lm = loss(&q);
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn feature_sampling_at_centres_and_midpoints() {
        let mut f = FeatureMap::zeros(2, 2, 3, 4);
        for (i, v) in f.data.iter_mut().enumerate() {
            *v = i as f64;
        }
        // texel (1, 0) has its centre at (1.5, 0.5) in map coords
        assert_eq!(f.sample(1.5 * 4.0, 0.5 * 4.0), vec![1.0, 7.0]);
        let mid = f.sample(1.0 * 4.0, 0.5 * 4.0);
        assert_eq!(mid, vec![0.5, 6.5]);
        assert_eq!(f.sample(-100.0, 100.0), vec![3.0, 9.0]);
    }

    #[test]
    fn image_sampling_reports_validity() {
        let mut img = NormalImage::empty(2, 2, Facing::Front);
        img.set(0, 0, Some(Vec3::Z));
        let (n, w) = img.sample(1.0, 1.0);
        assert_eq!(w, 0.25);
        assert_eq!(n, Vec3::Z * 0.25);
        assert_eq!(img.sample(0.5, 0.5), (Vec3::Z, 1.0));
    }
}
