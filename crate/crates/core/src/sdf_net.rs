//! Coordinate networks `F(features, x)` predicting signed distance.
//!
//! The input vector is `[features | posenc(x)]`. Derivatives with respect to
//! the raw 3D coordinate are chained through the positional encoding; image
//! features are treated as constants of `x`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dense::{Activation, DenseNet, DenseSpec, ParamLayout, SkipMode};
use crate::math::{cos, sin, sqrt, Vec3};
use crate::{Error, Result};

/// Rows per internal batch chunk.
const CHUNK: usize = 256;

/// NeRF-style encoding `[x, sin(2⁰πx), cos(2⁰πx), …, sin(2^{L-1}πx), cos(2^{L-1}πx)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionalEncoding {
    pub frequencies: usize,
    pub include_input: bool,
}

impl Default for PositionalEncoding {
    fn default() -> Self {
        PositionalEncoding {
            frequencies: 6,
            include_input: true,
        }
    }
}

impl PositionalEncoding {
    pub const IDENTITY: PositionalEncoding = PositionalEncoding {
        frequencies: 0,
        include_input: true,
    };

    pub fn output_dim(&self) -> usize {
        6 * self.frequencies + if self.include_input { 3 } else { 0 }
    }

    pub fn encode_into(&self, x: Vec3, out: &mut [f64]) {
        let mut o = 0;
        if self.include_input {
            out[..3].copy_from_slice(&x.to_array());
            o = 3;
        }
        let mut freq = PI;
        for _ in 0..self.frequencies {
            for a in 0..3 {
                out[o + a] = sin(freq * x[a]);
                out[o + 3 + a] = cos(freq * x[a]);
            }
            o += 6;
            freq *= 2.0;
        }
    }

    pub fn encode(&self, x: Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.encode_into(x, &mut out);
        out
    }

    /// Directional derivative `J(x)·dir` of the encoding.
    pub fn tangent_into(&self, x: Vec3, dir: Vec3, out: &mut [f64]) {
        let mut o = 0;
        if self.include_input {
            out[..3].copy_from_slice(&dir.to_array());
            o = 3;
        }
        let mut freq = PI;
        for _ in 0..self.frequencies {
            for a in 0..3 {
                out[o + a] = freq * cos(freq * x[a]) * dir[a];
                out[o + 3 + a] = -freq * sin(freq * x[a]) * dir[a];
            }
            o += 6;
            freq *= 2.0;
        }
    }

    /// `Jᵀ·adj`: pulls an encoding-space adjoint back to `x`.
    pub fn pullback(&self, x: Vec3, adj: &[f64]) -> Vec3 {
        let mut g = Vec3::ZERO;
        let mut o = 0;
        if self.include_input {
            g = Vec3::new(adj[0], adj[1], adj[2]);
            o = 3;
        }
        let mut freq = PI;
        for _ in 0..self.frequencies {
            for a in 0..3 {
                g[a] += freq * cos(freq * x[a]) * adj[o + a] - freq * sin(freq * x[a]) * adj[o + 3 + a];
            }
            o += 6;
            freq *= 2.0;
        }
        g
    }
}

/// Free-standing form of [`PositionalEncoding::encode`].
pub fn posenc(x: Vec3, enc: &PositionalEncoding) -> Vec<f64> {
    enc.encode(x)
}

/// Architecture of an SDF network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// `widths[0] = feature_dim + encoding.output_dim()`, last entry 1.
    pub widths: Vec<usize>,
    #[serde(default)]
    pub skips: Vec<usize>,
    #[serde(default)]
    pub skip_mode: SkipMode,
    #[serde(default)]
    pub activation: Activation,
    /// Leading input entries that are not coordinates (image features,
    /// canonical normal).
    #[serde(default)]
    pub feature_dim: usize,
    #[serde(default)]
    pub encoding: PositionalEncoding,
}

impl MlpSpec {
    /// Network on features and encoded position with the given hidden widths.
    pub fn new(feature_dim: usize, encoding: PositionalEncoding, hidden: &[usize], skips: Vec<usize>) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(feature_dim + encoding.output_dim());
        widths.extend_from_slice(hidden);
        widths.push(1);
        MlpSpec {
            widths,
            skips,
            skip_mode: SkipMode::Concat,
            activation: Activation::default(),
            feature_dim,
            encoding,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn dense_spec(&self) -> DenseSpec {
        DenseSpec {
            widths: self.widths.clone(),
            skips: self.skips.clone(),
            skip_mode: self.skip_mode,
            activation: self.activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dense_spec().validate()?;
        Error::check_len(
            "first layer width",
            self.feature_dim + self.encoding.output_dim(),
            self.widths[0],
        )?;
        Error::check_len("output width", 1, *self.widths.last().unwrap())
    }

    /// Parameter count without building the network.
    pub fn param_count(&self) -> usize {
        ParamLayout::new(&self.dense_spec()).len
    }
}

/// Evaluator for an [`MlpSpec`]. Parameters are passed per call; the value
/// holds no mutable state.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfNet {
    pub spec: MlpSpec,
    net: DenseNet,
}

/// Per-sample adjoints of a loss with respect to `F` and `∇ₓF`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleAdjoint {
    pub value: f64,
    pub gradient: Vec3,
}

impl SdfNet {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let net = DenseNet::new(spec.dense_spec())?;
        Ok(SdfNet { spec, net })
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.net.layout
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    fn check(&self, params: &[f64], features: &[f64], n: usize) -> Result<()> {
        Error::check_len("parameter vector", self.param_count(), params.len())?;
        Error::check_len("feature block", n * self.spec.feature_dim, features.len())
    }

    fn build_input(&self, features: &[f64], coords: &[Vec3]) -> Vec<f64> {
        let fd = self.spec.feature_dim;
        let d = self.spec.input_dim();
        let mut u = vec![0.0; coords.len() * d];
        for (r, x) in coords.iter().enumerate() {
            u[r * d..r * d + fd].copy_from_slice(&features[r * fd..(r + 1) * fd]);
            self.spec.encoding.encode_into(*x, &mut u[r * d + fd..(r + 1) * d]);
        }
        u
    }

    /// `F` for one raw input vector `[features | posenc(x)]`.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<f64> {
        Error::check_len("network input", self.spec.input_dim(), input.len())?;
        Ok(self.net.forward(params, input, 1)?[0])
    }

    /// `F` for one sample.
    pub fn value(&self, params: &[f64], features: &[f64], x: Vec3) -> Result<f64> {
        Ok(self.values(params, features, &[x])?[0])
    }

    /// `F` over a batch; `features` is row-major `coords.len() × feature_dim`.
    pub fn values(&self, params: &[f64], features: &[f64], coords: &[Vec3]) -> Result<Vec<f64>> {
        self.check(params, features, coords.len())?;
        let fd = self.spec.feature_dim;
        let mut out = Vec::with_capacity(coords.len());
        for (c, xs) in coords.chunks(CHUNK).enumerate() {
            let f = &features[c * CHUNK * fd..(c * CHUNK + xs.len()) * fd];
            let u = self.build_input(f, xs);
            out.extend(self.net.forward(params, &u, xs.len())?);
        }
        Ok(out)
    }

    /// `∇ₓF` for one sample.
    pub fn grad_input(&self, params: &[f64], features: &[f64], x: Vec3) -> Result<Vec3> {
        Ok(self.values_and_grads(params, features, &[x])?.1[0])
    }

    /// `F` and `∇ₓF` over a batch.
    pub fn values_and_grads(
        &self,
        params: &[f64],
        features: &[f64],
        coords: &[Vec3],
    ) -> Result<(Vec<f64>, Vec<Vec3>)> {
        self.check(params, features, coords.len())?;
        let fd = self.spec.feature_dim;
        let d = self.spec.input_dim();
        let mut values = Vec::with_capacity(coords.len());
        let mut grads = Vec::with_capacity(coords.len());
        for (c, xs) in coords.chunks(CHUNK).enumerate() {
            let rows = xs.len();
            let f = &features[c * CHUNK * fd..(c * CHUNK + rows) * fd];
            let u = self.build_input(f, xs);
            let tape = self.net.forward_tape(params, &u, rows)?;
            let ubar = self.net.backward(params, &tape, &vec![1.0; rows], None)?;
            values.extend_from_slice(tape.output());
            for (r, x) in xs.iter().enumerate() {
                grads.push(self.spec.encoding.pullback(*x, &ubar[r * d + fd..(r + 1) * d]));
            }
        }
        Ok((values, grads))
    }

    /// Accumulates `∂L/∂params` into `param_grad` for a loss whose per-sample
    /// adjoints with respect to `F` and `∇ₓF` are given. The `∇ₓF` path is
    /// differentiated exactly (reverse over forward tangent).
    ///
    /// When `feature_grad` is given, `∂L/∂features` is accumulated there
    /// (row-major like `features`).
    pub fn grad_params(
        &self,
        params: &[f64],
        features: &[f64],
        coords: &[Vec3],
        adjoints: &[SampleAdjoint],
        param_grad: &mut [f64],
        mut feature_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        self.check(params, features, coords.len())?;
        Error::check_len("adjoints", coords.len(), adjoints.len())?;
        Error::check_len("parameter gradient", self.param_count(), param_grad.len())?;
        if let Some(fg) = feature_grad.as_deref() {
            Error::check_len("feature gradient", features.len(), fg.len())?;
        }
        let fd = self.spec.feature_dim;
        let d = self.spec.input_dim();
        for (c, xs) in coords.chunks(CHUNK).enumerate() {
            let rows = xs.len();
            let start = c * CHUNK;
            let adj = &adjoints[start..start + rows];
            if adj.iter().all(|a| a.value == 0.0 && a.gradient == Vec3::ZERO) {
                continue;
            }
            let f = &features[start * fd..(start + rows) * fd];
            let u = self.build_input(f, xs);
            let mut u_dot = vec![0.0; rows * d];
            for (r, x) in xs.iter().enumerate() {
                self.spec
                    .encoding
                    .tangent_into(*x, adj[r].gradient, &mut u_dot[r * d + fd..(r + 1) * d]);
            }
            let value_adj: Vec<f64> = adj.iter().map(|a| a.value).collect();
            let tape = self.net.forward_tape(params, &u, rows)?;
            let ubar = self
                .net
                .second_order_backward(params, &tape, &u_dot, &value_adj, param_grad)?;
            if let Some(fg) = feature_grad.as_deref_mut() {
                for r in 0..rows {
                    for k in 0..fd {
                        fg[(start + r) * fd + k] += ubar[r * d + k];
                    }
                }
            }
        }
        Ok(())
    }
}

fn normal(rng: &mut crate::Rng, mean: f64, std: f64) -> f64 {
    Normal::new(mean, std).unwrap().sample(rng)
}

/// Initialisation making the untrained network approximate `‖x‖ − radius`
/// on coordinate-only input. Non-coordinate input columns start at zero so
/// features and higher encoding bands enter only through training.
///
/// Sine networks get the usual sine-network uniform initialisation with the
/// output bias set to `−radius` instead; no sphere approximation is implied.
pub fn geometric_init(spec: &MlpSpec, radius: f64, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    if !(radius > 0.0) {
        return Err(Error::invalid("init radius must be positive"));
    }
    let layout = ParamLayout::new(&spec.dense_spec());
    let mut rng = crate::rng_from_seed(seed);
    let mut p = vec![0.0; layout.len];
    let n = layout.layers.len();
    let d_in = spec.input_dim();
    // raw coordinate columns within the network input
    let raw = if spec.encoding.include_input {
        spec.feature_dim..spec.feature_dim + 3
    } else {
        0..0
    };
    if let Activation::Sine { omega } = spec.activation {
        for (l, blk) in layout.layers.iter().enumerate() {
            let bound = if l == 0 {
                1.0 / blk.cols as f64
            } else {
                sqrt(6.0 / blk.cols as f64) / omega
            };
            let dist = Uniform::new_inclusive(-bound, bound).unwrap();
            for w in &mut p[blk.weight.clone()] {
                *w = dist.sample(&mut rng);
            }
            if l + 1 == n {
                p[blk.bias.clone()].fill(-radius);
            }
        }
        return Ok(p);
    }
    for (l, blk) in layout.layers.iter().enumerate() {
        let w = &mut p[blk.weight.clone()];
        if l + 1 == n {
            let mean = sqrt(PI) / sqrt(blk.cols as f64);
            for v in w.iter_mut() {
                *v = normal(&mut rng, mean, 1e-4);
            }
            p[blk.bias.clone()].fill(-radius);
            continue;
        }
        let std = sqrt(2.0) / sqrt(blk.rows as f64);
        // input columns in this layer that carry the network input
        let input_cols = if l == 0 {
            Some(0)
        } else if spec.skip_mode == SkipMode::Concat && spec.skips.contains(&l) {
            Some(blk.cols - d_in)
        } else {
            None
        };
        for r in 0..blk.rows {
            for c in 0..blk.cols {
                let keep = match input_cols {
                    Some(off) if c >= off => raw.contains(&(c - off)),
                    _ => true,
                };
                let v = normal(&mut rng, 0.0, std);
                if keep {
                    w[r * blk.cols + c] = v;
                }
            }
        }
    }
    Ok(p)
}

/// Parameters drawn uniformly from `[-scale, scale)`.
pub fn random_params(n: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = crate::rng_from_seed(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect()
}
