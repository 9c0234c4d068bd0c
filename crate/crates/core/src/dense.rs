//! Fully connected networks over row-major batches.
//!
//! Parameters live in one flat `[f64]` slice described by a [`ParamLayout`].
//! Every layer is `z = W·a + b` with `W` stored row-major as `out × in`.
//! Besides the usual forward/backward passes this module provides the
//! forward-tangent and reverse-over-tangent passes needed to differentiate a
//! loss on `∇ₓF` with respect to the parameters.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::math::{cos, exp, ln_1p, sin};
use crate::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Activation {
    /// `ln(1 + e^{βx}) / β`
    Softplus { beta: f64 },
    /// `sin(ω x)`
    Sine { omega: f64 },
    Relu,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Softplus { beta: 100.0 }
    }
}

impl Activation {
    #[inline]
    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Softplus { beta } => {
                let t = beta * x;
                if t > 0.0 {
                    x + ln_1p(exp(-t)) / beta
                } else {
                    ln_1p(exp(t)) / beta
                }
            }
            Activation::Sine { omega } => sin(omega * x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// `(σ, σ', σ'')` at `x` with a single exponential for softplus.
    #[inline]
    fn all(self, x: f64) -> (f64, f64, f64) {
        match self {
            Activation::Softplus { beta } => {
                let t = beta * x;
                let e = exp(-t.abs());
                let v = x.max(0.0) + ln_1p(e) / beta;
                let s = if t >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                (v, s, beta * s * (1.0 - s))
            }
            _ => self.derivs(x),
        }
    }

    /// `(σ, σ', σ'')` at `x`.
    #[inline]
    pub fn derivs(self, x: f64) -> (f64, f64, f64) {
        match self {
            Activation::Softplus { beta } => {
                let t = beta * x;
                let s = if t >= 0.0 {
                    1.0 / (1.0 + exp(-t))
                } else {
                    let e = exp(t);
                    e / (1.0 + e)
                };
                (self.value(x), s, beta * s * (1.0 - s))
            }
            Activation::Sine { omega } => {
                let (s, c) = (sin(omega * x), cos(omega * x));
                (s, omega * c, -omega * omega * s)
            }
            Activation::Relu => {
                if x > 0.0 {
                    (x, 1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
        }
    }
}

/// How the network input re-enters at a skip layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    /// `[h, u]`
    #[default]
    Concat,
    /// `h + u`; requires matching widths.
    Add,
}

/// Architecture of a fully connected network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseSpec {
    /// `widths[0]` is the input size, the last entry the output size.
    pub widths: Vec<usize>,
    /// Linear layers (1-based position in the stack, never 0) whose input is
    /// joined with the network input.
    #[serde(default)]
    pub skips: Vec<usize>,
    #[serde(default)]
    pub skip_mode: SkipMode,
    #[serde(default)]
    pub activation: Activation,
}

impl DenseSpec {
    pub fn new(widths: Vec<usize>, skips: Vec<usize>, activation: Activation) -> Self {
        DenseSpec {
            widths,
            skips,
            skip_mode: SkipMode::Concat,
            activation,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::invalid("network needs at least one layer"));
        }
        if self.widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        for &s in &self.skips {
            if s == 0 || s >= self.n_layers() {
                return Err(Error::invalid("skip index must be in 1..layer count"));
            }
            if self.skip_mode == SkipMode::Add && self.widths[s] != self.widths[0] {
                return Err(Error::invalid("additive skip needs matching widths"));
            }
        }
        match self.activation {
            Activation::Softplus { beta } if !(beta > 0.0) => {
                Err(Error::invalid("softplus beta must be positive"))
            }
            _ => Ok(()),
        }
    }

    fn is_concat_skip(&self, l: usize) -> bool {
        self.skip_mode == SkipMode::Concat && self.skips.contains(&l)
    }

    fn is_add_skip(&self, l: usize) -> bool {
        self.skip_mode == SkipMode::Add && self.skips.contains(&l)
    }

    /// Input width of linear layer `l`, including concatenated skip inputs.
    pub fn layer_in(&self, l: usize) -> usize {
        if self.is_concat_skip(l) {
            self.widths[l] + self.widths[0]
        } else {
            self.widths[l]
        }
    }
}

/// Location of one layer's weights and bias inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBlock {
    pub rows: usize,
    pub cols: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

impl LayerBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whole block range (weights followed by bias).
    pub fn range(&self) -> Range<usize> {
        self.weight.start..self.bias.end
    }
}

/// Index map of a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub layers: Vec<LayerBlock>,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(spec: &DenseSpec) -> Self {
        let mut off = 0;
        let mut layers = Vec::with_capacity(spec.n_layers());
        for l in 0..spec.n_layers() {
            let rows = spec.widths[l + 1];
            let cols = spec.layer_in(l);
            let weight = off..off + rows * cols;
            let bias = weight.end..weight.end + rows;
            off = bias.end;
            layers.push(LayerBlock {
                rows,
                cols,
                weight,
                bias,
            });
        }
        ParamLayout { layers, len: off }
    }
}

/// `C = alpha · op(A)·op(B) + beta · C` on strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!((m - 1) * rsc + n - 1 < c.len());
    // SAFETY: the debug assertions above spell out the bounds every caller in
    // this module guarantees by construction.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// `Z = A·Wᵀ + bias` for a batch: `A` is `rows × in` with row stride `lda`.
fn linear_forward(blk: &LayerBlock, params: &[f64], a: &[f64], lda: usize, rows: usize, z: &mut [f64]) {
    let w = &params[blk.weight.clone()];
    let b = &params[blk.bias.clone()];
    for r in 0..rows {
        z[r * blk.rows..(r + 1) * blk.rows].copy_from_slice(b);
    }
    gemm(rows, blk.cols, blk.rows, 1.0, a, lda, 1, w, 1, blk.cols, 1.0, z, blk.rows);
}

/// `Z = A·Wᵀ` (no bias), used for tangents.
fn linear_tangent(blk: &LayerBlock, params: &[f64], a: &[f64], lda: usize, rows: usize, z: &mut [f64]) {
    let w = &params[blk.weight.clone()];
    gemm(rows, blk.cols, blk.rows, 1.0, a, lda, 1, w, 1, blk.cols, 0.0, z, blk.rows);
}

/// `Ā = Z̄·W`.
fn linear_backward_input(blk: &LayerBlock, params: &[f64], zbar: &[f64], rows: usize, abar: &mut [f64]) {
    let w = &params[blk.weight.clone()];
    gemm(rows, blk.rows, blk.cols, 1.0, zbar, blk.rows, 1, w, blk.cols, 1, 0.0, abar, blk.cols);
}

/// `W̄ += Z̄ᵀ·A`, `b̄ += Σ_rows Z̄` (bias only when `with_bias`).
fn linear_backward_params(
    blk: &LayerBlock,
    zbar: &[f64],
    a: &[f64],
    lda: usize,
    rows: usize,
    grad: &mut [f64],
    with_bias: bool,
) {
    gemm(
        blk.rows,
        rows,
        blk.cols,
        1.0,
        zbar,
        1,
        blk.rows,
        a,
        lda,
        1,
        1.0,
        &mut grad[blk.weight.clone()],
        blk.cols,
    );
    if with_bias {
        let gb = &mut grad[blk.bias.clone()];
        for r in 0..rows {
            for (g, z) in gb.iter_mut().zip(&zbar[r * blk.rows..(r + 1) * blk.rows]) {
                *g += *z;
            }
        }
    }
}

/// Recorded forward pass over a batch.
#[derive(Debug, Clone)]
pub struct Tape {
    pub rows: usize,
    /// Layer inputs `A_l`, each `rows × layer_in(l)`.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activations `Z_l`, each `rows × widths[l+1]`.
    pub pre: Vec<Vec<f64>>,
    /// `σ'(Z_l)` and `σ''(Z_l)` of every hidden layer.
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.pre.last().unwrap()
    }
}

/// Stateless evaluator for a [`DenseSpec`]; parameters are passed per call.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub spec: DenseSpec,
    pub layout: ParamLayout,
}

impl DenseNet {
    pub fn new(spec: DenseSpec) -> Result<Self> {
        spec.validate()?;
        let layout = ParamLayout::new(&spec);
        Ok(DenseNet { spec, layout })
    }

    pub fn param_count(&self) -> usize {
        self.layout.len
    }

    fn check(&self, params: &[f64], input: &[f64], rows: usize) -> Result<()> {
        Error::check_len("parameter vector", self.layout.len, params.len())?;
        Error::check_len("network input", rows * self.spec.input_dim(), input.len())
    }

    /// Builds layer `l`'s input from the previous activation `h` (ignored for
    /// `l == 0`) and the network input `u`.
    fn assemble(&self, l: usize, h: &[f64], u: &[f64], rows: usize) -> Vec<f64> {
        let d_in = self.spec.input_dim();
        if l == 0 {
            return u.to_vec();
        }
        let width = self.spec.widths[l];
        if self.spec.is_concat_skip(l) {
            let cols = width + d_in;
            let mut a = vec![0.0; rows * cols];
            for r in 0..rows {
                a[r * cols..r * cols + width].copy_from_slice(&h[r * width..(r + 1) * width]);
                a[r * cols + width..(r + 1) * cols].copy_from_slice(&u[r * d_in..(r + 1) * d_in]);
            }
            a
        } else if self.spec.is_add_skip(l) {
            h.iter().zip(u).map(|(a, b)| a + b).collect()
        } else {
            h.to_vec()
        }
    }

    /// Splits a layer-input adjoint into the hidden part and accumulates the
    /// network-input part into `ubar`.
    fn split_adjoint(&self, l: usize, abar: Vec<f64>, ubar: &mut [f64], rows: usize) -> Vec<f64> {
        let d_in = self.spec.input_dim();
        if l == 0 {
            for (u, a) in ubar.iter_mut().zip(&abar) {
                *u += *a;
            }
            return Vec::new();
        }
        let width = self.spec.widths[l];
        if self.spec.is_concat_skip(l) {
            let cols = width + d_in;
            let mut h = vec![0.0; rows * width];
            for r in 0..rows {
                h[r * width..(r + 1) * width].copy_from_slice(&abar[r * cols..r * cols + width]);
                for (u, a) in ubar[r * d_in..(r + 1) * d_in]
                    .iter_mut()
                    .zip(&abar[r * cols + width..(r + 1) * cols])
                {
                    *u += *a;
                }
            }
            h
        } else {
            if self.spec.is_add_skip(l) {
                for (u, a) in ubar.iter_mut().zip(&abar) {
                    *u += *a;
                }
            }
            abar
        }
    }

    /// Forward pass, recording what the backward passes need.
    pub fn forward_tape(&self, params: &[f64], input: &[f64], rows: usize) -> Result<Tape> {
        self.check(params, input, rows)?;
        let n = self.spec.n_layers();
        let act = self.spec.activation;
        let mut inputs = Vec::with_capacity(n);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut d1 = Vec::with_capacity(n);
        let mut d2 = Vec::with_capacity(n);
        let mut h = Vec::new();
        for (l, blk) in self.layout.layers.iter().enumerate() {
            let a = self.assemble(l, &h, input, rows);
            let mut z = vec![0.0; rows * blk.rows];
            linear_forward(blk, params, &a, blk.cols, rows, &mut z);
            if l + 1 < n {
                h = vec![0.0; z.len()];
                let mut s1 = vec![0.0; z.len()];
                let mut s2 = vec![0.0; z.len()];
                for i in 0..z.len() {
                    (h[i], s1[i], s2[i]) = act.all(z[i]);
                }
                d1.push(s1);
                d2.push(s2);
            }
            inputs.push(a);
            pre.push(z);
        }
        Ok(Tape {
            rows,
            inputs,
            pre,
            d1,
            d2,
        })
    }

    /// Batch outputs, `rows × output_dim`.
    pub fn forward(&self, params: &[f64], input: &[f64], rows: usize) -> Result<Vec<f64>> {
        Ok(self.forward_tape(params, input, rows)?.pre.pop().unwrap())
    }

    /// Reverse pass for output adjoints `out_adj` (`rows × output_dim`).
    ///
    /// Accumulates into `param_grad` when given and returns the input adjoint.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &Tape,
        out_adj: &[f64],
        mut param_grad: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        let rows = tape.rows;
        Error::check_len("output adjoint", rows * self.spec.output_dim(), out_adj.len())?;
        if let Some(g) = param_grad.as_deref() {
            Error::check_len("parameter gradient", self.layout.len, g.len())?;
        }
        let mut ubar = vec![0.0; rows * self.spec.input_dim()];
        let mut zbar = out_adj.to_vec();
        for l in (0..self.spec.n_layers()).rev() {
            let blk = &self.layout.layers[l];
            if let Some(g) = param_grad.as_deref_mut() {
                linear_backward_params(blk, &zbar, &tape.inputs[l], blk.cols, rows, g, true);
            }
            let mut abar = vec![0.0; rows * blk.cols];
            linear_backward_input(blk, params, &zbar, rows, &mut abar);
            let hbar = self.split_adjoint(l, abar, &mut ubar, rows);
            if l > 0 {
                zbar = hbar.iter().zip(&tape.d1[l - 1]).map(|(hb, d)| hb * d).collect();
            }
        }
        Ok(ubar)
    }

    /// Forward tangent along input direction `u_dot` (`rows × input_dim`).
    /// Returns per-layer input tangents `Ȧ_l` and pre-activation tangents `Ż_l`.
    pub fn tangent(&self, params: &[f64], tape: &Tape, u_dot: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let rows = tape.rows;
        let n = self.spec.n_layers();
        let mut a_dot = Vec::with_capacity(n);
        let mut z_dot: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut h_dot = Vec::new();
        for (l, blk) in self.layout.layers.iter().enumerate() {
            let a = self.assemble(l, &h_dot, u_dot, rows);
            let mut zd = vec![0.0; rows * blk.rows];
            linear_tangent(blk, params, &a, blk.cols, rows, &mut zd);
            if l + 1 < n {
                h_dot = zd.iter().zip(&tape.d1[l]).map(|(d, s)| s * d).collect();
            }
            a_dot.push(a);
            z_dot.push(zd);
        }
        (a_dot, z_dot)
    }

    /// Parameter gradient of `S = Σ_r (value_adj_r · y_r + ẏ_r)` for a
    /// scalar-output network, where `ẏ` is the output tangent along `u_dot`.
    ///
    /// Returns the adjoint of the (primal) network input.
    pub fn second_order_backward(
        &self,
        params: &[f64],
        tape: &Tape,
        u_dot: &[f64],
        value_adj: &[f64],
        param_grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        let rows = tape.rows;
        if self.spec.output_dim() != 1 {
            return Err(Error::invalid("second-order pass needs a scalar output"));
        }
        Error::check_len("value adjoint", rows, value_adj.len())?;
        Error::check_len("input tangent", rows * self.spec.input_dim(), u_dot.len())?;
        Error::check_len("parameter gradient", self.layout.len, param_grad.len())?;
        let (a_dot, z_dot) = self.tangent(params, tape, u_dot);
        let mut ubar = vec![0.0; rows * self.spec.input_dim()];
        let mut ubar_dot = vec![0.0; rows * self.spec.input_dim()];
        let mut zbar = value_adj.to_vec();
        let mut zbar_dot = vec![1.0; rows];
        for l in (0..self.spec.n_layers()).rev() {
            let blk = &self.layout.layers[l];
            linear_backward_params(blk, &zbar, &tape.inputs[l], blk.cols, rows, param_grad, true);
            linear_backward_params(blk, &zbar_dot, &a_dot[l], blk.cols, rows, param_grad, false);
            let mut abar = vec![0.0; rows * blk.cols];
            linear_backward_input(blk, params, &zbar, rows, &mut abar);
            let mut abar_dot = vec![0.0; rows * blk.cols];
            linear_backward_input(blk, params, &zbar_dot, rows, &mut abar_dot);
            let hbar = self.split_adjoint(l, abar, &mut ubar, rows);
            let hbar_dot = self.split_adjoint(l, abar_dot, &mut ubar_dot, rows);
            if l > 0 {
                let (d1, d2) = (&tape.d1[l - 1], &tape.d2[l - 1]);
                let zd = &z_dot[l - 1];
                let len = zd.len();
                let mut nz = vec![0.0; len];
                let mut nzd = vec![0.0; len];
                for i in 0..len {
                    nzd[i] = hbar_dot[i] * d1[i];
                    nz[i] = hbar[i] * d1[i] + hbar_dot[i] * d2[i] * zd[i];
                }
                zbar = nz;
                zbar_dot = nzd;
            }
        }
        Ok(ubar)
    }
}

/// He-normal weights (`std = √(2 / fan_in)`) and zero biases.
pub fn he_init(spec: &DenseSpec, seed: u64) -> Result<Vec<f64>> {
    use rand_distr::{Distribution, Normal};
    spec.validate()?;
    let layout = ParamLayout::new(spec);
    let mut rng = crate::rng_from_seed(seed);
    let mut p = vec![0.0; layout.len];
    for blk in &layout.layers {
        let d = Normal::new(0.0, crate::math::sqrt(2.0 / blk.cols as f64)).unwrap();
        for w in &mut p[blk.weight.clone()] {
            *w = d.sample(&mut rng);
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DenseNet, Vec<f64>) {
        let net = DenseNet::new(DenseSpec::new(
            vec![3, 5, 4, 2],
            vec![2],
            Activation::Softplus { beta: 3.0 },
        ))
        .unwrap();
        let params = (0..net.param_count())
            .map(|i| sin(i as f64 * 1.7 + 0.3) * 0.6)
            .collect();
        (net, params)
    }

    #[test]
    fn layout_counts_concat_skip() {
        let (net, _) = toy();
        // 3→5: 20, 5→4: 24, (4+3)→2: 16
        assert_eq!(net.param_count(), 20 + 24 + 16);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (net, params) = toy();
        let x = [0.2, -0.4, 0.7, 1.1, 0.0, -0.3];
        let adj = [0.5, -1.0, 2.0, 0.25];
        let tape = net.forward_tape(&params, &x, 2).unwrap();
        let mut g = vec![0.0; net.param_count()];
        let ubar = net.backward(&params, &tape, &adj, Some(&mut g)).unwrap();
        let obj = |p: &[f64], x: &[f64]| -> f64 {
            let y = net.forward(p, x, 2).unwrap();
            y.iter().zip(&adj).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let f1 = obj(&p, &x);
            p[i] -= 2.0 * h;
            let f0 = obj(&p, &x);
            assert!(((f1 - f0) / (2.0 * h) - g[i]).abs() < 1e-7, "param {i}");
        }
        for i in 0..x.len() {
            let mut xp = x;
            xp[i] += h;
            let f1 = obj(&params, &xp);
            xp[i] -= 2.0 * h;
            let f0 = obj(&params, &xp);
            assert!(((f1 - f0) / (2.0 * h) - ubar[i]).abs() < 1e-7, "input {i}");
        }
    }

    #[test]
    fn additive_skip_requires_matching_width() {
        let mut spec = DenseSpec::new(vec![3, 4, 1], vec![1], Activation::Relu);
        spec.skip_mode = SkipMode::Add;
        assert!(DenseNet::new(spec).is_err());
    }

    #[test]
    fn softplus_derivatives() {
        let a = Activation::Softplus { beta: 100.0 };
        for &x in &[-0.3, -0.01, 0.0, 0.004, 0.2] {
            let (v, d1, d2) = a.derivs(x);
            let h = 1e-6;
            assert!(((a.value(x + h) - a.value(x - h)) / (2.0 * h) - d1).abs() < 1e-6);
            let (_, d1p, _) = a.derivs(x + h);
            let (_, d1m, _) = a.derivs(x - h);
            assert!(((d1p - d1m) / (2.0 * h) - d2).abs() < 1e-3 * (1.0 + d2.abs()));
            assert!(v >= 0.0);
        }
        // large arguments stay finite
        assert_eq!(a.value(50.0), 50.0);
        assert_eq!(a.value(-50.0), 0.0);
    }
}
