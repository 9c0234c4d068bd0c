//! Hyper-network generating the parameters of a posed-space SDF `G` from a
//! template mesh.
//!
//! Every vertex contributes the 6-vector `(position, normal)`; a shared MLP
//! encodes each one, a column-wise max-pool gives a global latent, and one
//! decoder head per layer of `G` emits that layer's weights and bias.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_finite, evaluate_loss, sample_batch, Adam, AdamConfig, LossConfig, LossInputs,
    LossRecord, SampleCounts,
};
use crate::dense::{he_init, Activation, DenseNet, DenseSpec, ParamLayout, Tape};
use crate::mesh::{Aabb, TriMesh};
use crate::sdf_net::{geometric_init, MlpSpec, PositionalEncoding, SdfNet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperNetSpec {
    /// Per-vertex encoder; input width 6.
    pub encoder: DenseSpec,
    /// Hidden widths of each decoder head.
    pub head_hidden: Vec<usize>,
    pub head_activation: Activation,
    /// The generated network.
    pub target: MlpSpec,
}

impl HyperNetSpec {
    /// Reference sizes: encoder `(6, 256×5)` with skips into layers 2–4,
    /// heads of three 256-wide layers, `G = (3, 1024, 512, 256, 128, 1)`.
    pub fn reference() -> Self {
        HyperNetSpec {
            encoder: DenseSpec::new(vec![6, 256, 256, 256, 256, 256], vec![2, 3, 4], Activation::Relu),
            head_hidden: vec![256; 3],
            head_activation: Activation::Relu,
            target: MlpSpec::new(0, PositionalEncoding::IDENTITY, &[1024, 512, 256, 128], vec![]),
        }
    }

    /// Desk-scale sizes used by default.
    pub fn desk() -> Self {
        HyperNetSpec {
            encoder: DenseSpec::new(vec![6, 128, 128, 128, 128, 128], vec![2, 3, 4], Activation::Relu),
            head_hidden: vec![128; 3],
            head_activation: Activation::Relu,
            target: MlpSpec::new(0, PositionalEncoding::IDENTITY, &[128, 128, 128], vec![]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.target.validate()?;
        Error::check_len("hyper-network encoder input", 6, self.encoder.input_dim())?;
        if self.target.feature_dim != 0 {
            return Err(Error::invalid("generated network must take coordinates only"));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn target_layout(&self) -> ParamLayout {
        ParamLayout::new(&self.target.dense_spec())
    }

    /// One head per layer of the generated network.
    pub fn head_specs(&self) -> Vec<DenseSpec> {
        self.target_layout()
            .layers
            .iter()
            .map(|blk| {
                let mut w = vec![self.latent_dim()];
                w.extend_from_slice(&self.head_hidden);
                w.push(blk.len());
                DenseSpec::new(w, vec![], self.head_activation)
            })
            .collect()
    }

    /// Total generated parameter count (the sum of head output widths).
    pub fn generated_count(&self) -> usize {
        self.head_specs().iter().map(|h| h.output_dim()).sum()
    }

    pub fn param_count(&self) -> usize {
        ParamLayout::new(&self.encoder).len
            + self.head_specs().iter().map(|h| ParamLayout::new(h).len).sum::<usize>()
    }
}

/// Forward record needed for [`HyperNet::backward`].
#[derive(Debug, Clone)]
pub struct HyperTape {
    encoder: Tape,
    /// Row achieving the max in each latent column.
    argmax: Vec<usize>,
    heads: Vec<Tape>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperNet {
    pub spec: HyperNetSpec,
    encoder: DenseNet,
    heads: Vec<DenseNet>,
    /// Parameter ranges: encoder first, then one per head.
    ranges: Vec<core::ops::Range<usize>>,
    target_layout: ParamLayout,
}

impl HyperNet {
    pub fn new(spec: HyperNetSpec) -> Result<Self> {
        spec.validate()?;
        let encoder = DenseNet::new(spec.encoder.clone())?;
        let heads = spec
            .head_specs()
            .into_iter()
            .map(DenseNet::new)
            .collect::<Result<Vec<_>>>()?;
        let mut ranges = Vec::with_capacity(heads.len() + 1);
        let mut off = encoder.param_count();
        ranges.push(0..off);
        for h in &heads {
            ranges.push(off..off + h.param_count());
            off += h.param_count();
        }
        let target_layout = spec.target_layout();
        Ok(HyperNet {
            spec,
            encoder,
            heads,
            ranges,
            target_layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn target_count(&self) -> usize {
        self.target_layout.len
    }

    /// He-initialised encoder and hidden head layers. Head output weights
    /// are scaled by `out_scale` and head output biases are set to a
    /// geometric initialisation of the generated network, so the untrained
    /// hyper-network already emits a sphere of radius `radius`.
    pub fn init(&self, radius: f64, out_scale: f64, seed: u64) -> Result<Vec<f64>> {
        let mut p = vec![0.0; self.param_count()];
        p[self.ranges[0].clone()].copy_from_slice(&he_init(&self.spec.encoder, seed)?);
        let g0 = geometric_init(&self.spec.target, radius, seed ^ 0x9e0)?;
        for (l, head) in self.heads.iter().enumerate() {
            let r = self.ranges[l + 1].clone();
            let mut hp = he_init(&head.spec, seed.wrapping_add(1 + l as u64))?;
            let last = head.layout.layers.last().unwrap();
            for w in &mut hp[last.weight.clone()] {
                *w *= out_scale;
            }
            hp[last.bias.clone()].copy_from_slice(&g0[self.target_layout.layers[l].range()]);
            p[r].copy_from_slice(&hp);
        }
        Ok(p)
    }

    /// Learning-rate multipliers for training: `out_scale` on head output
    /// weights, 1 elsewhere. Under Adam this trains the heads as if their
    /// output weights were unit-scale parameters multiplied by `out_scale`,
    /// so one step cannot move every generated parameter by a full `lr`
    /// times the hidden width.
    pub fn lr_scales(&self, out_scale: f64) -> Vec<f64> {
        let mut s = vec![1.0; self.param_count()];
        for (l, head) in self.heads.iter().enumerate() {
            let off = self.ranges[l + 1].start;
            let w = head.layout.layers.last().unwrap().weight.clone();
            s[off + w.start..off + w.end].fill(out_scale);
        }
        s
    }

    fn input_rows(mesh: &TriMesh) -> Result<Vec<f64>> {
        mesh.validate()?;
        if mesh.vertices.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let normals = mesh.vertex_normals();
        let mut u = Vec::with_capacity(mesh.vertices.len() * 6);
        for (v, n) in mesh.vertices.iter().zip(&normals) {
            u.extend_from_slice(&[v.x, v.y, v.z, n.x, n.y, n.z]);
        }
        Ok(u)
    }

    /// Generated parameters for `mesh` and the forward record.
    pub fn forward_tape(&self, phi: &[f64], mesh: &TriMesh) -> Result<(Vec<f64>, HyperTape)> {
        Error::check_len("hyper-network parameters", self.param_count(), phi.len())?;
        let u = Self::input_rows(mesh)?;
        let rows = mesh.vertices.len();
        let enc = self.encoder.forward_tape(&phi[self.ranges[0].clone()], &u, rows)?;
        let d = self.spec.latent_dim();
        let out = enc.output();
        let mut z = vec![f64::NEG_INFINITY; d];
        let mut argmax = vec![0usize; d];
        for r in 0..rows {
            for c in 0..d {
                let v = out[r * d + c];
                if v > z[c] {
                    z[c] = v;
                    argmax[c] = r;
                }
            }
        }
        check_finite(&z, "hyper-network latent")?;
        let mut theta = vec![0.0; self.target_count()];
        let mut heads = Vec::with_capacity(self.heads.len());
        for (l, head) in self.heads.iter().enumerate() {
            let t = head.forward_tape(&phi[self.ranges[l + 1].clone()], &z, 1)?;
            theta[self.target_layout.layers[l].range()].copy_from_slice(t.output());
            heads.push(t);
        }
        Ok((
            theta,
            HyperTape {
                encoder: enc,
                argmax,
                heads,
            },
        ))
    }

    /// Accumulates `∂L/∂φ` given `∂L/∂θ` for the generated parameters `θ`.
    pub fn backward(
        &self,
        phi: &[f64],
        tape: &HyperTape,
        theta_adj: &[f64],
        phi_grad: &mut [f64],
    ) -> Result<()> {
        Error::check_len("generated parameter adjoint", self.target_count(), theta_adj.len())?;
        Error::check_len("hyper-network gradient", self.param_count(), phi_grad.len())?;
        let d = self.spec.latent_dim();
        let mut z_adj = vec![0.0; d];
        for (l, head) in self.heads.iter().enumerate() {
            let r = self.ranges[l + 1].clone();
            let a = &theta_adj[self.target_layout.layers[l].range()];
            let zb = head.backward(&phi[r.clone()], &tape.heads[l], a, Some(&mut phi_grad[r]))?;
            for (acc, v) in z_adj.iter_mut().zip(&zb) {
                *acc += v;
            }
        }
        let rows = tape.encoder.rows;
        let mut e_adj = vec![0.0; rows * d];
        for c in 0..d {
            e_adj[tape.argmax[c] * d + c] = z_adj[c];
        }
        let r = self.ranges[0].clone();
        self.encoder
            .backward(&phi[r.clone()], &tape.encoder, &e_adj, Some(&mut phi_grad[r]))?;
        Ok(())
    }
}

/// `θ = H(mesh; φ)`.
pub fn hypernet_forward(net: &HyperNet, phi: &[f64], mesh: &TriMesh) -> Result<Vec<f64>> {
    Ok(net.forward_tape(phi, mesh)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperNetConfig {
    pub spec: HyperNetSpec,
    pub counts: SampleCounts,
    pub sigma: f64,
    pub bbox: Aabb,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub steps: usize,
    pub init_radius: f64,
    pub head_out_scale: f64,
    pub seed: u64,
}

impl Default for HyperNetConfig {
    fn default() -> Self {
        HyperNetConfig {
            spec: HyperNetSpec::desk(),
            counts: SampleCounts::DESK.scaled(0.5),
            sigma: 0.1,
            bbox: Aabb::cube(1.2),
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            steps: 1500,
            init_radius: 0.5,
            head_out_scale: 1e-2,
            seed: 0,
        }
    }
}

/// Trains `φ` so that `G_{H(M;φ)}` fits each posed template mesh `M`.
pub fn train_hypernet(
    templates: &[TriMesh],
    cfg: &HyperNetConfig,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<(HyperNet, Vec<f64>, Vec<LossRecord>)> {
    if templates.len() < 2 {
        return Err(Error::invalid("hyper-network training needs at least two templates"));
    }
    cfg.loss.weights.validate()?;
    if !(cfg.head_out_scale > 0.0 && cfg.head_out_scale.is_finite()) {
        return Err(Error::invalid("head_out_scale must be positive"));
    }
    let hyper = HyperNet::new(cfg.spec.clone())?;
    let lr_scale = hyper.lr_scales(cfg.head_out_scale);
    let g = SdfNet::new(cfg.spec.target.clone())?;
    let mut phi = hyper.init(cfg.init_radius, cfg.head_out_scale, cfg.seed)?;
    let mut adam_cfg = cfg.adam;
    if adam_cfg.epoch_steps == 0 {
        adam_cfg.epoch_steps = cfg.steps.div_ceil(6).max(1);
    }
    let mut adam = Adam::new(phi.len(), adam_cfg)?;
    let mut rng = crate::rng_from_seed(cfg.seed);
    let mut log = Vec::with_capacity(cfg.steps);
    let mut theta_adj = vec![0.0; hyper.target_count()];
    let mut grad = vec![0.0; phi.len()];
    for step in 0..cfg.steps {
        let mesh = &templates[rng.random_range(0..templates.len())];
        let (theta, tape) = hyper.forward_tape(&phi, mesh)?;
        let batch = sample_batch(mesh, cfg.counts, cfg.sigma, cfg.bbox, &mut rng)?;
        let (sv, sg) = g.values_and_grads(&theta, &[], &batch.surface)?;
        let (dv, dg) = g.values_and_grads(&theta, &[], &batch.domain)?;
        let eval = evaluate_loss(
            &cfg.loss,
            &LossInputs {
                surface_values: &sv,
                surface_grads: &sg,
                targets: &batch.normals,
                target_weights: None,
                domain_values: &dv,
                domain_grads: &dg,
            },
        )?;
        if !eval.total.is_finite() {
            return Err(Error::NonFinite("hyper-network training loss"));
        }
        theta_adj.fill(0.0);
        g.grad_params(&theta, &[], &batch.surface, &eval.surface, &mut theta_adj, None)?;
        g.grad_params(&theta, &[], &batch.domain, &eval.domain, &mut theta_adj, None)?;
        grad.fill(0.0);
        hyper.backward(&phi, &tape, &theta_adj, &mut grad)?;
        let rec = LossRecord::new(step, &eval.parts, eval.total, adam.lr());
        on_step(&rec);
        log.push(rec);
        adam.update_scaled(&mut phi, &grad, &lr_scale)?;
        check_finite(&phi, "hyper-network parameters")?;
    }
    Ok((hyper, phi, log))
}
