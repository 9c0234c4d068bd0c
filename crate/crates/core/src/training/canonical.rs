//! Canonical implicit model `F(Φ(π(x_p)), n_c, posenc(x_c))`.
//!
//! A canonical point is warped to the posed space with the skinning weights
//! of its nearest template vertex, projected into the front view, and given
//! the bilinear encoder feature and the canonicalised image normal found
//! there. Features are constants of `x`; the encoder is trained jointly
//! through the feature adjoints.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_finite, evaluate_loss, sample_batch, Adam, AdamConfig, LossConfig, LossInputs,
    LossRecord, SampleCounts,
};
use crate::dense::Activation;
use crate::encoder::{Encoder, EncoderSpec, EncoderTape, FeatureMap, NormalImage};
use crate::geometry::{
    blend_transforms, bone_transforms, canonical_normal, Camera, NearestVertexIndex, Pose,
    SkinnedTemplate, DEGENERATE_DET,
};
use crate::math::{RigidTransform, Vec3};
use crate::mesh::{marching_cubes_grid, sample_grid_banded, Aabb, TriMesh};
use crate::sdf_net::{geometric_init, MlpSpec, PositionalEncoding, SdfNet};
use crate::{Error, Result};

/// One posed observation of a subject.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalView {
    pub pose: Pose,
    /// Front camera; the back map uses [`Camera::opposite`].
    pub camera: Camera,
    pub front: NormalImage,
    pub back: NormalImage,
}

/// Training subject: template, ground-truth canonical surface, and views.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalSubject {
    pub template: SkinnedTemplate,
    pub canonical: TriMesh,
    pub views: Vec<CanonicalView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CanonicalConfig {
    pub hidden: Vec<usize>,
    pub skips: Vec<usize>,
    pub encoding: PositionalEncoding,
    pub activation: Activation,
    pub encoder_channels: Vec<usize>,
    pub use_image_features: bool,
    pub use_canonical_normal: bool,
    pub counts: SampleCounts,
    pub sigma: f64,
    /// Canonical bounding box for uniform samples and extraction.
    pub bbox: Aabb,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub steps: usize,
    pub init_radius: f64,
    pub seed: u64,
}

impl Default for CanonicalConfig {
    fn default() -> Self {
        CanonicalConfig {
            hidden: vec![256; 4],
            skips: vec![2],
            encoding: PositionalEncoding::default(),
            activation: Activation::default(),
            encoder_channels: vec![16, 32, 64, 64],
            use_image_features: true,
            use_canonical_normal: true,
            counts: SampleCounts::DESK,
            sigma: 0.1,
            bbox: Aabb::cube(1.2),
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            steps: 2000,
            init_radius: 0.5,
            seed: 0,
        }
    }
}

impl CanonicalConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.weights.validate()?;
        self.adam.validate()?;
        if !(self.sigma >= 0.0 && self.init_radius > 0.0) {
            return Err(Error::invalid("sigma and init radius must be positive"));
        }
        Ok(())
    }
}

/// Architecture of a trained canonical model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalSpec {
    pub mlp: MlpSpec,
    /// `None` when image features are disabled.
    pub encoder: Option<EncoderSpec>,
    pub use_canonical_normal: bool,
    pub bbox: Aabb,
}

impl CanonicalSpec {
    pub fn from_config(cfg: &CanonicalConfig, image_height: usize, image_width: usize) -> Self {
        let encoder = cfg.use_image_features.then(|| EncoderSpec {
            channels: cfg.encoder_channels.clone(),
            ..EncoderSpec::new(image_height, image_width)
        });
        let fd = encoder.as_ref().map_or(0, |e| e.output_channels())
            + if cfg.use_canonical_normal { 3 } else { 0 };
        let mut mlp = MlpSpec::new(fd, cfg.encoding, &cfg.hidden, cfg.skips.clone());
        mlp.activation = cfg.activation;
        CanonicalSpec {
            mlp,
            encoder,
            use_canonical_normal: cfg.use_canonical_normal,
            bbox: cfg.bbox,
        }
    }
}

/// `F` plus the image encoder; `params` holds the network parameters
/// followed by the encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalModel {
    pub spec: CanonicalSpec,
    net: SdfNet,
    encoder: Option<Encoder>,
    pub params: Vec<f64>,
}

impl CanonicalModel {
    pub fn new(spec: CanonicalSpec, params: Vec<f64>) -> Result<Self> {
        let net = SdfNet::new(spec.mlp.clone())?;
        let encoder = spec.encoder.clone().map(Encoder::new).transpose()?;
        let n = net.param_count() + encoder.as_ref().map_or(0, Encoder::param_count);
        Error::check_len("canonical model parameters", n, params.len())?;
        let fd = encoder.as_ref().map_or(0, |e| e.spec.output_channels())
            + if spec.use_canonical_normal { 3 } else { 0 };
        Error::check_len("canonical feature width", fd, spec.mlp.feature_dim)?;
        Ok(CanonicalModel {
            spec,
            net,
            encoder,
            params,
        })
    }

    /// Freshly initialised model.
    pub fn init(spec: CanonicalSpec, radius: f64, seed: u64) -> Result<Self> {
        let mut params = geometric_init(&spec.mlp, radius, seed)?;
        if let Some(e) = &spec.encoder {
            params.extend(Encoder::new(e.clone())?.init(seed ^ 0x5eed));
        }
        CanonicalModel::new(spec, params)
    }

    pub fn net(&self) -> &SdfNet {
        &self.net
    }

    pub fn net_params(&self) -> &[f64] {
        &self.params[..self.net.param_count()]
    }

    pub fn encoder_params(&self) -> &[f64] {
        &self.params[self.net.param_count()..]
    }

    /// Binds the model to a template and a view for evaluation.
    pub fn context<'a>(
        &'a self,
        template: &'a SkinnedTemplate,
        index: &'a NearestVertexIndex,
        view: &'a CanonicalView,
    ) -> Result<ViewContext<'a>> {
        let (fmap, _) = self.encode(&view.front)?;
        ViewContext::new(self, template, index, view, fmap)
    }

    fn encode(&self, image: &NormalImage) -> Result<(Option<FeatureMap>, Option<EncoderTape>)> {
        match &self.encoder {
            Some(e) => {
                let (f, t) = e.forward_tape(self.encoder_params(), image)?;
                Ok((Some(f), Some(t)))
            }
            None => Ok((None, None)),
        }
    }

    /// Zero-set of `F` in the canonical box for a posed observation.
    pub fn reconstruct(
        &self,
        template: &SkinnedTemplate,
        view: &CanonicalView,
        res: usize,
    ) -> Result<TriMesh> {
        let index = NearestVertexIndex::new(&template.vertices)?;
        let ctx = self.context(template, &index, view)?;
        let b = self.spec.bbox;
        let step = 4;
        let coarse_diag = b.extent().norm() * step as f64 / res as f64;
        let grid = sample_grid_banded(b, res, step, 1.5 * coarse_diag, |p, o| ctx.eval_into(p, o))?;
        marching_cubes_grid(&grid)
    }
}

/// A model bound to one template and view.
pub struct ViewContext<'a> {
    model: &'a CanonicalModel,
    template: &'a SkinnedTemplate,
    index: &'a NearestVertexIndex,
    transforms: Vec<RigidTransform>,
    camera: Camera,
    front: &'a NormalImage,
    fmap: Option<FeatureMap>,
}

impl<'a> ViewContext<'a> {
    fn new(
        model: &'a CanonicalModel,
        template: &'a SkinnedTemplate,
        index: &'a NearestVertexIndex,
        view: &'a CanonicalView,
        fmap: Option<FeatureMap>,
    ) -> Result<Self> {
        view.camera.validate()?;
        Ok(ViewContext {
            model,
            template,
            index,
            transforms: bone_transforms(&template.skeleton, &view.pose)?,
            camera: view.camera,
            front: &view.front,
            fmap,
        })
    }

    /// Writes the feature row of canonical point `x_c` into `out` and returns
    /// the projected pixel coordinates, or `None` for a degenerate warp.
    pub fn point_features(&self, x_c: Vec3, out: &mut [f64]) -> Option<(f64, f64)> {
        let w = self.template.weight_row(self.index.nearest(x_c));
        let a = blend_transforms(w, &self.transforms).ok()?;
        if !(a.linear.determinant().abs() >= DEGENERATE_DET) {
            return None;
        }
        let (u, v) = self.camera.project(a.apply(x_c));
        let mut o = 0;
        if let Some(f) = &self.fmap {
            f.sample_into(u, v, &mut out[..f.channels]);
            o = f.channels;
        }
        if self.model.spec.use_canonical_normal {
            let (n, valid) = self.front.sample(u, v);
            let n_c = if valid > 0.0 {
                canonical_normal(n, w, &self.transforms, &self.camera).unwrap_or(Vec3::ZERO)
            } else {
                Vec3::ZERO
            };
            out[o..o + 3].copy_from_slice(&n_c.to_array());
        }
        Some((u, v))
    }

    /// Feature rows for a batch; points with a degenerate warp get zeros.
    pub fn features(&self, points: &[Vec3]) -> Vec<f64> {
        let fd = self.model.spec.mlp.feature_dim;
        let mut f = vec![0.0; points.len() * fd];
        for (r, p) in points.iter().enumerate() {
            let row = &mut f[r * fd..(r + 1) * fd];
            if self.point_features(*p, row).is_none() {
                row.fill(0.0);
            }
        }
        f
    }

    pub fn eval_into(&self, points: &[Vec3], out: &mut [f64]) -> Result<()> {
        let f = self.features(points);
        let v = self.model.net.values(self.model.net_params(), &f, points)?;
        out.copy_from_slice(&v);
        Ok(())
    }
}

/// Features for the kept points of a batch plus their pixel coordinates.
struct Gathered {
    points: Vec<Vec3>,
    kept: Vec<usize>,
    features: Vec<f64>,
    uv: Vec<(f64, f64)>,
}

fn gather(ctx: &ViewContext<'_>, points: &[Vec3]) -> Gathered {
    let fd = ctx.model.spec.mlp.feature_dim;
    let mut g = Gathered {
        points: Vec::with_capacity(points.len()),
        kept: Vec::with_capacity(points.len()),
        features: Vec::with_capacity(points.len() * fd),
        uv: Vec::with_capacity(points.len()),
    };
    let mut row = vec![0.0; fd];
    for (i, p) in points.iter().enumerate() {
        if let Some(uv) = ctx.point_features(*p, &mut row) {
            g.points.push(*p);
            g.kept.push(i);
            g.features.extend_from_slice(&row);
            g.uv.push(uv);
        }
    }
    g
}

/// Trains `F` and the encoder on posed views of the subjects. `on_step` sees
/// every loss record as it is produced.
pub fn train_canonical(
    subjects: &[CanonicalSubject],
    cfg: &CanonicalConfig,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<(CanonicalModel, Vec<LossRecord>)> {
    cfg.validate()?;
    let views: Vec<(usize, usize)> = subjects
        .iter()
        .enumerate()
        .flat_map(|(s, subj)| (0..subj.views.len()).map(move |v| (s, v)))
        .collect();
    let Some(&(s0, v0)) = views.first() else {
        return Err(Error::invalid("canonical training needs at least one view"));
    };
    let first = &subjects[s0].views[v0].front;
    let (h, w) = (first.height, first.width);
    for &(s, v) in &views {
        let view = &subjects[s].views[v];
        Error::check_len("front image height", h, view.front.height)?;
        Error::check_len("front image width", w, view.front.width)?;
        view.front.validate()?;
    }
    let indices = subjects
        .iter()
        .map(|s| NearestVertexIndex::new(&s.template.vertices))
        .collect::<Result<Vec<_>>>()?;

    let spec = CanonicalSpec::from_config(cfg, h, w);
    let mut model = CanonicalModel::init(spec, cfg.init_radius, cfg.seed)?;
    let nf = model.net.param_count();
    let mut adam_cfg = cfg.adam;
    if adam_cfg.epoch_steps == 0 {
        // a desk run is treated as six epochs
        adam_cfg.epoch_steps = cfg.steps.div_ceil(6).max(1);
    }
    let mut adam = Adam::new(model.params.len(), adam_cfg)?;
    let mut rng = crate::rng_from_seed(cfg.seed);
    let mut log = Vec::with_capacity(cfg.steps);
    let mut grad = vec![0.0; model.params.len()];

    for step in 0..cfg.steps {
        let (s, v) = views[rng.random_range(0..views.len())];
        let subj = &subjects[s];
        let view = &subj.views[v];
        let (fmap, tape) = model.encode(&view.front)?;
        let batch = sample_batch(&subj.canonical, cfg.counts, cfg.sigma, cfg.bbox, &mut rng)?;

        let ctx = ViewContext::new(&model, &subj.template, &indices[s], view, fmap)?;
        let surf = gather(&ctx, &batch.surface);
        let dom = gather(&ctx, &batch.domain);
        let dropped = batch.surface.len() + batch.domain.len() - surf.kept.len() - dom.kept.len();
        if dropped > 0 {
            log::debug!("step {step}: dropped {dropped} samples with degenerate warps");
        }
        let targets: Vec<Vec3> = surf.kept.iter().map(|&i| batch.normals[i]).collect();
        let net = &model.net;
        let params = &model.params[..nf];
        let (sv, sg) = net.values_and_grads(params, &surf.features, &surf.points)?;
        let (dv, dg) = net.values_and_grads(params, &dom.features, &dom.points)?;
        let eval = evaluate_loss(
            &cfg.loss,
            &LossInputs {
                surface_values: &sv,
                surface_grads: &sg,
                targets: &targets,
                target_weights: None,
                domain_values: &dv,
                domain_grads: &dg,
            },
        )?;
        if !eval.total.is_finite() {
            return Err(Error::NonFinite("canonical training loss"));
        }

        grad.fill(0.0);
        let (g_net, g_enc) = grad.split_at_mut(nf);
        let mut map_adj = ctx.fmap.as_ref().map(|f| vec![0.0; f.data.len()]);
        for (set, adj) in [(&surf, &eval.surface), (&dom, &eval.domain)] {
            let mut fgrad = map_adj.as_ref().map(|_| vec![0.0; set.features.len()]);
            net.grad_params(params, &set.features, &set.points, adj, g_net, fgrad.as_deref_mut())?;
            if let (Some(fg), Some(ma), Some(fm)) = (&fgrad, map_adj.as_mut(), ctx.fmap.as_ref()) {
                let fd = model.spec.mlp.feature_dim;
                for (r, &(u, v)) in set.uv.iter().enumerate() {
                    fm.sample_backward(u, v, &fg[r * fd..r * fd + fm.channels], ma);
                }
            }
        }
        if let (Some(enc), Some(t), Some(ma)) = (&model.encoder, &tape, &map_adj) {
            enc.backward(&model.params[nf..], t, ma, g_enc)?;
        }
        drop(ctx);

        let rec = LossRecord::new(step, &eval.parts, eval.total, adam.lr());
        on_step(&rec);
        log.push(rec);
        adam.update(&mut model.params, &grad)?;
        check_finite(&model.params, "canonical parameters")?;
    }
    Ok((model, log))
}
