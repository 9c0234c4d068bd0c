//! Posed-space SDF refinement against front and back normal maps.
//!
//! Refinement runs in two stages. The prefit fits `G` to the coarse posed
//! mesh with the training loss, starting from the warm-start parameters.
//! Normal refinement then samples the current zero set and pulls `∇G`
//! toward the normals seen in the image on the side facing the surface.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::NormalImage;
use crate::geometry::{
    bone_transforms, lbs_forward, Camera, Facing, NearestVertexIndex, Pose,
    SkinnedTemplate,
};
use crate::math::Vec3;
use crate::mesh::{marching_cubes_grid, sample_grid_banded, Aabb, AreaSampler, TriMesh};
use crate::sdf_net::{geometric_init, MlpSpec, SdfNet};
use crate::training::{
    evaluate_loss, hypernet_forward, sample_batch, uniform_in, Adam, AdamConfig, HyperNet, LossConfig,
    LossInputs, LossRecord, SampleCounts,
};
use crate::{Error, Result};

/// Side whose map supervises a surface point with normal `n`: front when
/// `n` has a non-negative component along the front camera's view axis.
pub fn select_side(n: Vec3, front: &Camera) -> Facing {
    let axis = match front.facing {
        Facing::Front => front.view_axis(),
        Facing::Back => -front.view_axis(),
    };
    if n.dot(axis) >= 0.0 {
        Facing::Front
    } else {
        Facing::Back
    }
}

/// Front and back normal maps with the front camera.
#[derive(Debug, Clone, Copy)]
pub struct NormalTargets<'a> {
    pub camera: Camera,
    pub front: &'a NormalImage,
    pub back: &'a NormalImage,
}

impl<'a> NormalTargets<'a> {
    pub fn new(camera: Camera, front: &'a NormalImage, back: &'a NormalImage) -> Result<Self> {
        camera.validate()?;
        if camera.facing != Facing::Front {
            return Err(Error::invalid("refinement expects the front camera"));
        }
        for img in [front, back] {
            img.validate()?;
            if img.height != camera.height || img.width != camera.width {
                return Err(Error::invalid("normal map size does not match the camera"));
            }
        }
        Ok(NormalTargets { camera, front, back })
    }

    /// World-space target normal for a surface point and its validity weight
    /// (zero on background).
    pub fn target(&self, x: Vec3, n: Vec3) -> (Vec3, f64) {
        let (cam, img) = match select_side(n, &self.camera) {
            Facing::Front => (self.camera, self.front),
            Facing::Back => (self.camera.opposite(), self.back),
        };
        let (u, v) = cam.project(x);
        let (s, valid) = img.sample(u, v);
        match s.try_normalize() {
            Some(s) if valid > 0.0 => (cam.image_to_world_normal(s), valid),
            _ => (Vec3::ZERO, 0.0),
        }
    }
}

/// Fitting `G` to a mesh with the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub counts: SampleCounts,
    pub sigma: f64,
    pub steps: usize,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            counts: SampleCounts::DESK.scaled(0.5),
            sigma: 0.1,
            steps: 300,
            loss: LossConfig::default(),
            adam: AdamConfig {
                epoch_steps: 0,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

/// Runs `cfg.steps` Adam steps fitting `G_params` to `mesh`.
pub fn fit_to_mesh(
    g: &SdfNet,
    params: &mut [f64],
    mesh: &TriMesh,
    bbox: Aabb,
    cfg: &FitConfig,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    Error::check_len("G parameters", g.param_count(), params.len())?;
    if g.feature_dim() != 0 {
        return Err(Error::invalid("G must take coordinates only"));
    }
    let mut adam = Adam::new(params.len(), cfg.adam)?;
    let mut rng = crate::rng_from_seed(cfg.seed);
    let mut grad = vec![0.0; params.len()];
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = sample_batch(mesh, cfg.counts, cfg.sigma, bbox, &mut rng)?;
        let (sv, sg) = g.values_and_grads(params, &[], &batch.surface)?;
        let (dv, dg) = g.values_and_grads(params, &[], &batch.domain)?;
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
            return Err(Error::NonFinite("fit loss"));
        }
        grad.fill(0.0);
        g.grad_params(params, &[], &batch.surface, &eval.surface, &mut grad, None)?;
        g.grad_params(params, &[], &batch.domain, &eval.domain, &mut grad, None)?;
        let rec = LossRecord::new(step, &eval.parts, eval.total, adam.lr());
        on_step(&rec);
        log.push(rec);
        adam.update(params, &grad)?;
    }
    Ok(log)
}

/// Trailing mean over at most `window` values ending at each index.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// Number of iterations until the trailing mean first reaches `tau`.
pub fn iterations_to_threshold(values: &[f64], window: usize, tau: f64) -> Option<usize> {
    moving_average(values, window)
        .iter()
        .position(|m| *m <= tau)
        .map(|i| i + 1)
}

/// Canonical mesh moved to posed space with the skinning weights of the
/// nearest template vertex.
pub fn warp_to_posed(canonical: &TriMesh, template: &SkinnedTemplate, pose: &Pose) -> Result<TriMesh> {
    let index = NearestVertexIndex::new(&template.vertices)?;
    let b = bone_transforms(&template.skeleton, pose)?;
    let vertices = canonical
        .vertices
        .iter()
        .map(|v| lbs_forward(*v, template.weight_row(index.nearest(*v)), &b))
        .collect::<Result<Vec<_>>>()?;
    Ok(TriMesh::new(vertices, canonical.faces.clone()))
}

/// Posed template surface.
pub fn posed_template(template: &SkinnedTemplate, pose: &Pose) -> Result<TriMesh> {
    Ok(TriMesh::new(template.posed_vertices(pose)?, template.faces.clone()))
}

/// Starting parameters of `G`.
#[derive(Debug, Clone, Copy)]
pub enum RefineInit<'a> {
    /// Parameters emitted by the hyper-network for a posed template.
    HyperNet {
        net: &'a HyperNet,
        phi: &'a [f64],
        template: &'a TriMesh,
    },
    /// Geometric sphere initialisation.
    Geometric { radius: f64, seed: u64 },
    Params(&'a [f64]),
}

pub fn initial_params(spec: &MlpSpec, init: RefineInit<'_>) -> Result<Vec<f64>> {
    let p = match init {
        RefineInit::HyperNet { net, phi, template } => {
            if net.spec.target != *spec {
                return Err(Error::invalid("hyper-network target does not match G"));
            }
            hypernet_forward(net, phi, template)?
        }
        RefineInit::Geometric { radius, seed } => geometric_init(spec, radius, seed)?,
        RefineInit::Params(p) => p.to_vec(),
    };
    Error::check_len("G parameters", spec.param_count(), p.len())?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Fit to the coarse posed mesh before normal refinement.
    pub prefit: FitConfig,
    pub max_iters: usize,
    pub counts: SampleCounts,
    pub sigma: f64,
    /// Zero-set re-extraction period.
    pub reextract_every: usize,
    pub extract_res: usize,
    pub output_res: usize,
    /// Points drawn from each extracted zero set.
    pub pool_size: usize,
    /// Newton steps are clipped to this length.
    pub max_newton_step: f64,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub window: usize,
    pub tol_rel: f64,
    /// Margin added around the coarse mesh bounds.
    pub padding: f64,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            prefit: FitConfig::default(),
            max_iters: 3000,
            counts: SampleCounts::DESK.scaled(0.5),
            sigma: 0.1,
            reextract_every: 100,
            extract_res: 64,
            output_res: 128,
            pool_size: 8192,
            max_newton_step: 0.05,
            loss: LossConfig::default(),
            adam: AdamConfig {
                lr: 5e-4,
                epoch_steps: 0,
                ..AdamConfig::default()
            },
            window: 100,
            tol_rel: 1e-4,
            padding: 0.15,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reextract_every == 0 || self.window == 0 || self.pool_size == 0 {
            return Err(Error::invalid("refinement periods and pool size must be positive"));
        }
        if self.counts.surface == 0 {
            return Err(Error::invalid("refinement needs surface samples"));
        }
        if !(self.tol_rel >= 0.0 && self.padding >= 0.0 && self.max_newton_step > 0.0) {
            return Err(Error::invalid("invalid refinement tolerances"));
        }
        self.loss.weights.validate()?;
        self.adam.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutput {
    /// Best parameters seen at an extraction checkpoint.
    pub params: Vec<f64>,
    pub mesh: TriMesh,
    pub prefit_log: Vec<LossRecord>,
    pub log: Vec<LossRecord>,
    /// Iteration whose checkpoint supplied `params`.
    pub best_iter: usize,
    pub stopped_early: bool,
}

/// Zero set of `G_params` in `bbox`.
pub fn extract_zero_set(g: &SdfNet, params: &[f64], bbox: Aabb, res: usize) -> Result<TriMesh> {
    let step = 4;
    let band = 1.5 * bbox.extent().norm() * step as f64 / res as f64;
    let grid = sample_grid_banded(bbox, res, step, band, |p, o| {
        let v = g.values(params, &[], p)?;
        o.copy_from_slice(&v);
        Ok(())
    })?;
    marching_cubes_grid(&grid)
}

/// Prefit to `coarse`, then normal refinement from `init`.
pub fn refine(
    g: &SdfNet,
    init: Vec<f64>,
    coarse: &TriMesh,
    targets: &NormalTargets<'_>,
    cfg: &RefineConfig,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<RefineOutput> {
    cfg.validate()?;
    Error::check_len("G parameters", g.param_count(), init.len())?;
    let bbox = coarse.bounds().ok_or(Error::EmptyMesh)?.padded(cfg.padding);
    let mut params = init;
    let prefit_log = if cfg.prefit.steps > 0 {
        fit_to_mesh(g, &mut params, coarse, bbox, &cfg.prefit, |_| {})?
    } else {
        Vec::new()
    };

    let mut adam = Adam::new(params.len(), cfg.adam)?;
    let mut rng = crate::rng_from_seed(cfg.seed);
    let noise = Normal::new(0.0, cfg.sigma).map_err(|_| Error::invalid("bad sigma"))?;
    let mut grad = vec![0.0; params.len()];
    let mut log: Vec<LossRecord> = Vec::with_capacity(cfg.max_iters);
    let mut pool: Vec<Vec3> = Vec::new();
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut stopped_early = false;
    let k = cfg.reextract_every;

    let window_mean = |log: &[LossRecord], end: usize, w: usize| -> f64 {
        let s = end.saturating_sub(w);
        log[s..end].iter().map(|r| r.total).sum::<f64>() / (end - s).max(1) as f64
    };

    let mut it = 0;
    while it < cfg.max_iters {
        if it % k == 0 {
            if it > 0 {
                let score = window_mean(&log, it, k);
                if score < best.0 {
                    best = (score, params.clone(), it);
                }
            }
            let zero = extract_zero_set(g, &params, bbox, cfg.extract_res)?;
            let sampler = AreaSampler::new(&zero)?;
            pool = (0..cfg.pool_size).map(|_| sampler.sample(&mut rng).point).collect();
        }

        let idx: Vec<usize> = (0..cfg.counts.surface)
            .map(|_| rng.random_range(0..pool.len()))
            .collect();
        let surface: Vec<Vec3> = idx.iter().map(|&i| pool[i]).collect();
        let mut domain = Vec::with_capacity(cfg.counts.near + cfg.counts.uniform);
        for _ in 0..cfg.counts.near {
            let p = pool[rng.random_range(0..pool.len())];
            domain.push(p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)));
        }
        for _ in 0..cfg.counts.uniform {
            domain.push(uniform_in(&bbox, &mut rng));
        }

        let (sv, sg) = g.values_and_grads(&params, &[], &surface)?;
        let (dv, dg) = g.values_and_grads(&params, &[], &domain)?;
        let mut tgt = Vec::with_capacity(surface.len());
        let mut tw = Vec::with_capacity(surface.len());
        for (x, n) in surface.iter().zip(&sg) {
            let (t, w) = targets.target(*x, n.normalize_or_zero());
            tgt.push(t);
            tw.push(w);
        }
        let eval = evaluate_loss(
            &cfg.loss,
            &LossInputs {
                surface_values: &sv,
                surface_grads: &sg,
                targets: &tgt,
                target_weights: Some(&tw),
                domain_values: &dv,
                domain_grads: &dg,
            },
        )?;
        if !eval.total.is_finite() {
            return Err(Error::NonFinite("refinement loss"));
        }
        grad.fill(0.0);
        g.grad_params(&params, &[], &surface, &eval.surface, &mut grad, None)?;
        g.grad_params(&params, &[], &domain, &eval.domain, &mut grad, None)?;
        let rec = LossRecord::new(it, &eval.parts, eval.total, adam.lr());
        on_step(&rec);
        log.push(rec);
        adam.update(&mut params, &grad)?;

        // keep pooled samples on the moving zero set
        for (j, &i) in idx.iter().enumerate() {
            let n2 = sg[j].norm_squared();
            if n2 > 1e-12 {
                let mut d = sg[j] * (sv[j] / n2);
                let len = d.norm();
                if len > cfg.max_newton_step {
                    d *= cfg.max_newton_step / len;
                }
                pool[i] -= d;
            }
        }

        it += 1;
        if it >= 2 * cfg.window {
            let prev = window_mean(&log, it - cfg.window, cfg.window);
            let cur = window_mean(&log, it, cfg.window);
            if (prev - cur) < cfg.tol_rel * prev.abs() {
                stopped_early = true;
                break;
            }
        }
    }
    if it > 0 {
        let tail = if it % k == 0 { k } else { it % k };
        let score = window_mean(&log, it, tail);
        if score < best.0 {
            best = (score, params.clone(), it);
        }
    }
    let (_, params, best_iter) = best;
    let mesh = extract_zero_set(g, &params, bbox, cfg.output_res)?;
    Ok(RefineOutput {
        params,
        mesh,
        prefit_log,
        log,
        best_iter,
        stopped_early,
    })
}

/// Full second stage: warp the coarse canonical mesh to `pose`, warm-start
/// `G` from the hyper-network on the posed template when given (geometric
/// initialisation otherwise), and refine.
#[allow(clippy::too_many_arguments)]
pub fn refine_avatar(
    coarse_canonical: &TriMesh,
    pose: &Pose,
    template: &SkinnedTemplate,
    targets: &NormalTargets<'_>,
    hypernet: Option<(&HyperNet, &[f64])>,
    g_spec: &MlpSpec,
    cfg: &RefineConfig,
    on_step: impl FnMut(&LossRecord),
) -> Result<RefineOutput> {
    let coarse = warp_to_posed(coarse_canonical, template, pose)?;
    let posed = posed_template(template, pose)?;
    let init = match hypernet {
        Some((net, phi)) => RefineInit::HyperNet {
            net,
            phi,
            template: &posed,
        },
        None => RefineInit::Geometric {
            radius: 0.5,
            seed: cfg.seed,
        },
    };
    let g = SdfNet::new(g_spec.clone())?;
    let p0 = initial_params(g_spec, init)?;
    refine(&g, p0, &coarse, targets, cfg, on_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::chamfer;
    use crate::sdf_net::PositionalEncoding;
    use crate::synth::{render_normal_maps, RenderNoise};

    #[test]
    fn side_rule() {
        let cam = Camera::framing(1.0, 8, Facing::Front).unwrap();
        assert_eq!(select_side(Vec3::Z, &cam), Facing::Front);
        assert_eq!(select_side(-Vec3::Z, &cam), Facing::Back);
        assert_eq!(select_side(Vec3::X, &cam), Facing::Front);
    }

    #[test]
    fn moving_average_and_threshold() {
        let v = [4.0, 2.0, 0.0, 0.0];
        assert_eq!(moving_average(&v, 2), vec![4.0, 3.0, 1.0, 0.0]);
        assert_eq!(iterations_to_threshold(&v, 2, 1.0), Some(3));
        assert_eq!(iterations_to_threshold(&v, 2, -1.0), None);
    }

    #[test]
    fn background_targets_have_zero_weight() {
        let cam = Camera::framing(1.0, 16, Facing::Front).unwrap();
        let m = TriMesh::uv_sphere(Vec3::ZERO, 0.5, 16, 32);
        let (f, b) = render_normal_maps(&m, &cam, RenderNoise::default()).unwrap();
        let t = NormalTargets::new(cam, &f, &b).unwrap();
        assert_eq!(t.target(Vec3::new(0.95, 0.95, 0.0), Vec3::Z).1, 0.0);
        let (n, w) = t.target(Vec3::new(0.0, 0.0, 0.5), Vec3::Z);
        assert!(w > 0.99 && n.dot(Vec3::Z) > 0.95);
        let (n, w) = t.target(Vec3::new(0.0, 0.0, -0.5), -Vec3::Z);
        assert!(w > 0.99 && n.dot(-Vec3::Z) > 0.95);
    }

    #[test]
    fn fixed_point_stays_put() {
        let spec = MlpSpec::new(0, PositionalEncoding::IDENTITY, &[32, 32], vec![]);
        let g = SdfNet::new(spec.clone()).unwrap();
        let coarse = TriMesh::uv_sphere(Vec3::ZERO, 0.6, 24, 48);
        let cam = Camera::framing(1.0, 64, Facing::Front).unwrap();
        let (f, b) = render_normal_maps(&coarse, &cam, RenderNoise::default()).unwrap();
        let t = NormalTargets::new(cam, &f, &b).unwrap();
        let cfg = RefineConfig {
            prefit: FitConfig {
                steps: 150,
                counts: SampleCounts::DESK.scaled(0.25),
                ..FitConfig::default()
            },
            max_iters: 100,
            counts: SampleCounts::DESK.scaled(0.25),
            reextract_every: 50,
            extract_res: 32,
            output_res: 48,
            pool_size: 1024,
            window: 25,
            ..RefineConfig::default()
        };
        let p0 = initial_params(&spec, RefineInit::Geometric { radius: 0.6, seed: 1 }).unwrap();
        let out = refine(&g, p0, &coarse, &t, &cfg, |_| {}).unwrap();
        let voxel = (1.2 + 2.0 * cfg.padding) / cfg.output_res as f64;
        let c = chamfer(&out.mesh, &coarse, 2000, 0).unwrap();
        assert!(c < voxel, "{c} vs voxel {voxel}");
        assert!(out.log.iter().all(|r| r.total.is_finite()));
    }
}
