//! Point sampling, the three-term implicit-surface loss, Adam, and the
//! canonical-model and hyper-network training loops.
//!
//! The total loss is `λ_I·L_I + λ_eik·L_eik + λ_o·L_o` with
//!
//! * `L_I   = mean_{Ω_I} |F| + w·‖∇F − n̂‖` (surface samples, `w` a per-sample
//!   validity weight, 1 unless the target normal comes from a masked image),
//! * `L_eik = mean_{Ω_D} (‖∇F‖ − 1)²`,
//! * `L_o   = mean_{Ω_D} exp(−α|F|)`.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::math::{exp, Vec3};
use crate::mesh::{Aabb, AreaSampler, TriMesh};
use crate::sdf_net::SampleAdjoint;
use crate::{Error, Result};

mod adam;
mod canonical;
mod hypernet;

pub use adam::{Adam, AdamConfig};
pub use canonical::{
    train_canonical, CanonicalConfig, CanonicalModel, CanonicalSpec, CanonicalSubject, CanonicalView,
    ViewContext,
};
pub use hypernet::{
    hypernet_forward, train_hypernet, HyperNet, HyperNetConfig, HyperNetSpec, HyperTape,
};

/// Surface samples with target normals, and domain samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleBatch {
    pub surface: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    /// Near-surface points followed by uniform points.
    pub domain: Vec<Vec3>,
}

/// Per-step sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleCounts {
    pub surface: usize,
    pub near: usize,
    pub uniform: usize,
}

impl SampleCounts {
    pub const PAPER: SampleCounts = SampleCounts {
        surface: 8192,
        near: 8192,
        uniform: 2048,
    };

    /// One eighth of the reference counts.
    pub const DESK: SampleCounts = SampleCounts {
        surface: 1024,
        near: 1024,
        uniform: 256,
    };

    pub fn scaled(self, factor: f64) -> SampleCounts {
        let s = |n: usize| (crate::math::round(n as f64 * factor) as usize).max(1);
        SampleCounts {
            surface: s(self.surface),
            near: s(self.near),
            uniform: s(self.uniform),
        }
    }
}

impl Default for SampleCounts {
    fn default() -> Self {
        SampleCounts::DESK
    }
}

/// Area-weighted surface samples with face normals, Gaussian-perturbed
/// copies of further surface samples, and uniform points in `bbox`.
pub fn sample_batch<R: Rng + ?Sized>(
    mesh: &TriMesh,
    counts: SampleCounts,
    sigma: f64,
    bbox: Aabb,
    rng: &mut R,
) -> Result<SampleBatch> {
    if counts.surface + counts.near + counts.uniform == 0 {
        return Err(Error::invalid("sample counts are all zero"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("near-surface sigma must be finite and non-negative"));
    }
    let sampler = AreaSampler::new(mesh)?;
    let mut batch = SampleBatch {
        surface: Vec::with_capacity(counts.surface),
        normals: Vec::with_capacity(counts.surface),
        domain: Vec::with_capacity(counts.near + counts.uniform),
    };
    for _ in 0..counts.surface {
        let s = sampler.sample(rng);
        batch.surface.push(s.point);
        batch.normals.push(s.normal);
    }
    let noise = Normal::new(0.0, sigma).map_err(|_| Error::invalid("bad sigma"))?;
    for _ in 0..counts.near {
        let p = sampler.sample(rng).point;
        let d = Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
        batch.domain.push(p + d);
    }
    for _ in 0..counts.uniform {
        batch.domain.push(uniform_in(&bbox, rng));
    }
    Ok(batch)
}

pub fn uniform_in<R: Rng + ?Sized>(b: &Aabb, rng: &mut R) -> Vec3 {
    let mut p = Vec3::ZERO;
    for a in 0..3 {
        let t: f64 = rng.random();
        p[a] = b.min[a] + (b.max[a] - b.min[a]) * t;
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_i: f64,
    pub lambda_eik: f64,
    pub lambda_o: f64,
    /// Sharpness of the off-surface penalty.
    pub alpha: f64,
}

impl LossWeights {
    pub const PAPER: LossWeights = LossWeights {
        lambda_i: 1.0,
        lambda_eik: 0.1,
        lambda_o: 0.1,
        alpha: 100.0,
    };

    pub fn validate(&self) -> Result<()> {
        let l = [self.lambda_i, self.lambda_eik, self.lambda_o];
        if l.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be finite and greater than 1"));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::PAPER
    }
}

/// Norm used for the normal term of `L_I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalNorm {
    #[default]
    L2,
    L1,
}

/// Penalty on `‖∇F‖ − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EikonalForm {
    #[default]
    Squared,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossConfig {
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub normal_norm: NormalNorm,
    #[serde(default)]
    pub eikonal: EikonalForm,
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub reconstruction: f64,
    pub eikonal: f64,
    pub offsurface: f64,
}

impl LossParts {
    pub fn is_finite(&self) -> bool {
        self.reconstruction.is_finite() && self.eikonal.is_finite() && self.offsurface.is_finite()
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn norm_of(d: Vec3, norm: NormalNorm) -> f64 {
    match norm {
        NormalNorm::L2 => d.norm(),
        NormalNorm::L1 => d.x.abs() + d.y.abs() + d.z.abs(),
    }
}

/// `mean |F| + ‖n − n̂‖₂` over surface samples.
pub fn loss_reconstruction(values: &[f64], normals: &[Vec3], targets: &[Vec3]) -> Result<f64> {
    loss_reconstruction_with(values, normals, targets, None, NormalNorm::L2)
}

/// [`loss_reconstruction`] with optional per-sample weights on the normal
/// term and a choice of norm.
pub fn loss_reconstruction_with(
    values: &[f64],
    normals: &[Vec3],
    targets: &[Vec3],
    weights: Option<&[f64]>,
    norm: NormalNorm,
) -> Result<f64> {
    Error::check_len("surface normals", values.len(), normals.len())?;
    Error::check_len("target normals", values.len(), targets.len())?;
    if let Some(w) = weights {
        Error::check_len("normal weights", values.len(), w.len())?;
    }
    if values.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 0..values.len() {
        let w = weights.map_or(1.0, |w| w[i]);
        sum += values[i].abs() + w * norm_of(normals[i] - targets[i], norm);
    }
    Ok(sum / values.len() as f64)
}

/// `mean (‖∇F‖ − 1)²`.
pub fn loss_eikonal(gradients: &[Vec3]) -> f64 {
    loss_eikonal_with(gradients, EikonalForm::Squared)
}

pub fn loss_eikonal_with(gradients: &[Vec3], form: EikonalForm) -> f64 {
    if gradients.is_empty() {
        return 0.0;
    }
    let sum: f64 = gradients
        .iter()
        .map(|g| {
            let r = g.norm() - 1.0;
            match form {
                EikonalForm::Squared => r * r,
                EikonalForm::Abs => r.abs(),
            }
        })
        .sum();
    sum / gradients.len() as f64
}

/// `mean exp(−α|F|)`.
pub fn loss_offsurface(values: &[f64], alpha: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|f| exp(-alpha * f.abs())).sum::<f64>() / values.len() as f64
}

/// `λ_I·L_I + (λ_eik·L_eik + λ_o·L_o)`; the regularisers are summed first.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> f64 {
    w.lambda_i * parts.reconstruction + (w.lambda_eik * parts.eikonal + w.lambda_o * parts.offsurface)
}

/// Network outputs on a batch, as needed by the loss.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub surface_values: &'a [f64],
    pub surface_grads: &'a [Vec3],
    pub targets: &'a [Vec3],
    /// Per-sample weight of the normal term; `None` means all ones.
    pub target_weights: Option<&'a [f64]>,
    pub domain_values: &'a [f64],
    pub domain_grads: &'a [Vec3],
}

/// Loss terms and the adjoints of the weighted total with respect to `F` and
/// `∇F` at every surface and domain sample.
#[derive(Debug, Clone, Default)]
pub struct LossEval {
    pub parts: LossParts,
    pub total: f64,
    pub surface: Vec<SampleAdjoint>,
    pub domain: Vec<SampleAdjoint>,
}

pub fn evaluate_loss(cfg: &LossConfig, x: &LossInputs<'_>) -> Result<LossEval> {
    let w = &cfg.weights;
    let reconstruction = loss_reconstruction_with(
        x.surface_values,
        x.surface_grads,
        x.targets,
        x.target_weights,
        cfg.normal_norm,
    )?;
    Error::check_len("domain gradients", x.domain_values.len(), x.domain_grads.len())?;
    let parts = LossParts {
        reconstruction,
        eikonal: loss_eikonal_with(x.domain_grads, cfg.eikonal),
        offsurface: loss_offsurface(x.domain_values, w.alpha),
    };
    let ns = x.surface_values.len().max(1) as f64;
    let surface = (0..x.surface_values.len())
        .map(|i| {
            let tw = x.target_weights.map_or(1.0, |t| t[i]);
            let d = x.surface_grads[i] - x.targets[i];
            let g = match cfg.normal_norm {
                NormalNorm::L2 => {
                    let n = d.norm();
                    if n > 0.0 {
                        d * (1.0 / n)
                    } else {
                        Vec3::ZERO
                    }
                }
                NormalNorm::L1 => Vec3::new(sign(d.x), sign(d.y), sign(d.z)),
            };
            SampleAdjoint {
                value: w.lambda_i * sign(x.surface_values[i]) / ns,
                gradient: g * (w.lambda_i * tw / ns),
            }
        })
        .collect();
    let nd = x.domain_values.len().max(1) as f64;
    let domain = (0..x.domain_values.len())
        .map(|i| {
            let f = x.domain_values[i];
            let g = x.domain_grads[i];
            let gn = g.norm();
            let r = gn - 1.0;
            let dr = match cfg.eikonal {
                EikonalForm::Squared => 2.0 * r,
                EikonalForm::Abs => sign(r),
            };
            let gdir = if gn > 0.0 { g * (1.0 / gn) } else { Vec3::ZERO };
            SampleAdjoint {
                value: -w.lambda_o * w.alpha * sign(f) * exp(-w.alpha * f.abs()) / nd,
                gradient: gdir * (w.lambda_eik * dr / nd),
            }
        })
        .collect();
    Ok(LossEval {
        total: total_loss(&parts, w),
        parts,
        surface,
        domain,
    })
}

/// One row of a training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub l_i: f64,
    pub l_eik: f64,
    pub l_o: f64,
    pub total: f64,
    pub lr: f64,
}

impl LossRecord {
    pub fn new(step: usize, parts: &LossParts, total: f64, lr: f64) -> Self {
        LossRecord {
            step,
            l_i: parts.reconstruction,
            l_eik: parts.eikonal,
            l_o: parts.offsurface,
            total,
            lr,
        }
    }
}

pub(crate) fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn reconstruction_examples() {
        assert_eq!(loss_reconstruction(&[0.0], &[Vec3::Z], &[Vec3::Z]).unwrap(), 0.0);
        assert_eq!(loss_reconstruction(&[0.5], &[Vec3::Z], &[Vec3::Z]).unwrap(), 0.5);
        assert_eq!(loss_reconstruction(&[0.0], &[-Vec3::Z], &[Vec3::Z]).unwrap(), 2.0);
        assert!(loss_reconstruction(&[0.0], &[], &[Vec3::Z]).is_err());
    }

    #[test]
    fn eikonal_examples() {
        assert_eq!(loss_eikonal(&[Vec3::X, Vec3::Y]), 0.0);
        assert_eq!(loss_eikonal(&[Vec3::new(0.0, 2.0, 0.0)]), 1.0);
        assert_eq!(loss_eikonal_with(&[Vec3::new(0.0, 0.5, 0.0)], EikonalForm::Abs), 0.5);
    }

    #[test]
    fn offsurface_examples() {
        assert_eq!(loss_offsurface(&[0.0], 100.0), 1.0);
        assert!(loss_offsurface(&[10.0], 100.0) < 1e-300);
        assert!((loss_offsurface(&[0.01], 100.0) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn total_examples() {
        let p = LossParts {
            reconstruction: 1.0,
            eikonal: 1.0,
            offsurface: 1.0,
        };
        assert_eq!(total_loss(&p, &LossWeights::PAPER), 1.2);
        assert_eq!(total_loss(&LossParts::default(), &LossWeights::PAPER), 0.0);
    }

    #[test]
    fn single_triangle_sample() {
        let m = TriMesh::new(vec![Vec3::ZERO, Vec3::X, Vec3::Y], vec![[0, 1, 2]]);
        let mut rng = crate::rng_from_seed(0);
        let counts = SampleCounts {
            surface: 1,
            near: 0,
            uniform: 0,
        };
        let b = sample_batch(&m, counts, 0.1, Aabb::cube(1.0), &mut rng).unwrap();
        let p = b.surface[0];
        assert!(p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0 && p.z == 0.0);
        assert_eq!(b.normals[0], Vec3::Z);
        assert!(b.domain.is_empty());
    }

    #[test]
    fn adjoints_match_finite_differences() {
        let cfg = LossConfig::default();
        let sv = [0.3, -0.2];
        let sg = [Vec3::new(0.1, 0.9, 0.2), Vec3::new(-0.4, 0.3, 1.1)];
        let tg = [Vec3::Y, Vec3::Z];
        let tw = [1.0, 0.5];
        let dv = [0.004, -0.02, 0.3];
        let dg = [Vec3::new(1.2, 0.0, 0.3), Vec3::new(0.2, 0.7, 0.1), Vec3::new(0.0, 0.0, 2.0)];
        let total = |sv: &[f64], sg: &[Vec3], dv: &[f64], dg: &[Vec3]| {
            evaluate_loss(
                &cfg,
                &LossInputs {
                    surface_values: sv,
                    surface_grads: sg,
                    targets: &tg,
                    target_weights: Some(&tw),
                    domain_values: dv,
                    domain_grads: dg,
                },
            )
            .unwrap()
        };
        let base = total(&sv, &sg, &dv, &dg);
        let h = 1e-7;
        for i in 0..2 {
            let mut s = sv;
            s[i] += h;
            let fd = (total(&s, &sg, &dv, &dg).total - base.total) / h;
            assert!((fd - base.surface[i].value).abs() < 1e-5);
            for a in 0..3 {
                let mut g = sg;
                g[i][a] += h;
                let fd = (total(&sv, &g, &dv, &dg).total - base.total) / h;
                assert!((fd - base.surface[i].gradient[a]).abs() < 1e-5);
            }
        }
        for i in 0..3 {
            let mut d = dv;
            d[i] += h;
            let fd = (total(&sv, &sg, &d, &dg).total - base.total) / h;
            assert!((fd - base.domain[i].value).abs() < 1e-4, "{fd} {}", base.domain[i].value);
            for a in 0..3 {
                let mut g = dg;
                g[i][a] += h;
                let fd = (total(&sv, &sg, &dv, &g).total - base.total) / h;
                assert!((fd - base.domain[i].gradient[a]).abs() < 1e-5);
            }
        }
    }
}
