//! Surface-distance and normal metrics between triangle meshes.
//!
//! * Chamfer: `0.5 · (mean d(A→B) + mean d(B→A))` over area-weighted samples,
//!   where `d` is the exact point-to-triangle distance to the other surface.
//! * P2S: `mean d(A→B)` only (prediction to ground truth).
//! * Normal: `‖n_a − sign(n_a·n_b) n_b‖ / 2` between the face normal at a
//!   sample and the face normal at its closest point on the other mesh,
//!   averaged and symmetrised like Chamfer. The sign alignment makes the
//!   value independent of face orientation.
//!
//! Samples for a mesh are drawn with seed `seed ^ mesh_hash`, so each mesh
//! gets the same samples whichever side of the comparison it is on and the
//! symmetric metrics are exactly symmetric.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Bvh, TriMesh};
use crate::math::{sqrt, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub point: Vec3,
    pub normal: Vec3,
    pub face: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chamfer: f64,
    pub p2s: f64,
    pub normal: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// `seed` mixed with an FNV-1a hash of the mesh geometry.
pub fn mesh_seed(mesh: &TriMesh, seed: u64) -> u64 {
    const PRIME: u64 = 0x100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    for v in &mesh.vertices {
        eat(v.x.to_bits());
        eat(v.y.to_bits());
        eat(v.z.to_bits());
    }
    for f in &mesh.faces {
        eat(f[0] as u64 | (f[1] as u64) << 32);
        eat(f[2] as u64);
    }
    seed ^ h
}

/// Draws area-weighted uniform points from a mesh surface.
#[derive(Debug, Clone)]
pub struct AreaSampler<'a> {
    mesh: &'a TriMesh,
    cdf: Vec<f64>,
    total: f64,
}

impl<'a> AreaSampler<'a> {
    pub fn new(mesh: &'a TriMesh) -> Result<Self> {
        mesh.validate()?;
        let mut cdf = Vec::with_capacity(mesh.faces.len());
        let mut total = 0.0;
        for f in 0..mesh.faces.len() {
            total += mesh.face_area(f);
            cdf.push(total);
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::EmptyMesh);
        }
        Ok(AreaSampler { mesh, cdf, total })
    }

    /// One sample; the normal is the sampled face's normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SurfaceSample {
        let r = rng.random::<f64>() * self.total;
        let f = self.cdf.partition_point(|&c| c <= r).min(self.cdf.len() - 1);
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        let su = sqrt(u);
        let [a, b, c] = self.mesh.triangle(f);
        SurfaceSample {
            point: a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v),
            normal: self.mesh.face_normal(f),
            face: f,
        }
    }
}

/// `n` area-weighted uniform samples, seeded by [`mesh_seed`].
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
    let sampler = AreaSampler::new(mesh)?;
    let mut rng = crate::rng_from_seed(mesh_seed(mesh, seed));
    Ok((0..n).map(|_| sampler.sample(&mut rng)).collect())
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("metric sample count must be positive"));
    }
    Ok(())
}

fn mean_distance(points: impl Iterator<Item = Vec3>, bvh: &Bvh) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in points {
        sum += bvh.closest(p).distance();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn mean_normal_error(samples: &[SurfaceSample], bvh: &Bvh) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples
        .iter()
        .map(|s| {
            let c = bvh.closest(s.point);
            normal_error(s.normal, bvh.mesh().face_normal(c.face))
        })
        .sum();
    sum / samples.len() as f64
}

#[inline]
fn normal_error(na: Vec3, nb: Vec3) -> f64 {
    let s = if na.dot(nb) < 0.0 { -1.0 } else { 1.0 };
    (na - nb * s).norm() * 0.5
}

/// Mean distance from `points` to the surface of `b`.
pub fn p2s(points: &[Vec3], b: &TriMesh) -> Result<f64> {
    let bvh = Bvh::new(b.clone())?;
    Ok(mean_distance(points.iter().copied(), &bvh))
}

/// Chamfer distance at caller-supplied samples of each mesh.
pub fn chamfer_with_samples(
    a_points: &[Vec3],
    b_points: &[Vec3],
    a: &TriMesh,
    b: &TriMesh,
) -> Result<f64> {
    let ab = p2s(a_points, b)?;
    let ba = p2s(b_points, a)?;
    Ok(0.5 * (ab + ba))
}

pub fn chamfer(a: &TriMesh, b: &TriMesh, n_samples: usize, seed: u64) -> Result<f64> {
    check_n(n_samples)?;
    let sa = points(&sample_surface(a, n_samples, seed)?);
    let sb = points(&sample_surface(b, n_samples, seed)?);
    chamfer_with_samples(&sa, &sb, a, b)
}

pub fn normal_consistency(a: &TriMesh, b: &TriMesh, n_samples: usize, seed: u64) -> Result<f64> {
    check_n(n_samples)?;
    let sa = sample_surface(a, n_samples, seed)?;
    let sb = sample_surface(b, n_samples, seed)?;
    let ba = Bvh::new(a.clone())?;
    let bb = Bvh::new(b.clone())?;
    Ok(0.5 * (mean_normal_error(&sa, &bb) + mean_normal_error(&sb, &ba)))
}

/// All three metrics with shared samples and acceleration structures.
pub fn evaluate(pred: &TriMesh, gt: &TriMesh, n_samples: usize, seed: u64) -> Result<MetricReport> {
    check_n(n_samples)?;
    let sp = sample_surface(pred, n_samples, seed)?;
    let sg = sample_surface(gt, n_samples, seed)?;
    let bp = Bvh::new(pred.clone())?;
    let bg = Bvh::new(gt.clone())?;
    let p2s = mean_distance(sp.iter().map(|s| s.point), &bg);
    let s2p = mean_distance(sg.iter().map(|s| s.point), &bp);
    let normal = 0.5 * (mean_normal_error(&sp, &bg) + mean_normal_error(&sg, &bp));
    Ok(MetricReport {
        chamfer: 0.5 * (p2s + s2p),
        p2s,
        normal,
        n_samples,
        seed,
    })
}

fn points(s: &[SurfaceSample]) -> Vec<Vec3> {
    s.iter().map(|s| s.point).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn square(z: f64) -> TriMesh {
        TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, z),
                Vec3::new(1.0, 0.0, z),
                Vec3::new(1.0, 1.0, z),
                Vec3::new(0.0, 1.0, z),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
    }

    #[test]
    fn identical_meshes_score_zero() {
        let m = TriMesh::uv_sphere(Vec3::ZERO, 1.0, 8, 16);
        let r = evaluate(&m, &m, 500, 1).unwrap();
        assert!(r.chamfer < 1e-9 && r.p2s < 1e-9 && r.normal < 1e-9);
    }

    #[test]
    fn offset_squares() {
        let (a, b) = (square(0.0), square(0.25));
        let c = chamfer(&a, &b, 2000, 7).unwrap();
        assert!((c - 0.25).abs() < 0.0025, "{c}");
        assert_eq!(c, chamfer(&b, &a, 2000, 7).unwrap());
    }

    #[test]
    fn flipped_normals_are_consistent() {
        let m = TriMesh::uv_sphere(Vec3::ZERO, 1.0, 8, 16);
        assert!(normal_consistency(&m, &m.flipped(), 300, 2).unwrap() < 1e-9);
    }

    #[test]
    fn empty_mesh_is_an_error() {
        assert_eq!(
            chamfer(&TriMesh::default(), &square(0.0), 10, 0),
            Err(Error::EmptyMesh)
        );
    }
}
