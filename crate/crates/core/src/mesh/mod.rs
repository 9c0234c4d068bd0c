//! Triangle meshes, isosurface extraction, distance queries and metrics.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::{Error, Result};

mod analytic;
mod bvh;
mod marching_cubes;
mod metrics;

pub use analytic::{AnalyticSdf, Capsule};
pub use bvh::{closest_point_on_triangle, Bvh, Closest};
pub use marching_cubes::{marching_cubes, marching_cubes_grid, sample_grid, sample_grid_banded, Aabb, ScalarGrid};
pub use metrics::{
    chamfer, chamfer_with_samples, evaluate, AreaSampler, mesh_seed, normal_consistency, p2s, sample_surface,
    MetricReport, SurfaceSample,
};

/// Faces with area below this are dropped after extraction.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    #[serde(default)]
    pub normals: Option<Vec<Vec3>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        TriMesh {
            vertices,
            faces,
            normals: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if self.faces.iter().flatten().any(|&i| i >= n) {
            return Err(Error::invalid("face index out of range"));
        }
        if let Some(nr) = &self.normals {
            Error::check_len("vertex normals", self.vertices.len(), nr.len())?;
        }
        Ok(())
    }

    #[inline]
    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unnormalised `(b − a) × (c − a)`; its length is twice the area.
    #[inline]
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(c - a)
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        self.face_cross(f).normalize_or_zero()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Axis-aligned bounds of the vertices.
    pub fn bounds(&self) -> Option<Aabb> {
        let first = *self.vertices.first()?;
        let mut b = Aabb::new(first, first);
        for v in &self.vertices {
            b = b.expand(*v);
        }
        Some(b)
    }

    /// Area-weighted vertex normals.
    pub fn compute_vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::ZERO; self.vertices.len()];
        for (f, face) in self.faces.iter().enumerate() {
            let n = self.face_cross(f);
            for &i in face {
                acc[i as usize] += n;
            }
        }
        acc.into_iter().map(Vec3::normalize_or_zero).collect()
    }

    /// Stored normals or freshly computed ones.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        match &self.normals {
            Some(n) => n.clone(),
            None => self.compute_vertex_normals(),
        }
    }

    pub fn with_vertex_normals(mut self) -> Self {
        self.normals = Some(self.compute_vertex_normals());
        self
    }

    /// Drops faces with area below `min_area` and any vertices no longer used.
    pub fn remove_degenerate(&mut self, min_area: f64) {
        let keep: Vec<bool> = (0..self.faces.len())
            .map(|f| self.face_area(f) >= min_area)
            .collect();
        let mut faces: Vec<[u32; 3]> = self
            .faces
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(f, _)| *f)
            .collect();
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut normals = self.normals.as_ref().map(|_| Vec::new());
        for face in faces.iter_mut() {
            for i in face.iter_mut() {
                let old = *i as usize;
                if remap[old] == u32::MAX {
                    remap[old] = vertices.len() as u32;
                    vertices.push(self.vertices[old]);
                    if let (Some(out), Some(src)) = (normals.as_mut(), self.normals.as_ref()) {
                        out.push(src[old]);
                    }
                }
                *i = remap[old];
            }
        }
        self.vertices = vertices;
        self.faces = faces;
        self.normals = normals;
    }

    /// Mesh with every vertex mapped through `f`; faces and topology kept.
    pub fn map_vertices(&self, mut f: impl FnMut(usize, Vec3) -> Vec3) -> TriMesh {
        TriMesh::new(
            self.vertices.iter().enumerate().map(|(i, v)| f(i, *v)).collect(),
            self.faces.clone(),
        )
    }

    /// Reverses every face's winding.
    pub fn flipped(&self) -> TriMesh {
        TriMesh {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| n.iter().map(|v| -*v).collect()),
        }
    }

    /// UV sphere, mostly for tests.
    pub fn uv_sphere(center: Vec3, radius: f64, stacks: usize, slices: usize) -> TriMesh {
        use crate::math::{cos, sin};
        use core::f64::consts::PI;
        let mut vertices = vec![center + Vec3::new(0.0, radius, 0.0)];
        for i in 1..stacks {
            let phi = PI * i as f64 / stacks as f64;
            for j in 0..slices {
                let th = 2.0 * PI * j as f64 / slices as f64;
                vertices.push(
                    center + Vec3::new(sin(phi) * cos(th), cos(phi), sin(phi) * sin(th)) * radius,
                );
            }
        }
        vertices.push(center - Vec3::new(0.0, radius, 0.0));
        let bottom = (vertices.len() - 1) as u32;
        let ring = |i: usize, j: usize| (1 + (i - 1) * slices + j % slices) as u32;
        let mut faces = Vec::new();
        for j in 0..slices {
            faces.push([0, ring(1, j + 1), ring(1, j)]);
            faces.push([bottom, ring(stacks - 1, j), ring(stacks - 1, j + 1)]);
        }
        for i in 1..stacks - 1 {
            for j in 0..slices {
                let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            }
        }
        TriMesh::new(vertices, faces)
    }
}

/// Signed volume (positive for outward-facing winding of a closed mesh).
pub fn signed_volume(mesh: &TriMesh) -> f64 {
    (0..mesh.faces.len())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            a.dot(b.cross(c)) / 6.0
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uv_sphere_faces_outward() {
        let m = TriMesh::uv_sphere(Vec3::new(0.5, 0.0, 0.0), 1.0, 24, 48);
        m.validate().unwrap();
        let vol = signed_volume(&m);
        assert!((vol - 4.0 / 3.0 * core::f64::consts::PI).abs() < 0.05);
    }

    #[test]
    fn degenerate_faces_are_removed() {
        let mut m = TriMesh::new(
            vec![Vec3::ZERO, Vec3::X, Vec3::Y, Vec3::new(2.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0)],
            vec![[0, 1, 2], [1, 3, 4]],
        );
        m.remove_degenerate(DEGENERATE_AREA);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
        assert_eq!(m.vertices.len(), 3);
    }
}
