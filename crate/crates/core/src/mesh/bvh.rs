//! Bounding volume hierarchy for closest-point queries on triangle meshes.

use alloc::vec::Vec;

use super::{Aabb, TriMesh};
use crate::math::Vec3;
use crate::{Error, Result};

const LEAF_SIZE: usize = 4;

/// Closest point on triangle `abc` to `p`, with barycentric weights.
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Closest {
    pub point: Vec3,
    pub distance_squared: f64,
    pub face: usize,
    pub barycentric: [f64; 3],
}

impl Closest {
    pub fn distance(&self) -> f64 {
        crate::math::sqrt(self.distance_squared)
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    // leaf: faces[start..start+count]; inner: children at `start` and `start + 1`
    start: usize,
    count: usize,
}

/// Static BVH over the faces of a mesh it owns.
#[derive(Debug, Clone)]
pub struct Bvh {
    mesh: TriMesh,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl Bvh {
    pub fn new(mesh: TriMesh) -> Result<Self> {
        mesh.validate()?;
        if mesh.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let n = mesh.faces.len();
        let mut order: Vec<usize> = (0..n).collect();
        let boxes: Vec<Aabb> = (0..n)
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                Aabb::new(a, a).expand(b).expand(c)
            })
            .collect();
        let centroids: Vec<Vec3> = boxes.iter().map(Aabb::center).collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        nodes.push(Node {
            bounds: boxes[0],
            start: 0,
            count: n,
        });
        let mut stack = alloc::vec![0usize];
        while let Some(ni) = stack.pop() {
            let (start, count) = (nodes[ni].start, nodes[ni].count);
            let faces = &mut order[start..start + count];
            let mut bounds = boxes[faces[0]];
            let mut cb = Aabb::new(centroids[faces[0]], centroids[faces[0]]);
            for &f in faces.iter() {
                bounds = bounds.expand(boxes[f].min).expand(boxes[f].max);
                cb = cb.expand(centroids[f]);
            }
            nodes[ni].bounds = bounds;
            if count <= LEAF_SIZE {
                continue;
            }
            let e = cb.extent();
            let axis = if e.x >= e.y && e.x >= e.z {
                0
            } else if e.y >= e.z {
                1
            } else {
                2
            };
            let mid = count / 2;
            faces.select_nth_unstable_by(mid, |&a, &b| {
                centroids[a][axis]
                    .total_cmp(&centroids[b][axis])
                    .then(a.cmp(&b))
            });
            let left = nodes.len();
            nodes.push(Node {
                bounds,
                start,
                count: mid,
            });
            nodes.push(Node {
                bounds,
                start: start + mid,
                count: count - mid,
            });
            nodes[ni].start = left;
            nodes[ni].count = 0;
            stack.push(left);
            stack.push(left + 1);
        }
        Ok(Bvh { mesh, nodes, order })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    /// Closest surface point to `p`. Ties go to the lower face index.
    pub fn closest(&self, p: Vec3) -> Closest {
        let mut best = Closest {
            point: Vec3::ZERO,
            distance_squared: f64::INFINITY,
            face: usize::MAX,
            barycentric: [0.0; 3],
        };
        let mut stack: Vec<usize> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bounds.distance_squared(p) > best.distance_squared {
                continue;
            }
            if node.count > 0 {
                for &f in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = self.mesh.triangle(f);
                    let (q, bary) = closest_point_on_triangle(p, a, b, c);
                    let d = q.distance_squared(p);
                    if d < best.distance_squared || (d == best.distance_squared && f < best.face) {
                        best = Closest {
                            point: q,
                            distance_squared: d,
                            face: f,
                            barycentric: bary,
                        };
                    }
                }
            } else {
                let (l, r) = (node.start, node.start + 1);
                let dl = self.nodes[l].bounds.distance_squared(p);
                let dr = self.nodes[r].bounds.distance_squared(p);
                // visit the nearer child first
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }

    /// Interpolated (or face) normal at a closest-point result.
    pub fn normal_at(&self, c: &Closest, vertex_normals: Option<&[Vec3]>) -> Vec3 {
        match vertex_normals {
            Some(vn) => {
                let [a, b, cc] = self.mesh.faces[c.face];
                let n = vn[a as usize] * c.barycentric[0]
                    + vn[b as usize] * c.barycentric[1]
                    + vn[cc as usize] * c.barycentric[2];
                n.try_normalize()
                    .unwrap_or_else(|| self.mesh.face_normal(c.face))
            }
            None => self.mesh.face_normal(c.face),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute(mesh: &TriMesh, p: Vec3) -> f64 {
        (0..mesh.faces.len())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                closest_point_on_triangle(p, a, b, c).0.distance_squared(p)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn triangle_regions() {
        let (a, b, c) = (Vec3::ZERO, Vec3::X, Vec3::Y);
        assert_eq!(closest_point_on_triangle(Vec3::new(-1.0, -1.0, 0.0), a, b, c).0, a);
        assert_eq!(closest_point_on_triangle(Vec3::new(0.25, 0.25, 3.0), a, b, c).0, Vec3::new(0.25, 0.25, 0.0));
        let (q, w) = closest_point_on_triangle(Vec3::new(1.0, 1.0, 0.0), a, b, c);
        assert!((q - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
        assert!((w[1] - 0.5).abs() < 1e-15 && (w[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_on_sphere() {
        let mesh = TriMesh::uv_sphere(Vec3::ZERO, 1.0, 12, 24);
        let bvh = Bvh::new(mesh.clone()).unwrap();
        let mut rng = crate::rng_from_seed(3);
        for _ in 0..500 {
            let p = Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            assert_eq!(bvh.closest(p).distance_squared, brute(&mesh, p));
        }
    }

    #[test]
    fn empty_mesh_rejected() {
        assert!(matches!(Bvh::new(TriMesh::default()), Err(Error::EmptyMesh)));
    }
}
