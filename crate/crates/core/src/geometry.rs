//! Skeletons, forward kinematics, linear blend skinning and the weak
//! orthographic camera.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{cos, sin, sqrt, Mat3, RigidTransform, Vec3};
use crate::{Error, Result};

/// Blends with `|det| <= DEGENERATE_DET` are refused by [`lbs_inverse`].
pub const DEGENERATE_DET: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    /// Rest positions of the joints.
    pub joints: Vec<Vec3>,
    /// Parent of each joint; `None` only for the root (joint 0). Parents
    /// always precede their children.
    pub parents: Vec<Option<usize>>,
}

impl Skeleton {
    pub fn new(joints: Vec<Vec3>, parents: Vec<Option<usize>>) -> Result<Self> {
        let s = Skeleton { joints, parents };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::invalid("skeleton needs at least one joint"));
        }
        Error::check_len("skeleton parents", self.joints.len(), self.parents.len())?;
        for (j, p) in self.parents.iter().enumerate() {
            match (j, p) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::invalid("joint 0 must be the root")),
                (_, None) => return Err(Error::invalid("only joint 0 may lack a parent")),
                (_, Some(p)) if *p >= j => {
                    return Err(Error::invalid("parent indices must precede children"))
                }
                _ => {}
            }
        }
        if self.joints.iter().any(|j| !j.is_finite()) {
            return Err(Error::NonFinite("skeleton joints"));
        }
        Ok(())
    }

    /// Children of joint `j` in index order.
    pub fn children(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter(move |(_, p)| **p == Some(j))
            .map(|(c, _)| c)
    }
}

/// Per-joint axis-angle rotations (radians × unit axis).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub theta: Vec<Vec3>,
}

impl Pose {
    pub fn rest(n_joints: usize) -> Self {
        Pose {
            theta: alloc::vec![Vec3::ZERO; n_joints],
        }
    }

    pub fn is_rest(&self) -> bool {
        self.theta.iter().all(|t| *t == Vec3::ZERO)
    }
}

/// Rotation matrix for an axis-angle vector.
pub fn rodrigues(axis_angle: Vec3) -> Mat3 {
    let theta2 = axis_angle.norm_squared();
    let k = Mat3::from_rows([
        [0.0, -axis_angle.z, axis_angle.y],
        [axis_angle.z, 0.0, -axis_angle.x],
        [-axis_angle.y, axis_angle.x, 0.0],
    ]);
    let k2 = k * k;
    // R = I + a·K + b·K² with a = sin θ / θ, b = (1 − cos θ) / θ²
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = sqrt(theta2);
        (sin(theta) / theta, (1.0 - cos(theta)) / theta2)
    };
    Mat3::IDENTITY + k.scale(a) + k2.scale(b)
}

/// Bone transforms `B_j = G_j(θ) · G_j(0)⁻¹`, where `G_j` chains each joint's
/// rotation about its rest position down from the root.
pub fn bone_transforms(skeleton: &Skeleton, pose: &Pose) -> Result<Vec<RigidTransform>> {
    Error::check_len("pose joints", skeleton.len(), pose.theta.len())?;
    let mut out: Vec<RigidTransform> = Vec::with_capacity(skeleton.len());
    for (j, (&joint, &theta)) in skeleton.joints.iter().zip(&pose.theta).enumerate() {
        let r = rodrigues(theta);
        // rotation about the rest joint position
        let local = RigidTransform::new(r, joint - r * joint);
        let b = match skeleton.parents[j] {
            None => local,
            Some(p) => out[p].compose(&local),
        };
        out.push(b);
    }
    Ok(out)
}

/// Affine blend `Σ_j w_j B_j`.
pub fn blend_transforms(w: &[f64], transforms: &[RigidTransform]) -> Result<RigidTransform> {
    Error::check_len("skinning weight row", transforms.len(), w.len())?;
    let mut linear = Mat3::ZERO;
    let mut translation = Vec3::ZERO;
    for (&wj, b) in w.iter().zip(transforms) {
        if wj == 0.0 {
            continue;
        }
        linear = linear + b.linear.scale(wj);
        translation += b.translation * wj;
    }
    Ok(RigidTransform::new(linear, translation))
}

/// Forward skinning `x_p = Σ_j w_j B_j x_c`.
pub fn lbs_forward(x_c: Vec3, w: &[f64], transforms: &[RigidTransform]) -> Result<Vec3> {
    Ok(blend_transforms(w, transforms)?.apply(x_c))
}

/// Inverse skinning with the weights held fixed.
pub fn lbs_inverse(x_p: Vec3, w: &[f64], transforms: &[RigidTransform]) -> Result<Vec3> {
    let a = blend_transforms(w, transforms)?;
    let det = a.linear.determinant();
    let inv = a
        .linear
        .try_inverse(DEGENERATE_DET)
        .ok_or(Error::DegenerateWarp { det })?;
    Ok(inv * (x_p - a.translation))
}

/// Spatial Jacobian of the forward warp under locally constant weights.
pub fn warp_linear(w: &[f64], transforms: &[RigidTransform]) -> Result<Mat3> {
    Ok(blend_transforms(w, transforms)?.linear)
}

/// Canonical-space normal for an image-space normal sampled at a posed point.
///
/// `n_c = unit(A_linᵀ · n_world)`: exact for a locally affine warp, an
/// approximation where the weights vary across the neighbourhood.
pub fn canonical_normal(
    n_p: Vec3,
    w: &[f64],
    transforms: &[RigidTransform],
    camera: &Camera,
) -> Result<Vec3> {
    if !(n_p.norm() > 0.0) {
        return Err(Error::ZeroNormal);
    }
    let a = warp_linear(w, transforms)?;
    let n_world = camera.image_to_world_normal(n_p);
    (a.transpose() * n_world)
        .try_normalize()
        .ok_or(Error::ZeroNormal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facing {
    Front,
    Back,
}

/// Weak orthographic camera looking along −z (front) or +z (back), y up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Pixels per world unit.
    pub scale: f64,
    /// Pixel offset added after scaling, `(u, v)`.
    pub translation: [f64; 2],
    pub height: usize,
    pub width: usize,
    pub facing: Facing,
}

impl Camera {
    pub fn new(scale: f64, height: usize, width: usize, facing: Facing) -> Result<Self> {
        let c = Camera {
            scale,
            translation: [0.0, 0.0],
            height,
            width,
            facing,
        };
        c.validate()?;
        Ok(c)
    }

    /// Camera whose frame just contains the cube `[-half_extent, half_extent]³`.
    pub fn framing(half_extent: f64, size: usize, facing: Facing) -> Result<Self> {
        Camera::new(size as f64 / (2.0 * half_extent), size, size, facing)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid("camera scale must be positive"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("camera image size must be non-zero"));
        }
        if !(self.translation[0].is_finite() && self.translation[1].is_finite()) {
            return Err(Error::NonFinite("camera translation"));
        }
        Ok(())
    }

    /// The camera looking at the same scene from the opposite side.
    pub fn opposite(&self) -> Camera {
        Camera {
            facing: match self.facing {
                Facing::Front => Facing::Back,
                Facing::Back => Facing::Front,
            },
            ..*self
        }
    }

    fn mirror(&self, p: Vec3) -> Vec3 {
        match self.facing {
            Facing::Front => p,
            Facing::Back => Vec3::new(-p.x, p.y, -p.z),
        }
    }

    /// Continuous pixel coordinates `(u, v)`; pixel `(i, j)` covers
    /// `[i, i+1) × [j, j+1)`.
    pub fn project(&self, x_p: Vec3) -> (f64, f64) {
        let p = self.mirror(x_p);
        (
            self.scale * p.x + self.translation[0] + self.width as f64 * 0.5,
            -self.scale * p.y + self.translation[1] + self.height as f64 * 0.5,
        )
    }

    /// Inverse of [`Camera::project`] at a given camera-facing depth.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let x = (u - self.translation[0] - self.width as f64 * 0.5) / self.scale;
        let y = -(v - self.translation[1] - self.height as f64 * 0.5) / self.scale;
        self.mirror(Vec3::new(x, y, depth))
    }

    /// Coordinate along the direction pointing at the camera: larger is closer.
    pub fn depth(&self, x: Vec3) -> f64 {
        self.mirror(x).z
    }

    /// World direction pointing from the scene toward the camera.
    pub fn view_axis(&self) -> Vec3 {
        match self.facing {
            Facing::Front => Vec3::Z,
            Facing::Back => -Vec3::Z,
        }
    }

    /// Image normal convention: x right, y down, z toward the viewer.
    pub fn world_to_image_normal(&self, n: Vec3) -> Vec3 {
        match self.facing {
            Facing::Front => Vec3::new(n.x, -n.y, n.z),
            Facing::Back => Vec3::new(-n.x, -n.y, -n.z),
        }
    }

    pub fn image_to_world_normal(&self, n: Vec3) -> Vec3 {
        // both conventions are involutions
        self.world_to_image_normal(n)
    }
}

/// Canonical template: mesh, per-vertex skinning weights and skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkinnedTemplate {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// Row-major `vertices.len() × skeleton.len()`.
    pub weights: Vec<f64>,
    pub skeleton: Skeleton,
}

impl SkinnedTemplate {
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        weights: Vec<f64>,
        skeleton: Skeleton,
    ) -> Result<Self> {
        let t = SkinnedTemplate {
            vertices,
            faces,
            weights,
            skeleton,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn n_joints(&self) -> usize {
        self.skeleton.len()
    }

    pub fn weight_row(&self, i: usize) -> &[f64] {
        let nj = self.n_joints();
        &self.weights[i * nj..(i + 1) * nj]
    }

    pub fn validate(&self) -> Result<()> {
        self.skeleton.validate()?;
        if self.vertices.is_empty() {
            return Err(Error::EmptyMesh);
        }
        Error::check_len(
            "skinning weights",
            self.vertices.len() * self.n_joints(),
            self.weights.len(),
        )?;
        for i in 0..self.vertices.len() {
            let row = self.weight_row(i);
            if row.iter().any(|w| !(*w >= 0.0)) {
                return Err(Error::invalid("skinning weights must be non-negative"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::invalid("skinning weight rows must sum to 1"));
            }
        }
        let n = self.vertices.len() as u32;
        if self.faces.iter().flatten().any(|&i| i >= n) {
            return Err(Error::invalid("face index out of range"));
        }
        Ok(())
    }

    /// Template vertices under the given pose.
    pub fn posed_vertices(&self, pose: &Pose) -> Result<Vec<Vec3>> {
        let b = bone_transforms(&self.skeleton, pose)?;
        self.vertices
            .iter()
            .enumerate()
            .map(|(i, &v)| lbs_forward(v, self.weight_row(i), &b))
            .collect()
    }
}

/// Weight row of the nearest template vertex (lowest index wins ties).
pub fn query_skin_weights(point: Vec3, template: &SkinnedTemplate) -> &[f64] {
    let mut best = (f64::INFINITY, 0usize);
    for (i, v) in template.vertices.iter().enumerate() {
        let d = v.distance_squared(point);
        if d < best.0 {
            best = (d, i);
        }
    }
    template.weight_row(best.1)
}

/// Uniform-grid index for exact nearest-vertex queries.
#[derive(Debug, Clone)]
pub struct NearestVertexIndex {
    points: Vec<Vec3>,
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    /// CSR layout: `starts[c]..starts[c+1]` indexes `items` for cell `c`.
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl NearestVertexIndex {
    pub fn new(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.component_min(*p);
            hi = hi.component_max(*p);
        }
        let extent = (hi - lo).component_max(Vec3::splat(1e-9));
        let max_extent = extent.x.max(extent.y).max(extent.z);
        let g = (sqrt(points.len() as f64 / 4.0) as usize).clamp(1, 128);
        let cell = max_extent / g as f64;
        let dims = [
            ((extent.x / cell) as usize + 1).max(1),
            ((extent.y / cell) as usize + 1).max(1),
            ((extent.z / cell) as usize + 1).max(1),
        ];
        let n_cells = dims[0] * dims[1] * dims[2];
        let mut counts = alloc::vec![0u32; n_cells + 1];
        let cell_of = |p: Vec3| -> usize {
            let c = Self::cell_coords(p, lo, cell, dims);
            (c[2] * dims[1] + c[1]) * dims[0] + c[0]
        };
        for p in points {
            counts[cell_of(*p) + 1] += 1;
        }
        for c in 0..n_cells {
            counts[c + 1] += counts[c];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut items = alloc::vec![0u32; points.len()];
        // ascending insertion keeps each cell sorted by vertex index
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(*p);
            items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        Ok(NearestVertexIndex {
            points: points.to_vec(),
            origin: lo,
            cell,
            dims,
            starts,
            items,
        })
    }

    fn cell_coords(p: Vec3, origin: Vec3, cell: f64, dims: [usize; 3]) -> [usize; 3] {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = (p[a] - origin[a]) / cell;
            out[a] = if f.is_nan() || f < 0.0 {
                0
            } else {
                (f as usize).min(dims[a] - 1)
            };
        }
        out
    }

    /// Index of the nearest point, ties broken by lowest index.
    pub fn nearest(&self, q: Vec3) -> usize {
        let c = Self::cell_coords(q, self.origin, self.cell, self.dims);
        let max_r = self.dims[0].max(self.dims[1]).max(self.dims[2]);
        let mut best = (f64::INFINITY, usize::MAX);
        for r in 0..=max_r {
            let ri = r as isize;
            let lo = [c[0] as isize - ri, c[1] as isize - ri, c[2] as isize - ri];
            let hi = [c[0] as isize + ri, c[1] as isize + ri, c[2] as isize + ri];
            for z in lo[2].max(0)..=hi[2].min(self.dims[2] as isize - 1) {
                for y in lo[1].max(0)..=hi[1].min(self.dims[1] as isize - 1) {
                    let on_shell_zy = z == lo[2] || z == hi[2] || y == lo[1] || y == hi[1];
                    let mut x = lo[0].max(0);
                    let x_end = hi[0].min(self.dims[0] as isize - 1);
                    while x <= x_end {
                        if on_shell_zy || x == lo[0] || x == hi[0] {
                            let cell = (z as usize * self.dims[1] + y as usize) * self.dims[0]
                                + x as usize;
                            let (s, e) = (self.starts[cell] as usize, self.starts[cell + 1] as usize);
                            for &i in &self.items[s..e] {
                                let i = i as usize;
                                let d = self.points[i].distance_squared(q);
                                if d < best.0 || (d == best.0 && i < best.1) {
                                    best = (d, i);
                                }
                            }
                            x += 1;
                        } else {
                            // skip the interior of the shell
                            x = hi[0];
                        }
                    }
                }
            }
            // any point outside the searched box lies beyond one of its faces
            let mut bound = f64::INFINITY;
            for a in 0..3 {
                if lo[a] > 0 {
                    bound = bound.min(q[a] - (self.origin[a] + lo[a] as f64 * self.cell));
                }
                if hi[a] < self.dims[a] as isize - 1 {
                    bound = bound.min(self.origin[a] + (hi[a] + 1) as f64 * self.cell - q[a]);
                }
            }
            if best.1 != usize::MAX && (bound == f64::INFINITY || best.0 < bound * bound) {
                break;
            }
        }
        best.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    fn chain3() -> Skeleton {
        Skeleton::new(
            alloc::vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.5, 1.5, 0.0)
            ],
            alloc::vec![None, Some(0), Some(1)],
        )
        .unwrap()
    }

    #[test]
    fn rodrigues_zero_and_quarter_turn() {
        assert_eq!(rodrigues(Vec3::ZERO), Mat3::IDENTITY);
        let r = rodrigues(Vec3::new(0.0, 0.0, FRAC_PI_2));
        let y = r * Vec3::X;
        assert!((y - Vec3::Y).norm() < 1e-9);
    }

    #[test]
    fn rest_pose_gives_identities_exactly() {
        let s = chain3();
        let b = bone_transforms(&s, &Pose::rest(3)).unwrap();
        assert!(b.iter().all(|t| *t == RigidTransform::IDENTITY));
    }

    #[test]
    fn single_joint_at_origin_is_pure_rotation() {
        let s = Skeleton::new(alloc::vec![Vec3::ZERO], alloc::vec![None]).unwrap();
        let pose = Pose {
            theta: alloc::vec![Vec3::new(0.0, 0.0, FRAC_PI_2)],
        };
        let b = bone_transforms(&s, &pose).unwrap();
        assert!(b[0].translation.norm() < 1e-15);
        assert!(b[0].linear.max_abs_diff(&rodrigues(pose.theta[0])) < 1e-15);
    }

    #[test]
    fn pose_length_mismatch_is_an_error() {
        assert!(matches!(
            bone_transforms(&chain3(), &Pose::rest(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn one_hot_weights_apply_single_bone() {
        let s = chain3();
        let pose = Pose {
            theta: alloc::vec![
                Vec3::new(0.1, 0.2, 0.3),
                Vec3::new(-0.4, 0.0, 0.5),
                Vec3::new(0.0, 0.7, 0.0)
            ],
        };
        let b = bone_transforms(&s, &pose).unwrap();
        let x = Vec3::new(0.3, 1.2, -0.1);
        let w = [0.0, 1.0, 0.0];
        assert_eq!(lbs_forward(x, &w, &b).unwrap(), b[1].apply(x));
        let back = lbs_inverse(b[1].apply(x), &w, &b).unwrap();
        assert!((back - x).norm() < 1e-12);
    }

    #[test]
    fn blend_of_opposite_quarter_turns() {
        let b = [
            RigidTransform::new(rodrigues(Vec3::new(0.0, 0.0, FRAC_PI_2)), Vec3::ZERO),
            RigidTransform::new(rodrigues(Vec3::new(0.0, 0.0, -FRAC_PI_2)), Vec3::ZERO),
        ];
        // 0.5·(0,1,0) + 0.5·(0,−1,0)
        let p = lbs_forward(Vec3::X, &[0.5, 0.5], &b).unwrap();
        assert!(p.norm() < 1e-15);
        // and that blend collapses the plane, so inversion must refuse
        assert!(matches!(
            lbs_inverse(p, &[0.5, 0.5], &b),
            Err(Error::DegenerateWarp { .. })
        ));
    }

    #[test]
    fn weight_row_length_mismatch() {
        let b = [RigidTransform::IDENTITY; 2];
        assert!(lbs_forward(Vec3::X, &[1.0], &b).is_err());
    }

    #[test]
    fn canonical_normal_cases() {
        let cam = Camera::new(10.0, 64, 64, Facing::Front).unwrap();
        let id = [RigidTransform::IDENTITY];
        let n = canonical_normal(Vec3::new(0.0, 0.0, 2.0), &[1.0], &id, &cam).unwrap();
        assert!((n - Vec3::Z).norm() < 1e-15);
        assert_eq!(
            canonical_normal(Vec3::ZERO, &[1.0], &id, &cam),
            Err(Error::ZeroNormal)
        );
        let r = rodrigues(Vec3::new(0.3, -0.2, 0.9));
        let b = [RigidTransform::new(r, Vec3::new(1.0, 2.0, 3.0))];
        let n_img = Vec3::new(0.6, 0.0, 0.8);
        let got = canonical_normal(n_img, &[1.0], &b, &cam).unwrap();
        let want = r.transpose() * cam.image_to_world_normal(n_img);
        assert!((got - want).norm() < 1e-12);
    }

    #[test]
    fn projection_conventions() {
        let cam = Camera::new(20.0, 100, 80, Facing::Front).unwrap();
        assert_eq!(cam.project(Vec3::ZERO), (40.0, 50.0));
        let (u0, v0) = cam.project(Vec3::new(0.1, 0.2, 0.3));
        let (u1, v1) = cam.project(Vec3::new(1.1, 0.2, 0.3));
        assert!((u1 - u0 - 20.0).abs() < 1e-12);
        assert_eq!(v0, v1);
        let back = cam.opposite();
        let p = Vec3::new(0.3, -0.4, 0.7);
        assert_eq!(back.project(p), cam.project(Vec3::new(-p.x, p.y, -p.z)));
        let (u, v) = cam.project(p);
        assert!((cam.unproject(u, v, cam.depth(p)) - p).norm() < 1e-12);
    }

    #[test]
    fn nearest_vertex_tie_break() {
        let mut verts = alloc::vec![Vec3::new(5.0, 5.0, 5.0); 10];
        verts[3] = Vec3::new(-1.0, 0.0, 0.0);
        verts[7] = Vec3::new(1.0, 0.0, 0.0);
        let nj = 10;
        let mut weights = alloc::vec![0.0; 10 * nj];
        for i in 0..10 {
            weights[i * nj + i] = 1.0;
        }
        let joints = (0..nj).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let parents = (0..nj).map(|i| if i == 0 { None } else { Some(i - 1) }).collect();
        let t = SkinnedTemplate::new(
            verts.clone(),
            alloc::vec![],
            weights,
            Skeleton::new(joints, parents).unwrap(),
        )
        .unwrap();
        assert_eq!(query_skin_weights(Vec3::ZERO, &t), t.weight_row(3));
        assert_eq!(query_skin_weights(verts[7], &t), t.weight_row(7));
        let idx = NearestVertexIndex::new(&verts).unwrap();
        assert_eq!(idx.nearest(Vec3::ZERO), 3);
    }

    #[test]
    fn nearest_vertex_matches_brute_force() {
        use rand::Rng;
        let mut rng = crate::rng_from_seed(11);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5), rng.random_range(-0.2..0.2)))
            .collect();
        let idx = NearestVertexIndex::new(&pts).unwrap();
        for _ in 0..500 {
            let q = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let mut best = (f64::INFINITY, 0);
            for (i, p) in pts.iter().enumerate() {
                let d = p.distance_squared(q);
                if d < best.0 {
                    best = (d, i);
                }
            }
            assert_eq!(idx.nearest(q), best.1);
        }
    }
}
