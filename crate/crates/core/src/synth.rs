//! Synthetic subjects: capsule-skeleton bodies with analytic SDFs, random
//! clothing displacement, pose sampling, and normal-map rendering.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::NormalImage;
use crate::geometry::{Camera, Facing, Pose, Skeleton, SkinnedTemplate};
use crate::math::{ceil, floor, sin, Vec3};
use crate::mesh::{marching_cubes, Aabb, AnalyticSdf, Capsule, TriMesh};
use crate::{Error, Result};

/// Joint positions, parents, and one capsule radius per non-root joint (the
/// bone from its parent to it). Radii of root entries are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyLayout {
    pub joints: Vec<Vec3>,
    pub parents: Vec<Option<usize>>,
    pub radii: Vec<f64>,
}

impl BodyLayout {
    /// 19-joint T-pose humanoid about 1.72 units tall, centred at the origin,
    /// facing +z.
    pub fn humanoid() -> Self {
        let mut joints = Vec::new();
        let mut parents = Vec::new();
        let mut radii = Vec::new();
        let mut add = |p: Vec3, parent: Option<usize>, r: f64| {
            joints.push(p);
            parents.push(parent);
            radii.push(r);
            joints.len() - 1
        };
        let pelvis = add(Vec3::new(0.0, 0.0, 0.0), None, 0.0);
        let spine = add(Vec3::new(0.0, 0.25, 0.0), Some(pelvis), 0.14);
        let chest = add(Vec3::new(0.0, 0.45, 0.0), Some(spine), 0.15);
        let neck = add(Vec3::new(0.0, 0.62, 0.0), Some(chest), 0.11);
        add(Vec3::new(0.0, 0.74, 0.0), Some(neck), 0.12);
        for side in [1.0, -1.0] {
            let hip = add(Vec3::new(0.11 * side, -0.05, 0.0), Some(pelvis), 0.12);
            let knee = add(Vec3::new(0.11 * side, -0.45, 0.0), Some(hip), 0.075);
            add(Vec3::new(0.11 * side, -0.81, 0.0), Some(knee), 0.05);
        }
        for side in [1.0, -1.0] {
            let sh = add(Vec3::new(0.18 * side, 0.55, 0.0), Some(chest), 0.08);
            let el = add(Vec3::new(0.45 * side, 0.55, 0.0), Some(sh), 0.05);
            let wr = add(Vec3::new(0.70 * side, 0.55, 0.0), Some(el), 0.04);
            add(Vec3::new(0.80 * side, 0.55, 0.0), Some(wr), 0.035);
        }
        BodyLayout {
            joints,
            parents,
            radii,
        }
    }

    /// Copy with every bone length scaled by `1 + U(−length_jitter, length_jitter)`
    /// and every radius by `1 + U(−radius_jitter, radius_jitter)`.
    pub fn jittered<R: Rng + ?Sized>(&self, length_jitter: f64, radius_jitter: f64, rng: &mut R) -> Self {
        let mut out = self.clone();
        for j in 0..self.joints.len() {
            if let Some(p) = self.parents[j] {
                let ls = 1.0 + length_jitter * rng.random_range(-1.0..=1.0);
                let rs = 1.0 + radius_jitter * rng.random_range(-1.0..=1.0);
                // parents precede children, so out.joints[p] is final
                out.joints[j] = out.joints[p] + (self.joints[j] - self.joints[p]) * ls;
                out.radii[j] = self.radii[j] * rs;
            }
        }
        out
    }

    pub fn skeleton(&self) -> Result<Skeleton> {
        Skeleton::new(self.joints.clone(), self.parents.clone())
    }

    /// `(child joint, capsule)` for every bone.
    pub fn bones(&self) -> Vec<(usize, Capsule)> {
        (0..self.joints.len())
            .filter_map(|j| {
                self.parents[j].map(|p| {
                    (
                        j,
                        Capsule {
                            a: self.joints[p],
                            b: self.joints[j],
                            radius: self.radii[j],
                        },
                    )
                })
            })
            .collect()
    }

    pub fn sdf(&self) -> AnalyticSdf {
        AnalyticSdf::CapsuleUnion(self.bones().into_iter().map(|(_, c)| c).collect())
    }

    /// Bounds of the union of capsules.
    pub fn bounds(&self) -> Aabb {
        let mut b: Option<Aabb> = None;
        for (_, c) in self.bones() {
            let r = Vec3::splat(c.radius);
            let cb = Aabb::new(c.a.component_min(c.b) - r, c.a.component_max(c.b) + r);
            b = Some(match b {
                Some(x) => x.expand(cb.min).expand(cb.max),
                None => cb,
            });
        }
        b.unwrap_or(Aabb::cube(0.0))
    }

    pub fn validate(&self, tolerance: f64) -> Result<()> {
        self.skeleton()?;
        Error::check_len("capsule radii", self.joints.len(), self.radii.len())?;
        let bones = self.bones();
        if bones.is_empty() {
            return Err(Error::invalid("body layout has no bones"));
        }
        if bones.iter().any(|(_, c)| !(c.radius > 0.0)) {
            return Err(Error::invalid("capsule radii must be positive"));
        }
        let hops = bone_hops(self, &bones);
        for i in 0..bones.len() {
            for k in i + 1..bones.len() {
                if hops[i][k] <= 2 {
                    continue;
                }
                let (a, b) = (&bones[i].1, &bones[k].1);
                let d = segment_distance(a.a, a.b, b.a, b.b);
                if d < a.radius + b.radius - tolerance {
                    return Err(Error::invalid("body layout self-intersects"));
                }
            }
        }
        Ok(())
    }
}

/// Graph distance between bones, adjacent when they share a joint.
fn bone_hops(layout: &BodyLayout, bones: &[(usize, Capsule)]) -> Vec<Vec<usize>> {
    let n = bones.len();
    let ends: Vec<[usize; 2]> = bones
        .iter()
        .map(|(j, _)| [layout.parents[*j].unwrap(), *j])
        .collect();
    let mut d = vec![vec![usize::MAX; n]; n];
    for s in 0..n {
        d[s][s] = 0;
        let mut queue = alloc::collections::VecDeque::from([s]);
        while let Some(b) = queue.pop_front() {
            for o in 0..n {
                if d[s][o] == usize::MAX && ends[b].iter().any(|e| ends[o].contains(e)) {
                    d[s][o] = d[s][b] + 1;
                    queue.push_back(o);
                }
            }
        }
    }
    d
}

/// Closest distance between segments `p1q1` and `p2q2`.
pub fn segment_distance(p1: Vec3, q1: Vec3, p2: Vec3, q2: Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(d1);
    let e = d2.dot(d2);
    let f = d2.dot(r);
    let eps = 1e-15;
    let (s, t) = if a <= eps && e <= eps {
        (0.0, 0.0)
    } else if a <= eps {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(r);
        if e <= eps {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(d2);
            let denom = a * e - b * b;
            let mut s = if denom > eps {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    (p1 + d1 * s).distance(p2 + d2 * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BodyConfig {
    /// Marching-cubes cells per axis over the padded body bounds.
    pub resolution: usize,
    /// Exponent `p` in `w ∝ 1 / d^p` over the two nearest bones.
    pub weight_exponent: f64,
    /// Allowed capsule interpenetration between bones more than two hops apart.
    pub overlap_tolerance: f64,
}

impl Default for BodyConfig {
    fn default() -> Self {
        BodyConfig {
            resolution: 64,
            weight_exponent: 2.0,
            overlap_tolerance: 0.01,
        }
    }
}

/// Skinning weights of `x`: inverse distance (power `exponent`) to the two
/// nearest bones, assigned to each bone's parent joint and normalised.
pub fn bone_weights(x: Vec3, layout: &BodyLayout, exponent: f64) -> Vec<f64> {
    let mut best = [(f64::INFINITY, usize::MAX); 2];
    for (j, c) in layout.bones() {
        let d = c.axis_point(x).0.distance(x);
        if d < best[0].0 {
            best[1] = best[0];
            best[0] = (d, j);
        } else if d < best[1].0 {
            best[1] = (d, j);
        }
    }
    let mut w = vec![0.0; layout.joints.len()];
    let owner = |j: usize| layout.parents[j].unwrap();
    if best[1].1 == usize::MAX || best[0].0 <= 1e-12 {
        w[owner(best[0].1)] = 1.0;
        return w;
    }
    let inv = |d: f64| 1.0 / libm::pow(d, exponent);
    let (a, b) = (inv(best[0].0), inv(best[1].0));
    w[owner(best[0].1)] += a / (a + b);
    w[owner(best[1].1)] += b / (a + b);
    w
}

/// A synthetic body: template, analytic SDF and extracted template mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct CapsuleBody {
    pub layout: BodyLayout,
    pub template: SkinnedTemplate,
    pub sdf: AnalyticSdf,
    pub mesh: TriMesh,
}

impl CapsuleBody {
    /// Height of the body along y.
    pub fn height(&self) -> f64 {
        let b = self.layout.bounds();
        b.max.y - b.min.y
    }
}

/// Builds a body from a layout. The template mesh is the zero set of the
/// capsule-union SDF; each vertex gets [`bone_weights`].
pub fn make_capsule_body(layout: &BodyLayout, cfg: &BodyConfig) -> Result<CapsuleBody> {
    layout.validate(cfg.overlap_tolerance)?;
    let sdf = layout.sdf();
    let b = layout.bounds();
    let pad = 2.0 * b.extent().norm() / cfg.resolution as f64 + 1e-3;
    let bounds = b.padded(pad);
    let mesh = marching_cubes(|p: &[Vec3], o: &mut [f64]| sdf.eval_into(p, o), bounds, cfg.resolution)?;
    let mut weights = Vec::with_capacity(mesh.vertices.len() * layout.joints.len());
    for v in &mesh.vertices {
        weights.extend(bone_weights(*v, layout, cfg.weight_exponent));
    }
    let template = SkinnedTemplate::new(mesh.vertices.clone(), mesh.faces.clone(), weights, layout.skeleton()?)?;
    Ok(CapsuleBody {
        layout: layout.clone(),
        template,
        sdf,
        mesh,
    })
}

/// Sum of random plane waves scaled into `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveField {
    /// `(wave vector, phase, amplitude)`.
    pub waves: Vec<(Vec3, f64, f64)>,
}

impl WaveField {
    /// `count` waves with random directions and frequencies in
    /// `[min_freq, max_freq]` (radians per unit length).
    pub fn random<R: Rng + ?Sized>(count: usize, min_freq: f64, max_freq: f64, rng: &mut R) -> Self {
        let gauss = Normal::new(0.0, 1.0).unwrap();
        let waves = (0..count)
            .map(|_| {
                let dir = Vec3::new(gauss.sample(rng), gauss.sample(rng), gauss.sample(rng))
                    .try_normalize()
                    .unwrap_or(Vec3::Y);
                let f = rng.random_range(min_freq..=max_freq);
                let phase = rng.random_range(0.0..core::f64::consts::TAU);
                let amp = rng.random_range(0.5..=1.0);
                (dir * f, phase, amp)
            })
            .collect();
        WaveField { waves }
    }

    pub fn value(&self, x: Vec3) -> f64 {
        let total: f64 = self.waves.iter().map(|w| w.2).sum();
        if total == 0.0 {
            return 0.0;
        }
        self.waves.iter().map(|(k, ph, a)| a * sin(k.dot(x) + ph)).sum::<f64>() / total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClothSpec {
    /// Maximum outward displacement.
    pub amplitude: f64,
    pub waves: usize,
    pub min_freq: f64,
    pub max_freq: f64,
}

impl Default for ClothSpec {
    fn default() -> Self {
        ClothSpec {
            amplitude: 0.03,
            waves: 8,
            min_freq: 6.0,
            max_freq: 14.0,
        }
    }
}

/// Template mesh displaced outward along vertex normals by
/// `amplitude · (0.5 + 0.5·s(x))` for a random wave field `s`, so every
/// displacement lies in `[0, amplitude]`. Vertex order and faces are kept.
pub fn clothe(mesh: &TriMesh, spec: &ClothSpec, seed: u64) -> Result<TriMesh> {
    if !(spec.amplitude >= 0.0 && spec.amplitude.is_finite()) {
        return Err(Error::invalid("cloth amplitude must be finite and non-negative"));
    }
    mesh.validate()?;
    if spec.amplitude == 0.0 {
        return Ok(TriMesh::new(mesh.vertices.clone(), mesh.faces.clone()));
    }
    let mut rng = crate::rng_from_seed(seed);
    let field = WaveField::random(spec.waves, spec.min_freq, spec.max_freq, &mut rng);
    let normals = mesh.compute_vertex_normals();
    Ok(mesh.map_vertices(|i, v| v + normals[i] * (spec.amplitude * (0.5 + 0.5 * field.value(v)))))
}

/// Per-joint axis-angle bounds: each component is drawn from
/// `U(−limit, limit)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub limits: Vec<Vec3>,
}

impl JointLimits {
    pub fn zero(n: usize) -> Self {
        JointLimits {
            limits: vec![Vec3::ZERO; n],
        }
    }

    /// Moderate limits for [`BodyLayout::humanoid`] (radians).
    pub fn humanoid() -> Self {
        let torso = Vec3::new(0.15, 0.2, 0.15);
        let neck = Vec3::new(0.2, 0.3, 0.2);
        let hip = Vec3::new(0.4, 0.2, 0.25);
        let knee = Vec3::new(0.6, 0.05, 0.05);
        let shoulder = Vec3::new(0.5, 0.4, 0.6);
        let elbow = Vec3::new(0.1, 0.7, 0.1);
        let wrist = Vec3::new(0.2, 0.2, 0.2);
        let z = Vec3::ZERO;
        JointLimits {
            limits: vec![
                z, torso, torso, neck, z, // pelvis, spine, chest, neck, head top
                hip, knee, z, hip, knee, z, // legs
                shoulder, elbow, wrist, z, shoulder, elbow, wrist, z, // arms
            ],
        }
    }
}

pub fn pose_sampler<R: Rng + ?Sized>(rng: &mut R, limits: &JointLimits) -> Result<Pose> {
    let mut theta = Vec::with_capacity(limits.limits.len());
    for l in &limits.limits {
        if !l.is_finite() {
            return Err(Error::NonFinite("joint limits"));
        }
        let mut t = Vec3::ZERO;
        for a in 0..3 {
            let lim = l[a].abs();
            if lim > 0.0 {
                t[a] = rng.random_range(-lim..=lim);
            }
        }
        theta.push(t);
    }
    Ok(Pose { theta })
}

/// Rasterisation options.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RenderNoise {
    /// Standard deviation of Gaussian noise on the tangent components.
    pub sigma: f64,
    pub seed: u64,
}

/// Z-buffered normal map of `mesh` seen by `camera`: interpolated vertex
/// normals in the camera's image convention, mask = coverage of pixel centres.
pub fn render_normal_map(mesh: &TriMesh, camera: &Camera, noise: RenderNoise) -> Result<NormalImage> {
    camera.validate()?;
    mesh.validate()?;
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let (h, w) = (camera.height, camera.width);
    let normals = mesh.vertex_normals();
    let mut img = NormalImage::empty(h, w, camera.facing);
    let mut zbuf = vec![f64::NEG_INFINITY; h * w];
    let proj: Vec<(f64, f64, f64)> = mesh
        .vertices
        .iter()
        .map(|v| {
            let (u, vv) = camera.project(*v);
            (u, vv, camera.depth(*v))
        })
        .collect();
    for face in &mesh.faces {
        let [a, b, c] = face.map(|i| i as usize);
        let (pa, pb, pc) = (proj[a], proj[b], proj[c]);
        let area = (pb.0 - pa.0) * (pc.1 - pa.1) - (pc.0 - pa.0) * (pb.1 - pa.1);
        if area == 0.0 {
            continue;
        }
        let u_lo = floor(pa.0.min(pb.0).min(pc.0) - 0.5).max(0.0) as usize;
        let v_lo = floor(pa.1.min(pb.1).min(pc.1) - 0.5).max(0.0) as usize;
        let u_hi = (ceil(pa.0.max(pb.0).max(pc.0) - 0.5).max(-1.0) as isize).min(w as isize - 1);
        let v_hi = (ceil(pa.1.max(pb.1).max(pc.1) - 0.5).max(-1.0) as isize).min(h as isize - 1);
        if u_hi < 0 || v_hi < 0 {
            continue;
        }
        for py in v_lo..=v_hi as usize {
            let y = py as f64 + 0.5;
            for px in u_lo..=u_hi as usize {
                let x = px as f64 + 0.5;
                let w0 = ((pb.0 - x) * (pc.1 - y) - (pc.0 - x) * (pb.1 - y)) / area;
                let w1 = ((pc.0 - x) * (pa.1 - y) - (pa.0 - x) * (pc.1 - y)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let depth = w0 * pa.2 + w1 * pb.2 + w2 * pc.2;
                let i = py * w + px;
                if depth <= zbuf[i] {
                    continue;
                }
                let n = normals[a] * w0 + normals[b] * w1 + normals[c] * w2;
                let Some(n) = n.try_normalize() else { continue };
                zbuf[i] = depth;
                img.normals[i] = camera.world_to_image_normal(n);
                img.mask[i] = true;
            }
        }
    }
    if noise.sigma > 0.0 {
        let mut rng = crate::rng_from_seed(noise.seed);
        let g = Normal::new(0.0, noise.sigma).map_err(|_| Error::invalid("bad noise sigma"))?;
        for i in 0..h * w {
            if !img.mask[i] {
                continue;
            }
            let n = img.normals[i];
            let helper = if n.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
            let t1 = n.cross(helper).normalize_or_zero();
            let t2 = n.cross(t1);
            let perturbed = n + t1 * g.sample(&mut rng) + t2 * g.sample(&mut rng);
            img.normals[i] = perturbed.try_normalize().unwrap_or(n);
        }
    }
    Ok(img)
}

/// Front and back normal maps; the back camera is `front.opposite()`.
pub fn render_normal_maps(
    mesh: &TriMesh,
    front: &Camera,
    noise: RenderNoise,
) -> Result<(NormalImage, NormalImage)> {
    if front.facing != Facing::Front {
        return Err(Error::invalid("render_normal_maps expects the front camera"));
    }
    let back_noise = RenderNoise {
        seed: noise.seed ^ 0xb4c,
        ..noise
    };
    Ok((
        render_normal_map(mesh, front, noise)?,
        render_normal_map(mesh, &front.opposite(), back_noise)?,
    ))
}

/// Sphere of radius `radius` with radial displacement `amplitude · s(d)` for
/// a random wave field `s` on the unit direction `d`.
pub fn bumpy_sphere(radius: f64, amplitude: f64, waves: &WaveField, stacks: usize, slices: usize) -> TriMesh {
    let base = TriMesh::uv_sphere(Vec3::ZERO, 1.0, stacks, slices);
    base.map_vertices(|_, d| d * (radius + amplitude * waves.value(d)))
}

/// Everything generated for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub body: CapsuleBody,
    /// Canonical clothed surface (same vertex order as the template).
    pub clothed: TriMesh,
    pub poses: Vec<Pose>,
    /// Front camera shared by all poses.
    pub camera: Camera,
    /// `(front, back)` per pose.
    pub renders: Vec<(NormalImage, NormalImage)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubjectConfig {
    pub body: BodyConfig,
    pub cloth: ClothSpec,
    pub length_jitter: f64,
    pub radius_jitter: f64,
    pub poses: usize,
    /// Pose 0 is always the rest pose when set.
    pub include_rest: bool,
    pub limits: JointLimits,
    pub image_size: usize,
    /// Half-width of the square world region the camera frames.
    pub frame_half_extent: f64,
    pub noise_sigma: f64,
}

impl Default for SubjectConfig {
    fn default() -> Self {
        SubjectConfig {
            body: BodyConfig::default(),
            cloth: ClothSpec::default(),
            length_jitter: 0.1,
            radius_jitter: 0.2,
            poses: 12,
            include_rest: false,
            limits: JointLimits::humanoid(),
            image_size: 128,
            frame_half_extent: 1.2,
            noise_sigma: 0.0,
        }
    }
}

/// Clothed canonical mesh posed with the template's skinning weights.
pub fn pose_clothed(template: &SkinnedTemplate, clothed: &TriMesh, pose: &Pose) -> Result<TriMesh> {
    Error::check_len("clothed vertices", template.vertices.len(), clothed.vertices.len())?;
    let b = crate::geometry::bone_transforms(&template.skeleton, pose)?;
    let vertices = clothed
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| crate::geometry::lbs_forward(*v, template.weight_row(i), &b))
        .collect::<Result<Vec<_>>>()?;
    Ok(TriMesh::new(vertices, clothed.faces.clone()))
}

/// Generates one subject deterministically from `seed`.
pub fn make_subject(cfg: &SubjectConfig, seed: u64) -> Result<SubjectData> {
    let mut rng = crate::rng_from_seed(seed);
    let base = BodyLayout::humanoid();
    Error::check_len("joint limits", base.joints.len(), cfg.limits.limits.len())?;
    // redraw jitter that makes limbs interpenetrate
    let mut attempt = 0;
    let layout = loop {
        let l = base.jittered(cfg.length_jitter, cfg.radius_jitter, &mut rng);
        attempt += 1;
        match l.validate(cfg.body.overlap_tolerance) {
            Ok(()) => break l,
            Err(e) if attempt >= 64 => return Err(e),
            Err(_) => {}
        }
    };
    let body = make_capsule_body(&layout, &cfg.body)?;
    let clothed = clothe(&body.mesh, &cfg.cloth, rng.random())?;
    let camera = Camera::framing(cfg.frame_half_extent, cfg.image_size, Facing::Front)?;
    let mut poses = Vec::with_capacity(cfg.poses);
    let mut renders = Vec::with_capacity(cfg.poses);
    for k in 0..cfg.poses {
        let pose = if k == 0 && cfg.include_rest {
            Pose::rest(layout.joints.len())
        } else {
            pose_sampler(&mut rng, &cfg.limits)?
        };
        let posed = pose_clothed(&body.template, &clothed, &pose)?;
        let noise = RenderNoise {
            sigma: cfg.noise_sigma,
            seed: rng.random(),
        };
        renders.push(render_normal_maps(&posed, &camera, noise)?);
        poses.push(pose);
    }
    Ok(SubjectData {
        body,
        clothed,
        poses,
        camera,
        renders,
    })
}

/// Analytic silhouette fraction of a sphere for tests and sanity checks.
pub fn sphere_coverage(radius: f64, camera: &Camera) -> f64 {
    let r = radius * camera.scale;
    core::f64::consts::PI * r * r / (camera.height * camera.width) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::chamfer;

    #[test]
    fn humanoid_is_valid_and_sized() {
        let l = BodyLayout::humanoid();
        l.validate(0.01).unwrap();
        let b = l.bounds();
        assert!((b.max.y - b.min.y - 1.72).abs() < 0.02);
        assert!(b.min.x > -1.0 && b.max.x < 1.0);
    }

    #[test]
    fn overlapping_layout_rejected() {
        let mut l = BodyLayout::humanoid();
        // swing the left forearm into the torso
        l.joints[13] = Vec3::new(0.05, 0.3, 0.0);
        l.joints[14] = Vec3::new(0.0, 0.2, 0.0);
        assert!(l.validate(0.01).is_err());
    }

    #[test]
    fn weights_sum_to_one_and_are_rigid_on_axes() {
        let l = BodyLayout::humanoid();
        let mid = (l.joints[6] + l.joints[7]) * 0.5;
        let w = bone_weights(mid, &l, 2.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w[6] - 1.0).abs() < 1e-3);
        let w = bone_weights(Vec3::new(0.3, -0.2, 0.4), &l, 2.0);
        assert!(w.iter().all(|x| *x >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_capsule_body() {
        let l = BodyLayout {
            joints: vec![Vec3::new(0.0, -0.5, 0.0), Vec3::new(0.0, 0.5, 0.0)],
            parents: vec![None, Some(0)],
            radii: vec![0.0, 0.3],
        };
        let cfg = BodyConfig::default();
        let body = make_capsule_body(&l, &cfg).unwrap();
        let voxel = (l.bounds().extent().norm() * 1.2) / cfg.resolution as f64;
        for v in &body.mesh.vertices {
            assert!(body.sdf.value(*v).abs() < 2.0 * voxel);
        }
        assert!(body.template.weights.iter().all(|w| *w == 1.0 || *w == 0.0));
    }

    #[test]
    fn clothing_is_bounded() {
        let m = TriMesh::uv_sphere(Vec3::ZERO, 1.0, 16, 32);
        let spec = ClothSpec::default();
        let c = clothe(&m, &spec, 1).unwrap();
        for (a, b) in m.vertices.iter().zip(&c.vertices) {
            assert!(a.distance(*b) <= spec.amplitude + 1e-12);
        }
        assert!(chamfer(&m, &c, 2000, 0).unwrap() <= spec.amplitude);
        let zero = ClothSpec {
            amplitude: 0.0,
            ..spec
        };
        assert_eq!(clothe(&m, &zero, 1).unwrap().vertices, m.vertices);
    }

    #[test]
    fn zero_limits_give_rest_pose() {
        let mut rng = crate::rng_from_seed(0);
        assert!(pose_sampler(&mut rng, &JointLimits::zero(5)).unwrap().is_rest());
    }

    #[test]
    fn sphere_render() {
        let m = TriMesh::uv_sphere(Vec3::ZERO, 1.0, 64, 128);
        // odd size so pixel 48 is centred on the optical axis
        let cam = Camera::framing(1.5, 97, Facing::Front).unwrap();
        let (f, b) = render_normal_maps(&m, &cam, RenderNoise::default()).unwrap();
        let centre = f.get(48, 48).unwrap();
        assert!((centre - Vec3::Z).norm() < 1e-2);
        let frac = f.coverage() as f64 / (97.0 * 97.0);
        assert!((frac - sphere_coverage(1.0, &cam)).abs() / frac < 0.02);
        let mut mismatched = 0;
        for v in 0..97 {
            for u in 0..97 {
                let mirrored = f.get(96 - u, v).map(|n| Vec3::new(-n.x, n.y, n.z));
                match (b.get(u, v), mirrored) {
                    (Some(x), Some(y)) => assert!((x - y).norm() < 0.05),
                    (None, None) => {}
                    _ => mismatched += 1,
                }
            }
        }
        assert!(mismatched < 97, "{mismatched}");
    }
}
