use car_core::encoder::FeatureMap;
use car_core::geometry::{bone_transforms, lbs_forward, lbs_inverse, Pose, Skeleton, SkinnedTemplate};
use car_core::mesh::{chamfer, marching_cubes, p2s, sample_surface, AnalyticSdf, Aabb, TriMesh};
use car_core::refinement::warp_to_posed;
use car_core::synth::{pose_sampler, JointLimits};
use car_core::training::uniform_in;
use car_core::{rng_from_seed, Vec3};
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn soup(n: usize) -> impl Strategy<Value = TriMesh> {
    prop::collection::vec((vec3(1.0), vec3(1.0), vec3(1.0)), n).prop_filter_map("degenerate triangle", |tris| {
        let mut m = TriMesh::default();
        for (i, (a, b, c)) in tris.into_iter().enumerate() {
            if (b - a).cross(c - a).norm() < 1e-3 {
                return None;
            }
            m.vertices.extend([a, b, c]);
            let k = 3 * i as u32;
            m.faces.push([k, k + 1, k + 2]);
        }
        Some(m)
    })
}

/// Chain skeleton with random joint offsets, a random pose, and a weight row.
fn rig() -> impl Strategy<Value = (Skeleton, Pose, Vec<f64>)> {
    (2usize..6)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(vec3(0.5), n),
                prop::collection::vec(vec3(1.2), n),
                prop::collection::vec(0.0f64..1.0, n),
            )
        })
        .prop_map(|(offsets, theta, raw)| {
            let mut joints = Vec::with_capacity(offsets.len());
            let mut at = Vec3::ZERO;
            for o in offsets {
                at += o;
                joints.push(at);
            }
            let parents = (0..joints.len()).map(|j| j.checked_sub(1)).collect();
            let total: f64 = raw.iter().sum::<f64>() + 1e-9;
            let weights = raw.iter().map(|w| (w + 1e-9 / raw.len() as f64) / total).collect();
            (Skeleton::new(joints, parents).unwrap(), Pose { theta }, weights)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lbs_roundtrip((skel, pose, w) in rig(), x in vec3(2.0)) {
        let b = bone_transforms(&skel, &pose).unwrap();
        let xp = lbs_forward(x, &w, &b).unwrap();
        // near-singular blends are rejected rather than inverted
        if let Ok(back) = lbs_inverse(xp, &w, &b) {
            prop_assert!((back - x).norm() <= 1e-7 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn rest_pose_warp_is_identity((skel, _pose, _w) in rig(), seed in any::<u64>()) {
        let m = TriMesh::uv_sphere(Vec3::new(0.1, 0.2, -0.1), 0.4, 4, 6);
        let nj = skel.len();
        let mut rng = rng_from_seed(seed);
        let weights: Vec<f64> = (0..m.vertices.len())
            .flat_map(|_| {
                use rand::Rng;
                let r: Vec<f64> = (0..nj).map(|_| rng.random::<f64>() + 1e-3).collect();
                let s: f64 = r.iter().sum();
                r.into_iter().map(move |v| v / s)
            })
            .collect();
        let t = SkinnedTemplate::new(m.vertices.clone(), m.faces.clone(), weights, skel).unwrap();
        let out = warp_to_posed(&m, &t, &Pose::rest(nj)).unwrap();
        for (a, b) in out.vertices.iter().zip(&m.vertices) {
            prop_assert!((*a - *b).norm() <= 1e-12);
        }
        prop_assert_eq!(&out.faces, &m.faces);
    }

    #[test]
    fn chamfer_is_symmetric_and_nonnegative(a in soup(6), b in soup(4), seed in any::<u64>()) {
        let ab = chamfer(&a, &b, 64, seed).unwrap();
        let ba = chamfer(&b, &a, 64, seed).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!(ab >= 0.0);
        prop_assert!(chamfer(&a, &a, 64, seed).unwrap() < 1e-12);
    }

    #[test]
    fn surface_points_have_zero_p2s(a in soup(5), seed in any::<u64>()) {
        let pts: Vec<Vec3> = sample_surface(&a, 32, seed).unwrap().iter().map(|s| s.point).collect();
        prop_assert!(p2s(&pts, &a).unwrap() < 1e-12);
    }

    #[test]
    fn bilinear_sampling_is_linear_and_bounded(
        data in prop::collection::vec(-1.0f64..1.0, 2 * 3 * 4),
        other in prop::collection::vec(-1.0f64..1.0, 2 * 3 * 4),
        u in -2.0f64..10.0,
        v in -2.0f64..8.0,
    ) {
        let map = |d: &[f64]| FeatureMap { data: d.to_vec(), ..FeatureMap::zeros(2, 3, 4, 2) };
        let sum: Vec<f64> = data.iter().zip(&other).map(|(a, b)| a + b).collect();
        let (fa, fb, fs) = (map(&data).sample(u, v), map(&other).sample(u, v), map(&sum).sample(u, v));
        for c in 0..2 {
            prop_assert!((fs[c] - fa[c] - fb[c]).abs() < 1e-12);
            let plane = &data[c * 12..(c + 1) * 12];
            let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(fa[c] >= lo - 1e-12 && fa[c] <= hi + 1e-12);
        }
    }

    #[test]
    fn uniform_samples_stay_in_the_box(lo in vec3(1.0), ext in vec3(1.0), seed in any::<u64>()) {
        let min = lo;
        let max = lo + Vec3::new(ext.x.abs() + 1e-3, ext.y.abs() + 1e-3, ext.z.abs() + 1e-3);
        let b = Aabb::new(min, max);
        let mut rng = rng_from_seed(seed);
        for _ in 0..64 {
            prop_assert!(b.contains(uniform_in(&b, &mut rng)));
        }
    }

    #[test]
    fn sampled_poses_respect_limits(lims in prop::collection::vec(vec3(1.5), 1..8), seed in any::<u64>()) {
        let limits = JointLimits { limits: lims };
        let pose = pose_sampler(&mut rng_from_seed(seed), &limits).unwrap();
        for (t, l) in pose.theta.iter().zip(&limits.limits) {
            for a in 0..3 {
                prop_assert!(t[a].abs() <= l[a].abs());
            }
        }
    }
}

/// Kolmogorov–Smirnov statistic against U(-l, l).
fn ks_uniform(mut xs: Vec<f64>, l: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = (x + l) / (2.0 * l);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn pose_components_are_uniform() {
    let limits = JointLimits {
        limits: vec![Vec3::new(0.3, 0.7, 1.1)],
    };
    let mut rng = rng_from_seed(11);
    let n = 4000;
    let poses: Vec<Vec3> = (0..n).map(|_| pose_sampler(&mut rng, &limits).unwrap().theta[0]).collect();
    // 1% critical value is 1.63 / sqrt(n)
    let crit = 1.63 / (n as f64).sqrt();
    for a in 0..3 {
        let d = ks_uniform(poses.iter().map(|t| t[a]).collect(), limits.limits[0][a]);
        assert!(d < crit, "axis {a}: D = {d}");
    }
}

#[test]
fn surface_samples_follow_area() {
    // two triangles with areas 1:3
    let m = TriMesh::new(
        vec![
            Vec3::ZERO,
            Vec3::X,
            Vec3::Y * 2.0,
            Vec3::new(5.0, 0.0, 0.0),
            Vec3::new(8.0, 0.0, 0.0),
            Vec3::new(5.0, 2.0, 0.0),
        ],
        vec![[0, 1, 2], [3, 4, 5]],
    );
    let n = 20_000;
    let s = sample_surface(&m, n, 5).unwrap();
    let k = s.iter().filter(|x| x.face == 0).count() as f64;
    let (e0, e1) = (n as f64 * 0.25, n as f64 * 0.75);
    let chi2 = (k - e0).powi(2) / e0 + ((n as f64 - k) - e1).powi(2) / e1;
    // 1 degree of freedom, 0.1% critical value
    assert!(chi2 < 10.83, "chi2 = {chi2}");
}

#[test]
fn marching_cubes_sphere_vertices_lie_near_the_surface() {
    let sdf = AnalyticSdf::Sphere { center: Vec3::ZERO, radius: 0.7 };
    let res = 40;
    let m = marching_cubes(|p: &[Vec3], out: &mut [f64]| sdf.eval_into(p, out), Aabb::cube(1.0), res).unwrap();
    let h = 2.0 / res as f64;
    for v in &m.vertices {
        // linear interpolation of an exact distance along an edge of length h
        assert!((v.norm() - 0.7).abs() < h * h / 0.7);
    }
}
