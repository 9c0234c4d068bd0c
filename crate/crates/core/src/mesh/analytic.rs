//! Closed-form signed distance fields used as ground truth and test oracles.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    /// Closest point on the axis segment and its parameter in `[0, 1]`.
    pub fn axis_point(&self, p: Vec3) -> (Vec3, f64) {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((p - self.a).dot(ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (self.a + ab * t, t)
    }

    pub fn distance(&self, p: Vec3) -> f64 {
        self.axis_point(p).0.distance(p) - self.radius
    }

    pub fn value_and_grad(&self, p: Vec3) -> (f64, Vec3) {
        let q = self.axis_point(p).0;
        let d = p - q;
        let n = d.norm();
        let g = if n > 0.0 { d * (1.0 / n) } else { Vec3::Y };
        (n - self.radius, g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AnalyticSdf {
    Sphere { center: Vec3, radius: f64 },
    Capsule(Capsule),
    /// Hard union (minimum) of capsules.
    CapsuleUnion(Vec<Capsule>),
}

impl AnalyticSdf {
    pub fn unit_sphere() -> Self {
        AnalyticSdf::Sphere {
            center: Vec3::ZERO,
            radius: 1.0,
        }
    }

    pub fn value(&self, p: Vec3) -> f64 {
        self.value_and_grad(p).0
    }

    /// Value and gradient; at the centre of a sphere or on a capsule axis the
    /// gradient is taken as `+y`.
    pub fn value_and_grad(&self, p: Vec3) -> (f64, Vec3) {
        match self {
            AnalyticSdf::Sphere { center, radius } => {
                let d = p - *center;
                let n = d.norm();
                let g = if n > 0.0 { d * (1.0 / n) } else { Vec3::Y };
                (n - radius, g)
            }
            AnalyticSdf::Capsule(c) => c.value_and_grad(p),
            AnalyticSdf::CapsuleUnion(cs) => {
                let mut best = (f64::INFINITY, Vec3::Y);
                for c in cs {
                    let vg = c.value_and_grad(p);
                    if vg.0 < best.0 {
                        best = vg;
                    }
                }
                best
            }
        }
    }

    /// Batch evaluator in the shape expected by [`super::marching_cubes`].
    pub fn eval_into(&self, pts: &[Vec3], out: &mut [f64]) -> Result<()> {
        crate::Error::check_len("field output", pts.len(), out.len())?;
        for (p, o) in pts.iter().zip(out) {
            *o = self.value(*p);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_gradient_is_unit() {
        let s = AnalyticSdf::unit_sphere();
        let (v, g) = s.value_and_grad(Vec3::new(3.0, 4.0, 0.0));
        assert_eq!(v, 4.0);
        assert!((g.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn capsule_distance() {
        let c = Capsule {
            a: Vec3::ZERO,
            b: Vec3::new(0.0, 2.0, 0.0),
            radius: 0.5,
        };
        assert!((c.distance(Vec3::new(1.0, 1.0, 0.0)) - 0.5).abs() < 1e-15);
        assert!((c.distance(Vec3::new(0.0, 3.0, 0.0)) - 0.5).abs() < 1e-15);
        assert!((c.distance(Vec3::new(0.0, 1.0, 0.0)) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn union_takes_minimum() {
        let c1 = Capsule {
            a: Vec3::ZERO,
            b: Vec3::X,
            radius: 0.1,
        };
        let c2 = Capsule {
            a: Vec3::new(0.0, 5.0, 0.0),
            b: Vec3::new(1.0, 5.0, 0.0),
            radius: 0.1,
        };
        let u = AnalyticSdf::CapsuleUnion(alloc::vec![c1, c2]);
        let p = Vec3::new(0.5, 4.0, 0.0);
        assert_eq!(u.value(p), c2.distance(p));
    }
}
