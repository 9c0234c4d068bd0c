//! Small JSON and CSV artifacts: template sidecar, poses, loss logs and
//! metric reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use car_core::geometry::{Pose, Skeleton, SkinnedTemplate};
use car_core::mesh::TriMesh;
use car_core::training::LossRecord;
use car_core::Vec3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CarError, IoContext, Result};
use crate::obj::{read_obj, write_obj};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CarError::input(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).at(path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| CarError::format(path, e.to_string()))
}

/// Skeleton and weights stored next to the template OBJ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSidecar {
    pub joints: Vec<[f64; 3]>,
    pub parents: Vec<Option<usize>>,
    /// One row per vertex.
    pub weights: Vec<Vec<f64>>,
}

impl TemplateSidecar {
    pub fn from_template(t: &SkinnedTemplate) -> Self {
        let nj = t.n_joints();
        TemplateSidecar {
            joints: t.skeleton.joints.iter().map(|j| j.to_array()).collect(),
            parents: t.skeleton.parents.clone(),
            weights: t.weights.chunks(nj).map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn into_template(self, mesh: TriMesh) -> car_core::Result<SkinnedTemplate> {
        let skeleton = Skeleton::new(self.joints.into_iter().map(Vec3::from_array).collect(), self.parents)?;
        let nj = skeleton.len();
        if self.weights.iter().any(|r| r.len() != nj) {
            return Err(car_core::Error::DimensionMismatch {
                what: "weight row",
                expected: nj,
                found: self.weights.iter().map(Vec::len).find(|&l| l != nj).unwrap_or(0),
            });
        }
        let weights = self.weights.concat();
        SkinnedTemplate::new(mesh.vertices, mesh.faces, weights, skeleton)
    }
}

/// Writes `stem.obj` and `stem.json`.
pub fn write_template(obj_path: &Path, t: &SkinnedTemplate) -> Result<()> {
    write_obj(obj_path, &TriMesh::new(t.vertices.clone(), t.faces.clone()))?;
    write_json(&obj_path.with_extension("json"), &TemplateSidecar::from_template(t))
}

/// Reads a template OBJ and its JSON sidecar (same stem).
pub fn read_template(obj_path: &Path) -> Result<SkinnedTemplate> {
    let mesh = read_obj(obj_path)?;
    let side_path = obj_path.with_extension("json");
    let side: TemplateSidecar = read_json(&side_path)?;
    side.into_template(mesh).map_err(|e| match e {
        car_core::Error::NonFinite(_) | car_core::Error::DegenerateWarp { .. } => CarError::Core(e),
        other => CarError::format(&side_path, other.to_string()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    /// Axis-angle rotation per joint.
    pub theta: Vec<[f64; 3]>,
}

pub fn write_pose(path: &Path, pose: &Pose) -> Result<()> {
    write_json(
        path,
        &PoseFile {
            theta: pose.theta.iter().map(|t| t.to_array()).collect(),
        },
    )
}

pub fn read_pose(path: &Path) -> Result<Pose> {
    let p: PoseFile = read_json(path)?;
    let theta: Vec<Vec3> = p.theta.into_iter().map(Vec3::from_array).collect();
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(CarError::format(path, "non-finite joint rotation"));
    }
    Ok(Pose { theta })
}

pub const LOSS_HEADER: &str = "step,L_I,L_eik,L_o,total,lr";

pub fn loss_csv(records: &[LossRecord]) -> String {
    let mut s = String::with_capacity(64 * (records.len() + 1));
    s.push_str(LOSS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.step, r.l_i, r.l_eik, r.l_o, r.total, r.lr);
    }
    s
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    fs::write(path, loss_csv(records)).at(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use car_core::training::LossParts;

    #[test]
    fn csv_rows() {
        let parts = LossParts {
            reconstruction: 0.5,
            eikonal: 0.25,
            offsurface: 1.0,
        };
        let s = loss_csv(&[LossRecord::new(3, &parts, 0.625, 1e-3)]);
        assert_eq!(s, "step,L_I,L_eik,L_o,total,lr\n3,0.5,0.25,1,0.625,0.001\n");
    }

    #[test]
    fn template_roundtrip() {
        let sk = Skeleton::new(vec![Vec3::ZERO, Vec3::Y], vec![None, Some(0)]).unwrap();
        let m = TriMesh::uv_sphere(Vec3::ZERO, 0.5, 3, 4);
        let n = m.vertices.len();
        let w: Vec<f64> = (0..n).flat_map(|i| if i % 2 == 0 { [1.0, 0.0] } else { [0.25, 0.75] }).collect();
        let t = SkinnedTemplate::new(m.vertices, m.faces, w, sk).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("template.obj");
        write_template(&p, &t).unwrap();
        assert_eq!(read_template(&p).unwrap(), t);
    }

    #[test]
    fn pose_roundtrip() {
        let pose = Pose {
            theta: vec![Vec3::new(0.1, -0.2, 1.0 / 3.0), Vec3::ZERO],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pose.json");
        write_pose(&p, &pose).unwrap();
        assert_eq!(read_pose(&p).unwrap(), pose);
    }
}
