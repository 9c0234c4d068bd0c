//! On-disk synthetic dataset.
//!
//! ```text
//! root/manifest.json
//! root/subject_000/template.obj, template.json, clothed.obj
//! root/subject_000/poses/pose_000.json
//! root/subject_000/renders/pose_000_front.png, pose_000_back.png
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use car_core::encoder::NormalImage;
use car_core::geometry::{Camera, Facing, Pose, SkinnedTemplate};
use car_core::mesh::TriMesh;
use car_core::synth::{make_subject, SubjectConfig, SubjectData};
use car_core::training::{CanonicalSubject, CanonicalView};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CarError, IoContext, Result};
use crate::image::{read_normal_png, write_normal_png};
use crate::obj::{read_obj, write_obj};
use crate::records::{read_json, read_pose, read_template, write_json, write_pose, write_template};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub dir: String,
    pub seed: u64,
    pub height: f64,
    pub camera: Camera,
    pub poses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: SubjectConfig,
    pub subjects: Vec<SubjectEntry>,
}

/// Per-subject seeds drawn from one generator so that subject `i` does not
/// depend on the subject count.
pub fn subject_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = car_core::rng_from_seed(seed);
    (0..n).map(|_| rng.random()).collect()
}

pub fn subject_dir(i: usize) -> String {
    format!("subject_{i:03}")
}

pub fn pose_name(k: usize) -> String {
    format!("pose_{k:03}")
}

/// Generates and writes `n` subjects under `root`. Subjects are built in
/// parallel on the current rayon pool.
pub fn generate(root: &Path, cfg: &SubjectConfig, n: usize, seed: u64) -> Result<Manifest> {
    fs::create_dir_all(root).at(root)?;
    let seeds = subject_seeds(seed, n);
    let subjects = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let data = make_subject(cfg, s)?;
            write_subject(&root.join(subject_dir(i)), &data)?;
            log::info!("subject {i} written");
            Ok(SubjectEntry {
                dir: subject_dir(i),
                seed: s,
                height: data.body.height(),
                camera: data.camera,
                poses: (0..data.poses.len()).map(pose_name).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        seed,
        config: cfg.clone(),
        subjects,
    };
    write_json(&root.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn write_subject(dir: &Path, data: &SubjectData) -> Result<()> {
    let poses = dir.join("poses");
    let renders = dir.join("renders");
    fs::create_dir_all(&poses).at(&poses)?;
    fs::create_dir_all(&renders).at(&renders)?;
    write_template(&dir.join("template.obj"), &data.body.template)?;
    write_obj(&dir.join("clothed.obj"), &data.clothed)?;
    for (k, (pose, (front, back))) in data.poses.iter().zip(&data.renders).enumerate() {
        let name = pose_name(k);
        write_pose(&poses.join(format!("{name}.json")), pose)?;
        write_normal_png(&renders.join(format!("{name}_front.png")), front)?;
        write_normal_png(&renders.join(format!("{name}_back.png")), back)?;
    }
    Ok(())
}

/// One observation loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedView {
    pub pose: Pose,
    pub front: NormalImage,
    pub back: NormalImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSubject {
    pub template: SkinnedTemplate,
    pub clothed: TriMesh,
    pub camera: Camera,
    pub height: f64,
    pub views: Vec<LoadedView>,
}

impl LoadedSubject {
    /// Canonical training subject from the views in `range`.
    pub fn canonical(&self, range: std::ops::Range<usize>) -> CanonicalSubject {
        CanonicalSubject {
            template: self.template.clone(),
            canonical: self.clothed.clone(),
            views: self.views[range].iter().map(|v| self.view(v)).collect(),
        }
    }

    pub fn view(&self, v: &LoadedView) -> CanonicalView {
        CanonicalView {
            pose: v.pose.clone(),
            camera: self.camera,
            front: v.front.clone(),
            back: v.back.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Dataset> {
        let manifest: Manifest = read_json(&root.join(MANIFEST))?;
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.subjects.is_empty()
    }

    fn entry(&self, i: usize) -> Result<&SubjectEntry> {
        self.manifest
            .subjects
            .get(i)
            .ok_or_else(|| CarError::input(format!("subject {i} not in dataset ({} subjects)", self.len())))
    }

    pub fn subject_path(&self, i: usize) -> Result<PathBuf> {
        Ok(self.root.join(&self.entry(i)?.dir))
    }

    pub fn template_path(&self, i: usize) -> Result<PathBuf> {
        Ok(self.subject_path(i)?.join("template.obj"))
    }

    pub fn pose_path(&self, i: usize, k: usize) -> Result<PathBuf> {
        let e = self.entry(i)?;
        let name = e
            .poses
            .get(k)
            .ok_or_else(|| CarError::input(format!("pose {k} not in subject {i}")))?;
        Ok(self.root.join(&e.dir).join("poses").join(format!("{name}.json")))
    }

    pub fn render_paths(&self, i: usize, k: usize) -> Result<(PathBuf, PathBuf)> {
        let e = self.entry(i)?;
        let name = e
            .poses
            .get(k)
            .ok_or_else(|| CarError::input(format!("pose {k} not in subject {i}")))?;
        let r = self.root.join(&e.dir).join("renders");
        Ok((r.join(format!("{name}_front.png")), r.join(format!("{name}_back.png"))))
    }

    pub fn load_view(&self, i: usize, k: usize) -> Result<LoadedView> {
        let (f, b) = self.render_paths(i, k)?;
        Ok(LoadedView {
            pose: read_pose(&self.pose_path(i, k)?)?,
            front: read_normal_png(&f, Facing::Front)?,
            back: read_normal_png(&b, Facing::Back)?,
        })
    }

    pub fn load_subject(&self, i: usize) -> Result<LoadedSubject> {
        let e = self.entry(i)?;
        let dir = self.root.join(&e.dir);
        let views = (0..e.poses.len()).map(|k| self.load_view(i, k)).collect::<Result<Vec<_>>>()?;
        Ok(LoadedSubject {
            template: read_template(&dir.join("template.obj"))?,
            clothed: read_obj(&dir.join("clothed.obj"))?,
            camera: e.camera,
            height: e.height,
            views,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_do_not_depend_on_count() {
        assert_eq!(subject_seeds(5, 3), subject_seeds(5, 8)[..3]);
    }

    #[test]
    fn generate_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SubjectConfig::default();
        cfg.body.resolution = 24;
        cfg.poses = 2;
        cfg.image_size = 32;
        let m = generate(dir.path(), &cfg, 2, 3).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.manifest, m);
        let s = ds.load_subject(1).unwrap();
        let direct = make_subject(&cfg, m.subjects[1].seed).unwrap();
        assert_eq!(s.template.weights.len(), direct.body.template.weights.len());
        assert_eq!(s.views[1].pose, direct.poses[1]);
        assert_eq!(s.views[0].front.mask, direct.renders[0].0.mask);
        assert!(ds.load_view(0, 2).is_err());
    }
}
