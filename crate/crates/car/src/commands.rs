//! Subcommand implementations. Each one reads its inputs, runs the core
//! pipeline stage, and writes artifacts under an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use car_core::encoder::NormalImage;
use car_core::geometry::{Camera, Facing, Pose, SkinnedTemplate};
use car_core::mesh::{evaluate as evaluate_meshes, MetricReport, TriMesh};
use car_core::refinement::{posed_template, refine_avatar, warp_to_posed, NormalTargets};
use car_core::sdf_net::MlpSpec;
use car_core::training::{
    train_canonical as core_train_canonical, train_hypernet as core_train_hypernet, CanonicalModel,
    CanonicalSpec, CanonicalView, HyperNet, HyperNetSpec, LossRecord,
};

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::dataset::{generate, Dataset};
use crate::error::{CarError, IoContext, Result};
use crate::image::read_normal_png;
use crate::obj::{read_obj, write_obj};
use crate::records::{read_pose, read_template, write_json, write_loss_csv};

pub const CANONICAL_KIND: &str = "canonical";
pub const HYPERNET_KIND: &str = "hypernet";

fn progress(what: &'static str, every: usize) -> impl FnMut(&LossRecord) {
    move |r| {
        if r.step % every == 0 {
            log::info!("{what} step {} loss {:.6}", r.step, r.total);
        } else {
            log::debug!("{what} step {} loss {:.6}", r.step, r.total);
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)
}

pub fn gen_data(cfg: &Config, out: &Path) -> Result<()> {
    let g = &cfg.gen_data;
    let m = generate(out, &g.subject, g.subjects, g.seed)?;
    log::info!("wrote {} subjects to {}", m.subjects.len(), out.display());
    Ok(())
}

/// Trains the canonical model on every subject, keeping the last
/// `holdout_poses` poses of each one out.
pub fn train_canonical(cfg: &Config, dataset: &Path, out: &Path) -> Result<PathBuf> {
    let ds = Dataset::open(dataset)?;
    let hold = cfg.canonical.holdout_poses;
    let mut subjects = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let s = ds.load_subject(i)?;
        let n = s.views.len();
        if n <= hold {
            return Err(CarError::input(format!("subject {i} has {n} poses, holdout is {hold}")));
        }
        subjects.push(s.canonical(0..n - hold));
    }
    let (model, log) = core_train_canonical(&subjects, &cfg.canonical.train, progress("canonical", 50))?;
    ensure_dir(out)?;
    let path = out.join("canonical.carw");
    Checkpoint::new(CANONICAL_KIND, &model.spec, model.params)?.write(&path)?;
    write_loss_csv(&out.join("canonical_loss.csv"), &log)?;
    Ok(path)
}

/// Trains the hyper-network on the template of every subject posed in every
/// dataset pose.
pub fn train_hypernet(cfg: &Config, dataset: &Path, out: &Path) -> Result<PathBuf> {
    let ds = Dataset::open(dataset)?;
    let mut templates = Vec::new();
    for i in 0..ds.len() {
        let t = read_template(&ds.template_path(i)?)?;
        for k in 0..ds.manifest.subjects[i].poses.len() {
            templates.push(posed_template(&t, &read_pose(&ds.pose_path(i, k)?)?)?);
        }
    }
    let (_, phi, log) = core_train_hypernet(&templates, &cfg.hypernet, progress("hypernet", 50))?;
    ensure_dir(out)?;
    let path = out.join("hypernet.carw");
    Checkpoint::new(HYPERNET_KIND, &cfg.hypernet.spec, phi)?.write(&path)?;
    write_loss_csv(&out.join("hypernet_loss.csv"), &log)?;
    Ok(path)
}

pub fn load_canonical(path: &Path) -> Result<CanonicalModel> {
    let ck = Checkpoint::read(path)?;
    let spec: CanonicalSpec = ck.spec(CANONICAL_KIND, path)?;
    CanonicalModel::new(spec, ck.params).map_err(|e| CarError::format(path, e.to_string()))
}

pub fn load_hypernet(path: &Path) -> Result<(HyperNet, Vec<f64>)> {
    let ck = Checkpoint::read(path)?;
    let spec: HyperNetSpec = ck.spec(HYPERNET_KIND, path)?;
    let net = HyperNet::new(spec).map_err(|e| CarError::format(path, e.to_string()))?;
    if net.param_count() != ck.params.len() {
        return Err(CarError::format(
            path,
            format!("expected {} parameters, found {}", net.param_count(), ck.params.len()),
        ));
    }
    Ok((net, ck.params))
}

/// Everything `reconstruct` needs about one observation.
#[derive(Debug, Clone)]
pub struct Observation {
    pub template: SkinnedTemplate,
    pub pose: Pose,
    pub camera: Camera,
    pub front: NormalImage,
    pub back: NormalImage,
}

impl Observation {
    pub fn from_dataset(dataset: &Path, subject: usize, pose: usize) -> Result<Observation> {
        let ds = Dataset::open(dataset)?;
        let v = ds.load_view(subject, pose)?;
        Ok(Observation {
            template: read_template(&ds.template_path(subject)?)?,
            pose: v.pose,
            camera: ds.manifest.subjects[subject].camera,
            front: v.front,
            back: v.back,
        })
    }

    /// Loose files; the camera frames `[-half_extent, half_extent]²`.
    pub fn from_files(front: &Path, back: &Path, template: &Path, pose: &Path, half_extent: f64) -> Result<Observation> {
        let front = read_normal_png(front, Facing::Front)?;
        let back = read_normal_png(back, Facing::Back)?;
        if front.height != front.width || (back.height, back.width) != (front.height, front.width) {
            return Err(CarError::input("normal maps must be square and of equal size"));
        }
        Ok(Observation {
            template: read_template(template)?,
            pose: read_pose(pose)?,
            camera: Camera::framing(half_extent, front.width, Facing::Front)?,
            front,
            back,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructOutputs {
    pub canonical: PathBuf,
    pub posed: PathBuf,
    pub refined: PathBuf,
    pub log: PathBuf,
}

/// Canonical inference, warp to the observed pose, then normal refinement.
pub fn reconstruct(
    cfg: &Config,
    obs: &Observation,
    canonical: &Path,
    hypernet: Option<&Path>,
    out: &Path,
) -> Result<ReconstructOutputs> {
    let model = load_canonical(canonical)?;
    let hyper = hypernet.map(load_hypernet).transpose()?;
    let r = &cfg.reconstruct;
    if obs.pose.theta.len() != obs.template.n_joints() {
        return Err(CarError::input(format!(
            "pose has {} joints, template has {}",
            obs.pose.theta.len(),
            obs.template.n_joints()
        )));
    }
    let view = CanonicalView {
        pose: obs.pose.clone(),
        camera: obs.camera,
        front: obs.front.clone(),
        back: obs.back.clone(),
    };
    let canon = model.reconstruct(&obs.template, &view, r.canonical_res)?;
    log::info!("canonical mesh: {} vertices", canon.vertices.len());
    let posed = warp_to_posed(&canon, &obs.template, &obs.pose)?;
    let targets = NormalTargets::new(obs.camera, &obs.front, &obs.back)?;
    let g_spec: MlpSpec = hyper.as_ref().map_or_else(|| r.g.clone(), |(n, _)| n.spec.target.clone());
    let refined = refine_avatar(
        &canon,
        &obs.pose,
        &obs.template,
        &targets,
        hyper.as_ref().map(|(n, p)| (n, p.as_slice())),
        &g_spec,
        &r.refine,
        progress("refine", 100),
    )?;
    log::info!(
        "refinement: {} iterations, best at {}",
        refined.log.len(),
        refined.best_iter
    );
    ensure_dir(out)?;
    let outputs = ReconstructOutputs {
        canonical: out.join("canonical.obj"),
        posed: out.join("posed.obj"),
        refined: out.join("refined.obj"),
        log: out.join("refine_loss.csv"),
    };
    write_obj(&outputs.canonical, &canon)?;
    write_obj(&outputs.posed, &posed)?;
    write_obj(&outputs.refined, &refined.mesh)?;
    let mut log = refined.prefit_log;
    let offset = log.len();
    log.extend(refined.log.into_iter().map(|mut r| {
        r.step += offset;
        r
    }));
    write_loss_csv(&outputs.log, &log)?;
    Ok(outputs)
}

pub fn evaluate(cfg: &Config, pred: &Path, gt: &Path, seed: u64) -> Result<MetricReport> {
    let p = read_obj(pred)?;
    let g = read_obj(gt)?;
    Ok(evaluate_meshes(&p, &g, cfg.evaluate.n_samples, seed)?)
}

pub fn write_metrics(path: &Path, report: &MetricReport) -> Result<()> {
    write_json(path, report)
}

/// Warps a canonical mesh into `pose` with weights from the nearest template
/// vertex.
pub fn repose(canonical: &Path, template: &Path, pose: &Path) -> Result<TriMesh> {
    let mesh = read_obj(canonical)?;
    let t = read_template(template)?;
    let pose = read_pose(pose)?;
    if pose.theta.len() != t.n_joints() {
        return Err(CarError::input(format!(
            "pose has {} joints, template has {}",
            pose.theta.len(),
            t.n_joints()
        )));
    }
    Ok(warp_to_posed(&mesh, &t, &pose)?)
}
