//! Single JSON configuration with one section per subcommand.

use std::path::Path;

use car_core::refinement::RefineConfig;
use car_core::sdf_net::MlpSpec;
use car_core::synth::SubjectConfig;
use car_core::training::{CanonicalConfig, HyperNetConfig, HyperNetSpec};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CarError, Result};
use crate::records::read_json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenDataSection {
    pub subjects: usize,
    pub subject: SubjectConfig,
    pub seed: u64,
}

impl Default for GenDataSection {
    fn default() -> Self {
        GenDataSection {
            subjects: 8,
            subject: SubjectConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CanonicalSection {
    #[serde(flatten)]
    pub train: CanonicalConfig,
    /// Trailing poses of every subject kept out of training.
    pub holdout_poses: usize,
}

impl Default for CanonicalSection {
    fn default() -> Self {
        CanonicalSection {
            train: CanonicalConfig::default(),
            holdout_poses: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructSection {
    /// Marching-cubes resolution of the canonical zero set.
    pub canonical_res: usize,
    /// Camera framing used when images are given without a dataset.
    pub frame_half_extent: f64,
    pub refine: RefineConfig,
    /// `G` when no hyper-network checkpoint is supplied.
    pub g: MlpSpec,
}

impl Default for ReconstructSection {
    fn default() -> Self {
        ReconstructSection {
            canonical_res: 128,
            frame_half_extent: 1.2,
            refine: RefineConfig::default(),
            g: HyperNetSpec::desk().target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateSection {
    pub n_samples: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { n_samples: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub gen_data: GenDataSection,
    pub canonical: CanonicalSection,
    pub hypernet: HyperNetConfig,
    pub reconstruct: ReconstructSection,
    pub evaluate: EvaluateSection,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config> {
        let cfg = match path {
            Some(p) => {
                let mut v: Value = read_json(p)?;
                if let Some(obj) = v.as_object_mut() {
                    obj.remove("_notes");
                }
                serde_json::from_value(v).map_err(|e| CarError::format(p, e.to_string()))?
            }
            None => Config::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces every section seed.
    pub fn with_seed(mut self, seed: u64) -> Config {
        self.gen_data.seed = seed;
        self.canonical.train.seed = seed;
        self.hypernet.seed = seed;
        self.reconstruct.refine.seed = seed;
        self.reconstruct.refine.prefit.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.gen_data.subject;
        if self.gen_data.subjects == 0 || s.poses == 0 || s.image_size == 0 {
            return Err(CarError::input("gen_data needs at least one subject, pose and pixel"));
        }
        self.canonical.train.validate()?;
        if self.canonical.holdout_poses >= s.poses {
            return Err(CarError::input("canonical.holdout_poses must leave a training pose"));
        }
        self.hypernet.spec.validate()?;
        self.hypernet.loss.weights.validate()?;
        self.reconstruct.refine.validate()?;
        self.reconstruct.g.validate()?;
        if self.reconstruct.canonical_res < 2 || self.reconstruct.frame_half_extent <= 0.0 {
            return Err(CarError::input("reconstruct resolution or framing out of range"));
        }
        if self.evaluate.n_samples == 0 {
            return Err(CarError::input("evaluate.n_samples must be positive"));
        }
        Ok(())
    }

    /// Default configuration plus a `_notes` object giving the reference
    /// values where the defaults are scaled down.
    pub fn template() -> Value {
        let mut v = serde_json::to_value(Config::default()).expect("config serializes");
        v.as_object_mut().expect("object").insert("_notes".into(), notes());
        v
    }
}

fn notes() -> Value {
    json!({
        "loss.weights": "reference: lambda_i 1, lambda_eik 0.1, lambda_o 0.1, alpha 100 (used as defaults)",
        "counts": "reference: 8192 surface, 8192 near-surface (sigma 0.1), 2048 uniform per step; defaults are 1/8 of that, refinement 1/16",
        "adam": "reference: lr 1e-3, x0.1 every 3 epochs; epoch_steps 0 means ceil(steps / 6)",
        "canonical.hidden": "reference F: (262, 512 x 7, 1) with a skip at the fourth layer; default 256 x 4 with a skip at layer 2",
        "canonical.encoder_channels": "reference encoder is a stacked hourglass; default is a 4-layer strided conv stack",
        "hypernet.spec": "reference: encoder (6, 256 x 5) with skips at 2, 3, 4; heads 3 x 256; G (3, 1024, 512, 256, 128, 1). Default halves the widths and uses G (3, 128, 128, 128, 1)",
        "reconstruct.refine.max_iters": "reference: about 1500 iterations from the hyper-network start, 3000 from a random start",
        "reconstruct.refine.adam.lr": "not given in the reference; 5e-4 without decay by default",
        "gen_data.subject.noise_sigma": "Gaussian noise on rendered normal tangents; 0 gives exact renders"
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, serde_json::to_string_pretty(&Config::template()).unwrap()).unwrap();
        assert_eq!(Config::load(Some(&p)).unwrap(), Config::default());
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"canonical": {"steps": 7, "holdout_poses": 2}}"#).unwrap();
        let c = Config::load(Some(&p)).unwrap();
        assert_eq!(c.canonical.train.steps, 7);
        assert_eq!(c.canonical.holdout_poses, 2);
        assert_eq!(c.canonical.train.sigma, 0.1);
        assert_eq!(c.hypernet, HyperNetConfig::default());
    }

    #[test]
    fn bad_values_are_input_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"evaluate": {"n_samples": 0}}"#).unwrap();
        assert_eq!(Config::load(Some(&p)).unwrap_err().exit_code(), 2);
        std::fs::write(&p, "{").unwrap();
        assert_eq!(Config::load(Some(&p)).unwrap_err().exit_code(), 2);
    }
}
