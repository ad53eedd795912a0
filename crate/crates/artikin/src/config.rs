//! Run configuration shared by all subcommands.
//!
//! Values come from three layers: built-in defaults, a JSON config file and
//! command-line flags. A flag beats the config file, which beats the default.

use std::path::PathBuf;

use artikin_core::geometry::RansacConfig;
use artikin_core::kinfit::{NoiseModel, ParamCounts};
use artikin_core::posegraph::RefineConfig;
use artikin_core::structure::InferConfig;
use serde::{Deserialize, Serialize};

/// One configuration layer. Every field is optional; unknown keys are
/// rejected when read from JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Translation noise of the joint models, meters.
    pub sigma_pos: Option<f64>,
    /// Rotation noise of the joint models, radians.
    pub sigma_rot: Option<f64>,
    /// Segmentation displacement spread, meters.
    pub sigma_d: Option<f64>,
    /// Segmentation normal-angle spread, radians.
    pub sigma_n: Option<f64>,
    pub epsilon: Option<f64>,
    pub min_pts: Option<usize>,
    pub ransac_iterations: Option<usize>,
    pub inlier_threshold: Option<f64>,
    pub refine: Option<bool>,
    pub k_rigid: Option<u32>,
    pub k_prismatic: Option<u32>,
    pub k_rotational: Option<u32>,
    pub seed: Option<u64>,
    /// Worker threads; 0 picks one per CPU.
    pub threads: Option<usize>,
    pub tracks: Option<PathBuf>,
    pub poses: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub lang_model: Option<PathBuf>,
    pub utterances: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config field `{field}`: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub infer: InferConfig,
    pub seed: u64,
    pub threads: usize,
    pub tracks: Option<PathBuf>,
    pub poses: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub lang_model: Option<PathBuf>,
    pub utterances: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident, $($f:ident),*) => {
        RunConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

fn positive(field: &'static str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError {
            field,
            reason: format!("must be a positive finite number, got {v}"),
        })
    }
}

impl RunConfig {
    /// `top` wins wherever it sets a value.
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        let base = self;
        overlay_fields!(
            base, top, sigma_pos, sigma_rot, sigma_d, sigma_n, epsilon, min_pts, ransac_iterations, inlier_threshold,
            refine, k_rigid, k_prismatic, k_rotational, seed, threads, tracks, poses, labels, lang_model, utterances,
            out
        )
    }

    /// Fills unset values with defaults and checks ranges.
    pub fn resolve(&self) -> Result<Settings, ConfigError> {
        let mut infer = InferConfig::default();
        let seg = &mut infer.segmentation;
        if let Some(v) = self.sigma_d {
            seg.affinity.sigma_d = positive("sigma_d", v)?;
        }
        if let Some(v) = self.sigma_n {
            seg.affinity.sigma_n = positive("sigma_n", v)?;
        }
        if let Some(v) = self.epsilon {
            if !(v > 0.0 && v < 1.0) {
                return Err(ConfigError {
                    field: "epsilon",
                    reason: format!("must lie in (0, 1), got {v}"),
                });
            }
            seg.epsilon = v;
        }
        if let Some(v) = self.min_pts {
            if v == 0 {
                return Err(ConfigError {
                    field: "min_pts",
                    reason: "must be at least 1".into(),
                });
            }
            seg.min_pts = v;
        }
        let seed = self.seed.unwrap_or(0);
        let mut ransac = RansacConfig {
            seed,
            ..RansacConfig::default()
        };
        if let Some(v) = self.ransac_iterations {
            if v == 0 {
                return Err(ConfigError {
                    field: "ransac_iterations",
                    reason: "must be at least 1".into(),
                });
            }
            ransac.iterations = v;
        }
        if let Some(v) = self.inlier_threshold {
            ransac.inlier_threshold = positive("inlier_threshold", v)?;
        }
        infer.ransac = ransac;
        infer.refine = match self.refine {
            Some(false) => None,
            _ => Some(RefineConfig {
                ransac,
                ..RefineConfig::default()
            }),
        };
        let d = NoiseModel::default();
        infer.noise = NoiseModel {
            sigma_pos: self.sigma_pos.map_or(Ok(d.sigma_pos), |v| positive("sigma_pos", v))?,
            sigma_rot: self.sigma_rot.map_or(Ok(d.sigma_rot), |v| positive("sigma_rot", v))?,
        };
        let k = ParamCounts::default();
        infer.counts = ParamCounts {
            rigid: self.k_rigid.unwrap_or(k.rigid),
            prismatic: self.k_prismatic.unwrap_or(k.prismatic),
            rotational: self.k_rotational.unwrap_or(k.rotational),
        };
        Ok(Settings {
            infer,
            seed,
            threads: self.threads.unwrap_or(0),
            tracks: self.tracks.clone(),
            poses: self.poses.clone(),
            labels: self.labels.clone(),
            lang_model: self.lang_model.clone(),
            utterances: self.utterances.clone(),
            out: self.out.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_core() {
        let s = RunConfig::default().resolve().unwrap();
        assert_eq!(s.infer.noise, NoiseModel::default());
        assert_eq!(s.infer.segmentation, InferConfig::default().segmentation);
        assert!(s.infer.refine.is_some());
        assert_eq!(s.threads, 0);
    }

    #[test]
    fn ranges_are_checked() {
        let bad = RunConfig {
            epsilon: Some(1.5),
            ..RunConfig::default()
        };
        assert_eq!(bad.resolve().unwrap_err().field, "epsilon");
        let bad = RunConfig {
            sigma_pos: Some(-1.0),
            ..RunConfig::default()
        };
        assert_eq!(bad.resolve().unwrap_err().field, "sigma_pos");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sigma_pos": 0.1, "sigma_typo": 1}"#).is_err());
    }
}
