//! TOML experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::emccd::EmccdSetup;
use crate::calibration::klyshko::KlyshkoSetup;
use crate::calibration::pnr::PnrSetup;
use crate::detector::DetectorSpec;
use crate::error::{Error, Result};
use crate::geometry::ModeLayout;
use crate::imaging::ImagingScheme;
use crate::photon::SourceSpec;
use crate::qi::QiScenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Imaging,
    Qi,
    Ghost,
    Calibration,
    Statistics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    #[default]
    Uniform,
    Phi,
    Pi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagingConfig {
    pub scheme: ImagingScheme,
    pub alpha: f64,
    #[serde(default)]
    pub mask: MaskKind,
    /// Frames of the no-object run; defaults to the main run length.
    pub calibration_frames: Option<usize>,
    #[serde(default = "one")]
    pub binning: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GhostConfig {
    pub width: usize,
    pub height: usize,
    pub t1: f64,
    pub t_plus: f64,
    pub t_minus: f64,
    /// Fraction of the pixels at the high transmission.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum CalibrationConfig {
    Klyshko {
        #[serde(flatten)]
        setup: KlyshkoSetup,
        windows: u64,
    },
    Pnr {
        #[serde(flatten)]
        setup: PnrSetup,
    },
    Analog {
        layout: ModeLayout,
        mu: f64,
        eta1: f64,
        eta2: f64,
        width: u32,
        height: u32,
        #[serde(default)]
        read_noise: f64,
    },
    Emccd {
        #[serde(flatten)]
        setup: EmccdSetup,
        dark_frames: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Hardware binning factor d.
    Binning,
    /// QI background photons n_B.
    Background,
    /// Per-mode occupation μ.
    Mu,
    /// Detection efficiency η.
    Eta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub seed: u64,
    /// K, frames (or samples per hypothesis for QI).
    pub frames: usize,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    pub source: Option<SourceSpec>,
    pub detector: Option<DetectorSpec>,
    /// Region layout: each pixel becomes one pair of detection regions.
    pub geometry: Option<ModeLayout>,
    pub imaging: Option<ImagingConfig>,
    pub qi: Option<QiScenario>,
    pub ghost: Option<GhostConfig>,
    pub calibration: Option<CalibrationConfig>,
    pub sweep: Option<SweepConfig>,
}

fn default_blocks() -> usize {
    32
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks that the sections the protocol needs are present and valid.
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return config_err("frames must be at least 2");
        }
        if self.blocks < 2 {
            return config_err("blocks must be at least 2");
        }
        let need = |present: bool, name: &str| {
            if present {
                Ok(())
            } else {
                config_err(format!("protocol {:?} needs a [{name}] section", self.protocol))
            }
        };
        let wrap = |r: Result<()>| r.map_err(|e| Error::Config(e.to_string()));
        if let Some(s) = &self.source {
            wrap(s.validate())?;
        }
        if let Some(d) = &self.detector {
            wrap(d.validate())?;
        }
        if let Some(g) = &self.geometry {
            wrap(g.validate())?;
        }
        match self.protocol {
            Protocol::Imaging => {
                need(self.source.is_some(), "source")?;
                need(self.detector.is_some(), "detector")?;
                need(self.imaging.is_some(), "imaging")?;
                let im = self.imaging.unwrap();
                if !(0.0..=1.0).contains(&im.alpha) || im.binning == 0 {
                    return config_err("imaging alpha must be in [0, 1] and binning positive");
                }
            }
            Protocol::Qi => {
                need(self.qi.is_some(), "qi")?;
                wrap(self.qi.unwrap().validate())?;
            }
            Protocol::Ghost => {
                need(self.source.is_some(), "source")?;
                need(self.ghost.is_some(), "ghost")?;
            }
            Protocol::Calibration => need(self.calibration.is_some(), "calibration")?,
            Protocol::Statistics => {
                need(self.source.is_some(), "source")?;
                need(self.detector.is_some(), "detector")?;
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return config_err("sweep needs at least one value");
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, seed included.
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("configuration serializes");
        Sha256::digest(&json).into()
    }

    pub fn hash_hex(&self) -> String {
        super::hex(&self.hash())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const IMAGING: &str = r#"
protocol = "imaging"
seed = 7
frames = 100

[source]
kind = "twin-beam"
mu = 0.1
modes_per_pixel = 50

[detector]
efficiency = 0.8
width = 8
height = 8

[imaging]
scheme = "ssn"
alpha = 0.05
mask = "phi"
"#;

    #[test]
    fn parses_and_hashes() {
        let c = ExperimentConfig::from_toml(IMAGING).unwrap();
        assert_eq!(c.imaging.unwrap().binning, 1);
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
        assert_ne!(c.hash(), c.clone().with_seed(8).hash());
    }

    #[test]
    fn seed_is_mandatory_and_sections_resolve() {
        let no_seed = IMAGING.replace("seed = 7\n", "");
        assert!(matches!(ExperimentConfig::from_toml(&no_seed), Err(Error::Config(_))));
        let no_detector = IMAGING.replace("[detector]", "[unused]");
        assert!(ExperimentConfig::from_toml(&no_detector).is_err());
    }

    #[test]
    fn calibration_methods_parse() {
        let text = r#"
protocol = "calibration"
seed = 1
frames = 10

[calibration]
method = "klyshko"
eta1 = 0.6
eta2 = 0.3
tau = 0.98
pair_rate = 0.001
dut_dark = 1e-5
trigger_dark = 1e-5
windows = 1000
"#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert!(matches!(c.calibration, Some(CalibrationConfig::Klyshko { windows: 1000, .. })));
    }
}
