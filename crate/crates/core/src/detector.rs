use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_fraction, domain, Result};
use crate::frames::FrameSet;
use crate::rng::{domain as stream_domain, Streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorRole {
    #[default]
    Resolving,
    Bucket,
    Click,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Mean dark counts per pixel per frame (Poisson).
    pub dark_rate: f64,
    /// Gaussian read-noise standard deviation, electrons.
    pub read_noise: f64,
    /// Mean electron-multiplication gain, if any.
    pub em_gain: Option<f64>,
    /// Click threshold in electrons, if the detector is thresholded.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub efficiency: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub role: DetectorRole,
}

impl DetectorSpec {
    pub fn ideal(efficiency: f64, width: u32, height: u32) -> Result<Self> {
        let d = Self { efficiency, width, height, noise: NoiseModel::default(), role: DetectorRole::Resolving };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        check_fraction("detector efficiency", self.efficiency)?;
        if self.width == 0 || self.height == 0 {
            return domain("detector grid must be non-empty");
        }
        if self.noise.dark_rate < 0.0 || self.noise.read_noise < 0.0 {
            return domain("noise parameters must be non-negative");
        }
        if self.noise.em_gain.is_some_and(|g| g <= 0.0) {
            return domain("EM gain must be positive");
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Adds zero-mean Gaussian read noise to every sample, returning analog
/// frames.
pub fn apply_read_noise(frames: &FrameSet, sigma: f64, seed: u64) -> Result<FrameSet> {
    if !(sigma >= 0.0) {
        return domain("read noise must be non-negative");
    }
    let normal = Normal::new(0.0, sigma).expect("valid normal");
    let streams = Streams::new(seed, stream_domain("read-noise"));
    let per_frame = frames.pixels() * frames.channels();
    let values: Vec<f64> = (0..frames.frames())
        .into_par_iter()
        .flat_map_iter(|f| {
            let mut rng = streams.frame(f as u64);
            (0..frames.channels())
                .flat_map(|c| frames.values(f, c))
                .map(|v| v + normal.sample(&mut rng))
                .collect::<Vec<_>>()
        })
        .collect();
    debug_assert_eq!(values.len(), per_frame * frames.frames());
    let mut out = FrameSet::from_analog(
        frames.header.width,
        frames.header.height,
        frames.header.channels,
        frames.header.seed,
        values,
    )?;
    out.header.config_hash = frames.header.config_hash;
    Ok(out)
}
