//! Monte Carlo laboratory for non-classical photon-number correlations.
//!
//! Twin-beam and classical thermal light are sampled mode by mode, sent
//! through binomial loss channels and detector models, and analysed with the
//! estimators and protocols of sub-shot-noise imaging, quantum illumination,
//! ghost imaging and absolute detector calibration. Every sampled statistic
//! has a closed-form counterpart to compare against.

pub mod error;
pub mod estimators;
pub mod calibration;
pub mod detector;
pub mod exact;
pub mod frames;
pub mod geometry;
pub mod ghost;
pub mod imaging;
pub mod io;
pub mod moments;
pub mod photon;
pub mod qi;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
