//! Absolute efficiency calibration from photon-number correlations, each
//! method paired with a generator of synthetic data with known efficiency.

pub mod analog;
pub mod emccd;
pub mod klyshko;
pub mod pnr;

pub use analog::{analog_calibration, invert_nrf_alpha, AnalogCalibration};
pub use emccd::{em_output_pmf, emccd_threshold_calibration, ClickTable, EmGainModel, EmOutput, EmccdSetup};
pub use klyshko::{klyshko_efficiency, simulate_klyshko, CoincidenceRecord, KlyshkoSetup};
pub use pnr::{pnr_efficiencies, simulate_pnr, PnrHistograms, PnrResult, PnrSetup};
