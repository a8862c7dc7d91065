//! Heralded-coincidence calibration of a click detector.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_fraction, data, domain, Result};
use crate::estimators::{EstimateReport, EstimatorKind};
use crate::photon::sample_poisson;
use crate::rng::{domain as stream_domain, Streams};

const CHUNK: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceRecord {
    /// Measured coincidences.
    pub c_m: u64,
    /// Accidental coincidences.
    pub c_a: u64,
    /// Trigger counts.
    pub n_2: u64,
    /// Trigger counts not due to heralded photons.
    pub n_b: u64,
    /// Optical transmission of the path to the device under test.
    pub tau: f64,
}

impl CoincidenceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.c_m < self.c_a {
            return data(format!("accidentals {} exceed measured coincidences {}", self.c_a, self.c_m));
        }
        if self.n_2 < self.n_b {
            return data(format!("trigger noise {} exceeds trigger counts {}", self.n_b, self.n_2));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return domain("path transmission must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlyshkoEstimate {
    pub eta: EstimateReport,
    /// Set when the estimate exceeds one.
    pub diagnostic: Option<String>,
}

/// η₁ = (C_m − C_A)/(τ(n₂ − n_B)), with counting-statistics errors.
pub fn klyshko_efficiency(rec: &CoincidenceRecord) -> Result<KlyshkoEstimate> {
    rec.validate()?;
    if rec.n_2 <= rec.n_b {
        return data("no heralded trigger counts: n2 <= nB");
    }
    let (cm, ca, n2, nb) = (rec.c_m as f64, rec.c_a as f64, rec.n_2 as f64, rec.n_b as f64);
    let den = rec.tau * (n2 - nb);
    let eta = (cm - ca) / den;
    let var_num = cm * (1.0 - cm / n2) + ca * (1.0 - ca / n2);
    let se = (var_num / (den * den) + eta * eta * nb / ((n2 - nb) * (n2 - nb))).sqrt();
    let diagnostic = (eta > 1.0).then(|| format!("efficiency {eta:.4} exceeds one; check tau and the noise subtraction"));
    Ok(KlyshkoEstimate { eta: EstimateReport::new(EstimatorKind::Efficiency, eta, se, rec.n_2 as usize), diagnostic })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlyshkoSetup {
    pub eta1: f64,
    pub eta2: f64,
    pub tau: f64,
    /// Mean photon pairs per coincidence window.
    pub pair_rate: f64,
    /// Dark-click probability per window of the device under test.
    pub dut_dark: f64,
    /// Dark-click probability per window of the trigger.
    pub trigger_dark: f64,
}

impl KlyshkoSetup {
    pub fn validate(&self) -> Result<()> {
        check_fraction("eta1", self.eta1)?;
        check_fraction("eta2", self.eta2)?;
        check_fraction("dut dark probability", self.dut_dark)?;
        check_fraction("trigger dark probability", self.trigger_dark)?;
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return domain("path transmission must be in (0, 1]");
        }
        if !(self.pair_rate > 0.0) {
            return domain("pair rate must be positive");
        }
        Ok(())
    }

    fn dut_click(&self, pairs: u64) -> f64 {
        1.0 - (1.0 - self.dut_dark) * (1.0 - self.tau * self.eta1).powi(pairs as i32)
    }

    fn trigger_click(&self, pairs: u64) -> f64 {
        1.0 - (1.0 - self.trigger_dark) * (1.0 - self.eta2).powi(pairs as i32)
    }
}

/// Simulates about `trigger_windows` trigger clicks. Each click opens a
/// coincidence window on the device under test; the window is sampled
/// conditionally on the trigger having fired. Accidentals are counted in a
/// delayed window and n_B in a blocked-source run of equal duration.
pub fn simulate_klyshko(setup: &KlyshkoSetup, trigger_windows: u64, seed: u64) -> Result<CoincidenceRecord> {
    setup.validate()?;
    if setup.pair_rate > 0.01 {
        log::warn!("pair probability {} per window is not in the low-flux regime", setup.pair_rate);
    }
    // Pairs per window conditioned on a trigger click.
    let lambda = setup.pair_rate;
    let mut weights = Vec::new();
    let mut pk = (-lambda).exp();
    for k in 0..64u64 {
        weights.push(pk * setup.trigger_click(k));
        pk *= lambda / (k + 1) as f64;
        if pk < 1e-18 {
            break;
        }
    }
    let p_click: f64 = weights.iter().sum();
    let cdf: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / p_click;
            Some(*acc)
        })
        .collect();

    let streams = Streams::new(seed, stream_domain("klyshko"));
    let mut rng = streams.child(0).frame(0);
    let bins = (trigger_windows as f64 / p_click).ceil() as u64;
    let n_2 = Binomial::new(bins, p_click).expect("valid binomial").sample(&mut rng);
    let n_b = Binomial::new(bins, setup.trigger_dark).expect("valid binomial").sample(&mut rng);

    let windows = streams.child(1);
    let (c_m, c_a) = (0..n_2.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = windows.frame(c);
            let (mut cm, mut ca) = (0u64, 0u64);
            for _ in c * CHUNK..((c + 1) * CHUNK).min(n_2) {
                let u: f64 = rng.random();
                let k = cdf.iter().position(|&v| u < v).unwrap_or(cdf.len() - 1) as u64;
                cm += rng.random_bool(setup.dut_click(k)) as u64;
                let delayed = sample_poisson(lambda, &mut rng);
                ca += rng.random_bool(setup.dut_click(delayed)) as u64;
            }
            (cm, ca)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(CoincidenceRecord { c_m, c_a, n_2, n_b, tau: setup.tau })
}
