//! Peak-wise heralded calibration of a photon-number-resolving detector.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{check_fraction, data, domain, Result};
use crate::estimators::{EstimateReport, EstimatorKind};
use crate::photon::{sample_poisson, ThermalSampler};
use crate::rng::{domain as stream_domain, Streams};

const CHUNK: u64 = 1 << 16;

/// Click-count frequencies with and without a herald.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnrHistograms {
    /// P(i), heralded.
    pub heralded: Vec<f64>,
    /// 𝒫(i), unheralded.
    pub unheralded: Vec<f64>,
    /// Probability that a herald is true.
    pub xi: f64,
    pub heralded_events: u64,
    pub unheralded_events: u64,
}

fn normalize(counts: &[u64]) -> (Vec<f64>, u64) {
    let total: u64 = counts.iter().sum();
    (counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect(), total)
}

impl PnrHistograms {
    pub fn from_counts(heralded: &[u64], unheralded: &[u64], xi: f64) -> Result<Self> {
        let len = heralded.len().max(unheralded.len());
        let pad = |v: &[u64]| {
            let mut v = v.to_vec();
            v.resize(len, 0);
            v
        };
        let (h, nh) = normalize(&pad(heralded));
        let (u, nu) = normalize(&pad(unheralded));
        let out = Self { heralded: h, unheralded: u, xi, heralded_events: nh, unheralded_events: nu };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            return domain("herald probability must be in (0, 1]");
        }
        if self.heralded.len() != self.unheralded.len() {
            return data("histograms must share their support");
        }
        for (name, h) in [("heralded", &self.heralded), ("unheralded", &self.unheralded)] {
            let s: f64 = h.iter().sum();
            if (s - 1.0).abs() > 1e-9 || h.iter().any(|&p| p < 0.0) {
                return data(format!("{name} histogram is not normalized (sum {s})"));
            }
        }
        if self.heralded_events == 0 || self.unheralded_events == 0 {
            return data("histograms need at least one event each");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakEstimate {
    pub index: usize,
    pub estimate: Option<EstimateReport>,
    /// Why a peak was not used.
    pub issue: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PnrResult {
    pub peaks: Vec<PeakEstimate>,
    /// Generalized-least-squares mean of the usable peaks.
    pub combined: Option<EstimateReport>,
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl PnrResult {
    pub fn usable(&self) -> impl Iterator<Item = &EstimateReport> {
        self.peaks.iter().filter_map(|p| p.estimate.as_ref())
    }
}

/// One efficiency per peak; γ₀ from the empty-detector probability and
/// γᵢ from the shift of probability from peak i−1 to peak i. Peaks whose
/// denominator is zero or poorly determined (relative error above
/// `max_relative_noise`) are reported but not used.
pub fn pnr_efficiencies(h: &PnrHistograms, max_peak: Option<usize>, max_relative_noise: f64) -> Result<PnrResult> {
    h.validate()?;
    let len = h.heralded.len();
    let last = max_peak.unwrap_or(len - 1).min(len - 1);
    let (p, q, xi) = (&h.heralded, &h.unheralded, h.xi);
    let (nh, nu) = (h.heralded_events as f64, h.unheralded_events as f64);
    // Gradients over (P(0..len), 𝒫(0..len)).
    let mut peaks = Vec::new();
    let mut grads: Vec<DVector<f64>> = Vec::new();
    let mut values = Vec::new();
    for i in 0..=last {
        let mut g = DVector::zeros(2 * len);
        let (value, den, den_var) = if i == 0 {
            let den = xi * q[0];
            g[0] = -1.0 / den;
            g[len] = p[0] / (xi * q[0] * q[0]);
            ((q[0] - p[0]) / den, q[0], q[0] * (1.0 - q[0]) / nu)
        } else {
            let d = q[i - 1] - q[i];
            let num = p[i] - q[i];
            g[i] = 1.0 / (xi * d);
            g[len + i] = -1.0 / (xi * d) + num / (xi * d * d);
            g[len + i - 1] = -num / (xi * d * d);
            let var_d = (q[i - 1] * (1.0 - q[i - 1]) + q[i] * (1.0 - q[i]) + 2.0 * q[i - 1] * q[i]) / nu;
            (num / (xi * d), d, var_d)
        };
        let issue = if den == 0.0 {
            Some("zero denominator".to_string())
        } else if den_var.sqrt() > max_relative_noise * den.abs() {
            Some(format!("denominator {den:.3e} is poorly determined"))
        } else {
            None
        };
        if issue.is_none() {
            grads.push(g);
            values.push(value);
        }
        peaks.push(PeakEstimate { index: i, estimate: issue.is_none().then_some(value).map(|v| {
            EstimateReport::new(EstimatorKind::Efficiency, v, 0.0, h.heralded_events as usize)
        }), issue });
    }

    // Multinomial covariance of each histogram.
    let multinomial = |f: &[f64], n: f64| {
        DMatrix::from_fn(len, len, |a, b| (if a == b { f[a] } else { 0.0 } - f[a] * f[b]) / n)
    };
    let mut sigma = DMatrix::zeros(2 * len, 2 * len);
    sigma.view_mut((0, 0), (len, len)).copy_from(&multinomial(p, nh));
    sigma.view_mut((len, len), (len, len)).copy_from(&multinomial(q, nu));
    let k = values.len();
    let cov = DMatrix::from_fn(k, k, |a, b| (grads[a].transpose() * &sigma * &grads[b])[(0, 0)]);
    let mut used = 0;
    for peak in peaks.iter_mut() {
        if let Some(e) = peak.estimate.as_mut() {
            e.standard_error = cov[(used, used)].sqrt();
            used += 1;
        }
    }

    let (combined, chi_square, dof, p_value) = if k == 0 {
        (None, 0.0, 0, 1.0)
    } else {
        // Peaks can be exactly redundant (the unheralded histogram ending
        // below the heralded one ties γ₀ to the others), so invert on the
        // numerical range only.
        let svd = cov.clone().svd(true, true);
        let cut = svd.singular_values.max() * 1e-10;
        let rank = svd.singular_values.iter().filter(|&&s| s > cut).count();
        let inv = svd.pseudo_inverse(cut).expect("both singular vector sets were computed");
        let ones = DVector::from_element(k, 1.0);
        let y = DVector::from_vec(values);
        let w = (ones.transpose() * &inv * &ones)[(0, 0)];
        let mean = (ones.transpose() * &inv * &y)[(0, 0)] / w;
        let r = &y - &ones * mean;
        let chi2 = (r.transpose() * &inv * &r)[(0, 0)];
        let dof = rank.max(1) - 1;
        let pv = if dof == 0 { 1.0 } else { ChiSquared::new(dof as f64).map(|c| c.sf(chi2)).unwrap_or(f64::NAN) };
        (Some(EstimateReport::new(EstimatorKind::Efficiency, mean, (1.0 / w).sqrt(), h.heralded_events as usize)), chi2, dof, pv)
    };
    Ok(PnrResult { peaks, combined, chi_square, dof, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Background {
    Poisson { mean: f64 },
    Thermal { mean: f64 },
}

impl Background {
    fn sample<R: Rng + ?Sized>(&self, thermal: &ThermalSampler, rng: &mut R) -> u64 {
        match self {
            Background::Poisson { mean } => sample_poisson(*mean, rng),
            Background::Thermal { .. } => thermal.sample(rng),
        }
    }

    fn mean(&self) -> f64 {
        match self {
            Background::Poisson { mean } | Background::Thermal { mean } => *mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnrSetup {
    /// Overall efficiency γ = τη.
    pub gamma: f64,
    pub xi: f64,
    pub background: Background,
    pub heralded_events: u64,
    pub unheralded_events: u64,
}

/// Forward model: both runs share the background distribution; a heralded
/// event adds one photon with probability ξγ.
pub fn simulate_pnr(setup: &PnrSetup, seed: u64) -> Result<PnrHistograms> {
    check_fraction("gamma", setup.gamma)?;
    if !(setup.xi > 0.0 && setup.xi <= 1.0) {
        return domain("herald probability must be in (0, 1]");
    }
    if !(setup.background.mean() >= 0.0) {
        return domain("background mean must be non-negative");
    }
    let thermal = ThermalSampler::new(setup.background.mean());
    let extra = setup.xi * setup.gamma;
    let streams = Streams::new(seed, stream_domain("pnr"));
    let run = |events: u64, heralded: bool, child: u64| -> Vec<u64> {
        let s = streams.child(child);
        let hists: Vec<Vec<u64>> = (0..events.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut rng = s.frame(c);
                let mut hist = Vec::new();
                for _ in c * CHUNK..((c + 1) * CHUNK).min(events) {
                    let mut n = setup.background.sample(&thermal, &mut rng) as usize;
                    if heralded && rng.random_bool(extra) {
                        n += 1;
                    }
                    if hist.len() <= n {
                        hist.resize(n + 1, 0);
                    }
                    hist[n] += 1;
                }
                hist
            })
            .collect();
        let mut total = Vec::new();
        for h in hists {
            if total.len() < h.len() {
                total.resize(h.len(), 0);
            }
            for (t, v) in total.iter_mut().zip(h) {
                *t += v;
            }
        }
        total
    };
    let h = run(setup.heralded_events, true, 0);
    let u = run(setup.unheralded_events, false, 1);
    PnrHistograms::from_counts(&h, &u, setup.xi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(p: Vec<f64>, q: Vec<f64>, xi: f64) -> PnrHistograms {
        PnrHistograms { heralded: p, unheralded: q, xi, heralded_events: 1000, unheralded_events: 1000 }
    }

    #[test]
    fn equal_histograms_give_zero() {
        let q = vec![0.5, 0.3, 0.2];
        let r = pnr_efficiencies(&hist(q.clone(), q, 0.9), None, 1.0).unwrap();
        assert!(r.usable().all(|e| e.value == 0.0));
    }

    #[test]
    fn empty_peak_example() {
        let r = pnr_efficiencies(&hist(vec![0.4, 0.6], vec![0.5, 0.5], 0.8), Some(0), 1.0).unwrap();
        assert!((r.peaks[0].estimate.unwrap().value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn degenerate_peak_is_reported() {
        let r = pnr_efficiencies(&hist(vec![0.4, 0.3, 0.3], vec![0.5, 0.25, 0.25], 0.8), None, 1.0).unwrap();
        assert!(r.peaks[2].estimate.is_none() && r.peaks[2].issue.is_some());
        assert!(r.peaks[1].estimate.is_some());
    }

    #[test]
    fn exact_forward_model_inverts() {
        let (gamma, xi) = (0.6, 0.85);
        let q: Vec<f64> = (0..8).map(|i| crate::photon::thermal_pmf(0.5, i).unwrap()).collect();
        let s: f64 = q.iter().sum();
        let q: Vec<f64> = q.iter().map(|v| v / s).collect();
        let mut p = vec![0.0; 8];
        for i in 0..8 {
            p[i] = (1.0 - xi * gamma) * q[i] + if i > 0 { xi * gamma * q[i - 1] } else { 0.0 };
        }
        let s: f64 = p.iter().sum();
        p[7] += 1.0 - s;
        let r = pnr_efficiencies(&hist(p, q, xi), Some(5), 1.0).unwrap();
        for e in r.usable() {
            assert!((e.value - gamma).abs() < 1e-9, "{}", e.value);
        }
    }
}
