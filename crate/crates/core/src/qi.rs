//! Intensity-correlation quantum illumination: a reference beam is detected
//! directly while the probe, if reflected by the target, reaches a second
//! detector together with a strong multithermal background. Presence is
//! decided from the reference/probe covariance.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_fraction, domain, Result};
use crate::estimators::{EstimateReport, EstimatorKind};
use crate::frames::FrameSet;
use crate::moments::ProductSums;
use crate::photon::{sample_poisson, thin, PixelSampler, SourceKind, SourceSpec};
use crate::rng::{domain as stream_domain, Streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QiScenario {
    pub source: SourceKind,
    /// Mean photons per shot in each of probe and reference, n = Mμ.
    pub n: f64,
    pub modes: u32,
    pub n_b: f64,
    pub m_b: f64,
    pub eta_p: f64,
    pub eta_r: f64,
    pub target_present: bool,
    #[serde(default = "one")]
    pub k_pixels: usize,
}

fn one() -> usize {
    1
}

impl QiScenario {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.source, SourceKind::TwinBeam | SourceKind::SplitThermal) {
            return domain("quantum illumination uses twin-beam or split-thermal light");
        }
        if !(self.n >= 0.0 && self.n_b >= 0.0) {
            return domain("photon numbers must be non-negative");
        }
        if self.modes == 0 || !(self.m_b > 0.0) {
            return domain("mode counts must be positive");
        }
        if self.k_pixels == 0 {
            return domain("need at least one pixel pair per shot");
        }
        check_fraction("eta_p", self.eta_p)?;
        check_fraction("eta_r", self.eta_r)
    }

    pub fn mu(&self) -> f64 {
        self.n / self.modes as f64
    }

    pub fn with_source(mut self, source: SourceKind) -> Self {
        self.source = source;
        self
    }

    pub fn with_target(mut self, present: bool) -> Self {
        self.target_present = present;
        self
    }

    pub fn with_background(mut self, n_b: f64) -> Self {
        self.n_b = n_b;
        self
    }

    /// Pixel-pair source with the same local statistics for both kinds.
    pub fn source_spec(&self) -> Result<SourceSpec> {
        match self.source {
            SourceKind::TwinBeam => SourceSpec::twin_beam(self.mu(), self.modes),
            _ => SourceSpec::split_thermal_matched(self.mu(), self.modes),
        }
    }

    pub fn background_variance(&self) -> f64 {
        self.n_b * (1.0 + self.n_b / self.m_b)
    }

    /// ⟨δn₁δn₂⟩ under H₁.
    pub fn predicted_covariance(&self) -> f64 {
        let base = self.eta_p * self.eta_r * self.n;
        match self.source {
            SourceKind::TwinBeam => base * (1.0 + self.mu()),
            _ => base * self.mu(),
        }
    }

    /// Predicted Cauchy-Schwarz ratio of the detected pair.
    pub fn predicted_epsilon(&self) -> f64 {
        let cov = if self.target_present { self.predicted_covariance() } else { 0.0 };
        let m = self.modes as f64;
        let v1 = (self.eta_r * self.n).powi(2) / m;
        let probe = if self.target_present { (self.eta_p * self.n).powi(2) / m } else { 0.0 };
        let v2 = probe + self.n_b * self.n_b / self.m_b;
        cov / (v1 * v2).sqrt()
    }
}

/// Multithermal background: `m_b` thermal modes sharing `n_b` photons.
#[derive(Debug, Clone, Copy)]
pub struct BackgroundSampler {
    gamma: Option<Gamma<f64>>,
}

impl BackgroundSampler {
    pub fn new(n_b: f64, m_b: f64) -> Self {
        let gamma = (n_b > 0.0).then(|| Gamma::new(m_b, n_b / m_b).expect("valid gamma"));
        Self { gamma }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.gamma {
            Some(g) => sample_poisson(g.sample(rng), rng),
            None => 0,
        }
    }
}

/// One reference/probe pixel pair.
#[derive(Debug, Clone, Copy)]
pub struct QiSampler {
    pixel: PixelSampler,
    background: BackgroundSampler,
    eta_p: f64,
    eta_r: f64,
    present: bool,
}

impl QiSampler {
    pub fn new(s: &QiScenario) -> Result<Self> {
        s.validate()?;
        if s.n_b < 10.0 * s.eta_p * s.n {
            log::warn!("background n_B = {} is not dominant over eta_P n = {}", s.n_b, s.eta_p * s.n);
        }
        Ok(Self {
            pixel: PixelSampler::new(&s.source_spec()?),
            background: BackgroundSampler::new(s.n_b, s.m_b),
            eta_p: s.eta_p,
            eta_r: s.eta_r,
            present: s.target_present,
        })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (u64, u64) {
        let (reference, probe) = self.pixel.sample(rng);
        let n1 = thin(reference, self.eta_r, rng);
        let reflected = if self.present { thin(probe, self.eta_p, rng) } else { 0 };
        (n1, reflected + self.background.sample(rng))
    }
}

pub fn simulate_qi_shot<R: Rng + ?Sized>(s: &QiScenario, rng: &mut R) -> Result<(u64, u64)> {
    Ok(QiSampler::new(s)?.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QiPrediction {
    pub snr_spdc: f64,
    pub snr_th: f64,
    pub ratio: f64,
    pub background_dominated: bool,
}

/// SNRs after `shots` measurements, keeping the full first-line expressions.
pub fn predicted_qi_snr(s: &QiScenario, shots: f64) -> Result<QiPrediction> {
    s.validate()?;
    let m = s.modes as f64;
    let noise = 2.0 * s.n * s.eta_r * (1.0 + s.eta_r * s.n / m) * s.background_variance();
    if !(noise > 0.0) {
        return domain("zero noise in the QI SNR denominator");
    }
    let background_dominated = s.n_b >= 10.0 * s.eta_p * s.n;
    if !background_dominated {
        log::warn!("QI prediction outside the background-dominated regime");
    }
    let k = shots.sqrt();
    let snr_spdc = k * s.n * s.eta_p * s.eta_r * (1.0 + s.n / m) / noise.sqrt();
    let snr_th = k * s.eta_r * s.eta_p * s.n * s.n / m / noise.sqrt();
    Ok(QiPrediction { snr_spdc, snr_th, ratio: snr_spdc / snr_th, background_dominated })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonclassicalityBoundary {
    /// η_P √(M M_B), valid for μ ≪ 1.
    pub simplified: f64,
    /// Root of the full inequality, η_P √(M M_B (1 + 2μ)).
    pub exact: f64,
}

pub fn nonclassicality_boundary(s: &QiScenario) -> Result<NonclassicalityBoundary> {
    s.validate()?;
    let mm = s.modes as f64 * s.m_b;
    Ok(NonclassicalityBoundary {
        simplified: s.eta_p * mm.sqrt(),
        exact: s.eta_p * (mm * (1.0 + 2.0 * s.mu())).sqrt(),
    })
}

/// True when the twin-beam covariance still violates the classical bound.
pub fn violates_classical_bound(s: &QiScenario) -> bool {
    let m = s.modes as f64;
    let lhs = s.eta_p * s.eta_r * s.n * (1.0 + s.n / m);
    let rhs = (s.eta_r.powi(2) * s.n.powi(2) / m * (s.eta_p.powi(2) * s.n.powi(2) / m + s.n_b.powi(2) / s.m_b)).sqrt();
    lhs > rhs
}

/// Pixel-pair samples of both hypotheses, split into blocks for
/// jackknife errors. `blocks[b][h]` with h = 0 for H₀ and 1 for H₁.
#[derive(Debug, Clone)]
pub struct QiSamples {
    pub blocks: Vec<[ProductSums; 2]>,
}

pub fn sample_qi(s: &QiScenario, samples: usize, blocks: usize, seed: u64) -> Result<QiSamples> {
    let blocks = blocks.clamp(2, samples.max(2));
    let samplers = [QiSampler::new(&s.with_target(false))?, QiSampler::new(&s.with_target(true))?];
    let streams = Streams::new(seed, stream_domain("qi-samples"));
    let out = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let count = samples * (b + 1) / blocks - samples * b / blocks;
            let mut sums = [ProductSums::default(); 2];
            for (h, sampler) in samplers.iter().enumerate() {
                let mut rng = streams.child(h as u64).frame(b as u64);
                for _ in 0..count {
                    let (x, y) = sampler.sample(&mut rng);
                    sums[h].push(x, y);
                }
            }
            sums
        })
        .collect();
    Ok(QiSamples { blocks: out })
}

/// Shots of the configured hypothesis as two-channel frames of
/// `k_pixels`×1 pixels: channel 0 is the reference arm, channel 1 the
/// returned probe plus background.
pub fn simulate_qi_frames(s: &QiScenario, frames: usize, seed: u64) -> Result<FrameSet> {
    let sampler = QiSampler::new(s)?;
    let k = s.k_pixels;
    let streams = Streams::new(seed, stream_domain("qi-frames"));
    let per_frame: Vec<Vec<u64>> = (0..frames)
        .into_par_iter()
        .map(|f| {
            let mut rng = streams.frame(f as u64);
            let mut out = vec![0u64; 2 * k];
            for p in 0..k {
                let (r, q) = sampler.sample(&mut rng);
                out[p] = r;
                out[k + p] = q;
            }
            out
        })
        .collect();
    FrameSet::from_counts(k as u32, 1, 2, seed, per_frame.concat())
}

impl QiSamples {
    fn totals(&self) -> [ProductSums; 2] {
        let mut t = [ProductSums::default(); 2];
        for b in &self.blocks {
            t[0].merge(&b[0]);
            t[1].merge(&b[1]);
        }
        t
    }

    fn jackknife<F: Fn(&[ProductSums; 2]) -> f64>(&self, stat: F) -> (f64, f64) {
        let t = self.totals();
        let value = stat(&t);
        let reps: Vec<f64> = self.blocks.iter().map(|b| stat(&[t[0].minus(&b[0]), t[1].minus(&b[1])])).collect();
        let k = reps.len() as f64;
        let mean = reps.iter().sum::<f64>() / k;
        let se = ((k - 1.0) / k * reps.iter().map(|r| (r - mean).powi(2)).sum::<f64>()).sqrt();
        (value, se)
    }

    pub fn samples_per_hypothesis(&self) -> usize {
        self.totals()[1].n as usize
    }

    /// Single-measurement SNR (c₁ − c₀)/√(v₁ + v₀); multiply by √𝒦 for 𝒦
    /// measurements.
    pub fn snr_per_sample(&self) -> EstimateReport {
        let (v, se) = self.jackknife(|t| {
            let (c0, v0) = t[0].product_stats();
            let (c1, v1) = t[1].product_stats();
            (c1 - c0) / (v1 + v0).sqrt()
        });
        EstimateReport::new(EstimatorKind::Snr, v, se, self.samples_per_hypothesis())
    }

    pub fn covariance(&self, hypothesis: usize) -> EstimateReport {
        let (v, se) = self.jackknife(|t| t[hypothesis].product_stats().0);
        EstimateReport::new(EstimatorKind::Covariance, v, se, self.samples_per_hypothesis())
    }

    /// Variance of single products under a hypothesis.
    pub fn product_variance(&self, hypothesis: usize) -> f64 {
        self.totals()[hypothesis].product_stats().1
    }

    pub fn cauchy_schwarz(&self, hypothesis: usize) -> EstimateReport {
        let (v, se) = self.jackknife(|t| {
            let m = t[hypothesis].pair_moments();
            m.cov / (m.normally_ordered_var(0) * m.normally_ordered_var(1)).abs().sqrt()
        });
        EstimateReport::new(EstimatorKind::CauchySchwarz, v, se, self.samples_per_hypothesis())
    }
}

/// Ratio of two independent estimates with first-order error propagation.
pub fn ratio_report(num: &EstimateReport, den: &EstimateReport) -> EstimateReport {
    let r = num.value / den.value;
    let rel = ((num.standard_error / num.value).powi(2) + (den.standard_error / den.value).powi(2)).sqrt();
    EstimateReport::new(EstimatorKind::SnrRatio, r, r.abs() * rel, num.sample_size.min(den.sample_size))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdPolicy {
    /// Midway between the predicted H₀ and H₁ statistic means.
    Midpoint,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    H0,
    H1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QiDecision {
    pub statistic: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    pub shots: usize,
}

impl QiDecision {
    pub fn decide(statistic: f64, threshold: f64, shots: usize) -> Self {
        let verdict = if statistic > threshold { Verdict::H1 } else { Verdict::H0 };
        Self { statistic, threshold, verdict, shots }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discrimination {
    pub threshold: f64,
    pub type_i: f64,
    pub type_ii: f64,
    /// |mean₁ − mean₀|/√(var₁ + var₀) of the trial statistic.
    pub snr: f64,
    pub trials: usize,
    pub shots: usize,
    pub statistics_h0: Vec<f64>,
    pub statistics_h1: Vec<f64>,
}

impl Discrimination {
    /// (threshold, false-alarm rate, detection rate) for each threshold.
    pub fn roc(&self, thresholds: &[f64]) -> Vec<(f64, f64, f64)> {
        let rate = |v: &[f64], t: f64| v.iter().filter(|&&s| s > t).count() as f64 / v.len() as f64;
        thresholds.iter().map(|&t| (t, rate(&self.statistics_h0, t), rate(&self.statistics_h1, t))).collect()
    }
}

/// Statistic of one trial: the mean over `shots` of the per-shot covariance.
/// With several pixel pairs per shot the covariance is spatial (over the
/// pairs of that shot); with one pair it is taken over the shots.
fn trial_statistic<R: Rng + ?Sized>(sampler: &QiSampler, shots: usize, k_pixels: usize, rng: &mut R) -> f64 {
    if k_pixels >= 2 {
        let mut acc = 0.0;
        for _ in 0..shots {
            let mut sums = crate::moments::PairSums::default();
            for _ in 0..k_pixels {
                let (x, y) = sampler.sample(rng);
                sums.push(x as f64, y as f64);
            }
            acc += sums.moments().cov;
        }
        acc / shots as f64
    } else {
        let mut sums = crate::moments::PairSums::default();
        for _ in 0..shots {
            let (x, y) = sampler.sample(rng);
            sums.push(x as f64, y as f64);
        }
        sums.moments().cov
    }
}

pub fn run_discrimination(
    s: &QiScenario,
    shots: usize,
    trials: usize,
    policy: ThresholdPolicy,
    seed: u64,
) -> Result<Discrimination> {
    if shots < 2 && s.k_pixels < 2 {
        return domain("need at least two samples per trial");
    }
    let threshold = match policy {
        ThresholdPolicy::Midpoint => 0.5 * s.with_target(true).predicted_covariance(),
        ThresholdPolicy::Fixed(t) => t,
    };
    let streams = Streams::new(seed, stream_domain("qi-trials"));
    let mut stats = [Vec::new(), Vec::new()];
    for (h, out) in stats.iter_mut().enumerate() {
        let sampler = QiSampler::new(&s.with_target(h == 1))?;
        let child = streams.child(h as u64);
        *out = (0..trials)
            .into_par_iter()
            .map(|t| trial_statistic(&sampler, shots, s.k_pixels, &mut child.frame(t as u64)))
            .collect();
    }
    let moments = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0).max(1.0))
    };
    let (m0, v0) = moments(&stats[0]);
    let (m1, v1) = moments(&stats[1]);
    let verdicts = |v: &[f64], h: Verdict| {
        v.iter().filter(|&&x| QiDecision::decide(x, threshold, shots).verdict == h).count() as f64 / v.len() as f64
    };
    let [statistics_h0, statistics_h1] = stats;
    Ok(Discrimination {
        threshold,
        type_i: verdicts(&statistics_h0, Verdict::H1),
        type_ii: verdicts(&statistics_h1, Verdict::H0),
        snr: (m1 - m0).abs() / (v1 + v0).sqrt(),
        trials,
        shots,
        statistics_h0,
        statistics_h1,
    })
}
