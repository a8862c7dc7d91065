//! Per-mode photon statistics, correlated samplers, the binomial loss channel
//! and the closed-form moment algebra of detected light.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{check_fraction, domain, Result};
use crate::moments::PairMoments;

/// Mean photon number per mode, μ.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ModeOccupation(f64);

impl ModeOccupation {
    pub fn new(mu: f64) -> Result<Self> {
        if !mu.is_finite() || mu < 0.0 {
            return domain(format!("mode occupation must be finite and non-negative, got {mu}"));
        }
        Ok(Self(mu))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ModeOccupation {
    type Error = crate::error::Error;
    fn try_from(mu: f64) -> Result<Self> {
        Self::new(mu)
    }
}

impl From<ModeOccupation> for f64 {
    fn from(mu: ModeOccupation) -> f64 {
        mu.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    TwinBeam,
    SplitThermal,
    Coherent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub kind: SourceKind,
    /// Per-mode occupation. For split thermal light this is the parent beam.
    pub mu: ModeOccupation,
    pub modes_per_pixel: u32,
    #[serde(default = "half")]
    pub splitter_tau: f64,
}

fn half() -> f64 {
    0.5
}

impl SourceSpec {
    pub fn new(kind: SourceKind, mu: f64, modes_per_pixel: u32, splitter_tau: f64) -> Result<Self> {
        let spec = Self { kind, mu: ModeOccupation::new(mu)?, modes_per_pixel, splitter_tau };
        spec.validate()?;
        Ok(spec)
    }

    pub fn twin_beam(mu: f64, modes: u32) -> Result<Self> {
        Self::new(SourceKind::TwinBeam, mu, modes, 0.5)
    }

    pub fn split_thermal(parent_mu: f64, modes: u32, tau: f64) -> Result<Self> {
        Self::new(SourceKind::SplitThermal, parent_mu, modes, tau)
    }

    /// Balanced split thermal light whose arms carry `arm_mu` photons per mode,
    /// i.e. the same local statistics as a twin beam of occupation `arm_mu`.
    pub fn split_thermal_matched(arm_mu: f64, modes: u32) -> Result<Self> {
        Self::new(SourceKind::SplitThermal, 2.0 * arm_mu, modes, 0.5)
    }

    pub fn coherent(mu: f64, modes: u32) -> Result<Self> {
        Self::new(SourceKind::Coherent, mu, modes, 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        ModeOccupation::new(self.mu.0)?;
        if self.modes_per_pixel == 0 {
            return domain("modes_per_pixel must be at least 1");
        }
        check_fraction("splitter_tau", self.splitter_tau)
    }

    /// Pre-detection mean photons per mode in each arm.
    pub fn arm_mu(&self) -> (f64, f64) {
        let mu = self.mu.0;
        match self.kind {
            SourceKind::TwinBeam | SourceKind::Coherent => (mu, mu),
            SourceKind::SplitThermal => (self.splitter_tau * mu, (1.0 - self.splitter_tau) * mu),
        }
    }

    /// Closed-form detected moments of one pixel pair.
    pub fn detected_moments(&self, eta1: f64, eta2: f64) -> PairMoments {
        let m = self.modes_per_pixel as f64;
        let mu = self.mu.0;
        match self.kind {
            SourceKind::TwinBeam => twb_detected_moments(mu, m, eta1, eta2),
            SourceKind::SplitThermal => {
                split_thermal_detected_moments(mu, self.splitter_tau, m, eta1, eta2)
            }
            SourceKind::Coherent => coherent_detected_moments(mu, m, eta1, eta2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LossChannel {
    eta: f64,
}

impl LossChannel {
    pub fn new(eta: f64) -> Result<Self> {
        check_fraction("efficiency", eta)?;
        Ok(Self { eta })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Two channels in series.
    pub fn then(&self, other: LossChannel) -> LossChannel {
        LossChannel { eta: self.eta * other.eta }
    }
}

impl TryFrom<f64> for LossChannel {
    type Error = crate::error::Error;
    fn try_from(eta: f64) -> Result<Self> {
        Self::new(eta)
    }
}

impl From<LossChannel> for f64 {
    fn from(c: LossChannel) -> f64 {
        c.eta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentRole {
    PreDetection,
    PostDetection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPair {
    pub mean: f64,
    pub variance: f64,
    pub role: MomentRole,
}

impl MomentPair {
    pub fn new(mean: f64, variance: f64, role: MomentRole) -> Result<Self> {
        if !(mean >= 0.0 && variance >= 0.0) {
            return domain(format!("invalid moments: mean {mean}, variance {variance}"));
        }
        Ok(Self { mean, variance, role })
    }

    pub fn fano(&self) -> f64 {
        self.variance / self.mean
    }
}

/// Single-mode thermal pmf p(n) = μⁿ/(1+μ)ⁿ⁺¹.
pub fn thermal_pmf(mu: f64, n: u64) -> Result<f64> {
    let mu = ModeOccupation::new(mu)?.value();
    if mu == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    let ln = n as f64 * (mu / (1.0 + mu)).ln() - (1.0 + mu).ln();
    Ok(ln.exp())
}

/// Smallest n_max whose thermal tail mass P(n > n_max) is below `tail`.
pub fn thermal_cutoff(mu: f64, tail: f64) -> u64 {
    if mu <= 0.0 {
        return 0;
    }
    let q = mu / (1.0 + mu);
    // P(n > k) = q^(k+1)
    let k = (tail.ln() / q.ln()).ceil() - 1.0;
    k.max(0.0) as u64
}

/// Inverse-CDF sampler for the geometric (single-mode thermal) law.
#[derive(Debug, Clone, Copy)]
pub struct ThermalSampler {
    q: f64,
    inv_ln_q: f64,
}

impl ThermalSampler {
    pub fn new(mu: f64) -> Self {
        let q = if mu > 0.0 { mu / (1.0 + mu) } else { 0.0 };
        let inv_ln_q = if q > 0.0 { 1.0 / q.ln() } else { 0.0 };
        Self { q, inv_ln_q }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        // u in (0, 1]; n = floor(ln u / ln q), and n = 0 exactly when u > q.
        let u = 1.0 - rng.random::<f64>();
        if u > self.q {
            return 0;
        }
        (u.ln() * self.inv_ln_q) as u64
    }

    /// Sum of `modes` independent draws.
    #[inline]
    pub fn sample_modes<R: Rng + ?Sized>(&self, modes: u64, rng: &mut R) -> u64 {
        if self.q == 0.0 {
            return 0;
        }
        (0..modes).map(|_| self.sample(rng)).sum()
    }
}

pub fn sample_thermal<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> u64 {
    ThermalSampler::new(mu).sample(rng)
}

pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Binomial thinning: each of `n` photons survives with probability `p`.
#[inline]
pub fn thin<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if n == 1 {
        return (rng.random::<f64>() < p) as u64;
    }
    Binomial::new(n, p).map(|b| b.sample(rng)).unwrap_or(0)
}

pub fn apply_loss<R: Rng + ?Sized>(n: u64, channel: LossChannel, rng: &mut R) -> u64 {
    thin(n, channel.eta, rng)
}

/// One mode pair.
pub fn sample_pair<R: Rng + ?Sized>(source: &SourceSpec, rng: &mut R) -> (u64, u64) {
    let mu = source.mu.value();
    match source.kind {
        SourceKind::TwinBeam => {
            let n = sample_thermal(mu, rng);
            (n, n)
        }
        SourceKind::SplitThermal => {
            let n = sample_thermal(mu, rng);
            let n1 = thin(n, source.splitter_tau, rng);
            (n1, n - n1)
        }
        SourceKind::Coherent => (sample_poisson(mu, rng), sample_poisson(mu, rng)),
    }
}

/// Pre-detection counts of one pixel pair: the sum over `modes_per_pixel`
/// independent mode pairs.
#[derive(Debug, Clone, Copy)]
pub struct PixelSampler {
    kind: SourceKind,
    thermal: ThermalSampler,
    modes: u64,
    tau: f64,
    coherent_mean: f64,
}

impl PixelSampler {
    pub fn new(source: &SourceSpec) -> Self {
        let mu = source.mu.value();
        Self {
            kind: source.kind,
            thermal: ThermalSampler::new(mu),
            modes: source.modes_per_pixel as u64,
            tau: source.splitter_tau,
            coherent_mean: mu * source.modes_per_pixel as f64,
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (u64, u64) {
        match self.kind {
            SourceKind::TwinBeam => {
                let n = self.thermal.sample_modes(self.modes, rng);
                (n, n)
            }
            SourceKind::SplitThermal => {
                let n = self.thermal.sample_modes(self.modes, rng);
                let n1 = thin(n, self.tau, rng);
                (n1, n - n1)
            }
            SourceKind::Coherent => (
                sample_poisson(self.coherent_mean, rng),
                sample_poisson(self.coherent_mean, rng),
            ),
        }
    }
}

pub fn sample_pixel_pair<R: Rng + ?Sized>(source: &SourceSpec, rng: &mut R) -> (u64, u64) {
    PixelSampler::new(source).sample(rng)
}

/// Moments after a loss channel: mean → ηm, variance → η²v + η(1−η)m.
pub fn loss_moments(m: MomentPair, channel: LossChannel) -> MomentPair {
    let eta = channel.eta;
    MomentPair {
        mean: eta * m.mean,
        variance: eta * eta * m.variance + eta * (1.0 - eta) * m.mean,
        role: MomentRole::PostDetection,
    }
}

/// NRF of a beam with Fano factor F split with transmission τ.
pub fn split_beam_nrf(fano: f64, tau: f64) -> Result<f64> {
    check_fraction("tau", tau)?;
    if !(fano >= 0.0) {
        return domain(format!("Fano factor must be non-negative, got {fano}"));
    }
    Ok((fano - 1.0) * (2.0 * tau - 1.0).powi(2) + 1.0)
}

pub fn twb_detected_moments(mu: f64, modes: f64, eta1: f64, eta2: f64) -> PairMoments {
    PairMoments {
        mean1: eta1 * modes * mu,
        mean2: eta2 * modes * mu,
        var1: modes * (eta1 * eta1 * mu * mu + eta1 * mu),
        var2: modes * (eta2 * eta2 * mu * mu + eta2 * mu),
        cov: eta1 * eta2 * modes * mu * (1.0 + mu),
    }
}

/// Detected NRF of twin beams with unequal arm efficiencies.
pub fn twb_nrf(mu: f64, eta1: f64, eta2: f64) -> f64 {
    let eta = 0.5 * (eta1 + eta2);
    1.0 - eta + (eta1 - eta2).powi(2) * (mu + 0.5) / (2.0 * eta)
}

pub fn split_thermal_detected_moments(
    parent_mu: f64,
    tau: f64,
    modes: f64,
    eta1: f64,
    eta2: f64,
) -> PairMoments {
    let t1 = eta1 * tau;
    let t2 = eta2 * (1.0 - tau);
    PairMoments {
        mean1: modes * t1 * parent_mu,
        mean2: modes * t2 * parent_mu,
        var1: modes * (t1 * t1 * parent_mu * parent_mu + t1 * parent_mu),
        var2: modes * (t2 * t2 * parent_mu * parent_mu + t2 * parent_mu),
        cov: modes * t1 * t2 * parent_mu * parent_mu,
    }
}

pub fn coherent_detected_moments(mu: f64, modes: f64, eta1: f64, eta2: f64) -> PairMoments {
    PairMoments {
        mean1: eta1 * modes * mu,
        mean2: eta2 * modes * mu,
        var1: eta1 * modes * mu,
        var2: eta2 * modes * mu,
        cov: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain as dom, Streams};

    #[test]
    fn pmf_examples() {
        assert_eq!(thermal_pmf(0.0, 0).unwrap(), 1.0);
        for k in 0..10 {
            let expect = 0.5f64.powi(k as i32 + 1);
            assert!((thermal_pmf(1.0, k).unwrap() - expect).abs() < 1e-15);
        }
        let total: f64 = (0..=60).map(|n| thermal_pmf(0.5, n).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(thermal_pmf(-0.1, 0).is_err());
    }

    #[test]
    fn cutoff_bounds_tail() {
        for mu in [0.05, 0.5, 1.0, 5.0] {
            let k = thermal_cutoff(mu, 1e-12);
            let q: f64 = mu / (1.0 + mu);
            assert!(q.powi(k as i32 + 1) < 1e-12);
            assert!(q.powi(k as i32) >= 1e-12);
        }
    }

    #[test]
    fn loss_moment_examples() {
        let m = MomentPair::new(10.0, 10.0, MomentRole::PreDetection).unwrap();
        let out = loss_moments(m, LossChannel::new(0.5).unwrap());
        assert_eq!((out.mean, out.variance), (5.0, 5.0));
        let fock = MomentPair::new(20.0, 0.0, MomentRole::PreDetection).unwrap();
        let out = loss_moments(fock, LossChannel::new(0.7).unwrap());
        assert!((out.mean - 14.0).abs() < 1e-12 && (out.variance - 4.2).abs() < 1e-12);
        let mu = 1.7;
        let eta = 0.35;
        let thermal = MomentPair::new(mu, mu * (1.0 + mu), MomentRole::PreDetection).unwrap();
        let out = loss_moments(thermal, LossChannel::new(eta).unwrap());
        assert!((out.variance - eta * mu * (1.0 + eta * mu)).abs() < 1e-12);
    }

    #[test]
    fn split_beam_examples() {
        assert_eq!(split_beam_nrf(7.3, 0.5).unwrap(), 1.0);
        assert_eq!(split_beam_nrf(1.0, 0.2).unwrap(), 1.0);
        assert_eq!(split_beam_nrf(0.0, 1.0).unwrap(), 0.0);
        assert!(split_beam_nrf(1.0, 1.2).is_err());
    }

    #[test]
    fn twb_moment_examples() {
        assert!(twb_detected_moments(0.3, 7.0, 1.0, 1.0).nrf().abs() < 1e-12);
        let m = twb_detected_moments(0.3, 7.0, 0.6, 0.6);
        assert!((m.nrf() - 0.4).abs() < 1e-12);
        let m = twb_detected_moments(0.5, 10.0, 0.8, 0.4);
        assert!((m.nrf() - 0.533_333_333_333).abs() < 1e-9);
        assert!((twb_nrf(0.5, 0.8, 0.4) - m.nrf()).abs() < 1e-12);
    }

    #[test]
    fn twin_beam_pairs_are_identical_and_tau_one_empties_arm_two() {
        let s = Streams::new(1, dom("photon-test"));
        let mut rng = s.frame(0);
        let twb = SourceSpec::twin_beam(0.8, 1).unwrap();
        let st = SourceSpec::split_thermal(0.8, 1, 1.0).unwrap();
        for _ in 0..10_000 {
            let (a, b) = sample_pair(&twb, &mut rng);
            assert_eq!(a, b);
            assert_eq!(sample_pair(&st, &mut rng).1, 0);
        }
    }

    #[test]
    fn loss_edges() {
        let mut rng = Streams::new(1, dom("photon-test")).frame(1);
        assert_eq!(apply_loss(17, LossChannel::new(1.0).unwrap(), &mut rng), 17);
        assert_eq!(apply_loss(17, LossChannel::new(0.0).unwrap(), &mut rng), 0);
        assert!(LossChannel::new(1.5).is_err());
    }

    #[test]
    fn zero_occupation_gives_empty_pixels() {
        let mut rng = Streams::new(3, dom("photon-test")).frame(0);
        for kind in [SourceKind::TwinBeam, SourceKind::SplitThermal, SourceKind::Coherent] {
            let s = SourceSpec::new(kind, 0.0, 5, 0.5).unwrap();
            for _ in 0..100 {
                assert_eq!(sample_pixel_pair(&s, &mut rng), (0, 0));
            }
        }
    }
}
