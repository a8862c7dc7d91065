//! Calibration of analog, spatially resolving detectors from the modified
//! noise reduction factor σ_α ≃ (1 + α)/2 − η₁A.

use serde::Serialize;

use crate::error::{data, domain, Result};
use crate::estimators::{EstimateReport, EstimatorKind, PooledPairs};
use crate::frames::FrameSet;
use crate::geometry::{collection_efficiency, ModeLayout};
use crate::moments::{PairMoments, PairSums};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalogCalibration {
    pub eta: EstimateReport,
    pub sigma_alpha: f64,
    pub alpha: f64,
    pub collection_efficiency: f64,
}

pub fn invert_nrf_alpha(sigma_alpha: f64, alpha: f64, a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return domain(format!("collection efficiency must be positive, got {a}"));
    }
    Ok(((1.0 + alpha) / 2.0 - sigma_alpha) / a)
}

/// Pooled σ_α over regions, after removing a signal-independent additive
/// contribution (`dark`) from every region's moments. Returns (σ_α, α).
pub fn corrected_nrf_alpha(regions: &[PairSums], dark: Option<&PairMoments>) -> (f64, f64) {
    let zero = PairMoments { mean1: 0.0, mean2: 0.0, var1: 0.0, var2: 0.0, cov: 0.0 };
    let d = dark.unwrap_or(&zero);
    let moments: Vec<PairMoments> = regions.iter().map(|p| p.moments()).collect();
    let m1: f64 = moments.iter().map(|m| m.mean1 - d.mean1).sum();
    let m2: f64 = moments.iter().map(|m| m.mean2 - d.mean2).sum();
    let alpha = m1 / m2;
    let (mut num, mut den) = (0.0, 0.0);
    for m in &moments {
        num += (m.var1 - d.var1) + alpha * alpha * (m.var2 - d.var2) - 2.0 * alpha * (m.cov - d.cov);
        den += (m.mean1 - d.mean1) + alpha * (m.mean2 - d.mean2);
    }
    (num / den, alpha)
}

/// η₁ with a block-jackknife error from pooled region statistics. `dark`
/// holds signal-free pair counts pooled into a single series; they are
/// subtracted, and their own block-jackknife variance is added to the error.
pub fn efficiency_from_pairs(pairs: &PooledPairs, dark: Option<&PooledPairs>, a: f64) -> Result<AnalogCalibration> {
    if !(a > 0.0) {
        return domain(format!("collection efficiency must be positive, got {a}"));
    }
    let totals = pairs.totals();
    if totals.iter().all(|p| p.s2 == 0.0) {
        return data("reference arm recorded no signal");
    }
    let dark_moments = dark.map(|d| d.totals()[0].moments());
    let eta_of = |t: &[PairSums], d: Option<&PairMoments>| {
        let (s, al) = corrected_nrf_alpha(t, d);
        ((1.0 + al) / 2.0 - s) / a
    };
    let (sigma_alpha, alpha) = corrected_nrf_alpha(&totals, dark_moments.as_ref());
    let (eta, se_signal) = pairs.estimate(|t| eta_of(t, dark_moments.as_ref()));
    let se_dark = dark.map_or(0.0, |d| d.estimate(|t| eta_of(&totals, Some(&t[0].moments()))).1);
    Ok(AnalogCalibration {
        eta: EstimateReport::new(EstimatorKind::Efficiency, eta, se_signal.hypot(se_dark), pairs.frames()),
        sigma_alpha,
        alpha,
        collection_efficiency: a,
    })
}

/// Pools every pixel of a two-channel frame set, each pixel being one pair
/// of correlated detection regions.
pub fn pooled_pairs(frames: &FrameSet, blocks: usize) -> Result<PooledPairs> {
    if frames.channels() != 2 || frames.frames() < 2 * blocks.max(2) {
        return data("need two channels and at least two frames per block");
    }
    let k = frames.frames();
    let mut pairs = PooledPairs::new(frames.pixels(), blocks);
    for f in 0..k {
        let b = pairs.block_of(f, k);
        pairs.push_frame(b, &frames.values(f, 0), &frames.values(f, 1));
    }
    Ok(pairs)
}

/// η₁ from frames with A supplied directly.
pub fn analog_calibration_with_efficiency(frames: &FrameSet, a: f64, blocks: usize) -> Result<AnalogCalibration> {
    efficiency_from_pairs(&pooled_pairs(frames, blocks)?, None, a)
}

/// η₁ from frames with A computed from the detection geometry.
pub fn analog_calibration(frames: &FrameSet, layout: &ModeLayout, mu: f64, blocks: usize) -> Result<AnalogCalibration> {
    let a = collection_efficiency(layout, mu)?;
    if a.raw <= 0.0 {
        return domain(format!("collection efficiency {} is not positive", a.raw));
    }
    analog_calibration_with_efficiency(frames, a.value, blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inversion_examples() {
        assert!((invert_nrf_alpha(0.3, 1.0, 1.0).unwrap() - 0.7).abs() < 1e-12);
        assert!(invert_nrf_alpha(0.3, 1.0, 0.0).is_err());
    }

    #[test]
    fn dark_correction_removes_additive_noise() {
        let clean = PairSums::from_pairs(&[2.0, 4.0, 3.0, 7.0], &[3.0, 4.0, 2.0, 8.0]);
        let m = clean.moments();
        let dark = PairMoments { mean1: 0.5, mean2: 0.25, var1: 0.3, var2: 0.2, cov: 0.0 };
        let (s0, a0) = corrected_nrf_alpha(&[clean], None);
        let shifted = PairSums::from_pairs(&[2.5, 4.5, 3.5, 7.5], &[3.25, 4.25, 2.25, 8.25]);
        let dark_shift = PairMoments { var1: 0.0, var2: 0.0, ..dark };
        let (s1, a1) = corrected_nrf_alpha(&[shifted], Some(&dark_shift));
        assert!((s0 - s1).abs() < 1e-12 && (a0 - a1).abs() < 1e-12);
        assert!(m.mean2 > 0.0);
    }
}
