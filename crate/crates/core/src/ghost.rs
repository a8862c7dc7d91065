//! Covariance ghost imaging. Beam 1 reaches a resolving detector, beam 2
//! crosses the object and is collected by a bucket detector; the image is
//! the per-pixel covariance between N₁(x) and the bucket total.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_fraction, data, domain, Result};
use crate::estimators::{EstimateReport, EstimatorKind};
use crate::frames::FrameSet;
use crate::moments::ProductSums;
use crate::photon::{thin, PixelSampler, SourceKind, SourceSpec};
use crate::rng::{domain as stream_domain, Streams};

/// Frames simulated per parallel work unit.
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GiObject {
    pub width: usize,
    pub height: usize,
    pub transmission: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoLevel {
    pub t_plus: f64,
    pub t_minus: f64,
    pub r_plus: usize,
    pub r_minus: usize,
}

impl GiObject {
    pub fn new(width: usize, height: usize, transmission: Vec<f64>) -> Result<Self> {
        if width * height == 0 || transmission.len() != width * height {
            return domain("transmission map does not match the grid");
        }
        for &t in &transmission {
            check_fraction("transmission", t)?;
        }
        Ok(Self { width, height, transmission })
    }

    pub fn uniform(width: usize, height: usize, t: f64) -> Result<Self> {
        Self::new(width, height, vec![t; width * height])
    }

    /// `t_plus` where the mask is set, `t_minus` elsewhere.
    pub fn two_level(width: usize, height: usize, mask: &[bool], t_plus: f64, t_minus: f64) -> Result<Self> {
        if t_plus <= t_minus {
            return domain("the high level must exceed the low level");
        }
        Self::new(width, height, mask.iter().map(|&m| if m { t_plus } else { t_minus }).collect())
    }

    /// Centered rectangle holding `fraction` of the pixels, rounded to whole
    /// rows.
    pub fn bar(width: usize, height: usize, fraction: f64, t_plus: f64, t_minus: f64) -> Result<Self> {
        let rows = ((height as f64 * fraction).round() as usize).clamp(1, height);
        let top = (height - rows) / 2;
        let mask: Vec<bool> = (0..width * height).map(|p| (top..top + rows).contains(&(p / width))).collect();
        Self::two_level(width, height, &mask, t_plus, t_minus)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Two-level descriptor, if the object has exactly two transmission
    /// values.
    pub fn levels(&self) -> Option<TwoLevel> {
        let hi = self.transmission.iter().cloned().fold(f64::MIN, f64::max);
        let lo = self.transmission.iter().cloned().fold(f64::MAX, f64::min);
        if hi == lo || self.transmission.iter().any(|&t| t != hi && t != lo) {
            return None;
        }
        let r_plus = self.transmission.iter().filter(|&&t| t == hi).count();
        Some(TwoLevel { t_plus: hi, t_minus: lo, r_plus, r_minus: self.pixels() - r_plus })
    }
}

/// A materialized run: channel 0 holds N₁(x), channel 1 the unrecorded
/// object-plane counts N₂(x) whose per-frame sum is the bucket.
#[derive(Debug, Clone)]
pub struct GiRun {
    pub frames: FrameSet,
    pub bucket: Vec<u64>,
    pub source: SourceSpec,
    pub t1: f64,
}

fn gi_sampler(source: &SourceSpec, t1: f64) -> Result<PixelSampler> {
    source.validate()?;
    check_fraction("T1", t1)?;
    if source.kind == SourceKind::Coherent {
        return domain("ghost imaging needs correlated beams");
    }
    Ok(PixelSampler::new(source))
}

/// Samples one frame into `n1` and `n2`; returns the bucket total.
fn sample_frame<R: rand::Rng + ?Sized>(
    sampler: &PixelSampler,
    object: &GiObject,
    t1: f64,
    rng: &mut R,
    n1: &mut [u64],
    n2: &mut [u64],
) -> u64 {
    let mut bucket = 0;
    for p in 0..object.pixels() {
        let (a, b) = sampler.sample(rng);
        n1[p] = thin(a, t1, rng);
        n2[p] = thin(b, object.transmission[p], rng);
        bucket += n2[p];
    }
    bucket
}

pub fn simulate_gi(source: &SourceSpec, object: &GiObject, t1: f64, frames: usize, seed: u64) -> Result<GiRun> {
    let sampler = gi_sampler(source, t1)?;
    let p = object.pixels();
    let streams = Streams::new(seed, stream_domain("ghost"));
    let per_frame: Vec<(Vec<u64>, u64)> = (0..frames)
        .into_par_iter()
        .map(|f| {
            let mut rng = streams.frame(f as u64);
            let mut buf = vec![0u64; 2 * p];
            let (n1, n2) = buf.split_at_mut(p);
            let b = sample_frame(&sampler, object, t1, &mut rng, n1, n2);
            (buf, b)
        })
        .collect();
    let bucket = per_frame.iter().map(|(_, b)| *b).collect();
    let counts = per_frame.into_iter().flat_map(|(c, _)| c).collect();
    let frames = FrameSet::from_counts(object.width as u32, object.height as u32, 2, seed, counts)?;
    Ok(GiRun { frames, bucket, source: *source, t1 })
}

/// Streaming per-pixel sums of (bucket, N₁(x)).
#[derive(Debug, Clone, PartialEq)]
pub struct GiAccumulator {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<ProductSums>,
}

impl GiAccumulator {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![ProductSums::default(); width * height] }
    }

    pub fn push(&mut self, bucket: u64, n1: &[u64]) {
        for (s, &x) in self.pixels.iter_mut().zip(n1) {
            s.push(bucket, x);
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.pixels.iter_mut().zip(&other.pixels) {
            a.merge(b);
        }
    }

    pub fn frames(&self) -> usize {
        self.pixels.first().map_or(0, |s| s.n as usize)
    }

    /// Covariance map S(x) with per-pixel standard errors.
    pub fn reconstruct(&self) -> Result<CovarianceImage> {
        if self.frames() < 2 {
            return data("reconstruction needs at least two frames");
        }
        let k = self.frames() as f64;
        let (values, standard_error) = self
            .pixels
            .iter()
            .map(|s| {
                let (c, v) = s.product_stats();
                (c, (v / k).sqrt())
            })
            .unzip();
        Ok(CovarianceImage { width: self.width, height: self.height, values, standard_error, frames: self.frames() })
    }

    /// Mean of the resolving-detector counts, per pixel.
    pub fn mean_reference(&self) -> Vec<f64> {
        self.pixels.iter().map(|s| s.y / s.n).collect()
    }

    pub fn bucket_variance(&self) -> f64 {
        let s = &self.pixels[0];
        (s.xx - s.x * s.x / s.n) / (s.n - 1.0)
    }

    pub fn reference_variance(&self) -> Vec<f64> {
        self.pixels.iter().map(|s| (s.yy - s.y * s.y / s.n) / (s.n - 1.0)).collect()
    }
}

/// Simulates and accumulates without keeping frames in memory.
pub fn simulate_gi_streaming(
    source: &SourceSpec,
    object: &GiObject,
    t1: f64,
    frames: usize,
    seed: u64,
) -> Result<GiAccumulator> {
    let sampler = gi_sampler(source, t1)?;
    let p = object.pixels();
    let streams = Streams::new(seed, stream_domain("ghost"));
    let chunks: Vec<GiAccumulator> = (0..frames.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = GiAccumulator::new(object.width, object.height);
            let (mut n1, mut n2) = (vec![0u64; p], vec![0u64; p]);
            for f in c * CHUNK..((c + 1) * CHUNK).min(frames) {
                let mut rng = streams.frame(f as u64);
                let b = sample_frame(&sampler, object, t1, &mut rng, &mut n1, &mut n2);
                acc.push(b, &n1);
            }
            acc
        })
        .collect();
    let mut total = GiAccumulator::new(object.width, object.height);
    for c in &chunks {
        total.merge(c);
    }
    Ok(total)
}

impl GiRun {
    pub fn accumulate(&self) -> GiAccumulator {
        let mut acc = GiAccumulator::new(self.frames.width(), self.frames.height());
        for (f, &b) in self.bucket.iter().enumerate() {
            acc.push(b, self.frames.counts(f, 0));
        }
        acc
    }

    pub fn reconstruct(&self) -> Result<CovarianceImage> {
        self.accumulate().reconstruct()
    }

    /// Cov(N₂(xᵢ), N₁(xⱼ)) between object-plane pixel i and reference pixel j.
    pub fn cross_covariance(&self, i: usize, j: usize) -> EstimateReport {
        let mut s = ProductSums::default();
        for f in 0..self.frames.frames() {
            s.push(self.frames.counts(f, 1)[i], self.frames.counts(f, 0)[j]);
        }
        let (c, v) = s.product_stats();
        EstimateReport::new(EstimatorKind::Covariance, c, (v / s.n).sqrt(), s.n as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub frames: usize,
}

/// Mean and unbiased spatial variance of S over a set of pixels.
fn region_stats(values: &[f64], pixels: impl Iterator<Item = usize>) -> (f64, f64, usize) {
    let v: Vec<f64> = pixels.map(|p| values[p]).collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var, v.len())
}

impl CovarianceImage {
    /// S(x)/(T₁ Mμ²) or S(x)/(T₁ Mμ(1+μ)): the transmission estimate.
    pub fn transmission(&self, source: &SourceSpec, t1: f64) -> Vec<f64> {
        let scale = t1 * expected_covariance(source, 1.0);
        self.values.iter().map(|s| s / scale).collect()
    }

    /// Mean S over the pixels with the given transmission.
    pub fn region_mean(&self, object: &GiObject, t: f64) -> EstimateReport {
        let (mean, var, n) = region_stats(&self.values, (0..object.pixels()).filter(|&p| object.transmission[p] == t));
        EstimateReport::new(EstimatorKind::Covariance, mean, (var / n as f64).sqrt(), n)
    }
}

/// ⟨S⟩ for unit T₁ at object transmission `t2`.
pub fn expected_covariance(source: &SourceSpec, t2: f64) -> f64 {
    let m = source.modes_per_pixel as f64;
    let (mu1, mu2) = source.arm_mu();
    match source.kind {
        SourceKind::TwinBeam => t2 * m * mu1 * (1.0 + mu1),
        SourceKind::SplitThermal => t2 * m * mu1 * mu2,
        SourceKind::Coherent => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GiPrediction {
    pub snr_th: f64,
    pub snr_spdc: f64,
    /// Per-pixel variance of S, common to both sources.
    pub variance: f64,
}

impl GiPrediction {
    pub fn gain(&self) -> f64 {
        self.snr_spdc / self.snr_th
    }
}

/// Two-level SNRs for thermal and twin-beam light at the same μ and M.
pub fn predicted_gi_snr(object: &GiObject, mu: f64, modes: u32, t1: f64, frames: usize) -> Result<GiPrediction> {
    let lv = object.levels().ok_or_else(|| crate::Error::Domain("object must have two transmission levels".into()))?;
    if lv.r_plus < 10 || lv.r_minus < 10 {
        log::warn!("region sizes R+ = {}, R- = {} are too small for the SNR model", lv.r_plus, lv.r_minus);
    }
    let (k, m) = (frames as f64, modes as f64);
    let bracket = lv.r_minus as f64 * lv.t_minus * (1.0 + lv.t_minus * mu)
        + lv.r_plus as f64 * lv.t_plus * (1.0 + lv.t_plus * mu);
    let denom = (2.0 * (1.0 + t1 * mu) * bracket).sqrt();
    let dt = lv.t_plus - lv.t_minus;
    Ok(GiPrediction {
        snr_th: k.sqrt() * t1.sqrt() * mu * dt / denom,
        snr_spdc: k.sqrt() * t1.sqrt() * (1.0 + mu) * dt / denom,
        variance: m * m * mu * mu * t1 * (1.0 + t1 * mu) * bracket / k,
    })
}

/// Gain written with the detected reference photons per pixel.
pub fn gain_from_detected(t1: f64, modes: u32, mean_n1: f64) -> f64 {
    1.0 + t1 * modes as f64 / mean_n1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GiSnr {
    pub snr: EstimateReport,
    pub mean_plus: f64,
    pub mean_minus: f64,
    pub var_plus: f64,
    pub var_minus: f64,
}

/// |⟨S₊⟩ − ⟨S₋⟩|/√(δ²S₊ + δ²S₋) with spatial statistics over each region.
pub fn measure_gi_snr(image: &CovarianceImage, object: &GiObject) -> Result<GiSnr> {
    let lv = object.levels().ok_or_else(|| crate::Error::Domain("object must have two transmission levels".into()))?;
    if lv.r_plus < 2 || lv.r_minus < 2 {
        return data("each region needs at least two pixels");
    }
    let region = |t: f64| region_stats(&image.values, (0..object.pixels()).filter(move |&p| object.transmission[p] == t));
    let (mp, vp, rp) = region(lv.t_plus);
    let (mm, vm, rm) = region(lv.t_minus);
    let (rp, rm) = (rp as f64, rm as f64);
    let w = vp + vm;
    let delta = (mp - mm).abs();
    let snr = delta / w.sqrt();
    // First-order error with Gaussian spatial fluctuations.
    let var_delta = vp / rp + vm / rm;
    let var_w = 2.0 * vp * vp / (rp - 1.0) + 2.0 * vm * vm / (rm - 1.0);
    let se = (var_delta / w + 0.25 * delta * delta * var_w / w.powi(3)).sqrt();
    Ok(GiSnr {
        snr: EstimateReport::new(EstimatorKind::Snr, snr, se, image.frames),
        mean_plus: mp,
        mean_minus: mm,
        var_plus: vp,
        var_minus: vm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opaque_object_gives_empty_bucket() {
        let src = SourceSpec::twin_beam(0.5, 2).unwrap();
        let obj = GiObject::uniform(4, 4, 0.0).unwrap();
        let run = simulate_gi(&src, &obj, 1.0, 50, 1).unwrap();
        assert!(run.bucket.iter().all(|&b| b == 0));
        assert!(run.reconstruct().unwrap().values.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn bucket_is_sum_of_object_plane() {
        let src = SourceSpec::split_thermal_matched(1.0, 1).unwrap();
        let obj = GiObject::bar(4, 4, 0.5, 0.8, 0.2).unwrap();
        let run = simulate_gi(&src, &obj, 0.7, 20, 3).unwrap();
        for f in 0..20 {
            assert_eq!(run.bucket[f], run.frames.counts(f, 1).iter().sum::<u64>());
        }
    }

    #[test]
    fn streaming_matches_materialized() {
        let src = SourceSpec::twin_beam(0.3, 2).unwrap();
        let obj = GiObject::bar(6, 6, 0.5, 1.0, 0.0).unwrap();
        let run = simulate_gi(&src, &obj, 0.9, 600, 9).unwrap();
        let acc = simulate_gi_streaming(&src, &obj, 0.9, 600, 9).unwrap();
        assert_eq!(run.accumulate(), acc);
    }

    #[test]
    fn limits_and_gain() {
        let obj = GiObject::bar(32, 32, 0.25, 1.0, 0.0).unwrap();
        let lv = obj.levels().unwrap();
        assert_eq!((lv.r_plus, lv.r_minus), (256, 768));
        let p = predicted_gi_snr(&obj, 1e6, 1, 1.0, 10_000).unwrap();
        let limit = (10_000.0 / 512.0f64).sqrt();
        assert!((p.snr_th / limit - 1.0).abs() < 1e-5 && (p.snr_spdc / limit - 1.0).abs() < 1e-5);
        for mu in [0.01, 0.1, 5.0] {
            let p = predicted_gi_snr(&obj, mu, 3, 0.6, 100).unwrap();
            assert!((p.gain() - (1.0 / mu + 1.0)).abs() < 1e-9);
            let n1 = 0.6 * 3.0 * mu;
            assert!((gain_from_detected(0.6, 3, n1) - p.gain()).abs() < 1e-9);
        }
        let a = predicted_gi_snr(&obj, 1e-4, 1, 1.0, 100).unwrap();
        let b = predicted_gi_snr(&obj, 2e-4, 1, 1.0, 100).unwrap();
        assert!((b.snr_th / a.snr_th - 2.0).abs() < 1e-3);
        assert!((b.snr_spdc / a.snr_spdc - 1.0).abs() < 1e-3);
    }
}
