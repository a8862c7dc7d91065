//! Absorption imaging with one beam (direct), with split thermal light
//! (differential classical) and with twin beams (sub-shot-noise).
//!
//! Channel 0 is the probe, which crosses the object; channel 1 is the
//! reference. Direct imaging records the probe only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::DetectorSpec;
use crate::error::{check_fraction, data, domain, Result};
use crate::estimators::{EstimateReport, EstimatorKind, PooledPairs};
use crate::frames::FrameSet;
use crate::moments::PairSums;
use crate::photon::{sample_poisson, thin, PixelSampler, SourceKind, SourceSpec};
use crate::rng::{domain as stream_domain, Streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionObject {
    pub width: u32,
    pub height: u32,
    pub alpha: Vec<f64>,
}

impl AbsorptionObject {
    pub fn new(width: u32, height: u32, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != width as usize * height as usize {
            return data(format!("object has {} values for a {width}x{height} grid", alpha.len()));
        }
        for &a in &alpha {
            check_fraction("absorption", a)?;
        }
        Ok(Self { width, height, alpha })
    }

    pub fn uniform(width: u32, height: u32, alpha: f64) -> Result<Self> {
        Self::new(width, height, vec![alpha; width as usize * height as usize])
    }

    pub fn from_mask(width: u32, height: u32, mask: &[bool], alpha: f64) -> Result<Self> {
        Self::new(width, height, mask.iter().map(|&m| if m { alpha } else { 0.0 }).collect())
    }

    /// Thresholds a grey-level image: pixels above `threshold` absorb `alpha`.
    pub fn from_image(width: u32, height: u32, image: &[f64], threshold: f64, alpha: f64) -> Result<Self> {
        let mask: Vec<bool> = image.iter().map(|&v| v > threshold).collect();
        Self::from_mask(width, height, &mask, alpha)
    }

    pub fn pixels(&self) -> usize {
        self.alpha.len()
    }

    /// Mean absorption of each d×d block.
    pub fn binned(&self, d: usize) -> Result<Vec<f64>> {
        let (w, h) = (self.width as usize, self.height as usize);
        if d == 0 || w % d != 0 || h % d != 0 {
            return data(format!("binning factor {d} does not divide the {w}x{h} grid"));
        }
        let bw = w / d;
        let mut out = vec![0.0; (w / d) * (h / d)];
        for (p, &a) in self.alpha.iter().enumerate() {
            out[(p / w / d) * bw + (p % w) / d] += a / (d * d) as f64;
        }
        Ok(out)
    }
}

/// A "φ" glyph: a ring crossed by a vertical bar, with stroke width
/// about a tenth of the grid.
pub fn phi_mask(width: u32, height: u32) -> Vec<bool> {
    let (w, h) = (width as f64, height as f64);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let stroke = (w.min(h) / 8.0).max(1.0);
    let outer = w.min(h) * 0.32;
    let inner = outer - stroke;
    let mut mask = vec![false; width as usize * height as usize];
    for y in 0..height as usize {
        for x in 0..width as usize {
            let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let r = (px * px + py * py).sqrt();
            let ring = r <= outer && r >= inner;
            let bar = px.abs() <= stroke / 2.0 && py.abs() <= h * 0.45;
            mask[y * width as usize + x] = ring || bar;
        }
    }
    mask
}

/// A "π" glyph: a top bar and two legs.
pub fn pi_mask(width: u32, height: u32) -> Vec<bool> {
    let (w, h) = (width as f64, height as f64);
    let stroke = (w.min(h) / 8.0).max(1.0);
    let mut mask = vec![false; width as usize * height as usize];
    for y in 0..height as usize {
        for x in 0..width as usize {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let top = py >= 0.2 * h && py <= 0.2 * h + stroke && px >= 0.15 * w && px <= 0.85 * w;
            let leg_y = py > 0.2 * h && py <= 0.85 * h;
            let left = leg_y && (px - 0.33 * w).abs() <= stroke / 2.0;
            let right = leg_y && (px - 0.67 * w).abs() <= stroke / 2.0;
            mask[y * width as usize + x] = top || left || right;
        }
    }
    mask
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImagingScheme {
    Direct,
    DifferentialClassical,
    Ssn,
}

impl ImagingScheme {
    pub fn channels(&self) -> u8 {
        match self {
            Self::Direct => 1,
            _ => 2,
        }
    }
}

/// Frames of one imaging run. Pass `None` as object for the no-object
/// calibration run.
pub fn simulate_imaging(
    source: &SourceSpec,
    object: Option<&AbsorptionObject>,
    det: &DetectorSpec,
    scheme: ImagingScheme,
    frames: usize,
    seed: u64,
) -> Result<FrameSet> {
    source.validate()?;
    det.validate()?;
    match (scheme, source.kind) {
        (ImagingScheme::Ssn, k) if k != SourceKind::TwinBeam => {
            return domain("sub-shot-noise imaging needs a twin-beam source")
        }
        (ImagingScheme::DifferentialClassical, SourceKind::TwinBeam) => {
            return domain("differential classical imaging needs a classical source")
        }
        _ => {}
    }
    let pixels = det.pixels();
    let alpha: Vec<f64> = match object {
        Some(o) => {
            if o.width != det.width || o.height != det.height {
                return data("object grid does not match the detector grid");
            }
            o.alpha.clone()
        }
        None => vec![0.0; pixels],
    };
    let channels = scheme.channels() as usize;
    let sampler = PixelSampler::new(source);
    let eta = det.efficiency;
    let dark = det.noise.dark_rate;
    let streams = Streams::new(seed, stream_domain("imaging"));
    let per_frame: Vec<Vec<u64>> = (0..frames)
        .into_par_iter()
        .map(|f| {
            let mut rng = streams.frame(f as u64);
            let mut out = vec![0u64; channels * pixels];
            for p in 0..pixels {
                let (n1, n2) = sampler.sample(&mut rng);
                let probe = thin(thin(n1, 1.0 - alpha[p], &mut rng), eta, &mut rng);
                out[p] = probe + sample_poisson(dark, &mut rng);
                if channels == 2 {
                    out[pixels + p] = thin(n2, eta, &mut rng) + sample_poisson(dark, &mut rng);
                }
            }
            out
        })
        .collect();
    FrameSet::from_counts(det.width, det.height, channels as u8, seed, per_frame.concat())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbsorptionImage {
    pub width: u32,
    pub height: u32,
    pub alpha: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub scheme: ImagingScheme,
    pub frames: usize,
    pub binning: usize,
}

impl AbsorptionImage {
    pub fn z_scores(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.standard_error).map(|(a, s)| a / s).collect()
    }

    /// Median z over the pixels selected by `region`.
    pub fn median_z(&self, region: &[bool]) -> Option<f64> {
        let mut z: Vec<f64> =
            self.z_scores().into_iter().zip(region).filter(|(_, &r)| r).map(|(z, _)| z).collect();
        if z.is_empty() {
            return None;
        }
        z.sort_by(f64::total_cmp);
        let n = z.len();
        Some(if n % 2 == 1 { z[n / 2] } else { 0.5 * (z[n / 2 - 1] + z[n / 2]) })
    }
}

fn check_runs(frames: &FrameSet, calibration: &FrameSet, scheme: ImagingScheme) -> Result<()> {
    let need = scheme.channels() as usize;
    if frames.channels() < need || calibration.channels() < need {
        return data(format!("{scheme:?} imaging needs {need} channel(s)"));
    }
    if frames.width() != calibration.width() || frames.height() != calibration.height() {
        return data("object and calibration runs have different grids");
    }
    if frames.frames() < 2 || calibration.frames() < 2 {
        return data("need at least two frames per run");
    }
    Ok(())
}

/// Single-shot signal: N (direct) or N₂ − N₁ (differential).
fn shot_signal(frames: &FrameSet, f: usize, scheme: ImagingScheme) -> Vec<f64> {
    let probe = frames.values(f, 0);
    match scheme {
        ImagingScheme::Direct => probe,
        _ => frames.values(f, 1).iter().zip(&probe).map(|(r, p)| r - p).collect(),
    }
}

fn pixel_mean_var(frames: &FrameSet, scheme: ImagingScheme) -> (Vec<f64>, Vec<f64>) {
    let mut sums = vec![PairSums::default(); frames.pixels()];
    for f in 0..frames.frames() {
        for (s, v) in sums.iter_mut().zip(shot_signal(frames, f, scheme)) {
            s.push(v, v);
        }
    }
    let m: Vec<_> = sums.iter().map(|s| s.moments()).collect();
    (m.iter().map(|m| m.mean1).collect(), m.iter().map(|m| m.var1).collect())
}

/// Per-pixel α̂ from an object run and a no-object calibration run, after
/// d×d hardware binning of both. The calibration run supplies ⟨n̂⟩ and its
/// uncertainty enters the standard error.
pub fn estimate_alpha(
    frames: &FrameSet,
    calibration: &FrameSet,
    scheme: ImagingScheme,
    binning: usize,
) -> Result<AbsorptionImage> {
    check_runs(frames, calibration, scheme)?;
    let (frames, calibration) = if binning > 1 {
        (frames.bin(binning)?, calibration.bin(binning)?)
    } else {
        (frames.clone(), calibration.clone())
    };
    let (k, kc) = (frames.frames() as f64, calibration.frames() as f64);
    let (sig_mean, sig_var) = pixel_mean_var(&frames, scheme);
    let (n_mean, n_var) = pixel_mean_var(&calibration, ImagingScheme::Direct);
    let mut alpha = Vec::with_capacity(sig_mean.len());
    let mut se = Vec::with_capacity(sig_mean.len());
    for p in 0..sig_mean.len() {
        let n = n_mean[p];
        if n <= 0.0 {
            return data(format!("pixel {p} has zero mean in the calibration run"));
        }
        let s = sig_mean[p];
        let (a, var) = match scheme {
            ImagingScheme::Direct => {
                (1.0 - s / n, sig_var[p] / (k * n * n) + s * s * n_var[p] / (kc * n.powi(4)))
            }
            _ => (s / n, sig_var[p] / (k * n * n) + s * s * n_var[p] / (kc * n.powi(4))),
        };
        alpha.push(a);
        se.push(var.sqrt());
    }
    Ok(AbsorptionImage {
        width: frames.header.width,
        height: frames.header.height,
        alpha,
        standard_error: se,
        scheme,
        frames: frames.frames(),
        binning: binning.max(1),
    })
}

/// Single-shot uncertainty Δα̂ measured as the per-pixel spread of
/// single-frame estimates, pooled over pixels. The prediction field is left
/// for the caller.
pub fn measured_alpha_uncertainty(
    frames: &FrameSet,
    calibration: &FrameSet,
    scheme: ImagingScheme,
) -> Result<EstimateReport> {
    check_runs(frames, calibration, scheme)?;
    let (_, sig_var) = pixel_mean_var(frames, scheme);
    let (n_mean, _) = pixel_mean_var(calibration, ImagingScheme::Direct);
    let per_pixel: Vec<f64> = sig_var.iter().zip(&n_mean).map(|(v, n)| v / (n * n)).collect();
    let p = per_pixel.len() as f64;
    let mean = per_pixel.iter().sum::<f64>() / p;
    let spread = (per_pixel.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (p - 1.0).max(1.0)).sqrt();
    let value = mean.sqrt();
    let se = spread / p.sqrt() / (2.0 * value);
    Ok(EstimateReport::new(EstimatorKind::AbsorptionUncertainty, value, se, frames.frames() * per_pixel.len()))
}

/// Δα from the photon statistics of the unobstructed probe.
pub fn predicted_alpha_uncertainty(
    scheme: ImagingScheme,
    alpha: f64,
    fano: f64,
    sigma: f64,
    mean_n: f64,
) -> Result<f64> {
    check_fraction("alpha", alpha)?;
    if !(mean_n > 0.0) {
        return domain("mean photon number must be positive");
    }
    let v = match scheme {
        ImagingScheme::Direct => (1.0 - alpha).powi(2) * (fano - 1.0) + (1.0 - alpha),
        ImagingScheme::DifferentialClassical | ImagingScheme::Ssn => {
            alpha * alpha * (fano - 1.0) + alpha + 2.0 * sigma * (1.0 - alpha)
        }
    };
    Ok((v / mean_n).sqrt())
}

/// Δα_A / Δα_B (equivalently SNR_B / SNR_A) for weak absorption, where the
/// α²(F−1) term is dropped, the direct probe is shot-noise limited and the
/// classical differential scheme has σ = 1.
pub fn snr_ratio(scheme_a: ImagingScheme, scheme_b: ImagingScheme, alpha: f64, sigma: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    if !(sigma >= 0.0) {
        return domain("sigma must be non-negative");
    }
    let var = |s: ImagingScheme| match s {
        ImagingScheme::Direct => 1.0 - alpha,
        ImagingScheme::DifferentialClassical => 2.0 - alpha,
        ImagingScheme::Ssn => alpha + 2.0 * sigma * (1.0 - alpha),
    };
    Ok((var(scheme_a) / var(scheme_b)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinningRow {
    pub d: usize,
    /// Binned pixel size in base-pixel units.
    pub size: f64,
    pub sigma: f64,
    pub sigma_se: f64,
    /// Δα_SSN/Δα_DC and Δα_SSN/Δα_DR at weak absorption, from the measured σ.
    pub ratio_ssn_dc: f64,
    pub ratio_ssn_dr: f64,
}

/// Bins two-channel frames by each d, then re-estimates the pooled σ and the
/// weak-absorption SNR ratios.
pub fn binning_sweep(base: &FrameSet, d_values: &[usize], blocks: usize) -> Result<Vec<BinningRow>> {
    if base.channels() < 2 {
        return data("binning sweep needs two channels");
    }
    d_values
        .iter()
        .map(|&d| {
            let binned = base.bin(d)?;
            let (sigma, sigma_se) = pooled_sigma(&binned, blocks);
            Ok(BinningRow {
                d,
                size: d as f64,
                sigma,
                sigma_se,
                ratio_ssn_dc: snr_ratio(ImagingScheme::Ssn, ImagingScheme::DifferentialClassical, 0.01, sigma)?,
                ratio_ssn_dr: snr_ratio(ImagingScheme::Ssn, ImagingScheme::Direct, 0.01, sigma)?,
            })
        })
        .collect()
}

/// Pooled NRF of channels 0 and 1 over all pixels with block-jackknife error.
pub fn pooled_sigma(frames: &FrameSet, blocks: usize) -> (f64, f64) {
    let k = frames.frames();
    let mut pooled = PooledPairs::new(frames.pixels(), blocks.min(k));
    for f in 0..k {
        let b = pooled.block_of(f, k);
        pooled.push_frame(b, &frames.values(f, 0), &frames.values(f, 1));
    }
    pooled.estimate(crate::estimators::pooled_nrf)
}
