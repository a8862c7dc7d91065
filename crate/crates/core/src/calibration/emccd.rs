//! Electron-multiplying CCD: analog and thresholded (photon-counting)
//! efficiency from the same correlated-region measurement.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use super::analog::{efficiency_from_pairs, AnalogCalibration};
use crate::error::{check_fraction, data, domain, Result};
use crate::estimators::{EstimateReport, PooledPairs};
use crate::frames::FrameSet;
use crate::geometry::{ModeLayout, RegionSampler};
use crate::rng::{domain as stream_domain, Streams};

const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmGainModel {
    /// Mean electrons per photoelectron.
    pub gain: f64,
    /// Gaussian read noise, electrons.
    pub read_noise: f64,
}

impl EmGainModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0) {
            return domain("EM gain must be positive");
        }
        if !(self.read_noise >= 0.0) {
            return domain("read noise must be non-negative");
        }
        Ok(())
    }
}

/// Output distribution of one pixel holding `n` photoelectrons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOutput {
    pub n: u64,
    pub model: EmGainModel,
}

pub fn em_output_pmf(n: u64, model: EmGainModel) -> Result<EmOutput> {
    model.validate()?;
    Ok(EmOutput { n, model })
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// P(Z > z) for a standard normal.
fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

const SPAN: f64 = 12.0;
const INTERVALS: usize = 800;

impl EmOutput {
    /// Probability mass at exactly x = 0 (no photoelectrons, no read noise).
    pub fn point_mass(&self) -> f64 {
        if self.n == 0 && self.model.read_noise == 0.0 {
            1.0
        } else {
            0.0
        }
    }

    fn erlang(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let (n, g) = (self.n as f64, self.model.gain);
        if x == 0.0 {
            return if self.n == 1 { 1.0 / g } else { 0.0 };
        }
        ((n - 1.0) * x.ln() - x / g - n * g.ln() - ln_gamma(n)).exp()
    }

    /// Continuous part of the output density at x.
    pub fn density(&self, x: f64) -> f64 {
        let s = self.model.read_noise;
        match (self.n, s > 0.0) {
            (0, false) => 0.0,
            (0, true) => normal_pdf(x / s) / s,
            (_, false) => self.erlang(x),
            (_, true) => {
                let (lo, hi) = ((x - SPAN * s).max(0.0), x + SPAN * s);
                simpson(|y| self.erlang(y) * normal_pdf((x - y) / s) / s, lo, hi, INTERVALS)
            }
        }
    }

    /// Multiplication-stage survival P(y > u) before read noise.
    fn gain_sf(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return if u < 0.0 || self.n > 0 { 1.0 } else { 0.0 };
        }
        if self.n == 0 {
            return 0.0;
        }
        gamma_ur(self.n as f64, u / self.model.gain)
    }

    /// Click probability P(x > t).
    pub fn tail(&self, t: f64) -> f64 {
        let s = self.model.read_noise;
        if s == 0.0 {
            return self.gain_sf(t);
        }
        if self.n == 0 {
            return normal_sf(t / s);
        }
        // Read-noise values above t click regardless of the gain output.
        let upper = t.min(SPAN * s);
        normal_sf(upper / s)
            + simpson(|z| normal_pdf(z / s) / s * self.gain_sf(t - z), -SPAN * s, upper, INTERVALS)
    }

    pub fn mean(&self) -> f64 {
        self.n as f64 * self.model.gain
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let amplified = if self.n == 0 {
            0.0
        } else {
            Gamma::new(self.n as f64, self.model.gain).expect("valid gamma").sample(rng)
        };
        let noise = if self.model.read_noise > 0.0 {
            Normal::new(0.0, self.model.read_noise).expect("valid normal").sample(rng)
        } else {
            0.0
        };
        amplified + noise
    }
}

/// Forward-model thresholded efficiency: η₀ times the click probability of
/// a pixel holding one photoelectron.
pub fn predicted_click_efficiency(eta0: f64, model: EmGainModel, threshold: f64) -> Result<f64> {
    Ok(eta0 * em_output_pmf(1, model)?.tail(threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmccdSetup {
    pub layout: ModeLayout,
    pub mu: f64,
    pub eta0: f64,
    pub em: EmGainModel,
    /// Side of a square detection region, in pixels.
    pub region_side: usize,
    /// Region pairs per frame.
    pub regions: usize,
    /// Click thresholds in electrons, ascending.
    pub thresholds: Vec<f64>,
    /// Read noise of the gain-off analog frames, electrons.
    #[serde(default)]
    pub analog_read_noise: f64,
}

impl EmccdSetup {
    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        self.em.validate()?;
        check_fraction("eta0", self.eta0)?;
        if !(self.mu >= 0.0) || self.region_side == 0 || self.regions == 0 {
            return domain("need non-negative mu and non-empty regions");
        }
        if self.thresholds.is_empty() || self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return domain("thresholds must be non-empty and strictly ascending");
        }
        Ok(())
    }

    pub fn region_pixels(&self) -> usize {
        self.region_side * self.region_side
    }
}

/// Per-region click counts at every threshold, with dark-frame statistics
/// and optional gain-off analog counts.
#[derive(Debug, Clone)]
pub struct ClickTable {
    pub thresholds: Vec<f64>,
    pub region_pixels: usize,
    pub clicks: Vec<PooledPairs>,
    /// Dark clicks per region, pooled over regions into one series and split
    /// into dark-frame blocks.
    pub dark: Vec<PooledPairs>,
    pub analog: Option<PooledPairs>,
}

/// Clicks at every threshold among `pixels` pixels that hold no
/// photoelectron: nested binomials over ascending thresholds.
fn false_clicks<R: Rng + ?Sized>(pixels: u64, p_false: &[f64], rng: &mut R, out: &mut [u64]) {
    let mut n = pixels;
    let mut prev = 1.0;
    for (o, &p) in out.iter_mut().zip(p_false) {
        let cond = if prev > 0.0 { (p / prev).min(1.0) } else { 0.0 };
        n = if n == 0 || cond <= 0.0 {
            0
        } else if cond >= 1.0 {
            n
        } else {
            Binomial::new(n, cond).expect("valid binomial").sample(rng)
        };
        *o += n;
        prev = p;
    }
}

/// Clicks at every threshold for one region holding `electrons`
/// photoelectrons spread uniformly over its pixels.
#[allow(clippy::too_many_arguments)]
fn region_clicks<R: Rng + ?Sized>(
    electrons: u64,
    pixels: usize,
    em: &EmGainModel,
    thresholds: &[f64],
    p_false: &[f64],
    hits: &mut Vec<usize>,
    rng: &mut R,
    out: &mut [u64],
) {
    out.iter_mut().for_each(|o| *o = 0);
    hits.clear();
    hits.extend((0..electrons).map(|_| rng.random_range(0..pixels)));
    hits.sort_unstable();
    let mut distinct = 0u64;
    let mut i = 0;
    while i < hits.len() {
        let mut j = i;
        while j < hits.len() && hits[j] == hits[i] {
            j += 1;
        }
        let x = EmOutput { n: (j - i) as u64, model: *em }.sample(rng);
        for (o, &t) in out.iter_mut().zip(thresholds) {
            *o += (x > t) as u64;
        }
        distinct += 1;
        i = j;
    }
    false_clicks(pixels as u64 - distinct, p_false, rng, out);
}

/// Streams `frames` signal frames and `dark_frames` dark frames into a click
/// table without materializing pixel data.
pub fn simulate_click_table(
    setup: &EmccdSetup,
    frames: usize,
    dark_frames: usize,
    blocks: usize,
    seed: u64,
) -> Result<ClickTable> {
    setup.validate()?;
    if frames < 2 * blocks.max(2) || dark_frames < 2 {
        return data("too few frames for the requested blocks");
    }
    let sampler = RegionSampler::new(&setup.layout, setup.mu)?;
    let noise = EmOutput { n: 0, model: setup.em };
    let p_false: Vec<f64> = setup.thresholds.iter().map(|&t| noise.tail(t)).collect();
    let nt = setup.thresholds.len();
    let (regions, pixels) = (setup.regions, setup.region_pixels());
    let analog_noise = Normal::new(0.0, setup.analog_read_noise).expect("valid normal");
    let streams = Streams::new(seed, stream_domain("emccd"));

    struct Partial {
        clicks: Vec<PooledPairs>,
        analog: PooledPairs,
        dark: Vec<PooledPairs>,
    }
    let empty = || Partial {
        clicks: vec![PooledPairs::new(regions, blocks); nt],
        analog: PooledPairs::new(regions, blocks),
        dark: vec![PooledPairs::new(1, blocks.min(dark_frames)); nt],
    };
    let signal = streams.child(0);
    let dark = streams.child(1);
    let chunks = frames.div_ceil(CHUNK).max(dark_frames.div_ceil(CHUNK));
    let parts: Vec<Partial> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut part = empty();
            let mut hits = Vec::new();
            let (mut c1, mut c2) = (vec![0u64; nt], vec![0u64; nt]);
            let (mut x1, mut x2) = (vec![vec![0.0; regions]; nt], vec![vec![0.0; regions]; nt]);
            let (mut a1, mut a2) = (vec![0.0; regions], vec![0.0; regions]);
            for f in c * CHUNK..((c + 1) * CHUNK).min(frames) {
                let mut rng = signal.frame(f as u64);
                let dithers = sampler.dithers(&mut rng);
                for r in 0..regions {
                    let (e1, e2) = sampler.sample_detected(&dithers, r, setup.eta0, setup.eta0, &mut rng);
                    a1[r] = e1 as f64 + analog_noise.sample(&mut rng);
                    a2[r] = e2 as f64 + analog_noise.sample(&mut rng);
                    // Photon-counting frame of the same light, recorded separately.
                    let (p1, p2) = sampler.sample_detected(&dithers, r, setup.eta0, setup.eta0, &mut rng);
                    region_clicks(p1, pixels, &setup.em, &setup.thresholds, &p_false, &mut hits, &mut rng, &mut c1);
                    region_clicks(p2, pixels, &setup.em, &setup.thresholds, &p_false, &mut hits, &mut rng, &mut c2);
                    for t in 0..nt {
                        x1[t][r] = c1[t] as f64;
                        x2[t][r] = c2[t] as f64;
                    }
                }
                let b = part.analog.block_of(f, frames);
                part.analog.push_frame(b, &a1, &a2);
                for t in 0..nt {
                    part.clicks[t].push_frame(b, &x1[t], &x2[t]);
                }
            }
            for f in c * CHUNK..((c + 1) * CHUNK).min(dark_frames) {
                let mut rng = dark.frame(f as u64);
                let b = part.dark[0].block_of(f, dark_frames);
                for _ in 0..regions {
                    region_clicks(0, pixels, &setup.em, &setup.thresholds, &p_false, &mut hits, &mut rng, &mut c1);
                    region_clicks(0, pixels, &setup.em, &setup.thresholds, &p_false, &mut hits, &mut rng, &mut c2);
                    for t in 0..nt {
                        part.dark[t].push_frame(b, &[c1[t] as f64], &[c2[t] as f64]);
                    }
                }
            }
            part
        })
        .collect();

    let mut total = empty();
    for p in &parts {
        merge_pooled(&mut total.analog, &p.analog);
        for t in 0..nt {
            merge_pooled(&mut total.clicks[t], &p.clicks[t]);
            merge_pooled(&mut total.dark[t], &p.dark[t]);
        }
    }
    Ok(ClickTable {
        thresholds: setup.thresholds.clone(),
        region_pixels: pixels,
        clicks: total.clicks,
        dark: total.dark,
        analog: Some(total.analog),
    })
}

fn merge_pooled(into: &mut PooledPairs, from: &PooledPairs) {
    for (a, b) in into.blocks.iter_mut().zip(&from.blocks) {
        for (x, y) in a.iter_mut().zip(b) {
            x.merge(y);
        }
    }
}

/// Per-tile click counts above each threshold.
fn tile_clicks(values: &[f64], width: usize, side: usize, thresholds: &[f64]) -> Vec<Vec<f64>> {
    let tiles_x = width / side;
    let tiles = tiles_x * (values.len() / width / side);
    let mut out = vec![vec![0.0; tiles]; thresholds.len()];
    for (p, &v) in values.iter().enumerate() {
        let tile = (p / width / side) * tiles_x + (p % width) / side;
        for (t, &th) in thresholds.iter().enumerate() {
            if v > th {
                out[t][tile] += 1.0;
            }
        }
    }
    out
}

impl ClickTable {
    /// Builds a table from recorded EM-output frames. Channel 0 and 1 hold
    /// the two arms; each `side`×`side` tile is one detection region.
    pub fn from_frames(signal: &FrameSet, dark: &FrameSet, side: usize, thresholds: &[f64], blocks: usize) -> Result<Self> {
        if signal.channels() != 2 || dark.channels() != 2 {
            return data("EMCCD frame sets need two channels");
        }
        if side == 0 || !signal.width().is_multiple_of(side) || !signal.height().is_multiple_of(side) {
            return data("region side must tile the frame");
        }
        if (dark.width(), dark.height()) != (signal.width(), signal.height()) {
            return data("dark frames must match the signal grid");
        }
        if signal.frames() < 2 * blocks.max(2) {
            return data("too few frames for the requested blocks");
        }
        let tiles = signal.pixels() / (side * side);
        let k = signal.frames();
        let mut clicks = vec![PooledPairs::new(tiles, blocks); thresholds.len()];
        for f in 0..k {
            let x1 = tile_clicks(&signal.values(f, 0), signal.width(), side, thresholds);
            let x2 = tile_clicks(&signal.values(f, 1), signal.width(), side, thresholds);
            let b = clicks[0].block_of(f, k);
            for t in 0..thresholds.len() {
                clicks[t].push_frame(b, &x1[t], &x2[t]);
            }
        }
        let dk = dark.frames();
        let mut dark_sums = vec![PooledPairs::new(1, blocks.min(dk)); thresholds.len()];
        for f in 0..dk {
            let block = dark_sums[0].block_of(f, dk);
            let x1 = tile_clicks(&dark.values(f, 0), dark.width(), side, thresholds);
            let x2 = tile_clicks(&dark.values(f, 1), dark.width(), side, thresholds);
            for t in 0..thresholds.len() {
                for (a, c) in x1[t].iter().zip(&x2[t]) {
                    dark_sums[t].push_frame(block, &[*a], &[*c]);
                }
            }
        }
        Ok(Self { thresholds: thresholds.to_vec(), region_pixels: side * side, clicks, dark: dark_sums, analog: None })
    }
}

/// EM-output frames for `setup`: every region is a tile of the frame, the
/// tiles laid out in a row. With `dark` set no light reaches the sensor.
pub fn simulate_emccd_frames(setup: &EmccdSetup, frames: usize, dark: bool, seed: u64) -> Result<FrameSet> {
    setup.validate()?;
    let sampler = RegionSampler::new(&setup.layout, setup.mu)?;
    let side = setup.region_side;
    let (width, height) = (side * setup.regions, side);
    let pixels = width * height;
    let streams = Streams::new(seed, stream_domain(if dark { "emccd-dark-frames" } else { "emccd-frames" }));
    let values: Vec<f64> = (0..frames)
        .into_par_iter()
        .flat_map_iter(|f| {
            let mut rng = streams.frame(f as u64);
            let dithers = sampler.dithers(&mut rng);
            let mut electrons = vec![0u64; 2 * pixels];
            if !dark {
                for r in 0..setup.regions {
                    let (e1, e2) = sampler.sample_detected(&dithers, r, setup.eta0, setup.eta0, &mut rng);
                    for (c, e) in [(0, e1), (1, e2)] {
                        for _ in 0..e {
                            let p = rng.random_range(0..side * side);
                            let (y, x) = (p / side, r * side + p % side);
                            electrons[c * pixels + y * width + x] += 1;
                        }
                    }
                }
            }
            electrons.into_iter().map(|n| EmOutput { n, model: setup.em }.sample(&mut rng)).collect::<Vec<_>>()
        })
        .collect();
    FrameSet::from_analog(width as u32, height as u32, 2, seed, values)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdPoint {
    pub threshold: f64,
    pub eta: Option<EstimateReport>,
    pub sigma_alpha: f64,
    pub mean_clicks: f64,
    pub rejected: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmccdCalibration {
    pub eta0: Option<AnalogCalibration>,
    pub curve: Vec<ThresholdPoint>,
}

impl EmccdCalibration {
    /// True when the accepted points of the η(T) curve never increase by
    /// more than `k` combined standard errors.
    pub fn is_monotone(&self, k: f64) -> bool {
        let pts: Vec<&EstimateReport> = self.curve.iter().filter_map(|p| p.eta.as_ref()).collect();
        pts.windows(2).all(|w| {
            w[1].value <= w[0].value + k * (w[0].standard_error.powi(2) + w[1].standard_error.powi(2)).sqrt()
        })
    }
}

/// η₀ from the analog counts and η(T) at every threshold, with dark clicks
/// removed before inverting σ_α(T). Saturated thresholds are rejected.
pub fn emccd_threshold_calibration(table: &ClickTable, a: f64) -> Result<EmccdCalibration> {
    let eta0 = table.analog.as_ref().map(|p| efficiency_from_pairs(p, None, a)).transpose()?;
    let mut curve = Vec::new();
    for (t, &threshold) in table.thresholds.iter().enumerate() {
        let totals = table.clicks[t].totals();
        let mean_clicks = totals.iter().map(|p| p.moments().mean1 + p.moments().mean2).sum::<f64>()
            / (2 * totals.len()) as f64;
        let mut point = ThresholdPoint { threshold, eta: None, sigma_alpha: f64::NAN, mean_clicks, rejected: None };
        if mean_clicks >= 0.99 * table.region_pixels as f64 {
            point.rejected = Some("saturated: nearly every pixel clicks".into());
        } else {
            match efficiency_from_pairs(&table.clicks[t], Some(&table.dark[t]), a) {
                Ok(cal) if cal.alpha.is_finite() && cal.eta.value.is_finite() => {
                    point.sigma_alpha = cal.sigma_alpha;
                    point.eta = Some(cal.eta);
                }
                Ok(_) => point.rejected = Some("no signal above the dark clicks".into()),
                Err(e) => point.rejected = Some(e.to_string()),
            }
        }
        curve.push(point);
    }
    Ok(EmccdCalibration { eta0, curve })
}
