//! Far-field mode bookkeeping for finite, possibly misaligned detection
//! regions, the collection efficiency A and the spatial cross-correlation map.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_fraction, data, domain, Result};
use crate::frames::FrameSet;
use crate::photon::{thin, ThermalSampler};
use crate::rng::{domain as stream_domain, Streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeLayout {
    pub coherence_radius: f64,
    pub region_size: f64,
    pub misalignment: f64,
    #[serde(default = "half")]
    pub border_efficiency: f64,
}

fn half() -> f64 {
    0.5
}

impl ModeLayout {
    pub fn new(coherence_radius: f64, region_size: f64, misalignment: f64, border_efficiency: f64) -> Result<Self> {
        let layout = Self { coherence_radius, region_size, misalignment, border_efficiency };
        layout.validate()?;
        Ok(layout)
    }

    /// Layout from X = L/2r and D = δ/2r with r = 1.
    pub fn dimensionless(x: f64, d: f64, beta: f64) -> Result<Self> {
        Self::new(1.0, 2.0 * x, 2.0 * d, beta)
    }

    pub fn validate(&self) -> Result<()> {
        let (r, l, delta) = (self.coherence_radius, self.region_size, self.misalignment);
        if !(r > 0.0 && r.is_finite()) {
            return domain(format!("coherence radius must be positive, got {r}"));
        }
        if !(l > 2.0 * r) {
            return domain(format!("region size {l} must exceed twice the coherence radius {r}"));
        }
        if !(delta >= 0.0 && delta < l / 4.0) {
            return domain(format!("misalignment {delta} must lie in [0, L/4) with L = {l}"));
        }
        check_fraction("border_efficiency", self.border_efficiency)
    }

    pub fn x(&self) -> f64 {
        self.region_size / (2.0 * self.coherence_radius)
    }

    pub fn d(&self) -> f64 {
        self.misalignment / (2.0 * self.coherence_radius)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.coherence_radius * factor,
            self.region_size * factor,
            self.misalignment * factor,
            self.border_efficiency,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeCounts {
    pub correlated: f64,
    pub uncorrelated: f64,
    pub border: f64,
}

pub fn mode_counts(layout: &ModeLayout) -> Result<ModeCounts> {
    layout.validate()?;
    let (r, l, delta) = (layout.coherence_radius, layout.region_size, layout.misalignment);
    let area = std::f64::consts::PI * r * r;
    let correlated = ((l - 2.0 * r).powi(2) - 2.0 * l * delta) / area;
    if correlated <= 0.0 {
        return domain(format!("layout leaves no correlated modes (M_c = {correlated})"));
    }
    Ok(ModeCounts { correlated, uncorrelated: 2.0 * l * delta / area, border: 2.0 * l / r })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectionEfficiency {
    /// A clamped to [0, 1].
    pub value: f64,
    /// A as given by the closed form.
    pub raw: f64,
    pub diagnostic: Option<String>,
}

/// A from X, D, β and μ in closed form.
pub fn collection_efficiency(layout: &ModeLayout, mu: f64) -> Result<CollectionEfficiency> {
    layout.validate()?;
    if !(mu >= 0.0) {
        return domain(format!("mode occupation must be non-negative, got {mu}"));
    }
    let (x, d, beta) = (layout.x(), layout.d(), layout.border_efficiency);
    let pi = std::f64::consts::PI;
    let den = x * x + (pi * beta - 2.0) * x + 1.0;
    if den <= 0.0 {
        return domain(format!("collection efficiency denominator is {den}"));
    }
    let raw = (x * (pi * beta * beta - 2.0 * d * (mu + 1.0) - 2.0) + x * x + 1.0) / den;
    let value = raw.clamp(0.0, 1.0);
    let diagnostic = (value != raw).then(|| {
        format!("A = {raw:.6} lies outside [0, 1] (X = {x}, D = {d}, mu = {mu}); reported clamped")
    });
    if let Some(msg) = &diagnostic {
        log::warn!("{msg}");
    }
    Ok(CollectionEfficiency { value, raw, diagnostic })
}

/// A from explicit mode counts: (M_c + M_b β² − μ M_u)/(M_c + M_u + M_b β).
pub fn collection_efficiency_from_counts(counts: &ModeCounts, beta: f64, mu: f64) -> f64 {
    (counts.correlated + counts.border * beta * beta - mu * counts.uncorrelated)
        / (counts.correlated + counts.uncorrelated + counts.border * beta)
}

pub fn predicted_nrf(eta: f64, a: f64) -> Result<f64> {
    check_fraction("eta", eta)?;
    check_fraction("A", a)?;
    Ok(1.0 - eta * a)
}

/// Systematic randomized rounding of a fractional per-pixel count along the
/// pixel raster: each pixel gets ⌊m⌋ or ⌈m⌉ with E = m, and the frame total
/// stays within one of `pixels · m`.
#[derive(Debug, Clone, Copy)]
pub struct Dither {
    base: u64,
    frac: f64,
    offset: f64,
}

impl Dither {
    pub fn new<R: Rng + ?Sized>(m: f64, rng: &mut R) -> Self {
        let base = m.floor();
        Self { base: base as u64, frac: m - base, offset: rng.random::<f64>() }
    }

    #[inline]
    pub fn count(&self, pixel: usize) -> u64 {
        let i = pixel as f64;
        let extra = (self.frac * (i + 1.0) + self.offset).floor() - (self.frac * i + self.offset).floor();
        self.base + extra as u64
    }
}

/// Samples one region pair of a layout: shared correlated modes, unilateral
/// modes whose partners fall outside the other region, and border modes
/// thinned with β independently in each arm.
#[derive(Debug, Clone, Copy)]
pub struct RegionSampler {
    pub counts: ModeCounts,
    pub beta: f64,
    thermal: ThermalSampler,
}

impl RegionSampler {
    pub fn new(layout: &ModeLayout, mu: f64) -> Result<Self> {
        Ok(Self::from_counts(mode_counts(layout)?, layout.border_efficiency, mu))
    }

    pub fn from_counts(counts: ModeCounts, beta: f64, mu: f64) -> Self {
        Self { counts, beta, thermal: ThermalSampler::new(mu) }
    }

    /// Per-frame dithers for (correlated, uncorrelated, border) counts.
    pub fn dithers<R: Rng + ?Sized>(&self, rng: &mut R) -> [Dither; 3] {
        [
            Dither::new(self.counts.correlated, rng),
            Dither::new(self.counts.uncorrelated, rng),
            Dither::new(self.counts.border, rng),
        ]
    }

    /// Pre-detection photon numbers arriving at the two regions.
    #[inline]
    pub fn sample_with<R: Rng + ?Sized>(&self, modes: [u64; 3], rng: &mut R) -> (u64, u64) {
        let [mc, mu, mb] = modes;
        let shared = self.thermal.sample_modes(mc, rng);
        let u1 = self.thermal.sample_modes(mu, rng);
        let u2 = self.thermal.sample_modes(mu, rng);
        let border = self.thermal.sample_modes(mb, rng);
        let b1 = thin(border, self.beta, rng);
        let b2 = thin(border, self.beta, rng);
        (shared + u1 + b1, shared + u2 + b2)
    }

    pub fn sample_detected<R: Rng + ?Sized>(
        &self,
        dithers: &[Dither; 3],
        pixel: usize,
        eta1: f64,
        eta2: f64,
        rng: &mut R,
    ) -> (u64, u64) {
        let modes = [dithers[0].count(pixel), dithers[1].count(pixel), dithers[2].count(pixel)];
        let (a, b) = self.sample_with(modes, rng);
        (thin(a, eta1, rng), thin(b, eta2, rng))
    }
}

/// Two-channel frames in which every pixel is one detection-region pair of
/// `layout`, illuminated by twin beams with occupation μ.
#[allow(clippy::too_many_arguments)]
pub fn simulate_layout_frames(
    layout: &ModeLayout,
    mu: f64,
    eta1: f64,
    eta2: f64,
    width: u32,
    height: u32,
    frames: usize,
    seed: u64,
) -> Result<FrameSet> {
    check_fraction("eta1", eta1)?;
    check_fraction("eta2", eta2)?;
    let sampler = RegionSampler::new(layout, mu)?;
    let pixels = width as usize * height as usize;
    let streams = Streams::new(seed, stream_domain("geometry-layout"));
    let per_frame: Vec<Vec<u64>> = (0..frames)
        .into_par_iter()
        .map(|f| {
            let mut rng = streams.frame(f as u64);
            let dithers = sampler.dithers(&mut rng);
            let mut out = vec![0u64; 2 * pixels];
            for p in 0..pixels {
                let (a, b) = sampler.sample_detected(&dithers, p, eta1, eta2, &mut rng);
                out[p] = a;
                out[pixels + p] = b;
            }
            out
        })
        .collect();
    FrameSet::from_counts(width, height, 2, seed, per_frame.concat())
}

/// Spatial model in which neighbouring pixels share the mode pairs that
/// straddle their common edge, so that hardware binning turns inner edges
/// into correlated modes. Each base pixel has X = `x` (integer), D = 0 and
/// border efficiency ½.
#[derive(Debug, Clone, Copy)]
pub struct EdgeSharedModel {
    pub x: u32,
    pub mu: f64,
    pub eta: f64,
}

impl EdgeSharedModel {
    /// Interior correlated modes per base pixel, 4(X−1)²/π.
    pub fn interior_modes(&self) -> f64 {
        4.0 * (self.x as f64 - 1.0).powi(2) / std::f64::consts::PI
    }

    /// Mode pairs straddling one pixel edge, X.
    pub fn edge_modes(&self) -> u64 {
        self.x as u64
    }

    /// Exact A of a d×d binned super-pixel under this model.
    pub fn binned_efficiency(&self, d: usize) -> f64 {
        let d = d as f64;
        let e = self.edge_modes() as f64;
        let mc = d * d * self.interior_modes() + 2.0 * d * (d - 1.0) * e;
        let mb = 4.0 * d * e;
        (mc + mb * 0.25) / (mc + mb * 0.5)
    }

    pub fn binned_nrf(&self, d: usize) -> f64 {
        1.0 - self.eta * self.binned_efficiency(d)
    }

    /// Closed-form A at X = d·x for the same occupation.
    pub fn closed_form_efficiency(&self, d: usize) -> Result<f64> {
        let layout = ModeLayout::dimensionless(d as f64 * self.x as f64, 0.0, 0.5)?;
        Ok(collection_efficiency(&layout, self.mu)?.value)
    }

    pub fn simulate(&self, width: u32, height: u32, frames: usize, seed: u64) -> Result<FrameSet> {
        if self.x < 2 {
            return domain("edge-shared model needs X >= 2");
        }
        check_fraction("eta", self.eta)?;
        let (w, h) = (width as usize, height as usize);
        let pixels = w * h;
        let thermal = ThermalSampler::new(self.mu);
        let interior = self.interior_modes();
        let e = self.edge_modes();
        let eta = self.eta;
        let streams = Streams::new(seed, stream_domain("geometry-edge-shared"));
        let per_frame: Vec<Vec<u64>> = (0..frames)
            .into_par_iter()
            .map(|f| {
                let mut rng = streams.frame(f as u64);
                let dither = Dither::new(interior, &mut rng);
                let mut arm1 = vec![0u64; pixels];
                let mut arm2 = vec![0u64; pixels];
                for p in 0..pixels {
                    let n = thermal.sample_modes(dither.count(p), &mut rng);
                    arm1[p] += n;
                    arm2[p] += n;
                }
                // Vertical edges: between (x−1, y) and (x, y) for x in 0..=w,
                // then horizontal edges between (x, y−1) and (x, y).
                let mut share = |a: Option<usize>, b: Option<usize>, rng: &mut crate::rng::StreamRng| {
                    let n = thermal.sample_modes(e, rng);
                    if n == 0 {
                        return;
                    }
                    for arm in [&mut arm1, &mut arm2] {
                        let to_a = thin(n, 0.5, rng);
                        if let Some(a) = a {
                            arm[a] += to_a;
                        }
                        if let Some(b) = b {
                            arm[b] += n - to_a;
                        }
                    }
                };
                for y in 0..h {
                    for x in 0..=w {
                        let a = (x > 0).then(|| y * w + x - 1);
                        let b = (x < w).then(|| y * w + x);
                        share(a, b, &mut rng);
                    }
                }
                for y in 0..=h {
                    for x in 0..w {
                        let a = (y > 0).then(|| (y - 1) * w + x);
                        let b = (y < h).then(|| y * w + x);
                        share(a, b, &mut rng);
                    }
                }
                let mut out = Vec::with_capacity(2 * pixels);
                out.extend(arm1.iter().map(|&n| thin(n, eta, &mut rng)));
                out.extend(arm2.iter().map(|&n| thin(n, eta, &mut rng)));
                out
            })
            .collect();
        FrameSet::from_counts(width, height, 2, seed, per_frame.concat())
    }
}

/// Twin-beam frames whose arm-2 image is arm 1 displaced by `shift` pixels
/// (the mode pair of arm-1 pixel (x, y) lands on arm-2 pixel (x+dx, y+dy)).
pub fn simulate_shifted_twin_frames(
    mu: f64,
    modes: u32,
    eta: f64,
    width: u32,
    height: u32,
    shift: (i32, i32),
    frames: usize,
    seed: u64,
) -> Result<FrameSet> {
    check_fraction("eta", eta)?;
    let (w, h) = (width as i64, height as i64);
    let pixels = (w * h) as usize;
    let thermal = ThermalSampler::new(mu);
    let streams = Streams::new(seed, stream_domain("geometry-shifted"));
    let per_frame: Vec<Vec<u64>> = (0..frames)
        .into_par_iter()
        .map(|f| {
            let mut rng = streams.frame(f as u64);
            let mut out = vec![0u64; 2 * pixels];
            // Source pixels cover the union of both footprints.
            for sy in -h..2 * h {
                for sx in -w..2 * w {
                    let (tx, ty) = (sx + shift.0 as i64, sy + shift.1 as i64);
                    let in1 = (0..w).contains(&sx) && (0..h).contains(&sy);
                    let in2 = (0..w).contains(&tx) && (0..h).contains(&ty);
                    if !in1 && !in2 {
                        continue;
                    }
                    let n = thermal.sample_modes(modes as u64, &mut rng);
                    if in1 {
                        out[(sy * w + sx) as usize] = thin(n, eta, &mut rng);
                    }
                    if in2 {
                        out[pixels + (ty * w + tx) as usize] = thin(n, eta, &mut rng);
                    }
                }
            }
            out
        })
        .collect();
    FrameSet::from_counts(width, height, 2, seed, per_frame.concat())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMap {
    pub max_shift: usize,
    /// Row-major over dy then dx in −s..=s; `None` when no pixel pair was usable.
    pub values: Vec<Option<f64>>,
    /// Pixels skipped because a series had zero variance.
    pub excluded_pixels: usize,
}

impl CorrelationMap {
    pub fn get(&self, dx: i32, dy: i32) -> Option<f64> {
        let s = self.max_shift as i32;
        let side = 2 * s + 1;
        self.values[((dy + s) * side + dx + s) as usize]
    }

    /// Shift with the largest coefficient.
    pub fn peak(&self) -> Option<(i32, i32)> {
        let s = self.max_shift as i32;
        let side = 2 * s + 1;
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| ((i as i32 % side) - s, (i as i32 / side) - s))
    }
}

/// Pixel-averaged Pearson coefficient between channel 0 of `frames1` at x
/// and channel `channel2` of `frames2` at x + ξ, for |ξ| ≤ max_shift.
pub fn cross_correlation_map(
    frames1: &FrameSet,
    frames2: &FrameSet,
    channel2: usize,
    max_shift: usize,
) -> Result<CorrelationMap> {
    if frames1.frames() != frames2.frames() {
        return data("frame counts differ");
    }
    if frames1.width() != frames2.width() || frames1.height() != frames2.height() {
        return data("grid sizes differ");
    }
    if frames1.frames() < 2 {
        return data("need at least two frames");
    }
    let (w, h, k) = (frames1.width() as i64, frames1.height() as i64, frames1.frames());
    let pixels = (w * h) as usize;
    let standardize = |fs: &FrameSet, channel: usize| -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut z = vec![vec![0.0; k]; pixels];
        let mut ok = vec![true; pixels];
        for p in 0..pixels {
            let s = fs.pixel_series(channel, p);
            let m = s.iter().sum::<f64>() / k as f64;
            let v = s.iter().map(|x| (x - m).powi(2)).sum::<f64>();
            if v <= 0.0 {
                ok[p] = false;
                continue;
            }
            let sd = v.sqrt();
            z[p] = s.iter().map(|x| (x - m) / sd).collect();
        }
        (z, ok)
    };
    let (z1, ok1) = standardize(frames1, 0);
    let (z2, ok2) = standardize(frames2, channel2);
    let excluded = ok1.iter().chain(&ok2).filter(|ok| !**ok).count();
    if excluded > 0 {
        log::warn!("cross-correlation: {excluded} zero-variance pixel series excluded");
    }
    let s = max_shift as i64;
    let shifts: Vec<(i64, i64)> = (-s..=s).flat_map(|dy| (-s..=s).map(move |dx| (dx, dy))).collect();
    let values = shifts
        .par_iter()
        .map(|&(dx, dy)| {
            let (mut sum, mut count) = (0.0, 0usize);
            for y in 0..h {
                for x in 0..w {
                    let (tx, ty) = (x + dx, y + dy);
                    if !(0..w).contains(&tx) || !(0..h).contains(&ty) {
                        continue;
                    }
                    let (p, q) = ((y * w + x) as usize, (ty * w + tx) as usize);
                    if !ok1[p] || !ok2[q] {
                        continue;
                    }
                    sum += z1[p].iter().zip(&z2[q]).map(|(a, b)| a * b).sum::<f64>();
                    count += 1;
                }
            }
            (count > 0).then(|| sum / count as f64)
        })
        .collect();
    Ok(CorrelationMap { max_shift, values, excluded_pixels: excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn mode_count_examples() {
        let l = ModeLayout::new(1.0, 10.0, 0.0, 0.5).unwrap();
        let c = mode_counts(&l).unwrap();
        assert_eq!(c.uncorrelated, 0.0);
        assert!((c.correlated - 64.0 / PI).abs() < 1e-12);
        assert!((c.correlated - 20.372).abs() < 1e-3);
        assert_eq!(c.border, 20.0);
        assert!(ModeLayout::new(1.0, 2.0, 0.0, 0.5).is_err());
        assert!(ModeLayout::new(1.0, 10.0, 2.5, 0.5).is_err());
    }

    #[test]
    fn efficiency_examples() {
        let far = ModeLayout::dimensionless(1e6, 0.0, 0.5).unwrap();
        assert!((collection_efficiency(&far, 0.1).unwrap().value - 1.0).abs() < 1e-4);
        let a = collection_efficiency(&ModeLayout::dimensionless(5.0, 0.0, 0.5).unwrap(), 0.0).unwrap();
        assert!((a.value - 0.8353).abs() < 1e-3, "{}", a.value);
        let a1 = collection_efficiency(&ModeLayout::dimensionless(5.0, 0.1, 0.5).unwrap(), 0.5).unwrap();
        let a2 = collection_efficiency(&ModeLayout::dimensionless(5.0, 0.3, 0.5).unwrap(), 0.5).unwrap();
        assert!(a2.value < a1.value && a1.value < a.value);
    }

    #[test]
    fn closed_form_matches_mode_counts() {
        for (x, d, beta, mu) in [(3.0, 0.0, 0.5, 0.1), (6.0, 0.25, 0.5, 0.5), (12.0, 0.5, 0.3, 2.0)] {
            let l = ModeLayout::dimensionless(x, d, beta).unwrap();
            let direct = collection_efficiency_from_counts(&mode_counts(&l).unwrap(), beta, mu);
            let closed = collection_efficiency(&l, mu).unwrap().raw;
            assert!((direct - closed).abs() < 1e-12, "{direct} vs {closed}");
        }
    }

    #[test]
    fn out_of_range_efficiency_is_reported() {
        // A < 0 needs large D(μ+1); keep D < X/4 so the layout is valid.
        let l = ModeLayout::dimensionless(3.0, 0.7, 0.0).unwrap();
        let a = collection_efficiency(&l, 20.0).unwrap();
        assert!(a.raw < 0.0);
        assert_eq!(a.value, 0.0);
        assert!(a.diagnostic.is_some());
    }

    #[test]
    fn predicted_nrf_examples() {
        assert_eq!(predicted_nrf(1.0, 1.0).unwrap(), 0.0);
        assert_eq!(predicted_nrf(0.5, 1.0).unwrap(), 0.5);
        assert!((predicted_nrf(0.4, 0.5).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn dither_keeps_totals() {
        let mut rng = Streams::new(1, 2).frame(0);
        for m in [0.3, 5.0, 20.372, 64.0 / PI] {
            let d = Dither::new(m, &mut rng);
            let total: u64 = (0..4096).map(|p| d.count(p)).sum();
            assert!((total as f64 - 4096.0 * m).abs() <= 1.0);
            assert!((0..4096).all(|p| d.count(p) == m.floor() as u64 || d.count(p) == m.ceil() as u64));
        }
    }

    #[test]
    fn edge_model_base_pixel_matches_closed_form() {
        // At d = 1 the edge-shared construction has the layout's mode counts.
        for x in [3u32, 6, 12] {
            let m = EdgeSharedModel { x, mu: 0.1, eta: 0.8 };
            let closed = m.closed_form_efficiency(1).unwrap();
            assert!((m.binned_efficiency(1) - closed).abs() < 1e-12);
            assert!(m.binned_efficiency(2) > m.binned_efficiency(1));
        }
    }
}
