//! Sample estimators of the non-classicality figures of merit. Each returns a
//! value, a standard error and an optional analytic prediction.
//!
//! Per-series estimators use the delete-one jackknife over frames. Pooled
//! multi-pixel estimators use a block jackknife over groups of frames.

use serde::Serialize;
use thiserror::Error;

use crate::moments::{PairMoments, PairSums};

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
pub enum EstimatorError {
    #[error("series lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("mean is zero; the ratio is undefined")]
    UndefinedMean,
    #[error("reference channel mean is zero")]
    ZeroReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Fano,
    MandelQ,
    Nrf,
    NrfAlpha,
    CauchySchwarz,
    Covariance,
    Snr,
    SnrRatio,
    Efficiency,
    AbsorptionUncertainty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateReport {
    pub name: EstimatorKind,
    pub value: f64,
    pub standard_error: f64,
    pub analytic_prediction: Option<f64>,
    pub sample_size: usize,
}

impl EstimateReport {
    pub fn new(name: EstimatorKind, value: f64, standard_error: f64, sample_size: usize) -> Self {
        Self { name, value, standard_error, analytic_prediction: None, sample_size }
    }

    pub fn with_prediction(mut self, prediction: f64) -> Self {
        self.analytic_prediction = Some(prediction);
        self
    }

    /// (value − prediction) / standard_error.
    pub fn z_score(&self) -> Option<f64> {
        self.analytic_prediction.map(|p| (self.value - p) / self.standard_error)
    }

    pub fn within_se(&self, k: f64) -> bool {
        self.analytic_prediction
            .is_some_and(|p| (self.value - p).abs() <= k * self.standard_error)
    }

    pub fn relative_error(&self) -> Option<f64> {
        self.analytic_prediction.map(|p| (self.value - p).abs() / p.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSeries {
    pub values: Vec<f64>,
    pub channel: String,
    pub pixel: Option<usize>,
}

impl SampleSeries {
    pub fn new(values: Vec<f64>, channel: impl Into<String>) -> Self {
        Self { values, channel: channel.into(), pixel: None }
    }

    pub fn from_counts(values: &[u64], channel: impl Into<String>) -> Self {
        Self::new(values.iter().map(|&v| v as f64).collect(), channel)
    }

    pub fn at_pixel(mut self, pixel: usize) -> Self {
        self.pixel = Some(pixel);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Outcome of the Cauchy-Schwarz estimator. A sub-Poissonian marginal is a
/// physical state, not a failure, so it is reported as a value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CauchySchwarz {
    Defined(EstimateReport),
    SubPoissonianMarginal { channel: usize, normally_ordered_variance: f64 },
}

impl CauchySchwarz {
    pub fn report(&self) -> Option<&EstimateReport> {
        match self {
            Self::Defined(r) => Some(r),
            Self::SubPoissonianMarginal { .. } => None,
        }
    }
}

fn check_pair(s1: &SampleSeries, s2: &SampleSeries) -> Result<(), EstimatorError> {
    if s1.len() != s2.len() {
        return Err(EstimatorError::LengthMismatch { left: s1.len(), right: s2.len() });
    }
    if s1.len() < 3 {
        return Err(EstimatorError::TooShort { needed: 3, got: s1.len() });
    }
    Ok(())
}

/// Delete-one jackknife standard error of a statistic of pair sums.
pub fn jackknife_se<F>(x: &[f64], y: &[f64], stat: F) -> f64
where
    F: Fn(&PairSums) -> f64,
{
    let total = PairSums::from_pairs(x, y);
    let k = x.len() as f64;
    let replicates: Vec<f64> = x.iter().zip(y).map(|(&a, &b)| stat(&total.without(a, b))).collect();
    spread(&replicates, k)
}

fn spread(replicates: &[f64], k: f64) -> f64 {
    let mean = replicates.iter().sum::<f64>() / k;
    let ss: f64 = replicates.iter().map(|r| (r - mean).powi(2)).sum();
    ((k - 1.0) / k * ss).sqrt()
}

fn paired(s1: &SampleSeries, s2: &SampleSeries) -> Result<PairSums, EstimatorError> {
    check_pair(s1, s2)?;
    Ok(PairSums::from_pairs(&s1.values, &s2.values))
}

pub fn fano(s: &SampleSeries) -> Result<EstimateReport, EstimatorError> {
    if s.len() < 3 {
        return Err(EstimatorError::TooShort { needed: 3, got: s.len() });
    }
    let sums = PairSums::from_pairs(&s.values, &s.values);
    if sums.s1 <= 0.0 {
        return Err(EstimatorError::UndefinedMean);
    }
    let stat = |p: &PairSums| p.moments().fano(0);
    let se = jackknife_se(&s.values, &s.values, stat);
    Ok(EstimateReport::new(EstimatorKind::Fano, stat(&sums), se, s.len()))
}

pub fn mandel_q(s: &SampleSeries) -> Result<EstimateReport, EstimatorError> {
    let f = fano(s)?;
    Ok(EstimateReport { name: EstimatorKind::MandelQ, value: f.value - 1.0, ..f })
}

pub fn nrf(s1: &SampleSeries, s2: &SampleSeries) -> Result<EstimateReport, EstimatorError> {
    let sums = paired(s1, s2)?;
    if sums.s1 + sums.s2 <= 0.0 {
        return Err(EstimatorError::UndefinedMean);
    }
    let stat = |p: &PairSums| p.moments().nrf();
    let se = jackknife_se(&s1.values, &s2.values, stat);
    Ok(EstimateReport::new(EstimatorKind::Nrf, stat(&sums), se, s1.len()))
}

/// σ_α with α = mean(s1)/mean(s2) from the same data unless supplied.
pub fn nrf_alpha(
    s1: &SampleSeries,
    s2: &SampleSeries,
    alpha: Option<f64>,
) -> Result<(EstimateReport, f64), EstimatorError> {
    let sums = paired(s1, s2)?;
    if sums.s2 <= 0.0 {
        return Err(EstimatorError::ZeroReference);
    }
    let stat = |p: &PairSums| {
        let m = p.moments();
        m.nrf_alpha(alpha.unwrap_or(m.mean1 / m.mean2))
    };
    let se = jackknife_se(&s1.values, &s2.values, stat);
    let a = alpha.unwrap_or(sums.s1 / sums.s2);
    Ok((EstimateReport::new(EstimatorKind::NrfAlpha, stat(&sums), se, s1.len()), a))
}

pub fn cauchy_schwarz(s1: &SampleSeries, s2: &SampleSeries) -> Result<CauchySchwarz, EstimatorError> {
    let sums = paired(s1, s2)?;
    match sums.moments().cauchy_schwarz() {
        Err((channel, v)) => {
            Ok(CauchySchwarz::SubPoissonianMarginal { channel, normally_ordered_variance: v })
        }
        Ok(value) => {
            let stat = |p: &PairSums| {
                let m = p.moments();
                m.cov / (m.normally_ordered_var(0) * m.normally_ordered_var(1)).abs().sqrt()
            };
            let se = jackknife_se(&s1.values, &s2.values, stat);
            Ok(CauchySchwarz::Defined(EstimateReport::new(
                EstimatorKind::CauchySchwarz,
                value,
                se,
                s1.len(),
            )))
        }
    }
}

/// Unbiased sample covariance with standard error √(Var(δn₁δn₂)/K).
pub fn covariance(s1: &SampleSeries, s2: &SampleSeries) -> Result<EstimateReport, EstimatorError> {
    if s1.len() != s2.len() {
        return Err(EstimatorError::LengthMismatch { left: s1.len(), right: s2.len() });
    }
    if s1.len() < 2 {
        return Err(EstimatorError::TooShort { needed: 2, got: s1.len() });
    }
    let sums = PairSums::from_pairs(&s1.values, &s2.values);
    let m = sums.moments();
    let k = s1.len() as f64;
    let products: Vec<f64> = s1
        .values
        .iter()
        .zip(&s2.values)
        .map(|(a, b)| (a - m.mean1) * (b - m.mean2))
        .collect();
    let pm = products.iter().sum::<f64>() / k;
    let pv = products.iter().map(|p| (p - pm).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(EstimateReport::new(EstimatorKind::Covariance, m.cov, (pv / k).sqrt(), s1.len()))
}

/// Per-pixel pair sums split into frame blocks for block-jackknife errors
/// of pooled multi-pixel estimators.
#[derive(Debug, Clone)]
pub struct PooledPairs {
    pub pixels: usize,
    /// `blocks[b][p]`
    pub blocks: Vec<Vec<PairSums>>,
}

impl PooledPairs {
    pub fn new(pixels: usize, blocks: usize) -> Self {
        Self { pixels, blocks: vec![vec![PairSums::default(); pixels]; blocks.max(2)] }
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Block index for frame `f` of `k` (contiguous groups).
    pub fn block_of(&self, frame: usize, k: usize) -> usize {
        frame * self.blocks.len() / k.max(1)
    }

    pub fn push_frame(&mut self, block: usize, x: &[f64], y: &[f64]) {
        for ((s, &a), &b) in self.blocks[block].iter_mut().zip(x).zip(y) {
            s.push(a, b);
        }
    }

    pub fn totals(&self) -> Vec<PairSums> {
        let mut totals = vec![PairSums::default(); self.pixels];
        for block in &self.blocks {
            for (t, s) in totals.iter_mut().zip(block) {
                t.merge(s);
            }
        }
        totals
    }

    pub fn frames(&self) -> usize {
        self.blocks.iter().map(|b| b.first().map_or(0.0, |s| s.n)).sum::<f64>() as usize
    }

    /// Value of a pooled statistic with its block-jackknife standard error.
    pub fn estimate<F>(&self, stat: F) -> (f64, f64)
    where
        F: Fn(&[PairSums]) -> f64,
    {
        let totals = self.totals();
        let value = stat(&totals);
        let replicates: Vec<f64> = self
            .blocks
            .iter()
            .map(|block| {
                let rest: Vec<PairSums> = totals.iter().zip(block).map(|(t, s)| t.minus(s)).collect();
                stat(&rest)
            })
            .collect();
        (value, spread(&replicates, replicates.len() as f64))
    }
}

/// Σ_p Var_p(n₁ − n₂) / Σ_p (⟨n₁⟩ + ⟨n₂⟩).
pub fn pooled_nrf(pixels: &[PairSums]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for p in pixels {
        let m = p.moments();
        num += m.difference_var();
        den += m.mean1 + m.mean2;
    }
    num / den
}

/// Pooled σ_α with a single plug-in α = Σ⟨n₁⟩/Σ⟨n₂⟩.
pub fn pooled_nrf_alpha(pixels: &[PairSums]) -> (f64, f64) {
    let moments: Vec<PairMoments> = pixels.iter().map(|p| p.moments()).collect();
    let alpha = moments.iter().map(|m| m.mean1).sum::<f64>() / moments.iter().map(|m| m.mean2).sum::<f64>();
    let (mut num, mut den) = (0.0, 0.0);
    for m in &moments {
        num += m.var1 + alpha * alpha * m.var2 - 2.0 * alpha * m.cov;
        den += m.mean1 + alpha * m.mean2;
    }
    (num / den, alpha)
}
