//! Exact truncated joint pmfs of detected photon pairs, built by direct
//! enumeration. Used as an oracle for the estimators and the moment algebra.

use crate::moments::PairMoments;
use crate::photon::{thermal_pmf, SourceKind, SourceSpec};

/// Joint pmf P(n₁, n₂) on {0..=n_max}².
#[derive(Debug, Clone)]
pub struct JointPmf {
    pub n_max: usize,
    p: Vec<f64>,
}

impl JointPmf {
    fn zeros(n_max: usize) -> Self {
        Self { n_max, p: vec![0.0; (n_max + 1) * (n_max + 1)] }
    }

    pub fn get(&self, n1: usize, n2: usize) -> f64 {
        self.p[n1 * (self.n_max + 1) + n2]
    }

    fn add(&mut self, n1: usize, n2: usize, w: f64) {
        self.p[n1 * (self.n_max + 1) + n2] += w;
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn moments(&self) -> PairMoments {
        let size = self.n_max + 1;
        let (mut s0, mut s1, mut s2, mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for a in 0..size {
            for b in 0..size {
                let w = self.p[a * size + b];
                let (x, y) = (a as f64, b as f64);
                s0 += w;
                s1 += w * x;
                s2 += w * y;
                s11 += w * x * x;
                s22 += w * y * y;
                s12 += w * x * y;
            }
        }
        let (m1, m2) = (s1 / s0, s2 / s0);
        PairMoments {
            mean1: m1,
            mean2: m2,
            var1: s11 / s0 - m1 * m1,
            var2: s22 / s0 - m2 * m2,
            cov: s12 / s0 - m1 * m2,
        }
    }
}

fn ln_factorials(n_max: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_max + 1];
    for k in 1..=n_max {
        out[k] = out[k - 1] + (k as f64).ln();
    }
    out
}

fn binomial_pmf(lf: &[f64], n: usize, k: usize, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return (k == 0) as u8 as f64;
    }
    if p >= 1.0 {
        return (k == n) as u8 as f64;
    }
    (lf[n] - lf[k] - lf[n - k] + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
}

/// pmf of the photon number summed over `modes` thermal modes, by repeated
/// convolution of the single-mode pmf (exact on {0..=n_max}).
pub fn multimode_thermal_pmf(mu: f64, modes: u32, n_max: usize) -> Vec<f64> {
    let single: Vec<f64> = (0..=n_max).map(|n| thermal_pmf(mu, n as u64).unwrap_or(0.0)).collect();
    let mut acc = vec![0.0; n_max + 1];
    acc[0] = 1.0;
    for _ in 0..modes {
        let mut next = vec![0.0; n_max + 1];
        for (i, &a) in acc.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in single.iter().enumerate().take(n_max + 1 - i) {
                next[i + j] += a * b;
            }
        }
        acc = next;
    }
    acc
}

fn poisson_pmf(lambda: f64, n_max: usize, lf: &[f64]) -> Vec<f64> {
    (0..=n_max)
        .map(|k| {
            if lambda == 0.0 {
                (k == 0) as u8 as f64
            } else {
                (k as f64 * lambda.ln() - lambda - lf[k]).exp()
            }
        })
        .collect()
}

/// Exact detected joint pmf of one pixel pair of `source` after arm
/// efficiencies η₁, η₂, truncated at `n_max` photons per arm.
pub fn detected_joint_pmf(source: &SourceSpec, eta1: f64, eta2: f64, n_max: usize) -> JointPmf {
    let lf = ln_factorials(n_max);
    let mut joint = JointPmf::zeros(n_max);
    let mu = source.mu.value();
    match source.kind {
        SourceKind::TwinBeam => {
            let pn = multimode_thermal_pmf(mu, source.modes_per_pixel, n_max);
            for (n, &w) in pn.iter().enumerate() {
                for a in 0..=n {
                    let wa = w * binomial_pmf(&lf, n, a, eta1);
                    for b in 0..=n {
                        joint.add(a, b, wa * binomial_pmf(&lf, n, b, eta2));
                    }
                }
            }
        }
        SourceKind::SplitThermal => {
            // Each parent photon is detected in arm 1, detected in arm 2 or
            // lost: a trinomial split.
            let p1 = source.splitter_tau * eta1;
            let p2 = (1.0 - source.splitter_tau) * eta2;
            let p0 = 1.0 - p1 - p2;
            let pn = multimode_thermal_pmf(mu, source.modes_per_pixel, n_max);
            for (n, &w) in pn.iter().enumerate() {
                for a in 0..=n {
                    for b in 0..=(n - a) {
                        let lost = n - a - b;
                        let ln = lf[n] - lf[a] - lf[b] - lf[lost];
                        let t = term(a, p1) + term(b, p2) + term(lost, p0);
                        joint.add(a, b, w * (ln + t).exp());
                    }
                }
            }
        }
        SourceKind::Coherent => {
            let m = source.modes_per_pixel as f64;
            let pa = poisson_pmf(eta1 * mu * m, n_max, &lf);
            let pb = poisson_pmf(eta2 * mu * m, n_max, &lf);
            for (a, &wa) in pa.iter().enumerate() {
                for (b, &wb) in pb.iter().enumerate() {
                    joint.add(a, b, wa * wb);
                }
            }
        }
    }
    joint
}

fn term(k: usize, p: f64) -> f64 {
    if k == 0 {
        0.0
    } else if p <= 0.0 {
        f64::NEG_INFINITY
    } else {
        k as f64 * p.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pmfs_are_normalized() {
        for source in [
            SourceSpec::twin_beam(1.0, 3).unwrap(),
            SourceSpec::split_thermal(1.0, 2, 0.3).unwrap(),
            SourceSpec::coherent(1.0, 2).unwrap(),
        ] {
            let j = detected_joint_pmf(&source, 0.7, 0.4, 80);
            assert!((j.total() - 1.0).abs() < 1e-12, "{source:?}: {}", j.total());
        }
    }

    #[test]
    fn multimode_convolution_matches_negative_binomial() {
        // Sum of M geometric laws: C(n+M−1, n) μⁿ/(1+μ)^(n+M).
        let (mu, m) = (0.4f64, 3u32);
        let pn = multimode_thermal_pmf(mu, m, 30);
        for (n, &p) in pn.iter().enumerate().take(10) {
            let c = ((n + 1) * (n + 2)) as f64 / 2.0;
            let expect = c * mu.powi(n as i32) / (1.0 + mu).powi(n as i32 + 3);
            assert!((p - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn twin_beam_without_loss_is_diagonal() {
        let j = detected_joint_pmf(&SourceSpec::twin_beam(0.5, 1).unwrap(), 1.0, 1.0, 40);
        assert_eq!(j.get(3, 2), 0.0);
        assert!(j.get(2, 2) > 0.0);
    }
}
