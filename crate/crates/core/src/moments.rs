//! Second-order moments of a pair of photon counts and the figures of merit
//! built from them. Shared by the sample estimators, the closed-form
//! predictors and the exact-enumeration oracle.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairMoments {
    pub mean1: f64,
    pub mean2: f64,
    pub var1: f64,
    pub var2: f64,
    pub cov: f64,
}

impl PairMoments {
    pub fn mean(&self, channel: usize) -> f64 {
        if channel == 0 {
            self.mean1
        } else {
            self.mean2
        }
    }

    pub fn var(&self, channel: usize) -> f64 {
        if channel == 0 {
            self.var1
        } else {
            self.var2
        }
    }

    pub fn fano(&self, channel: usize) -> f64 {
        self.var(channel) / self.mean(channel)
    }

    /// ⟨:Δ²n:⟩ = Var − Mean.
    pub fn normally_ordered_var(&self, channel: usize) -> f64 {
        self.var(channel) - self.mean(channel)
    }

    pub fn difference_var(&self) -> f64 {
        self.var1 + self.var2 - 2.0 * self.cov
    }

    pub fn nrf(&self) -> f64 {
        self.difference_var() / (self.mean1 + self.mean2)
    }

    pub fn nrf_alpha(&self, alpha: f64) -> f64 {
        (self.var1 + alpha * alpha * self.var2 - 2.0 * alpha * self.cov)
            / (self.mean1 + alpha * self.mean2)
    }

    /// Cauchy-Schwarz ratio, or the offending channel and its normally
    /// ordered variance when a marginal is not super-Poissonian.
    pub fn cauchy_schwarz(&self) -> Result<f64, (usize, f64)> {
        for channel in 0..2 {
            let v = self.normally_ordered_var(channel);
            if v <= 0.0 {
                return Err((channel, v));
            }
        }
        Ok(self.cov / (self.normally_ordered_var(0) * self.normally_ordered_var(1)).sqrt())
    }

    pub fn swapped(&self) -> Self {
        Self {
            mean1: self.mean2,
            mean2: self.mean1,
            var1: self.var2,
            var2: self.var1,
            cov: self.cov,
        }
    }
}

/// Running sums for a paired series, exact for integer-valued samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairSums {
    pub n: f64,
    pub s1: f64,
    pub s2: f64,
    pub s11: f64,
    pub s22: f64,
    pub s12: f64,
}

impl PairSums {
    #[inline]
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.s1 += x;
        self.s2 += y;
        self.s11 += x * x;
        self.s22 += y * y;
        self.s12 += x * y;
    }

    pub fn from_pairs(x: &[f64], y: &[f64]) -> Self {
        let mut sums = Self::default();
        for (&a, &b) in x.iter().zip(y) {
            sums.push(a, b);
        }
        sums
    }

    pub fn merge(&mut self, other: &Self) {
        self.n += other.n;
        self.s1 += other.s1;
        self.s2 += other.s2;
        self.s11 += other.s11;
        self.s22 += other.s22;
        self.s12 += other.s12;
    }

    pub fn minus(&self, other: &Self) -> Self {
        Self {
            n: self.n - other.n,
            s1: self.s1 - other.s1,
            s2: self.s2 - other.s2,
            s11: self.s11 - other.s11,
            s22: self.s22 - other.s22,
            s12: self.s12 - other.s12,
        }
    }

    pub fn without(&self, x: f64, y: f64) -> Self {
        Self {
            n: self.n - 1.0,
            s1: self.s1 - x,
            s2: self.s2 - y,
            s11: self.s11 - x * x,
            s22: self.s22 - y * y,
            s12: self.s12 - x * y,
        }
    }

    /// Sample moments with unbiased (n − 1) variances and covariance.
    pub fn moments(&self) -> PairMoments {
        let n = self.n;
        let m1 = self.s1 / n;
        let m2 = self.s2 / n;
        let d = n - 1.0;
        PairMoments {
            mean1: m1,
            mean2: m2,
            var1: (self.s11 - self.s1 * m1) / d,
            var2: (self.s22 - self.s2 * m2) / d,
            cov: (self.s12 - self.s1 * m2) / d,
        }
    }
}

/// Power sums of a paired series sufficient for the mean and variance of the
/// centred products δn₁δn₂.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProductSums {
    pub n: f64,
    pub x: f64,
    pub y: f64,
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
    pub xxy: f64,
    pub xyy: f64,
    pub xxyy: f64,
}

impl ProductSums {
    #[inline]
    pub fn push(&mut self, a: u64, b: u64) {
        let (x, y) = (a as f64, b as f64);
        self.n += 1.0;
        self.x += x;
        self.y += y;
        self.xx += x * x;
        self.yy += y * y;
        self.xy += x * y;
        self.xxy += x * x * y;
        self.xyy += x * y * y;
        self.xxyy += x * x * y * y;
    }

    pub fn merge(&mut self, o: &Self) {
        self.n += o.n;
        self.x += o.x;
        self.y += o.y;
        self.xx += o.xx;
        self.yy += o.yy;
        self.xy += o.xy;
        self.xxy += o.xxy;
        self.xyy += o.xyy;
        self.xxyy += o.xxyy;
    }

    pub fn minus(&self, o: &Self) -> Self {
        Self {
            n: self.n - o.n,
            x: self.x - o.x,
            y: self.y - o.y,
            xx: self.xx - o.xx,
            yy: self.yy - o.yy,
            xy: self.xy - o.xy,
            xxy: self.xxy - o.xxy,
            xyy: self.xyy - o.xyy,
            xxyy: self.xxyy - o.xxyy,
        }
    }

    pub fn pair_moments(&self) -> PairMoments {
        PairSums {
            n: self.n,
            s1: self.x,
            s2: self.y,
            s11: self.xx,
            s22: self.yy,
            s12: self.xy,
        }
        .moments()
    }

    /// Unbiased covariance and the variance of single products δn₁δn₂.
    pub fn product_stats(&self) -> (f64, f64) {
        let n = self.n;
        let (a, b) = (self.x / n, self.y / n);
        let sum_p = self.xy - n * a * b;
        let sum_p2 = self.xxyy - 2.0 * b * self.xxy - 2.0 * a * self.xyy
            + b * b * self.xx
            + a * a * self.yy
            + 4.0 * a * b * self.xy
            - 2.0 * a * b * b * self.x
            - 2.0 * a * a * b * self.y
            + n * a * a * b * b;
        let mean_p = sum_p / n;
        (sum_p / (n - 1.0), (sum_p2 - n * mean_p * mean_p) / (n - 1.0))
    }
}
