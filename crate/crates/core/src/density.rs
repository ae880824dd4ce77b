//! Probability densities on the circle, sampled on a uniform periodic grid
//! and interpolated linearly between grid points.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonnegative samples `phi(i/G)`, `i = 0..G`, with `G` a power of two.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Density {
    samples: Vec<f64>,
}

/// Parameters of the local ratio cone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioClassParams {
    #[serde(rename = "L")]
    pub l: f64,
    pub eps_loc: f64,
}

impl RatioClassParams {
    pub fn new(l: f64, eps_loc: f64) -> Result<Self> {
        if !(l >= 0.0) {
            return Err(Error::Precondition(format!("L = {l} must be nonnegative")));
        }
        if !(eps_loc > 0.0 && eps_loc < 0.25) {
            return Err(Error::Precondition(format!("eps_loc = {eps_loc} must lie in (0, 1/4)")));
        }
        Ok(RatioClassParams { l, eps_loc })
    }

    /// Membership test against the sampled ratio condition.
    pub fn contains(&self, phi: &Density) -> bool {
        phi.ratio_class_l(self.eps_loc) <= self.l
    }
}

impl Density {
    /// Wraps raw samples. The integral is not adjusted; see [`normalized`](Self::normalized).
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        let g = samples.len();
        if g < 2 || !g.is_power_of_two() {
            return Err(Error::InvalidDensity(format!("resolution {g} is not a power of two >= 2")));
        }
        if let Some(bad) = samples.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidDensity(format!("sample {bad} is negative or not finite")));
        }
        Ok(Density { samples })
    }

    /// Samples `f` on the grid and normalizes.
    pub fn from_fn(g: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let samples = (0..g).map(|i| f(i as f64 / g as f64)).collect();
        Self::from_samples(samples)?.normalized()
    }

    pub fn uniform(g: usize) -> Result<Self> {
        Self::from_samples(vec![1.0; g])
    }

    pub fn resolution(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Periodic linear interpolation at `x`.
    #[inline]
    pub fn value_at(&self, x: f64) -> f64 {
        let g = self.samples.len();
        let t = x.rem_euclid(1.0) * g as f64;
        let i = t.floor();
        let frac = t - i;
        let i = (i as usize) % g;
        let j = (i + 1) % g;
        self.samples[i] + frac * (self.samples[j] - self.samples[i])
    }

    /// Trapezoidal integral over the circle.
    pub fn integral(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn normalized(mut self) -> Result<Self> {
        let total = self.integral();
        if !(total > 0.0) {
            return Err(Error::NonPositiveIntegral(total));
        }
        for v in &mut self.samples {
            *v /= total;
        }
        Ok(self)
    }

    fn check_same_grid(&self, other: &Density) -> Result<()> {
        if self.resolution() != other.resolution() {
            return Err(Error::ResolutionMismatch {
                left: self.resolution(),
                right: other.resolution(),
            });
        }
        Ok(())
    }

    /// Trapezoidal integral of `|phi - psi|`.
    pub fn l1_distance(&self, other: &Density) -> Result<f64> {
        self.check_same_grid(other)?;
        let s: f64 = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(s / self.resolution() as f64)
    }

    /// Total variation of the periodic piecewise-linear interpolant.
    pub fn variation(&self) -> f64 {
        let g = self.samples.len();
        (0..g)
            .map(|i| (self.samples[(i + 1) % g] - self.samples[i]).abs())
            .sum()
    }

    pub fn min_value(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest `L` for which `|phi(x)/phi(y) - 1| <= L d(x, y)` holds for all
    /// grid pairs at circular distance below `eps_loc`. Infinite when any
    /// sample vanishes.
    pub fn ratio_class_l(&self, eps_loc: f64) -> f64 {
        let g = self.samples.len();
        if self.samples.iter().any(|&v| v <= 0.0) {
            return f64::INFINITY;
        }
        let max_k = ((eps_loc * g as f64).ceil() as usize).saturating_sub(1).min(g / 2);
        let mut worst: f64 = 0.0;
        for k in 1..=max_k {
            let d = k as f64 / g as f64;
            if d >= eps_loc {
                break;
            }
            for i in 0..g {
                let a = self.samples[i];
                let b = self.samples[(i + k) % g];
                let r = (a / b - 1.0).abs().max((b / a - 1.0).abs());
                worst = worst.max(r / d);
            }
        }
        worst
    }

    /// `(phi - fraction*kappa) / (1 - fraction*kappa)`.
    pub fn match_subtract(&self, kappa: f64, fraction: f64) -> Result<Density> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Precondition(format!("fraction {fraction} outside (0, 1]")));
        }
        let c = fraction * kappa;
        if !(c > 0.0) {
            return Err(Error::Precondition(format!("subtracted amount {c} must be positive")));
        }
        let min = self.min_value();
        if c > min || c >= 1.0 {
            return Err(Error::OverSubtraction { amount: c, min });
        }
        let scale = 1.0 / (1.0 - c);
        let samples = self.samples.iter().map(|v| ((v - c) * scale).max(0.0)).collect();
        Ok(Density { samples })
    }

    /// Exact integrals of the interpolant over `bins` equal bins. `bins`
    /// must divide the resolution.
    pub fn bin_masses(&self, bins: usize) -> Result<Vec<f64>> {
        let g = self.resolution();
        if bins == 0 || !g.is_multiple_of(bins) {
            return Err(Error::Precondition(format!("{bins} bins do not divide resolution {g}")));
        }
        let per = g / bins;
        let h = 1.0 / g as f64;
        Ok((0..bins)
            .map(|b| {
                let start = b * per;
                let mut s = 0.5 * (self.samples[start] + self.samples[(start + per) % g]);
                for k in 1..per {
                    s += self.samples[start + k];
                }
                s * h
            })
            .collect())
    }

    /// Two-column CSV (`x,value`) with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let g = self.resolution();
        let mut out = String::with_capacity(g * 48);
        out.push_str("x,value\n");
        for (i, v) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{:.16e},{:.16e}", i as f64 / g as f64, v);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with('x')) {
                continue;
            }
            let value = line
                .split(',')
                .nth(1)
                .ok_or_else(|| Error::InvalidDensity(format!("line {}: missing value column", n + 1)))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|e| Error::InvalidDensity(format!("line {}: {e}", n + 1)))?;
            samples.push(v);
        }
        Self::from_samples(samples)
    }
}
