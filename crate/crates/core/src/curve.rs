//! Continuous one-parameter families of circle maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::PiecewiseMap;

/// Built-in families, all on the fixed two-branch partition `{[0,1/2), [1/2,1)}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum CurveFamily {
    /// `x -> (base + rate*t) x mod 1`
    Slope { base: f64, rate: f64 },
    /// `x -> slope*x + rate*t*sin(2 pi x) mod 1`
    SineAmplitude { slope: f64, rate: f64 },
}

/// A path `t -> gamma(t)` over the parameter interval `[a, b]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapCurve {
    pub a: f64,
    pub b: f64,
    #[serde(flatten)]
    pub family: CurveFamily,
}

impl MapCurve {
    pub fn new(a: f64, b: f64, family: CurveFamily) -> Result<Self> {
        if !(a < b) {
            return Err(Error::Config(format!("curve interval [{a}, {b}] is empty")));
        }
        Ok(MapCurve { a, b, family })
    }

    pub fn at(&self, t: f64) -> Result<PiecewiseMap> {
        let t = t.clamp(self.a, self.b);
        match self.family {
            CurveFamily::Slope { base, rate } => PiecewiseMap::equal_branches(2, base + rate * t, 0.0),
            CurveFamily::SineAmplitude { slope, rate } => PiecewiseMap::equal_branches(2, slope, rate * t),
        }
    }

    pub fn len(&self) -> f64 {
        self.b - self.a
    }

    /// `n + 1` evenly spaced parameters including both endpoints.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        let n = n.max(1);
        (0..=n).map(|i| self.a + (self.b - self.a) * i as f64 / n as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_family_samples() {
        let c = MapCurve::new(0.0, 1.0, CurveFamily::Slope { base: 2.5, rate: 1.0 }).unwrap();
        let slopes: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&t| c.at(t).unwrap().branches()[0].form.slope())
            .collect();
        assert_eq!(slopes, vec![2.5, 2.75, 3.0, 3.25, 3.5]);
        assert_eq!(c.at(0.3).unwrap().marked_points(), vec![0.0, 0.5]);
    }
}
