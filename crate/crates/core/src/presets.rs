//! Named initial densities.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::rng::LabRng;

/// Initial density presets accepted by scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum DensitySpec {
    Uniform,
    /// `1 + amplitude * sin(2 pi k x)`
    Sine { k: u32, amplitude: f64 },
    /// Piecewise constant with equal-length pieces.
    Step { levels: Vec<f64> },
    /// Random bounded-variation density with variation at most `a`.
    RandomBv { a: f64 },
    /// `1 + amplitude * sin(2 pi k x)` plus `steps` random jumps of size
    /// at most `jump`.
    SineNoise {
        k: u32,
        amplitude: f64,
        steps: u32,
        jump: f64,
    },
}

impl DensitySpec {
    pub fn build(&self, g: usize, rng: &mut LabRng) -> Result<Density> {
        match self {
            DensitySpec::Uniform => Density::uniform(g),
            DensitySpec::Sine { k, amplitude } => {
                let k = *k as f64;
                Density::from_fn(g, |x| 1.0 + amplitude * (TAU * k * x).sin())
            }
            DensitySpec::Step { levels } => {
                if levels.is_empty() {
                    return Err(Error::Config("step preset needs at least one level".into()));
                }
                let n = levels.len();
                Density::from_fn(g, |x| levels[((x * n as f64) as usize).min(n - 1)])
            }
            DensitySpec::RandomBv { a } => random_bv(g, *a, rng),
            DensitySpec::SineNoise {
                k,
                amplitude,
                steps,
                jump,
            } => {
                let k = *k as f64;
                let cuts: Vec<(f64, f64)> = (0..*steps)
                    .map(|_| (rng.unit(), rng.uniform(-jump, *jump)))
                    .collect();
                Density::from_fn(g, |x| {
                    let noise: f64 = cuts.iter().filter(|(c, _)| x >= *c).map(|(_, h)| h).sum();
                    (1.0 + amplitude * (TAU * k * x).sin() + noise).max(0.0)
                })
            }
        }
    }
}

/// A random nonnegative step function with a low-frequency ripple, mixed
/// with the uniform density so that its variation is at most `a`.
pub fn random_bv(g: usize, a: f64, rng: &mut LabRng) -> Result<Density> {
    if !(a > 0.0) {
        return Err(Error::Precondition(format!("variation bound {a} must be positive")));
    }
    let jumps = 2 + rng.below((2.0 * a).ceil() as u64 + 1) as usize;
    let mut cuts: Vec<f64> = (0..jumps).map(|_| rng.unit()).collect();
    cuts.sort_by(f64::total_cmp);
    let levels: Vec<f64> = (0..=jumps).map(|_| rng.uniform(0.05, 1.0)).collect();
    let ripple = rng.uniform(0.0, 0.04);
    let mode = 1.0 + rng.below(4) as f64;
    let phase = rng.uniform(0.0, TAU);
    let raw = Density::from_fn(g, |x| {
        let piece = cuts.partition_point(|&c| c <= x);
        levels[piece] + ripple * (TAU * mode * x + phase).sin()
    })?;
    let target = a * rng.uniform(0.3, 1.0);
    let v = raw.variation();
    if v <= target {
        return Ok(raw);
    }
    let t = target / v;
    let samples = raw.samples().iter().map(|s| t * s + (1.0 - t)).collect();
    Density::from_samples(samples)?.normalized()
}
