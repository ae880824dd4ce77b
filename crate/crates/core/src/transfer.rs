//! Transfer operators `P_f` acting on grid densities.
//!
//! The primary backend pulls every grid point back through the inverse
//! branches and sums `phi(x)/|f'(x)|` with `phi` linearly interpolated. The
//! Ulam backend is an independent column-stochastic discretization used to
//! cross-check it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::map::PiecewiseMap;

/// Result of one application of `P_f`.
#[derive(Clone, Debug)]
pub struct Pushed {
    pub density: Density,
    /// Trapezoidal integral before renormalization.
    pub renorm_factor: f64,
}

/// Unnormalized pointwise pullback sum at every grid point.
fn pullback(map: &PiecewiseMap, phi: &Density) -> Result<Vec<f64>> {
    let g = phi.resolution();
    (0..g)
        .into_par_iter()
        .map(|i| {
            let y = i as f64 / g as f64;
            let mut acc = 0.0;
            map.for_each_preimage(y, |p| acc += phi.value_at(p.x) / p.deriv)?;
            Ok(acc)
        })
        .collect()
}

/// Applies `P_f` and renormalizes to unit integral, recording the factor.
pub fn push_recorded(map: &PiecewiseMap, phi: &Density) -> Result<Pushed> {
    let samples = pullback(map, phi)?;
    let factor = samples.iter().sum::<f64>() / samples.len() as f64;
    if !(0.5..=2.0).contains(&factor) {
        return Err(Error::Renormalization(factor));
    }
    let samples = samples.into_iter().map(|v| v / factor).collect();
    Ok(Pushed {
        density: Density::from_samples(samples)?,
        renorm_factor: factor,
    })
}

pub fn push(map: &PiecewiseMap, phi: &Density) -> Result<Density> {
    push_recorded(map, phi).map(|p| p.density)
}

/// `P_{F_k}(phi)` for `k = 1..=maps.len()`.
pub fn push_sequence(maps: &[PiecewiseMap], phi: &Density) -> Result<Vec<Density>> {
    let mut out = Vec::with_capacity(maps.len());
    let mut cur = phi.clone();
    for m in maps {
        cur = push(m, &cur)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// Dense column-stochastic Ulam matrix; entry `(i, j)` is the fraction of
/// bin `j` that lands in bin `i`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UlamMatrix {
    bins: usize,
    /// Row-major `bins x bins`.
    entries: Vec<f64>,
}

impl UlamMatrix {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.bins + j]
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        (0..self.bins).map(|i| self.entry(i, j)).sum()
    }

    /// Matrix-vector product on bin masses.
    pub fn push(&self, masses: &[f64]) -> Vec<f64> {
        assert_eq!(masses.len(), self.bins, "mass vector length");
        self.entries
            .par_chunks(self.bins)
            .map(|row| row.iter().zip(masses).map(|(u, m)| u * m).sum())
            .collect()
    }
}

/// Entries are exact Lebesgue fractions: each bin is split at the preimages
/// of the target bin edges under every branch.
pub fn ulam_matrix(map: &PiecewiseMap, bins: usize) -> Result<UlamMatrix> {
    if bins < 2 {
        return Err(Error::Precondition(format!("Ulam matrix needs at least 2 bins, got {bins}")));
    }
    let bf = bins as f64;
    let mut entries = vec![0.0; bins * bins];
    for j in 0..bins {
        let (a, b) = (j as f64 / bf, (j + 1) as f64 / bf);
        for (bi, br) in map.branches().iter().enumerate() {
            let (p, q) = (a.max(br.lo), b.min(br.hi));
            if q <= p {
                continue;
            }
            if br.is_affine() {
                let slope = br.form.slope();
                let (start, end) = (br.lift(p), br.lift(q));
                let k0 = (start * bf).floor() as i64;
                let k1 = (end * bf).ceil() as i64;
                for k in k0..k1 {
                    let lo = start.max(k as f64 / bf);
                    let hi = end.min((k + 1) as f64 / bf);
                    if hi > lo {
                        let i = k.rem_euclid(bins as i64) as usize;
                        entries[i * bins + j] += (hi - lo) / slope * bf;
                    }
                }
            } else {
                // split [p, q) at the preimages of the target bin edges
                let (start, end) = (br.lift(p), br.lift(q));
                let k0 = (start * bf).floor() as i64;
                let k1 = (end * bf).ceil() as i64;
                let mut x_lo = p;
                for k in k0..k1 {
                    let edge = (k + 1) as f64 / bf;
                    let x_hi = if edge >= end {
                        q
                    } else {
                        br.inverse_lift(edge)
                            .ok_or(Error::RootFinding { branch: bi, y: edge })?
                            .clamp(x_lo, q)
                    };
                    if x_hi > x_lo {
                        let i = k.rem_euclid(bins as i64) as usize;
                        entries[i * bins + j] += (x_hi - x_lo) * bf;
                    }
                    x_lo = x_hi;
                }
            }
        }
    }
    let u = UlamMatrix { bins, entries };
    for j in 0..bins {
        let s = u.column_sum(j);
        if (s - 1.0).abs() > 1e-8 {
            return Err(Error::UlamColumn { column: j, sum: s });
        }
    }
    Ok(u)
}

/// L¹ distance between the bin-averaged pullback push and the Ulam push
/// of the bin-averaged density.
pub fn backend_consistency(map: &PiecewiseMap, phi: &Density, bins: usize) -> Result<f64> {
    let direct = push(map, phi)?.bin_masses(bins)?;
    let u = ulam_matrix(map, bins)?;
    let via_ulam = u.push(&phi.bin_masses(bins)?);
    Ok(direct.iter().zip(&via_ulam).map(|(a, b)| (a - b).abs()).sum())
}
