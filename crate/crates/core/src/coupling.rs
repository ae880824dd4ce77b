//! The matching scheme run on pairs of grid densities.
//!
//! Two copies of each density are evolved: the raw pair, which is never
//! decomposed and gives the ground-truth distance, and the unmatched pair,
//! from which the positivity floor is subtracted at every block end.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundsReport, CurveMesh, Mode};
use crate::density::Density;
use crate::error::{Error, Result};
use crate::map::PiecewiseMap;
use crate::transfer::push;

/// Distances at or below this are treated as numerically zero.
pub const FIT_FLOOR: f64 = 1e-12;
/// Minimum number of usable points for a decay fit.
pub const FIT_MIN_POINTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KappaMode {
    #[default]
    Theoretical,
    Empirical,
}

/// How block lengths and floors are chosen.
#[derive(Clone, Debug, Default)]
pub enum Schedule {
    /// Every block uses `bounds.block` and `bounds.kappa`.
    #[default]
    Fixed,
    /// Each block uses the probe whose half interval contains the curve
    /// parameter of the first map of the block; `times[i]` belongs to `maps[i]`.
    Curve { mesh: CurveMesh, times: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct CouplingOptions {
    pub kappa_mode: KappaMode,
    pub matching: bool,
    /// Locality scale of the smooth-mode cone checks.
    pub eps_loc: f64,
    pub schedule: Schedule,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        CouplingOptions { kappa_mode: KappaMode::Theoretical, matching: true, eps_loc: 0.05, schedule: Schedule::Fixed }
    }
}

/// One CSV row; density statistics refer to the unmatched pair before any
/// subtraction at step `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub n: usize,
    pub l1_distance: f64,
    pub variation_phi: f64,
    pub variation_psi: f64,
    pub min_phi: f64,
    pub min_psi: f64,
    /// `-1` during the waiting period.
    pub block_index: i64,
    pub kappa_used: f64,
    pub residual_mass: f64,
    pub envelope_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub index: usize,
    /// Step at which the block ends and the subtraction happens.
    pub n: usize,
    pub len: usize,
    pub kappa: f64,
    pub fraction: f64,
    pub matched_mass: f64,
    pub residual_mass: f64,
    pub raw_l1: f64,
    pub min_phi: f64,
    pub min_psi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingLedger {
    pub mode: Mode,
    /// Nominal block length.
    pub block: usize,
    pub kappa_mode: KappaMode,
    pub matching: bool,
    /// Grid slack added to positivity and envelope checks.
    pub slack: f64,
    /// Theoretical waiting time.
    pub tau: usize,
    /// Step at which both densities were observed inside the cone.
    pub n_wait: Option<usize>,
    /// Raw distance at the end of the waiting period.
    pub prefactor: Option<f64>,
    pub rows: Vec<LedgerRow>,
    pub blocks: Vec<BlockRecord>,
    /// Cone membership checks that failed, in order.
    pub cone_failures: Vec<String>,
    /// Positivity failure that aborted the run.
    pub violation: Option<String>,
}

impl CouplingLedger {
    pub fn distances(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.l1_distance).collect()
    }

    pub fn residual(&self) -> f64 {
        self.blocks.last().map_or(1.0, |b| b.residual_mass)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "n,l1_distance,variation_phi,variation_psi,min_phi,min_psi,block_index,kappa_used,residual_mass,envelope_value\n",
        );
        for r in &self.rows {
            writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e},{},{:e},{:e},{:e}",
                r.n,
                r.l1_distance,
                r.variation_phi,
                r.variation_psi,
                r.min_phi,
                r.min_psi,
                r.block_index,
                r.kappa_used,
                r.residual_mass,
                r.envelope_value
            )
            .expect("writing to a String cannot fail");
        }
        s
    }
}

/// Grid slack `20 * level / G`, with `level` the cone level of the mode.
pub fn grid_slack(bounds: &BoundsReport, g: usize) -> f64 {
    20.0 * bounds.a_star.unwrap_or(bounds.L_star) / g as f64
}

struct Pair {
    phi: Density,
    psi: Density,
}

impl Pair {
    fn step(&mut self, f: &PiecewiseMap) -> Result<()> {
        self.phi = push(f, &self.phi)?;
        self.psi = push(f, &self.psi)?;
        Ok(())
    }
}

fn in_cone(bounds: &BoundsReport, d: &Density, level: f64, eps_loc: f64, slack: f64) -> bool {
    match bounds.mode {
        Mode::Piecewise => d.variation() <= level + slack,
        Mode::Smooth => d.ratio_class_l(eps_loc) <= level * (1.0 + 1e-9),
    }
}

/// Runs the matching scheme for `maps.len()` steps.
pub fn run_coupled(
    maps: &[PiecewiseMap],
    phi: &Density,
    psi: &Density,
    bounds: &BoundsReport,
    opts: &CouplingOptions,
) -> Result<CouplingLedger> {
    let g = phi.resolution();
    if psi.resolution() != g {
        return Err(Error::ResolutionMismatch { left: g, right: psi.resolution() });
    }
    if let Schedule::Curve { times, .. } = &opts.schedule {
        if times.len() < maps.len() {
            return Err(Error::Precondition(format!(
                "{} curve parameters for {} maps",
                times.len(),
                maps.len()
            )));
        }
    }
    let mode = bounds.mode;
    let r = mode.fraction();
    let slack = grid_slack(bounds, g);
    // cone level reached after the waiting period, and after a subtraction
    let (level, level_after) = match mode {
        Mode::Piecewise => {
            let a = bounds.a_star.ok_or_else(|| Error::Precondition("piecewise mode needs a_star".into()))?;
            (a, a / (1.0 - bounds.kappa))
        }
        Mode::Smooth => (bounds.L_star, 2.0 * bounds.L_star),
    };

    let mut raw = Pair { phi: phi.clone(), psi: psi.clone() };
    let mut um = Pair { phi: phi.clone(), psi: psi.clone() };
    let mut ledger = CouplingLedger {
        mode,
        block: bounds.block,
        kappa_mode: opts.kappa_mode,
        matching: opts.matching,
        slack,
        tau: bounds.tau,
        n_wait: None,
        prefactor: None,
        rows: Vec::with_capacity(maps.len() + 1),
        blocks: Vec::new(),
        cone_failures: Vec::new(),
        violation: None,
    };
    let mut residual = 1.0;
    // (end step, length, kappa) of the block in progress
    let mut current: Option<(usize, usize, f64)> = None;

    let plan = |start: usize| -> Result<(usize, f64)> {
        match &opts.schedule {
            Schedule::Fixed => Ok((bounds.block, bounds.kappa)),
            Schedule::Curve { mesh, times } => {
                let t = times.get(start).copied().unwrap_or(f64::NAN);
                let p = mesh.probe_for(t).ok_or(Error::CoverFailure(t))?;
                Ok((p.n.max(1), p.kappa))
            }
        }
    };

    for n in 0..=maps.len() {
        if n > 0 {
            let f = &maps[n - 1];
            raw.step(f)?;
            um.step(f)?;
        }
        let (min_phi, min_psi) = (um.phi.min_value(), um.psi.min_value());
        let mut row = LedgerRow {
            n,
            l1_distance: raw.phi.l1_distance(&raw.psi)?,
            variation_phi: um.phi.variation(),
            variation_psi: um.psi.variation(),
            min_phi,
            min_psi,
            block_index: -1,
            kappa_used: 0.0,
            residual_mass: residual,
            envelope_value: 2.0 * residual,
        };

        if ledger.n_wait.is_none() {
            let inside = in_cone(bounds, &um.phi, level, opts.eps_loc, slack)
                && in_cone(bounds, &um.psi, level, opts.eps_loc, slack);
            if inside || n >= bounds.tau {
                if !inside {
                    ledger.cone_failures.push(format!("densities outside the cone at the theoretical waiting time {n}"));
                }
                ledger.n_wait = Some(n);
                ledger.prefactor = Some(row.l1_distance);
                let (len, kappa) = plan(n)?;
                // the smooth scheme subtracts as soon as both densities are in the cone
                let first_end = if mode == Mode::Smooth { n } else { n + len };
                current = Some((first_end, len, kappa));
            }
        }

        if let Some((end, len, kappa_theory)) = current {
            row.block_index = ledger.blocks.len() as i64;
            row.kappa_used = kappa_theory;
            if n == end {
                if mode == Mode::Smooth {
                    for (name, d) in [("phi", &um.phi), ("psi", &um.psi)] {
                        if !in_cone(bounds, d, level, opts.eps_loc, slack) {
                            ledger.cone_failures.push(format!("{name} outside D_L* before subtraction at step {n}"));
                        }
                    }
                }
                let floor = min_phi.min(min_psi);
                if floor < kappa_theory - slack || floor < r * kappa_theory {
                    ledger.violation = Some(format!(
                        "block {}: minimum {floor:.6e} below floor {kappa_theory:.6e} at step {n}",
                        ledger.blocks.len()
                    ));
                    ledger.rows.push(row);
                    break;
                }
                let kappa = match opts.kappa_mode {
                    KappaMode::Theoretical => kappa_theory,
                    KappaMode::Empirical => floor.min(1.0 / r * (1.0 - 1e-9)),
                };
                row.kappa_used = kappa;
                if opts.matching {
                    um.phi = um.phi.match_subtract(kappa, r)?;
                    um.psi = um.psi.match_subtract(kappa, r)?;
                    residual *= 1.0 - r * kappa;
                    for (name, d) in [("phi", &um.phi), ("psi", &um.psi)] {
                        if !in_cone(bounds, d, level_after, opts.eps_loc, slack) {
                            ledger.cone_failures.push(format!("{name} outside the enlarged cone after subtraction at step {n}"));
                        }
                    }
                }
                row.residual_mass = residual;
                row.envelope_value = 2.0 * residual;
                ledger.blocks.push(BlockRecord {
                    index: ledger.blocks.len(),
                    n,
                    len,
                    kappa,
                    fraction: r,
                    matched_mass: 1.0 - residual,
                    residual_mass: residual,
                    raw_l1: row.l1_distance,
                    min_phi,
                    min_psi,
                });
                let (next_len, next_kappa) = plan(n)?;
                current = Some((n + next_len, next_len, next_kappa));
            }
        }
        ledger.rows.push(row);
    }
    Ok(ledger)
}

/// Least-squares fit of `log d_n` against `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct DecayFit {
    pub Lambda_emp: f64,
    pub R2: f64,
    pub n_range: (usize, usize),
    pub points: usize,
}

pub fn fit_decay(distances: &[f64]) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = distances
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > FIT_FLOOR && d.is_finite())
        .map(|(i, &d)| (i as f64, d.ln()))
        .collect();
    if pts.len() < FIT_MIN_POINTS {
        return Err(Error::FitUnavailable(pts.len()));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let sse: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(DecayFit {
        Lambda_emp: slope.exp(),
        R2: r2,
        n_range: (pts[0].0 as usize, pts[pts.len() - 1].0 as usize),
        points: pts.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub pass: bool,
    /// Largest `raw / envelope` over block ends.
    pub worst_ratio: f64,
    pub blocks_checked: usize,
    pub failures: Vec<String>,
}

/// Checks the raw distance against `2 * residual` (plus grid slack) at every
/// block end, and collects positivity and waiting-period failures.
pub fn certify(ledger: &CouplingLedger, bounds: &BoundsReport) -> Certificate {
    let mut failures = Vec::new();
    if let Some(v) = &ledger.violation {
        failures.push(v.clone());
    }
    if let Some(w) = ledger.n_wait {
        if w > bounds.tau {
            failures.push(format!("waiting period {w} exceeds the theoretical {}", bounds.tau));
        }
    }
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut check = |what: String, raw: f64, residual: f64| {
        let env = 2.0 * residual;
        worst = worst.max(raw / env);
        checked += 1;
        if raw > env + ledger.slack {
            failures.push(format!("{what}: raw distance {raw:.6e} exceeds envelope {env:.6e}"));
        }
    };
    if let Some(first) = ledger.rows.first() {
        check("start".into(), first.l1_distance, 1.0);
    }
    for b in &ledger.blocks {
        check(format!("block {} (step {})", b.index, b.n), b.raw_l1, b.residual_mass);
    }
    Certificate { pass: failures.is_empty(), worst_ratio: worst, blocks_checked: checked, failures }
}
