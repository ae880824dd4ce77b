//! Closed-form constants and schedules: absorption times, distortion and
//! cone parameters, matching rates, decay envelopes and the curve mesh.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covering::{positivity_horizon, CoveringReport};
use crate::curve::MapCurve;
use crate::error::{Error, Result};
use crate::map::{neighborhood_distance, PiecewiseMap};

/// Floor substituted for a vanishing distortion constant.
pub const C0_FLOOR: f64 = 1e-6;
/// Bisection steps used by [`delta0_of_curve`].
pub const BISECTION_STEPS: usize = 40;
/// Parameters sampled on each side of a probe when testing a radius.
const RADIUS_SAMPLES: usize = 8;

/// Extremal analytic constants over a family of maps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyConstants {
    pub lambda0: f64,
    #[serde(rename = "A0")]
    pub a0: f64,
    #[serde(rename = "M0_family")]
    pub m0: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
}

impl FamilyConstants {
    pub fn from_maps<'a>(maps: impl IntoIterator<Item = &'a PiecewiseMap>) -> Result<Self> {
        let mut out: Option<FamilyConstants> = None;
        for m in maps {
            let an = m.analyze();
            out = Some(match out {
                None => FamilyConstants { lambda0: an.lambda_min, a0: an.a, m0: an.m0, c1: an.c1 },
                Some(f) => FamilyConstants {
                    lambda0: f.lambda0.min(an.lambda_min),
                    a0: f.a0.max(an.a),
                    m0: f.m0.max(an.m0),
                    c1: f.c1.max(an.c1),
                },
            });
        }
        out.ok_or_else(|| Error::Precondition("empty map family".into()))
    }

    /// Constants over `samples + 1` evenly spaced points of a curve.
    pub fn of_curve(curve: &MapCurve, samples: usize) -> Result<Self> {
        let maps = curve.grid(samples).into_iter().map(|t| curve.at(t)).collect::<Result<Vec<_>>>()?;
        Self::from_maps(&maps)
    }

    /// `A0 / (1 - 2/lambda0)`, the lower bound on admissible cone levels.
    pub fn cone_threshold(&self) -> Result<f64> {
        if !(self.lambda0 > 2.0) {
            return Err(Error::Precondition(format!("lambda0 = {} must exceed 2", self.lambda0)));
        }
        Ok(self.a0 / (1.0 - 2.0 / self.lambda0))
    }

    pub fn default_a_star(&self) -> Result<f64> {
        Ok(1.25 * self.cone_threshold()?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Smooth,
    Piecewise,
}

impl Mode {
    /// Fraction of the floor subtracted at each block end.
    pub fn fraction(self) -> f64 {
        match self {
            Mode::Smooth => 0.5,
            Mode::Piecewise => 1.0,
        }
    }
}

/// Every constant and schedule that parameterizes a coupling run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct BoundsReport {
    pub mode: Mode,
    pub lambda0: f64,
    pub A0: f64,
    pub M0_family: f64,
    pub C1: f64,
    pub C0: f64,
    pub L_star: f64,
    pub a_star: Option<f64>,
    /// Waiting time for the initial densities to enter the cone.
    pub tau: usize,
    pub kappa: f64,
    pub block: usize,
    pub Lambda: f64,
    pub delta0: Option<f64>,
}

impl BoundsReport {
    /// Constants for a piecewise-expanding family with cone level `a_star`,
    /// positivity data from `covering`, and initial variation `a_init`.
    pub fn piecewise(family: &FamilyConstants, a_star: f64, covering: &CoveringReport, a_init: f64) -> Result<Self> {
        let kappa = covering.kappa_eps;
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::Precondition(format!("kappa = {kappa} outside (0, 1)")));
        }
        let tau = tau_piecewise(a_init.max(f64::MIN_POSITIVE), a_star, family.lambda0, family.a0)?;
        let block = covering.n0 + tau_piecewise(a_star / (1.0 - kappa), a_star, family.lambda0, family.a0)?;
        let c0 = distortion_constant(family.c1, family.lambda0)?;
        Ok(BoundsReport {
            mode: Mode::Piecewise,
            lambda0: family.lambda0,
            A0: family.a0,
            M0_family: family.m0,
            C1: family.c1,
            C0: c0,
            L_star: cone_parameter(c0),
            a_star: Some(a_star),
            tau,
            kappa,
            block: block.max(1),
            Lambda: lambda_local(kappa, block.max(1)),
            delta0: None,
        })
    }

    /// Constants for a smooth expanding family and initial cone level `l_init`.
    pub fn smooth(family: &FamilyConstants, l_init: f64) -> Result<Self> {
        let mut c0 = distortion_constant(family.c1, family.lambda0)?;
        if c0 <= 0.0 {
            c0 = C0_FLOOR;
        }
        let l_star = cone_parameter(c0);
        let kappa = smooth_floor(l_star);
        let block = tau_smooth(2.0 * l_star, family.lambda0, c0)?.max(1);
        Ok(BoundsReport {
            mode: Mode::Smooth,
            lambda0: family.lambda0,
            A0: family.a0,
            M0_family: family.m0,
            C1: family.c1,
            C0: c0,
            L_star: l_star,
            a_star: None,
            tau: tau_smooth(l_init, family.lambda0, c0)?,
            kappa,
            block,
            Lambda: lambda_local(Mode::Smooth.fraction() * kappa, block),
            delta0: None,
        })
    }

    /// The block-structured envelope `2 (1 - r kappa)^floor(n / block)`.
    pub fn envelope_at(&self, n: usize) -> f64 {
        envelope_block(self.kappa, self.mode.fraction(), self.block, n)
    }
}

/// Smallest nonnegative `n` with `(2/lambda0)^n a <= a_star - A0/(1 - 2/lambda0)`.
pub fn tau_piecewise(a: f64, a_star: f64, lambda0: f64, a0: f64) -> Result<usize> {
    if !(lambda0 > 2.0) {
        return Err(Error::Precondition(format!("lambda0 = {lambda0} must exceed 2")));
    }
    let slack = a_star - a0 / (1.0 - 2.0 / lambda0);
    if !(slack > 0.0) {
        return Err(Error::Precondition(format!(
            "a* = {a_star} does not exceed A0/(1 - 2/lambda0) = {}",
            a_star - slack
        )));
    }
    if !(a > 0.0) {
        return Err(Error::Precondition(format!("a = {a} must be positive")));
    }
    if a <= slack {
        return Ok(0);
    }
    let x = (slack / a).ln() / (2.0 / lambda0).ln();
    Ok((x - 1e-12).ceil().max(0.0) as usize)
}

/// Smallest `n` with `L lambda0^-n <= C0`.
pub fn tau_smooth(l: f64, lambda0: f64, c0: f64) -> Result<usize> {
    if !(lambda0 > 1.0) || !(c0 > 0.0) || !(l >= 0.0) {
        return Err(Error::Precondition(format!(
            "tau_smooth needs lambda0 > 1 and C0 > 0 (lambda0 = {lambda0}, C0 = {c0}, L = {l})"
        )));
    }
    let mut n = 0;
    let mut v = l;
    while v > c0 * (1.0 + 1e-12) {
        v /= lambda0;
        n += 1;
    }
    Ok(n)
}

/// `C1 / (lambda0 - 1)`.
pub fn distortion_constant(c1: f64, lambda0: f64) -> Result<f64> {
    if !(lambda0 > 1.0) {
        return Err(Error::Precondition(format!("lambda0 = {lambda0} must exceed 1")));
    }
    Ok(c1 / (lambda0 - 1.0))
}

pub fn cone_parameter(c0: f64) -> f64 {
    4.0 * c0
}

/// Lower bound on a unit-mass density in the Lipschitz cone of level `l`.
pub fn smooth_floor(l: f64) -> f64 {
    (-0.5 * l).exp()
}

/// `(1 - kappa)^(1/block)`.
pub fn lambda_local(kappa: f64, block: usize) -> f64 {
    (1.0 - kappa).powf(1.0 / block.max(1) as f64)
}

pub fn envelope(c: f64, lambda: f64, n: usize) -> f64 {
    c * lambda.powi(n as i32)
}

pub fn envelope_block(kappa: f64, fraction: f64, block: usize, n: usize) -> f64 {
    2.0 * (1.0 - fraction * kappa).powi((n / block.max(1)) as i32)
}

/// `min_j alpha_j / (2 n_j)` over `(alpha, n)` pairs.
pub fn delta0_formula(probes: &[(f64, usize)]) -> f64 {
    probes
        .iter()
        .map(|&(alpha, n)| alpha / (2.0 * n.max(1) as f64))
        .fold(f64::INFINITY, f64::min)
}

/// Data computed at one probe parameter of a curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveProbe {
    pub z: f64,
    pub eps: f64,
    pub alpha: f64,
    pub n0: usize,
    pub tau: usize,
    pub n: usize,
    pub kappa: f64,
}

impl CurveProbe {
    /// The half-radius interval `(z - alpha/2, z + alpha/2)`.
    pub fn half_interval(&self) -> (f64, f64) {
        (self.z - 0.5 * self.alpha, self.z + 0.5 * self.alpha)
    }
}

/// Probes, the selected cover and the resulting safe mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveMesh {
    pub delta0: f64,
    pub probes: Vec<CurveProbe>,
    /// Indices into `probes` of the greedily selected cover.
    pub cover: Vec<usize>,
}

impl CurveMesh {
    /// Index of the selected probe whose half interval contains `t`.
    pub fn probe_for(&self, t: f64) -> Option<&CurveProbe> {
        self.cover.iter().map(|&i| &self.probes[i]).find(|p| {
            let (lo, hi) = p.half_interval();
            lo - 1e-12 <= t && t <= hi + 1e-12
        })
    }
}

/// Whether every sampled parameter within `alpha` of `z` maps into the
/// `eps`-neighborhood of `g`.
fn radius_admissible(curve: &MapCurve, g: &PiecewiseMap, z: f64, alpha: f64, eps: f64) -> Result<bool> {
    for k in (1..=RADIUS_SAMPLES).rev() {
        let off = alpha * k as f64 / RADIUS_SAMPLES as f64;
        for t in [z - off, z + off] {
            if t < curve.a || t > curve.b {
                continue;
            }
            match neighborhood_distance(&curve.at(t)?, g) {
                Some(d) if d < eps => {}
                _ => return Ok(false),
            }
        }
    }
    Ok(true)
}

/// Computes `eps`, `alpha`, `n0`, `tau` and `n` at one probe.
pub fn probe_curve(
    curve: &MapCurve,
    z: f64,
    a_star: f64,
    family: &FamilyConstants,
    eps_rule: &(dyn Fn(&PiecewiseMap) -> f64 + Sync),
) -> Result<CurveProbe> {
    if z < curve.a || z > curve.b {
        return Err(Error::Precondition(format!("probe {z} outside [{}, {}]", curve.a, curve.b)));
    }
    let g = curve.at(z)?;
    g.require_strong_expansion()?;
    let cap = 0.25 * g.marked_gap() * (1.0 - 1e-9);
    let eps = eps_rule(&g).min(cap);
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("neighborhood radius {eps} at t = {z} must be positive")));
    }
    let span = curve.len();
    let alpha = if radius_admissible(curve, &g, z, span, eps)? {
        span
    } else {
        let (mut lo, mut hi) = (0.0, span);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if radius_admissible(curve, &g, z, mid, eps)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    if !(alpha > 0.0) {
        return Err(Error::Precondition(format!("no admissible parameter radius at t = {z}")));
    }
    let cov = positivity_horizon(&g, a_star, eps)?;
    let tau = tau_piecewise(a_star / (1.0 - cov.kappa_eps), a_star, family.lambda0, family.a0)?;
    Ok(CurveProbe { z, eps, alpha, n0: cov.n0, tau, n: cov.n0 + tau, kappa: cov.kappa_eps })
}

/// Probes the curve, selects a cover of `[a, b]` by half-radius intervals
/// and returns `delta0 = min alpha/(2n)` over all probes.
pub fn delta0_of_curve(
    curve: &MapCurve,
    probe_grid: &[f64],
    a_star: f64,
    family: &FamilyConstants,
    eps_rule: &(dyn Fn(&PiecewiseMap) -> f64 + Sync),
) -> Result<CurveMesh> {
    if probe_grid.is_empty() {
        return Err(Error::Precondition("empty probe grid".into()));
    }
    let mut probes = probe_grid
        .par_iter()
        .map(|&z| probe_curve(curve, z, a_star, family, eps_rule))
        .collect::<Result<Vec<_>>>()?;
    probes.sort_by(|p, q| p.z.total_cmp(&q.z));

    let mut cover = Vec::new();
    let mut reach = curve.a;
    let mut first = true;
    while first || reach < curve.b {
        let best = probes
            .iter()
            .enumerate()
            .filter(|(_, p)| p.half_interval().0 <= reach + 1e-12)
            .max_by(|(_, p), (_, q)| p.half_interval().1.total_cmp(&q.half_interval().1));
        match best {
            Some((i, p)) if first || p.half_interval().1 > reach => {
                reach = p.half_interval().1;
                cover.push(i);
            }
            _ => return Err(Error::CoverFailure(reach)),
        }
        first = false;
    }
    let pairs: Vec<(f64, usize)> = probes.iter().map(|p| (p.alpha, p.n)).collect();
    Ok(CurveMesh { delta0: delta0_formula(&pairs), probes, cover })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::CurveFamily;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lhs(a: f64, lambda0: f64, a0: f64, a_star: f64, n: usize) -> bool {
        (2.0 / lambda0).powi(n as i32) * a <= a_star - a0 / (1.0 - 2.0 / lambda0) + 1e-12
    }

    #[test]
    fn tau_piecewise_examples() {
        assert_eq!(tau_piecewise(200.0, 25.0, 2.5, 4.0).unwrap(), 17);
        assert_eq!(tau_piecewise(100.0, 8.0, 3.0, 2.0).unwrap(), 10);
        assert_eq!(tau_piecewise(5.0, 25.0, 2.5, 4.0).unwrap(), 0);
        assert!(tau_piecewise(1.0, 20.0, 2.5, 4.0).is_err());
        assert!(tau_piecewise(1.0, 30.0, 2.0, 4.0).is_err());
    }

    #[test]
    fn tau_smooth_examples() {
        assert_eq!(tau_smooth(100.0, 2.0, 5.0).unwrap(), 5);
        assert_eq!(tau_smooth(3.0, 2.0, 5.0).unwrap(), 0);
        let c0 = 0.37;
        assert_eq!(tau_smooth(8.0 * c0, 2.0, c0).unwrap(), 3);
    }

    #[test]
    fn distortion_examples() {
        let c0 = distortion_constant(3.0, 2.0).unwrap();
        assert_eq!((c0, cone_parameter(c0)), (3.0, 12.0));
        assert_eq!(distortion_constant(0.0, 2.5).unwrap(), 0.0);
        let pi = std::f64::consts::PI;
        let lambda0 = 2.0 - 0.1 * pi;
        let c1 = 4.0 * pi * pi * 0.05 / lambda0;
        assert_abs_diff_eq!(distortion_constant(c1, lambda0).unwrap(), c1 / (1.0 - 0.1 * pi), epsilon = 1e-15);
    }

    #[test]
    fn smooth_affine_family_uses_floor() {
        let fam = FamilyConstants::from_maps([&PiecewiseMap::doubling()]).unwrap();
        let b = BoundsReport::smooth(&fam, 1.0).unwrap();
        assert_eq!(b.C0, C0_FLOOR);
        assert!(b.Lambda > 0.0 && b.Lambda < 1.0);
    }

    #[test]
    fn rate_and_envelope_examples() {
        assert_abs_diff_eq!(lambda_local(0.05, 14), 0.996343, epsilon = 1e-6);
        assert!(lambda_local(1e-15, 3) > 1.0 - 1e-15);
        assert_eq!(envelope(2.0, 0.9, 0), 2.0);
        assert_abs_diff_eq!(envelope_block(0.5, 0.5, 3, 7), 1.125, epsilon = 1e-15);
        assert!(envelope(2.0, 0.9, 6) < envelope(2.0, 0.9, 5));
    }

    #[test]
    fn slope3_rate_is_composed_from_covering() {
        let g = PiecewiseMap::slope3_two_branch();
        let fam = FamilyConstants::from_maps([&g]).unwrap();
        let cov = positivity_horizon(&g, 10.0, 0.0).unwrap();
        let b = BoundsReport::piecewise(&fam, 10.0, &cov, 1.0).unwrap();
        assert_abs_diff_eq!(b.kappa, 1.0 / 162.0, epsilon = 1e-15);
        let tail = tau_piecewise(10.0 / (1.0 - b.kappa), 10.0, 3.0, fam.a0).unwrap();
        assert_eq!(b.block, 4 + tail);
        assert_abs_diff_eq!(b.Lambda, (1.0 - 1.0 / 162.0f64).powf(1.0 / b.block as f64), epsilon = 1e-15);
    }

    #[test]
    fn report_serializes_spec_names() {
        let g = PiecewiseMap::slope3_two_branch();
        let fam = FamilyConstants::from_maps([&g]).unwrap();
        let cov = positivity_horizon(&g, 10.0, 0.01).unwrap();
        let b = BoundsReport::piecewise(&fam, 10.0, &cov, 5.0).unwrap();
        let v = serde_json::to_value(&b).unwrap();
        for key in ["lambda0", "A0", "M0_family", "C1", "C0", "L_star", "a_star", "tau", "kappa", "block", "Lambda", "delta0"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn delta0_formula_example() {
        assert_abs_diff_eq!(delta0_formula(&[(0.1, 5)]), 0.01, epsilon = 1e-15);
    }

    fn eps_rule(_: &PiecewiseMap) -> f64 {
        0.01
    }

    #[test]
    fn constant_curve_is_capped_at_interval() {
        let c = MapCurve::new(0.0, 1.0, CurveFamily::Slope { base: 3.0, rate: 0.0 }).unwrap();
        let fam = FamilyConstants::of_curve(&c, 4).unwrap();
        let a_star = fam.default_a_star().unwrap();
        let mesh = delta0_of_curve(&c, &[0.5], a_star, &fam, &eps_rule).unwrap();
        let p = &mesh.probes[0];
        assert_eq!(p.alpha, 1.0);
        assert_abs_diff_eq!(mesh.delta0, 1.0 / (2.0 * p.n as f64), epsilon = 1e-15);
    }

    #[test]
    fn slope_family_probes_match_oracle() {
        // for s(t) = 2.5 + t the distance to gamma(z) is exactly |t - z|
        let c = MapCurve::new(0.0, 1.0, CurveFamily::Slope { base: 2.5, rate: 1.0 }).unwrap();
        let fam = FamilyConstants::of_curve(&c, 64).unwrap();
        assert_abs_diff_eq!(fam.lambda0, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(fam.a0, 1.6, epsilon = 1e-12);
        let a_star = fam.default_a_star().unwrap();
        let mut pairs = Vec::new();
        for z in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let p = probe_curve(&c, z, a_star, &fam, &eps_rule).unwrap();
            assert_abs_diff_eq!(p.alpha, 0.01, epsilon = 1e-9);
            let cov = positivity_horizon(&c.at(z).unwrap(), a_star, 0.01).unwrap();
            assert_eq!(p.n, cov.n0 + tau_piecewise(a_star / (1.0 - cov.kappa_eps), a_star, 2.5, 1.6).unwrap());
            pairs.push((p.alpha, p.n));
        }
        // 0.25 spacing leaves gaps between the half intervals
        let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
        assert!(matches!(delta0_of_curve(&c, &grid, a_star, &fam, &eps_rule), Err(Error::CoverFailure(_))));
        let fine = c.grid(200);
        let mesh = delta0_of_curve(&c, &fine, a_star, &fam, &eps_rule).unwrap();
        assert!(mesh.delta0 <= delta0_formula(&pairs) * 1.000001);
        for t in c.grid(999) {
            assert!(mesh.probe_for(t).is_some(), "{t}");
        }
    }

    #[test]
    fn finer_probe_grid_never_enlarges_delta0() {
        let c = MapCurve::new(0.0, 0.2, CurveFamily::Slope { base: 2.6, rate: 1.0 }).unwrap();
        let fam = FamilyConstants::of_curve(&c, 16).unwrap();
        let a_star = fam.default_a_star().unwrap();
        let coarse = delta0_of_curve(&c, &c.grid(50), a_star, &fam, &eps_rule).unwrap();
        let fine = delta0_of_curve(&c, &c.grid(100), a_star, &fam, &eps_rule).unwrap();
        assert!(fine.delta0 <= coarse.delta0 * 1.000001);
    }

    proptest! {
        #[test]
        fn tau_piecewise_is_minimal(a in 0.1f64..1e4, lambda0 in 2.05f64..6.0, a0 in 0.1f64..10.0, extra in 0.01f64..20.0) {
            let a_star = a0 / (1.0 - 2.0 / lambda0) + extra;
            let n = tau_piecewise(a, a_star, lambda0, a0).unwrap();
            prop_assert!(lhs(a, lambda0, a0, a_star, n));
            if n > 0 {
                let slack = a_star - a0 / (1.0 - 2.0 / lambda0);
                prop_assert!((2.0 / lambda0).powi(n as i32 - 1) * a > slack * (1.0 - 1e-9));
            }
        }

        #[test]
        fn lambda_local_is_monotone(k1 in 0.001f64..0.9, dk in 0.001f64..0.09, block in 1usize..50) {
            prop_assert!(lambda_local(k1 + dk, block) < lambda_local(k1, block));
            prop_assert!(lambda_local(k1, block + 1) > lambda_local(k1, block));
        }

        #[test]
        fn block_envelope_below_rate_envelope(kappa in 0.001f64..0.9, r in prop::sample::select(vec![0.5, 1.0]), block in 1usize..20, extra in 0usize..200) {
            let n = block + extra;
            let rate = lambda_local(r * kappa, block);
            prop_assert!(envelope_block(kappa, r, block, n) <= 2.0 * rate.powi((n - block) as i32) * (1.0 + 1e-12));
        }
    }
}
