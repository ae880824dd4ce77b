//! Cylinder partitions, enveloping times, escape times and the positivity
//! horizon of a piecewise expanding map.
//!
//! Cylinders are built by pulling branch endpoints back through the inverse
//! branches along each itinerary, so every cylinder carries both its domain
//! `[lo, hi)` and its lifted image under the composed map.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::circle;
use crate::error::{Error, Result};
use crate::map::PiecewiseMap;

/// Default bound on the number of cylinders in a partition.
pub const DEFAULT_CYLINDER_CAP: usize = 1_000_000;
/// Largest enveloping time searched by [`positivity_horizon`].
pub const DEFAULT_ENVELOPING_HORIZON: usize = 10;
/// Margin required by every covering claim.
pub const COVER_MARGIN: f64 = 1e-9;
/// Tolerance for containment of a partition element in an image arc.
pub const CONTAINMENT_TOL: f64 = 1e-9;
/// Intersections shorter than this (in image coordinates) are dropped.
const SLIVER: f64 = 1e-12;

/// An element of the join partition of a map sequence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cylinder {
    pub lo: f64,
    pub hi: f64,
    pub itinerary: Vec<usize>,
    /// Lifted image `F_n(J)` under the full itinerary.
    pub image: (f64, f64),
    /// Integer shifts between consecutive steps.
    #[serde(skip)]
    shifts: Vec<f64>,
}

impl Cylinder {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn depth(&self) -> usize {
        self.itinerary.len()
    }

    /// Pulls a point of the lifted image back to the cylinder.
    fn pull_back(&self, maps: &[PiecewiseMap], w: f64) -> Result<f64> {
        let n = self.depth();
        let mut z = w;
        for j in (0..n).rev() {
            let shift = if j + 1 < n { self.shifts[j] } else { 0.0 };
            let b = &maps[j].branches()[self.itinerary[j]];
            z = b
                .inverse_lift(z + shift)
                .ok_or(Error::RootFinding { branch: self.itinerary[j], y: z })?;
        }
        Ok(z)
    }

    /// `F_n(x)` in lifted coordinates, following the itinerary.
    pub fn forward(&self, maps: &[PiecewiseMap], x: f64) -> f64 {
        let n = self.depth();
        let mut z = x;
        for (j, m) in maps.iter().enumerate().take(n) {
            z = m.branches()[self.itinerary[j]].lift(z);
            if j + 1 < n {
                z -= self.shifts[j];
            }
        }
        z
    }
}

/// Join partition of `maps` restricted to the given start intervals.
pub fn partition_from(maps: &[PiecewiseMap], starts: &[(f64, f64)], cap: usize) -> Result<Vec<Cylinder>> {
    let Some(first) = maps.first() else {
        return Err(Error::Precondition("empty map sequence".into()));
    };
    let mut level: Vec<Cylinder> = Vec::new();
    for &(a, b) in starts {
        for (i, br) in first.branches().iter().enumerate() {
            let (p, q) = (a.max(br.lo), b.min(br.hi));
            if q - p > SLIVER {
                level.push(Cylinder {
                    lo: p,
                    hi: q,
                    itinerary: vec![i],
                    image: (br.lift(p), br.lift(q)),
                    shifts: Vec::new(),
                });
            }
        }
    }
    for (depth, f) in maps.iter().enumerate().skip(1) {
        let mut next = Vec::with_capacity(level.len() * (f.num_branches() + 1));
        for cyl in &level {
            let (p, q) = cyl.image;
            let parent_maps = &maps[..depth];
            for m in (p.floor() as i64)..=(q.floor() as i64) {
                let m = m as f64;
                for (i, br) in f.branches().iter().enumerate() {
                    let (lo, hi) = (p.max(br.lo + m), q.min(br.hi + m));
                    if hi - lo <= SLIVER {
                        continue;
                    }
                    let x0 = if lo == p { cyl.lo } else { cyl.pull_back(parent_maps, lo)? };
                    let x1 = if hi == q { cyl.hi } else { cyl.pull_back(parent_maps, hi)? };
                    if x1 <= x0 {
                        continue;
                    }
                    let mut itinerary = cyl.itinerary.clone();
                    itinerary.push(i);
                    let mut shifts = cyl.shifts.clone();
                    shifts.push(m);
                    next.push(Cylinder {
                        lo: x0,
                        hi: x1,
                        itinerary,
                        image: (br.lift(lo - m), br.lift(hi - m)),
                        shifts,
                    });
                    if next.len() > cap {
                        return Err(Error::PartitionExplosion { cap });
                    }
                }
            }
        }
        level = next;
    }
    level.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    Ok(level)
}

/// `A(F_n)`: the join of the pulled-back first-level partitions of the
/// first `n` maps.
pub fn cylinder_partition(maps: &[PiecewiseMap], n: usize) -> Result<Vec<Cylinder>> {
    if n == 0 || maps.len() < n {
        return Err(Error::Precondition(format!("need 1 <= n <= {} maps, got n = {n}", maps.len())));
    }
    partition_from(&maps[..n], &[(0.0, 1.0)], DEFAULT_CYLINDER_CAP)
}

/// `A_n(g)` for a single map.
pub fn cylinders_of(g: &PiecewiseMap, n: usize) -> Result<Vec<Cylinder>> {
    cylinder_partition(&vec![g.clone(); n], n)
}

/// Smallest `N <= n_max` at which every first-level element overcovers the
/// circle, or `None` if the map is not enveloping within `n_max`.
pub fn enveloping_time(g: &PiecewiseMap, n_max: usize) -> Result<Option<usize>> {
    if n_max == 0 {
        return Err(Error::Precondition("n_max must be at least 1".into()));
    }
    for n in 1..=n_max {
        let maps = vec![g.clone(); n];
        let mut all = true;
        for br in g.branches() {
            let cyl = partition_from(&maps, &[(br.lo, br.hi)], DEFAULT_CYLINDER_CAP)?;
            let arcs: Vec<_> = cyl.iter().map(|c| c.image).collect();
            if !circle::arcs_cover(&arcs, COVER_MARGIN) {
                all = false;
                break;
            }
        }
        if all {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

/// Smallest `n` with every element of `A_n(g)` shorter than `1/(2 a_star)`.
pub fn refine_until(g: &PiecewiseMap, a_star: f64) -> Result<usize> {
    if !(a_star > 0.0) {
        return Err(Error::Precondition(format!("a* = {a_star} must be positive")));
    }
    let bound = 1.0 / (2.0 * a_star);
    let mut n = 1;
    loop {
        let longest = cylinders_of(g, n)?.iter().map(Cylinder::len).fold(0.0, f64::max);
        if longest < bound {
            return Ok(n);
        }
        n += 1;
    }
}

/// Escape time of a cylinder together with its witness subinterval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Escape {
    pub s: usize,
    /// `J_s`
    pub lo: f64,
    pub hi: f64,
    /// Branches applied to `J_s` over the `s` steps.
    pub itinerary: Vec<usize>,
    /// Index of the first-level element `I` with `g^s(J_s) ⊇ I`.
    pub target: usize,
}

fn contained_branch(g: &PiecewiseMap, (p, q): (f64, f64)) -> Option<usize> {
    for m in (p.floor() as i64 - 1)..=(q.floor() as i64 + 1) {
        let m = m as f64;
        for (i, br) in g.branches().iter().enumerate() {
            if br.lo + m >= p - CONTAINMENT_TOL && br.hi + m <= q + CONTAINMENT_TOL {
                return Some(i);
            }
        }
    }
    None
}

/// Runs the nested-interval loop: stop as soon as the image of `J_k`
/// contains a first-level element; otherwise keep the part of `J_k` whose
/// image lies in the longer of the first-level pieces (ties go to the
/// lower endpoint) and apply one more step.
pub fn escape_time(g: &PiecewiseMap, j: &Cylinder) -> Result<Escape> {
    if !(j.len() > 0.0) {
        return Err(Error::Precondition("cylinder has zero length".into()));
    }
    let cap = 64 * j.depth().max(1);
    let branches = g.branches();
    // steps[i] = (shift, branch): level-i coordinate minus shift lies in the
    // domain of `branch`
    let mut steps: Vec<(f64, usize)> = Vec::new();
    let pull_back = |steps: &[(f64, usize)], w: f64| -> Result<f64> {
        let mut z = w;
        for &(shift, b) in steps.iter().rev() {
            z = branches[b]
                .inverse_lift(z)
                .ok_or(Error::RootFinding { branch: b, y: z })?
                + shift;
        }
        Ok(z)
    };
    let mut arc = (j.lo, j.hi);
    let (mut xl, mut xh) = (j.lo, j.hi);
    for k in 0..=cap {
        if let Some(target) = contained_branch(g, arc) {
            return Ok(Escape {
                s: k,
                lo: xl,
                hi: xh,
                itinerary: steps.iter().map(|s| s.1).collect(),
                target,
            });
        }
        let (p, q) = arc;
        let mut best: Option<(f64, usize, f64, f64)> = None;
        for m in (p.floor() as i64)..=(q.floor() as i64) {
            let m = m as f64;
            for (i, br) in branches.iter().enumerate() {
                let (lo, hi) = (p.max(br.lo + m), q.min(br.hi + m));
                if hi - lo <= SLIVER {
                    continue;
                }
                let longer = match best {
                    None => true,
                    Some((_, _, blo, bhi)) => hi - lo > (bhi - blo) + SLIVER,
                };
                if longer {
                    best = Some((m, i, lo, hi));
                }
            }
        }
        let (m, i, lo, hi) = best.ok_or_else(|| Error::Precondition("image arc has no interior".into()))?;
        if lo != p {
            xl = pull_back(&steps, lo)?;
        }
        if hi != q {
            xh = pull_back(&steps, hi)?;
        }
        steps.push((m, i));
        arc = (branches[i].lift(lo - m), branches[i].lift(hi - m));
    }
    Err(Error::EscapeCap(cap))
}

/// One row of the escape table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeEntry {
    pub lo: f64,
    pub hi: f64,
    pub itinerary: Vec<usize>,
    pub s: usize,
    pub witness: (f64, f64),
}

/// Combinatorial constants behind the positivity horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringReport {
    #[serde(rename = "N")]
    pub n_env: usize,
    pub n1: usize,
    pub s_table: Vec<EscapeEntry>,
    pub s0: usize,
    pub n0: usize,
    #[serde(rename = "M0")]
    pub m0: f64,
    pub eps: f64,
    pub kappa0: f64,
    pub kappa_eps: f64,
}

/// Enveloping time, refinement depth, escape table, `n0 = s0 + N`,
/// `kappa0 = M0^-n0 / 2` and `kappa_eps = (M0 + eps)^-n0 / 2`.
pub fn positivity_horizon(g: &PiecewiseMap, a_star: f64, eps: f64) -> Result<CoveringReport> {
    g.require_strong_expansion()?;
    if !(eps >= 0.0) {
        return Err(Error::Precondition(format!("eps = {eps} must be nonnegative")));
    }
    let n_env = enveloping_time(g, DEFAULT_ENVELOPING_HORIZON)?
        .ok_or(Error::NotEnveloping(DEFAULT_ENVELOPING_HORIZON))?;
    let n1 = refine_until(g, a_star)?;
    let s_table = cylinders_of(g, n1)?
        .iter()
        .map(|c| {
            escape_time(g, c).map(|e| EscapeEntry {
                lo: c.lo,
                hi: c.hi,
                itinerary: c.itinerary.clone(),
                s: e.s,
                witness: (e.lo, e.hi),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let s0 = s_table.iter().map(|e| e.s).max().unwrap_or(0);
    let n0 = s0 + n_env;
    let m0 = g.analyze().m0;
    Ok(CoveringReport {
        n_env,
        n1,
        s_table,
        s0,
        n0,
        m0,
        eps,
        kappa0: 0.5 * m0.powi(-(n0 as i32)),
        kappa_eps: 0.5 * (m0 + eps).powi(-(n0 as i32)),
    })
}

/// Whether `F_N` maps the shrunken arc `(a + delta, b - delta)` over the
/// whole circle, where `N = maps.len()`.
pub fn verify_overcover(maps: &[PiecewiseMap], arc: (f64, f64), delta: f64) -> Result<bool> {
    let (a, b) = arc;
    if !(delta >= 0.0 && 2.0 * delta < b - a) {
        return Err(Error::Precondition(format!(
            "delta = {delta} leaves an empty interior of ({a}, {b})"
        )));
    }
    let cyl = partition_from(maps, &[(a + delta, b - delta)], DEFAULT_CYLINDER_CAP)?;
    let arcs: Vec<_> = cyl.iter().map(|c| c.image).collect();
    Ok(circle::arcs_cover(&arcs, COVER_MARGIN))
}

/// Whether every `J` in `A_n(g)` meets the cylinder of `A(F_n)` with the
/// same itinerary.
pub fn itinerary_overlaps(g: &PiecewiseMap, maps: &[PiecewiseMap], n: usize) -> Result<bool> {
    let own = cylinders_of(g, n)?;
    let seq: HashMap<Vec<usize>, (f64, f64)> = cylinder_partition(maps, n)?
        .into_iter()
        .map(|c| (c.itinerary, (c.lo, c.hi)))
        .collect();
    Ok(own.iter().all(|j| {
        seq.get(&j.itinerary)
            .is_some_and(|&(lo, hi)| lo.max(j.lo) < hi.min(j.hi))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dyadic_partition() {
        let c = cylinders_of(&PiecewiseMap::doubling(), 2).unwrap();
        assert_eq!(c.len(), 4);
        let its: Vec<_> = c.iter().map(|c| c.itinerary.clone()).collect();
        assert_eq!(its, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        for (k, cyl) in c.iter().enumerate() {
            assert_eq!(cyl.lo, k as f64 / 4.0);
            assert_eq!(cyl.len(), 0.25);
        }
    }

    #[test]
    fn slope3_and_slope_2_5_partitions() {
        let c = cylinders_of(&PiecewiseMap::slope3_two_branch(), 2).unwrap();
        assert_eq!(c.len(), 6);
        for (k, cyl) in c.iter().enumerate() {
            assert_abs_diff_eq!(cyl.lo, k as f64 / 6.0, epsilon = 1e-15);
            assert_abs_diff_eq!(cyl.len(), 1.0 / 6.0, epsilon = 1e-15);
        }
        let c = cylinders_of(&PiecewiseMap::slope_2_5(), 1).unwrap();
        let its: Vec<_> = c.iter().map(|c| c.itinerary[0]).collect();
        assert_eq!(its, vec![0, 1, 2]);
    }

    #[test]
    fn partition_cap_is_enforced() {
        let maps = vec![PiecewiseMap::slope3_two_branch(); 8];
        let r = partition_from(&maps, &[(0.0, 1.0)], 100);
        assert!(matches!(r, Err(Error::PartitionExplosion { cap: 100 })));
    }

    #[test]
    fn enveloping_examples() {
        assert_eq!(enveloping_time(&PiecewiseMap::slope3_two_branch(), 4).unwrap(), Some(1));
        assert_eq!(enveloping_time(&PiecewiseMap::doubling(), 6).unwrap(), None);
        assert_eq!(enveloping_time(&PiecewiseMap::two_slope_wrap(), 4).unwrap(), Some(1));
    }

    #[test]
    fn refinement_examples() {
        // lengths 1/2, 1/6, 1/18, 1/54 against the bound 1/20
        assert_eq!(refine_until(&PiecewiseMap::slope3_two_branch(), 10.0).unwrap(), 4);
        assert_eq!(refine_until(&PiecewiseMap::doubling(), 1.0).unwrap(), 2);
        let g = PiecewiseMap::two_slope_wrap();
        for a in [1.0, 3.0, 7.5] {
            let n1 = refine_until(&g, a).unwrap();
            if n1 > 1 {
                let prev = cylinders_of(&g, n1 - 1).unwrap();
                assert!(prev.iter().map(Cylinder::len).fold(0.0, f64::max) >= 1.0 / (2.0 * a));
            }
        }
    }

    #[test]
    fn escape_examples() {
        let g = PiecewiseMap::slope3_two_branch();
        let c = cylinders_of(&g, 2).unwrap();
        let e = escape_time(&g, &c[0]).unwrap();
        assert_eq!(e.s, 1);
        assert_eq!(e.target, 0);
        assert_eq!((e.lo, e.hi), (0.0, c[0].hi));

        let whole = cylinders_of(&g, 1).unwrap();
        assert_eq!(escape_time(&g, &whole[0]).unwrap().s, 0);

        let n1 = refine_until(&g, 10.0).unwrap();
        for j in cylinders_of(&g, n1).unwrap() {
            assert!(escape_time(&g, &j).unwrap().s <= n1);
        }
    }

    #[test]
    fn horizon_constants() {
        let r = positivity_horizon(&PiecewiseMap::slope3_two_branch(), 10.0, 0.1).unwrap();
        assert_eq!((r.n_env, r.n1, r.s0, r.n0), (1, 4, 3, 4));
        assert_abs_diff_eq!(r.kappa0, 1.0 / 162.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.kappa_eps, 0.5 * 3.1f64.powi(-4), epsilon = 1e-15);
        assert_abs_diff_eq!(r.kappa_eps, 0.5 * 3.1f64.powi(-4), epsilon = 1e-15);
        assert!(positivity_horizon(&PiecewiseMap::doubling(), 10.0, 0.0).is_err());
    }

    #[test]
    fn overcover_examples() {
        let s3 = [PiecewiseMap::slope3_two_branch()];
        assert!(verify_overcover(&s3, (0.0, 0.5), 0.0).unwrap());
        assert!(!verify_overcover(&[PiecewiseMap::doubling()], (0.0, 0.5), 0.0).unwrap());
        assert!(verify_overcover(&s3, (0.0, 0.5), 0.25).is_err());
    }

    #[test]
    fn partition_tiles_and_nests() {
        for g in [
            PiecewiseMap::slope_2_5(),
            PiecewiseMap::two_slope_wrap(),
            PiecewiseMap::sine_perturbed(2.5, 0.03).unwrap(),
        ] {
            for n in 1..5 {
                let c = cylinders_of(&g, n).unwrap();
                let total: f64 = c.iter().map(Cylinder::len).sum();
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
                for w in c.windows(2) {
                    assert_abs_diff_eq!(w[0].hi, w[1].lo, epsilon = 1e-12);
                }
                let coarse = cylinders_of(&g, n + 1).unwrap();
                for fine in &coarse {
                    let parents = c
                        .iter()
                        .filter(|p| fine.lo >= p.lo - 1e-12 && fine.hi <= p.hi + 1e-12)
                        .count();
                    assert_eq!(parents, 1);
                }
            }
        }
    }

    #[test]
    fn cylinder_images_follow_the_map() {
        let g = PiecewiseMap::sine_perturbed(2.5, 0.03).unwrap();
        let maps = vec![g.clone(); 3];
        for c in cylinder_partition(&maps, 3).unwrap() {
            let mid = 0.5 * (c.lo + c.hi);
            let direct = g.eval(g.eval(g.eval(mid)));
            assert!(circle::dist(direct, c.forward(&maps, mid)) < 1e-12);
            assert!(circle::dist(c.forward(&maps, c.lo), c.image.0) < 1e-12);
        }
    }
}
