//! Circle maps with explicit branch structure.
//!
//! A [`PiecewiseMap`] is a finite list of increasing branches whose domains
//! tile `[0, 1)`. Each branch is given by a closed-form lift
//! `x -> s*x + c (+ a*sin(2*pi*x))`, reduced mod 1, so first and second
//! derivatives and inverse branches are available in closed form (or by a
//! safeguarded Newton iteration for the sine-perturbed form).

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::circle;
use crate::error::{Error, Result};

/// Tolerance used to decide whether one-sided limits of a map agree.
pub const CONTINUITY_TOL: f64 = 1e-12;

/// Grid points per marked interval used by [`neighborhood_distance`].
pub const NEIGHBORHOOD_GRID: usize = 4096;

/// Closed-form lift of a single branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum BranchForm {
    /// `x -> slope * x + offset`
    Affine { slope: f64, offset: f64 },
    /// `x -> slope * x + offset + amplitude * sin(2 pi x)`
    SinePerturbed {
        slope: f64,
        offset: f64,
        amplitude: f64,
    },
}

impl BranchForm {
    #[inline]
    pub fn lift(&self, x: f64) -> f64 {
        match *self {
            BranchForm::Affine { slope, offset } => slope * x + offset,
            BranchForm::SinePerturbed {
                slope,
                offset,
                amplitude,
            } => slope * x + offset + amplitude * (TAU * x).sin(),
        }
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            BranchForm::Affine { slope, .. } => slope,
            BranchForm::SinePerturbed {
                slope, amplitude, ..
            } => slope + TAU * amplitude * (TAU * x).cos(),
        }
    }

    #[inline]
    pub fn second(&self, x: f64) -> f64 {
        match *self {
            BranchForm::Affine { .. } => 0.0,
            BranchForm::SinePerturbed { amplitude, .. } => {
                -4.0 * PI * PI * amplitude * (TAU * x).sin()
            }
        }
    }

    pub fn slope(&self) -> f64 {
        match *self {
            BranchForm::Affine { slope, .. } | BranchForm::SinePerturbed { slope, .. } => slope,
        }
    }

    pub fn offset(&self) -> f64 {
        match *self {
            BranchForm::Affine { offset, .. } | BranchForm::SinePerturbed { offset, .. } => offset,
        }
    }

    pub fn amplitude(&self) -> f64 {
        match *self {
            BranchForm::Affine { .. } => 0.0,
            BranchForm::SinePerturbed { amplitude, .. } => amplitude,
        }
    }

    /// Builds the affine form when `amplitude == 0`, the sine form otherwise.
    pub fn from_parts(slope: f64, offset: f64, amplitude: f64) -> Self {
        if amplitude == 0.0 {
            BranchForm::Affine { slope, offset }
        } else {
            BranchForm::SinePerturbed {
                slope,
                offset,
                amplitude,
            }
        }
    }

    fn is_affine(&self) -> bool {
        matches!(self, BranchForm::Affine { .. })
    }
}

/// One branch: a half-open domain `[lo, hi)` and its lift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub lo: f64,
    pub hi: f64,
    #[serde(flatten)]
    pub form: BranchForm,
}

impl BranchSpec {
    pub fn new(lo: f64, hi: f64, form: BranchForm) -> Self {
        BranchSpec { lo, hi, form }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_affine(&self) -> bool {
        self.form.is_affine()
    }

    #[inline]
    pub fn lift(&self, x: f64) -> f64 {
        self.form.lift(x)
    }

    /// Lifted image of the closed domain.
    pub fn image(&self) -> (f64, f64) {
        (self.lift(self.lo), self.lift(self.hi))
    }

    /// `(inf f', sup f')` over the closed domain.
    pub fn deriv_range(&self) -> (f64, f64) {
        match self.form {
            BranchForm::Affine { slope, .. } => (slope, slope),
            BranchForm::SinePerturbed { .. } => {
                // cos(2 pi x) is extremal at multiples of 1/2
                let mut lo = self.form.deriv(self.lo).min(self.form.deriv(self.hi));
                let mut hi = self.form.deriv(self.lo).max(self.form.deriv(self.hi));
                let first = (2.0 * self.lo).ceil() as i64;
                let last = (2.0 * self.hi).floor() as i64;
                for k in first..=last {
                    let d = self.form.deriv(k as f64 / 2.0);
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
                (lo, hi)
            }
        }
    }

    /// `sup |f''|` over the closed domain.
    pub fn second_sup(&self) -> f64 {
        match self.form {
            BranchForm::Affine { .. } => 0.0,
            BranchForm::SinePerturbed { .. } => {
                let mut sup = self.form.second(self.lo).abs().max(self.form.second(self.hi).abs());
                // sin(2 pi x) is extremal at 1/4 + k/2
                let first = (2.0 * self.lo - 0.5).ceil() as i64;
                let last = (2.0 * self.hi - 0.5).floor() as i64;
                for k in first..=last {
                    sup = sup.max(self.form.second(0.25 + k as f64 / 2.0).abs());
                }
                sup
            }
        }
    }

    /// Solves `lift(x) = y` for `x` in the closed domain.
    ///
    /// Values of `y` outside the lifted image are clamped to the nearest
    /// endpoint. Returns `None` when the root finder fails to converge.
    pub fn inverse_lift(&self, y: f64) -> Option<f64> {
        match self.form {
            BranchForm::Affine { slope, offset } => Some(((y - offset) / slope).clamp(self.lo, self.hi)),
            BranchForm::SinePerturbed { .. } => {
                let (mut a, mut b) = (self.lo, self.hi);
                let (la, lb) = (self.lift(a), self.lift(b));
                if y <= la {
                    return Some(a);
                }
                if y >= lb {
                    return Some(b);
                }
                let mut x = a + (y - la) / (lb - la) * (b - a);
                let scale = y.abs().max(1.0);
                for _ in 0..200 {
                    let g = self.lift(x) - y;
                    if g.abs() <= 4.0 * f64::EPSILON * scale {
                        return Some(x);
                    }
                    if g > 0.0 {
                        b = x;
                    } else {
                        a = x;
                    }
                    let newton = x - g / self.form.deriv(x);
                    x = if newton > a && newton < b {
                        newton
                    } else {
                        0.5 * (a + b)
                    };
                    if b - a <= f64::EPSILON * x.abs().max(1e-300) {
                        return Some(x);
                    }
                }
                let g = self.lift(x) - y;
                (g.abs() <= 1e-12).then_some(x)
            }
        }
    }
}

/// A preimage of a point under one branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preimage {
    pub branch: usize,
    pub x: f64,
    /// `|f'(x)|`
    pub deriv: f64,
}

#[derive(Deserialize)]
struct MapRepr {
    branches: Vec<BranchSpec>,
}

/// A piecewise C² expanding circle map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapRepr")]
pub struct PiecewiseMap {
    branches: Vec<BranchSpec>,
    #[serde(skip_serializing)]
    continuous: bool,
    /// Lifted branch images; at continuity points the end of one image is
    /// snapped to the start of the next so the images tile exactly.
    #[serde(skip_serializing)]
    images: Vec<(f64, f64)>,
}

impl TryFrom<MapRepr> for PiecewiseMap {
    type Error = Error;

    fn try_from(repr: MapRepr) -> Result<Self> {
        PiecewiseMap::new(repr.branches)
    }
}

impl PiecewiseMap {
    /// Validates and builds a map.
    ///
    /// Domains must be sorted, start at 0, end at 1 and be contiguous; every
    /// branch must be increasing with `inf f' > 1` on its closed domain.
    pub fn new(branches: Vec<BranchSpec>) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::InvalidMap("no branches".into()));
        }
        if branches[0].lo != 0.0 || branches[branches.len() - 1].hi != 1.0 {
            return Err(Error::InvalidMap("branch domains must tile [0, 1)".into()));
        }
        for w in branches.windows(2) {
            if w[0].hi != w[1].lo {
                return Err(Error::InvalidMap(format!(
                    "branch domains are not contiguous at {} / {}",
                    w[0].hi, w[1].lo
                )));
            }
        }
        for (i, b) in branches.iter().enumerate() {
            if !(b.lo < b.hi) {
                return Err(Error::InvalidMap(format!("branch {i} has an empty domain")));
            }
            let vals = [b.form.slope(), b.form.offset(), b.form.amplitude()];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMap(format!("branch {i} has a non-finite parameter")));
            }
            let (inf, _) = b.deriv_range();
            if !(inf > 1.0) {
                return Err(Error::InvalidMap(format!(
                    "branch {i} is not expanding: inf f' = {inf}"
                )));
            }
            if !b.lift(b.lo).is_finite() || !b.lift(b.hi).is_finite() {
                return Err(Error::InvalidMap(format!("branch {i} is not evaluable at its endpoints")));
            }
        }
        let mut map = PiecewiseMap {
            branches,
            continuous: false,
            images: Vec::new(),
        };
        map.continuous = map.discontinuities().is_empty();
        // values within rounding of an integer are snapped so that abutting
        // images share their endpoint exactly
        let snap = |v: f64| {
            let r = v.round();
            if (v - r).abs() <= 1e-14 * r.abs().max(1.0) {
                r
            } else {
                v
            }
        };
        let n = map.branches.len();
        let starts: Vec<f64> = map.branches.iter().map(|b| snap(b.lift(b.lo))).collect();
        map.images = (0..n)
            .map(|i| {
                let end = snap(map.branches[i].lift(map.branches[i].hi));
                let next = starts[(i + 1) % n];
                let k = (end - next).round();
                if (end - next - k).abs() <= CONTINUITY_TOL {
                    (starts[i], next + k)
                } else {
                    (starts[i], end)
                }
            })
            .collect();
        Ok(map)
    }

    /// `x -> slope*x + offset (mod 1)` split at the points where the lift
    /// crosses an integer.
    pub fn affine_mod1(slope: f64, offset: f64) -> Result<Self> {
        if !(slope > 1.0) {
            return Err(Error::InvalidMap(format!("slope {slope} is not expanding")));
        }
        let mut cuts = vec![0.0];
        let first = (offset.floor() + 1.0) as i64;
        let last = (slope + offset).ceil() as i64 - 1;
        for k in first..=last {
            let x = (k as f64 - offset) / slope;
            if x > 0.0 && x < 1.0 {
                cuts.push(x);
            }
        }
        cuts.push(1.0);
        let branches = cuts
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                let m = (slope * mid + offset).floor();
                BranchSpec::new(w[0], w[1], BranchForm::Affine { slope, offset: offset - m })
            })
            .collect();
        Self::new(branches)
    }

    /// Equal-length branches `[i/n, (i+1)/n)` sharing the lift
    /// `slope*x + amplitude*sin(2 pi x)`, with integer offsets chosen so each
    /// branch image starts in `[0, 1)`.
    pub fn equal_branches(n: usize, slope: f64, amplitude: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidMap("no branches".into()));
        }
        let branches = (0..n)
            .map(|i| {
                let lo = i as f64 / n as f64;
                let hi = if i + 1 == n { 1.0 } else { (i + 1) as f64 / n as f64 };
                let probe = BranchForm::from_parts(slope, 0.0, amplitude);
                let m = probe.lift(lo).floor();
                BranchSpec::new(lo, hi, BranchForm::from_parts(slope, -m, amplitude))
            })
            .collect();
        Self::new(branches)
    }

    /// The doubling map with two half-circle branches.
    pub fn doubling() -> Self {
        Self::equal_branches(2, 2.0, 0.0).expect("doubling map is valid")
    }

    /// `x -> 3x mod 1` declared with two half-circle branches.
    pub fn slope3_two_branch() -> Self {
        Self::equal_branches(2, 3.0, 0.0).expect("slope-3 map is valid")
    }

    /// `x -> 2.5x mod 1` with its three natural branches.
    pub fn slope_2_5() -> Self {
        Self::affine_mod1(2.5, 0.0).expect("slope-2.5 map is valid")
    }

    /// `3x` on `[0, 1/2)`, `2.5x + 0.1` on `[1/2, 1)`.
    pub fn two_slope_wrap() -> Self {
        Self::two_slope(0.5, 3.0, 2.5, 0.1).expect("two-slope wrap map is valid")
    }

    /// `s1*x` on `[0, p)`, `s2*x + c` on `[p, 1)`.
    pub fn two_slope(p: f64, s1: f64, s2: f64, c: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidMap(format!("breakpoint {p} outside (0, 1)")));
        }
        let m = (s2 * p + c).floor();
        Self::new(vec![
            BranchSpec::new(0.0, p, BranchForm::Affine { slope: s1, offset: 0.0 }),
            BranchSpec::new(p, 1.0, BranchForm::Affine { slope: s2, offset: c - m }),
        ])
    }

    /// `x -> slope*x + amplitude*sin(2 pi x)` with two half-circle branches.
    pub fn sine_perturbed(slope: f64, amplitude: f64) -> Result<Self> {
        Self::equal_branches(2, slope, amplitude)
    }

    pub fn branches(&self) -> &[BranchSpec] {
        &self.branches
    }

    pub fn num_branches(&self) -> usize {
        self.branches.len()
    }

    /// Whether the map is continuous on the circle.
    pub fn is_continuous(&self) -> bool {
        self.continuous
    }

    /// Index of the branch whose half-open domain contains `x` (wrapped).
    pub fn branch_index(&self, x: f64) -> usize {
        let x = circle::wrap(x);
        self.branches.partition_point(|b| b.lo <= x).saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = circle::wrap(x);
        circle::wrap(self.branches[self.branch_index(x)].lift(x))
    }

    /// `(f'(x), f''(x))` using the branch containing `x`.
    pub fn derivs(&self, x: f64) -> (f64, f64) {
        let x = circle::wrap(x);
        let b = &self.branches[self.branch_index(x)];
        (b.form.deriv(x), b.form.second(x))
    }

    /// All preimages of `y`, one per pair (branch, lift of `y` inside the
    /// half-open branch image). A branch whose image is longer than the
    /// circle contributes several preimages.
    pub fn inverse_branches(&self, y: f64) -> Result<Vec<Preimage>> {
        let mut out = Vec::with_capacity(self.branches.len() + 1);
        self.for_each_preimage(y, |p| out.push(p))?;
        Ok(out)
    }

    /// Callback form of [`inverse_branches`](Self::inverse_branches).
    #[inline]
    pub fn for_each_preimage(&self, y: f64, mut visit: impl FnMut(Preimage)) -> Result<()> {
        let y = circle::wrap(y);
        for (i, (b, &(l0, l1))) in self.branches.iter().zip(&self.images).enumerate() {
            let mut k = (l0 - y).ceil() - 1.0;
            while y + k < l1 {
                let target = y + k;
                if target >= l0 {
                    let x = b
                        .inverse_lift(target)
                        .ok_or(Error::RootFinding { branch: i, y })?;
                    // keep the half-open domain convention
                    let x = if x >= b.hi { b.hi.next_down().max(b.lo) } else { x };
                    visit(Preimage {
                        branch: i,
                        x,
                        deriv: b.form.deriv(x).abs(),
                    });
                }
                k += 1.0;
            }
        }
        Ok(())
    }

    /// Points where left and right limits of the map differ on the circle.
    pub fn discontinuities(&self) -> Vec<f64> {
        let n = self.branches.len();
        (0..n)
            .filter_map(|i| {
                let prev = &self.branches[(i + n - 1) % n];
                let cur = &self.branches[i];
                let left = prev.lift(prev.hi);
                let right = cur.lift(cur.lo);
                (circle::dist(left, right) > CONTINUITY_TOL).then_some(cur.lo)
            })
            .collect()
    }

    /// Branch endpoints, used as the marked points of the map.
    pub fn marked_points(&self) -> Vec<f64> {
        self.branches.iter().map(|b| b.lo).collect()
    }

    /// Minimal circular gap between consecutive marked points.
    pub fn marked_gap(&self) -> f64 {
        self.branches.iter().map(BranchSpec::len).fold(f64::INFINITY, f64::min)
    }

    /// `lambda(f) = min over branches of inf |f'|`.
    pub fn lambda(&self) -> f64 {
        self.branches
            .iter()
            .map(|b| b.deriv_range().0)
            .fold(f64::INFINITY, f64::min)
    }

    /// Fails unless `lambda(f) > 2`, the expansion needed by the
    /// piecewise machinery.
    pub fn require_strong_expansion(&self) -> Result<()> {
        let lambda = self.lambda();
        if lambda > 2.0 {
            Ok(())
        } else {
            Err(Error::Precondition(format!("piecewise mode needs lambda > 2, got {lambda}")))
        }
    }

    /// Copy with every slope shifted by `dslope` and every amplitude by
    /// `damp`; domains and offsets are kept.
    pub fn perturbed(&self, dslope: f64, damp: f64) -> Result<Self> {
        let branches = self
            .branches
            .iter()
            .map(|b| {
                let f = b.form;
                BranchSpec::new(
                    b.lo,
                    b.hi,
                    BranchForm::from_parts(f.slope() + dslope, f.offset(), f.amplitude() + damp),
                )
            })
            .collect();
        Self::new(branches)
    }

    pub fn analyze(&self) -> MapAnalysis {
        let mut inf_d = f64::INFINITY;
        let mut sup_d: f64 = 0.0;
        let mut sup_2: f64 = 0.0;
        let mut boundary_term: f64 = 0.0;
        for b in &self.branches {
            let (lo, hi) = b.deriv_range();
            inf_d = inf_d.min(lo);
            sup_d = sup_d.max(hi);
            sup_2 = sup_2.max(b.second_sup());
            boundary_term = boundary_term.max((1.0 / lo) / b.len());
        }
        let omega = self.discontinuities();
        let d_omega = match omega.len() {
            0 => None,
            1 => Some(1.0),
            n => Some(
                (0..n)
                    .map(|i| circle::wrap(omega[(i + 1) % n] - omega[i]))
                    .map(|g| if g == 0.0 { 1.0 } else { g })
                    .fold(f64::INFINITY, f64::min),
            ),
        };
        MapAnalysis {
            lambda_min: inf_d,
            m0: sup_d,
            a: sup_2 / (inf_d * inf_d) + 2.0 * boundary_term,
            c1: sup_2 / inf_d,
            omega,
            d_omega,
        }
    }
}

/// Pointwise and global analytic quantities of a map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapAnalysis {
    /// `inf |f'|`
    pub lambda_min: f64,
    /// `sup |f'|`
    #[serde(rename = "M0")]
    pub m0: f64,
    /// Lasota-Yorke coefficient `A(f)`.
    #[serde(rename = "A")]
    pub a: f64,
    /// Upper bound on the Lipschitz constant of `log |f'|`.
    #[serde(rename = "C1")]
    pub c1: f64,
    /// Genuine discontinuity points.
    pub omega: Vec<f64>,
    /// Minimal circular gap between discontinuities; `None` for continuous maps.
    pub d_omega: Option<f64>,
}

/// Smallest `eps` with `f` in the `eps`-neighborhood of `g`.
///
/// Marked points (branch endpoints) are matched in order and `f` is
/// compared to `g` after the affine reparametrization that carries each
/// marked interval of `g` onto the corresponding interval of `f`. The
/// C² norm is the maximum of the sup norms of the value (taken on the
/// circle), first and second derivative differences. Returns `None`
/// (incomparable) when branch counts differ or the distance reaches a
/// quarter of the marked gap of `g`.
pub fn neighborhood_distance(f: &PiecewiseMap, g: &PiecewiseMap) -> Option<f64> {
    if f.num_branches() != g.num_branches() {
        return None;
    }
    let mut eps: f64 = 0.0;
    for (fb, gb) in f.branches.iter().zip(&g.branches) {
        eps = eps.max(circle::dist(fb.lo, gb.lo));
    }
    for (fb, gb) in f.branches.iter().zip(&g.branches) {
        let scale = fb.len() / gb.len();
        for j in 0..NEIGHBORHOOD_GRID {
            let t = j as f64 / (NEIGHBORHOOD_GRID - 1) as f64;
            let x = gb.lo + t * gb.len();
            let xi = fb.lo + t * fb.len();
            let h0 = circle::dist(fb.lift(xi), gb.lift(x));
            let h1 = (fb.form.deriv(xi) * scale - gb.form.deriv(x)).abs();
            let h2 = (fb.form.second(xi) * scale * scale - gb.form.second(x)).abs();
            eps = eps.max(h0).max(h1).max(h2);
        }
    }
    (eps < 0.25 * g.marked_gap()).then_some(eps)
}
