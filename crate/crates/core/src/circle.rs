//! Arithmetic on the unit circle `[0, 1)` with endpoints identified.

/// Reduces `v` to `[0, 1)`.
#[inline]
pub fn wrap(v: f64) -> f64 {
    let r = v.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Signed representative of `a - b` in `[-1/2, 1/2]`.
#[inline]
pub fn signed_diff(a: f64, b: f64) -> f64 {
    let d = a - b;
    d - d.round()
}

/// Circular distance between two points.
#[inline]
pub fn dist(a: f64, b: f64) -> f64 {
    signed_diff(a, b).abs()
}

/// True when the union of the open arcs `(lo, hi)` (lifted coordinates,
/// `hi >= lo`) covers every point of the circle with at least `margin` to
/// spare on each side.
pub fn arcs_cover(arcs: &[(f64, f64)], margin: f64) -> bool {
    let mut pieces: Vec<(f64, f64)> = Vec::new();
    for &(lo, hi) in arcs {
        let (lo, hi) = (lo + margin, hi - margin);
        if hi - lo >= 1.0 {
            return true;
        }
        if hi < lo {
            continue;
        }
        let shift = lo.floor();
        let (lo, hi) = (lo - shift, hi - shift);
        if hi > 1.0 {
            pieces.push((lo, 1.0));
            pieces.push((0.0, hi - 1.0));
        } else {
            pieces.push((lo, hi));
        }
    }
    pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut reach = 0.0;
    for (lo, hi) in pieces {
        if lo > reach {
            return false;
        }
        reach = f64::max(reach, hi);
        if reach >= 1.0 {
            return true;
        }
    }
    false
}
