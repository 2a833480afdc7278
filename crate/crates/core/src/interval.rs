//! Solution sets of quadratic inequalities and sorted unions of closed
//! intervals.
//!
//! Every truncation set is an intersection of sets of the form
//! `{phi : a (phi - center)^2 + b (phi - center) + c <= 0}`. Working in the
//! shifted variable keeps coefficients small when they are built around the
//! observed statistic.

use std::fmt;

use serde::de::{self, SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Adjacent intervals closer than this are merged.
pub const MERGE_TOL: f64 = 1e-12;
/// Closed-endpoint slack used by [`contains`].
pub const ENDPOINT_TOL: f64 = 1e-10;

/// `a (phi - center)^2 + b (phi - center) + c <= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticInequality {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    #[serde(default)]
    pub center: f64,
}

impl QuadraticInequality {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c, center: 0.0 }
    }

    pub fn centered(a: f64, b: f64, c: f64, center: f64) -> Self {
        Self { a, b, c, center }
    }

    pub fn eval(&self, phi: f64) -> f64 {
        let s = phi - self.center;
        (self.a * s + self.b) * s + self.c
    }

    /// Does not depend on `phi` at all.
    pub fn is_constant(&self) -> bool {
        self.a == 0.0 && self.b == 0.0
    }
}

/// Sorted, disjoint union of closed intervals with `lower < upper`. Endpoints
/// may be infinite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalUnion {
    intervals: Vec<(f64, f64)>,
}

impl IntervalUnion {
    pub fn empty() -> Self {
        Self { intervals: Vec::new() }
    }

    pub fn real_line() -> Self {
        Self { intervals: vec![(f64::NEG_INFINITY, f64::INFINITY)] }
    }

    pub fn interval(lower: f64, upper: f64) -> Self {
        Self::from_intervals(vec![(lower, upper)])
    }

    /// Canonicalize an arbitrary list of intervals: drop empty or degenerate
    /// pieces, sort, and merge overlapping or nearly touching ones.
    pub fn from_intervals(mut raw: Vec<(f64, f64)>) -> Self {
        raw.retain(|&(lo, hi)| !lo.is_nan() && !hi.is_nan() && lo < hi);
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (lo, hi) in raw {
            if let Some(last) = out.last_mut() {
                if lo <= last.1 + MERGE_TOL * last.1.abs().max(1.0) {
                    last.1 = last.1.max(hi);
                    continue;
                }
            }
            out.push((lo, hi));
        }
        Self { intervals: out }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn is_real_line(&self) -> bool {
        self.intervals == [(f64::NEG_INFINITY, f64::INFINITY)]
    }

    /// Finite endpoints in increasing order.
    pub fn finite_endpoints(&self) -> Vec<f64> {
        self.intervals.iter().flat_map(|&(lo, hi)| [lo, hi]).filter(|v| v.is_finite()).collect()
    }

    pub fn contains(&self, phi: f64) -> bool {
        contains(self, phi)
    }

    pub fn intersect(&self, other: &IntervalUnion) -> IntervalUnion {
        intersect_all(&[self.clone(), other.clone()])
    }

    /// `self ∩ (-inf, t]`.
    pub fn clip_above(&self, t: f64) -> IntervalUnion {
        self.intersect(&IntervalUnion::interval(f64::NEG_INFINITY, t))
    }

    /// `true` when every point of `self` lies in `other`.
    pub fn is_subset_of(&self, other: &IntervalUnion) -> bool {
        self.intersect(other) == *self
    }
}

impl fmt::Display for IntervalUnion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.intervals.is_empty() {
            return f.write_str("∅");
        }
        let parts: Vec<String> = self.intervals.iter().map(|(lo, hi)| format!("[{lo}, {hi}]")).collect();
        f.write_str(&parts.join(" ∪ "))
    }
}

/// Solution set of a quadratic inequality.
pub fn solve_quadratic(qi: &QuadraticInequality) -> Result<IntervalUnion> {
    let QuadraticInequality { a, b, c, center } = *qi;
    if !(a.is_finite() && b.is_finite() && c.is_finite() && center.is_finite()) {
        return Err(Error::invalid(format!("non-finite quadratic coefficients ({a}, {b}, {c}) at {center}")));
    }
    let shift = |s: f64| s + center;
    let scale = b.abs().max(c.abs()).max(1.0);

    if a.abs() <= 1e-12 * scale {
        if b.abs() <= 1e-12 * c.abs().max(1.0) {
            return Ok(if c <= 0.0 { IntervalUnion::real_line() } else { IntervalUnion::empty() });
        }
        let root = shift(-c / b);
        return Ok(if b > 0.0 {
            IntervalUnion::interval(f64::NEG_INFINITY, root)
        } else {
            IntervalUnion::interval(root, f64::INFINITY)
        });
    }

    let disc = b * b - 4.0 * a * c;
    let disc_tol = 1e-12 * (b * b + (4.0 * a * c).abs());
    if disc < -disc_tol || disc.abs() <= disc_tol {
        // No real roots, or a tangency: the sign of `a` decides everything up
        // to a single point of zero Gaussian mass.
        return Ok(if a > 0.0 { IntervalUnion::empty() } else { IntervalUnion::real_line() });
    }
    let sq = disc.sqrt();
    let t = -0.5 * (b + b.signum() * sq);
    let (mut r1, mut r2) = if t == 0.0 {
        // b == 0 and c == 0 cannot reach here (disc would be 0), so t == 0
        // only when b == 0: roots are +/- sqrt(-c/a).
        let r = (-c / a).sqrt();
        (-r, r)
    } else {
        (t / a, c / t)
    };
    if r1 > r2 {
        std::mem::swap(&mut r1, &mut r2);
    }
    let (r1, r2) = (shift(r1), shift(r2));
    Ok(if a > 0.0 {
        IntervalUnion::interval(r1, r2)
    } else {
        IntervalUnion::from_intervals(vec![(f64::NEG_INFINITY, r1), (r2, f64::INFINITY)])
    })
}

/// Intersection of any number of unions by a single sweep over all endpoints.
pub fn intersect_all(sets: &[IntervalUnion]) -> IntervalUnion {
    if sets.is_empty() {
        return IntervalUnion::real_line();
    }
    if sets.iter().any(IntervalUnion::is_empty) {
        return IntervalUnion::empty();
    }
    let need = sets.len() as i64;
    // (coordinate, delta); openings sort before closings at the same point so
    // closed intervals that touch overlap in that point.
    let mut events: Vec<(f64, i64)> = Vec::with_capacity(sets.iter().map(|s| 2 * s.intervals.len()).sum());
    for s in sets {
        for &(lo, hi) in &s.intervals {
            events.push((lo, 1));
            events.push((hi, -1));
        }
    }
    events.sort_by(|x, y| x.0.total_cmp(&y.0).then(y.1.cmp(&x.1)));
    let mut out = Vec::new();
    let mut depth = 0i64;
    let mut start = f64::NAN;
    for (coord, delta) in events {
        let before = depth;
        depth += delta;
        if before < need && depth == need {
            start = coord;
        } else if before == need && depth < need {
            out.push((start, coord));
        }
    }
    IntervalUnion::from_intervals(out)
}

/// Membership with closed endpoints and a small absolute slack scaled by the
/// endpoint magnitude.
pub fn contains(s: &IntervalUnion, phi: f64) -> bool {
    s.intervals.iter().any(|&(lo, hi)| {
        let lo_ok = lo == f64::NEG_INFINITY || phi >= lo - ENDPOINT_TOL * lo.abs().max(1.0);
        let hi_ok = hi == f64::INFINITY || phi <= hi + ENDPOINT_TOL * hi.abs().max(1.0);
        lo_ok && hi_ok
    })
}

/// Solve every inequality and intersect the solution sets.
pub fn solve_system(constraints: &[QuadraticInequality]) -> Result<IntervalUnion> {
    let sets = constraints.iter().map(solve_quadratic).collect::<Result<Vec<_>>>()?;
    Ok(intersect_all(&sets))
}

// JSON form: `[[lower, upper], ...]` with "-inf" / "inf" for infinite ends.

struct Endpoint(f64);

impl Serialize for Endpoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Endpoint;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or \"inf\" / \"-inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Endpoint, E> {
                Ok(Endpoint(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Endpoint, E> {
                Ok(Endpoint(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Endpoint, E> {
                Ok(Endpoint(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Endpoint, E> {
                match v {
                    "inf" | "+inf" => Ok(Endpoint(f64::INFINITY)),
                    "-inf" => Ok(Endpoint(f64::NEG_INFINITY)),
                    other => Err(E::custom(format!("unexpected endpoint '{other}'"))),
                }
            }
        }
        d.deserialize_any(V)
    }
}

impl Serialize for IntervalUnion {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.intervals.len()))?;
        for &(lo, hi) in &self.intervals {
            seq.serialize_element(&(Endpoint(lo), Endpoint(hi)))?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for IntervalUnion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = IntervalUnion;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an array of [lower, upper] pairs")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<IntervalUnion, A::Error> {
                let mut raw = Vec::new();
                while let Some((lo, hi)) = seq.next_element::<(Endpoint, Endpoint)>()? {
                    raw.push((lo.0, hi.0));
                }
                Ok(IntervalUnion::from_intervals(raw))
            }
        }
        d.deserialize_seq(V)
    }
}
