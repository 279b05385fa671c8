//! Pointwise constraint sets for investment (`P`) and consumption (`C`).
//!
//! A [`ConstraintSet`] is a closed set family evaluated at each time `t`:
//! either a single [`Family`] or a piecewise-constant schedule of families.
//! Pointwise closed families are automatically stable under predictable
//! patching and a.e. limits, which is what the optimal-strategy results need.

mod consumption;
mod polytope;

pub use consumption::{argmax_consumption_log, argmax_consumption_power, ConsumptionChoice};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{dot, norm};

/// Absolute tolerance for set membership.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

/// Polytope projection enumerates faces through an active set; dimensions
/// above this are rejected at construction.
pub const MAX_POLYTOPE_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Family {
    FullSpace,
    /// Coordinate-wise `[lower_i, upper_i]`; infinite endpoints allowed.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// `{p : normal . p <= offset}`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    /// Convex hull of the listed vertices.
    Polytope { vertices: Vec<Vec<f64>> },
    Points { points: Vec<Vec<f64>> },
    Union { members: Vec<Family> },
}

impl Family {
    pub fn is_convex(&self) -> bool {
        match self {
            Family::Points { points } => points.len() == 1,
            Family::Union { members } => members.len() == 1 && members[0].is_convex(),
            _ => true,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSet(m));
        let check_len = |what: &str, len: usize| {
            if len == dim {
                Ok(())
            } else {
                Err(Error::InvalidSet(format!("{what} has dimension {len}, expected {dim}")))
            }
        };
        match self {
            Family::FullSpace => Ok(()),
            Family::Box { lower, upper } => {
                check_len("box lower bound", lower.len())?;
                check_len("box upper bound", upper.len())?;
                for (l, u) in lower.iter().zip(upper) {
                    if l.is_nan() || u.is_nan() || l > u || *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                        return bad(format!("empty box side [{l}, {u}]"));
                    }
                }
                Ok(())
            }
            Family::Ball { center, radius } => {
                check_len("ball center", center.len())?;
                if !(radius.is_finite() && *radius >= 0.0) || center.iter().any(|c| !c.is_finite()) {
                    return bad(format!("ball needs a finite center and radius >= 0, got {radius}"));
                }
                Ok(())
            }
            Family::HalfSpace { normal, offset } => {
                check_len("half-space normal", normal.len())?;
                if !offset.is_finite() || normal.iter().any(|c| !c.is_finite()) || norm(normal) == 0.0 {
                    return bad("half-space needs a finite non-zero normal and finite offset".into());
                }
                Ok(())
            }
            Family::Polytope { vertices } => {
                if vertices.is_empty() {
                    return bad("polytope needs at least one vertex".into());
                }
                if dim > MAX_POLYTOPE_DIM {
                    return bad(format!("polytope dimension {dim} exceeds {MAX_POLYTOPE_DIM}"));
                }
                for v in vertices {
                    check_len("polytope vertex", v.len())?;
                    if v.iter().any(|c| !c.is_finite()) {
                        return bad("polytope vertices must be finite".into());
                    }
                }
                Ok(())
            }
            Family::Points { points } => {
                if points.is_empty() {
                    return bad("point set needs at least one point".into());
                }
                for p in points {
                    check_len("point", p.len())?;
                    if p.iter().any(|c| !c.is_finite()) {
                        return bad("points must be finite".into());
                    }
                }
                Ok(())
            }
            Family::Union { members } => {
                if members.is_empty() {
                    return bad("union needs at least one member".into());
                }
                for m in members {
                    if matches!(m, Family::Union { .. }) {
                        return bad("nested unions are not supported".into());
                    }
                    m.validate(dim)?;
                }
                Ok(())
            }
        }
    }

    fn project(&self, q: &[f64]) -> ProjectionResult {
        match self {
            Family::FullSpace => ProjectionResult::new(q.to_vec(), q, true),
            Family::Box { lower, upper } => {
                let p = q
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(x, (l, u))| x.clamp(*l, *u))
                    .collect();
                ProjectionResult::new(p, q, true)
            }
            Family::Ball { center, radius } => {
                let offset: Vec<f64> = q.iter().zip(center).map(|(a, c)| a - c).collect();
                let d = norm(&offset);
                let p = if d <= *radius {
                    q.to_vec()
                } else {
                    center
                        .iter()
                        .zip(&offset)
                        .map(|(c, o)| c + radius * o / d)
                        .collect()
                };
                ProjectionResult::new(p, q, true)
            }
            Family::HalfSpace { normal, offset } => {
                let excess = dot(normal, q) - offset;
                let p = if excess <= 0.0 {
                    q.to_vec()
                } else {
                    let n2 = dot(normal, normal);
                    q.iter().zip(normal).map(|(x, a)| x - excess / n2 * a).collect()
                };
                ProjectionResult::new(p, q, true)
            }
            Family::Polytope { vertices } => {
                ProjectionResult::new(polytope::nearest_in_hull(vertices, q), q, true)
            }
            Family::Points { points } => {
                let candidates = points
                    .iter()
                    .map(|p| ProjectionResult::new(p.clone(), q, true))
                    .collect();
                pick_nearest(candidates, points.len() == 1)
            }
            Family::Union { members } => {
                let candidates = members.iter().map(|m| m.project(q)).collect();
                pick_nearest(candidates, self.is_convex())
            }
        }
    }

    fn contains(&self, p: &[f64]) -> bool {
        match self {
            Family::FullSpace => true,
            Family::Box { lower, upper } => p
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (l, u))| *x >= l - MEMBERSHIP_TOL && *x <= u + MEMBERSHIP_TOL),
            Family::Points { points } => points.iter().any(|pt| distance(pt, p) <= MEMBERSHIP_TOL),
            Family::Union { members } => members.iter().any(|m| m.contains(p)),
            _ => self.project(p).distance <= MEMBERSHIP_TOL,
        }
    }

    fn scaled(&self, factor: f64) -> Family {
        let mul = |v: &[f64]| v.iter().map(|x| x * factor).collect::<Vec<f64>>();
        match self {
            Family::FullSpace => Family::FullSpace,
            Family::Box { lower, upper } => Family::Box {
                lower: mul(lower),
                upper: mul(upper),
            },
            Family::Ball { center, radius } => Family::Ball {
                center: mul(center),
                radius: radius * factor,
            },
            Family::HalfSpace { normal, offset } => Family::HalfSpace {
                normal: normal.clone(),
                offset: offset * factor,
            },
            Family::Polytope { vertices } => Family::Polytope {
                vertices: vertices.iter().map(|v| mul(v)).collect(),
            },
            Family::Points { points } => Family::Points {
                points: points.iter().map(|v| mul(v)).collect(),
            },
            Family::Union { members } => Family::Union {
                members: members.iter().map(|m| m.scaled(factor)).collect(),
            },
        }
    }

    /// A bounded member of the set, used as the reference point `p_bar`.
    fn designated_member(&self, dim: usize) -> Vec<f64> {
        match self {
            Family::FullSpace => vec![0.0; dim],
            Family::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| 0.0_f64.clamp(*l, *u))
                .collect(),
            Family::Ball { center, .. } => center.clone(),
            Family::HalfSpace { .. } => self.project(&vec![0.0; dim]).nearest,
            Family::Polytope { vertices } => vertices[0].clone(),
            Family::Points { points } => points[0].clone(),
            Family::Union { members } => members[0].designated_member(dim),
        }
    }

    /// The set as a closed interval when it is one-dimensional and convex.
    fn as_interval(&self) -> Option<(f64, f64)> {
        match self {
            Family::FullSpace => Some((f64::NEG_INFINITY, f64::INFINITY)),
            Family::Box { lower, upper } => Some((lower[0], upper[0])),
            Family::Ball { center, radius } => Some((center[0] - radius, center[0] + radius)),
            Family::HalfSpace { normal, offset } => {
                let edge = offset / normal[0];
                if normal[0] > 0.0 {
                    Some((f64::NEG_INFINITY, edge))
                } else {
                    Some((edge, f64::INFINITY))
                }
            }
            Family::Polytope { vertices } => {
                let lo = vertices.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
                let hi = vertices.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
                Some((lo, hi))
            }
            Family::Points { points } if points.len() == 1 => Some((points[0][0], points[0][0])),
            Family::Points { .. } | Family::Union { .. } => None,
        }
    }
}

fn pick_nearest(candidates: Vec<ProjectionResult>, convex: bool) -> ProjectionResult {
    // strict comparison keeps the lowest index on ties
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        if c.distance < candidates[best].distance {
            best = i;
        }
    }
    let winner = &candidates[best];
    let tied_elsewhere = candidates.iter().enumerate().any(|(i, c)| {
        i != best
            && c.distance - winner.distance <= MEMBERSHIP_TOL
            && distance(&c.nearest, &winner.nearest) > MEMBERSHIP_TOL
    });
    ProjectionResult {
        unique: convex || !tied_elsewhere,
        ..winner.clone()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionResult {
    pub nearest: Vec<f64>,
    pub distance: f64,
    /// True when the nearest point is unique (always for convex sets).
    pub unique: bool,
}

impl ProjectionResult {
    fn new(nearest: Vec<f64>, q: &[f64], unique: bool) -> Self {
        let distance = distance(&nearest, q);
        Self {
            nearest,
            distance,
            unique,
        }
    }
}

/// A closed set family, optionally switching family at scheduled times.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSet {
    dim: usize,
    /// `(start time, family)`, starts strictly increasing, first start `<= 0`.
    pieces: Vec<(f64, Family)>,
}

impl ConstraintSet {
    pub fn new(dim: usize, family: Family) -> Result<Self> {
        Self::piecewise(dim, vec![(0.0, family)])
    }

    pub fn full(dim: usize) -> Self {
        Self {
            dim,
            pieces: vec![(0.0, Family::FullSpace)],
        }
    }

    /// A time-dependent family: `pieces[i].1` applies on `[pieces[i].0, pieces[i+1].0)`.
    pub fn piecewise(dim: usize, pieces: Vec<(f64, Family)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSet("dimension must be positive".into()));
        }
        if pieces.is_empty() {
            return Err(Error::InvalidSet("no families given".into()));
        }
        if pieces[0].0 > 0.0 {
            return Err(Error::InvalidSet(format!(
                "schedule must cover t = 0, first piece starts at {}",
                pieces[0].0
            )));
        }
        if pieces.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidSet("schedule start times must increase".into()));
        }
        for (_, f) in &pieces {
            f.validate(dim)?;
        }
        Ok(Self { dim, pieces })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pieces(&self) -> &[(f64, Family)] {
        &self.pieces
    }

    pub fn family_at(&self, t: f64) -> &Family {
        let idx = self.pieces.partition_point(|(s, _)| *s <= t).max(1) - 1;
        &self.pieces[idx].1
    }

    pub fn is_convex(&self) -> bool {
        self.pieces.iter().all(|(_, f)| f.is_convex())
    }

    pub fn is_full(&self) -> bool {
        self.pieces.iter().all(|(_, f)| matches!(f, Family::FullSpace))
    }

    /// Nearest point of the set at time `t` to `q`. Non-convex ties go to the
    /// lowest-indexed point or union member.
    pub fn project(&self, q: &[f64], t: f64) -> ProjectionResult {
        debug_assert_eq!(q.len(), self.dim);
        self.family_at(t).project(q)
    }

    pub fn distance(&self, q: &[f64], t: f64) -> f64 {
        self.project(q, t).distance
    }

    pub fn contains(&self, p: &[f64], t: f64) -> bool {
        self.family_at(t).contains(p)
    }

    /// The pointwise image `{factor * p : p in set}`.
    pub fn scale(&self, factor: f64) -> ConstraintSet {
        assert!(factor > 0.0 && factor.is_finite(), "scale factor must be positive, got {factor}");
        ConstraintSet {
            dim: self.dim,
            pieces: self.pieces.iter().map(|(s, f)| (*s, f.scaled(factor))).collect(),
        }
    }

    /// The bounded reference member `p_bar` at time `t`.
    pub fn designated_member(&self, t: f64) -> Vec<f64> {
        self.family_at(t).designated_member(self.dim)
    }

    /// Sup over `t` of `|p_bar(t)|`.
    pub fn designated_bound(&self) -> f64 {
        self.pieces
            .iter()
            .map(|(_, f)| norm(&f.designated_member(self.dim)))
            .fold(0.0, f64::max)
    }
}
