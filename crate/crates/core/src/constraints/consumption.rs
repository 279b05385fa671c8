//! Pointwise consumption maximizers for the CRRA drivers.
//!
//! Both objectives are strictly concave on the positive half-line, so on an
//! interval the maximizer is the unconstrained optimum clamped to the
//! interval; point sets and unions are searched member by member.

use super::{ConstraintSet, Family};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsumptionChoice {
    pub c: f64,
    pub value: f64,
}

/// Maximizes `weight * log(c) - c` over the consumption set at `t`.
pub fn argmax_consumption_log(set: &ConstraintSet, t: f64, weight: f64) -> Result<ConsumptionChoice> {
    check_scalar(set)?;
    let objective = |c: f64| {
        if c > 0.0 {
            weight * c.ln() - c
        } else {
            f64::NEG_INFINITY
        }
    };
    let on_interval = |lo: f64, hi: f64| (hi > 0.0).then(|| weight.clamp(lo, hi));
    best(set.family_at(t), &objective, &on_interval).ok_or(Error::NoFeasiblePositivePoint { t })
}

/// Maximizes `(alpha / gamma) c^gamma e^y - c` over the consumption set at `t`.
///
/// For `gamma > 0` the point `c = 0` is admissible with `0^gamma / gamma = 0`;
/// for `gamma < 0` only strictly positive points are.
pub fn argmax_consumption_power(
    set: &ConstraintSet,
    t: f64,
    alpha: f64,
    gamma: f64,
    y: f64,
) -> Result<ConsumptionChoice> {
    check_scalar(set)?;
    let scale = alpha / gamma * y.exp();
    let objective = |c: f64| {
        if c > 0.0 {
            scale * c.powf(gamma) - c
        } else if c == 0.0 && gamma > 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    };
    let peak = (alpha * y.exp()).powf(1.0 / (1.0 - gamma));
    let on_interval = |lo: f64, hi: f64| {
        if hi > 0.0 || (hi == 0.0 && gamma > 0.0) {
            Some(peak.clamp(lo, hi))
        } else {
            None
        }
    };
    best(set.family_at(t), &objective, &on_interval).ok_or(Error::NoFeasiblePoint { t })
}

fn check_scalar(set: &ConstraintSet) -> Result<()> {
    if set.dim() == 1 {
        Ok(())
    } else {
        Err(Error::InvalidSet(format!(
            "consumption sets are one-dimensional, got dimension {}",
            set.dim()
        )))
    }
}

fn best(
    family: &Family,
    objective: &dyn Fn(f64) -> f64,
    on_interval: &dyn Fn(f64, f64) -> Option<f64>,
) -> Option<ConsumptionChoice> {
    let candidates: Vec<f64> = match family {
        Family::Points { points } => points.iter().map(|p| p[0]).collect(),
        Family::Union { members } => {
            return members
                .iter()
                .filter_map(|m| best(m, objective, on_interval))
                .fold(None, |acc: Option<ConsumptionChoice>, cand| match acc {
                    Some(a) if a.value >= cand.value => Some(a),
                    _ => Some(cand),
                });
        }
        other => {
            let (lo, hi) = other.as_interval().expect("convex scalar family is an interval");
            on_interval(lo, hi).into_iter().collect()
        }
    };
    let mut out: Option<ConsumptionChoice> = None;
    for c in candidates {
        let value = objective(c);
        if value == f64::NEG_INFINITY || value.is_nan() {
            continue;
        }
        if out.is_none_or(|o| value > o.value) {
            out = Some(ConsumptionChoice { c, value });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interval(lo: f64, hi: f64) -> ConstraintSet {
        ConstraintSet::new(
            1,
            Family::Box {
                lower: vec![lo],
                upper: vec![hi],
            },
        )
        .unwrap()
    }

    fn grid_max(lo: f64, hi: f64, g: impl Fn(f64) -> f64) -> (f64, f64) {
        let n = 200_000;
        (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .map(|c| (c, g(c)))
            .fold((f64::NAN, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
    }

    #[test]
    fn log_unconstrained_closed_form() {
        let r = argmax_consumption_log(&ConstraintSet::full(1), 0.0, 2.0).unwrap();
        assert_eq!(r.c, 2.0);
        assert!((r.value - 2.0 * (2.0f64.ln() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn log_box_clamps_against_grid_search() {
        let r = argmax_consumption_log(&interval(3.0, 5.0), 0.0, 2.0).unwrap();
        let (gc, gv) = grid_max(3.0, 5.0, |c| 2.0 * c.ln() - c);
        assert_eq!(r.c, 3.0);
        assert!((r.c - gc).abs() < 1e-4);
        assert!((r.value - (2.0 * 3.0f64.ln() - 3.0)).abs() < 1e-14);
        assert!(r.value >= gv);
    }

    #[test]
    fn log_point_set() {
        let set = ConstraintSet::new(
            1,
            Family::Points {
                points: vec![vec![1.0], vec![std::f64::consts::E]],
            },
        )
        .unwrap();
        let r = argmax_consumption_log(&set, 0.0, 1.0).unwrap();
        assert_eq!(r.c, 1.0);
        assert_eq!(r.value, -1.0);
    }

    #[test]
    fn log_without_positive_point_fails() {
        let r = argmax_consumption_log(&interval(-2.0, 0.0), 0.3, 1.0);
        assert!(matches!(r, Err(Error::NoFeasiblePositivePoint { t }) if t == 0.3));
        let pts = ConstraintSet::new(
            1,
            Family::Points {
                points: vec![vec![0.0], vec![-1.0]],
            },
        )
        .unwrap();
        assert!(argmax_consumption_log(&pts, 0.0, 1.0).is_err());
    }

    #[test]
    fn power_unconstrained_closed_form() {
        let r = argmax_consumption_power(&ConstraintSet::full(1), 0.0, 1.0, 0.5, 0.0).unwrap();
        assert!((r.c - 1.0).abs() < 1e-15);
        assert!((r.value - 1.0).abs() < 1e-15);
        let r = argmax_consumption_power(&ConstraintSet::full(1), 0.0, 1.0, -1.0, 0.0).unwrap();
        assert!((r.c - 1.0).abs() < 1e-15);
        assert!((r.value + 2.0).abs() < 1e-15);
        // value formula ((1 - g) / g) a^{1/(1-g)} e^{y/(1-g)}
        let (a, g, y) = (0.7, 0.3, 0.4);
        let r = argmax_consumption_power(&ConstraintSet::full(1), 0.0, a, g, y).unwrap();
        let closed = (1.0 - g) / g * a.powf(1.0 / (1.0 - g)) * (y / (1.0 - g)).exp();
        assert!((r.value - closed).abs() < 1e-13);
    }

    #[test]
    fn power_box_clamps_against_grid_search() {
        let r = argmax_consumption_power(&interval(2.0, 3.0), 0.0, 1.0, 0.5, 0.0).unwrap();
        let (gc, gv) = grid_max(2.0, 3.0, |c| 2.0 * c.sqrt() - c);
        assert_eq!(r.c, 2.0);
        assert!((r.c - gc).abs() < 1e-4);
        assert!((r.value - (2.0 * 2.0f64.sqrt() - 2.0)).abs() < 1e-14);
        assert!(r.value >= gv);
    }

    #[test]
    fn power_zero_consumption_rules() {
        let zero = interval(0.0, 0.0);
        let r = argmax_consumption_power(&zero, 0.0, 1.0, 0.5, 0.0).unwrap();
        assert_eq!((r.c, r.value), (0.0, 0.0));
        assert!(matches!(
            argmax_consumption_power(&zero, 0.0, 1.0, -1.0, 0.0),
            Err(Error::NoFeasiblePoint { .. })
        ));
    }

    #[test]
    fn values_sit_between_feasible_point_and_unconstrained() {
        let sets = [interval(0.2, 0.5), interval(1.5, 4.0), interval(0.9, 1.1)];
        for set in &sets {
            for &(w, a, g, y) in &[(0.5, 1.0, 0.5, 0.1), (2.0, 0.3, -2.0, -0.5), (1.0, 2.0, 0.2, 0.0)] {
                let cbar = set.designated_member(0.0)[0];
                let r = argmax_consumption_log(set, 0.0, w).unwrap();
                let free = argmax_consumption_log(&ConstraintSet::full(1), 0.0, w).unwrap();
                assert!(r.value >= w * cbar.ln() - cbar - 1e-15);
                assert!(r.value <= free.value + 1e-15);
                let r = argmax_consumption_power(set, 0.0, a, g, y).unwrap();
                let free = argmax_consumption_power(&ConstraintSet::full(1), 0.0, a, g, y).unwrap();
                assert!(r.value >= a / g * cbar.powf(g) * y.exp() - cbar - 1e-15);
                assert!(r.value <= free.value + 1e-15);
            }
        }
    }

    #[test]
    fn union_picks_best_member() {
        let set = ConstraintSet::new(
            1,
            Family::Union {
                members: vec![
                    Family::Box {
                        lower: vec![0.1],
                        upper: vec![0.5],
                    },
                    Family::Box {
                        lower: vec![1.5],
                        upper: vec![3.0],
                    },
                ],
            },
        )
        .unwrap();
        let r = argmax_consumption_log(&set, 0.0, 1.2).unwrap();
        let left = 1.2 * 0.5f64.ln() - 0.5;
        let right = 1.2 * 1.5f64.ln() - 1.5;
        assert_eq!(r.c, if left > right { 0.5 } else { 1.5 });
    }
}
