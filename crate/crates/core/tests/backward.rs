use proptest::prelude::*;
use qbsde_core::bsde::{solve_deterministic, OdeOptions};
use qbsde_core::constraints::{ConstraintSet, Family};
use qbsde_core::drivers::{UtilityDriver, UtilityFamily, UtilityProblem};
use qbsde_core::market::{MarketModel, TimeGrid};

fn market() -> MarketModel {
    MarketModel::constant(1.0, 0.01, &[0.06], &[vec![0.2]]).unwrap()
}

fn boxed(lower: f64, upper: f64) -> ConstraintSet {
    ConstraintSet::new(1, Family::Box { lower: vec![lower], upper: vec![upper] }).unwrap()
}

fn driver(family: UtilityFamily) -> UtilityDriver {
    let p = UtilityProblem::new(family, 0.8, 0.05, 1.0, ConstraintSet::full(1), boxed(0.0, 0.5)).unwrap();
    UtilityDriver::new(market(), p).unwrap()
}

const FIXED: OdeOptions = OdeOptions {
    tolerance: f64::INFINITY,
    max_depth: 0,
};

#[test]
fn fourth_order_without_step_control() {
    let d = driver(UtilityFamily::Log);
    let y0 = |n: usize| solve_deterministic(&d, 0.0, &TimeGrid::uniform(1.0, n).unwrap(), &FIXED).unwrap().y0();
    let values: Vec<f64> = [2, 4, 8, 16, 32].into_iter().map(y0).collect();
    let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    for w in diffs.windows(2) {
        assert!(w[0] / w[1] >= 3.5, "{diffs:?}");
    }
}

#[test]
fn terminal_value_is_exact() {
    for family in [UtilityFamily::Exponential { gamma: 2.0 }, UtilityFamily::Power { gamma: -1.0 }] {
        let s = solve_deterministic(&driver(family), 0.3, &TimeGrid::uniform(1.0, 16).unwrap(), &OdeOptions::default()).unwrap();
        assert_eq!(s.y_at(16, &[0.0]), 0.3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn larger_terminal_never_lowers_y0(
        a in -2.0..2.0f64,
        bump in 0.0..1.0f64,
        which in 0usize..4,
    ) {
        let family = [
            UtilityFamily::Exponential { gamma: 1.0 },
            UtilityFamily::Log,
            UtilityFamily::Power { gamma: 0.5 },
            UtilityFamily::Power { gamma: -1.0 },
        ][which];
        let d = driver(family);
        let grid = TimeGrid::uniform(1.0, 32).unwrap();
        let low = solve_deterministic(&d, a, &grid, &OdeOptions::default()).unwrap().y0();
        let high = solve_deterministic(&d, a + bump, &grid, &OdeOptions::default()).unwrap().y0();
        prop_assert!(high >= low, "{family:?}: {low} then {high}");
    }
}
