mod common;

use offsim::grid::{make_grid, StateVector};
use offsim::solvers::{ModelKind, Stepper};
use proptest::prelude::*;

fn max_error(a: &StateVector, b: &StateVector) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn scaled(s: &StateVector, k: f64) -> StateVector {
    StateVector::new(s.level(), s.values().iter().map(|v| v * k).collect()).unwrap()
}

#[test]
fn ftcs_mode_decays_by_discrete_factor() {
    for level in 2..=6 {
        let g = make_grid(level).unwrap();
        let r = 0.2;
        let dt = r * g.dx() * g.dx();
        let stepper = Stepper::new(ModelKind::FtcsExplicit, g, 1.0, dt).unwrap();
        let u0 = common::eigenmode(g);
        let got = stepper.advance(&u0, 10).unwrap();
        let want = scaled(&u0, common::ftcs_factor(g, r).powi(10));
        assert!(max_error(&got, &want) < 1e-13, "level {level}");
    }
}

#[test]
fn adi_mode_decays_by_discrete_factor() {
    for (level, r) in [(3, 0.5), (4, 4.0), (5, 100.0)] {
        let g = make_grid(level).unwrap();
        let dt = r * g.dx() * g.dx();
        let stepper = Stepper::new(ModelKind::AdiCrankNicolson, g, 1.0, dt).unwrap();
        let u0 = common::eigenmode(g);
        let got = stepper.advance(&u0, 7).unwrap();
        let want = scaled(&u0, common::adi_factor(g, r).powi(7));
        assert!(max_error(&got, &want) < 1e-12, "level {level}, r {r}");
    }
}

/// Max error against the continuous mode at t = 0.05 with r = 0.2 fixed.
fn ftcs_error(level: u32) -> f64 {
    let g = make_grid(level).unwrap();
    let dt = 0.2 * g.dx() * g.dx();
    let steps = (0.05 / dt).round() as usize;
    let stepper = Stepper::new(ModelKind::FtcsExplicit, g, 1.0, dt).unwrap();
    let u0 = common::eigenmode(g);
    let got = stepper.advance(&u0, steps).unwrap();
    max_error(&got, &scaled(&u0, common::continuous_decay(1.0, steps as f64 * dt)))
}

#[test]
fn ftcs_is_second_order_in_space() {
    let e: Vec<f64> = (4..=6).map(ftcs_error).collect();
    for w in e.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.8, "observed order {order}");
    }
}

/// Error of ADI against the semi-discrete solution after `steps` steps to t = 0.05.
fn adi_time_error(steps: usize) -> f64 {
    let g = make_grid(5).unwrap();
    let dt = 0.05 / steps as f64;
    let stepper = Stepper::new(ModelKind::AdiCrankNicolson, g, 1.0, dt).unwrap();
    let u0 = common::eigenmode(g);
    let got = stepper.advance(&u0, steps).unwrap();
    max_error(&got, &scaled(&u0, common::semi_discrete_decay(g, 1.0, 0.05)))
}

#[test]
fn adi_is_second_order_in_time() {
    let e: Vec<f64> = [8, 16, 32].into_iter().map(adi_time_error).collect();
    for w in e.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.9, "observed order {order}");
    }
}

fn l2(s: &StateVector) -> f64 {
    s.values().iter().map(|v| v * v).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adi_never_grows_at_large_ratio(values in prop::collection::vec(-1.0f64..1.0, 33 * 33)) {
        let g = make_grid(5).unwrap();
        let mut u = StateVector::new(g, values).unwrap();
        for i in 0..g.n_points() {
            if g.is_boundary(i) {
                u[i] = 0.0;
            }
        }
        let dt = 100.0 * g.dx() * g.dx();
        let stepper = Stepper::new(ModelKind::AdiCrankNicolson, g, 1.0, dt).unwrap();
        let mut norm = l2(&u);
        for _ in 0..20 {
            u = stepper.step(&u).unwrap();
            let next = l2(&u);
            prop_assert!(u.is_finite());
            prop_assert!(next <= norm * (1.0 + 1e-12));
            norm = next;
        }
    }

    #[test]
    fn ftcs_respects_maximum_principle(values in prop::collection::vec(-1.0f64..1.0, 17 * 17), r in 0.01f64..0.25) {
        let g = make_grid(4).unwrap();
        let u = StateVector::new(g, values).unwrap();
        let dt = r * g.dx() * g.dx();
        let next = Stepper::new(ModelKind::FtcsExplicit, g, 1.0, dt).unwrap().step(&u).unwrap();
        prop_assert!(next.max_abs() <= u.max_abs() + 1e-15);
    }
}
