mod common;

use offsim::enkf::{analyze, analyze_with, Ensemble, Localization, PartialObservation};
use offsim::grid::{make_grid, GridLevel, StateVector};
use proptest::prelude::*;

/// Level, members and a strictly increasing observation set.
fn case() -> impl Strategy<Value = (u32, Vec<Vec<f64>>, Vec<usize>, Vec<f64>)> {
    (1u32..=3, prop::sample::select(vec![3usize, 8, 50]))
        .prop_flat_map(|(level, n_e)| {
            let n = make_grid(level).unwrap().n_points();
            (
                Just(level),
                prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n), n_e),
                prop::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n.min(20)),
            )
        })
        .prop_flat_map(|(level, members, positions)| {
            let m = positions.len();
            (Just(level), Just(members), Just(positions), prop::collection::vec(-1.0f64..1.0, m))
        })
}

fn ensemble(level: GridLevel, members: &[Vec<f64>]) -> Ensemble {
    Ensemble::new(members.iter().map(|m| StateVector::new(level, m.clone()).unwrap()).collect(), 1).unwrap()
}

fn worst_relative(got: &Ensemble, want: &[Vec<f64>], before: &[Vec<f64>]) -> f64 {
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for ((g, w), b) in got.members().iter().zip(want).zip(before) {
        for i in 0..w.len() {
            diff = diff.max((g[i] - w[i]).abs());
            scale = scale.max((w[i] - b[i]).abs());
        }
    }
    diff / scale.max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn gram_route_matches_dense_covariance((level, members, positions, values) in case()) {
        let g = make_grid(level).unwrap();
        let obs = PartialObservation::new(positions.iter().copied().zip(values.iter().copied()).collect(), g.n_points()).unwrap();
        let got = analyze(&ensemble(g, &members), &obs).unwrap();
        let want = common::dense_analysis(g, &members, &positions, &values, None);
        let err = worst_relative(&got, &want, &members);
        prop_assert!(err <= 1e-10, "relative error {err:e}");
    }

    #[test]
    fn tapered_route_matches_dense_covariance((level, members, positions, values) in case(), hw in 0.75f64..3.0) {
        let g = make_grid(level).unwrap();
        let obs = PartialObservation::new(positions.iter().copied().zip(values.iter().copied()).collect(), g.n_points()).unwrap();
        let got = analyze_with(&ensemble(g, &members), &obs, Localization::GaspariCohn { half_width: hw }).unwrap();
        let want = common::dense_analysis(g, &members, &positions, &values, Some(hw));
        let err = worst_relative(&got, &want, &members);
        prop_assert!(err <= 1e-10, "relative error {err:e}");
    }
}

#[test]
fn single_perfect_observation_is_reproduced_exactly() {
    let g = make_grid(2).unwrap();
    let p = g.index(2, 2);
    for n_e in [3, 8, 50] {
        let members: Vec<Vec<f64>> = (0..n_e)
            .map(|j| (0..g.n_points()).map(|i| ((i * 31 + j * 17) % 23) as f64 / 23.0).collect())
            .collect();
        let u = 0.123456789;
        let obs = PartialObservation::new(vec![(p, u)], g.n_points()).unwrap();
        let out = analyze(&ensemble(g, &members), &obs).unwrap();
        assert!(out.members().iter().all(|m| m[p] == u));
    }
}

#[test]
fn taper_oracle_agrees_with_library() {
    for k in 0..=250 {
        let z = k as f64 / 100.0;
        assert!((common::taper(z) - offsim::enkf::gaspari_cohn(z)).abs() < 1e-14, "z = {z}");
    }
}
