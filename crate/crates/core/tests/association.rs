mod common;

use common::*;

use nalgebra::{Matrix4, Vector4};
use proptest::prelude::*;

use fleet_noise::association::{associate, hungarian, CostMatrix, TrackId};
use fleet_noise::fusion::TrackEstimate;
use fleet_noise::sensing::Detection;
use fleet_noise::world::VehicleId;

fn matrix(rows: usize, cols: usize, values: &[f64]) -> CostMatrix {
    CostMatrix::new(rows, cols, values[..rows * cols].to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn hungarian_matches_exhaustive_search(
        rows in 1usize..=7,
        cols in 1usize..=7,
        values in prop::collection::vec(0.0f64..100.0, 49),
    ) {
        let cost = matrix(rows, cols, &values);
        let got = hungarian(&cost);
        let (best, _) = brute_force(&cost);
        prop_assert_eq!(got.len(), rows.min(cols));
        prop_assert!((cost.total(&got) - best).abs() <= 1e-9 * best.max(1.0));
    }

    #[test]
    fn hungarian_breaks_ties_like_exhaustive_search(
        rows in 1usize..=6,
        cols in 1usize..=6,
        values in prop::collection::vec(0u8..4, 36),
    ) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        let cost = matrix(rows, cols, &values);
        let (_, expected) = brute_force(&cost);
        prop_assert_eq!(hungarian(&cost), expected);
    }
}

fn track(id: u64, x: f64, y: f64) -> TrackEstimate {
    TrackEstimate { track: TrackId(id), x: Vector4::new(x, y, 0.0, 0.0), p: Matrix4::identity(), last_update: 0 }
}

fn detection(x: f64, y: f64) -> Detection {
    Detection { observer: VehicleId(0), target: VehicleId(0), z: [x, y], tick: 0 }
}

fn points() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-40.0f64..40.0, -40.0f64..40.0), 0..7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn wider_gate_never_matches_fewer(ts in points(), ds in points(), g in 0.5f64..30.0, extra in 0.0f64..30.0) {
        let tracks: Vec<_> = ts.iter().enumerate().map(|(i, &(x, y))| track(i as u64, x, y)).collect();
        let dets: Vec<_> = ds.iter().map(|&(x, y)| detection(x, y)).collect();
        let narrow = associate(&tracks, &dets, g);
        let wide = associate(&tracks, &dets, g + extra);
        prop_assert!(wide.matched.len() >= narrow.matched.len());
    }

    #[test]
    fn assignment_partitions_tracks_and_detections(ts in points(), ds in points(), g in 0.5f64..30.0) {
        let tracks: Vec<_> = ts.iter().enumerate().map(|(i, &(x, y))| track(i as u64, x, y)).collect();
        let dets: Vec<_> = ds.iter().map(|&(x, y)| detection(x, y)).collect();
        let a = associate(&tracks, &dets, g);
        let mut seen_t: Vec<TrackId> = a.matched.iter().map(|m| m.0).chain(a.unmatched_tracks.iter().copied()).collect();
        let mut seen_d: Vec<usize> = a.matched.iter().map(|m| m.1).chain(a.unmatched_detections.iter().copied()).collect();
        seen_t.sort();
        seen_d.sort();
        prop_assert_eq!(seen_t, tracks.iter().map(|t| t.track).collect::<Vec<_>>());
        prop_assert_eq!(seen_d, (0..dets.len()).collect::<Vec<_>>());
        for (t, d) in &a.matched {
            let tr = tracks.iter().find(|x| x.track == *t).unwrap();
            prop_assert!((tr.position() - dets[*d].position()).norm() <= g);
        }
    }

    #[test]
    fn permuting_detections_permutes_the_matching(ts in points(), ds in points(), g in 0.5f64..30.0, rot in 0usize..7) {
        let tracks: Vec<_> = ts.iter().enumerate().map(|(i, &(x, y))| track(i as u64, x, y)).collect();
        let dets: Vec<_> = ds.iter().map(|&(x, y)| detection(x, y)).collect();
        let n = dets.len().max(1);
        let perm: Vec<usize> = (0..dets.len()).map(|i| (i + rot) % n).collect();
        let permuted: Vec<_> = perm.iter().map(|&i| dets[i]).collect();
        let a = associate(&tracks, &dets, g);
        let b = associate(&tracks, &permuted, g);
        let total = |m: &[(TrackId, usize)], ds: &[Detection]| -> f64 {
            m.iter()
                .map(|(t, d)| (tracks.iter().find(|x| x.track == *t).unwrap().position() - ds[*d].position()).norm())
                .sum()
        };
        prop_assert_eq!(a.matched.len(), b.matched.len());
        prop_assert!((total(&a.matched, &dets) - total(&b.matched, &permuted)).abs() < 1e-9);
    }
}

#[test]
fn out_of_gate_pair_is_left_unmatched() {
    let a = associate(&[track(0, 0.0, 0.0)], &[detection(100.0, 0.0)], 5.0);
    assert!(a.matched.is_empty());
    assert_eq!(a.unmatched_tracks, vec![TrackId(0)]);
    assert_eq!(a.unmatched_detections, vec![0]);
    let b = associate(&[track(0, 0.0, 0.0)], &[detection(0.5, 0.0)], 5.0);
    assert_eq!(b.matched, vec![(TrackId(0), 0)]);
}
