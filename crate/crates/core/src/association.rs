//! Track-to-detection assignment with the Hungarian algorithm.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fusion::TrackEstimate;
use crate::sensing::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrackId(pub u64);

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

/// Dense row-major cost matrix; rows are tracks, columns detections.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "cost matrix shape mismatch");
        assert!(
            data.iter().all(|c| c.is_finite() && *c >= 0.0),
            "costs must be finite and non-negative"
        );
        CostMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(r, c)| self.get(r, c)).sum()
    }
}

/// Solves a square assignment problem. Returns the column assigned to each
/// row plus row and column dual potentials.
fn solve_square(n: usize, cost: impl Fn(usize, usize) -> f64) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // Shortest augmenting path with potentials; index 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if col_owner[j] > 0 {
            assign[col_owner[j] - 1] = j - 1;
        }
    }
    (assign, u[1..].to_vec(), v[1..].to_vec())
}

/// Square zero-padded view of a rectangular problem with some rows and
/// columns removed.
struct Reduced<'a> {
    cost: &'a CostMatrix,
    rows: Vec<usize>,
    cols: Vec<usize>,
    n: usize,
}

impl<'a> Reduced<'a> {
    fn new(cost: &'a CostMatrix, skip_rows: &[bool], skip_cols: &[bool]) -> Self {
        let rows: Vec<usize> = (0..cost.rows).filter(|&r| !skip_rows[r]).collect();
        let cols: Vec<usize> = (0..cost.cols).filter(|&c| !skip_cols[c]).collect();
        let n = rows.len().max(cols.len());
        Reduced { cost, rows, cols, n }
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        match (self.rows.get(i), self.cols.get(j)) {
            (Some(&r), Some(&c)) => self.cost.get(r, c),
            _ => 0.0,
        }
    }

    /// Optimal real pairs in original indices, and their total cost.
    fn solve(&self) -> (Vec<(usize, usize)>, f64, Vec<f64>, Vec<f64>) {
        if self.n == 0 {
            return (Vec::new(), 0.0, Vec::new(), Vec::new());
        }
        let (assign, u, v) = solve_square(self.n, |i, j| self.entry(i, j));
        let pairs: Vec<(usize, usize)> = assign
            .iter()
            .enumerate()
            .filter_map(|(i, &j)| Some((*self.rows.get(i)?, *self.cols.get(j)?)))
            .collect();
        let total = self.cost.total(&pairs);
        (pairs, total, u, v)
    }
}

fn tie_tolerance(total: f64) -> f64 {
    1e-9 * total.abs().max(1.0)
}

/// Minimum-cost assignment of `min(rows, cols)` pairs. Among optimal
/// assignments the one whose sorted pair list is lexicographically smallest
/// in `(row, col)` is returned. Pairs are sorted by row.
pub fn hungarian(cost: &CostMatrix) -> Vec<(usize, usize)> {
    if cost.rows == 0 || cost.cols == 0 {
        return Vec::new();
    }
    let no_rows = vec![false; cost.rows];
    let no_cols = vec![false; cost.cols];
    let full = Reduced::new(cost, &no_rows, &no_cols);
    let (mut current, best, u, v) = full.solve();
    let tol = tie_tolerance(best);

    // Reduced cost w.r.t. the optimal duals; only tight edges can appear in
    // an optimal assignment.
    let slack = |r: usize, c: usize| cost.get(r, c) - u[r] - v[c];

    let mut fixed: Vec<(usize, usize)> = Vec::new();
    let mut row_taken = vec![false; cost.rows];
    let mut col_taken = vec![false; cost.cols];
    let pairs_needed = cost.rows.min(cost.cols);
    'rows: for r in 0..cost.rows {
        for c in 0..cost.cols {
            if fixed.len() == pairs_needed {
                break 'rows;
            }
            if row_taken[r] || col_taken[c] {
                continue;
            }
            if current.contains(&(r, c)) {
                fixed.push((r, c));
                row_taken[r] = true;
                col_taken[c] = true;
                continue;
            }
            if slack(r, c) > tol {
                continue;
            }
            row_taken[r] = true;
            col_taken[c] = true;
            let sub = Reduced::new(cost, &row_taken, &col_taken);
            let (rest, rest_total, _, _) = sub.solve();
            let candidate_total = cost.total(&fixed) + cost.get(r, c) + rest_total;
            let feasible_count = fixed.len() + 1 + rest.len() == pairs_needed;
            if feasible_count && candidate_total <= best + tol {
                fixed.push((r, c));
                current = fixed.iter().copied().chain(rest).collect();
            } else {
                row_taken[r] = false;
                col_taken[c] = false;
            }
        }
    }
    fixed.sort_unstable();
    fixed
}

/// Result of associating predicted tracks with one detection list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    /// Track and index into the detection slice.
    pub matched: Vec<(TrackId, usize)>,
    pub unmatched_tracks: Vec<TrackId>,
    pub unmatched_detections: Vec<usize>,
}

/// Associates with a single gate for every track.
pub fn associate(tracks: &[TrackEstimate], detections: &[Detection], gate: f64) -> Assignment {
    let gates = vec![gate; tracks.len()];
    associate_gated(tracks, detections, &gates)
}

/// Hungarian association on gated Euclidean costs. Costs above a track's
/// gate saturate to a common penalty, so the solver first maximizes the
/// number of in-gate pairs and then minimizes their distance; any pair that
/// still lands above its gate is demoted to unmatched.
pub fn associate_gated(
    tracks: &[TrackEstimate],
    detections: &[Detection],
    gates: &[f64],
) -> Assignment {
    assert_eq!(tracks.len(), gates.len());
    let raw = |t: usize, d: usize| (tracks[t].position() - detections[d].position()).norm();

    // Tracks and detections with no in-gate partner cannot form a pair.
    let live_tracks: Vec<usize> = (0..tracks.len())
        .filter(|&t| (0..detections.len()).any(|d| raw(t, d) <= gates[t]))
        .collect();
    let live_dets: Vec<usize> = (0..detections.len())
        .filter(|&d| live_tracks.iter().any(|&t| raw(t, d) <= gates[t]))
        .collect();

    let mut matched = Vec::new();
    if !live_tracks.is_empty() && !live_dets.is_empty() {
        let max_gate = live_tracks.iter().map(|&t| gates[t]).fold(0.0, f64::max);
        let penalty = max_gate * (live_tracks.len().min(live_dets.len()) as f64 + 1.0) + 1.0;
        let mut data = Vec::with_capacity(live_tracks.len() * live_dets.len());
        for &t in &live_tracks {
            for &d in &live_dets {
                let c = raw(t, d);
                data.push(if c <= gates[t] { c } else { penalty });
            }
        }
        let cost = CostMatrix::new(live_tracks.len(), live_dets.len(), data);
        for (r, c) in hungarian(&cost) {
            let (t, d) = (live_tracks[r], live_dets[c]);
            if raw(t, d) <= gates[t] {
                matched.push((t, d));
            }
        }
    }

    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    for &(t, d) in &matched {
        track_used[t] = true;
        det_used[d] = true;
    }
    Assignment {
        matched: matched.iter().map(|&(t, d)| (tracks[t].track, d)).collect(),
        unmatched_tracks: (0..tracks.len())
            .filter(|&t| !track_used[t])
            .map(|t| tracks[t].track)
            .collect(),
        unmatched_detections: (0..detections.len()).filter(|&d| !det_used[d]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::VehicleId;
    use nalgebra::{Matrix4, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn track(id: u64, x: f64, y: f64) -> TrackEstimate {
        TrackEstimate {
            track: TrackId(id),
            x: Vector4::new(x, y, 0.0, 0.0),
            p: Matrix4::identity(),
            last_update: 0,
        }
    }

    fn det(target: u32, x: f64, y: f64) -> Detection {
        Detection {
            observer: VehicleId(0),
            target: VehicleId(target),
            z: [x, y],
            tick: 0,
        }
    }

    #[test]
    fn diagonal_dominance() {
        let cost = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let pairs = hungarian(&cost);
        assert_eq!(pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(cost.total(&pairs), 2.0);
    }

    #[test]
    fn empty_side() {
        let cost = CostMatrix::new(0, 3, vec![]);
        assert!(hungarian(&cost).is_empty());
        let a = associate(&[], &[det(0, 0.0, 0.0), det(1, 1.0, 0.0), det(2, 2.0, 0.0)], 5.0);
        assert!(a.matched.is_empty());
        assert_eq!(a.unmatched_detections, vec![0, 1, 2]);
    }

    #[test]
    fn ties_break_lexicographically() {
        let cost = CostMatrix::from_rows(&[vec![1.0; 3], vec![1.0; 3], vec![1.0; 3]]);
        assert_eq!(hungarian(&cost), vec![(0, 0), (1, 1), (2, 2)]);
        let wide = CostMatrix::from_rows(&[vec![0.0, 5.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 0.0]]);
        assert_eq!(hungarian(&wide), vec![(0, 0), (1, 1)]);
        let tall = CostMatrix::from_rows(&[vec![3.0], vec![1.0], vec![1.0]]);
        assert_eq!(hungarian(&tall), vec![(1, 0)]);
    }

    fn brute_force(cost: &CostMatrix) -> f64 {
        fn rec(cost: &CostMatrix, r: usize, used: &mut Vec<bool>, left: usize) -> f64 {
            if left == 0 || r == cost.rows() {
                return if left == 0 { 0.0 } else { f64::INFINITY };
            }
            // Either skip this row (only possible when rows > cols) or assign it.
            let mut best = if cost.rows() - r > left { rec(cost, r + 1, used, left) } else { f64::INFINITY };
            for c in 0..cost.cols() {
                if !used[c] {
                    used[c] = true;
                    best = best.min(cost.get(r, c) + rec(cost, r + 1, used, left - 1));
                    used[c] = false;
                }
            }
            best
        }
        let mut used = vec![false; cost.cols()];
        rec(cost, 0, &mut used, cost.rows().min(cost.cols()))
    }

    #[test]
    fn random_six_by_six_matches_permutation_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let data: Vec<f64> = (0..36).map(|_| rng.random_range(0.0..10.0)).collect();
            let cost = CostMatrix::new(6, 6, data);
            let pairs = hungarian(&cost);
            assert_eq!(pairs.len(), 6);
            assert!((cost.total(&pairs) - brute_force(&cost)).abs() < 1e-9);
        }
    }

    #[test]
    fn gating_demotes_far_pairs() {
        let a = associate(&[track(1, 0.0, 0.0)], &[det(0, 0.5, 0.0)], 5.0);
        assert_eq!(a.matched, vec![(TrackId(1), 0)]);
        let a = associate(&[track(1, 0.0, 0.0)], &[det(0, 100.0, 0.0)], 5.0);
        assert!(a.matched.is_empty());
        assert_eq!(a.unmatched_tracks, vec![TrackId(1)]);
        assert_eq!(a.unmatched_detections, vec![0]);
    }

    #[test]
    fn association_matches_ground_truth_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let truth: Vec<(f64, f64)> = (0..10).map(|k| (k as f64 * 40.0, rng.random_range(0.0..200.0))).collect();
        let tracks: Vec<TrackEstimate> = truth
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| track(k as u64 + 100, x + rng.random_range(-0.5..0.5), y))
            .collect();
        let mut dets: Vec<Detection> = truth
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| det(k as u32, x + rng.random_range(-1.0..1.0), y + rng.random_range(-1.0..1.0)))
            .collect();
        dets.reverse();
        let a = associate(&tracks, &dets, 5.0);
        assert_eq!(a.matched.len(), 10);
        for (tid, d) in a.matched {
            assert_eq!(tid.0 - 100, dets[d].target.0 as u64);
        }
    }
}
