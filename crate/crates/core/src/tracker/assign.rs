//! Detection-to-track association for one frame.

use std::cmp::Ordering;

use crate::ingest::{DetectionRecord, ObjectClass};

use super::{Matching, TrackerParams};

/// What the associator needs to know about a live track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackView {
    pub object_id: u64,
    pub object_class: ObjectClass,
    /// Position the track is expected at in this frame.
    pub expected_px: [f64; 2],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    /// (track index, detection index) pairs.
    pub matches: Vec<(usize, usize)>,
    /// Detection indices that start new tracks, in detection-id order.
    pub new_tracks: Vec<usize>,
    /// Track indices left without a detection this frame.
    pub coasting: Vec<usize>,
}

fn distance(a: [f64; 2], d: &DetectionRecord) -> f64 {
    (a[0] - d.contact_point_px.x).hypot(a[1] - d.contact_point_px.y)
}

/// Matches same-class tracks and detections whose distance is within the
/// class gate. Greedy mode takes the globally smallest distance first, ties
/// broken by detection id then track id; optimal mode minimizes the summed
/// distance over gated pairs.
pub fn assign(tracks: &[TrackView], detections: &[&DetectionRecord], params: &TrackerParams) -> Assignment {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ti, t) in tracks.iter().enumerate() {
        for (di, d) in detections.iter().enumerate() {
            if d.object_class != t.object_class {
                continue;
            }
            let dist = distance(t.expected_px, d);
            if dist <= params.gate_for(t.object_class) {
                pairs.push((dist, ti, di));
            }
        }
    }

    let matches = match params.matching {
        Matching::Greedy => greedy(&mut pairs, tracks, detections),
        Matching::Optimal => optimal(&pairs, tracks.len(), detections.len()),
    };

    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    for &(ti, di) in &matches {
        track_used[ti] = true;
        det_used[di] = true;
    }
    let mut new_tracks: Vec<usize> = (0..detections.len()).filter(|&i| !det_used[i]).collect();
    new_tracks.sort_by(|&a, &b| detections[a].detection_id.cmp(&detections[b].detection_id));
    let coasting = (0..tracks.len()).filter(|&i| !track_used[i]).collect();
    Assignment {
        matches,
        new_tracks,
        coasting,
    }
}

fn greedy(
    pairs: &mut [(f64, usize, usize)],
    tracks: &[TrackView],
    detections: &[&DetectionRecord],
) -> Vec<(usize, usize)> {
    pairs.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| detections[a.2].detection_id.cmp(&detections[b.2].detection_id))
            .then_with(|| tracks[a.1].object_id.cmp(&tracks[b.1].object_id))
    });
    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    let mut out = Vec::new();
    for &(_, ti, di) in pairs.iter() {
        if !track_used[ti] && !det_used[di] {
            track_used[ti] = true;
            det_used[di] = true;
            out.push((ti, di));
        }
    }
    out.sort_unstable();
    out
}

fn optimal(pairs: &[(f64, usize, usize)], n_tracks: usize, n_dets: usize) -> Vec<(usize, usize)> {
    if pairs.is_empty() {
        return Vec::new();
    }
    let max_cost = pairs.iter().map(|p| p.0).fold(0.0f64, f64::max);
    // Larger than any feasible total, so gated-out pairs are only used when
    // nothing else is available and are dropped afterwards.
    let blocked = (max_cost + 1.0) * (n_tracks + n_dets + 1) as f64;
    let mut cost = vec![vec![blocked; n_dets]; n_tracks];
    for &(d, ti, di) in pairs {
        cost[ti][di] = d;
    }
    let rows = min_cost_assignment(&cost);
    let mut out: Vec<(usize, usize)> = rows
        .into_iter()
        .enumerate()
        .filter_map(|(ti, di)| di.map(|di| (ti, di)))
        .filter(|&(ti, di)| cost[ti][di] < blocked)
        .collect();
    out.sort_unstable();
    out
}

/// Rectangular minimum-cost assignment (Hungarian method with potentials).
/// Returns, for each row, the assigned column; every row is assigned when
/// rows <= columns, otherwise every column is.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    if m == 0 {
        return vec![None; n];
    }
    if n > m {
        let transposed: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let cols = min_cost_assignment(&transposed);
        let mut rows = vec![None; n];
        for (j, i) in cols.into_iter().enumerate() {
            if let Some(i) = i {
                rows[i] = Some(j);
            }
        }
        return rows;
    }
    // 1-based arrays; p[j] is the row matched to column j.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j].partial_cmp(&delta) == Some(Ordering::Less) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rows = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            rows[p[j] - 1] = Some(j - 1);
        }
    }
    rows
}
