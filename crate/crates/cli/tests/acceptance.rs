//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero on any failure.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Matrix4, SymmetricEigen};
use pedrisk_core::analytics::{merge_weights, psm_ranges, weighted_merge, PsmDistribution};
use pedrisk_core::features::{
    acceleration_list, detect_stop, low_pass, psm, psm_points, relative_positions, speed_list, AccelState,
    PedestrianZone, RelativePosition, VehicleZone, ZoneMap,
};
use pedrisk_core::geometry::{Calibration, WorldPoint};
use pedrisk_core::ingest::{ObjectClass, PixelPoint};
use pedrisk_core::pipeline::{run_all, run_synth, CorpusKind, PipelineConfig, SynthSettings};
use pedrisk_core::synth::{
    crossing_corpus, generate, random_crossing_scenario, standard_corpus, synthetic_spot, ObliqueCamera,
};
use pedrisk_core::tracker::validate::ValidationParams;
use pedrisk_core::tracker::{
    track_stream, validate_trajectories, KalmanModel, KalmanState, TrackPoint, TrackerParams, Trajectory,
    ViolationCounts,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.2}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn close_rel(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1.0)
}

fn zero_noise_fidelity() -> Outcome {
    let started = Instant::now();
    let corpus = standard_corpus();
    let mut checked_speeds = 0;
    let mut checked_psm = 0;
    for scen in &corpus {
        let name = &scen.spec.name;
        let calib = Calibration::from_spot(&scen.spec.spot).map_err(|e| format!("{name}: {e}"))?;
        let f = scen.spec.spot.frame_skip as f64 / scen.spec.spot.fps;
        let params = TrackerParams::default();
        let trajs = track_stream(&scen.detections, &params, &calib).map_err(|e| format!("{name}: {e}"))?;
        let labels = scen.truth.label_map();

        let mut by_agent: BTreeMap<u64, &Trajectory> = BTreeMap::new();
        for t in &trajs {
            let agents: BTreeSet<u64> = t
                .points
                .iter()
                .map(|p| labels[&(p.frame_index, p.detection_id.clone())])
                .collect();
            ensure(agents.len() == 1, || format!("{name}: track {} mixes agents {agents:?}", t.object_id))?;
            let agent = *agents.iter().next().unwrap();
            ensure(by_agent.insert(agent, t).is_none(), || format!("{name}: agent {agent} split"))?;
        }
        ensure(by_agent.len() == scen.truth.trajectories.len(), || {
            format!("{name}: {} tracks for {} agents", by_agent.len(), scen.truth.trajectories.len())
        })?;
        let report = validate_trajectories(
            &[(name.clone(), trajs.clone())],
            Some(&labels),
            &ValidationParams::new(params, scen.spec.spot.frame_skip),
        );
        ensure(report.totals.total() == 0, || format!("{name}: violations {:?}", report.totals))?;

        for truth in &scen.truth.trajectories {
            let t = by_agent[&(truth.agent as u64)];
            ensure(t.points.len() == truth.points.len(), || format!("{name}: {} length", truth.name))?;
            let speeds = speed_list(t, &calib).map_err(|e| format!("{name}: {e}"))?;
            ensure(speeds.len() == truth.speed_kmh.len(), || format!("{name}: {} speed count", truth.name))?;
            for (got, want) in speeds.iter().zip(&truth.speed_kmh) {
                ensure(close_rel(*got, *want, 1e-9), || {
                    format!("{name}: {} speed {got} vs {want}", truth.name)
                })?;
                checked_speeds += 1;
            }
        }
        for expected in &scen.truth.psm {
            let v = by_agent[&(expected.vehicle as u64)];
            let p = by_agent[&(expected.pedestrian as u64)];
            let got = psm(v, p).map_err(|e| format!("{name}: {e}"))?;
            ensure((got.seconds - expected.seconds).abs() <= f, || {
                format!("{name}: psm {} vs {}", got.seconds, expected.seconds)
            })?;
            checked_psm += 1;
        }
    }
    within_budget(started.elapsed(), 10.0)?;
    Ok(format!(
        "{} scenarios, {checked_speeds} speeds, {checked_psm} PSM values, {:.2}s",
        corpus.len(),
        started.elapsed().as_secs_f64()
    ))
}

fn densify(points: &[WorldPoint], factor: usize) -> Vec<WorldPoint> {
    let mut out = Vec::with_capacity(points.len() * factor);
    for w in points.windows(2) {
        for j in 0..factor {
            let u = j as f64 / factor as f64;
            out.push(WorldPoint {
                x: w[0].x + u * (w[1].x - w[0].x),
                y: w[0].y + u * (w[1].y - w[0].y),
                t: w[0].t + u * (w[1].t - w[0].t),
            });
        }
    }
    out.extend(points.last().copied());
    out
}

fn max_step(points: &[WorldPoint]) -> f64 {
    points.windows(2).map(|w| w[0].distance(&w[1])).fold(0.0, f64::max)
}

/// Dense-interpolation conflict search: both paths resampled 1000 times
/// finer, the pedestrian hashed on a grid, and the closest pair near the
/// vehicle's first contact taken as the conflict. Returns vehicle minus
/// pedestrian arrival time.
fn dense_oracle(vehicle: &[WorldPoint], pedestrian: &[WorldPoint]) -> Option<f64> {
    let v = densify(vehicle, 1000);
    let p = densify(pedestrian, 1000);
    let tol = max_step(&v) + max_step(&p);
    let cell = |q: &WorldPoint| ((q.x / tol).floor() as i64, (q.y / tol).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, q) in p.iter().enumerate() {
        grid.entry(cell(q)).or_default().push(i);
    }
    let (lo, hi) = p.iter().fold(([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]), |(lo, hi), q| {
        ([lo[0].min(q.x), lo[1].min(q.y)], [hi[0].max(q.x), hi[1].max(q.y)])
    });
    let nearest = |q: &WorldPoint| -> Option<(f64, usize)> {
        if q.x < lo[0] - tol || q.x > hi[0] + tol || q.y < lo[1] - tol || q.y > hi[1] + tol {
            return None;
        }
        let (cx, cy) = cell(q);
        let mut best: Option<(f64, usize)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for &i in grid.get(&(cx + dx, cy + dy)).into_iter().flatten() {
                    let d = q.distance(&p[i]);
                    if d <= tol && best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, i));
                    }
                }
            }
        }
        best
    };
    let first = v.iter().position(|q| nearest(q).is_some())?;
    let mut best: Option<(f64, usize, usize)> = None;
    for (k, q) in v.iter().enumerate().skip(first) {
        match nearest(q) {
            Some((d, i)) if best.is_none_or(|(bd, _, _)| d < bd) => best = Some((d, k, i)),
            Some(_) => {}
            None => break,
        }
    }
    best.map(|(_, k, i)| v[k].t - p[i].t)
}

fn ivt_oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let scenarios = 1000u64;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()) as u64;
    let results: Vec<Result<(bool, f64), String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                scope.spawn(move || {
                    (0..scenarios)
                        .filter(|s| s % threads == w)
                        .map(|seed| {
                            let spec = random_crossing_scenario(seed);
                            let f = spec.spot.frame_skip as f64 / spec.spot.fps;
                            let (_, truth) = generate(&spec).map_err(|e| e.to_string())?;
                            let world = |agent: usize| -> Vec<WorldPoint> {
                                truth.trajectory(agent).map_or_else(Vec::new, |t| {
                                    t.points.iter().map(|p| p.world).collect()
                                })
                            };
                            let (veh, ped) = (world(0), world(1));
                            let scan = psm_points(&veh, &ped).ok();
                            let oracle = dense_oracle(&veh, &ped);
                            match (scan, oracle) {
                                (None, None) => Ok((false, 0.0)),
                                (Some(s), Some(o)) => {
                                    let delta = (s.seconds - o).abs();
                                    if delta <= f {
                                        Ok((true, delta))
                                    } else {
                                        Err(format!("{}: scan {} vs oracle {o}", spec.name, s.seconds))
                                    }
                                }
                                (s, o) => Err(format!(
                                    "{}: existence differs, scan {:?} oracle {o:?}",
                                    spec.name,
                                    s.map(|s| s.seconds)
                                )),
                            }
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let mut conflicts = 0;
    let mut worst: f64 = 0.0;
    for r in results {
        let (hit, delta) = r?;
        conflicts += hit as usize;
        worst = worst.max(delta);
    }
    within_budget(started.elapsed(), 60.0)?;
    Ok(format!(
        "{scenarios} scenarios, {conflicts} conflicts, max |dPSM| {worst:.2e}s, {:.2}s",
        started.elapsed().as_secs_f64()
    ))
}

fn tracker_ordering() -> Outcome {
    let corpus: Vec<_> = crossing_corpus(200, 2.0, 5)
        .into_iter()
        .map(|spec| generate(&spec).map(|g| (spec, g)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let score = |params: TrackerParams| -> Result<(ViolationCounts, f64), String> {
        let mut totals = ViolationCounts::default();
        let mut clean = 0;
        for (spec, (detections, truth)) in &corpus {
            let calib = Calibration::from_spot(&spec.spot).map_err(|e| e.to_string())?;
            let trajs = track_stream(detections, &params, &calib).map_err(|e| e.to_string())?;
            let r = validate_trajectories(
                &[(spec.name.clone(), trajs)],
                Some(&truth.label_map()),
                &ValidationParams::new(params, spec.spot.frame_skip),
            );
            totals.add(&r.totals);
            clean += (r.violating_scenes == 0) as usize;
        }
        Ok((totals, clean as f64 / corpus.len() as f64))
    };
    let (kf, kf_acc) = score(TrackerParams::default())?;
    let (nn, nn_acc) = score(TrackerParams::nearest_neighbor())?;
    let (k, n) = (kf.crossing + kf.directivity, nn.crossing + nn.directivity);
    let detail = format!(
        "kalman {k} error frames (acc {kf_acc:.3}), nearest-neighbor {n} (acc {nn_acc:.3}), {} scenes",
        corpus.len()
    );
    ensure(k < n, || detail.clone())?;
    Ok(detail)
}

fn merge_weighting() -> Outcome {
    let w = merge_weights(&[100, 800]);
    ensure(w == vec![8.0 / 9.0, 1.0 / 9.0], || format!("weights {w:?}"))?;
    for n in 2..8 {
        let w = merge_weights(&vec![37; n]);
        ensure(w.iter().all(|x| *x == w[0]), || format!("{n} equal spots: {w:?}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..50 {
        let spots: Vec<(String, Vec<f64>)> = (0..rng.random_range(2..5))
            .map(|i| {
                let n = rng.random_range(5..80);
                (format!("S{i}"), (0..n).map(|_| rng.random_range(-6.0..6.0)).collect())
            })
            .collect();
        let k = rng.random_range(2..5);
        let dup: Vec<(String, Vec<f64>)> = spots
            .iter()
            .map(|(id, s)| (id.clone(), s.iter().flat_map(|x| std::iter::repeat_n(*x, k)).collect()))
            .collect();
        let a = weighted_merge("g", &spots).histogram;
        let b = weighted_merge("g", &dup).histogram;
        ensure(a.edges.len() == b.edges.len(), || format!("trial {trial}: bin count changed"))?;
        let same = a.edges.iter().zip(&b.edges).all(|(x, y)| (x - y).abs() <= 1e-12)
            && a.fraction.iter().zip(&b.fraction).all(|(x, y)| (x - y).abs() <= 1e-12);
        ensure(same, || format!("trial {trial}: histogram changed under {k}x duplication"))?;
    }
    Ok("(100, 800) -> (8/9, 1/9); equal spots equal; 50 duplication trials".into())
}

/// Samples whose lower, upper and interpolated quartiles on each sign all
/// land on the requested values: each quartile position sits inside a block
/// of identical copies.
fn quartile_samples(q: [f64; 3], lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let filler = |a: f64, b: f64, n: usize, out: &mut Vec<f64>| {
        for i in 0..n {
            out.push(a + (b - a) * (i as f64 + 1.0) / (n as f64 + 1.0));
        }
    };
    filler(lo, q[0], 20, &mut out);
    out.extend([q[0]; 10]);
    filler(q[0], q[1], 15, &mut out);
    out.extend([q[1]; 10]);
    filler(q[1], q[2], 15, &mut out);
    out.extend([q[2]; 10]);
    filler(q[2], hi, 20, &mut out);
    out
}

fn psm_range_binning() -> Outcome {
    let neg = [-4.92, -3.04, -2.03];
    let pos = [1.25, 2.29, 3.91];
    let mut samples = quartile_samples(neg, -9.0, -0.01);
    samples.extend(quartile_samples(pos, 0.01, 9.0));
    let ranges = psm_ranges(&PsmDistribution::unweighted("paper", samples)).map_err(|e| e.to_string())?;
    let expected = [neg[0], neg[1], neg[2], 0.0, pos[0], pos[1], pos[2]];
    for (got, want) in ranges.boundaries.iter().zip(&expected) {
        ensure((got - want).abs() <= 1e-6, || format!("boundary {got} vs {want}"))?;
    }
    let r = ranges.range_of(-1.5);
    ensure(r == 4, || format!("-1.5 in range {r}"))?;
    Ok(format!("boundaries {:?}; -1.5 -> range 4", ranges.boundaries))
}

fn track_from_pixels(pixels: &[[f64; 2]], calib: &Calibration) -> Trajectory {
    Trajectory {
        object_id: 0,
        object_class: ObjectClass::Vehicle,
        points: pixels
            .iter()
            .enumerate()
            .map(|(i, &[x, y])| {
                let frame = i as u64 * calib.frame_skip as u64;
                let px = PixelPoint::new(x, y);
                let world = calib.project(px, frame).unwrap();
                TrackPoint {
                    frame_index: frame,
                    detection_id: format!("d{i}"),
                    raw_px: px,
                    smoothed_px: px,
                    world,
                    smoothed_world: world,
                }
            })
            .collect(),
    }
}

fn track_from_world(points: &[[f64; 2]], class: ObjectClass, calib: &Calibration) -> Trajectory {
    let pixels: Vec<[f64; 2]> = points
        .iter()
        .map(|p| {
            let px = calib.to_pixel(*p).unwrap();
            [px.x, px.y]
        })
        .collect();
    let mut t = track_from_pixels(&pixels, calib);
    t.object_class = class;
    t
}

fn feature_invariants() -> Outcome {
    let spot = synthetic_spot("F", false, &ObliqueCamera::default());
    let calib = Calibration::from_spot(&spot).map_err(|e| e.to_string())?;
    let zones = ZoneMap::from_spot(&spot).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut checks = 0;

    for _ in 0..200 {
        let n = rng.random_range(2..40);
        let pixels: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(100.0..1180.0), rng.random_range(380.0..700.0)])
            .collect();
        let fwd = speed_list(&track_from_pixels(&pixels, &calib), &calib).map_err(|e| e.to_string())?;
        let rev_px: Vec<[f64; 2]> = pixels.iter().rev().copied().collect();
        let rev = speed_list(&track_from_pixels(&rev_px, &calib), &calib).map_err(|e| e.to_string())?;
        let ok = fwd.iter().rev().zip(&rev).all(|(a, b)| close_rel(*a, *b, 1e-9));
        ensure(ok, || "reversed trajectory speeds differ".into())?;
        checks += 1;
    }

    let eps = 0.5;
    for _ in 0..500 {
        let n = rng.random_range(2..60);
        let speeds: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..60.0)).collect();
        let alpha = rng.random_range(0.05..1.0);
        let filtered = low_pass(&speeds, alpha);
        let states = acceleration_list(&filtered, eps).map_err(|e| e.to_string())?;
        for (w, s) in filtered.windows(2).zip(&states) {
            let d = w[1] - w[0];
            let want = if d > eps {
                AccelState::Acc
            } else if d < -eps {
                AccelState::Dec
            } else {
                AccelState::Nc
            };
            ensure(*s == want, || format!("slope {d} classified {s:?}"))?;
        }
        let c = rng.random_range(-20.0..20.0);
        let shifted_filtered = low_pass(&speeds.iter().map(|v| v + c).collect::<Vec<_>>(), alpha);
        let near_edge = filtered
            .windows(2)
            .zip(shifted_filtered.windows(2))
            .any(|(a, b)| ((a[1] - a[0]).abs() - eps).abs() < 1e-6 || ((b[1] - b[0]).abs() - eps).abs() < 1e-6);
        if !near_edge {
            let shifted = acceleration_list(&shifted_filtered, eps).map_err(|e| e.to_string())?;
            ensure(shifted == states, || format!("shift by {c} changed states"))?;
        }
        ensure(low_pass(&speeds, 1.0) == speeds, || "alpha 1 is not identity".into())?;
        checks += 3;
    }

    // Every zone boundary of the synthetic spot lies on one of these lines.
    let (xs, ys): ([f64; 4], [f64; 4]) = ([-5.0, -2.0, 2.0, 5.0], [-8.0, -4.0, 4.0, 8.0]);
    let mut stable = 0;
    while stable < 2000 {
        let p = [rng.random_range(-15.0..15.0), rng.random_range(-10.0..10.0)];
        let clear = xs.iter().all(|x| (p[0] - x).abs() >= 0.1) && ys.iter().all(|y| (p[1] - y).abs() >= 0.1);
        if !clear {
            continue;
        }
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let r = rng.random_range(0.0..0.01);
        let q = [p[0] + r * angle.cos(), p[1] + r * angle.sin()];
        let (pz, qz): (PedestrianZone, PedestrianZone) = (zones.pedestrian_zone(p), zones.pedestrian_zone(q));
        ensure(pz == qz, || format!("pedestrian zone flips near {p:?}"))?;
        let (vp, vq) = (zones.vehicle_zone(p), zones.vehicle_zone(q));
        ensure(vp == vq, || format!("vehicle zone flips near {p:?}"))?;
        stable += 1;
    }
    checks += stable;

    for _ in 0..200 {
        let lane = if rng.random_bool(0.5) { 2.0 } else { -2.0 };
        let speed = rng.random_range(0.5..1.5);
        let n = (40.0 / speed) as usize;
        let vehicle: Vec<[f64; 2]> = (0..n).map(|i| [-20.0 + speed * i as f64, lane]).collect();
        let px = rng.random_range(-10.0..10.0);
        let py = lane + rng.random_range(0.5..5.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let drift = rng.random_range(-0.05..0.05);
        let ped: Vec<[f64; 2]> = (0..n).map(|i| [px, py + drift * i as f64]).collect();
        let v = track_from_world(&vehicle, ObjectClass::Vehicle, &calib);
        let p = track_from_world(&ped, ObjectClass::Pedestrian, &calib);
        let rel: Vec<RelativePosition> = relative_positions(&v, &p)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|(_, r)| r)
            .collect();
        let transitions = rel.windows(2).filter(|w| w[0] != w[1]).count();
        ensure(
            rel.first() == Some(&RelativePosition::Front)
                && rel.last() == Some(&RelativePosition::Behind)
                && transitions == 1,
            || format!("pass-by at x {px:.2}: {transitions} transitions"),
        )?;
        checks += 1;
    }

    let all_zones = [VehicleZone::BeforeCrosswalk, VehicleZone::OnCrosswalk, VehicleZone::AfterCrosswalk];
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        let speeds: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let zs: Vec<VehicleZone> = (0..n).map(|_| all_zones[rng.random_range(0..3)]).collect();
        let (tol, min_steps) = (2.0, rng.random_range(1..4));
        let got = detect_stop(&speeds, &zs, tol, min_steps);
        let qualifies = |j: usize| speeds[j] < tol && zs[j] == VehicleZone::BeforeCrosswalk;
        let mut want = None;
        let mut j = 0;
        while j < n {
            if qualifies(j) {
                let start = j;
                while j < n && qualifies(j) {
                    j += 1;
                }
                if j - start >= min_steps {
                    want = Some((start, j - 1));
                    break;
                }
            } else {
                j += 1;
            }
        }
        ensure(got.map(|w| (w.first_step, w.last_step)) == want, || {
            format!("stop {got:?} vs {want:?} for {speeds:?} {zs:?}")
        })?;
        checks += 1;
    }
    Ok(format!("{checks} seeded checks"))
}

fn min_eigenvalue(p: &Matrix4<f64>) -> f64 {
    SymmetricEigen::new(*p).eigenvalues.min()
}

fn kalman_numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = KalmanModel::default();
    let mut state = KalmanState::spawn(640.0, 360.0, &model);
    let mut worst_eig = f64::INFINITY;
    let mut worst_asym: f64 = 0.0;
    for cycle in 0..10_000 {
        let dt = rng.random_range(1..6) as f64;
        state = state.predict(&model, dt);
        let [x, y] = state.position();
        state = state.update([x + rng.random_range(-30.0..30.0), y + rng.random_range(-30.0..30.0)], &model);
        let p = state.covariance;
        let asym = (p - p.transpose()).abs().max();
        let eig = min_eigenvalue(&p);
        worst_asym = worst_asym.max(asym);
        worst_eig = worst_eig.min(eig);
        ensure(asym <= 1e-9 * p.abs().max().max(1.0), || format!("cycle {cycle}: asymmetry {asym}"))?;
        ensure(eig >= -1e-9, || format!("cycle {cycle}: eigenvalue {eig}"))?;
    }

    let mut worst_err: f64 = 0.0;
    for _ in 0..100 {
        let v = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
        let x0 = [rng.random_range(0.0..1000.0), rng.random_range(0.0..700.0)];
        let at = |k: f64| [x0[0] + v[0] * k, x0[1] + v[1] * k];
        let mut s = KalmanState::from_two_points(at(0.0), at(1.0), 1.0, &model);
        for k in 2..=20 {
            s = s.predict(&model, 1.0).update(at(k as f64), &model);
        }
        let [vx, vy] = s.velocity();
        let err = (vx - v[0]).abs().max((vy - v[1]).abs());
        worst_err = worst_err.max(err);
        ensure(err <= 1e-6, || format!("velocity error {err} at step 20"))?;
    }
    Ok(format!(
        "10000 cycles, min eigenvalue {worst_eig:.3e}, max asymmetry {worst_asym:.1e}; velocity error {worst_err:.1e} at step 20"
    ))
}

fn read_tree(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| format!("{}: {e}", d.display()))? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for workers in [1, 4] {
        let input = tmp.path().join(format!("in{workers}"));
        let out = tmp.path().join(format!("out{workers}"));
        let status = Command::new(env!("CARGO_BIN_EXE_pedrisk"))
            .env("RUST_LOG", "warn")
            .args(["--seed", "11", "--workers", &workers.to_string()])
            .arg("--input-dir")
            .arg(&input)
            .arg("--out-dir")
            .arg(&out)
            .args(["all", "--synth", "--corpus", "study", "--scale", "0.5", "--noise-px", "1.5"])
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), || format!("pedrisk exited with {status}"))?;
        trees.push(read_tree(&out)?);
    }
    let (a, b) = (&trees[0], &trees[1]);
    ensure(a.keys().eq(b.keys()), || "output file sets differ".into())?;
    for (name, bytes) in a {
        ensure(*bytes == b[name], || format!("{name} differs between worker counts"))?;
    }
    ensure(a.keys().any(|k| k.starts_with("report")), || "no report files".into())?;
    Ok(format!("{} files byte-identical across 1 and 4 workers", a.len()))
}

fn throughput() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = PipelineConfig {
        input_dir: tmp.path().join("corpus"),
        out_dir: tmp.path().join("out"),
        seed: 9,
        synth: SynthSettings {
            corpus: CorpusKind::Study,
            scale: 5.0,
            noise_sigma_px: 1.0,
            drop_prob: 0.0,
        },
        ..Default::default()
    };
    run_synth(&cfg).map_err(|e| e.to_string())?;
    let mut records = 0;
    for entry in fs::read_dir(&cfg.input_dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.to_string_lossy().ends_with(".detections.jsonl") {
            let text = fs::read_to_string(&path).map_err(|e| e.to_string())?;
            records += text.lines().filter(|l| !l.trim().is_empty()).count();
        }
    }
    ensure(records >= 100_000, || format!("only {records} records"))?;
    let started = Instant::now();
    run_all(&cfg).map_err(|e| e.to_string())?;
    within_budget(started.elapsed(), 30.0)?;
    Ok(format!("{records} records in {:.2}s", started.elapsed().as_secs_f64()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("zero-noise end-to-end fidelity", zero_noise_fidelity),
        ("PSM scan matches dense oracle", ivt_oracle_equivalence),
        ("Kalman beats nearest-neighbor", tracker_ordering),
        ("merge weighting", merge_weighting),
        ("PSM range binning", psm_range_binning),
        ("feature invariants", feature_invariants),
        ("Kalman numerics", kalman_numerics),
        ("determinism across workers", determinism),
        ("throughput", throughput),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL {}. {name}: {reason}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
