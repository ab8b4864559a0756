//! Named scenario sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    generate, synthetic_spot, AgentScript, GroundTruth, ObliqueCamera, ScenarioSpec, SynthError, Waypoint,
    CROSSWALK_HALF_WIDTH_M, LANES_Y_M,
};
use crate::ingest::{DetectionRecord, ObjectClass};

/// Pedestrian start and end distance from the road axis, meters.
const CURB_TO_CURB_Y: f64 = 6.5;
/// Vehicles enter and leave the view at these x positions.
const ROAD_X: (f64, f64) = (-22.0, 22.0);
/// Earliest agent start within a scenario.
const LEAD_IN_S: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopPlan {
    /// Where the front of the vehicle comes to rest.
    pub stop_x: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehiclePlan {
    pub lane_y: f64,
    pub speed_kmh: f64,
    pub from_x: f64,
    pub to_x: f64,
    pub stop: Option<StopPlan>,
}

impl VehiclePlan {
    pub fn cruise(lane_y: f64, speed_kmh: f64) -> Self {
        Self {
            lane_y,
            speed_kmh,
            from_x: ROAD_X.0,
            to_x: ROAD_X.1,
            stop: None,
        }
    }
}

/// Vehicle script for a plan. A stop slows to a third of the cruise speed
/// over the last 6 m, waits, and pulls away at the same slow speed for 4 m.
pub fn vehicle_script(name: &str, plan: &VehiclePlan, t0: f64) -> AgentScript {
    let v = plan.speed_kmh / 3.6;
    let y = plan.lane_y;
    let Some(stop) = plan.stop else {
        return AgentScript::straight(name, ObjectClass::Vehicle, [plan.from_x, y], [plan.to_x, y], v, t0);
    };
    let slow = v / 3.0;
    let xs = stop.stop_x;
    let mut pts = vec![Waypoint::new(t0, plan.from_x, y)];
    let go = |pts: &mut Vec<Waypoint>, x: f64, dt: f64| {
        let t = pts[pts.len() - 1].t + dt;
        pts.push(Waypoint::new(t, x, y));
    };
    go(&mut pts, xs - 6.0, (xs - 6.0 - plan.from_x) / v);
    go(&mut pts, xs, 6.0 / slow);
    go(&mut pts, xs, stop.duration_s);
    go(&mut pts, xs + 4.0, 4.0 / slow);
    go(&mut pts, plan.to_x, (plan.to_x - xs - 4.0) / v);
    AgentScript::new(name, ObjectClass::Vehicle, pts)
}

/// Pedestrian crossing the whole road at `x` (drifting by `drift_x` over the
/// walk), timed so that the safety margin against `vehicle` in `lane_y` is
/// `psm` seconds.
#[allow(clippy::too_many_arguments)]
pub fn crossing_pedestrian(
    name: &str,
    vehicle: &AgentScript,
    lane_y: f64,
    x: f64,
    drift_x: f64,
    upward: bool,
    speed_mps: f64,
    psm: f64,
) -> AgentScript {
    let (ys, ye) = if upward {
        (-CURB_TO_CURB_Y, CURB_TO_CURB_Y)
    } else {
        (CURB_TO_CURB_Y, -CURB_TO_CURB_Y)
    };
    let frac = (lane_y - ys) / (ye - ys);
    let xc = x + drift_x * frac;
    let len = drift_x.hypot(ye - ys);
    let tv = vehicle
        .arrival_at([xc, lane_y])
        .expect("vehicle path covers the crossing");
    let t0 = tv - psm - frac * len / speed_mps;
    AgentScript::straight(name, ObjectClass::Pedestrian, [x, ys], [x + drift_x, ye], speed_mps, t0)
}

fn normalized(mut agents: Vec<AgentScript>, start: f64) -> Vec<AgentScript> {
    let t0 = agents.iter().map(|a| a.start_time()).fold(f64::INFINITY, f64::min);
    agents = agents.into_iter().map(|a| a.shifted(start - t0)).collect();
    agents
}

fn scenario(name: &str, agents: Vec<AgentScript>, noise_sigma_px: f64, drop_prob: f64, seed: u64) -> ScenarioSpec {
    let camera = ObliqueCamera::default();
    ScenarioSpec {
        name: name.to_string(),
        spot: synthetic_spot(name, false, &camera),
        camera,
        agents: normalized(agents, LEAD_IN_S),
        noise_sigma_px,
        drop_prob,
        seed,
    }
}

/// The eight named scenarios at a given noise level.
pub fn standard_scenarios(noise_sigma_px: f64, drop_prob: f64, seed: u64) -> Vec<ScenarioSpec> {
    let lane = LANES_Y_M[0];
    let cruise = VehiclePlan::cruise(lane, 30.0);
    let car = |name: &str, t0: f64| vehicle_script(name, &cruise, t0);
    let mut out = Vec::new();

    out.push(vec![car("vehicle", 0.0)]);

    let stopping = VehiclePlan {
        stop: Some(StopPlan {
            stop_x: -CROSSWALK_HALF_WIDTH_M - 5.0,
            duration_s: 2.0,
        }),
        ..cruise
    };
    let v = vehicle_script("vehicle", &stopping, 0.0);
    let stop_start = v.waypoints[2].t;
    let walk_to_lane = (lane + CURB_TO_CURB_Y) / 1.4;
    let ped = AgentScript::straight(
        "pedestrian",
        ObjectClass::Pedestrian,
        [0.0, -CURB_TO_CURB_Y],
        [0.0, CURB_TO_CURB_Y],
        1.4,
        stop_start + 1.0 - walk_to_lane,
    );
    out.push(vec![v, ped]);

    let a = AgentScript::straight("walker_a", ObjectClass::Pedestrian, [-1.5, -6.5], [1.5, 6.5], 1.4, 0.0);
    let b = AgentScript::straight("walker_b", ObjectClass::Pedestrian, [1.5, -6.5], [-1.5, 6.5], 1.4, 0.4);
    out.push(vec![a, b, car("vehicle", 7.8)]);

    out.push(vec![
        car("vehicle_a", 0.0),
        vehicle_script("vehicle_b", &VehiclePlan::cruise(LANES_Y_M[1], 30.0), 0.0),
    ]);

    let v = car("vehicle", 0.0);
    let ped = crossing_pedestrian("pedestrian", &v, lane, 1.0, 0.0, false, 1.4, 3.0);
    out.push(vec![v, ped]);

    let v = car("vehicle", 0.0);
    let ped = crossing_pedestrian("pedestrian", &v, lane, 0.5, 0.0, true, 1.4, 0.8);
    out.push(vec![v, ped]);

    let v = car("vehicle", 0.0);
    let ped = crossing_pedestrian("pedestrian", &v, lane, -0.5, 0.0, true, 1.4, -1.5);
    out.push(vec![v, ped]);

    let v = car("vehicle", 0.0);
    let p1 = crossing_pedestrian("pedestrian_1", &v, lane, -1.2, 0.0, true, 1.3, 2.0);
    let p2 = crossing_pedestrian("pedestrian_2", &v, lane, 1.0, 0.0, false, 1.5, 4.5);
    let p3 = AgentScript::straight(
        "pedestrian_3",
        ObjectClass::Pedestrian,
        [-10.0, -6.0],
        [-3.0, -6.0],
        1.2,
        v.start_time(),
    );
    out.push(vec![v, p1, p2, p3]);

    const NAMES: [&str; 8] = [
        "single_pass",
        "stop_and_go",
        "crossing_pair",
        "parallel_pair",
        "occlusion_gap",
        "near_miss",
        "vehicle_first",
        "multi_pedestrian",
    ];
    NAMES
        .iter()
        .zip(out)
        .enumerate()
        .map(|(i, (name, agents))| {
            let mut spec = scenario(name, agents, noise_sigma_px, drop_prob, seed.wrapping_add(i as u64));
            if *name == "occlusion_gap" {
                hide_two_samples(&mut spec, 1);
            }
            spec
        })
        .collect()
}

/// Hides an agent for the two sampled steps after its midpoint.
fn hide_two_samples(spec: &mut ScenarioSpec, agent: usize) {
    let step = spec.spot.frame_skip as f64 / spec.spot.fps;
    let a = &mut spec.agents[agent];
    let mid = (a.start_time() + a.end_time()) / 2.0;
    let first = (mid / step).ceil() * step;
    a.hidden.push([first - 1e-6, first + step + 1e-6]);
}

/// A scenario together with what it generated.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScenario {
    pub spec: ScenarioSpec,
    pub detections: Vec<DetectionRecord>,
    pub truth: GroundTruth,
}

impl GeneratedScenario {
    pub fn new(spec: ScenarioSpec) -> Result<Self, SynthError> {
        let (detections, truth) = generate(&spec)?;
        Ok(Self {
            spec,
            detections,
            truth,
        })
    }
}

/// The eight named scenarios, noise free.
pub fn standard_corpus() -> Vec<GeneratedScenario> {
    standard_scenarios(0.0, 0.0, 0)
        .into_par_iter()
        .map(|s| GeneratedScenario::new(s).expect("standard scenarios are valid"))
        .collect()
}

/// One vehicle and one pedestrian with randomized geometry and timing, noise
/// free. About a quarter of the pedestrians never reach the vehicle's lane.
pub fn random_crossing_scenario(seed: u64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lane = LANES_Y_M[rng.random_range(0..LANES_Y_M.len())];
    let mut plan = VehiclePlan::cruise(lane, rng.random_range(20.0..50.0));
    if rng.random_bool(0.2) {
        plan.stop = Some(StopPlan {
            stop_x: -CROSSWALK_HALF_WIDTH_M - rng.random_range(2.0..8.0),
            duration_s: rng.random_range(1.0..3.0),
        });
    }
    let v = vehicle_script("vehicle", &plan, 0.0);
    let x = rng.random_range(-1.5..1.5);
    let upward = rng.random_bool(0.5);
    let speed = rng.random_range(0.8..2.0);
    let ped = if rng.random_bool(0.75) {
        let drift = rng.random_range(-1.5..1.5);
        let psm = rng.random_range(-6.0..6.0);
        crossing_pedestrian("pedestrian", &v, lane, x, drift, upward, speed, psm)
    } else {
        let ys = if upward { -CURB_TO_CURB_Y } else { CURB_TO_CURB_Y };
        let ye = if upward { lane - 1.0 } else { lane + 1.0 };
        let t0 = rng.random_range(0.0..4.0);
        AgentScript::straight("pedestrian", ObjectClass::Pedestrian, [x, ys], [x, ye], speed, t0)
    };
    scenario(&format!("ivt_{seed:05}"), vec![v, ped], 0.0, 0.0, seed)
}

/// Pairs of pedestrians whose paths cross at a random angle, arriving at the
/// crossing point within 0.3 s of each other.
pub fn crossing_corpus(scenes: usize, noise_sigma_px: f64, seed: u64) -> Vec<ScenarioSpec> {
    (0..scenes)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
            let meet = [rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0)];
            let t_meet = 6.0;
            let a_angle = rng.random_range(30f64..150.0).to_radians();
            let b_angle = a_angle + rng.random_range(50f64..130.0).to_radians();
            let half = 5.0;
            let walker = |name: &str, angle: f64, rng: &mut ChaCha8Rng| {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let d = [sign * angle.cos(), sign * angle.sin()];
                let speed = rng.random_range(1.0..1.8);
                let offset = rng.random_range(-0.3..0.3);
                AgentScript::straight(
                    name,
                    ObjectClass::Pedestrian,
                    [meet[0] - half * d[0], meet[1] - half * d[1]],
                    [meet[0] + half * d[0], meet[1] + half * d[1]],
                    speed,
                    t_meet + offset - half / speed,
                )
            };
            let a = walker("walker_a", a_angle, &mut rng);
            let b = walker("walker_b", b_angle, &mut rng);
            scenario(&format!("crossing_{i:03}"), vec![a, b], noise_sigma_px, 0.0, seed.wrapping_add(i as u64))
        })
        .collect()
}

/// Behavior parameters of one study spot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpot {
    pub spot_id: String,
    pub signalized: bool,
    pub encounters: usize,
    /// Share of encounters with a pedestrian.
    pub interactive_share: f64,
    /// Cruise speed range for vehicles meeting a pedestrian, km/h.
    pub speed_kmh: [f64; 2],
    /// Added to the cruise speed when no pedestrian is around.
    pub car_only_bonus_kmh: f64,
    pub psm_mean_s: f64,
    pub psm_sd_s: f64,
    /// Stop probability is `stop_max * exp(-|psm| / stop_scale_s)`.
    pub stop_max: f64,
    pub stop_scale_s: f64,
}

/// Two signalized and three unsignalized spots of different sizes.
pub fn study_spots() -> Vec<StudySpot> {
    let spot = |id: &str, signalized, encounters, share, speed: [f64; 2], psm_mean, stop_max| StudySpot {
        spot_id: id.to_string(),
        signalized,
        encounters,
        interactive_share: share,
        speed_kmh: speed,
        car_only_bonus_kmh: 6.0,
        psm_mean_s: psm_mean,
        psm_sd_s: 2.8,
        stop_max,
        stop_scale_s: 2.5,
    };
    vec![
        spot("A", true, 60, 0.5, [35.0, 48.0], 3.5, 0.3),
        spot("B", true, 30, 0.6, [30.0, 44.0], 3.0, 0.3),
        spot("C", false, 80, 0.7, [20.0, 34.0], 1.0, 0.9),
        spot("D", false, 45, 0.6, [24.0, 38.0], 0.5, 0.8),
        spot("E", false, 25, 0.5, [20.0, 30.0], 1.5, 0.95),
    ]
}

fn study_encounter(rng: &mut ChaCha8Rng, spot: &StudySpot, k: usize) -> Vec<AgentScript> {
    let lane = LANES_Y_M[rng.random_range(0..LANES_Y_M.len())];
    let interactive = rng.random_bool(spot.interactive_share);
    let mut speed = rng.random_range(spot.speed_kmh[0]..spot.speed_kmh[1]);
    if !interactive {
        speed += spot.car_only_bonus_kmh;
        return vec![vehicle_script(&format!("vehicle_{k}"), &VehiclePlan::cruise(lane, speed), 0.0)];
    }
    let psm = Normal::new(spot.psm_mean_s, spot.psm_sd_s)
        .expect("positive sd")
        .sample(rng)
        .clamp(-8.0, 8.0);
    let mut plan = VehiclePlan::cruise(lane, speed);
    if rng.random_bool(spot.stop_max * (-psm.abs() / spot.stop_scale_s).exp()) {
        plan.stop = Some(StopPlan {
            stop_x: -CROSSWALK_HALF_WIDTH_M - rng.random_range(2.0..8.0),
            duration_s: rng.random_range(1.5..3.0),
        });
    }
    let v = vehicle_script(&format!("vehicle_{k}"), &plan, 0.0);
    let ped = crossing_pedestrian(
        &format!("pedestrian_{k}"),
        &v,
        lane,
        rng.random_range(-1.5..1.5),
        rng.random_range(-1.0..1.0),
        rng.random_bool(0.5),
        rng.random_range(1.0..1.8),
        psm,
    );
    vec![v, ped]
}

/// One continuous stream per study spot, encounters back to back with at
/// least a second of empty road between them. `scale` multiplies every
/// spot's encounter count.
pub fn study_corpus(scale: f64, noise_sigma_px: f64, seed: u64) -> Vec<ScenarioSpec> {
    let camera = ObliqueCamera::default();
    study_spots()
        .iter()
        .enumerate()
        .map(|(si, spot)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(si as u64 + 1)));
            let n = ((spot.encounters as f64 * scale).round() as usize).max(1);
            let mut agents = Vec::new();
            let mut cursor = LEAD_IN_S;
            for k in 0..n {
                let group = normalized(study_encounter(&mut rng, spot, k), cursor);
                let end = group.iter().map(|a| a.end_time()).fold(cursor, f64::max);
                agents.extend(group);
                cursor = end + rng.random_range(1.0..2.5);
            }
            ScenarioSpec {
                name: spot.spot_id.clone(),
                spot: synthetic_spot(&spot.spot_id, spot.signalized, &camera),
                camera,
                agents,
                noise_sigma_px,
                drop_prob: 0.0,
                seed: seed.wrapping_add(si as u64),
            }
        })
        .collect()
}
