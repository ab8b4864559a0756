//! Per-spot aggregation of scene features: speed tables, stopping
//! percentages, PSM distributions and the PSM-range cross-tab.

pub mod distribution;
pub mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{SceneFeatures, StopFlag};

pub use distribution::{
    freedman_diaconis, merge_weights, psm_ranges, weighted_merge, weighted_quantile, Histogram, PsmDistribution,
    PsmRanges, SpotWeight,
};
pub use report::emit_report;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("spot {0} has no scenes")]
    EmptySpot(String),
    #[error("no qualifying scenes")]
    NoQualifyingScenes,
    #[error("distribution has samples of one sign only")]
    OneSidedDistribution,
    #[error("spot {0} is signalized")]
    SignalizedSpot(String),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneType {
    CarOnly,
    Interactive,
}

pub fn classify_scene(features: &SceneFeatures) -> SceneType {
    if features.pedestrians.is_empty() {
        SceneType::CarOnly
    } else {
        SceneType::Interactive
    }
}

/// How a scene's speed list is reduced to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedReduction {
    #[default]
    Mean,
    Median,
}

impl SpeedReduction {
    pub fn apply(&self, speeds: &[f64]) -> Option<f64> {
        if speeds.is_empty() {
            return None;
        }
        Some(match self {
            SpeedReduction::Mean => speeds.iter().sum::<f64>() / speeds.len() as f64,
            SpeedReduction::Median => {
                let mut s = speeds.to_vec();
                s.sort_by(f64::total_cmp);
                let n = s.len();
                if n % 2 == 1 {
                    s[n / 2]
                } else {
                    0.5 * (s[n / 2 - 1] + s[n / 2])
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedSummary {
    pub max: f64,
    pub min: f64,
    pub mean: f64,
}

impl SpeedSummary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean: values.iter().sum::<f64>() / values.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotStats {
    pub spot_id: String,
    pub scenes: usize,
    pub car_only_scenes: usize,
    pub interactive_scenes: usize,
    pub overall: SpeedSummary,
    pub car_only: Option<SpeedSummary>,
    pub interactive: Option<SpeedSummary>,
}

/// Speed table of one spot over the scene-level speeds.
pub fn spot_speed_stats(
    spot_id: &str,
    scenes: &[SceneFeatures],
    reduction: SpeedReduction,
) -> Result<SpotStats, AnalyticsError> {
    let mut all = Vec::new();
    let mut car_only = Vec::new();
    let mut interactive = Vec::new();
    for s in scenes {
        let kind = classify_scene(s);
        let Some(v) = reduction.apply(&s.vehicle.speed_kmh) else {
            continue;
        };
        all.push(v);
        match kind {
            SceneType::CarOnly => car_only.push(v),
            SceneType::Interactive => interactive.push(v),
        }
    }
    let overall = SpeedSummary::of(&all).ok_or_else(|| AnalyticsError::EmptySpot(spot_id.to_string()))?;
    let counts = scene_counts(scenes);
    Ok(SpotStats {
        spot_id: spot_id.to_string(),
        scenes: scenes.len(),
        car_only_scenes: counts.car_only,
        interactive_scenes: counts.interactive,
        overall,
        car_only: SpeedSummary::of(&car_only),
        interactive: SpeedSummary::of(&interactive),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneCounts {
    pub car_only: usize,
    pub interactive: usize,
    pub frames: u64,
}

pub fn scene_counts(scenes: &[SceneFeatures]) -> SceneCounts {
    let mut c = SceneCounts::default();
    for s in scenes {
        match classify_scene(s) {
            SceneType::CarOnly => c.car_only += 1,
            SceneType::Interactive => c.interactive += 1,
        }
        c.frames += s.frame_end - s.frame_start + 1;
    }
    c
}

/// Whether the driver stopped within `baseline_m` of the crosswalk.
pub fn stopped_within(features: &SceneFeatures, baseline_m: f64) -> bool {
    features.vehicle.stop == StopFlag::Stop
        && features.vehicle.stop_distance_m.is_some_and(|d| d <= baseline_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingResult {
    pub qualifying: usize,
    pub stopped: usize,
    pub percentage: f64,
}

/// Share of interactive scenes with a pedestrian on the crosswalk or in its
/// influenced area where the vehicle stopped within `baseline_m`.
pub fn stopping_percentage(scenes: &[SceneFeatures], baseline_m: f64) -> Result<StoppingResult, AnalyticsError> {
    let qualifying: Vec<&SceneFeatures> = scenes
        .iter()
        .filter(|s| classify_scene(s) == SceneType::Interactive && s.pedestrian_near_crosswalk())
        .collect();
    if qualifying.is_empty() {
        return Err(AnalyticsError::NoQualifyingScenes);
    }
    let stopped = qualifying.iter().filter(|s| stopped_within(s, baseline_m)).count();
    Ok(StoppingResult {
        qualifying: qualifying.len(),
        stopped,
        percentage: 100.0 * stopped as f64 / qualifying.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeCell {
    pub range: usize,
    pub spot_id: String,
    pub scenes: usize,
    pub stopped: usize,
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsmRangeTable {
    pub ranges: PsmRanges,
    /// Only non-empty cells, ordered by range then spot.
    pub cells: Vec<RangeCell>,
}

impl PsmRangeTable {
    pub fn cell(&self, range: usize, spot_id: &str) -> Option<&RangeCell> {
        self.cells.iter().find(|c| c.range == range && c.spot_id == spot_id)
    }
}

/// A spot's scenes together with the metadata the analyses group by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotScenes {
    pub spot_id: String,
    pub signalized: bool,
    pub scenes: Vec<SceneFeatures>,
}

impl SpotScenes {
    pub fn psm_samples(&self) -> Vec<f64> {
        self.scenes.iter().filter_map(|s| s.psm.as_ref().map(|p| p.value.seconds)).collect()
    }
}

/// Stopping percentage per PSM range and spot, unsignalized spots only.
pub fn stopping_by_psm_range(
    spots: &[SpotScenes],
    ranges: &PsmRanges,
    baseline_m: f64,
) -> Result<PsmRangeTable, AnalyticsError> {
    if let Some(s) = spots.iter().find(|s| s.signalized) {
        return Err(AnalyticsError::SignalizedSpot(s.spot_id.clone()));
    }
    let mut tally: BTreeMap<(usize, String), (usize, usize)> = BTreeMap::new();
    for spot in spots {
        for scene in &spot.scenes {
            let Some(p) = &scene.psm else { continue };
            let e = tally.entry((ranges.range_of(p.value.seconds), spot.spot_id.clone())).or_default();
            e.0 += 1;
            if stopped_within(scene, baseline_m) {
                e.1 += 1;
            }
        }
    }
    Ok(PsmRangeTable {
        ranges: *ranges,
        cells: tally
            .into_iter()
            .map(|((range, spot_id), (scenes, stopped))| RangeCell {
                range,
                spot_id,
                scenes,
                stopped,
                percentage: 100.0 * stopped as f64 / scenes as f64,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyticsParams {
    pub baseline_m: f64,
    pub speed_reduction: SpeedReduction,
    /// Keep only non-negative PSM in the per-group and per-spot distributions.
    pub positive_psm_only: bool,
    /// Fixed range cut points instead of the merged-distribution quartiles.
    pub range_boundaries: Option<[f64; 7]>,
}

impl Default for AnalyticsParams {
    fn default() -> Self {
        Self {
            baseline_m: 10.0,
            speed_reduction: SpeedReduction::Mean,
            positive_psm_only: true,
            range_boundaries: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotSummary {
    pub spot_id: String,
    pub signalized: bool,
    pub counts: SceneCounts,
    pub speed: Option<SpotStats>,
    pub stopping: Option<StoppingResult>,
}

/// All aggregates for a corpus of spots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub spots: Vec<SpotSummary>,
    /// Per signalization group, then per spot.
    pub distributions: Vec<PsmDistribution>,
    /// Weighted merges per signalization group.
    pub merged: Vec<PsmDistribution>,
    pub ranges: Option<PsmRanges>,
    pub stopping_by_range: Option<PsmRangeTable>,
}

fn group_name(signalized: bool) -> &'static str {
    if signalized {
        "signalized"
    } else {
        "unsignalized"
    }
}

/// Runs every analysis; spots are processed in id order.
pub fn analyze(spots: &[SpotScenes], params: &AnalyticsParams) -> AnalysisReport {
    let mut spots: Vec<&SpotScenes> = spots.iter().collect();
    spots.sort_by(|a, b| a.spot_id.cmp(&b.spot_id));

    let summaries = spots
        .iter()
        .map(|s| SpotSummary {
            spot_id: s.spot_id.clone(),
            signalized: s.signalized,
            counts: scene_counts(&s.scenes),
            speed: spot_speed_stats(&s.spot_id, &s.scenes, params.speed_reduction).ok(),
            stopping: stopping_percentage(&s.scenes, params.baseline_m).ok(),
        })
        .collect();

    let keep = |x: &f64| !params.positive_psm_only || *x >= 0.0;
    let mut distributions = Vec::new();
    let mut merged = Vec::new();
    for signalized in [true, false] {
        let members: Vec<&&SpotScenes> = spots.iter().filter(|s| s.signalized == signalized).collect();
        let group: Vec<f64> = members
            .iter()
            .flat_map(|s| s.psm_samples())
            .filter(keep)
            .collect();
        distributions.push(PsmDistribution::unweighted(group_name(signalized), group));
        let per_spot: Vec<(String, Vec<f64>)> = members
            .iter()
            .map(|s| (s.spot_id.clone(), s.psm_samples()))
            .collect();
        merged.push(weighted_merge(group_name(signalized), &per_spot));
    }
    for s in &spots {
        let samples = s.psm_samples().into_iter().filter(keep).collect();
        distributions.push(PsmDistribution::unweighted(format!("spot_{}", s.spot_id), samples));
    }

    let unsignalized_merge = &merged[1];
    let ranges = match params.range_boundaries {
        Some(b) => Some(PsmRanges { boundaries: b }),
        None => psm_ranges(unsignalized_merge).ok(),
    };
    let unsignalized: Vec<SpotScenes> = spots
        .iter()
        .filter(|s| !s.signalized)
        .map(|s| (*s).clone())
        .collect();
    let stopping_by_range = ranges.and_then(|r| stopping_by_psm_range(&unsignalized, &r, params.baseline_m).ok());

    AnalysisReport {
        spots: summaries,
        distributions,
        merged,
        ranges,
        stopping_by_range,
    }
}
