//! File-based batch stages: synth, segment, track, extract, analyze, report.
//!
//! Each stage reads the previous stage's files and writes its own under the
//! output directory, so any stage can be re-run on its own. Every stage file
//! starts with a schema header. Spots, and scenes within a spot, run in
//! parallel on a pool of `workers` threads; outputs are written in spot id
//! and scene id order regardless of scheduling.
//!
//! Input layout, per spot: `{spot}.spot.json`, `{spot}.detections.jsonl`,
//! optionally `{spot}.frames` (grayscale frames for the motion gate) and
//! `{spot}.truth.json` (synthetic ground truth).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{analyze, emit_report, AnalysisReport, AnalyticsError, AnalyticsParams, SpotScenes};
use crate::features::{extract_scene_features, FeatureError, FeatureParams, SceneFeatures, ZoneMap};
use crate::geometry::{Calibration, GeometryError};
use crate::ingest::{
    parse_detections, parse_spot_config, read_gray_frames, write_detections, DetectionRecord, IngestError,
    SpotConfig,
};
use crate::motion_gate::{gate_detections, motion_flags, segment_scenes, MotionError, MotionParams, SceneSpan};
use crate::synth::{generate, standard_scenarios, study_corpus, GroundTruth, ScenarioSpec, SynthError};
use crate::tracker::validate::{validate_trajectories, TrajectoryReport, ValidationParams};
use crate::tracker::{identified_detections, track_stream, TrackError, TrackerParams, Trajectory};

pub const SCHEMA_VERSION: u32 = 1;

const SEGMENTS_SCHEMA: &str = "pedrisk.segments";
const TRACKS_SCHEMA: &str = "pedrisk.tracks";
const FEATURES_SCHEMA: &str = "pedrisk.features";
const ANALYSIS_SCHEMA: &str = "pedrisk.analysis";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{path}: schema {found} v{found_version}, expected {expected} v{SCHEMA_VERSION}")]
    Schema {
        path: String,
        found: String,
        found_version: u32,
        expected: String,
    },
    #[error("spot {spot}: {source}")]
    Ingest { spot: String, source: IngestError },
    #[error("spot {spot}: {source}")]
    Geometry { spot: String, source: GeometryError },
    #[error("spot {spot}: {source}")]
    Motion { spot: String, source: MotionError },
    #[error("spot {spot}: {source}")]
    Track { spot: String, source: TrackError },
    #[error("scene {scene}: {source}")]
    Feature { scene: String, source: FeatureError },
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("no spots found in {0}")]
    NoSpots(String),
}

impl PipelineError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Io { .. } => "io",
            PipelineError::Format { .. } => "format",
            PipelineError::Schema { .. } => "schema",
            PipelineError::Ingest { .. } => "ingest",
            PipelineError::Geometry { .. } => "geometry",
            PipelineError::Motion { .. } => "motion",
            PipelineError::Track { .. } => "track",
            PipelineError::Feature { .. } => "feature",
            PipelineError::Analytics(_) => "analytics",
            PipelineError::Synth(_) => "synth",
            PipelineError::NoSpots(_) => "no_spots",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    /// The eight named scenarios, one spot each.
    #[default]
    Standard,
    /// Five spots with many encounters each.
    Study,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub corpus: CorpusKind,
    /// Encounter count multiplier for the study corpus.
    pub scale: f64,
    pub noise_sigma_px: f64,
    pub drop_prob: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            corpus: CorpusKind::Standard,
            scale: 1.0,
            noise_sigma_px: 0.0,
            drop_prob: 0.0,
        }
    }
}

/// Motion gate settings; the hangover defaults to twice the spot's frame skip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSettings {
    pub pixel_threshold: u8,
    pub active_fraction: f64,
    pub hangover_frames: Option<u64>,
}

impl Default for MotionSettings {
    fn default() -> Self {
        let p = MotionParams::default();
        Self {
            pixel_threshold: p.pixel_threshold,
            active_fraction: p.active_fraction,
            hangover_frames: None,
        }
    }
}

impl MotionSettings {
    pub fn for_spot(&self, spot: &SpotConfig) -> MotionParams {
        let base = MotionParams::for_frame_skip(spot.frame_skip);
        MotionParams {
            pixel_threshold: self.pixel_threshold,
            active_fraction: self.active_fraction,
            hangover_frames: self.hangover_frames.unwrap_or(base.hangover_frames),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Directory holding the per-spot input files.
    pub input_dir: PathBuf,
    /// Directory receiving every stage's output.
    pub out_dir: PathBuf,
    /// Spot ids to process; empty means every spot in `input_dir`.
    pub spots: Vec<String>,
    pub tracker: TrackerParams,
    pub motion: MotionSettings,
    pub features: FeatureParams,
    /// Overrides each spot's CIA buffer when set.
    pub cia_buffer_m: Option<f64>,
    pub analytics: AnalyticsParams,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub seed: u64,
    pub synth: SynthSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input_dir: PathBuf::from("corpus"),
            out_dir: PathBuf::from("out"),
            spots: Vec::new(),
            tracker: TrackerParams::default(),
            motion: MotionSettings::default(),
            features: FeatureParams::default(),
            cia_buffer_m: None,
            analytics: AnalyticsParams::default(),
            workers: 0,
            seed: 0,
            synth: SynthSettings::default(),
        }
    }
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), PipelineError> {
    if ok {
        Ok(())
    } else {
        Err(PipelineError::Config(what()))
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| format_err(path, e))
    }

    pub fn segments_dir(&self) -> PathBuf {
        self.out_dir.join("segments")
    }

    pub fn tracks_dir(&self) -> PathBuf {
        self.out_dir.join("tracks")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.out_dir.join("features")
    }

    pub fn analysis_path(&self) -> PathBuf {
        self.out_dir.join("analysis.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out_dir.join("report")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let outputs = [
            self.segments_dir(),
            self.tracks_dir(),
            self.features_dir(),
            self.analysis_path(),
            self.report_dir(),
        ];
        check(self.input_dir != self.out_dir, || "input_dir and out_dir must differ".into())?;
        check(!outputs.contains(&self.input_dir), || {
            format!("input_dir {} collides with a stage output", self.input_dir.display())
        })?;
        let f = &self.features;
        check(f.alpha > 0.0 && f.alpha <= 1.0, || format!("alpha {} outside (0, 1]", f.alpha))?;
        check(f.epsilon_kmh >= 0.0 && f.epsilon_kmh.is_finite(), || {
            format!("epsilon_kmh {} must be finite and >= 0", f.epsilon_kmh)
        })?;
        check(f.stop_tolerance_kmh > 0.0, || "stop_tolerance_kmh must be > 0".into())?;
        check(f.stop_min_steps >= 1, || "stop_min_steps must be >= 1".into())?;
        let a = &self.analytics;
        check(a.baseline_m > 0.0 && a.baseline_m.is_finite(), || {
            format!("baseline_m {} must be finite and > 0", a.baseline_m)
        })?;
        if let Some(b) = a.range_boundaries {
            check(b.windows(2).all(|w| w[0] < w[1]), || "range_boundaries must increase".into())?;
        }
        let t = &self.tracker;
        check(t.gate_vehicle_px > 0.0 && t.gate_pedestrian_px > 0.0, || "gates must be > 0".into())?;
        check(t.process_noise > 0.0 && t.measurement_noise > 0.0, || "noise terms must be > 0".into())?;
        if let Some(b) = self.cia_buffer_m {
            check(b >= 0.0 && b.is_finite(), || format!("cia_buffer_m {b} must be finite and >= 0"))?;
        }
        let m = MotionParams {
            pixel_threshold: self.motion.pixel_threshold,
            active_fraction: self.motion.active_fraction,
            hangover_frames: 0,
        };
        m.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        check(self.workers <= 1024, || format!("workers {} above 1024", self.workers))?;
        let s = &self.synth;
        check(s.scale > 0.0 && s.scale.is_finite(), || format!("synth scale {} must be > 0", s.scale))?;
        check(s.noise_sigma_px >= 0.0 && s.noise_sigma_px.is_finite(), || "synth noise must be >= 0".into())?;
        check((0.0..1.0).contains(&s.drop_prob), || "synth drop_prob outside [0, 1)".into())?;
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spot: Option<String>,
}

fn header(schema: &str, spot: Option<&str>) -> Header {
    Header {
        schema: schema.to_string(),
        version: SCHEMA_VERSION,
        spot: spot.map(str::to_string),
    }
}

fn check_header(path: &Path, h: &Header, expected: &str) -> Result<(), PipelineError> {
    if h.schema != expected || h.version != SCHEMA_VERSION {
        return Err(PipelineError::Schema {
            path: path.display().to_string(),
            found: h.schema.clone(),
            found_version: h.version,
            expected: expected.to_string(),
        });
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, value).map_err(|e| format_err(path, e))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| format_err(path, e))
}

fn create_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Input files of one spot.
#[derive(Debug, Clone)]
pub struct SpotInput {
    pub spot_id: String,
    pub config_path: PathBuf,
    pub detections_path: PathBuf,
    pub frames_path: Option<PathBuf>,
    pub truth_path: Option<PathBuf>,
}

impl SpotInput {
    fn in_dir(dir: &Path, spot_id: &str) -> Self {
        let opt = |p: PathBuf| p.exists().then_some(p);
        Self {
            spot_id: spot_id.to_string(),
            config_path: dir.join(format!("{spot_id}.spot.json")),
            detections_path: dir.join(format!("{spot_id}.detections.jsonl")),
            frames_path: opt(dir.join(format!("{spot_id}.frames"))),
            truth_path: opt(dir.join(format!("{spot_id}.truth.json"))),
        }
    }

    pub fn load_config(&self) -> Result<SpotConfig, PipelineError> {
        let text = fs::read_to_string(&self.config_path).map_err(io_err(&self.config_path))?;
        let spot = parse_spot_config(&text).map_err(|source| PipelineError::Ingest {
            spot: self.spot_id.clone(),
            source,
        })?;
        if spot.spot_id != self.spot_id {
            return Err(format_err(
                &self.config_path,
                format!("file names spot {} but declares {}", self.spot_id, spot.spot_id),
            ));
        }
        Ok(spot)
    }
}

/// Spots present in the input directory, sorted by id and filtered by the
/// configured list.
pub fn discover_spots(config: &PipelineConfig) -> Result<Vec<SpotInput>, PipelineError> {
    let dir = &config.input_dir;
    let mut ids: Vec<String> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix(".spot.json"))
                .map(str::to_string)
        })
        .collect();
    ids.sort();
    if !config.spots.is_empty() {
        for want in &config.spots {
            if !ids.contains(want) {
                return Err(PipelineError::Config(format!("spot {want} not found in {}", dir.display())));
            }
        }
        ids.retain(|id| config.spots.contains(id));
    }
    if ids.is_empty() {
        return Err(PipelineError::NoSpots(dir.display().to_string()));
    }
    Ok(ids.iter().map(|id| SpotInput::in_dir(dir, id)).collect())
}

/// Writes a synthetic corpus into the input directory and returns the
/// scenarios written.
pub fn run_synth(config: &PipelineConfig) -> Result<Vec<ScenarioSpec>, PipelineError> {
    config.validate()?;
    let s = &config.synth;
    let specs = match s.corpus {
        CorpusKind::Standard => standard_scenarios(s.noise_sigma_px, s.drop_prob, config.seed),
        CorpusKind::Study => {
            let mut specs = study_corpus(s.scale, s.noise_sigma_px, config.seed);
            for spec in &mut specs {
                spec.drop_prob = s.drop_prob;
            }
            specs
        }
    };
    let dir = &config.input_dir;
    create_dir(dir)?;
    let pool = config.pool()?;
    let generated: Vec<(Vec<DetectionRecord>, GroundTruth)> = pool.install(|| {
        specs
            .par_iter()
            .map(generate)
            .collect::<Result<Vec<_>, SynthError>>()
    })?;
    let mut records = 0;
    for (spec, (detections, truth)) in specs.iter().zip(&generated) {
        let input = SpotInput::in_dir(dir, &spec.spot.spot_id);
        write_json(&input.config_path, &spec.spot)?;
        write_json(&dir.join(format!("{}.truth.json", spec.spot.spot_id)), truth)?;
        let path = &input.detections_path;
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        write_detections(&mut w, detections).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))?;
        records += detections.len();
    }
    info!("synth: {} spots, {records} detection records", specs.len());
    Ok(specs)
}

/// Per-stage counters for logging.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: &'static str,
    pub spots: usize,
    pub records: usize,
    pub scenes: usize,
    pub frames: u64,
    pub skipped_scenes: usize,
}

impl StageSummary {
    fn log(&self, started: Instant) {
        info!(
            "{}: {} spots, {} records, {} scenes, {} frames, {} skipped, {:.2}s",
            self.stage,
            self.spots,
            self.records,
            self.scenes,
            self.frames,
            self.skipped_scenes,
            started.elapsed().as_secs_f64()
        );
    }
}

fn read_segments(path: &Path, spot: &SpotConfig) -> Result<Vec<DetectionRecord>, PipelineError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(io_err(path))?;
    let h: Header = serde_json::from_str(&first).map_err(|e| format_err(path, e))?;
    check_header(path, &h, SEGMENTS_SCHEMA)?;
    parse_detections(reader, spot).map_err(|source| PipelineError::Ingest {
        spot: spot.spot_id.clone(),
        source,
    })
}

/// Motion gating. Detections in frames without motion are dropped when the
/// spot has frames; otherwise every detection passes.
pub fn run_segment(config: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let started = Instant::now();
    config.validate()?;
    let spots = discover_spots(config)?;
    let dir = config.segments_dir();
    create_dir(&dir)?;
    let counts = config.pool()?.install(|| {
        spots
            .par_iter()
            .map(|input| -> Result<(usize, usize), PipelineError> {
                let spot = input.load_config()?;
                let err = |source| PipelineError::Ingest {
                    spot: spot.spot_id.clone(),
                    source,
                };
                let file = fs::File::open(&input.detections_path).map_err(io_err(&input.detections_path))?;
                let detections = parse_detections(BufReader::new(file), &spot).map_err(err)?;
                let total = detections.len();
                let kept = match &input.frames_path {
                    Some(fp) => {
                        let file = fs::File::open(fp).map_err(io_err(fp))?;
                        let size = Some((spot.frame_width(), spot.frame_height()));
                        let frames = read_gray_frames(BufReader::new(file), size).map_err(err)?;
                        let flags = motion_flags(&frames, &config.motion.for_spot(&spot)).map_err(|source| {
                            PipelineError::Motion {
                                spot: spot.spot_id.clone(),
                                source,
                            }
                        })?;
                        gate_detections(&detections, &flags)
                    }
                    None => detections,
                };
                let path = dir.join(format!("{}.jsonl", spot.spot_id));
                let file = fs::File::create(&path).map_err(io_err(&path))?;
                let mut w = BufWriter::new(file);
                serde_json::to_writer(&mut w, &header(SEGMENTS_SCHEMA, Some(&spot.spot_id)))
                    .map_err(|e| format_err(&path, e))?;
                w.write_all(b"\n").map_err(io_err(&path))?;
                write_detections(&mut w, &kept).map_err(io_err(&path))?;
                w.flush().map_err(io_err(&path))?;
                Ok((total, kept.len()))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let summary = StageSummary {
        stage: "segment",
        spots: spots.len(),
        records: counts.iter().map(|c| c.1).sum(),
        ..Default::default()
    };
    let gated: usize = counts.iter().map(|c| c.0 - c.1).sum();
    if gated > 0 {
        info!("segment: {gated} detections gated out as motionless");
    }
    summary.log(started);
    Ok(summary)
}

/// Tracks of one spot plus its scene spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotTracks {
    pub schema: String,
    pub version: u32,
    pub spot_id: String,
    pub trajectories: Vec<Trajectory>,
    pub scenes: Vec<SceneSpan>,
    pub validation: TrajectoryReport,
}

/// Tracking, scene segmentation and trajectory validation. Validation uses
/// the ground-truth labels when the spot has a truth file.
pub fn run_track(config: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let started = Instant::now();
    config.validate()?;
    let spots = discover_spots(config)?;
    let dir = config.tracks_dir();
    create_dir(&dir)?;
    let results = config.pool()?.install(|| {
        spots
            .par_iter()
            .map(|input| -> Result<SpotTracks, PipelineError> {
                let spot = input.load_config()?;
                let calib = Calibration::from_spot(&spot).map_err(|source| PipelineError::Geometry {
                    spot: spot.spot_id.clone(),
                    source,
                })?;
                let seg_path = config.segments_dir().join(format!("{}.jsonl", spot.spot_id));
                let detections = read_segments(&seg_path, &spot)?;
                let trajectories =
                    track_stream(&detections, &config.tracker, &calib).map_err(|source| PipelineError::Track {
                        spot: spot.spot_id.clone(),
                        source,
                    })?;
                let scenes = segment_scenes(
                    &spot.spot_id,
                    &identified_detections(&trajectories),
                    None,
                    &config.motion.for_spot(&spot),
                );
                let truth = match &input.truth_path {
                    Some(p) => Some(read_json::<GroundTruth>(p)?.label_map()),
                    None => None,
                };
                let vparams = ValidationParams::new(config.tracker, spot.frame_skip);
                let validation = validate_trajectories(
                    &[(spot.spot_id.clone(), trajectories.clone())],
                    truth.as_ref(),
                    &vparams,
                );
                let out = SpotTracks {
                    schema: TRACKS_SCHEMA.to_string(),
                    version: SCHEMA_VERSION,
                    spot_id: spot.spot_id.clone(),
                    trajectories,
                    scenes,
                    validation,
                };
                write_json(&dir.join(format!("{}.json", spot.spot_id)), &out)?;
                let frames: u64 = out.scenes.iter().map(|s| s.frame_count()).sum();
                let n = out.scenes.len();
                if n > 0 {
                    let avg = frames as f64 / n as f64;
                    info!(
                        "spot {}: {n} scenes, {frames} frames, {avg:.2} frames ({:.2} sec) per scene",
                        spot.spot_id,
                        avg / spot.fps
                    );
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let summary = StageSummary {
        stage: "track",
        spots: results.len(),
        records: results
            .iter()
            .flat_map(|r| &r.trajectories)
            .map(|t| t.points.len())
            .sum(),
        scenes: results.iter().map(|r| r.scenes.len()).sum(),
        frames: results
            .iter()
            .flat_map(|r| &r.scenes)
            .map(|s| s.frame_count())
            .sum(),
        skipped_scenes: 0,
    };
    summary.log(started);
    Ok(summary)
}

fn zones_for(spot: &SpotConfig, config: &PipelineConfig) -> Result<ZoneMap, FeatureError> {
    match config.cia_buffer_m {
        Some(b) => {
            let mut s = spot.clone();
            s.cia_buffer_m = b;
            ZoneMap::from_spot(&s)
        }
        None => ZoneMap::from_spot(spot),
    }
}

/// Scene features of one spot in scene order, plus the scenes that were
/// skipped because their vehicle track is too short or never moves.
pub fn spot_features(
    spot: &SpotConfig,
    tracks: &SpotTracks,
    config: &PipelineConfig,
) -> Result<(Vec<SceneFeatures>, Vec<(String, FeatureError)>), PipelineError> {
    let calib = Calibration::from_spot(spot).map_err(|source| PipelineError::Geometry {
        spot: spot.spot_id.clone(),
        source,
    })?;
    let zones = zones_for(spot, config).map_err(|source| PipelineError::Feature {
        scene: format!("{}-*", spot.spot_id),
        source,
    })?;
    let results: Vec<(String, Result<SceneFeatures, FeatureError>)> = tracks
        .scenes
        .par_iter()
        .map(|scene| {
            (
                scene.scene_id.clone(),
                extract_scene_features(&spot.spot_id, scene, &tracks.trajectories, &zones, &calib, &config.features),
            )
        })
        .collect();
    let mut features = Vec::new();
    let mut skipped = Vec::new();
    for (scene, r) in results {
        match r {
            Ok(f) => features.push(f),
            Err(e @ (FeatureError::TooShort { .. } | FeatureError::ZeroHeading)) => skipped.push((scene, e)),
            Err(source) => return Err(PipelineError::Feature { scene, source }),
        }
    }
    features.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    Ok((features, skipped))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeaturesHeader {
    schema: String,
    version: u32,
    spot: String,
    signalized: bool,
    scenes: usize,
    skipped: Vec<String>,
}

/// Scene features, one JSON line per scene.
pub fn run_extract(config: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let started = Instant::now();
    config.validate()?;
    let spots = discover_spots(config)?;
    let dir = config.features_dir();
    create_dir(&dir)?;
    let results = config.pool()?.install(|| {
        spots
            .par_iter()
            .map(|input| -> Result<(usize, usize, u64), PipelineError> {
                let spot = input.load_config()?;
                let tracks_path = config.tracks_dir().join(format!("{}.json", spot.spot_id));
                let tracks: SpotTracks = read_json(&tracks_path)?;
                check_header(&tracks_path, &header_of(&tracks), TRACKS_SCHEMA)?;
                let (features, skipped) = spot_features(&spot, &tracks, config)?;
                for (scene, e) in &skipped {
                    warn!("scene {scene} skipped: {e}");
                }
                let path = dir.join(format!("{}.jsonl", spot.spot_id));
                let file = fs::File::create(&path).map_err(io_err(&path))?;
                let mut w = BufWriter::new(file);
                let h = FeaturesHeader {
                    schema: FEATURES_SCHEMA.to_string(),
                    version: SCHEMA_VERSION,
                    spot: spot.spot_id.clone(),
                    signalized: spot.signalized,
                    scenes: features.len(),
                    skipped: skipped.iter().map(|(s, _)| s.clone()).collect(),
                };
                serde_json::to_writer(&mut w, &h).map_err(|e| format_err(&path, e))?;
                w.write_all(b"\n").map_err(io_err(&path))?;
                for f in &features {
                    serde_json::to_writer(&mut w, f).map_err(|e| format_err(&path, e))?;
                    w.write_all(b"\n").map_err(io_err(&path))?;
                }
                w.flush().map_err(io_err(&path))?;
                let frames = features.iter().map(|f| f.frame_end - f.frame_start + 1).sum();
                Ok((features.len(), skipped.len(), frames))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let summary = StageSummary {
        stage: "extract",
        spots: results.len(),
        records: 0,
        scenes: results.iter().map(|r| r.0).sum(),
        frames: results.iter().map(|r| r.2).sum(),
        skipped_scenes: results.iter().map(|r| r.1).sum(),
    };
    summary.log(started);
    Ok(summary)
}

fn header_of(t: &SpotTracks) -> Header {
    Header {
        schema: t.schema.clone(),
        version: t.version,
        spot: Some(t.spot_id.clone()),
    }
}

/// Reads one spot's features file.
pub fn read_features(path: &Path) -> Result<SpotScenes, PipelineError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| format_err(path, "empty file"))?
        .map_err(io_err(path))?;
    let h: FeaturesHeader = serde_json::from_str(&first).map_err(|e| format_err(path, e))?;
    check_header(
        path,
        &Header {
            schema: h.schema.clone(),
            version: h.version,
            spot: None,
        },
        FEATURES_SCHEMA,
    )?;
    let mut scenes = Vec::with_capacity(h.scenes);
    for line in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        scenes.push(serde_json::from_str(&line).map_err(|e| format_err(path, e))?);
    }
    Ok(SpotScenes {
        spot_id: h.spot,
        signalized: h.signalized,
        scenes,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnalysisFile {
    schema: String,
    version: u32,
    report: AnalysisReport,
}

/// Aggregates every spot's features into `analysis.json`.
pub fn run_analyze(config: &PipelineConfig) -> Result<AnalysisReport, PipelineError> {
    let started = Instant::now();
    config.validate()?;
    let spots = discover_spots(config)?;
    let all: Vec<SpotScenes> = spots
        .iter()
        .map(|s| read_features(&config.features_dir().join(format!("{}.jsonl", s.spot_id))))
        .collect::<Result<_, _>>()?;
    let report = analyze(&all, &config.analytics);
    create_dir(&config.out_dir)?;
    write_json(
        &config.analysis_path(),
        &AnalysisFile {
            schema: ANALYSIS_SCHEMA.to_string(),
            version: SCHEMA_VERSION,
            report: report.clone(),
        },
    )?;
    info!(
        "analyze: {} spots, {} scenes, {:.2}s",
        all.len(),
        all.iter().map(|s| s.scenes.len()).sum::<usize>(),
        started.elapsed().as_secs_f64()
    );
    Ok(report)
}

/// CSV tables and plot data from `analysis.json`.
pub fn run_report(config: &PipelineConfig) -> Result<Vec<PathBuf>, PipelineError> {
    config.validate()?;
    let path = config.analysis_path();
    let file: AnalysisFile = read_json(&path)?;
    check_header(
        &path,
        &Header {
            schema: file.schema.clone(),
            version: file.version,
            spot: None,
        },
        ANALYSIS_SCHEMA,
    )?;
    let written = emit_report(&file.report, &config.report_dir())?;
    info!("report: {} files in {}", written.len(), config.report_dir().display());
    Ok(written)
}

/// Segment through report.
pub fn run_all(config: &PipelineConfig) -> Result<Vec<PathBuf>, PipelineError> {
    run_segment(config)?;
    run_track(config)?;
    run_extract(config)?;
    run_analyze(config)?;
    run_report(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: &Path) -> PipelineConfig {
        PipelineConfig {
            input_dir: dir.join("corpus"),
            out_dir: dir.join("out"),
            workers: 2,
            ..Default::default()
        }
    }

    #[test]
    fn standard_corpus_runs_end_to_end() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config(tmp.path());
        run_synth(&cfg).unwrap();
        let files = run_all(&cfg).unwrap();
        assert!(files.iter().any(|f| f.ends_with("speed_stats.csv")));
        let tracks: SpotTracks = read_json(&cfg.tracks_dir().join("near_miss.json")).unwrap();
        assert_eq!(tracks.validation.totals.total(), 0);
        let feats = read_features(&cfg.features_dir().join("near_miss.jsonl")).unwrap();
        assert_eq!(feats.scenes.len(), 1);
        let psm = feats.scenes[0].psm.as_ref().unwrap().value.seconds;
        assert!(psm > 0.0 && psm < 1.25, "{psm}");
    }

    #[test]
    fn stage_reads_check_schema() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config(tmp.path());
        run_synth(&cfg).unwrap();
        run_segment(&cfg).unwrap();
        let seg = cfg.segments_dir().join("single_pass.jsonl");
        let text = fs::read_to_string(&seg).unwrap();
        let bumped = text.replacen("\"version\":1", "\"version\":9", 1);
        fs::write(&seg, bumped).unwrap();
        let err = run_track(&cfg).unwrap_err();
        assert_eq!(err.kind(), "schema", "{err}");
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut cfg = PipelineConfig::default();
        cfg.features.alpha = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.out_dir = cfg.input_dir.clone();
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.analytics.baseline_m = -1.0;
        assert!(cfg.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), cfg);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"wokers": 2}"#).is_err());
        let partial: PipelineConfig = serde_json::from_str(r#"{"workers": 3}"#).unwrap();
        assert_eq!(partial.workers, 3);
        assert_eq!(partial.features, FeatureParams::default());
    }

    #[test]
    fn unknown_spot_is_a_config_error() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = config(tmp.path());
        run_synth(&cfg).unwrap();
        cfg.spots = vec!["nowhere".into()];
        assert_eq!(run_segment(&cfg).unwrap_err().kind(), "config");
    }
}
