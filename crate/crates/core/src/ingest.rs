//! Input contracts: detection records, per-camera spot configuration and raw
//! grayscale frames.

use std::fmt;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Calibration, Correspondence};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: point ({x}, {y}) outside frame {width}x{height}")]
    OutOfBounds {
        line: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("line {line}: frame {frame} precedes frame {previous}")]
    NonMonotoneFrame { line: usize, frame: u64, previous: u64 },
    #[error("line {line}: duplicate detection id {id:?} in frame {frame}")]
    DuplicateDetectionId { line: usize, frame: u64, id: String },
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),
    #[error("frame dimensions {got_w}x{got_h} do not match configured {want_w}x{want_h}")]
    FrameSize {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("truncated frame data: {0}")]
    TruncatedFrame(String),
    #[error("spot config: {0}")]
    Document(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IngestError {
    /// Line number for per-record diagnostics.
    pub fn line(&self) -> Option<usize> {
        match self {
            IngestError::MalformedRecord { line, .. }
            | IngestError::OutOfBounds { line, .. }
            | IngestError::NonMonotoneFrame { line, .. }
            | IngestError::DuplicateDetectionId { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectClass::Vehicle => f.write_str("vehicle"),
            ObjectClass::Pedestrian => f.write_str("pedestrian"),
        }
    }
}

/// A 2-D point in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

impl PixelPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One detected object in one frame. The contact point is the ground tip of
/// the object: under the front bumper for vehicles, between the feet for
/// pedestrians.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub spot_id: String,
    pub frame_index: u64,
    pub object_class: ObjectClass,
    pub contact_point_px: PixelPoint,
    pub detection_id: String,
}

/// On-disk shape of a detection line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    frame: u64,
    class: ObjectClass,
    x: f64,
    y: f64,
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spot: Option<String>,
    /// Accepted for compatibility with detector output, never used.
    #[serde(default, skip_serializing, rename = "score")]
    _score: Option<f64>,
}

/// A line-level problem found while parsing leniently.
#[derive(Debug)]
pub struct LineDiagnostic {
    pub line: usize,
    pub error: IngestError,
}

/// Result of a lenient parse: every non-blank line becomes either a record or
/// a diagnostic.
#[derive(Debug, Default)]
pub struct ParsedDetections {
    pub records: Vec<DetectionRecord>,
    pub diagnostics: Vec<LineDiagnostic>,
}

fn is_schema_header(value: &serde_json::Value) -> bool {
    value.get("schema").is_some()
}

fn parse_line(
    text: &str,
    line: usize,
    config: &SpotConfig,
) -> Result<Option<DetectionRecord>, IngestError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| IngestError::MalformedRecord {
            line,
            reason: e.to_string(),
        })?;
    if line == 1 && is_schema_header(&value) {
        return Ok(None);
    }
    let rec: RecordLine = serde_json::from_value(value).map_err(|e| IngestError::MalformedRecord {
        line,
        reason: e.to_string(),
    })?;
    if let Some(spot) = &rec.spot {
        if spot != &config.spot_id {
            return Err(IngestError::MalformedRecord {
                line,
                reason: format!("spot {spot:?} does not match config spot {:?}", config.spot_id),
            });
        }
    }
    let (w, h) = (config.frame_size[0], config.frame_size[1]);
    let inside = rec.x.is_finite()
        && rec.y.is_finite()
        && rec.x >= 0.0
        && rec.y >= 0.0
        && rec.x <= w as f64
        && rec.y <= h as f64;
    if !inside {
        return Err(IngestError::OutOfBounds {
            line,
            x: rec.x,
            y: rec.y,
            width: w,
            height: h,
        });
    }
    Ok(Some(DetectionRecord {
        spot_id: config.spot_id.clone(),
        frame_index: rec.frame,
        object_class: rec.class,
        contact_point_px: PixelPoint::new(rec.x, rec.y),
        detection_id: rec.id,
    }))
}

/// Parses line-delimited detection records, collecting a diagnostic for every
/// bad line instead of stopping. Blank lines are skipped. A leading schema
/// header line (an object with a `schema` key) is accepted and skipped.
pub fn parse_detections_lenient<R: BufRead>(
    reader: R,
    config: &SpotConfig,
) -> Result<ParsedDetections, IngestError> {
    let mut out = ParsedDetections::default();
    let mut last_frame: Option<u64> = None;
    let mut ids_in_frame: std::collections::HashSet<String> = Default::default();
    for (idx, text) in reader.lines().enumerate() {
        let text = text?;
        let line = idx + 1;
        if text.trim().is_empty() {
            continue;
        }
        let rec = match parse_line(&text, line, config) {
            Ok(Some(rec)) => rec,
            Ok(None) => continue,
            Err(error) => {
                out.diagnostics.push(LineDiagnostic { line, error });
                continue;
            }
        };
        match last_frame {
            Some(prev) if rec.frame_index < prev => {
                out.diagnostics.push(LineDiagnostic {
                    line,
                    error: IngestError::NonMonotoneFrame {
                        line,
                        frame: rec.frame_index,
                        previous: prev,
                    },
                });
                continue;
            }
            Some(prev) if rec.frame_index == prev => {}
            _ => ids_in_frame.clear(),
        }
        if !ids_in_frame.insert(rec.detection_id.clone()) {
            out.diagnostics.push(LineDiagnostic {
                line,
                error: IngestError::DuplicateDetectionId {
                    line,
                    frame: rec.frame_index,
                    id: rec.detection_id.clone(),
                },
            });
            continue;
        }
        last_frame = Some(rec.frame_index);
        out.records.push(rec);
    }
    Ok(out)
}

/// Strict variant of [`parse_detections_lenient`]: the first bad line is an error.
pub fn parse_detections<R: BufRead>(
    reader: R,
    config: &SpotConfig,
) -> Result<Vec<DetectionRecord>, IngestError> {
    let mut parsed = parse_detections_lenient(reader, config)?;
    if !parsed.diagnostics.is_empty() {
        return Err(parsed.diagnostics.swap_remove(0).error);
    }
    Ok(parsed.records)
}

/// Writes records in the same line format [`parse_detections`] reads.
pub fn write_detections<W: Write>(mut out: W, records: &[DetectionRecord]) -> std::io::Result<()> {
    for rec in records {
        let line = RecordLine {
            frame: rec.frame_index,
            class: rec.object_class,
            x: rec.contact_point_px.x,
            y: rec.contact_point_px.y,
            id: rec.detection_id.clone(),
            spot: None,
            _score: None,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Per-camera metadata plus calibration and zone geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotConfig {
    pub spot_id: String,
    pub crosswalk_length_m: f64,
    pub lanes: u32,
    pub signalized: bool,
    pub school_zone: bool,
    pub speed_camera: bool,
    pub speed_limit_kmh: f64,
    /// (width, height) in pixels.
    pub frame_size: [u32; 2],
    pub fps: f64,
    pub frame_skip: u32,
    #[serde(default)]
    pub calibration: Vec<Correspondence>,
    /// Pixel length of the crosswalk, for the scalar pixels-per-meter path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crosswalk_length_px: Option<f64>,
    #[serde(default)]
    pub crosswalk_polygon_world: Vec<[f64; 2]>,
    #[serde(default)]
    pub sidewalk_polygons_world: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approach_direction_world: Option<[f64; 2]>,
    #[serde(default = "default_cia_buffer")]
    pub cia_buffer_m: f64,
}

fn default_cia_buffer() -> f64 {
    3.0
}

const REQUIRED_SPOT_FIELDS: &[&str] = &[
    "spot_id",
    "crosswalk_length_m",
    "lanes",
    "signalized",
    "school_zone",
    "speed_camera",
    "speed_limit_kmh",
    "frame_size",
    "fps",
    "frame_skip",
];

impl SpotConfig {
    pub fn frame_width(&self) -> u32 {
        self.frame_size[0]
    }

    pub fn frame_height(&self) -> u32 {
        self.frame_size[1]
    }

    pub fn seconds_per_step(&self) -> f64 {
        self.frame_skip as f64 / self.fps
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let invalid = |field: &str, reason: &str| IngestError::InvalidField {
            field: field.to_string(),
            reason: reason.to_string(),
        };
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(invalid("fps", "must be > 0"));
        }
        if self.frame_skip < 1 {
            return Err(invalid("frame_skip", "must be >= 1"));
        }
        if !(self.crosswalk_length_m > 0.0) {
            return Err(invalid("crosswalk_length_m", "must be > 0"));
        }
        if self.frame_size[0] == 0 || self.frame_size[1] == 0 {
            return Err(invalid("frame_size", "must be non-zero"));
        }
        if !(self.cia_buffer_m >= 0.0) {
            return Err(invalid("cia_buffer_m", "must be >= 0"));
        }
        if let Some(px) = self.crosswalk_length_px {
            if !(px > 0.0) {
                return Err(invalid("crosswalk_length_px", "must be > 0"));
            }
        }
        if self.calibration.is_empty() && self.crosswalk_length_px.is_none() {
            return Err(IngestError::MissingField("calibration".into()));
        }
        if let Some([dx, dy]) = self.approach_direction_world {
            if !(dx.hypot(dy) > 0.0) {
                return Err(invalid("approach_direction_world", "must be non-zero"));
            }
        }
        Ok(())
    }

    /// Builds the calibration implied by this config.
    pub fn calibration(&self) -> Result<Calibration, IngestError> {
        Calibration::from_spot(self).map_err(|e| match e {
            geometry::GeometryError::DegenerateCalibration(msg) => {
                IngestError::DegenerateCalibration(msg)
            }
            other => IngestError::InvalidField {
                field: "calibration".into(),
                reason: other.to_string(),
            },
        })
    }
}

/// Parses and validates a spot configuration document (JSON).
pub fn parse_spot_config(document: &str) -> Result<SpotConfig, IngestError> {
    let value: serde_json::Value =
        serde_json::from_str(document).map_err(|e| IngestError::Document(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| IngestError::Document("expected a JSON object".into()))?;
    for field in REQUIRED_SPOT_FIELDS {
        if !obj.contains_key(*field) {
            return Err(IngestError::MissingField((*field).to_string()));
        }
    }
    let config: SpotConfig =
        serde_json::from_value(value).map_err(|e| IngestError::Document(e.to_string()))?;
    config.validate()?;
    config.calibration()?;
    Ok(config)
}

/// An 8-bit grayscale frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayFrame {
    pub frame_index: u64,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl GrayFrame {
    pub fn new(frame_index: u64, width: u32, height: u32, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width as usize * height as usize);
        Self {
            frame_index,
            width,
            height,
            pixels,
        }
    }

    pub fn filled(frame_index: u64, width: u32, height: u32, value: u8) -> Self {
        Self::new(frame_index, width, height, vec![value; width as usize * height as usize])
    }

    pub fn get(&self, row: u32, col: u32) -> u8 {
        self.pixels[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, row: u32, col: u32, value: u8) {
        self.pixels[row as usize * self.width as usize + col as usize] = value;
    }
}

/// Writes one frame: three little-endian u32 (width, height, frame_index)
/// followed by `width * height` intensity bytes.
pub fn write_gray_frame<W: Write>(mut out: W, frame: &GrayFrame) -> std::io::Result<()> {
    let index = u32::try_from(frame.frame_index)
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "frame index > u32"))?;
    out.write_all(&frame.width.to_le_bytes())?;
    out.write_all(&frame.height.to_le_bytes())?;
    out.write_all(&index.to_le_bytes())?;
    out.write_all(&frame.pixels)
}

/// Reads a concatenation of frames in the [`write_gray_frame`] layout. When
/// `expected` is given, each frame's dimensions must match it.
pub fn read_gray_frames<R: Read>(
    mut input: R,
    expected: Option<(u32, u32)>,
) -> Result<Vec<GrayFrame>, IngestError> {
    let mut frames = Vec::new();
    loop {
        let mut header = [0u8; 12];
        let mut filled = 0;
        while filled < header.len() {
            let n = input.read(&mut header[filled..])?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        if filled == 0 {
            return Ok(frames);
        }
        if filled < header.len() {
            return Err(IngestError::TruncatedFrame(format!(
                "header of frame #{} has {filled} of 12 bytes",
                frames.len()
            )));
        }
        let word = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().unwrap());
        let (width, height, index) = (word(0), word(1), word(2));
        if let Some((w, h)) = expected {
            if (w, h) != (width, height) {
                return Err(IngestError::FrameSize {
                    got_w: width,
                    got_h: height,
                    want_w: w,
                    want_h: h,
                });
            }
        }
        let mut pixels = vec![0u8; width as usize * height as usize];
        input.read_exact(&mut pixels).map_err(|e| {
            IngestError::TruncatedFrame(format!("frame {index}: {e}"))
        })?;
        frames.push(GrayFrame {
            frame_index: index as u64,
            width,
            height,
            pixels,
        });
    }
}
