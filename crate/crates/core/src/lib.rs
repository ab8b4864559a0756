//! Pedestrian potential-risk analytics from roadside camera detections.
//!
//! Per-frame vehicle and pedestrian contact points are tracked into
//! trajectories, projected onto the ground plane, turned into scene-level
//! behavioral features (speeds, zones, acceleration, stops, distances,
//! relative positions, pedestrian safety margin) and aggregated into
//! per-spot statistics.

pub mod analytics;
pub mod features;
pub mod geometry;
pub mod ingest;
pub mod motion_gate;
pub mod pipeline;
pub mod synth;
pub mod tracker;
