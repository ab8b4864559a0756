//! Moving-rectangle grayscale frames for the motion gate.

use super::ScenarioSpec;
use crate::ingest::{GrayFrame, ObjectClass};

const BACKGROUND: u8 = 40;

/// Renders every frame index in `first..=last`. Each visible agent is a
/// filled box standing on its projected ground point, sized by depth.
pub fn render_frames(spec: &ScenarioSpec, first: u64, last: u64) -> Vec<GrayFrame> {
    let cam = &spec.camera;
    (first..=last)
        .map(|f| {
            let t = f as f64 / spec.spot.fps;
            let mut frame = GrayFrame::filled(f, cam.width, cam.height, BACKGROUND);
            for a in &spec.agents {
                if a.is_hidden(t) {
                    continue;
                }
                let Some(p) = a.position(t) else { continue };
                let Some(px) = cam.project(p) else { continue };
                let (w_m, h_m, value) = match a.class {
                    ObjectClass::Vehicle => (1.8, 1.5, 210),
                    ObjectClass::Pedestrian => (0.5, 1.7, 160),
                };
                let scale = cam.focal_px / cam.depth(p);
                let half_w = (w_m * scale / 2.0).max(1.0);
                let h = (h_m * scale).max(2.0);
                let c0 = (px.x - half_w).max(0.0) as u32;
                let c1 = ((px.x + half_w).min(cam.width as f64 - 1.0)).max(0.0) as u32;
                let r0 = (px.y - h).max(0.0) as u32;
                let r1 = (px.y.min(cam.height as f64 - 1.0)).max(0.0) as u32;
                for r in r0..=r1 {
                    for c in c0..=c1 {
                        frame.set(r, c, value);
                    }
                }
            }
            frame
        })
        .collect()
}
