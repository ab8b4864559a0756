//! CSV tables and two-column plot-data files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{AnalysisReport, AnalyticsError, Histogram};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnalyticsError + '_ {
    move |source| AnalyticsError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AnalyticsError + '_ {
    move |e| AnalyticsError::Io {
        path: path.display().to_string(),
        source: e.into(),
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(&r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_histogram(path: &Path, h: &Histogram) -> Result<(), AnalyticsError> {
    let mut out = String::new();
    for (c, f) in h.centers().iter().zip(&h.fraction) {
        out.push_str(&format!("{} {}\n", num(*c), num(*f)));
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(io_err(path))
}

/// Writes every table and plot-data file into `dir`, returning the paths in
/// the order written.
pub fn emit_report(report: &AnalysisReport, dir: &Path) -> Result<Vec<PathBuf>, AnalyticsError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let mut csv_file = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<(), AnalyticsError> {
        let path = dir.join(name);
        write_csv(&path, header, rows)?;
        written.push(path);
        Ok(())
    };

    csv_file(
        "speed_stats.csv",
        &["spot", "max", "min", "mean", "car_only_mean", "interactive_mean"],
        report
            .spots
            .iter()
            .filter_map(|s| s.speed.as_ref())
            .map(|s| {
                vec![
                    s.spot_id.clone(),
                    num(s.overall.max),
                    num(s.overall.min),
                    num(s.overall.mean),
                    opt(s.car_only.map(|c| c.mean)),
                    opt(s.interactive.map(|c| c.mean)),
                ]
            })
            .collect(),
    )?;

    csv_file(
        "scene_counts.csv",
        &["spot", "signalized", "scenes", "car_only", "interactive", "frames", "avg_frames_per_scene"],
        report
            .spots
            .iter()
            .map(|s| {
                let n = s.counts.car_only + s.counts.interactive;
                vec![
                    s.spot_id.clone(),
                    s.signalized.to_string(),
                    n.to_string(),
                    s.counts.car_only.to_string(),
                    s.counts.interactive.to_string(),
                    s.counts.frames.to_string(),
                    if n > 0 { num(s.counts.frames as f64 / n as f64) } else { String::new() },
                ]
            })
            .collect(),
    )?;

    csv_file(
        "stopping.csv",
        &["spot", "signalized", "qualifying", "stopped", "percentage"],
        report
            .spots
            .iter()
            .filter_map(|s| s.stopping.map(|r| (s, r)))
            .map(|(s, r)| {
                vec![
                    s.spot_id.clone(),
                    s.signalized.to_string(),
                    r.qualifying.to_string(),
                    r.stopped.to_string(),
                    num(r.percentage),
                ]
            })
            .collect(),
    )?;

    csv_file(
        "weights.csv",
        &["group", "spot", "scenes", "weight", "degenerate"],
        report
            .merged
            .iter()
            .flat_map(|d| {
                d.spot_weights.iter().map(move |w| {
                    vec![
                        d.group.clone(),
                        w.spot_id.clone(),
                        w.scenes.to_string(),
                        num(w.weight),
                        d.degenerate.to_string(),
                    ]
                })
            })
            .collect(),
    )?;

    csv_file(
        "psm_ranges.csv",
        &["range", "label", "lower", "upper"],
        report
            .ranges
            .iter()
            .flat_map(|r| {
                (1..=8).map(move |k| {
                    let (lo, hi) = r.bounds(k);
                    vec![k.to_string(), r.label(k), num(lo), num(hi)]
                })
            })
            .collect(),
    )?;

    csv_file(
        "stopping_by_psm_range.csv",
        &["range", "label", "spot", "scenes", "stopped", "percentage"],
        report
            .stopping_by_range
            .iter()
            .flat_map(|t| {
                t.cells.iter().map(move |c| {
                    vec![
                        c.range.to_string(),
                        t.ranges.label(c.range),
                        c.spot_id.clone(),
                        c.scenes.to_string(),
                        c.stopped.to_string(),
                        num(c.percentage),
                    ]
                })
            })
            .collect(),
    )?;

    for d in &report.distributions {
        let path = dir.join(format!("psm_{}.dat", d.group));
        write_histogram(&path, &d.histogram)?;
        written.push(path);
    }
    for d in &report.merged {
        let path = dir.join(format!("psm_weighted_{}.dat", d.group));
        write_histogram(&path, &d.histogram)?;
        written.push(path);
    }
    Ok(written)
}
