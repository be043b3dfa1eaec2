//! SVG output: per-frame overlays and ROC plots. Output bytes depend only
//! on the inputs.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use super::imageinfo::image_dimensions;
use super::manifest::{ManifestEntry, RunManifest};
use super::write_atomic;
use crate::formats::{AnnotationCorpus, DetectionCorpus};
use crate::geometry::{BoundingBox, Detection};
use crate::matching::with_workers;
use crate::metrics::RocCurve;

pub const GROUND_TRUTH_COLOR: &str = "#ff0000";
pub const DETECTION_COLOR: &str = "#00ff00";
const FALLBACK_SIZE: (f64, f64) = (640.0, 480.0);
const CURVE_COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("cannot write {}: {source}", .path.display())]
    OutputUnwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("nothing to plot: {0}")]
    NoCurves(&'static str),
    #[error("worker pool: {0}")]
    WorkerPool(String),
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn rect(out: &mut String, b: &BoundingBox, class: &str, color: &str) {
    let _ = writeln!(
        out,
        "  <rect class=\"{class}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
        b.x(),
        b.y(),
        b.w(),
        b.h()
    );
}

/// Overlay for one frame: the image by reference, ground truth in red,
/// detections in green with their scores.
///
/// `image_size` sets the canvas; without it the canvas covers every box,
/// falling back to 640x480 for a frame with no boxes.
pub fn overlay_svg(
    frame_id: &str,
    image_href: &str,
    image_size: Option<(u32, u32)>,
    ground_truth: &[BoundingBox],
    detections: &[Detection],
) -> String {
    let (w, h) = match image_size {
        Some((w, h)) => (w as f64, h as f64),
        None => {
            let boxes = ground_truth.iter().chain(detections.iter().map(|d| &d.bbox));
            let (w, h) = boxes.fold((0.0f64, 0.0f64), |(w, h), b| (w.max(b.right()), h.max(b.bottom())));
            if w > 0.0 && h > 0.0 {
                (w.ceil(), h.ceil())
            } else {
                FALLBACK_SIZE
            }
        }
    };
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" xmlns:xlink=\"http://www.w3.org/1999/xlink\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(out, "  <title>{}</title>", escape(frame_id));
    let href = escape(image_href);
    let _ = writeln!(out, "  <image x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" href=\"{href}\" xlink:href=\"{href}\"/>");
    for b in ground_truth {
        rect(&mut out, b, "ground-truth", GROUND_TRUTH_COLOR);
    }
    for d in detections {
        rect(&mut out, &d.bbox, "detection", DETECTION_COLOR);
        let _ = writeln!(
            out,
            "  <text class=\"score\" x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{DETECTION_COLOR}\">{:.2}</text>",
            d.bbox.x(),
            d.bbox.y() - 3.0,
            d.score()
        );
    }
    out.push_str("</svg>\n");
    out
}

fn sanitize(frame_id: &str) -> String {
    frame_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// Output file name for each manifest entry: the frame id with unsafe
/// characters replaced, suffixed on collision.
pub fn overlay_file_names(entries: &[ManifestEntry]) -> Vec<String> {
    let mut used = HashSet::new();
    entries
        .iter()
        .map(|e| {
            let base = sanitize(e.frame_id.as_str());
            let mut name = format!("{base}.svg");
            let mut n = 2;
            while !used.insert(name.clone()) {
                name = format!("{base}-{n}.svg");
                n += 1;
            }
            name
        })
        .collect()
}

fn href_for(image: &Path, out_dir: &Path) -> String {
    let abs = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { std::env::current_dir().unwrap_or_default().join(p) };
    let rel = pathdiff::diff_paths(abs(image), abs(out_dir)).unwrap_or_else(|| abs(image));
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Writes one overlay per manifest frame into `out_dir` and returns the
/// number of files written. Frames missing from either corpus are drawn
/// without those boxes.
pub fn render_overlays(
    manifest: &RunManifest,
    gts: &AnnotationCorpus,
    dets: &DetectionCorpus,
    out_dir: &Path,
    workers: usize,
) -> Result<usize, RenderError> {
    std::fs::create_dir_all(out_dir).map_err(|source| RenderError::OutputUnwritable { path: out_dir.to_owned(), source })?;
    let gt_index = gts.index();
    let det_index = dets.index();
    let names = overlay_file_names(manifest.entries());
    let jobs: Vec<(&ManifestEntry, &String)> = manifest.entries().iter().zip(&names).collect();

    let render = || {
        jobs.par_iter()
            .map(|(entry, name)| {
                let image = manifest.image_path(entry);
                let ground_truth = gt_index.get(&entry.frame_id).map_or(&[][..], |&i| &gts.frames()[i].ground_truth[..]);
                let detections = det_index.get(&entry.frame_id).map_or(&[][..], |&i| &dets.frames()[i].detections[..]);
                let svg = overlay_svg(
                    entry.frame_id.as_str(),
                    &href_for(&image, out_dir),
                    image_dimensions(&image),
                    ground_truth,
                    detections,
                );
                let path = out_dir.join(name);
                write_atomic(&path, svg.as_bytes()).map_err(|source| RenderError::OutputUnwritable { path, source })
            })
            .collect::<Result<Vec<()>, _>>()
    };
    let written = with_workers(workers, render).map_err(|e| RenderError::WorkerPool(e.to_string()))??;
    Ok(written.len())
}

/// Smallest "nice" step (1, 2 or 5 times a power of ten) giving at most
/// `max_ticks` intervals over `[0, max]`.
fn nice_step(max: f64, max_ticks: usize) -> f64 {
    let raw = max / max_ticks as f64;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag).max(1.0)
}

fn fmt_coord(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

/// ROC plot: total false positives on x, true positive rate on y, one
/// polyline per curve and a legend in input order.
pub fn roc_svg(curves: &[(String, RocCurve)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 60.0;
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);

    let max_fp = curves.iter().flat_map(|(_, c)| c.points.iter().map(|p| p.false_positives)).max().unwrap_or(0);
    let step = nice_step(max_fp.max(1) as f64, 8);
    let x_max = ((max_fp.max(1) as f64) / step).ceil() * step;
    let sx = |fp: f64| LEFT + fp / x_max * pw;
    let sy = |tpr: f64| TOP + (1.0 - tpr) * ph;

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(out, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">");
    let _ = writeln!(out, "  <rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"#ffffff\"/>");

    out.push_str("  <g class=\"axes\" stroke=\"#000000\" stroke-width=\"1\">\n");
    let _ = writeln!(out, "    <line x1=\"{LEFT}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>", TOP + ph, LEFT + pw, TOP + ph);
    let _ = writeln!(out, "    <line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{}\"/>", TOP + ph);
    out.push_str("  </g>\n");

    out.push_str("  <g class=\"ticks\" fill=\"#000000\">\n");
    let n_x = (x_max / step).round() as usize;
    for i in 0..=n_x {
        let v = i as f64 * step;
        let x = fmt_coord(sx(v));
        let _ = writeln!(out, "    <line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"#000000\"/>", TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(out, "    <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{v}</text>", TOP + ph + 18.0);
    }
    for i in 0..=10 {
        let v = i as f64 / 10.0;
        let y = fmt_coord(sy(v));
        let _ = writeln!(out, "    <line x1=\"{}\" y1=\"{y}\" x2=\"{LEFT}\" y2=\"{y}\" stroke=\"#000000\"/>", LEFT - 5.0);
        let _ = writeln!(out, "    <text x=\"{}\" y=\"{y}\" text-anchor=\"end\" dominant-baseline=\"middle\">{v:.1}</text>", LEFT - 8.0);
    }
    out.push_str("  </g>\n");
    let _ = writeln!(out, "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">False positives</text>", LEFT + pw / 2.0, H - 15.0);
    let _ = writeln!(
        out,
        "  <text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">True positive rate</text>",
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (k, (label, curve)) in curves.iter().enumerate() {
        let color = CURVE_COLORS[k % CURVE_COLORS.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{},{}", fmt_coord(sx(p.false_positives as f64)), fmt_coord(sy(p.true_positive_rate))))
            .collect();
        let _ = writeln!(
            out,
            "  <polyline class=\"curve\" data-label=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            escape(label),
            pts.join(" ")
        );
        if let [only] = curve.points.as_slice() {
            let _ = writeln!(
                out,
                "  <circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>",
                fmt_coord(sx(only.false_positives as f64)),
                fmt_coord(sy(only.true_positive_rate))
            );
        }
    }

    out.push_str("  <g class=\"legend\">\n");
    let legend_x = LEFT + pw - 180.0;
    for (k, (label, _)) in curves.iter().enumerate() {
        let color = CURVE_COLORS[k % CURVE_COLORS.len()];
        let y = TOP + ph - 15.0 - 18.0 * (curves.len() - 1 - k) as f64;
        let _ = writeln!(
            out,
            "    <line x1=\"{legend_x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            legend_x + 20.0
        );
        let _ = writeln!(
            out,
            "    <text class=\"legend-entry\" x=\"{}\" y=\"{y}\" dominant-baseline=\"middle\">{}</text>",
            legend_x + 26.0,
            escape(label)
        );
    }
    out.push_str("  </g>\n</svg>\n");
    out
}

pub fn plot_roc(curves: &[(String, RocCurve)], out_path: &Path) -> Result<(), RenderError> {
    if curves.is_empty() {
        return Err(RenderError::NoCurves("at least one curve is required"));
    }
    write_atomic(out_path, roc_svg(curves).as_bytes())
        .map_err(|source| RenderError::OutputUnwritable { path: out_path.to_owned(), source })
}

/// Curve points as `label,score_threshold,false_positives,true_positive_rate`.
pub fn roc_csv(curves: &[(String, RocCurve)]) -> String {
    let mut out = String::from("label,score_threshold,false_positives,true_positive_rate\n");
    for (label, curve) in curves {
        let label = if label.contains([',', '"', '\n', '\r']) { format!("\"{}\"", label.replace('"', "\"\"")) } else { label.clone() };
        for p in &curve.points {
            let _ = writeln!(out, "{label},{},{},{}", p.score_threshold, p.false_positives, p.true_positive_rate);
        }
    }
    out
}

#[cfg(test)]
fn count(svg: &str, needle: &str) -> usize {
    svg.matches(needle).count()
}
