//! Artifact output: atomic file writes and minimal SVG line plots.

use anyhow::{Context, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

/// Write a file through a temporary sibling and rename it into place, so a
/// crash never leaves a half-written artifact.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let dir = dir.unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(content.as_bytes())?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// A self-contained line plot: one polyline per series over a shared time
/// axis, with vertical markers at the send instants.
pub fn line_plot_svg(
    title: &str,
    t: &[f64],
    series: &[(String, Vec<f64>)],
    events: &[f64],
) -> String {
    let (w, h, ml, mr, mt, mb) = (800.0, 400.0, 55.0, 15.0, 30.0, 35.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let t0 = t.first().copied().unwrap_or(0.0);
    let t1 = t.last().copied().unwrap_or(1.0).max(t0 + 1e-9);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, ys) in series {
        for &y in ys {
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let sx = |x: f64| ml + (x - t0) / (t1 - t0) * pw;
    let sy = |y: f64| mt + (hi - y) / (hi - lo) * ph;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        w / 2.0
    ));
    for &ev in events {
        s.push_str(&format!(
            "<line x1=\"{0:.2}\" y1=\"{mt}\" x2=\"{0:.2}\" y2=\"{1:.2}\" \
             stroke=\"#cccccc\" stroke-width=\"1\"/>\n",
            sx(ev),
            mt + ph
        ));
    }
    s.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{0:.2}\" x2=\"{1:.2}\" y2=\"{0:.2}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{0:.2}\" stroke=\"black\"/>\n",
        mt + ph,
        ml + pw
    ));
    for (k, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = t
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{color}\">{name}</text>\n",
            ml + pw - 60.0,
            mt + 16.0 * (k as f64 + 1.0)
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">t</text>\n\
         <text x=\"12\" y=\"{:.2}\">{lo:.3}</text>\n<text x=\"12\" y=\"{mt}\">{hi:.3}</text>\n",
        ml + pw / 2.0,
        h - 8.0,
        mt + ph
    ));
    s.push_str("</svg>\n");
    s
}
