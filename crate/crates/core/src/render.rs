//! SVG frames of a traced denoising run.
//!
//! Polylines are written in ego-frame metres inside a group whose transform maps them to
//! pixels, so coordinates in the file can be compared with the trace directly.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sampling::Trace;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 24.0;

fn points(state: &[f64], n_point: usize) -> Vec<[f64; 2]> {
    (0..n_point).map(|i| [state[2 * i], state[2 * i + 1]]).collect()
}

fn polyline(out: &mut String, id: &str, pts: &[[f64; 2]], style: &str) {
    let coords: Vec<String> = std::iter::once([0.0, 0.0])
        .chain(pts.iter().copied())
        .map(|p| format!("{},{}", p[0], p[1]))
        .collect();
    let _ = writeln!(
        out,
        r#"    <polyline id="{id}" points="{}" fill="none" vector-effect="non-scaling-stroke" {style}/>"#,
        coords.join(" ")
    );
}

/// One SVG document per solver state, first frame first.
pub fn render_frames(trace: &Trace) -> Result<Vec<String>> {
    let n_point = trace.anchor.len() / 2;
    if n_point == 0 || trace.steps.is_empty() {
        return Err(Error::Empty("trace".into()));
    }
    if trace.steps.iter().any(|s| s.state.len() != trace.anchor.len()) {
        return Err(Error::Shape("trace states and anchor differ in width".into()));
    }
    let all: Vec<[f64; 2]> = trace
        .steps
        .iter()
        .flat_map(|s| points(&s.state, n_point))
        .chain(points(&trace.anchor, n_point))
        .chain(std::iter::once([0.0, 0.0]))
        .collect();
    if all.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trace state".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &all {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let span_x = (x1 - x0).max(1.0);
    let span_y = (y1 - y0).max(1.0);
    let scale = ((WIDTH - 2.0 * MARGIN) / span_x).min((HEIGHT - 2.0 * MARGIN) / span_y);
    let transform = format!(
        "translate({},{}) scale({scale},{}) translate({},{})",
        WIDTH / 2.0,
        HEIGHT / 2.0,
        -scale,
        -cx,
        -cy
    );
    let anchor = points(&trace.anchor, n_point);
    let last = points(&trace.steps[trace.steps.len() - 1].state, n_point);
    let total = trace.steps.len();
    let frames = trace
        .steps
        .iter()
        .enumerate()
        .map(|(k, step)| {
            let mut s = String::new();
            let _ = writeln!(
                s,
                r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
            );
            let _ = writeln!(s, r##"  <rect width="100%" height="100%" fill="#ffffff"/>"##);
            let _ = writeln!(s, r#"  <g id="scene" transform="{transform}">"#);
            if trace.variant.uses_anchors() {
                polyline(&mut s, "anchor", &anchor, r##"stroke="#888888" stroke-width="1.5" stroke-dasharray="4 3""##);
            }
            polyline(&mut s, "final", &last, r##"stroke="#d62728" stroke-width="1" stroke-opacity="0.35""##);
            polyline(&mut s, "state", &points(&step.state, n_point), r##"stroke="#1f77b4" stroke-width="2""##);
            let _ = writeln!(s, r##"    <circle cx="0" cy="0" r="0.4" fill="#000000"/>"##);
            let _ = writeln!(s, "  </g>");
            let _ = writeln!(
                s,
                r#"  <text x="8" y="18" font-family="monospace" font-size="12">{} {} step {}/{} t={:.4}</text>"#,
                trace.variant,
                trace.kind,
                k,
                total - 1,
                step.t
            );
            s.push_str("</svg>\n");
            s
        })
        .collect();
    Ok(frames)
}
