//! SVG rendering of episode frames.
//!
//! Each frame becomes one SVG document. With a prediction, the predicted
//! scene is drawn in the top panel and the ground truth in the bottom panel;
//! without one, only the ground-truth panel is drawn. World coordinates map
//! to SVG units by `x_svg = margin + (x - x_min) * scale` and
//! `y_svg = top + margin + (y_max - y) * scale`, and every number is written
//! with three decimals, so identical inputs give identical text.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sim::{Episode, ObjectState, Shape};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderStyle {
    /// SVG units per metre.
    pub scale: f64,
    pub margin: f64,
    pub arena: [f64; 4],
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            scale: 200.0,
            margin: 10.0,
            arena: crate::sim::WorldConfig::default().arena,
        }
    }
}

impl RenderStyle {
    pub fn panel_width(&self) -> f64 {
        (self.arena[2] - self.arena[0]) * self.scale + 2.0 * self.margin
    }

    pub fn panel_height(&self) -> f64 {
        (self.arena[3] - self.arena[1]) * self.scale + 2.0 * self.margin
    }

    /// SVG coordinates of a world point in the panel starting at `top`.
    pub fn to_svg(&self, top: f64, x: f64, y: f64) -> (f64, f64) {
        (
            self.margin + (x - self.arena[0]) * self.scale,
            top + self.margin + (self.arena[3] - y) * self.scale,
        )
    }
}

const TRUTH_FILL: &str = "#4c72b0";
const PRED_FILL: &str = "#dd8452";

fn draw_panel(out: &mut String, style: &RenderStyle, top: f64, label: &str, shapes: &[Shape], states: &[ObjectState], fill: &str) {
    let (x0, y0) = style.to_svg(top, style.arena[0], style.arena[3]);
    let w = (style.arena[2] - style.arena[0]) * style.scale;
    let h = (style.arena[3] - style.arena[1]) * style.scale;
    let _ = writeln!(
        out,
        r#"<g class="{label}"><rect x="{x0:.3}" y="{y0:.3}" width="{w:.3}" height="{h:.3}" fill="none" stroke="black"/>"#
    );
    for (shape, s) in shapes.iter().zip(states) {
        let (cx, cy) = style.to_svg(top, s.x, s.y);
        match *shape {
            Shape::Circle { radius } => {
                let r = radius * style.scale;
                let (ex, ey) = style.to_svg(top, s.x + radius * s.theta.cos(), s.y + radius * s.theta.sin());
                let _ = writeln!(
                    out,
                    r#"<circle cx="{cx:.3}" cy="{cy:.3}" r="{r:.3}" fill="{fill}"/><line x1="{cx:.3}" y1="{cy:.3}" x2="{ex:.3}" y2="{ey:.3}" stroke="white"/>"#
                );
            }
            Shape::Rect { .. } => {
                let mut pts = String::new();
                for (i, [dx, dy]) in shape.vertex_offsets(s.theta).iter().enumerate() {
                    let (px, py) = style.to_svg(top, s.x + dx, s.y + dy);
                    if i > 0 {
                        pts.push(' ');
                    }
                    let _ = write!(pts, "{px:.3},{py:.3}");
                }
                let _ = writeln!(out, r#"<polygon points="{pts}" fill="{fill}"/>"#);
            }
        }
    }
    out.push_str("</g>\n");
}

/// One SVG document for a single frame.
pub fn render_frame(
    style: &RenderStyle,
    shapes: &[Shape],
    truth: &[ObjectState],
    pred: Option<&[ObjectState]>,
) -> String {
    let pw = style.panel_width();
    let ph = style.panel_height();
    let height = if pred.is_some() { 2.0 * ph } else { ph };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{pw:.3}" height="{height:.3}" viewBox="0 0 {pw:.3} {height:.3}">"#
    );
    let mut top = 0.0;
    if let Some(p) = pred {
        draw_panel(&mut out, style, top, "prediction", shapes, p, PRED_FILL);
        top += ph;
    }
    draw_panel(&mut out, style, top, "ground-truth", shapes, truth, TRUTH_FILL);
    out.push_str("</svg>\n");
    out
}

/// Renders the listed frames; fails if any index lies outside the ground
/// truth or, when given, the prediction.
pub fn render_frames(
    style: &RenderStyle,
    truth: &Episode,
    pred: Option<&Episode>,
    frames: &[usize],
) -> Result<Vec<(usize, String)>> {
    if let Some(p) = pred {
        if p.shapes.len() != truth.shapes.len() {
            return Err(Error::Format(format!(
                "prediction has {} objects, ground truth has {}",
                p.shapes.len(),
                truth.shapes.len()
            )));
        }
    }
    frames
        .iter()
        .map(|&f| {
            let available = pred.map_or(truth.len(), |p| p.len().min(truth.len()));
            if f >= available {
                return Err(Error::Horizon { requested: f, available });
            }
            let svg = render_frame(style, &truth.shapes, &truth.frames[f], pred.map(|p| p.frames[f].as_slice()));
            Ok((f, svg))
        })
        .collect()
}

/// Parses `"1,3,5"` into frame indices.
pub fn parse_frame_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid frame index {t:?}")))
        })
        .collect()
}
