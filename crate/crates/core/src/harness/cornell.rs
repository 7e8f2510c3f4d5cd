//! Reader for Cornell-style positive rectangle files: four `x y` lines per
//! rectangle, vertices in order, the first edge along the jaw closing axis.

use std::path::Path;

use crate::error::{EtaError, Result};
use crate::geometry::{wrap_half_pi, GraspRect, Point2};

#[derive(Debug, Clone, PartialEq)]
pub struct CornellParse {
    pub rects: Vec<GraspRect>,
    pub warnings: Vec<String>,
}

fn quad_to_rect(p: &[Point2; 4]) -> GraspRect {
    let center = Point2::new(
        p.iter().map(|v| v.x).sum::<f64>() / 4.0,
        p.iter().map(|v| v.y).sum::<f64>() / 4.0,
    );
    let d = p[1] - p[0];
    GraspRect {
        x: center.x,
        y: center.y,
        w: d.x.hypot(d.y),
        phi: wrap_half_pi(d.y.atan2(d.x)),
        q: 1.0,
    }
}

pub fn parse_cornell_str(text: &str) -> CornellParse {
    let mut rects = Vec::new();
    let mut warnings = Vec::new();
    let mut points: Vec<Point2> = Vec::with_capacity(4);
    let mut bad: Option<String> = None;
    let mut start_line = 1;

    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    for (i, line) in lines.iter().enumerate() {
        if points.is_empty() && bad.is_none() {
            start_line = i + 1;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed = match fields.as_slice() {
            [x, y] => x.parse::<f64>().ok().zip(y.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some((x, y)) if x.is_finite() && y.is_finite() => points.push(Point2::new(x, y)),
            Some(_) => {
                bad.get_or_insert_with(|| "non-finite coordinate".into());
                points.push(Point2::new(f64::NAN, f64::NAN));
            }
            None => {
                bad.get_or_insert_with(|| format!("malformed line {line:?}"));
                points.push(Point2::new(f64::NAN, f64::NAN));
            }
        }
        if points.len() == 4 {
            match bad.take() {
                Some(why) => {
                    warnings.push(format!("rectangle at line {start_line}: {why}, skipped"))
                }
                None => {
                    let quad = [points[0], points[1], points[2], points[3]];
                    let r = quad_to_rect(&quad);
                    if r.w > 0.0 {
                        rects.push(r);
                    } else {
                        warnings.push(format!(
                            "rectangle at line {start_line}: zero width, skipped"
                        ));
                    }
                }
            }
            points.clear();
        }
    }
    if !points.is_empty() {
        warnings.push(format!(
            "trailing group of {} lines at line {start_line}, skipped",
            points.len()
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    CornellParse { rects, warnings }
}

pub fn parse_cornell_rects(path: impl AsRef<Path>) -> Result<CornellParse> {
    let text =
        std::fs::read_to_string(path.as_ref()).map_err(|e| EtaError::io(path.as_ref(), e))?;
    Ok(parse_cornell_str(&text))
}

/// Inverse of the reader: four vertex lines per rectangle.
pub fn format_cornell_rects(rects: &[GraspRect]) -> String {
    let mut out = String::new();
    for r in rects {
        for v in crate::geometry::rect_vertices(r) {
            out.push_str(&format!("{:.9} {:.9}\n", v.x, v.y));
        }
    }
    out
}
