//! CSV tables and SVG figures.

use std::fmt::Write as _;
use std::io::Write;

use super::{histogram, Histogram, Metrics, DANGER_DISTANCE};
use crate::dynamics::WorldState;
use crate::error::Result;
use crate::state::{EntityType, PerType};

pub fn metrics_csv_header() -> [&'static str; 12] {
    [
        "SR", "CR", "CR_A", "CR_B", "CR_C", "CR_O", "Time", "DD_A", "DD_B", "DD_C", "DD_O",
        "WeightedScore",
    ]
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x}")
    }
}

fn metrics_row(m: &Metrics) -> Vec<String> {
    let dd = |e: EntityType| num(m.dd[e].unwrap_or(f64::NAN));
    vec![
        num(m.sr),
        num(m.cr),
        num(m.cr_by_type.adult),
        num(m.cr_by_type.bicycle),
        num(m.cr_by_type.child),
        num(m.cr_by_type.obstacle),
        num(m.time.unwrap_or(f64::NAN)),
        dd(EntityType::Adult),
        dd(EntityType::Bicycle),
        dd(EntityType::Child),
        dd(EntityType::Obstacle),
        num(m.weighted_score()),
    ]
}

/// One metrics row under the fixed header. Undefined values are written
/// as `NaN`. An optional config hash goes into a leading `#` comment.
pub fn write_metrics_csv<W: Write>(m: &Metrics, config_hash: Option<&str>, mut out: W) -> Result<()> {
    if let Some(hash) = config_hash {
        writeln!(out, "# config_hash={hash}").map_err(csv::Error::from)?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(metrics_csv_header())?;
    w.write_record(metrics_row(m))?;
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Validation curve: one row per validation point.
pub fn write_curve_csv<W: Write>(points: &[(u64, Metrics)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "episode", "SR", "CR", "CR_A", "CR_B", "CR_C", "CR_O", "Reward", "WeightedScore",
    ])?;
    for (episode, m) in points {
        w.write_record([
            episode.to_string(),
            num(m.sr),
            num(m.cr),
            num(m.cr_by_type.adult),
            num(m.cr_by_type.bicycle),
            num(m.cr_by_type.child),
            num(m.cr_by_type.obstacle),
            num(m.reward),
            num(m.weighted_score()),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn color(kind: Option<EntityType>) -> &'static str {
    match kind {
        None => "#111111",
        Some(EntityType::Adult) => "#1f77b4",
        Some(EntityType::Bicycle) => "#2ca02c",
        Some(EntityType::Child) => "#ff7f0e",
        Some(EntityType::Obstacle) => "#7f7f7f",
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvgOptions {
    pub pixels_per_meter: f64,
    /// Draw agent discs every this many frames.
    pub snapshot_every: usize,
}

impl Default for SvgOptions {
    fn default() -> Self {
        SvgOptions {
            pixels_per_meter: 40.0,
            snapshot_every: 8,
        }
    }
}

fn star(cx: f64, cy: f64, r: f64) -> String {
    let mut pts = String::new();
    for k in 0..10 {
        let rad = if k % 2 == 0 { r } else { r * 0.45 };
        let a = -std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::PI / 5.0;
        let _ = write!(pts, "{}{:.2},{:.2}", if k > 0 { " " } else { "" }, cx + rad * a.cos(), cy + rad * a.sin());
    }
    pts
}

/// Top-down trajectory plot: paths, periodic discs, and goals as stars.
pub fn trajectory_svg(frames: &[WorldState], opts: &SvgOptions) -> String {
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut grow = |p: glam::DVec2, r: f64| {
        lo = (lo.0.min(p.x - r), lo.1.min(p.y - r));
        hi = (hi.0.max(p.x + r), hi.1.max(p.y + r));
    };
    for f in frames {
        grow(f.robot.position, f.robot.radius);
        grow(f.robot.goal, 0.3);
        for e in &f.entities {
            grow(e.state.position, e.state.radius);
            grow(e.state.goal, 0.3);
        }
    }
    if frames.is_empty() {
        lo = (-1.0, -1.0);
        hi = (1.0, 1.0);
    }
    let margin = 0.5;
    let s = opts.pixels_per_meter;
    let width = (hi.0 - lo.0 + 2.0 * margin) * s;
    let height = (hi.1 - lo.1 + 2.0 * margin) * s;
    let x = |v: f64| (v - lo.0 + margin) * s;
    let y = |v: f64| (hi.1 - v + margin) * s;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.2} {height:.2}">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);

    let Some(first) = frames.first() else {
        svg.push_str("</svg>\n");
        return svg;
    };
    let agents = 1 + first.entities.len();
    let kind = |i: usize| (i > 0).then(|| first.entities[i - 1].kind);
    let state = |f: &WorldState, i: usize| if i == 0 { f.robot } else { f.entities[i - 1].state };

    for i in 0..agents {
        let c = color(kind(i));
        let g = state(first, i).goal;
        if kind(i) != Some(EntityType::Obstacle) {
            let _ = writeln!(
                svg,
                r#"<polygon points="{}" fill="{c}" stroke="none"/>"#,
                star(x(g.x), y(g.y), 0.25 * s)
            );
        }
        let mut d = String::new();
        for (k, f) in frames.iter().enumerate() {
            let p = state(f, i).position;
            let _ = write!(d, "{}{:.2},{:.2}", if k == 0 { "M" } else { " L" }, x(p.x), y(p.y));
        }
        let _ = writeln!(svg, r#"<path d="{d}" fill="none" stroke="{c}" stroke-width="1.5"/>"#);
        for (k, f) in frames.iter().enumerate() {
            if k % opts.snapshot_every.max(1) != 0 && k + 1 != frames.len() {
                continue;
            }
            let a = state(f, i);
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="{c}" fill-opacity="0.25" stroke="{c}"/>"#,
                x(a.position.x),
                y(a.position.y),
                a.radius * s
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Bar chart of per-type danger-distance densities. Types without samples
/// are listed as empty.
pub fn histogram_svg(distances: &PerType<Vec<f64>>) -> String {
    let panel_w = 240.0;
    let panel_h = 160.0;
    let pad = 30.0;
    let hists: Vec<(EntityType, Option<Histogram>)> =
        EntityType::ALL.iter().map(|&e| (e, histogram(&distances[e]))).collect();
    let ymax = hists
        .iter()
        .filter_map(|(_, h)| h.as_ref())
        .flat_map(|h| h.densities.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let width = 4.0 * (panel_w + pad) + pad;
    let height = panel_h + 3.0 * pad;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    for (k, (e, h)) in hists.iter().enumerate() {
        let x0 = pad + k as f64 * (panel_w + pad);
        let y0 = pad;
        let c = color(Some(*e));
        let _ = writeln!(
            svg,
            r##"<rect x="{x0:.1}" y="{y0:.1}" width="{panel_w:.1}" height="{panel_h:.1}" fill="none" stroke="#999999"/>"##
        );
        let label = match h {
            Some(h) => format!("{e} (n={})", h.count),
            None => format!("{e} (no samples)"),
        };
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">{label}</text>"#, x0, y0 - 8.0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}">0</text><text x="{:.1}" y="{:.1}" text-anchor="end">{DANGER_DISTANCE} m</text>"#,
            x0,
            y0 + panel_h + 16.0,
            x0 + panel_w,
            y0 + panel_h + 16.0
        );
        if let Some(h) = h {
            let bw = panel_w / h.densities.len() as f64;
            for (i, &d) in h.densities.iter().enumerate() {
                let bh = d / ymax * panel_h;
                let _ = writeln!(
                    svg,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{c}"/>"#,
                    x0 + i as f64 * bw,
                    y0 + panel_h - bh,
                    bw,
                    bh
                );
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}
