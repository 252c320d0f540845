//! Minimal hand-rolled SVG rendering: axes, lines, shaded envelopes, dots,
//! and histogram outlines. No external plotting dependency.

use std::fmt::Write;

use abstention_core::evaluate::{CalibrationStats, Envelope};

use crate::runio::CanPoint;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 52.0;

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn open_svg(out: &mut String, title: &str, config_hash: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, "<!-- config_hash={config_hash} -->");
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="22" font-family="sans-serif" font-size="15" font-weight="bold">{title}</text>"#,
        MARGIN_L
    );
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str, x_ticks: &[f64], y_ticks: &[f64]) {
    let x0 = frame.px(frame.x_min);
    let x1 = frame.px(frame.x_max);
    let y0 = frame.py(frame.y_min);
    let y1 = frame.py(frame.y_max);
    let _ = writeln!(
        out,
        r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x1:.1}" y2="{y0:.1}" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x0:.1}" y2="{y1:.1}" stroke="black"/>"#
    );
    for &t in x_ticks {
        let px = frame.px(t);
        let _ = writeln!(
            out,
            r#"<line x1="{px:.1}" y1="{y0:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{px:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{t}</text>"#,
            y0 + 18.0
        );
    }
    for &t in y_ticks {
        let py = frame.py(t);
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{py:.1}" x2="{x0:.1}" y2="{py:.1}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{t:.2}</text>"#,
            x0 - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle">{x_label}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.1})">{y_label}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
}

fn nice_ticks(max: f64) -> Vec<f64> {
    let step = if max <= 0.2 {
        0.05
    } else if max <= 0.5 {
        0.1
    } else if max <= 1.2 {
        0.2
    } else if max <= 3.0 {
        0.5
    } else {
        (max / 5.0).ceil()
    };
    let mut ticks = Vec::new();
    let mut t = 0.0;
    while t <= max + 1e-12 {
        ticks.push((t * 1e6).round() / 1e6);
        t += step;
    }
    ticks
}

const SETPOINT_COLORS: [&str; 9] = [
    "#d62728", "#ff7f0e", "#bcbd22", "#2ca02c", "#17becf", "#1f77b4", "#9467bd", "#e377c2",
    "#8c564b",
];

fn dot_color(setpoint: Option<f64>) -> &'static str {
    match setpoint {
        None => "#ff7f0e",
        Some(s) => {
            let idx = ((s * 10.0).round() as usize).clamp(1, 9) - 1;
            SETPOINT_COLORS[idx]
        }
    }
}

/// MAE-versus-coverage figure: baseline envelope with median line, optional
/// flat MAE-model line, and one dot per abstaining run.
pub fn coverage_figure(
    baseline: Option<&Envelope>,
    mae_model: Option<&Envelope>,
    points: &[CanPoint],
    title: &str,
    config_hash: &str,
) -> String {
    let mut y_max: f64 = 0.05;
    for env in baseline.iter().chain(mae_model.iter()) {
        for v in env.max.iter().flatten() {
            y_max = y_max.max(*v);
        }
    }
    for p in points {
        y_max = y_max.max(p.mae);
    }
    y_max *= 1.1;
    let frame = Frame {
        x_min: 0.0,
        x_max: 1.0,
        y_min: 0.0,
        y_max,
    };
    let mut out = String::new();
    open_svg(&mut out, title, config_hash);

    if let Some(env) = baseline {
        // Shaded min..max band (walk out along min, back along max).
        let mut path = String::from("M");
        let pts: Vec<(f64, f64, f64)> = env
            .levels
            .iter()
            .zip(env.min.iter().zip(&env.max))
            .filter_map(|(&l, (&mn, &mx))| Some((l, mn?, mx?)))
            .collect();
        for (i, &(l, mn, _)) in pts.iter().enumerate() {
            if i > 0 {
                path.push('L');
            }
            let _ = write!(path, "{:.1},{:.1} ", frame.px(l), frame.py(mn));
        }
        for &(l, _, mx) in pts.iter().rev() {
            let _ = write!(path, "L{:.1},{:.1} ", frame.px(l), frame.py(mx));
        }
        path.push('Z');
        let _ = writeln!(
            out,
            r##"<path d="{path}" fill="#9467bd" fill-opacity="0.30" stroke="none"/>"##
        );
        polyline(&mut out, &frame, &env.levels, &env.median, "#9467bd", 2.0, None);
    }
    if let Some(env) = mae_model {
        polyline(&mut out, &frame, &env.levels, &env.median, "#7f7f7f", 1.5, Some("6,4"));
    }
    for p in points {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{}" stroke="black" stroke-width="0.5"/>"#,
            frame.px(p.coverage),
            frame.py(p.mae),
            dot_color(p.setpoint)
        );
    }

    let x_ticks: Vec<f64> = (0..=5).map(|k| k as f64 / 5.0).collect();
    axes(
        &mut out,
        &frame,
        "coverage",
        "mean absolute error",
        &x_ticks,
        &nice_ticks(y_max),
    );
    let mut legend_y = MARGIN_T + 12.0;
    for (label, color) in [
        ("baseline envelope / median", "#9467bd"),
        ("mae model", "#7f7f7f"),
        ("abstaining runs", "#ff7f0e"),
    ] {
        let _ = writeln!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="14" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{label}</text>"#,
            MARGIN_L + 8.0,
            legend_y - 9.0,
            MARGIN_L + 26.0,
            legend_y
        );
        legend_y += 16.0;
    }
    out.push_str("</svg>\n");
    out
}

fn polyline(
    out: &mut String,
    frame: &Frame,
    xs: &[f64],
    ys: &[Option<f64>],
    color: &str,
    width: f64,
    dash: Option<&str>,
) {
    let mut points = String::new();
    for (&x, &y) in xs.iter().zip(ys) {
        if let Some(y) = y {
            let _ = write!(points, "{:.1},{:.1} ", frame.px(x), frame.py(y));
        }
    }
    let dash_attr = dash
        .map(|d| format!(r#" stroke-dasharray="{d}""#))
        .unwrap_or_default();
    let _ = writeln!(
        out,
        r#"<polyline points="{points}" fill="none" stroke="{color}" stroke-width="{width}"{dash_attr}/>"#
    );
}

const SPLIT_COLORS: [(&str, &str); 3] = [
    ("train", "#1f77b4"),
    ("val", "#ff7f0e"),
    ("test", "#2ca02c"),
];

/// Overlaid z-score histograms (one outline per split) with mean/std text.
pub fn calibration_figure(
    stats: &[(&str, &CalibrationStats)],
    title: &str,
    config_hash: &str,
) -> String {
    let mut y_max = 1.0f64;
    for (_, s) in stats {
        for &c in &s.counts {
            y_max = y_max.max(c as f64);
        }
    }
    y_max *= 1.1;
    let frame = Frame {
        x_min: -5.0,
        x_max: 5.0,
        y_min: 0.0,
        y_max,
    };
    let mut out = String::new();
    open_svg(&mut out, title, config_hash);
    let mut legend_y = MARGIN_T + 12.0;
    for (split, s) in stats {
        let color = SPLIT_COLORS
            .iter()
            .find(|(name, _)| name == split)
            .map(|(_, c)| *c)
            .unwrap_or("#000000");
        // Step outline over the interior bins (overflow bins excluded).
        let mut points = String::new();
        let edges = &s.bin_edges;
        for i in 0..edges.len() - 1 {
            let count = s.counts[i + 1] as f64;
            let _ = write!(
                points,
                "{:.1},{:.1} {:.1},{:.1} ",
                frame.px(edges[i]),
                frame.py(count),
                frame.px(edges[i + 1]),
                frame.py(count)
            );
        }
        let _ = writeln!(
            out,
            r#"<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" fill="{color}">{split}: mean {:.3}, std {:.3}</text>"#,
            MARGIN_L + 8.0,
            legend_y,
            s.mean,
            s.std
        );
        legend_y += 16.0;
    }
    let x_ticks: Vec<f64> = (-5..=5).map(|k| k as f64).collect();
    axes(
        &mut out,
        &frame,
        "standardized error z",
        "count",
        &x_ticks,
        &nice_ticks(y_max),
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use abstention_core::evaluate::Envelope;

    #[test]
    fn coverage_figure_is_well_formed() {
        let env = Envelope {
            levels: vec![0.2, 0.6, 1.0],
            min: vec![Some(0.1), Some(0.2), Some(0.3)],
            median: vec![Some(0.15), Some(0.25), Some(0.35)],
            max: vec![Some(0.2), Some(0.3), Some(0.4)],
        };
        let points = [CanPoint {
            coverage: 0.24,
            mae: 0.12,
            setpoint: Some(0.3),
            seed: 1,
        }];
        let svg = coverage_figure(Some(&env), None, &points, "coverage vs error", "deadbeef");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("config_hash=deadbeef"));
        assert!(svg.contains("<circle"));
        assert!(svg.contains("<path"));
        assert_eq!(svg.matches("<svg").count(), 1);
    }

    #[test]
    fn calibration_figure_contains_all_splits() {
        let stats = CalibrationStats {
            mean: 0.01,
            std: 0.98,
            bin_edges: (0..=50).map(|i| -5.0 + i as f64 * 0.2).collect(),
            counts: vec![3; 52],
        };
        let svg = calibration_figure(
            &[("train", &stats), ("val", &stats)],
            "z-scores",
            "cafebabe",
        );
        assert!(svg.contains("train: mean"));
        assert!(svg.contains("val: mean"));
    }
}
