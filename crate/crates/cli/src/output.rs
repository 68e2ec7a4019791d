//! Trace tables, JSON reports and the state-space plot.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mpc_tracking::analysis::SweepRow;
use mpc_tracking::model::Vector;
use mpc_tracking::ocp::OcpStatus;
use mpc_tracking::sim::SimTrace;
use serde::Serialize;

use crate::CliError;

pub fn status_label(s: OcpStatus) -> &'static str {
    match s {
        OcpStatus::Optimal => "optimal",
        OcpStatus::Infeasible => "infeasible",
        OcpStatus::MaxIter => "max_iter",
    }
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

/// Shortest string that parses back to the same value (exponent form for very
/// small or large magnitudes), so the table round-trips bitwise.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_trace(path: &Path, trace: &SimTrace, n: usize, m: usize) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(indexed("x", n));
    header.extend(indexed("u", m));
    header.extend(indexed("xr", n));
    header.extend(indexed("ur", m));
    header.extend(["V_N", "stage_cost", "ref_offset", "status"].map(String::from));
    w.write_record(&header)?;
    for s in &trace.steps {
        let mut row = vec![s.t.to_string()];
        row.extend(
            s.x.iter()
                .chain(&s.u)
                .chain(&s.r_x)
                .chain(&s.r_u)
                .map(|v| num(*v)),
        );
        row.extend([num(s.value), num(s.stage_cost), num(s.ref_offset)]);
        row.push(status_label(s.status).into());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// States and inputs read back from a trace table.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRows {
    pub t: Vec<usize>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

pub fn read_trace(path: &Path) -> Result<TraceRows, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let cols = |prefix: &str| -> Vec<usize> {
        header
            .iter()
            .enumerate()
            .filter(|(_, h)| {
                h.strip_prefix(prefix).is_some_and(|rest| {
                    !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit())
                })
            })
            .map(|(i, _)| i)
            .collect()
    };
    let (xc, uc) = (cols("x"), cols("u"));
    let bad = |what: &str| CliError::io(format!("{}: malformed {what}", path.display()));
    let mut rows = TraceRows {
        t: vec![],
        x: vec![],
        u: vec![],
    };
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| bad("row"));
        rows.t
            .push(field(0)?.parse().map_err(|_| bad("time column"))?);
        let parse = |ix: &[usize]| -> Result<Vec<f64>, CliError> {
            ix.iter()
                .map(|&i| field(i)?.parse::<f64>().map_err(|_| bad("number")))
                .collect()
        };
        rows.x.push(parse(&xc)?);
        rows.u.push(parse(&uc)?);
    }
    Ok(rows)
}

pub fn write_sweep(
    path: &Path,
    blocks: &[(String, Vec<SweepRow>)],
    n: usize,
    m: usize,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["scaling", "horizon", "feasible", "status", "V_N"]
        .map(String::from)
        .to_vec();
    header.extend(indexed("xr", n));
    header.extend(indexed("ur", m));
    header.extend(["ref_offset", "J_Kd", "error"].map(String::from));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    for (label, rows) in blocks {
        for row in rows {
            let mut rec = vec![
                label.clone(),
                row.horizon
                    .map_or_else(|| "proxy".to_string(), |h| h.to_string()),
                row.feasible.to_string(),
                row.status.map(status_label).unwrap_or_default().to_string(),
                opt(row.value),
            ];
            let pad = |v: &[f64], d: usize| -> Vec<String> {
                if v.len() == d {
                    v.iter().map(|x| num(*x)).collect()
                } else {
                    vec![String::new(); d]
                }
            };
            rec.extend(pad(&row.r_x, n));
            rec.extend(pad(&row.r_u, m));
            rec.extend([
                opt(row.ref_offset),
                opt(row.performance),
                row.error.clone().unwrap_or_default(),
            ]);
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

/// Data for the state-space figure.
pub struct Plot<'a> {
    pub title: &'a str,
    /// Closed-loop paths with their labels.
    pub paths: Vec<(String, Vec<Vector>)>,
    /// State parts of sampled equilibria.
    pub manifold: Vec<Vector>,
    pub target: Option<Vector>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// First two state coordinates; one-dimensional states are drawn against time.
fn coords(path: &[Vector]) -> Vec<(f64, f64)> {
    path.iter()
        .enumerate()
        .map(|(t, x)| {
            if x.len() >= 2 {
                (x[0], x[1])
            } else {
                (t as f64, x[0])
            }
        })
        .collect()
}

pub fn render_svg(p: &Plot) -> String {
    let planar = p.paths.iter().flat_map(|(_, v)| v).all(|x| x.len() >= 2);
    let series: Vec<(String, Vec<(f64, f64)>)> = p
        .paths
        .iter()
        .map(|(l, v)| (l.clone(), coords(v)))
        .collect();
    let manifold: Vec<(f64, f64)> = if planar {
        let mut pts = coords(&p.manifold);
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    } else {
        vec![]
    };
    let target = p.target.as_ref().filter(|_| planar).map(|x| (x[0], x[1]));

    let all = series
        .iter()
        .flat_map(|(_, s)| s)
        .chain(&manifold)
        .chain(target.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        let d = (hi - lo).max(1e-9) * 0.05;
        (lo - d, hi + d)
    };
    let ((x0, x1), (y0, y1)) = (pad(x0, x1), pad(y0, y1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let polyline = |pts: &[(f64, f64)]| {
        pts.iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(p.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let (xl, yl) = if planar { ("x0", "x1") } else { ("t", "x0") };
    for (v, label) in [(x0, format!("{x0:.3}")), (x1, format!("{x1:.3}"))] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{label}</text>"#,
            sx(v),
            HEIGHT - MARGIN + 15.0
        );
    }
    for (v, label) in [(y0, format!("{y0:.3}")), (y1, format!("{y1:.3}"))] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#,
            MARGIN - 4.0,
            sy(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{xl}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{yl}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    if !manifold.is_empty() {
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#888888" stroke-dasharray="4 3"/>"##,
            polyline(&manifold)
        );
    }
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            polyline(pts)
        );
        let ly = MARGIN + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#,
            WIDTH - MARGIN - 8.0 - 100.0,
            escape(label)
        );
    }
    if let Some((x, y)) = target {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="black"/>"#,
            sx(x),
            sy(y)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn write_svg(path: &Path, p: &Plot) -> Result<(), CliError> {
    fs::write(path, render_svg(p)).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}
