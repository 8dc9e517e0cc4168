//! Minimal SVG line plots. Every polyline carries its raw values in
//! `data-series` / `data-values` attributes so plots can be checked against
//! the CSV they were drawn from.

use std::fmt::Write as _;

use super::report::fmt_opt;
use super::run::CellResult;
use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// A named series; `None` entries are gaps.
pub struct Series {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Line plot of series against their index.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.values.iter().all(Option::is_none)) {
        return Err(Error::MissingSeries(title.into()));
    }
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0).max(2);
    let vals = series.iter().flat_map(|s| s.values.iter().flatten().copied());
    let (mut lo, mut hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo == hi {
        lo -= 1.0;
        hi += 1.0;
    }
    let sx = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / (n - 1) as f64;
    let sy = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{y}" x2="{x}" y2="{y}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{y}" stroke="black"/>"#,
        x = W - PAD,
        y = H - PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{hi:.3}</text>"#, PAD - 4.0, PAD + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{lo:.3}</text>"#, PAD - 4.0, H - PAD);
    for (k, ser) in series.iter().enumerate() {
        let data: Vec<String> = ser.values.iter().map(|v| fmt_opt(*v)).collect();
        let points: Vec<String> = ser
            .values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| format!("{:.2},{:.2}", sx(i), sy(v))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" data-series="{}" data-values="{}" points="{}"/>"#,
            COLORS[k % COLORS.len()],
            escape(&ser.name),
            data.join(";"),
            points.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{}">{}</text>"#,
            W - PAD - 150.0,
            PAD + 14.0 * k as f64,
            COLORS[k % COLORS.len()],
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Distance, perturbation and objective-convergence plots for one cell.
pub fn cell_plots(cell: &CellResult) -> Result<Vec<(String, String)>> {
    let f = &cell.frames;
    if f.is_empty() {
        return Err(Error::MissingSeries(format!("{} has no frames", cell.id)));
    }
    let mut dist = vec![Series {
        name: "cle_gt".into(),
        values: f.iter().map(|r| Some(r.cle_gt)).collect(),
    }];
    if f.iter().any(|r| r.cle_target.is_some()) {
        dist.push(Series {
            name: "cle_target".into(),
            values: f.iter().map(|r| r.cle_target).collect(),
        });
    }
    let pert = vec![Series {
        name: "mean_abs_pert".into(),
        values: f.iter().map(|r| Some(r.mean_abs_pert)).collect(),
    }];
    // convergence within the first round: its anchor and the next frames
    let conv: Vec<Series> = f
        .iter()
        .filter(|r| !r.objective_trace.is_empty())
        .take(4)
        .map(|r| Series {
            name: format!("t{}", r.t),
            values: r.objective_trace.iter().map(|v| Some(*v)).collect(),
        })
        .collect();
    let mut out = vec![
        ("distance.svg".to_string(), line_plot(&format!("{} distance", cell.id), "frame", "pixels", &dist)?),
        ("perturbation.svg".to_string(), line_plot(&format!("{} mean |E|", cell.id), "frame", "mean |E|", &pert)?),
    ];
    if !conv.is_empty() {
        out.push((
            "objective.svg".to_string(),
            line_plot(&format!("{} objective", cell.id), "iteration", "objective", &conv)?,
        ));
    }
    Ok(out)
}
