//! Standalone SVG line charts of the metrics stream (mIoU and total loss
//! against iteration), one line per run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use c2a_core::trainer::{MetricsRecord, METRICS_FILE};

use crate::commands::{CliError, CliResult};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 48.0;

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn read_run(dir: &Path) -> CliResult<Vec<MetricsRecord>> {
    let path = if dir.is_file() {
        dir.to_path_buf()
    } else {
        dir.join(METRICS_FILE)
    };
    let text = fs::read_to_string(&path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::new("json", format!("{}: {e}", path.display()))))
        .collect()
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= n as f64)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() * step;
    (0..)
        .map(|i| start + i as f64 * step)
        .take_while(|v| *v <= hi + 1e-9 * step)
        .collect()
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn panel(svg: &mut String, x0: f64, title: &str, series: &[Series]) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if xmin > xmax {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    if xmax - xmin < 1e-12 {
        xmax = xmin + 1.0;
    }
    if ymax - ymin < 1e-12 {
        ymax = ymin + 1.0;
    }
    let (pw, ph) = (PANEL_W - 2.0 * MARGIN, PANEL_H - 2.0 * MARGIN);
    let sx = |x: f64| x0 + MARGIN + (x - xmin) / (xmax - xmin) * pw;
    let sy = |y: f64| MARGIN + ph - (y - ymin) / (ymax - ymin) * ph;
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{title}</text>"#,
        x0 + PANEL_W / 2.0,
        MARGIN / 2.0
    );
    let _ = writeln!(
        svg,
        r##"<path d="M{:.1},{:.1} V{:.1} H{:.1}" fill="none" stroke="#333"/>"##,
        sx(xmin),
        sy(ymax),
        sy(ymin),
        sx(xmax)
    );
    for t in nice_ticks(xmin, xmax, 5) {
        let _ = writeln!(
            svg,
            r##"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="#333"/><text x="{0:.1}" y="{3:.1}" text-anchor="middle" font-size="10">{4}</text>"##,
            sx(t),
            sy(ymin),
            sy(ymin) + 4.0,
            sy(ymin) + 16.0,
            fmt_tick(t)
        );
    }
    for t in nice_ticks(ymin, ymax, 5) {
        let _ = writeln!(
            svg,
            r##"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="#333"/><text x="{3:.1}" y="{4:.1}" text-anchor="end" font-size="10">{5}</text>"##,
            sx(xmin) - 4.0,
            sy(t),
            sx(xmin),
            sx(xmin) - 6.0,
            sy(t) + 3.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">iteration</text>"#,
        x0 + MARGIN + pw / 2.0,
        PANEL_H - 8.0
    );
    for (i, s) in series.iter().enumerate() {
        if s.points.is_empty() {
            continue;
        }
        let d: Vec<String> = s
            .points
            .iter()
            .enumerate()
            .map(|(j, &(x, y))| format!("{}{:.1},{:.1}", if j == 0 { "M" } else { "L" }, sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            d.join(" "),
            PALETTE[i % PALETTE.len()]
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render(runs: &[(String, Vec<MetricsRecord>)]) -> String {
    let miou: Vec<Series> = runs
        .iter()
        .map(|(label, recs)| Series {
            label: label.clone(),
            points: recs.iter().map(|r| (r.iter as f64, r.miou)).collect(),
        })
        .collect();
    let loss: Vec<Series> = runs
        .iter()
        .map(|(label, recs)| Series {
            label: label.clone(),
            points: recs
                .iter()
                .filter_map(|r| r.losses.map(|l| (r.iter as f64, l.total)))
                .collect(),
        })
        .collect();
    let legend_h = 16.0 * runs.len() as f64 + 8.0;
    let (w, h) = (2.0 * PANEL_W, PANEL_H + legend_h);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    panel(&mut svg, 0.0, "target-val mIoU", &miou);
    panel(&mut svg, PANEL_W, "total training loss", &loss);
    for (i, s) in miou.iter().enumerate() {
        let y = PANEL_H + 12.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{m:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            MARGIN + 18.0,
            PALETTE[i % PALETTE.len()],
            MARGIN + 24.0,
            y + 4.0,
            escape(&s.label),
            m = MARGIN
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn run(dirs: &[PathBuf], out: &Path) -> CliResult {
    let runs = dirs
        .iter()
        .map(|d| Ok((d.display().to_string(), read_run(d)?)))
        .collect::<CliResult<Vec<_>>>()?;
    fs::write(out, render(&runs)).map_err(|e| CliError::new("io", format!("{}: {e}", out.display())))?;
    println!("wrote {}", out.display());
    Ok(())
}
