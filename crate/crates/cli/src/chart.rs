//! Accuracy-per-round line chart, rebuilt from `metrics.csv` alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::CliError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLOURS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// `round` rows grouped by party, in round order.
pub fn read_series(metrics_csv: &str) -> Result<BTreeMap<usize, Vec<(usize, f64)>>, CliError> {
    let mut reader = csv::Reader::from_reader(metrics_csv.as_bytes());
    let mut series: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    let bad = |e: csv::Error| CliError::Runtime(format!("metrics.csv: {e}"));
    for rec in reader.records() {
        let rec = rec.map_err(bad)?;
        if rec.get(2) != Some("round") {
            continue;
        }
        let field = |i: usize| rec.get(i).unwrap_or("").to_owned();
        let parse_err = |what: &str| CliError::Runtime(format!("metrics.csv: bad {what} in {rec:?}"));
        let round: usize = field(0).parse().map_err(|_| parse_err("round"))?;
        let party: usize = field(1).parse().map_err(|_| parse_err("party"))?;
        let acc: f64 = field(3).parse().map_err(|_| parse_err("accuracy"))?;
        series.entry(party).or_default().push((round, acc));
    }
    for points in series.values_mut() {
        points.sort_by_key(|p| p.0);
    }
    Ok(series)
}

pub fn render_svg(metrics_csv: &str) -> Result<String, CliError> {
    let series = read_series(metrics_csv)?;
    let max_round = series.values().flatten().map(|p| p.0).max().unwrap_or(0).max(1) as f64;
    let x = |r: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * r as f64 / max_round;
    let y = |a: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * a;

    let mut s = String::new();
    let w = &mut s;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#).unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    writeln!(w, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#).unwrap();
    for tick in 0..=5 {
        let a = tick as f64 / 5.0;
        writeln!(w, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{a:.1}</text>"#, x0 - 6.0, y(a) + 4.0).unwrap();
        writeln!(w, r##"<line x1="{x0}" y1="{0}" x2="{x1}" y2="{0}" stroke="#ddd"/>"##, y(a)).unwrap();
    }
    writeln!(w, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">round</text>"#, (x0 + x1) / 2.0, HEIGHT - 12.0).unwrap();
    writeln!(w, r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">test accuracy</text>"#, (y0 + y1) / 2.0, (y0 + y1) / 2.0).unwrap();
    writeln!(w, r#"<text x="{x0}" y="{y0}" dy="16" font-size="11" text-anchor="middle">0</text>"#).unwrap();
    writeln!(w, r#"<text x="{x1}" y="{y0}" dy="16" font-size="11" text-anchor="middle">{max_round}</text>"#).unwrap();
    for (i, (party, points)) in series.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let coords: Vec<String> = points.iter().map(|&(r, a)| format!("{:.2},{:.2}", x(r), y(a))).collect();
        writeln!(w, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#, coords.join(" ")).unwrap();
        writeln!(w, r#"<text x="{}" y="{}" font-size="11" fill="{colour}">party {party}</text>"#, x1 + 4.0, y1 + 14.0 * i as f64).unwrap();
    }
    writeln!(w, "</svg>").unwrap();
    Ok(s)
}
