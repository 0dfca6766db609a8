use std::path::Path;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CURVE_HEADER: [&str; 5] = ["fraction", "mean_f1", "var_f1", "mean_edges", "mean_degree"];

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("curve file: {0}")]
    Io(#[from] std::io::Error),
    #[error("curve file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("curve file has no points")]
    Empty,
    #[error("drawing: {0}")]
    Draw(String),
}

/// The series behind a plot, written next to the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub fraction: Vec<f64>,
    pub mean_f1: Vec<f64>,
    /// Mean minus one standard deviation, clipped at 0.
    pub band_lower: Vec<f64>,
    /// Mean plus one standard deviation, clipped at 1.
    pub band_upper: Vec<f64>,
    pub mean_degree: Vec<f64>,
}

pub fn parse_curve(text: &str) -> Result<PlotData, PlotError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| PlotError::Format { line: 1, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if header != CURVE_HEADER {
        return Err(PlotError::Format { line: 1, message: format!("expected header {}", CURVE_HEADER.join(",")) });
    }
    let mut d = PlotData {
        title: "Graph f1 under spine fragmentation".into(),
        x_label: "fraction of spines detached".into(),
        y_label: "graph f1".into(),
        fraction: Vec::new(),
        mean_f1: Vec::new(),
        band_lower: Vec::new(),
        band_upper: Vec::new(),
        mean_degree: Vec::new(),
    };
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| PlotError::Format { line, message: e.to_string() })?;
        let v: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| PlotError::Format { line, message: format!("not a number: {f:?}") }))
            .collect::<Result<_, _>>()?;
        let sd = v[2].max(0.0).sqrt();
        d.fraction.push(v[0]);
        d.mean_f1.push(v[1]);
        d.band_lower.push((v[1] - sd).max(0.0));
        d.band_upper.push((v[1] + sd).min(1.0));
        d.mean_degree.push(v[4]);
    }
    if d.fraction.is_empty() {
        return Err(PlotError::Empty);
    }
    Ok(d)
}

pub fn render_svg(d: &PlotData) -> Result<String, PlotError> {
    let draw = |e: &dyn std::fmt::Display| PlotError::Draw(e.to_string());
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (640, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| draw(&e))?;
        let x_max = d.fraction.iter().copied().fold(0.0, f64::max).max(1e-9);
        let mut chart = ChartBuilder::on(&root)
            .caption(&d.title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(0.0..x_max, 0.0..1.05)
            .map_err(|e| draw(&e))?;
        chart.configure_mesh().x_desc(&d.x_label).y_desc(&d.y_label).draw().map_err(|e| draw(&e))?;
        let mut band: Vec<(f64, f64)> = d.fraction.iter().copied().zip(d.band_upper.iter().copied()).collect();
        band.extend(d.fraction.iter().copied().zip(d.band_lower.iter().copied()).rev());
        chart.draw_series(std::iter::once(Polygon::new(band, BLUE.mix(0.2)))).map_err(|e| draw(&e))?;
        chart
            .draw_series(LineSeries::new(d.fraction.iter().copied().zip(d.mean_f1.iter().copied()), BLUE.stroke_width(2)))
            .map_err(|e| draw(&e))?;
        root.present().map_err(|e| draw(&e))?;
    }
    Ok(svg)
}

/// Read a curve CSV and write the SVG plot and its data payload.
/// Nothing is written when the curve is empty or malformed.
pub fn emit_plots(curve_csv: &Path, svg_out: &Path, json_out: &Path) -> Result<PlotData, PlotError> {
    let data = parse_curve(&std::fs::read_to_string(curve_csv)?)?;
    let svg = render_svg(&data)?;
    let json = serde_json::to_string_pretty(&data).map_err(|e| PlotError::Draw(e.to_string()))?;
    std::fs::write(svg_out, svg)?;
    std::fs::write(json_out, json + "\n")?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CURVE: &str = "fraction,mean_f1,var_f1,mean_edges,mean_degree\n0,1,0,10,2\n0.5,0.6,0.01,6,1.2\n1,0.2,0,2,0.4\n";

    #[test]
    fn parses_and_renders_deterministically() {
        let d = parse_curve(CURVE).unwrap();
        assert_eq!(d.mean_f1, vec![1.0, 0.6, 0.2]);
        assert_eq!(d.band_upper[1], 0.7);
        assert!(d.mean_f1.windows(2).all(|w| w[1] <= w[0]));
        let a = render_svg(&d).unwrap();
        assert!(a.starts_with("<svg"));
        assert_eq!(a, render_svg(&d).unwrap());
    }

    #[test]
    fn empty_or_malformed_curves_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let (csv, svg, json) = (dir.path().join("c.csv"), dir.path().join("c.svg"), dir.path().join("c.json"));
        std::fs::write(&csv, "fraction,mean_f1,var_f1,mean_edges,mean_degree\n").unwrap();
        assert!(matches!(emit_plots(&csv, &svg, &json), Err(PlotError::Empty)));
        assert!(!svg.exists() && !json.exists());
        std::fs::write(&csv, "fraction,f1\n0,1\n").unwrap();
        assert!(matches!(emit_plots(&csv, &svg, &json), Err(PlotError::Format { line: 1, .. })));
        std::fs::write(&csv, "fraction,mean_f1,var_f1,mean_edges,mean_degree\n0,x,0,1,1\n").unwrap();
        assert!(matches!(emit_plots(&csv, &svg, &json), Err(PlotError::Format { line: 2, .. })));
        std::fs::write(&csv, CURVE).unwrap();
        emit_plots(&csv, &svg, &json).unwrap();
        let first = std::fs::read(&json).unwrap();
        emit_plots(&csv, &svg, &json).unwrap();
        assert_eq!(std::fs::read(&json).unwrap(), first);
    }
}
