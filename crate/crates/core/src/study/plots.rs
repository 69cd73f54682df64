//! SVG voltage plots: voltage against hour for selected buses and voltage
//! against bus for selected hours, one series per (model, penetration) and
//! one file per price case.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::{PriceCase, StudyResult, DESIRED_V_MIN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSelection {
    pub buses: Vec<usize>,
    /// 1-based.
    pub hours: Vec<usize>,
}

impl Default for PlotSelection {
    fn default() -> Self {
        PlotSelection {
            buses: vec![17, 33],
            hours: vec![1],
        }
    }
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

const SIZE: (u32, u32) = (800, 500);

fn price_cases(result: &StudyResult) -> Vec<PriceCase> {
    let mut out: Vec<PriceCase> = Vec::new();
    for c in &result.cells {
        if !out.contains(&c.cell.price) {
            out.push(c.cell.price);
        }
    }
    out
}

fn collect<F>(result: &StudyResult, price: PriceCase, mut points: F) -> Vec<Series>
where
    F: FnMut(&crate::recovery::OpfSolution) -> Option<Vec<(f64, f64)>>,
{
    result
        .cells
        .iter()
        .filter(|c| c.cell.price == price)
        .filter_map(|c| {
            let sol = &c.outcome.as_ref().ok()?.solution;
            Some(Series {
                label: format!("{} {}%", c.cell.model.as_str(), c.cell.penetration * 100.0),
                points: points(sol)?,
            })
        })
        .collect()
}

/// Writes one SVG per selected bus and per selected hour for every price
/// case; returns the written paths.
pub fn emit_plots(result: &StudyResult, dir: &Path, selection: &PlotSelection) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for price in price_cases(result) {
        for &bus in &selection.buses {
            let series = collect(result, price, |sol| {
                let v = sol.bus_voltages(bus)?;
                Some(v.iter().enumerate().map(|(t, &x)| ((t + 1) as f64, x)).collect())
            });
            if series.is_empty() {
                continue;
            }
            let path = dir.join(format!("bus{bus}_tou{}.svg", price.label()));
            draw(
                &path,
                &format!("Bus {bus} voltage, TOU {}", price.label()),
                "hour",
                &series,
            )?;
            written.push(path);
        }
        for &hour in &selection.hours {
            let series = collect(result, price, |sol| {
                let row = sol.v.get(hour.checked_sub(1)?)?;
                Some(
                    sol.bus_ids
                        .iter()
                        .zip(row)
                        .map(|(&id, &x)| (id as f64, x))
                        .collect(),
                )
            });
            if series.is_empty() {
                continue;
            }
            let path = dir.join(format!("hour{hour}_tou{}.svg", price.label()));
            draw(
                &path,
                &format!("Bus voltages at hour {hour}, TOU {}", price.label()),
                "bus",
                &series,
            )?;
            written.push(path);
        }
    }
    Ok(written)
}

fn draw(path: &Path, title: &str, x_label: &str, series: &[Series]) -> Result<()> {
    let plot_err = |e: &dyn std::fmt::Display| Error::Plot(format!("{}: {e}", path.display()));
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (x_lo, x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let (y_lo, y_hi) = ys
        .chain([DESIRED_V_MIN])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    let pad = ((y_hi - y_lo) * 0.05).max(1e-3);

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x_lo..x_hi.max(x_lo + 1.0), (y_lo - pad)..(y_hi + pad))
        .map_err(|e| plot_err(&e))?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc("voltage (p.u.)")
        .draw()
        .map_err(|e| plot_err(&e))?;

    for (k, s) in series.iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| plot_err(&e))?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .draw_series(LineSeries::new(
            [(x_lo, DESIRED_V_MIN), (x_hi, DESIRED_V_MIN)],
            BLACK.stroke_width(1),
        ))
        .map_err(|e| plot_err(&e))?
        .label("0.95 p.u.")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK));
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}
