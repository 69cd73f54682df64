//! CSV tables of a study. Floating-point values are written with six
//! significant digits; rows follow cell order, then hour, then bus.
//!
//! Units: voltages p.u., angles rad, powers MW / MVAr, energies MWh,
//! charging current p.u., prices $/MWh, cost $.

use std::path::Path;

use csv::Writer;

use super::{CellResult, StudyResult, DESIRED_V_MIN};
use crate::error::{Error, Result};
use crate::recovery::OpfSolution;

/// `x` with six significant digits; scientific notation outside
/// `[1e-5, 1e6)`.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        format!("{:.*}", (5 - exp) as usize, x)
    } else {
        sci
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: String,
    pub penetration: f64,
    pub tou: String,
    pub bus: usize,
    pub v_min: Option<f64>,
    pub hours_below_095: Option<usize>,
    pub cost_usd: Option<f64>,
    pub status: String,
}

pub fn summary_rows(result: &StudyResult) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for cell in &result.cells {
        let status = cell.status();
        let sol = cell.outcome.as_ref().ok().map(|o| &o.solution);
        let cost = sol.map(|s| s.cost(result.base_mva));
        for (i, &bus) in result.bus_ids.iter().enumerate() {
            let series = sol.map(|s| s.v.iter().map(|row| row[i]).collect::<Vec<_>>());
            rows.push(SummaryRow {
                model: cell.cell.model.as_str().to_string(),
                penetration: cell.cell.penetration,
                tou: cell.cell.price.label(),
                bus,
                v_min: series.as_ref().map(|v| v.iter().copied().fold(f64::INFINITY, f64::min)),
                hours_below_095: series.as_ref().map(|v| v.iter().filter(|&&x| x < DESIRED_V_MIN).count()),
                cost_usd: cost,
                status: status.clone(),
            });
        }
    }
    rows
}

fn keys(cell: &CellResult) -> [String; 3] {
    [
        cell.cell.model.as_str().to_string(),
        cell.cell.penetration.to_string(),
        cell.cell.price.label(),
    ]
}

fn open(dir: &Path, name: &str) -> Result<Writer<std::fs::File>> {
    let path = dir.join(name);
    Writer::from_path(&path).map_err(|e| csv_error(&path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

fn write_rows<I>(dir: &Path, name: &str, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let path = dir.join(name);
    let mut w = open(dir, name)?;
    w.write_record(header).map_err(|e| csv_error(&path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn dispatch_rows(keys: &[String; 3], sol: &OpfSolution, base_mva: f64) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    let mut push = |hour: usize, kind: &str, id: String, value: f64| {
        let mut row = keys.to_vec();
        row.extend([(hour + 1).to_string(), kind.to_string(), id, format_sig(value)]);
        rows.push(row);
    };
    for t in 0..sol.horizon() {
        push(t, "price", "-".into(), sol.price[t]);
        for (g, (&p, &q)) in sol.grid_p[t].iter().zip(&sol.grid_q[t]).enumerate() {
            push(t, "grid_p", g.to_string(), p * base_mva);
            push(t, "grid_q", g.to_string(), q * base_mva);
        }
        for (s, &p) in sol.solar[t].iter().enumerate() {
            push(t, "solar", sol.solar_buses[s].to_string(), p * base_mva);
        }
        for (f, &p) in sol.ev_power[t].iter().enumerate() {
            push(t, "ev_power", sol.fleet_buses[f].to_string(), p * base_mva);
        }
        if let Some(current) = &sol.ev_current {
            for (f, &i) in current[t].iter().enumerate() {
                push(t, "ev_current", sol.fleet_buses[f].to_string(), i);
            }
        }
        for (f, &e) in sol.energy[t].iter().enumerate() {
            push(t, "ev_energy", sol.fleet_buses[f].to_string(), e * base_mva);
        }
    }
    rows
}

/// Writes `voltages.csv`, `dispatch.csv`, `summary.csv` and, when any cell
/// was verified, `verification.csv` into `dir`.
pub fn emit_csv(result: &StudyResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut volts = Vec::new();
    let mut dispatch = Vec::new();
    let mut checks = Vec::new();
    for cell in &result.cells {
        let Ok(out) = &cell.outcome else { continue };
        let k = keys(cell);
        let sol = &out.solution;
        for t in 0..sol.horizon() {
            for (i, &bus) in result.bus_ids.iter().enumerate() {
                let mut row = k.to_vec();
                row.extend([
                    (t + 1).to_string(),
                    bus.to_string(),
                    format_sig(sol.v[t][i]),
                    format_sig(sol.theta[t][i]),
                ]);
                volts.push(row);
            }
        }
        dispatch.extend(dispatch_rows(&k, sol, result.base_mva));
        if let Some(report) = &out.verification {
            for h in &report.hours {
                let mut row = k.to_vec();
                row.extend([
                    h.hour.to_string(),
                    h.converged.to_string(),
                    h.iterations.to_string(),
                    format_sig(h.max_v_dev),
                    h.worst_bus.to_string(),
                    format_sig(h.max_flow_dev),
                    h.pass.to_string(),
                ]);
                checks.push(row);
            }
        }
    }

    write_rows(
        dir,
        "voltages.csv",
        &["model", "penetration", "tou", "hour", "bus", "v_pu", "theta_rad"],
        volts,
    )?;
    write_rows(
        dir,
        "dispatch.csv",
        &["model", "penetration", "tou", "hour", "entity_kind", "entity_id", "value"],
        dispatch,
    )?;
    let opt = |x: Option<String>| x.unwrap_or_default();
    write_rows(
        dir,
        "summary.csv",
        &[
            "model",
            "penetration",
            "tou",
            "bus",
            "v_min",
            "hours_below_095",
            "cost_usd",
            "status",
        ],
        summary_rows(result).into_iter().map(|r| {
            vec![
                r.model,
                r.penetration.to_string(),
                r.tou,
                r.bus.to_string(),
                opt(r.v_min.map(format_sig)),
                opt(r.hours_below_095.map(|h| h.to_string())),
                opt(r.cost_usd.map(format_sig)),
                r.status,
            ]
        }),
    )?;
    if !checks.is_empty() {
        write_rows(
            dir,
            "verification.csv",
            &[
                "model",
                "penetration",
                "tou",
                "hour",
                "converged",
                "iterations",
                "max_v_dev",
                "worst_bus",
                "max_flow_dev",
                "pass",
            ],
            checks,
        )?;
    }
    Ok(())
}
