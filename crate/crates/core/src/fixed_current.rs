//! Fixed-current EV model by sequential convexification.
//!
//! EV power is the bilinear product `I · V`. Each pass freezes the voltage
//! at the previous iterate `V̂`, so the charging variable enters the
//! program as current with effective power `I · V̂`; the lifted program is
//! then solved exactly as in the fixed-power case. Passes repeat until the
//! recovered voltages stop moving.

use serde::{Deserialize, Serialize};

use crate::conic::Tolerances;
use crate::error::{Error, Result};
use crate::grid::Network;
use crate::recovery::{solve_opf, LoadModel, OpfSolution};
use crate::scenario::{EvFleet, Scenario};
use crate::socp::EvModel;

pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITER: usize = 50;

/// Power drawn by a constant-current load at terminal voltage `v`.
pub fn effective_ev_power(current: f64, v: f64) -> f64 {
    current * v
}

/// One pass of the fixed-point loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedCurrentIterate {
    /// 1-based.
    pub iteration: usize,
    /// Voltage estimate used in this pass, `[hour][bus]`.
    pub v_prev: Vec<Vec<f64>>,
    /// `max |V − V̂|` over buses and hours.
    pub delta: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedCurrentRun {
    pub solution: OpfSolution,
    pub trace: Vec<FixedCurrentIterate>,
}

pub fn solve_fixed_current(
    network: &Network,
    scenario: &Scenario,
    fleets: &[EvFleet],
    tol: f64,
    max_iter: usize,
) -> Result<OpfSolution> {
    run_fixed_current(network, scenario, fleets, tol, max_iter, &Tolerances::default()).map(|r| r.solution)
}

/// Fixed-point loop with its convergence trace.
pub fn run_fixed_current(
    network: &Network,
    scenario: &Scenario,
    fleets: &[EvFleet],
    tol: f64,
    max_iter: usize,
    conic_tol: &Tolerances,
) -> Result<FixedCurrentRun> {
    if !(tol > 0.0) {
        return Err(Error::scenario("tol", "must be positive"));
    }
    if max_iter == 0 {
        return Err(Error::scenario("max_iter", "must be positive"));
    }
    let n = network.n_buses();
    let h = scenario.horizon;
    let has_fleets = fleets.iter().any(|f| !f.is_inactive());
    let mut v_hat = vec![vec![1.0; n]; h];
    let mut trace: Vec<FixedCurrentIterate> = Vec::new();

    for iteration in 1..=max_iter {
        let model = EvModel::FixedCurrent { v_hat: v_hat.clone() };
        let mut opf = solve_opf(network, scenario, fleets, &model, conic_tol)?;
        let delta = max_abs_diff(&opf.v, &v_hat);
        log::info!(
            "fixed-current iteration {iteration}: delta {delta:.3e}, objective {:.6}",
            opf.objective
        );
        let prev_delta = trace.last().map(|it| it.delta);
        trace.push(FixedCurrentIterate {
            iteration,
            v_prev: v_hat.clone(),
            delta,
            objective: opf.objective,
        });
        if !has_fleets || delta <= tol {
            finish(&mut opf, &v_hat);
            return Ok(FixedCurrentRun { solution: opf, trace });
        }
        let damp = prev_delta.is_some_and(|d| delta > d);
        for (row_hat, row_new) in v_hat.iter_mut().zip(&opf.v) {
            for (vh, &vn) in row_hat.iter_mut().zip(row_new) {
                *vh = if damp { 0.5 * (vn + *vh) } else { vn };
            }
        }
    }
    Err(Error::FixedCurrentDiverged {
        iterations: max_iter,
        deltas: trace.iter().map(|it| it.delta).collect(),
    })
}

/// Relabels the charging variable as current and fills in the power it
/// delivers at the frozen voltage.
fn finish(opf: &mut OpfSolution, v_hat: &[Vec<f64>]) {
    let current = opf.ev_power.clone();
    let fleet_idx: Vec<usize> = opf
        .fleet_buses
        .iter()
        .map(|&b| opf.bus_index(b).expect("fleet bus in network"))
        .collect();
    for (t, row) in opf.ev_power.iter_mut().enumerate() {
        for (f, p) in row.iter_mut().enumerate() {
            *p = effective_ev_power(current[t][f], v_hat[t][fleet_idx[f]]);
        }
    }
    opf.ev_current = Some(current);
    opf.model = LoadModel::FixedCurrent;
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}
