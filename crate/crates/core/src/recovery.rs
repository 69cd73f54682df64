//! From lifted conic variables back to voltages, angles and dispatch.

use serde::{Deserialize, Serialize};

use crate::conic::{solve, ConicSolution, Residuals, Tolerances};
use crate::error::{Error, Result};
use crate::grid::{spanning_order_idx, Network};
use crate::program::{ConicProgram, VarKind};
use crate::scenario::{EvFleet, Scenario};
use crate::socp::{build_program, EvModel};

/// Largest accepted relative cone slack.
pub const EXACTNESS_LIMIT: f64 = 1e-6;
/// Squared voltages this close below zero are treated as zero.
const NEGATIVE_SQUARE_CLAMP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum LoadModel {
    FixedPower,
    FixedCurrent,
}

impl LoadModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            LoadModel::FixedPower => "fixed_power",
            LoadModel::FixedCurrent => "fixed_current",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchFlow {
    /// Flow leaving the line's `from` bus.
    pub p_from: f64,
    pub q_from: f64,
    /// Flow leaving the line's `to` bus.
    pub p_to: f64,
    pub q_to: f64,
}

/// Physical OPF result. Per-hour tables are indexed `[hour][entity]`,
/// with buses in network order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfSolution {
    pub model: LoadModel,
    pub bus_ids: Vec<usize>,
    pub v: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub flows: Vec<Vec<BranchFlow>>,
    pub grid_p: Vec<Vec<f64>>,
    pub grid_q: Vec<Vec<f64>>,
    pub solar: Vec<Vec<f64>>,
    /// Power drawn by each fleet.
    pub ev_power: Vec<Vec<f64>>,
    /// Charging current per fleet, fixed-current model only.
    pub ev_current: Option<Vec<Vec<f64>>>,
    pub energy: Vec<Vec<f64>>,
    /// Attachment bus ids of the fleet and solar tables.
    pub fleet_buses: Vec<usize>,
    pub solar_buses: Vec<usize>,
    pub price: Vec<f64>,
    /// Total energy cost, $.
    pub objective: f64,
    pub exactness_gap: f64,
    pub residuals: Residuals,
}

impl OpfSolution {
    pub fn horizon(&self) -> usize {
        self.v.len()
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.bus_ids.iter().position(|&b| b == id)
    }

    /// Voltage trajectory of bus `id` over the horizon.
    pub fn bus_voltages(&self, id: usize) -> Option<Vec<f64>> {
        let i = self.bus_index(id)?;
        Some(self.v.iter().map(|row| row[i]).collect())
    }

    /// `Σ_t price_t · P_g,t · base_mva`.
    pub fn cost(&self, base_mva: f64) -> f64 {
        self.price
            .iter()
            .zip(&self.grid_p)
            .map(|(c, pg)| c * pg.iter().sum::<f64>() * base_mva)
            .sum()
    }
}

/// Relative slack of one voltage-product cone.
pub fn cone_gap(c_ii: f64, c_jj: f64, c_ij: f64, s_ij: f64) -> f64 {
    let sum = c_ii + c_jj;
    let norm = (4.0 * c_ij * c_ij + 4.0 * s_ij * s_ij + (c_ii - c_jj).powi(2)).sqrt();
    (sum - norm) / sum
}

/// Worst relative slack over all voltage-product cones. Zero means every
/// cone is tight and the lifted point is a physical AC state.
pub fn exactness_gap(program: &ConicProgram, solution: &ConicSolution) -> f64 {
    let x = &solution.primal;
    program
        .soc_cones
        .iter()
        .map(|c| cone_gap(x[c.sq_from], x[c.sq_to], x[c.cross_c], x[c.cross_s]))
        .fold(0.0, f64::max)
}

/// `V = √c_ii`, angles accumulated from the feeder along the spanning tree.
pub fn recover(network: &Network, program: &ConicProgram, solution: &ConicSolution) -> Result<OpfSolution> {
    let x = &solution.primal;
    let h = program.horizon;
    let n = network.n_buses();
    let get = |kind: VarKind, t: usize| program.var(kind, t).map(|j| x[j]);
    let feeder = network
        .feeder()
        .ok_or_else(|| Error::Network("no grid connection".into()))?;
    let order = spanning_order_idx(network, network.bus_id(feeder))?;

    let mut v = vec![vec![0.0; n]; h];
    let mut theta = vec![vec![0.0; n]; h];
    let mut flows = vec![vec![BranchFlow::default(); network.lines.len()]; h];
    for t in 0..h {
        for i in 0..n {
            let c = get(VarKind::VoltSq { bus: i }, t).unwrap_or(0.0);
            if c < -NEGATIVE_SQUARE_CLAMP {
                return Err(Error::NegativeVoltageSquare {
                    bus: network.bus_id(i),
                    hour: t + 1,
                    value: c,
                });
            }
            v[t][i] = c.max(0.0).sqrt();
        }
        for &(parent, child) in &order {
            let l = network.line_between(parent, child).expect("tree edge is a line");
            let (from, to) = network.line_ends(l);
            let c = get(VarKind::CrossC { from, to }, t).unwrap_or(0.0);
            let s = get(VarKind::CrossS { from, to }, t).unwrap_or(0.0);
            let diff = s.atan2(c);
            theta[t][child] = if parent == from {
                theta[t][parent] - diff
            } else {
                theta[t][parent] + diff
            };
        }
        for (l, flow) in flows[t].iter_mut().enumerate() {
            let (i, j) = network.line_ends(l);
            *flow = BranchFlow {
                p_from: get(VarKind::FlowP { from: i, to: j }, t).unwrap_or(0.0),
                q_from: get(VarKind::FlowQ { from: i, to: j }, t).unwrap_or(0.0),
                p_to: get(VarKind::FlowP { from: j, to: i }, t).unwrap_or(0.0),
                q_to: get(VarKind::FlowQ { from: j, to: i }, t).unwrap_or(0.0),
            };
        }
    }

    let table = |count: usize, kind: &dyn Fn(usize) -> VarKind| -> Vec<Vec<f64>> {
        (0..h)
            .map(|t| (0..count).map(|k| get(kind(k), t).unwrap_or(0.0)).collect())
            .collect()
    };
    let price_scale = network.bases.base_mva;
    let price = (0..h)
        .map(|t| {
            program
                .var(VarKind::GridP { grid: 0 }, t)
                .map_or(0.0, |j| program.objective[j] / price_scale)
        })
        .collect();

    Ok(OpfSolution {
        model: LoadModel::FixedPower,
        bus_ids: network.buses.iter().map(|b| b.id).collect(),
        v,
        theta,
        flows,
        grid_p: table(program.grid_buses.len(), &|g| VarKind::GridP { grid: g }),
        grid_q: table(program.grid_buses.len(), &|g| VarKind::GridQ { grid: g }),
        solar: table(program.solar_buses.len(), &|s| VarKind::Solar { unit: s }),
        ev_power: table(program.fleet_buses.len(), &|f| VarKind::EvCharge { fleet: f }),
        ev_current: None,
        energy: table(program.fleet_buses.len(), &|f| VarKind::EvEnergy { fleet: f }),
        fleet_buses: program.fleet_buses.clone(),
        solar_buses: program.solar_buses.clone(),
        price,
        objective: solution.objective_value,
        exactness_gap: exactness_gap(program, solution),
        residuals: solution.residuals,
    })
}

/// Builds, solves and recovers one model instance. Fails if the solve is
/// not optimal or the relaxation is not tight within [`EXACTNESS_LIMIT`].
pub fn solve_opf(
    network: &Network,
    scenario: &Scenario,
    fleets: &[EvFleet],
    model: &EvModel,
    tol: &Tolerances,
) -> Result<OpfSolution> {
    let program = build_program(network, scenario, fleets, model)?;
    let solution = solve(&program, tol)?.ensure_optimal()?;
    let opf = recover(network, &program, &solution)?;
    if opf.exactness_gap > EXACTNESS_LIMIT {
        return Err(Error::InexactRelaxation {
            gap: opf.exactness_gap,
            limit: EXACTNESS_LIMIT,
        });
    }
    Ok(opf)
}

pub fn solve_fixed_power(
    network: &Network,
    scenario: &Scenario,
    fleets: &[EvFleet],
    tol: &Tolerances,
) -> Result<OpfSolution> {
    solve_opf(network, scenario, fleets, &EvModel::FixedPower, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::SolveStatus;
    use crate::grid::{build_admittance, Bases, Bus, GridPoint, Line};
    use crate::program::SocCone;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4};

    fn two_bus_program(c11: f64, c22: f64, c12: f64, s12: f64) -> (Network, ConicProgram, ConicSolution) {
        let net = build_admittance(
            vec![Bus::new(1, 0.9, 1.1), Bus::new(2, 0.9, 1.1)],
            vec![Line::new(1, 2, 0.01, 0.02)],
            Bases::default(),
        )
        .unwrap()
        .with_grids(vec![GridPoint { bus: 1 }])
        .unwrap();
        let mut prog = ConicProgram::new(1);
        let a = prog.add_var(VarKind::VoltSq { bus: 0 }, 0, None, None);
        let b = prog.add_var(VarKind::VoltSq { bus: 1 }, 0, None, None);
        let c = prog.add_var(VarKind::CrossC { from: 0, to: 1 }, 0, None, None);
        let s = prog.add_var(VarKind::CrossS { from: 0, to: 1 }, 0, None, None);
        prog.soc_cones.push(SocCone {
            hour: 0,
            cross_c: c,
            cross_s: s,
            sq_from: a,
            sq_to: b,
        });
        let sol = ConicSolution {
            status: SolveStatus::Optimal,
            primal: vec![c11, c22, c12, s12],
            duals: vec![],
            objective_value: 0.0,
            residuals: Residuals::default(),
            iterations: 0,
        };
        (net, prog, sol)
    }

    #[test]
    fn zero_angle_recovery() {
        let (net, prog, sol) = two_bus_program(1.0, 0.9025, 0.95, 0.0);
        let opf = recover(&net, &prog, &sol).unwrap();
        assert!((opf.v[0][0] - 1.0).abs() < 1e-15);
        assert!((opf.v[0][1] - 0.95).abs() < 1e-15);
        assert_eq!(opf.theta[0][1], 0.0);
        assert!(opf.exactness_gap.abs() < 1e-15);
    }

    #[test]
    fn quarter_pi_angle() {
        let (net, prog, sol) = two_bus_program(1.0, 1.0, FRAC_1_SQRT_2, FRAC_1_SQRT_2);
        let opf = recover(&net, &prog, &sol).unwrap();
        // θ_1 − θ_2 = π/4 with θ_1 = 0
        assert!((opf.theta[0][1] + FRAC_PI_4).abs() < 1e-15);
        assert_eq!(opf.theta[0][0], 0.0);
    }

    #[test]
    fn cone_gap_examples() {
        assert_eq!(cone_gap(1.0, 1.0, 1.0, 0.0), 0.0);
        assert_eq!(cone_gap(1.0, 1.0, 0.5, 0.0), 0.5);
        assert_eq!(cone_gap(1.0, 1.0, 0.0, 0.0), 1.0);
    }

    #[test]
    fn negative_square_handling() {
        let (net, prog, sol) = two_bus_program(1.0, -5e-11, 0.0, 0.0);
        let opf = recover(&net, &prog, &sol).unwrap();
        assert_eq!(opf.v[0][1], 0.0);
        let (net, prog, sol) = two_bus_program(1.0, -1e-6, 0.0, 0.0);
        assert!(matches!(
            recover(&net, &prog, &sol),
            Err(Error::NegativeVoltageSquare { bus: 2, hour: 1, .. })
        ));
    }
}
