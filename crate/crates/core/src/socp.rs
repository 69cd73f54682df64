//! Multi-period relaxed AC OPF as a [`ConicProgram`].
//!
//! The network is written in lifted variables `c_ii = V_i²`,
//! `c_ij = V_i V_j cos θ_ij`, `s_ij = V_i V_j sin θ_ij` (θ_ij = θ_i − θ_j),
//! which makes every flow and balance equation linear. The only
//! non-convexity, `c_ij² + s_ij² = c_ii c_jj`, is relaxed to a cone.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::grid::{validate_radial, Network};
use crate::program::{ConicProgram, LinearRow, RowKind, SocCone, ThermalCone, VarKind};
use crate::scenario::{EvFleet, Scenario};

/// How EV charging enters the network balance.
#[derive(Debug, Clone, PartialEq)]
pub enum EvModel {
    /// The EV variable is power.
    FixedPower,
    /// The EV variable is current; its power is `I · v_hat[hour][bus]`.
    FixedCurrent { v_hat: Vec<Vec<f64>> },
}

impl EvModel {
    fn coefficient(&self, hour: usize, bus: usize) -> f64 {
        match self {
            EvModel::FixedPower => 1.0,
            EvModel::FixedCurrent { v_hat } => v_hat[hour][bus],
        }
    }
}

/// Fixed-power model after symmetry reduction.
pub fn build_fixed_power(network: &Network, scenario: &Scenario, fleets: &[EvFleet]) -> Result<ConicProgram> {
    build_program(network, scenario, fleets, &EvModel::FixedPower)
}

pub fn build_program(
    network: &Network,
    scenario: &Scenario,
    fleets: &[EvFleet],
    model: &EvModel,
) -> Result<ConicProgram> {
    Ok(symmetry_reduce(build_directed(network, scenario, fleets, model)?))
}

/// Builds the program with one `(c, s)` pair per line direction, tied
/// together by explicit symmetry rows.
pub fn build_directed(
    network: &Network,
    scenario: &Scenario,
    fleets: &[EvFleet],
    model: &EvModel,
) -> Result<ConicProgram> {
    validate_radial(network)?;
    scenario.validate()?;
    let h = scenario.horizon;
    let n = network.n_buses();

    let bus_of = |id: usize| network.index_of(id).ok_or(Error::UnknownBus(id));
    let mut fleet_bus = Vec::with_capacity(fleets.len());
    for fleet in fleets {
        fleet.validate(h)?;
        fleet_bus.push(bus_of(fleet.bus)?);
    }
    let solar_bus: Vec<usize> = scenario
        .solar_units
        .iter()
        .map(|u| bus_of(u.bus))
        .collect::<Result<_>>()?;
    let grid_bus: Vec<usize> = network.grids.iter().map(|g| bus_of(g.bus)).collect::<Result<_>>()?;
    let mut load_p = vec![vec![0.0; n]; h];
    let mut load_q = vec![vec![0.0; n]; h];
    for load in &scenario.demand {
        let i = bus_of(load.bus)?;
        for t in 0..h {
            load_p[t][i] += load.p[t];
            load_q[t][i] += load.q[t];
        }
    }
    if let EvModel::FixedCurrent { v_hat } = model {
        if v_hat.len() != h || v_hat.iter().any(|row| row.len() != n) {
            return Err(Error::scenario("v_hat", "voltage estimate must be horizon x buses"));
        }
    }

    let active: Vec<usize> = (0..fleets.len()).filter(|&f| !fleets[f].is_inactive()).collect();
    let directed: Vec<(usize, usize, usize)> = (0..network.lines.len())
        .flat_map(|l| {
            let (i, j) = network.line_ends(l);
            [(l, i, j), (l, j, i)]
        })
        .collect();

    let mut prog = ConicProgram::new(h);
    prog.fleet_buses = fleets.iter().map(|f| f.bus).collect();
    prog.solar_buses = scenario.solar_units.iter().map(|u| u.bus).collect();
    prog.grid_buses = network.grids.iter().map(|g| g.bus).collect();
    let price_scale = network.bases.base_mva;

    for t in 0..h {
        for g in 0..grid_bus.len() {
            let pg = prog.add_var(VarKind::GridP { grid: g }, t, None, None);
            prog.objective[pg] = scenario.tou_price[t] * price_scale;
            prog.add_var(VarKind::GridQ { grid: g }, t, None, None);
        }
        for (s, avail) in scenario.solar_availability.iter().enumerate() {
            prog.add_var(VarKind::Solar { unit: s }, t, Some(0.0), Some(avail[t]));
        }
        for &f in &active {
            let cap = fleets[f].p_charge_max * scenario.r_charge[t];
            prog.add_var(VarKind::EvCharge { fleet: f }, t, Some(0.0), Some(cap));
        }
        for &f in &active {
            prog.add_var(VarKind::EvEnergy { fleet: f }, t, Some(fleets[f].e_min), Some(fleets[f].e_max));
        }
        for (i, bus) in network.buses.iter().enumerate() {
            prog.add_var(
                VarKind::VoltSq { bus: i },
                t,
                Some(bus.v_min * bus.v_min),
                Some(bus.v_max * bus.v_max),
            );
        }
        for &(_, i, j) in &directed {
            prog.add_var(VarKind::CrossC { from: i, to: j }, t, None, None);
            prog.add_var(VarKind::CrossS { from: i, to: j }, t, None, None);
        }
        for &(_, i, j) in &directed {
            prog.add_var(VarKind::FlowP { from: i, to: j }, t, None, None);
            prog.add_var(VarKind::FlowQ { from: i, to: j }, t, None, None);
        }
    }
    let var = |prog: &ConicProgram, kind: VarKind, t: usize| prog.var(kind, t).expect("declared above");

    // Fleet energy: E_t − E_{t−1} − γc·κ·X_t = −P^tr_t·R_d^t / γd, wrapping at t = 0.
    for &f in &active {
        let fleet = &fleets[f];
        for t in 0..h {
            let prev = if t == 0 { h - 1 } else { t - 1 };
            let kappa = model.coefficient(t, fleet_bus[f]);
            let e_t = var(&prog, VarKind::EvEnergy { fleet: f }, t);
            let e_prev = var(&prog, VarKind::EvEnergy { fleet: f }, prev);
            let x_t = var(&prog, VarKind::EvCharge { fleet: f }, t);
            let mut terms = vec![(e_t, 1.0), (x_t, -fleet.eff_charge * kappa)];
            if e_prev == e_t {
                terms.remove(0);
            } else {
                terms.push((e_prev, -1.0));
            }
            let kind = if t == 0 {
                RowKind::EnergyWrap { fleet: f }
            } else {
                RowKind::EnergyRecursion { fleet: f }
            };
            prog.eq_rows.push(LinearRow {
                kind,
                hour: t,
                terms,
                rhs: -fleet.travel[t] * scenario.r_discharge[t] / fleet.eff_discharge,
            });
        }
    }

    for t in 0..h {
        for i in 0..n {
            let c_ii = var(&prog, VarKind::VoltSq { bus: i }, t);
            let mut real = Vec::new();
            let mut reactive = Vec::new();
            for (s, &b) in solar_bus.iter().enumerate() {
                if b == i {
                    real.push((var(&prog, VarKind::Solar { unit: s }, t), 1.0));
                }
            }
            for (g, &b) in grid_bus.iter().enumerate() {
                if b == i {
                    real.push((var(&prog, VarKind::GridP { grid: g }, t), 1.0));
                    reactive.push((var(&prog, VarKind::GridQ { grid: g }, t), 1.0));
                }
            }
            for &f in &active {
                if fleet_bus[f] == i {
                    let x = var(&prog, VarKind::EvCharge { fleet: f }, t);
                    real.push((x, -model.coefficient(t, i)));
                }
            }
            let g_shunt = network.g[(i, i)] + network.neighbors[i].iter().map(|&j| network.g[(i, j)]).sum::<f64>();
            let b_shunt = network.b[(i, i)] + network.neighbors[i].iter().map(|&j| network.b[(i, j)]).sum::<f64>();
            if is_material(g_shunt, network.g[(i, i)]) {
                real.push((c_ii, -g_shunt));
            }
            if is_material(b_shunt, network.b[(i, i)]) {
                reactive.push((c_ii, b_shunt));
            }
            for &j in &network.neighbors[i] {
                real.push((var(&prog, VarKind::FlowP { from: i, to: j }, t), -1.0));
                reactive.push((var(&prog, VarKind::FlowQ { from: i, to: j }, t), -1.0));
            }
            prog.eq_rows.push(LinearRow {
                kind: RowKind::RealBalance { bus: i },
                hour: t,
                terms: real,
                rhs: load_p[t][i],
            });
            prog.eq_rows.push(LinearRow {
                kind: RowKind::ReactiveBalance { bus: i },
                hour: t,
                terms: reactive,
                rhs: load_q[t][i],
            });
        }

        for &(l, i, j) in &directed {
            let (g, b) = (network.g[(i, j)], network.b[(i, j)]);
            let c_ii = var(&prog, VarKind::VoltSq { bus: i }, t);
            let c_ij = var(&prog, VarKind::CrossC { from: i, to: j }, t);
            let s_ij = var(&prog, VarKind::CrossS { from: i, to: j }, t);
            let p_ij = var(&prog, VarKind::FlowP { from: i, to: j }, t);
            let q_ij = var(&prog, VarKind::FlowQ { from: i, to: j }, t);
            // p_ij = −G c_ii + G c_ij + B s_ij
            prog.eq_rows.push(LinearRow {
                kind: RowKind::RealFlow { from: i, to: j },
                hour: t,
                terms: vec![(p_ij, 1.0), (c_ii, g), (c_ij, -g), (s_ij, -b)],
                rhs: 0.0,
            });
            // q_ij = B c_ii − B c_ij + G s_ij
            prog.eq_rows.push(LinearRow {
                kind: RowKind::ReactiveFlow { from: i, to: j },
                hour: t,
                terms: vec![(q_ij, 1.0), (c_ii, -b), (c_ij, b), (s_ij, -g)],
                rhs: 0.0,
            });
            prog.soc_cones.push(SocCone {
                hour: t,
                cross_c: c_ij,
                cross_s: s_ij,
                sq_from: c_ii,
                sq_to: var(&prog, VarKind::VoltSq { bus: j }, t),
            });
            prog.soc_thermal.push(ThermalCone {
                hour: t,
                p: p_ij,
                q: q_ij,
                limit: network.lines[l].s_max,
            });
        }

        for l in 0..network.lines.len() {
            let (i, j) = network.line_ends(l);
            let c = |a, b| var(&prog, VarKind::CrossC { from: a, to: b }, t);
            let s = |a, b| var(&prog, VarKind::CrossS { from: a, to: b }, t);
            let sym_c = vec![(c(i, j), 1.0), (c(j, i), -1.0)];
            let sym_s = vec![(s(i, j), 1.0), (s(j, i), 1.0)];
            prog.eq_rows.push(LinearRow {
                kind: RowKind::SymmetryC { from: i, to: j },
                hour: t,
                terms: sym_c,
                rhs: 0.0,
            });
            prog.eq_rows.push(LinearRow {
                kind: RowKind::SymmetryS { from: i, to: j },
                hour: t,
                terms: sym_s,
                rhs: 0.0,
            });
        }
    }
    Ok(prog)
}

fn is_material(value: f64, reference: f64) -> bool {
    value.abs() > 1e-10 * reference.abs().max(1.0)
}

/// Eliminates the reverse-direction `(c_ji, s_ji)` using the symmetry rows
/// `c_ij − c_ji = 0` and `s_ij + s_ji = 0`. Cones that become duplicates
/// are dropped and variables are renumbered.
pub fn symmetry_reduce(program: ConicProgram) -> ConicProgram {
    let mut prog = program;
    // eliminated variable -> (kept variable, factor)
    let mut subst: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for row in &prog.eq_rows {
        if matches!(row.kind, RowKind::SymmetryC { .. } | RowKind::SymmetryS { .. }) {
            if let [(keep, a), (drop, b)] = row.terms[..] {
                subst.insert(drop, (keep, -a / b));
            }
        }
    }
    if subst.is_empty() {
        return prog;
    }

    let rewrite = |terms: &[(usize, f64)]| -> Vec<(usize, f64)> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        let mut order = Vec::new();
        for &(j, a) in terms {
            let (k, f) = subst.get(&j).copied().unwrap_or((j, 1.0));
            if !acc.contains_key(&k) {
                order.push(k);
            }
            *acc.entry(k).or_insert(0.0) += a * f;
        }
        order
            .into_iter()
            .filter_map(|k| {
                let a = acc[&k];
                (a != 0.0).then_some((k, a))
            })
            .collect()
    };

    for rows in [&mut prog.eq_rows, &mut prog.ineq_rows] {
        let kept: Vec<LinearRow> = rows
            .drain(..)
            .filter_map(|mut row| {
                row.terms = rewrite(&row.terms);
                (!row.terms.is_empty()).then_some(row)
            })
            .collect();
        *rows = kept;
    }
    for (&drop, &(keep, f)) in &subst {
        let c = prog.objective[drop];
        prog.objective[keep] += c * f;
    }

    let map = |j: usize| subst.get(&j).map_or(j, |&(k, _)| k);
    let mut seen = HashSet::new();
    let cones: Vec<SocCone> = prog
        .soc_cones
        .iter()
        .map(|c| {
            let forward = c.sq_from <= c.sq_to;
            SocCone {
                hour: c.hour,
                cross_c: map(c.cross_c),
                cross_s: map(c.cross_s),
                sq_from: if forward { c.sq_from } else { c.sq_to },
                sq_to: if forward { c.sq_to } else { c.sq_from },
            }
        })
        .filter(|c| seen.insert(*c))
        .collect();
    prog.soc_cones = cones;

    // renumber
    let mut new_index = vec![usize::MAX; prog.variables.len()];
    let mut next = 0;
    for (j, slot) in new_index.iter_mut().enumerate() {
        if !subst.contains_key(&j) {
            *slot = next;
            next += 1;
        }
    }
    let variables = prog
        .variables
        .iter()
        .enumerate()
        .filter(|(j, _)| !subst.contains_key(j))
        .map(|(_, v)| v.clone())
        .collect();
    let objective = prog
        .objective
        .iter()
        .enumerate()
        .filter(|(j, _)| !subst.contains_key(j))
        .map(|(_, &c)| c)
        .collect();
    prog.variables = variables;
    prog.objective = objective;
    for row in prog.eq_rows.iter_mut().chain(prog.ineq_rows.iter_mut()) {
        for term in &mut row.terms {
            term.0 = new_index[term.0];
        }
    }
    for c in &mut prog.soc_cones {
        c.cross_c = new_index[c.cross_c];
        c.cross_s = new_index[c.cross_s];
        c.sq_from = new_index[c.sq_from];
        c.sq_to = new_index[c.sq_to];
    }
    for c in &mut prog.soc_thermal {
        c.p = new_index[c.p];
        c.q = new_index[c.q];
    }
    prog.rebuild_lookup();
    prog
}

/// Per-hour variable count of the reduced program.
pub fn expected_vars_per_hour(network: &Network, scenario: &Scenario, active_fleets: usize) -> usize {
    let lines = network.lines.len();
    2 * network.grids.len() + scenario.solar_units.len() + 2 * active_fleets + network.n_buses() + 2 * lines + 4 * lines
}
