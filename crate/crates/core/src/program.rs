//! Solver-agnostic second-order cone program.
//!
//! Variables carry optional box bounds; linear rows are either equalities
//! (`terms · x = rhs`) or inequalities (`terms · x <= rhs`). Two cone
//! families are kept apart so they stay recognizable in dumps:
//!
//! * [`SocCone`]: `‖(2c, 2s, a − b)‖₂ <= a + b`, the lifted voltage-product cone;
//! * [`ThermalCone`]: `‖(p, q)‖₂ <= limit`.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarKind {
    GridP { grid: usize },
    GridQ { grid: usize },
    Solar { unit: usize },
    /// Charging power (fixed-power model) or current (fixed-current model).
    EvCharge { fleet: usize },
    EvEnergy { fleet: usize },
    /// Squared voltage magnitude `c_ii`.
    VoltSq { bus: usize },
    /// `c_ij = V_i V_j cos(θ_i − θ_j)`, bus indices.
    CrossC { from: usize, to: usize },
    /// `s_ij = V_i V_j sin(θ_i − θ_j)`, bus indices.
    CrossS { from: usize, to: usize },
    FlowP { from: usize, to: usize },
    FlowQ { from: usize, to: usize },
}

impl VarKind {
    pub fn label(&self) -> String {
        match *self {
            VarKind::GridP { grid } => format!("Pg[{grid}]"),
            VarKind::GridQ { grid } => format!("Qg[{grid}]"),
            VarKind::Solar { unit } => format!("Ps[{unit}]"),
            VarKind::EvCharge { fleet } => format!("Pc[{fleet}]"),
            VarKind::EvEnergy { fleet } => format!("E[{fleet}]"),
            VarKind::VoltSq { bus } => format!("c[{bus},{bus}]"),
            VarKind::CrossC { from, to } => format!("c[{from},{to}]"),
            VarKind::CrossS { from, to } => format!("s[{from},{to}]"),
            VarKind::FlowP { from, to } => format!("p[{from},{to}]"),
            VarKind::FlowQ { from, to } => format!("q[{from},{to}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub kind: VarKind,
    pub hour: usize,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowKind {
    EnergyRecursion { fleet: usize },
    EnergyWrap { fleet: usize },
    RealBalance { bus: usize },
    ReactiveBalance { bus: usize },
    RealFlow { from: usize, to: usize },
    ReactiveFlow { from: usize, to: usize },
    SymmetryC { from: usize, to: usize },
    SymmetryS { from: usize, to: usize },
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub kind: RowKind,
    pub hour: usize,
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

/// `‖(2·x[cross_c], 2·x[cross_s], x[sq_from] − x[sq_to])‖ <= x[sq_from] + x[sq_to]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SocCone {
    pub hour: usize,
    pub cross_c: usize,
    pub cross_s: usize,
    pub sq_from: usize,
    pub sq_to: usize,
}

impl SocCone {
    /// `(a + b) − ‖(2c, 2s, a − b)‖`, non-negative inside the cone.
    pub fn slack(&self, x: &[f64]) -> f64 {
        let (c, s, a, b) = (x[self.cross_c], x[self.cross_s], x[self.sq_from], x[self.sq_to]);
        (a + b) - (4.0 * c * c + 4.0 * s * s + (a - b) * (a - b)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalCone {
    pub hour: usize,
    pub p: usize,
    pub q: usize,
    pub limit: f64,
}

impl ThermalCone {
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.limit - x[self.p].hypot(x[self.q])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub horizon: usize,
    /// Bus ids of the fleet, solar and grid tables the program was built
    /// against, in table order.
    pub fleet_buses: Vec<usize>,
    pub solar_buses: Vec<usize>,
    pub grid_buses: Vec<usize>,
    pub variables: Vec<Variable>,
    pub objective: Vec<f64>,
    pub eq_rows: Vec<LinearRow>,
    pub ineq_rows: Vec<LinearRow>,
    pub soc_cones: Vec<SocCone>,
    pub soc_thermal: Vec<ThermalCone>,
    #[serde(skip)]
    lookup: HashMap<(VarKind, usize), usize>,
}

/// Worst violation of each constraint family at a point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub eq: f64,
    pub ineq: f64,
    pub bounds: f64,
    pub cones: f64,
}

impl Violation {
    pub fn max(&self) -> f64 {
        self.eq.max(self.ineq).max(self.bounds).max(self.cones)
    }
}

impl ConicProgram {
    pub fn new(horizon: usize) -> Self {
        ConicProgram {
            horizon,
            ..Default::default()
        }
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn add_var(&mut self, kind: VarKind, hour: usize, lower: Option<f64>, upper: Option<f64>) -> usize {
        let idx = self.variables.len();
        self.variables.push(Variable {
            kind,
            hour,
            lower,
            upper,
        });
        self.objective.push(0.0);
        self.lookup.insert((kind, hour), idx);
        idx
    }

    pub fn var(&self, kind: VarKind, hour: usize) -> Option<usize> {
        self.lookup.get(&(kind, hour)).copied()
    }

    pub(crate) fn rebuild_lookup(&mut self) {
        self.lookup = self
            .variables
            .iter()
            .enumerate()
            .map(|(i, v)| ((v.kind, v.hour), i))
            .collect();
    }

    pub fn count_hour(&self, hour: usize) -> usize {
        self.variables.iter().filter(|v| v.hour == hour).count()
    }

    /// Largest violation per constraint family at `x`.
    pub fn violation(&self, x: &[f64]) -> Violation {
        let mut v = Violation::default();
        for row in &self.eq_rows {
            v.eq = v.eq.max((row.eval(x) - row.rhs).abs());
        }
        for row in &self.ineq_rows {
            v.ineq = v.ineq.max(row.eval(x) - row.rhs);
        }
        for (var, &xi) in self.variables.iter().zip(x) {
            if let Some(lo) = var.lower {
                v.bounds = v.bounds.max(lo - xi);
            }
            if let Some(hi) = var.upper {
                v.bounds = v.bounds.max(xi - hi);
            }
        }
        for cone in &self.soc_cones {
            v.cones = v.cones.max(-cone.slack(x));
        }
        for cone in &self.soc_thermal {
            v.cones = v.cones.max(-cone.slack(x));
        }
        v
    }

    /// Largest constant in the problem data, used to scale feasibility.
    pub fn data_scale(&self) -> f64 {
        let rows = self.eq_rows.iter().chain(&self.ineq_rows).map(|r| r.rhs.abs());
        let bounds = self
            .variables
            .iter()
            .flat_map(|v| [v.lower, v.upper])
            .flatten()
            .map(f64::abs);
        let limits = self.soc_thermal.iter().map(|c| c.limit);
        rows.chain(bounds).chain(limits).fold(1.0, f64::max)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// Portable text form: one declaration per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let num = |x: f64| format!("{x:.17e}");
        let bound = |b: Option<f64>, inf: &str| b.map_or(inf.to_string(), num);
        let _ = writeln!(out, "# conic program: min c'x s.t. rows, bounds, cones");
        let _ = writeln!(out, "horizon {}", self.horizon);
        let _ = writeln!(out, "variables {}", self.variables.len());
        for (j, v) in self.variables.iter().enumerate() {
            let _ = writeln!(
                out,
                "var {j} {} {} {} {}",
                v.kind.label(),
                v.hour + 1,
                bound(v.lower, "-inf"),
                bound(v.upper, "+inf")
            );
        }
        let _ = writeln!(out, "objective {}", self.objective.iter().filter(|c| **c != 0.0).count());
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                let _ = writeln!(out, "obj {j} {}", num(c));
            }
        }
        for (tag, rows) in [("eq", &self.eq_rows), ("le", &self.ineq_rows)] {
            let _ = writeln!(out, "{tag}_rows {}", rows.len());
            for row in rows.iter() {
                let terms: Vec<String> = row.terms.iter().map(|&(j, a)| format!("{j}:{}", num(a))).collect();
                let _ = writeln!(out, "{tag} {} {} {}", row.hour + 1, num(row.rhs), terms.join(" "));
            }
        }
        let _ = writeln!(out, "soc4 {}", self.soc_cones.len());
        for c in &self.soc_cones {
            let _ = writeln!(out, "soc4 {} {} {} {} {}", c.hour + 1, c.cross_c, c.cross_s, c.sq_from, c.sq_to);
        }
        let _ = writeln!(out, "soc3 {}", self.soc_thermal.len());
        for c in &self.soc_thermal {
            let _ = writeln!(out, "soc3 {} {} {} {}", c.hour + 1, c.p, c.q, num(c.limit));
        }
        out
    }
}
