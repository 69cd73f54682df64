//! Solve contract for [`ConicProgram`], backed by the Clarabel
//! interior-point solver.
//!
//! Clarabel's own termination test runs on its internally equilibrated
//! problem. Acceptance here is decided on the original data: the returned
//! point is re-checked against every row, bound and cone, and only then
//! reported [`SolveStatus::Optimal`].

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::program::ConicProgram;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub feasibility: f64,
    pub gap: f64,
    pub max_iter: u32,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            feasibility: 1e-8,
            gap: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Worst constraint violation on the original data, divided by the
    /// largest data constant (at least 1).
    pub primal_feas: f64,
    /// Solver-reported relative dual residual.
    pub dual_feas: f64,
    /// `|primal − dual| / max(1, |primal|)`.
    pub rel_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub primal: Vec<f64>,
    /// Multipliers in row order: equalities, inequalities, lower bounds,
    /// upper bounds, voltage cones (4 each), thermal cones (3 each).
    pub duals: Vec<f64>,
    pub objective_value: f64,
    pub residuals: Residuals,
    pub iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConicError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("problem is infeasible (residuals {0:?})")]
    Infeasible(Residuals),
    #[error("problem is unbounded (residuals {0:?})")]
    Unbounded(Residuals),
    #[error("iteration limit reached (residuals {0:?})")]
    IterationLimit(Residuals),
    #[error("numerical failure (residuals {0:?})")]
    NumericalFailure(Residuals),
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Turns any non-optimal status into its error.
    pub fn ensure_optimal(self) -> Result<Self, ConicError> {
        let r = self.residuals;
        match self.status {
            SolveStatus::Optimal => Ok(self),
            SolveStatus::Infeasible => Err(ConicError::Infeasible(r)),
            SolveStatus::Unbounded => Err(ConicError::Unbounded(r)),
            SolveStatus::IterationLimit => Err(ConicError::IterationLimit(r)),
            SolveStatus::NumericalFailure => Err(ConicError::NumericalFailure(r)),
        }
    }
}

struct Assembled {
    a: CscMatrix<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

fn assemble(program: &ConicProgram) -> Result<Assembled, ConicError> {
    let n = program.n_vars();
    if program.objective.len() != n {
        return Err(ConicError::Malformed("objective length differs from variable count".into()));
    }
    let check = |j: usize| {
        if j < n {
            Ok(())
        } else {
            Err(ConicError::Malformed(format!("reference to variable {j} of {n}")))
        }
    };
    let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::new();
    let mut push = |r: usize, c: usize, v: f64| {
        if v != 0.0 {
            rows.push(r);
            cols.push(c);
            vals.push(v);
        }
    };
    let mut m = 0;
    for row in &program.eq_rows {
        for &(j, a) in &row.terms {
            check(j)?;
            push(m, j, a);
        }
        b.push(row.rhs);
        m += 1;
    }
    let m_eq = m;
    for row in &program.ineq_rows {
        for &(j, a) in &row.terms {
            check(j)?;
            push(m, j, a);
        }
        b.push(row.rhs);
        m += 1;
    }
    for (j, v) in program.variables.iter().enumerate() {
        if let Some(lo) = v.lower {
            push(m, j, -1.0);
            b.push(-lo);
            m += 1;
        }
    }
    for (j, v) in program.variables.iter().enumerate() {
        if let Some(hi) = v.upper {
            push(m, j, 1.0);
            b.push(hi);
            m += 1;
        }
    }
    let m_nonneg = m - m_eq;
    for cone in &program.soc_cones {
        for j in [cone.cross_c, cone.cross_s, cone.sq_from, cone.sq_to] {
            check(j)?;
        }
        // s = (a + b, 2c, 2s, a − b) = −A x
        push(m, cone.sq_from, -1.0);
        push(m, cone.sq_to, -1.0);
        push(m + 1, cone.cross_c, -2.0);
        push(m + 2, cone.cross_s, -2.0);
        push(m + 3, cone.sq_from, -1.0);
        push(m + 3, cone.sq_to, 1.0);
        b.extend([0.0; 4]);
        m += 4;
    }
    for cone in &program.soc_thermal {
        check(cone.p)?;
        check(cone.q)?;
        if !(cone.limit >= 0.0) {
            return Err(ConicError::Malformed(format!("negative thermal limit {}", cone.limit)));
        }
        push(m + 1, cone.p, -1.0);
        push(m + 2, cone.q, -1.0);
        b.extend([cone.limit, 0.0, 0.0]);
        m += 3;
    }

    let mut cones = Vec::new();
    if m_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(m_eq));
    }
    if m_nonneg > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(m_nonneg));
    }
    cones.extend(program.soc_cones.iter().map(|_| SupportedConeT::SecondOrderConeT(4)));
    cones.extend(program.soc_thermal.iter().map(|_| SupportedConeT::SecondOrderConeT(3)));

    let a = CscMatrix::new_from_triplets(m, n, rows, cols, vals);
    Ok(Assembled { a, b, cones })
}

/// Solves `program`. Deterministic for identical inputs and settings.
pub fn solve(program: &ConicProgram, tol: &Tolerances) -> Result<ConicSolution, ConicError> {
    let n = program.n_vars();
    let Assembled { a, b, cones } = assemble(program)?;
    let p = CscMatrix::zeros((n, n));

    // The inner solver stops on scaled residuals; ask for a margin so the
    // unscaled re-check below passes at the requested tolerance.
    let inner = |x: f64| x * 1e-2;
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(tol.max_iter)
        .tol_feas(inner(tol.feasibility))
        .tol_gap_abs(inner(tol.gap))
        .tol_gap_rel(inner(tol.gap))
        .max_threads(1)
        .build()
        .map_err(|e| ConicError::Malformed(format!("solver settings: {e:?}")))?;

    let mut solver = DefaultSolver::new(&p, &program.objective, &a, &b, &cones, settings)
        .map_err(|e| ConicError::Malformed(format!("{e:?}")))?;
    solver.solve();

    let sol = &solver.solution;
    let info = &solver.info;
    let primal = sol.x.clone();
    let objective_value = program.objective_value(&primal);
    let violation = program.violation(&primal).max();
    let residuals = Residuals {
        primal_feas: violation / program.data_scale(),
        dual_feas: info.res_dual,
        rel_gap: (sol.obj_val - sol.obj_val_dual).abs() / sol.obj_val.abs().max(1.0),
    };
    let within = residuals.primal_feas <= tol.feasibility
        && residuals.dual_feas <= tol.feasibility
        && residuals.rel_gap <= tol.gap;

    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved if within => SolveStatus::Optimal,
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::NumericalFailure,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::IterationLimit,
        _ => SolveStatus::NumericalFailure,
    };
    log::debug!(
        "conic solve: {:?} in {} iterations, obj {objective_value:.6e}, residuals {residuals:?}",
        status,
        sol.iterations
    );
    Ok(ConicSolution {
        status,
        primal,
        duals: sol.z.clone(),
        objective_value,
        residuals,
        iterations: sol.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{LinearRow, RowKind, SocCone, VarKind};

    #[test]
    fn one_variable_lp() {
        let mut prog = ConicProgram::new(1);
        let x = prog.add_var(VarKind::GridP { grid: 0 }, 0, Some(3.0), None);
        prog.objective[x] = 1.0;
        let sol = solve(&prog, &Tolerances::default()).unwrap();
        assert!(sol.is_optimal());
        assert!((sol.primal[x] - 3.0).abs() < 1e-7);
        assert!((sol.objective_value - 3.0).abs() < 1e-7);
    }

    #[test]
    fn cone_boundary() {
        // min −c12 s.t. ‖(2 c12, 2 s12, c11 − c22)‖ <= c11 + c22, c11 = c22 = 1, s12 = 0
        let mut prog = ConicProgram::new(1);
        let c11 = prog.add_var(VarKind::VoltSq { bus: 0 }, 0, Some(1.0), Some(1.0));
        let c22 = prog.add_var(VarKind::VoltSq { bus: 1 }, 0, Some(1.0), Some(1.0));
        let c12 = prog.add_var(VarKind::CrossC { from: 0, to: 1 }, 0, None, None);
        let s12 = prog.add_var(VarKind::CrossS { from: 0, to: 1 }, 0, None, None);
        prog.objective[c12] = -1.0;
        prog.eq_rows.push(LinearRow {
            kind: RowKind::Other,
            hour: 0,
            terms: vec![(s12, 1.0)],
            rhs: 0.0,
        });
        prog.soc_cones.push(SocCone {
            hour: 0,
            cross_c: c12,
            cross_s: s12,
            sq_from: c11,
            sq_to: c22,
        });
        let sol = solve(&prog, &Tolerances::default()).unwrap().ensure_optimal().unwrap();
        assert!((sol.primal[c12] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn infeasible_and_unbounded_are_distinct() {
        let mut prog = ConicProgram::new(1);
        let x = prog.add_var(VarKind::GridP { grid: 0 }, 0, Some(2.0), Some(1.0));
        prog.objective[x] = 1.0;
        let sol = solve(&prog, &Tolerances::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert!(matches!(sol.ensure_optimal(), Err(ConicError::Infeasible(_))));

        let mut prog = ConicProgram::new(1);
        let x = prog.add_var(VarKind::GridP { grid: 0 }, 0, None, Some(1.0));
        prog.objective[x] = 1.0;
        let sol = solve(&prog, &Tolerances::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn iteration_limit() {
        let mut prog = ConicProgram::new(1);
        let x = prog.add_var(VarKind::GridP { grid: 0 }, 0, Some(3.0), None);
        prog.objective[x] = 1.0;
        let tol = Tolerances {
            max_iter: 1,
            ..Tolerances::default()
        };
        let sol = solve(&prog, &tol).unwrap();
        assert_eq!(sol.status, SolveStatus::IterationLimit);
    }

    #[test]
    fn malformed_reference() {
        let mut prog = ConicProgram::new(1);
        prog.add_var(VarKind::GridP { grid: 0 }, 0, None, None);
        prog.eq_rows.push(LinearRow {
            kind: RowKind::Other,
            hour: 0,
            terms: vec![(5, 1.0)],
            rhs: 0.0,
        });
        assert!(matches!(solve(&prog, &Tolerances::default()), Err(ConicError::Malformed(_))));
    }
}
