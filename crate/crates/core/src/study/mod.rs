//! Penetration sweeps, model comparison and TOU sensitivity studies.
//!
//! A study is the Cartesian product of models × penetration levels × price
//! cases. Cells are independent and run in parallel; a failed cell is
//! recorded and the rest of the sweep continues.

use serde::{Deserialize, Serialize};

use crate::acpf::{verify_opf, VerificationReport};
use crate::conic::Tolerances;
use crate::error::{Error, Result};
use crate::fixed_current::{run_fixed_current, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::grid::Network;
use crate::par;
use crate::recovery::{solve_fixed_power, LoadModel, OpfSolution};
use crate::scenario::{scale_penetration, tou_tariff, EvFleet, Scenario, DEFAULT_MEAN_PRICE};

mod csv;
mod plots;

pub use self::csv::{emit_csv, format_sig, summary_rows, SummaryRow};
pub use self::plots::{emit_plots, PlotSelection};

/// Voltage below which an hour counts against a bus in the summary.
pub const DESIRED_V_MIN: f64 = 0.95;
pub const DEFAULT_LEVELS: [f64; 3] = [0.0, 0.25, 0.5];

/// Price case of a cell: one of the built-in tariffs or the scenario's own
/// price series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PriceCase {
    Tariff(u8),
    Scenario,
}

impl PriceCase {
    pub fn label(&self) -> String {
        match self {
            PriceCase::Tariff(id) => id.to_string(),
            PriceCase::Scenario => "file".to_string(),
        }
    }

    fn apply(&self, scenario: &Scenario) -> Result<Scenario> {
        match *self {
            PriceCase::Scenario => Ok(scenario.clone()),
            PriceCase::Tariff(id) => {
                let tariff = tou_tariff(id, DEFAULT_MEAN_PRICE)
                    .ok_or_else(|| Error::scenario("tou_scenario", format!("unknown tariff {id}, expected 1-4")))?;
                scenario.overlay(&tariff)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudySpec {
    pub network: Network,
    pub scenario: Scenario,
    /// Reference (100%) fleets.
    pub fleets: Vec<EvFleet>,
    pub models: Vec<LoadModel>,
    pub penetration_levels: Vec<f64>,
    pub prices: Vec<PriceCase>,
    pub verify: bool,
    pub conic_tol: Tolerances,
    pub fc_tol: f64,
    pub fc_max_iter: usize,
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
}

impl StudySpec {
    pub fn new(network: Network, scenario: Scenario, fleets: Vec<EvFleet>) -> Self {
        StudySpec {
            network,
            scenario,
            fleets,
            models: vec![LoadModel::FixedPower],
            penetration_levels: DEFAULT_LEVELS.to_vec(),
            prices: vec![PriceCase::Scenario],
            verify: false,
            conic_tol: Tolerances::default(),
            fc_tol: DEFAULT_TOL,
            fc_max_iter: DEFAULT_MAX_ITER,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.penetration_levels.is_empty() {
            return Err(Error::scenario("penetration", "at least one level required"));
        }
        if let Some(&bad) = self.penetration_levels.iter().find(|l| !(**l >= 0.0)) {
            return Err(Error::NegativePenetration(bad));
        }
        if self.models.is_empty() || self.prices.is_empty() {
            return Err(Error::scenario("model", "at least one model and price case required"));
        }
        for price in &self.prices {
            price.apply(&self.scenario)?;
        }
        self.scenario.validate()
    }

    /// Cells in output order: model, then price case, then level.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &model in &self.models {
            for &price in &self.prices {
                for &penetration in &self.penetration_levels {
                    cells.push(Cell {
                        model,
                        penetration,
                        price,
                    });
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub model: LoadModel,
    pub penetration: f64,
    pub price: PriceCase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutput {
    pub solution: OpfSolution,
    pub verification: Option<VerificationReport>,
    /// Fixed-point passes, fixed-current cells only.
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: std::result::Result<CellOutput, String>,
}

impl CellResult {
    /// Failed solve or failed verification.
    pub fn failed(&self) -> bool {
        match &self.outcome {
            Err(_) => true,
            Ok(out) => out.verification.as_ref().is_some_and(|r| !r.pass),
        }
    }

    pub fn status(&self) -> String {
        match &self.outcome {
            Err(e) => format!("failed: {e}"),
            Ok(out) if out.verification.as_ref().is_some_and(|r| !r.pass) => "verification_failed".into(),
            Ok(_) => "ok".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub bus_ids: Vec<usize>,
    pub base_mva: f64,
    pub cells: Vec<CellResult>,
}

impl StudyResult {
    pub fn any_failed(&self) -> bool {
        self.cells.iter().any(CellResult::failed)
    }

    pub fn find(&self, model: LoadModel, penetration: f64, price: PriceCase) -> Option<&OpfSolution> {
        self.cells
            .iter()
            .find(|c| c.cell.model == model && c.cell.penetration == penetration && c.cell.price == price)
            .and_then(|c| c.outcome.as_ref().ok())
            .map(|o| &o.solution)
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        summary_rows(self)
    }
}

pub fn run_cell(spec: &StudySpec, cell: &Cell) -> Result<CellOutput> {
    let scenario = cell.price.apply(&spec.scenario)?;
    let fleets = scale_penetration(&spec.fleets, cell.penetration)?;
    let (solution, iterations) = match cell.model {
        LoadModel::FixedPower => (solve_fixed_power(&spec.network, &scenario, &fleets, &spec.conic_tol)?, None),
        LoadModel::FixedCurrent => {
            let run = run_fixed_current(
                &spec.network,
                &scenario,
                &fleets,
                spec.fc_tol,
                spec.fc_max_iter,
                &spec.conic_tol,
            )?;
            let n = run.trace.len();
            (run.solution, Some(n))
        }
    };
    let verification = if spec.verify {
        Some(verify_opf(&spec.network, &solution, &scenario)?)
    } else {
        None
    };
    Ok(CellOutput {
        solution,
        verification,
        iterations,
    })
}

pub fn run_study(spec: &StudySpec) -> Result<StudyResult> {
    spec.validate()?;
    let cells = spec.cells();
    let outcomes = par::with_workers(spec.workers, || {
        par::map(&cells, |cell| {
            let outcome = run_cell(spec, cell).map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::warn!(
                    "cell {} / {} / tou {} failed: {e}",
                    cell.model.as_str(),
                    cell.penetration,
                    cell.price.label()
                );
            }
            CellResult { cell: *cell, outcome }
        })
    });
    Ok(StudyResult {
        bus_ids: spec.network.buses.iter().map(|b| b.id).collect(),
        base_mva: spec.network.bases.base_mva,
        cells: outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    fn spec() -> StudySpec {
        let net = bundled::ieee33();
        let loaded = bundled::caiso_day();
        StudySpec::new(net, loaded.scenario, loaded.fleets)
    }

    #[test]
    fn cell_order() {
        let mut s = spec();
        s.models = vec![LoadModel::FixedPower, LoadModel::FixedCurrent];
        s.prices = vec![PriceCase::Tariff(1), PriceCase::Tariff(2)];
        let cells = s.cells();
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[0].penetration, 0.0);
        assert_eq!(cells[2].penetration, 0.5);
        assert_eq!(cells[3].price, PriceCase::Tariff(2));
        assert_eq!(cells[6].model, LoadModel::FixedCurrent);
    }

    #[test]
    fn rejects_bad_spec() {
        let mut s = spec();
        s.penetration_levels = vec![0.0, -0.1];
        assert!(matches!(s.validate(), Err(Error::NegativePenetration(_))));
        let mut s = spec();
        s.penetration_levels.clear();
        assert!(s.validate().is_err());
        let mut s = spec();
        s.prices = vec![PriceCase::Tariff(7)];
        assert!(s.validate().is_err());
    }

    #[test]
    fn failed_cell_does_not_abort() {
        let mut s = spec();
        s.penetration_levels = vec![0.0];
        // Unreachable voltage floor makes every cell infeasible.
        s.network.buses[16].v_min = 1.2;
        s.network.buses[16].v_max = 1.3;
        let result = run_study(&s).unwrap();
        assert_eq!(result.cells.len(), 1);
        assert!(result.any_failed());
        assert!(result.cells[0].status().starts_with("failed"));
    }

    #[test]
    fn price_labels() {
        assert_eq!(PriceCase::Tariff(3).label(), "3");
        assert_eq!(PriceCase::Scenario.label(), "file");
    }
}
