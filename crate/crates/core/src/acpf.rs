//! Polar Newton–Raphson AC power flow, used as an independent check on
//! OPF results.
//!
//! Every non-slack bus is a PQ bus. Constant-current loads (fixed-current
//! EVs) draw `I·V_i`, so they enter the mismatch and the Jacobian through
//! the voltage magnitude of their own bus.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;
use crate::par;
use crate::recovery::{LoadModel, OpfSolution};
use crate::scenario::Scenario;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 20;
/// Per-bus voltage agreement required between OPF and replay, p.u.
pub const VOLTAGE_THRESHOLD: f64 = 1e-4;
/// Per-line flow agreement required between OPF and replay, p.u.
pub const FLOW_THRESHOLD: f64 = 1e-3;

/// One hour of net injections. `p`/`q` are generation minus fixed load
/// per bus index; `current` is constant-current load per bus index.
#[derive(Debug, Clone)]
pub struct PfCase<'a> {
    pub network: &'a Network,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub current: Vec<f64>,
    pub slack: usize,
}

impl<'a> PfCase<'a> {
    pub fn new(network: &'a Network, p: Vec<f64>, q: Vec<f64>, slack: usize) -> Self {
        let n = network.n_buses();
        PfCase {
            network,
            p,
            q,
            current: vec![0.0; n],
            slack,
        }
    }

    fn unknown_buses(&self) -> Vec<usize> {
        (0..self.network.n_buses()).filter(|&i| i != self.slack).collect()
    }

    fn validate(&self) -> Result<()> {
        let n = self.network.n_buses();
        if self.slack >= n {
            return Err(Error::Network(format!("slack index {} out of range", self.slack)));
        }
        if self.p.len() != n || self.q.len() != n || self.current.len() != n {
            return Err(Error::Network("injection vectors must have one entry per bus".into()));
        }
        if self.p.iter().chain(&self.q).chain(&self.current).any(|x| !x.is_finite()) {
            return Err(Error::Network("non-finite injection".into()));
        }
        Ok(())
    }
}

/// Calculated injections `(P_i, Q_i)` at every bus.
pub fn injections(network: &Network, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = network.n_buses();
    let (g, b) = (&network.g, &network.b);
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let mut pi = g[(i, i)] * v[i];
        let mut qi = -b[(i, i)] * v[i];
        for &k in &network.neighbors[i] {
            let (s, c) = (theta[i] - theta[k]).sin_cos();
            pi += v[k] * (g[(i, k)] * c + b[(i, k)] * s);
            qi += v[k] * (g[(i, k)] * s - b[(i, k)] * c);
        }
        p[i] = v[i] * pi;
        q[i] = v[i] * qi;
    }
    (p, q)
}

/// Mismatch `[P_calc − P_spec; Q_calc − Q_spec]` over non-slack buses.
pub fn mismatch(case: &PfCase<'_>, v: &[f64], theta: &[f64]) -> DVector<f64> {
    let (p, q) = injections(case.network, v, theta);
    let buses = case.unknown_buses();
    let m = buses.len();
    let mut f = DVector::zeros(2 * m);
    for (r, &i) in buses.iter().enumerate() {
        let p_spec = case.p[i] - case.current[i] * v[i];
        f[r] = p[i] - p_spec;
        f[m + r] = q[i] - case.q[i];
    }
    f
}

/// Analytic Jacobian of [`mismatch`] with respect to `[θ; V]` of the
/// non-slack buses.
pub fn jacobian(case: &PfCase<'_>, v: &[f64], theta: &[f64]) -> DMatrix<f64> {
    let net = case.network;
    let (g, b) = (&net.g, &net.b);
    let (p, q) = injections(net, v, theta);
    let buses = case.unknown_buses();
    let m = buses.len();
    let mut pos = vec![usize::MAX; net.n_buses()];
    for (r, &i) in buses.iter().enumerate() {
        pos[i] = r;
    }
    let mut jac = DMatrix::zeros(2 * m, 2 * m);
    for (r, &i) in buses.iter().enumerate() {
        let (vi, gii, bii) = (v[i], g[(i, i)], b[(i, i)]);
        jac[(r, r)] = -q[i] - bii * vi * vi;
        jac[(r, m + r)] = p[i] / vi + gii * vi + case.current[i];
        jac[(m + r, r)] = p[i] - gii * vi * vi;
        jac[(m + r, m + r)] = q[i] / vi - bii * vi;
        for &k in &net.neighbors[i] {
            let c = pos[k];
            if c == usize::MAX {
                continue;
            }
            let (s, co) = (theta[i] - theta[k]).sin_cos();
            let (gik, bik) = (g[(i, k)], b[(i, k)]);
            jac[(r, c)] = vi * v[k] * (gik * s - bik * co);
            jac[(r, m + c)] = vi * (gik * co + bik * s);
            jac[(m + r, c)] = -vi * v[k] * (gik * co + bik * s);
            jac[(m + r, m + c)] = vi * (gik * s - bik * co);
        }
    }
    jac
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfResult {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub iterations: usize,
    /// ‖mismatch‖∞ before each update and after the last one.
    pub mismatch_history: Vec<f64>,
}

/// Newton–Raphson from `v_init` (flat angles). The slack keeps
/// `v_init[slack]` and angle zero.
pub fn newton_pf(case: &PfCase<'_>, v_init: &[f64], tol: f64, max_iter: usize) -> Result<PfResult> {
    case.validate()?;
    let n = case.network.n_buses();
    if v_init.len() != n || v_init.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Network("v_init must be strictly positive, one entry per bus".into()));
    }
    let buses = case.unknown_buses();
    let m = buses.len();
    let mut v = v_init.to_vec();
    let mut theta = vec![0.0; n];
    let mut history = Vec::new();

    for iter in 0..=max_iter {
        let f = mismatch(case, &v, &theta);
        let norm = f.amax();
        history.push(norm);
        if !norm.is_finite() {
            break;
        }
        if norm <= tol {
            return Ok(PfResult {
                v,
                theta,
                iterations: iter,
                mismatch_history: history,
            });
        }
        if iter == max_iter {
            break;
        }
        let jac = jacobian(case, &v, &theta);
        let dx = jac.lu().solve(&(-f)).ok_or(Error::SingularJacobian(iter))?;
        for (r, &i) in buses.iter().enumerate() {
            theta[i] += dx[r];
            v[i] += dx[m + r];
        }
    }
    Err(Error::PowerFlowDiverged {
        iterations: history.len().saturating_sub(1),
        mismatch: history.last().copied().unwrap_or(f64::NAN),
    })
}

/// Physical flow leaving bus `i` towards `j`.
pub fn line_flow(network: &Network, v: &[f64], theta: &[f64], i: usize, j: usize) -> (f64, f64) {
    let (g, b) = (network.g[(i, j)], network.b[(i, j)]);
    let (s, c) = (theta[i] - theta[j]).sin_cos();
    let vv = v[i] * v[j];
    let p = -g * v[i] * v[i] + vv * (g * c + b * s);
    let q = b * v[i] * v[i] + vv * (g * s - b * c);
    (p, q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourCheck {
    /// 1-based.
    pub hour: usize,
    pub converged: bool,
    pub iterations: usize,
    pub max_v_dev: f64,
    /// Bus id with the largest voltage deviation.
    pub worst_bus: usize,
    pub max_flow_dev: f64,
    /// Buses whose deviation exceeds the voltage threshold.
    pub flagged_buses: Vec<usize>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub model: LoadModel,
    pub voltage_threshold: f64,
    pub flow_threshold: f64,
    pub hours: Vec<HourCheck>,
    pub pass: bool,
}

impl VerificationReport {
    pub fn max_v_dev(&self) -> f64 {
        self.hours.iter().map(|h| h.max_v_dev).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Rebuilds each hour's injections from the dispatch in `opf`, replays
/// them through [`newton_pf`] from a flat start (slack held at the OPF
/// feeder voltage) and compares voltages and flows.
pub fn verify_opf(network: &Network, opf: &OpfSolution, scenario: &Scenario) -> Result<VerificationReport> {
    let n = network.n_buses();
    let slack = network
        .feeder()
        .ok_or_else(|| Error::Network("no grid connection".into()))?;
    let idx = |id: usize| network.index_of(id).ok_or(Error::UnknownBus(id));
    let solar_bus: Vec<usize> = opf.solar_buses.iter().map(|&b| idx(b)).collect::<Result<_>>()?;
    let fleet_bus: Vec<usize> = opf.fleet_buses.iter().map(|&b| idx(b)).collect::<Result<_>>()?;
    let mut load_bus = Vec::with_capacity(scenario.demand.len());
    for load in &scenario.demand {
        load_bus.push(idx(load.bus)?);
    }
    if opf.bus_ids.len() != n {
        return Err(Error::Network("solution does not match the network".into()));
    }

    let hours: Vec<usize> = (0..opf.horizon()).collect();
    let hours = par::map(&hours, |&t| {
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        let mut current = vec![0.0; n];
        for (k, load) in scenario.demand.iter().enumerate() {
            p[load_bus[k]] -= load.p[t];
            q[load_bus[k]] -= load.q[t];
        }
        for (s, &i) in solar_bus.iter().enumerate() {
            p[i] += opf.solar[t][s];
        }
        for (f, &i) in fleet_bus.iter().enumerate() {
            match (&opf.model, &opf.ev_current) {
                (LoadModel::FixedCurrent, Some(cur)) => current[i] += cur[t][f],
                _ => p[i] -= opf.ev_power[t][f],
            }
        }
        let case = PfCase {
            network,
            p,
            q,
            current,
            slack,
        };
        let mut v_init = vec![1.0; n];
        v_init[slack] = opf.v[t][slack];
        check_hour(network, opf, &case, &v_init, t)
    });
    let pass = hours.iter().all(|h| h.pass);
    Ok(VerificationReport {
        model: opf.model,
        voltage_threshold: VOLTAGE_THRESHOLD,
        flow_threshold: FLOW_THRESHOLD,
        hours,
        pass,
    })
}

fn check_hour(network: &Network, opf: &OpfSolution, case: &PfCase<'_>, v_init: &[f64], t: usize) -> HourCheck {
    match newton_pf(case, v_init, DEFAULT_TOL, DEFAULT_MAX_ITER) {
        Ok(pf) => {
            let mut max_v_dev = 0.0;
            let mut worst_bus = network.bus_id(0);
            let mut flagged = Vec::new();
            for i in 0..network.n_buses() {
                let dev = (pf.v[i] - opf.v[t][i]).abs();
                if dev > max_v_dev {
                    max_v_dev = dev;
                    worst_bus = network.bus_id(i);
                }
                if dev > VOLTAGE_THRESHOLD {
                    flagged.push(network.bus_id(i));
                }
            }
            let mut max_flow_dev: f64 = 0.0;
            for (l, flow) in opf.flows[t].iter().enumerate() {
                let (i, j) = network.line_ends(l);
                let (pf_ij, qf_ij) = line_flow(network, &pf.v, &pf.theta, i, j);
                let (pf_ji, qf_ji) = line_flow(network, &pf.v, &pf.theta, j, i);
                for d in [pf_ij - flow.p_from, qf_ij - flow.q_from, pf_ji - flow.p_to, qf_ji - flow.q_to] {
                    max_flow_dev = max_flow_dev.max(d.abs());
                }
            }
            HourCheck {
                hour: t + 1,
                converged: true,
                iterations: pf.iterations,
                max_v_dev,
                worst_bus,
                max_flow_dev,
                pass: flagged.is_empty() && max_flow_dev <= FLOW_THRESHOLD,
                flagged_buses: flagged,
                error: None,
            }
        }
        Err(e) => HourCheck {
            hour: t + 1,
            converged: false,
            iterations: DEFAULT_MAX_ITER,
            max_v_dev: f64::INFINITY,
            worst_bus: network.bus_id(case.slack),
            max_flow_dev: f64::INFINITY,
            flagged_buses: Vec::new(),
            pass: false,
            error: Some(e.to_string()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_admittance, Bases, Bus, GridPoint, Line};

    fn two_bus(r: f64, x: f64) -> Network {
        build_admittance(
            vec![Bus::new(1, 0.5, 1.5), Bus::new(2, 0.5, 1.5)],
            vec![Line::new(1, 2, r, x)],
            Bases::default(),
        )
        .unwrap()
        .with_grids(vec![GridPoint { bus: 1 }])
        .unwrap()
    }

    #[test]
    fn no_load_is_flat() {
        let net = two_bus(0.01, 0.01);
        let case = PfCase::new(&net, vec![0.0; 2], vec![0.0; 2], 0);
        let pf = newton_pf(&case, &[1.0, 1.0], DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(pf.iterations <= 1);
        assert!((pf.v[1] - 1.0).abs() < 1e-12);
        assert!(pf.theta[1].abs() < 1e-12);
    }

    /// |V₂| from the receiving-end quartic: with V₁ = 1 and load S = P + jQ,
    /// u = |V₂|² solves u² + (2(rP + xQ) − 1)u + |z|²|S|² = 0 (larger root).
    #[test]
    fn two_bus_matches_quartic() {
        let (r, x, p, q): (f64, f64, f64, f64) = (0.01, 0.01, 0.1, 0.05);
        let b = 2.0 * (r * p + x * q) - 1.0;
        let c = (r * r + x * x) * (p * p + q * q);
        let u = (-b + (b * b - 4.0 * c).sqrt()) / 2.0;
        let v2 = u.sqrt();

        let net = two_bus(r, x);
        let case = PfCase::new(&net, vec![0.0, -p], vec![0.0, -q], 0);
        let pf = newton_pf(&case, &[1.0, 1.0], DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!((pf.v[1] - v2).abs() < 1e-10, "{} vs {}", pf.v[1], v2);
    }

    #[test]
    fn constant_current_load() {
        // I·V at the load bus: V₂ solves the quartic with P = I·V₂.
        let net = two_bus(0.02, 0.04);
        let mut case = PfCase::new(&net, vec![0.0; 2], vec![0.0; 2], 0);
        case.current[1] = 0.2;
        let pf = newton_pf(&case, &[1.0, 1.0], DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let (p, q) = injections(&net, &pf.v, &pf.theta);
        assert!((p[1] + 0.2 * pf.v[1]).abs() < 1e-10);
        assert!(q[1].abs() < 1e-10);
    }

    #[test]
    fn divergence_reported() {
        let net = two_bus(0.1, 0.1);
        let case = PfCase::new(&net, vec![0.0, -50.0], vec![0.0, -50.0], 0);
        assert!(newton_pf(&case, &[1.0, 1.0], DEFAULT_TOL, DEFAULT_MAX_ITER).is_err());
    }

    #[test]
    fn slack_injection_is_ignored() {
        let net = two_bus(0.01, 0.02);
        let a = PfCase::new(&net, vec![0.0, -0.2], vec![0.0, -0.1], 0);
        let b = PfCase::new(&net, vec![3.0, -0.2], vec![0.0, -0.1], 0);
        let ra = newton_pf(&a, &[1.0, 1.0], DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let rb = newton_pf(&b, &[1.0, 1.0], DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(ra.v, rb.v);
        assert_eq!(ra.theta, rb.theta);
    }

    #[test]
    fn rejects_bad_init() {
        let net = two_bus(0.01, 0.02);
        let case = PfCase::new(&net, vec![0.0; 2], vec![0.0; 2], 0);
        assert!(newton_pf(&case, &[1.0, 0.0], DEFAULT_TOL, DEFAULT_MAX_ITER).is_err());
    }
}
