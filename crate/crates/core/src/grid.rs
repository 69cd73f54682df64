//! Radial feeder model: buses, series-impedance lines, and the bus
//! admittance matrix split into conductance `G` and susceptance `B`.
//!
//! Buses carry external ids (1-based in the bundled data); everything
//! numerical is indexed by position in [`Network::buses`].

use std::collections::{BTreeSet, HashMap, VecDeque};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

/// Thermal limit used when the network file leaves `s_max_mva` out.
pub const DEFAULT_S_MAX_PU: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bases {
    pub base_kv: f64,
    pub base_mva: f64,
}

impl Default for Bases {
    fn default() -> Self {
        Bases {
            base_kv: 12.66,
            base_mva: 10.0,
        }
    }
}

impl Bases {
    pub fn z_base(&self) -> f64 {
        self.base_kv * self.base_kv / self.base_mva
    }

    pub fn ohm_to_pu(&self, ohm: f64) -> f64 {
        ohm / self.z_base()
    }

    pub fn mw_to_pu(&self, mw: f64) -> f64 {
        mw / self.base_mva
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub v_min: f64,
    pub v_max: f64,
    #[serde(default)]
    pub loads: Vec<usize>,
    #[serde(default)]
    pub grids: Vec<usize>,
}

impl Bus {
    pub fn new(id: usize, v_min: f64, v_max: f64) -> Self {
        Bus {
            id,
            v_min,
            v_max,
            loads: Vec::new(),
            grids: Vec::new(),
        }
    }
}

/// Series branch, impedance in p.u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub s_max: f64,
}

impl Line {
    pub fn new(from: usize, to: usize, r: f64, x: f64) -> Self {
        Line {
            from,
            to,
            r,
            x,
            s_max: DEFAULT_S_MAX_PU,
        }
    }

    pub fn admittance(&self) -> Complex64 {
        Complex64::new(self.r, self.x).inv()
    }
}

/// Nominal (peak) demand at a bus, p.u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NominalLoad {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
}

/// Connection point to the upstream grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub bus: usize,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub name: String,
    pub bases: Bases,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub loads: Vec<NominalLoad>,
    pub grids: Vec<GridPoint>,
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Neighbor bus indices per bus index, sorted ascending.
    pub neighbors: Vec<Vec<usize>>,
    line_ends: Vec<(usize, usize)>,
    index: HashMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("cycle through buses {0:?}")]
    Cycle(Vec<usize>),
    #[error("buses {0:?} are disconnected from bus {1}")]
    Disconnected(Vec<usize>, usize),
    #[error("bus {0} is not in the network")]
    UnknownRoot(usize),
}

/// Assembles `Y = G + jB` from series line admittances (no shunts).
pub fn build_admittance(buses: Vec<Bus>, lines: Vec<Line>, bases: Bases) -> Result<Network> {
    let mut index = HashMap::with_capacity(buses.len());
    for (k, bus) in buses.iter().enumerate() {
        if !(bus.v_min > 0.0 && bus.v_min < bus.v_max) {
            return Err(Error::Network(format!(
                "bus {} has invalid voltage bounds [{}, {}]",
                bus.id, bus.v_min, bus.v_max
            )));
        }
        if index.insert(bus.id, k).is_some() {
            return Err(Error::Network(format!("duplicate bus id {}", bus.id)));
        }
    }

    let n = buses.len();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    let mut seen = BTreeSet::new();
    let mut line_ends = Vec::with_capacity(lines.len());
    let mut neighbors = vec![Vec::new(); n];
    for line in &lines {
        let lookup = |id: usize| {
            index
                .get(&id)
                .copied()
                .ok_or_else(|| Error::Network(format!("line references unknown bus {id}")))
        };
        let (i, j) = (lookup(line.from)?, lookup(line.to)?);
        if i == j {
            return Err(Error::Network(format!("line {}-{} is a self-loop", line.from, line.to)));
        }
        if line.r == 0.0 && line.x == 0.0 {
            return Err(Error::Network(format!(
                "line {}-{} has zero impedance",
                line.from, line.to
            )));
        }
        if line.r < 0.0 || line.x <= 0.0 || !line.r.is_finite() || !line.x.is_finite() {
            return Err(Error::Network(format!(
                "line {}-{} needs r >= 0 and x > 0, got r = {}, x = {}",
                line.from, line.to, line.r, line.x
            )));
        }
        if line.s_max <= 0.0 {
            return Err(Error::Network(format!(
                "line {}-{} has non-positive thermal limit",
                line.from, line.to
            )));
        }
        if !seen.insert((i.min(j), i.max(j))) {
            return Err(Error::Network(format!(
                "duplicate line between buses {} and {}",
                line.from, line.to
            )));
        }
        let ys = line.admittance();
        y[(i, i)] += ys;
        y[(j, j)] += ys;
        y[(i, j)] -= ys;
        y[(j, i)] -= ys;
        neighbors[i].push(j);
        neighbors[j].push(i);
        line_ends.push((i, j));
    }
    for adj in &mut neighbors {
        adj.sort_unstable();
    }

    Ok(Network {
        name: String::new(),
        bases,
        buses,
        lines,
        loads: Vec::new(),
        grids: Vec::new(),
        g: y.map(|c| c.re),
        b: y.map(|c| c.im),
        neighbors,
        line_ends,
        index,
    })
}

impl Network {
    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_loads(mut self, loads: Vec<NominalLoad>) -> Result<Self> {
        for (k, load) in loads.iter().enumerate() {
            let i = self.index_of(load.bus).ok_or_else(|| {
                Error::Network(format!("load attached to unknown bus {}", load.bus))
            })?;
            self.buses[i].loads.push(k);
        }
        self.loads = loads;
        Ok(self)
    }

    pub fn with_grids(mut self, grids: Vec<GridPoint>) -> Result<Self> {
        for (k, grid) in grids.iter().enumerate() {
            let i = self.index_of(grid.bus).ok_or_else(|| {
                Error::Network(format!("grid attached to unknown bus {}", grid.bus))
            })?;
            self.buses[i].grids.push(k);
        }
        self.grids = grids;
        Ok(self)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn index_of(&self, id: usize) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn bus_id(&self, idx: usize) -> usize {
        self.buses[idx].id
    }

    /// Bus indices `(from, to)` of line `l`.
    pub fn line_ends(&self, l: usize) -> (usize, usize) {
        self.line_ends[l]
    }

    /// Index of the bus hosting the first grid connection.
    pub fn feeder(&self) -> Option<usize> {
        self.grids.first().and_then(|g| self.index_of(g.bus))
    }

    pub fn feeder_id(&self) -> Option<usize> {
        self.grids.first().map(|g| g.bus)
    }

    /// Line index joining two bus indices, if any.
    pub fn line_between(&self, i: usize, j: usize) -> Option<usize> {
        self.line_ends
            .iter()
            .position(|&(a, b)| (a, b) == (i, j) || (a, b) == (j, i))
    }
}

/// Checks that the network is a single tree.
pub fn validate_radial(network: &Network) -> Result<(), TopologyError> {
    let n = network.n_buses();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    let mut forest: Vec<Vec<usize>> = vec![Vec::new(); n];
    for l in 0..network.lines.len() {
        let (i, j) = network.line_ends(l);
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri == rj {
            let mut cycle: Vec<usize> = tree_path(&forest, i, j)
                .into_iter()
                .map(|k| network.bus_id(k))
                .collect();
            cycle.sort_unstable();
            return Err(TopologyError::Cycle(cycle));
        }
        parent[ri] = rj;
        forest[i].push(j);
        forest[j].push(i);
    }

    if n > 0 {
        let anchor = network.feeder().unwrap_or(0);
        let root = find(&mut parent, anchor);
        let stray: Vec<usize> = (0..n)
            .filter(|&k| find(&mut parent, k) != root)
            .map(|k| network.bus_id(k))
            .collect();
        if !stray.is_empty() {
            return Err(TopologyError::Disconnected(stray, network.bus_id(anchor)));
        }
    }
    Ok(())
}

fn tree_path(forest: &[Vec<usize>], from: usize, to: usize) -> Vec<usize> {
    let mut prev = vec![usize::MAX; forest.len()];
    let mut queue = VecDeque::from([from]);
    prev[from] = from;
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for &v in &forest[u] {
            if prev[v] == usize::MAX {
                prev[v] = u;
                queue.push_back(v);
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = prev[cur];
        path.push(cur);
    }
    path
}

/// Breadth-first `(parent, child)` edges from `root`, as bus ids.
pub fn spanning_order(network: &Network, root: usize) -> Result<Vec<(usize, usize)>, TopologyError> {
    spanning_order_idx(network, root).map(|edges| {
        edges
            .into_iter()
            .map(|(p, c)| (network.bus_id(p), network.bus_id(c)))
            .collect()
    })
}

/// Same as [`spanning_order`] but in bus indices.
pub fn spanning_order_idx(
    network: &Network,
    root: usize,
) -> Result<Vec<(usize, usize)>, TopologyError> {
    let start = network
        .index_of(root)
        .ok_or(TopologyError::UnknownRoot(root))?;
    let n = network.n_buses();
    let mut visited = vec![false; n];
    visited[start] = true;
    let mut queue = VecDeque::from([start]);
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    while let Some(u) = queue.pop_front() {
        for &v in &network.neighbors[u] {
            if !visited[v] {
                visited[v] = true;
                edges.push((u, v));
                queue.push_back(v);
            }
        }
    }
    Ok(edges)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    #[serde(default)]
    name: String,
    base_kv: f64,
    base_mva: f64,
    #[serde(default)]
    grid: Vec<GridPoint>,
    bus: Vec<BusRow>,
    line: Vec<LineRow>,
    #[serde(default)]
    load: Vec<LoadRow>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusRow {
    id: usize,
    v_min: f64,
    v_max: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineRow {
    from: usize,
    to: usize,
    r_ohm: f64,
    x_ohm: f64,
    s_max_mva: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadRow {
    bus: usize,
    p_kw: f64,
    q_kvar: f64,
}

/// Parses a network document (TOML: `bus`, `line`, `load`, `grid` tables
/// plus `base_kv` / `base_mva`). Impedances in ohm, loads in kW / kvar.
pub fn parse_network(text: &str) -> Result<Network> {
    let doc: NetworkDoc = toml::from_str(text).map_err(|e| Error::Parse {
        what: "network",
        msg: e.to_string(),
    })?;
    let bases = Bases {
        base_kv: doc.base_kv,
        base_mva: doc.base_mva,
    };
    if !(bases.base_kv > 0.0 && bases.base_mva > 0.0) {
        return Err(Error::Network("bases must be positive".into()));
    }
    let buses = doc
        .bus
        .iter()
        .map(|b| Bus::new(b.id, b.v_min, b.v_max))
        .collect();
    let lines = doc
        .line
        .iter()
        .map(|l| Line {
            from: l.from,
            to: l.to,
            r: bases.ohm_to_pu(l.r_ohm),
            x: bases.ohm_to_pu(l.x_ohm),
            s_max: l
                .s_max_mva
                .map_or(DEFAULT_S_MAX_PU, |s| bases.mw_to_pu(s)),
        })
        .collect();
    let loads = doc
        .load
        .iter()
        .map(|l| NominalLoad {
            bus: l.bus,
            p: bases.mw_to_pu(l.p_kw / 1000.0),
            q: bases.mw_to_pu(l.q_kvar / 1000.0),
        })
        .collect();
    build_admittance(buses, lines, bases)?
        .with_name(doc.name)
        .with_loads(loads)?
        .with_grids(doc.grid)
}
