#![allow(dead_code)]

use evopf::grid::{build_admittance, Bases, Bus, GridPoint, Line, Network};
use evopf::scenario::{EvFleet, LoadSeries, Scenario};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TWO_BUS_R: f64 = 0.05;
pub const TWO_BUS_X: f64 = 0.04;
pub const TWO_BUS_LOAD: (f64, f64) = (0.1, 0.05);
/// EV energy drawn in the single hour, p.u.
pub const TWO_BUS_EV: f64 = 0.2;
pub const TWO_BUS_PRICE: f64 = 100.0;

/// Feeder bus 1 and load bus 2, one line, both within [0.90, 1.05].
pub fn two_bus_network() -> Network {
    build_admittance(
        vec![Bus::new(1, 0.90, 1.05), Bus::new(2, 0.90, 1.05)],
        vec![Line::new(1, 2, TWO_BUS_R, TWO_BUS_X)],
        Bases::default(),
    )
    .unwrap()
    .with_grids(vec![GridPoint { bus: 1 }])
    .unwrap()
}

/// One flat-price hour; the cyclic energy row forces the fleet to draw
/// exactly `TWO_BUS_EV`.
pub fn two_bus_case() -> (Network, Scenario, Vec<EvFleet>) {
    let scenario = Scenario {
        name: "two-bus".into(),
        horizon: 1,
        tou_price: vec![TWO_BUS_PRICE],
        demand: vec![LoadSeries {
            bus: 2,
            p: vec![TWO_BUS_LOAD.0],
            q: vec![TWO_BUS_LOAD.1],
        }],
        solar_units: vec![],
        solar_availability: vec![],
        r_charge: vec![1.0],
        r_discharge: vec![1.0],
    };
    let fleet = EvFleet {
        bus: 2,
        e_min: 0.0,
        e_max: 1.0,
        p_charge_max: 0.5,
        eff_charge: 1.0,
        eff_discharge: 1.0,
        e_init_fraction: 0.5,
        travel: vec![TWO_BUS_EV],
    };
    (two_bus_network(), scenario, vec![fleet])
}

/// Brute force over `|V₂|` in [0.90, 1.05], step 1e-4. For each candidate
/// the line current follows from the bus-2 load, `V₁ = V₂ + zI`, and the
/// point is kept if `|V₁|` is within its bounds. Returns `(V₂, cost)` of
/// the cheapest feasible point.
pub fn two_bus_oracle() -> (f64, f64) {
    let z = Complex64::new(TWO_BUS_R, TWO_BUS_X);
    let s = Complex64::new(TWO_BUS_LOAD.0 + TWO_BUS_EV, TWO_BUS_LOAD.1);
    let base_mva = Bases::default().base_mva;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..=1500 {
        let v2 = 0.90 + k as f64 * 1e-4;
        let v2c = Complex64::new(v2, 0.0);
        let i = (s / v2c).conj();
        let v1 = v2c + z * i;
        if !(0.90..=1.05).contains(&v1.norm()) {
            continue;
        }
        let pg = (v1 * i.conj()).re;
        let cost = TWO_BUS_PRICE * pg * base_mva;
        if best.map_or(true, |(_, c)| cost < c) {
            best = Some((v2, cost));
        }
    }
    best.expect("a feasible grid point")
}

/// Random tree on `n` buses: bus `k` hangs off a random earlier bus.
pub fn random_radial(seed: u64, n: usize) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buses = (1..=n).map(|id| Bus::new(id, 0.9, 1.1)).collect();
    let lines = (2..=n)
        .map(|k| {
            let parent = rng.gen_range(1..k);
            Line::new(parent, k, rng.gen_range(0.005..0.1), rng.gen_range(0.005..0.1))
        })
        .collect();
    build_admittance(buses, lines, Bases::default())
        .unwrap()
        .with_grids(vec![GridPoint { bus: 1 }])
        .unwrap()
}

/// Operating point and injections for a random network.
pub fn random_point(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    let v = (0..n).map(|_| rng.gen_range(0.92..1.05)).collect();
    let theta = (0..n).map(|_| rng.gen_range(-0.05..0.05)).collect();
    let p = (0..n).map(|_| rng.gen_range(-0.1..0.05)).collect();
    let q = (0..n).map(|_| rng.gen_range(-0.05..0.05)).collect();
    let current = (0..n).map(|_| rng.gen_range(0.0..0.05)).collect();
    (v, theta, p, q, current)
}

/// Largest entry-wise relative error between the analytic Jacobian and
/// central differences with step `h`.
pub fn jacobian_error(net: &Network, seed: u64, h: f64) -> f64 {
    use evopf::acpf::{jacobian, mismatch, PfCase};
    let n = net.n_buses();
    let (v, theta, p, q, current) = random_point(seed, n);
    let mut case = PfCase::new(net, p, q, 0);
    case.current = current;
    let jac = jacobian(&case, &v, &theta);
    let m = n - 1;
    let mut worst: f64 = 0.0;
    for col in 0..2 * m {
        let bus = 1 + col % m;
        let perturb = |sign: f64| {
            let (mut v2, mut t2) = (v.clone(), theta.clone());
            if col < m {
                t2[bus] += sign * h;
            } else {
                v2[bus] += sign * h;
            }
            mismatch(&case, &v2, &t2)
        };
        let fd = (perturb(1.0) - perturb(-1.0)) / (2.0 * h);
        for row in 0..2 * m {
            let a = jac[(row, col)];
            let err = (a - fd[row]).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}
