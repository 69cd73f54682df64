//! Multi-period optimal power flow for radial distribution feeders with
//! solar generation and EV fleets.
//!
//! * [`grid`] and [`scenario`] load and validate inputs;
//! * [`socp`] builds the relaxed program, [`conic`] solves it and
//!   [`recovery`] maps the result back to voltages and dispatch;
//! * [`fixed_current`] handles constant-current EV charging;
//! * [`acpf`] replays solutions through a Newton–Raphson power flow;
//! * [`study`] runs sweeps and writes CSV tables and SVG plots.

pub mod acpf;
pub mod bundled;
pub mod conic;
pub mod error;
pub mod fixed_current;
pub mod grid;
pub mod par;
pub mod program;
pub mod recovery;
pub mod scenario;
pub mod socp;
pub mod study;

pub use error::{Error, Result};
