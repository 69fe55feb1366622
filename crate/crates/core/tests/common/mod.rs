#![allow(dead_code)]

use std::path::PathBuf;

use gridloss::harness::TimeSeriesProfile;
use gridloss::netmodel::{load_case, Network};
use gridloss::powerflow::PowerFlow;

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn case(name: &str) -> (Network, PowerFlow) {
    let net = load_case(&data(name)).unwrap();
    let pf = PowerFlow::new(&net).unwrap();
    (net, pf)
}

pub fn fixture_day() -> TimeSeriesProfile {
    TimeSeriesProfile::load(&data("fixture_day.csv")).unwrap()
}

/// Reference solution of the 33-bus base case from an established
/// Newton-Raphson solver (see `oracles/ieee33_pypower.py`).
pub mod ieee33_reference {
    pub const TOTAL_LOSS_KW: f64 = 202.677126456;
    pub const MIN_VM_PU: f64 = 0.913090479361;
    pub const MIN_VM_BUS: u32 = 18;
    pub const SLACK_P_KW: f64 = 3917.677126456;
    pub const SLACK_Q_KVAR: f64 = 2435.140970973;
}

/// Receiving-end voltage of a single line feeding a constant-power load,
/// from the biquadratic `V^4 + (2(PR + QX) - 1) V^2 + (P^2 + Q^2)(R^2 + X^2) = 0`
/// with a 1.0 p.u. source.
pub fn two_bus_voltage(p: f64, q: f64, r: f64, x: f64) -> f64 {
    let b = 2.0 * (p * r + q * x) - 1.0;
    let c = (p * p + q * q) * (r * r + x * x);
    ((-b + (b * b - 4.0 * c).sqrt()) / 2.0).sqrt()
}
