//! Low-voltage ride-through: the grid-code reactive current requirement and a
//! quasi-static fault-response surrogate.
//!
//! The fault is a shunt admittance at the faulted bus, sized on the passive
//! feeder (loads as nominal impedances, devices silent) so that the bus
//! voltage drops by the requested depth. During the fault each connected
//! device injects the required share of its full reactive capacity; the
//! reserve is released. The linear feeder is solved exactly with a
//! ladder reduction and device injections are iterated to a fixed point.
//!
//! After clearance bus voltages relax to their pre-fault values with a time
//! constant inversely proportional to the reactive headroom the pre-fault
//! plan left free, and devices ramp back to their plan.

use std::path::Path;
use std::str::FromStr;

use chrono::NaiveTime;
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::capability::ReserveCoefficient;
use crate::control::{ControlError, OperatingPoint, SetpointPlan};
use crate::netmodel::{BusId, Network};
use crate::powerflow::{PowerFlow, SolveOptions};

#[derive(Debug, Error)]
pub enum LvrtError {
    #[error("scenario line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("invalid grid-code curve: {0}")]
    Curve(String),
    #[error("faulted bus {0} not in network")]
    UnknownBus(BusId),
    #[error("pre-fault state: {0}")]
    PreFault(#[from] ControlError),
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GridCodeRegion {
    A,
    B,
    BPrime,
    C,
}

/// Voltage thresholds of the reactive current requirement, p.u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridCodeCurve {
    pub v_normal_low: f64,
    pub v_b_low: f64,
    pub v_bprime_low: f64,
    /// Required `I_q/I_n` per p.u. of voltage below `v_normal_low`.
    pub slope: f64,
}

impl Default for GridCodeCurve {
    fn default() -> Self {
        GridCodeCurve {
            v_normal_low: 0.9,
            v_b_low: 0.5,
            v_bprime_low: 0.2,
            slope: 2.5,
        }
    }
}

impl GridCodeCurve {
    pub fn new(v_normal_low: f64, v_b_low: f64, v_bprime_low: f64, slope: f64) -> Result<Self, LvrtError> {
        if !(0.0 < v_bprime_low && v_bprime_low < v_b_low && v_b_low < v_normal_low && v_normal_low < 1.0) {
            return Err(LvrtError::Curve(format!(
                "thresholds must satisfy 0 < {v_bprime_low} < {v_b_low} < {v_normal_low} < 1"
            )));
        }
        if !(slope > 0.0 && slope.is_finite()) {
            return Err(LvrtError::Curve(format!("slope {slope} must be positive")));
        }
        Ok(GridCodeCurve {
            v_normal_low,
            v_b_low,
            v_bprime_low,
            slope,
        })
    }

    pub fn region(&self, v: f64) -> GridCodeRegion {
        if v >= self.v_normal_low {
            GridCodeRegion::A
        } else if v >= self.v_b_low {
            GridCodeRegion::B
        } else if v >= self.v_bprime_low {
            GridCodeRegion::BPrime
        } else {
            GridCodeRegion::C
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReactiveRequirement {
    /// Required reactive current as a fraction of rated current.
    pub iq_ratio: f64,
    pub region: GridCodeRegion,
    pub disconnect_permitted: bool,
}

pub fn required_reactive_current(v: f64, curve: &GridCodeCurve) -> ReactiveRequirement {
    let region = curve.region(v);
    let iq_ratio = match region {
        GridCodeRegion::A => 0.0,
        GridCodeRegion::B => (curve.slope * (curve.v_normal_low - v)).min(1.0),
        GridCodeRegion::BPrime | GridCodeRegion::C => 1.0,
    };
    ReactiveRequirement {
        iq_ratio,
        region,
        disconnect_permitted: region == GridCodeRegion::C,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FaultScenario {
    pub bus: BusId,
    /// Voltage drop at the faulted bus as a fraction of its pre-fault value.
    pub sag: f64,
    pub t_start: f64,
    pub duration: f64,
    pub dt: f64,
    /// Simulated time after clearance.
    pub horizon: f64,
    /// Time of day of the operating point, for profile-driven runs.
    #[serde(skip)]
    pub snapshot: Option<NaiveTime>,
}

impl FaultScenario {
    pub fn new(bus: BusId, sag: f64, t_start: f64, duration: f64, dt: f64) -> Result<Self, LvrtError> {
        let s = FaultScenario {
            bus,
            sag,
            t_start,
            duration,
            dt,
            horizon: 1.0,
            snapshot: None,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), LvrtError> {
        let bad = |m: String| Err(LvrtError::Scenario(m));
        if !(0.0..1.0).contains(&self.sag) {
            return bad(format!("sag {} outside [0, 1)", self.sag));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration {} must be positive", self.duration));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt {} must be positive", self.dt));
        }
        if !(self.t_start >= 0.0 && self.t_start.is_finite()) {
            return bad(format!("t_start {} must be non-negative", self.t_start));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon {} must be non-negative", self.horizon));
        }
        Ok(())
    }

    pub fn t_clear(&self) -> f64 {
        self.t_start + self.duration
    }

    /// Parses `key = value` lines; `#` and `%` start comments.
    pub fn parse(text: &str) -> Result<Self, LvrtError> {
        let mut bus = None;
        let mut sag = None;
        let mut t_start = None;
        let mut duration = None;
        let mut dt = None;
        let mut horizon = None;
        let mut snapshot = None;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split(['#', '%']).next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| LvrtError::Syntax {
                    line,
                    msg: format!("expected key = value, got {content:?}"),
                })?;
            let num = |v: &str| {
                f64::from_str(v).map_err(|_| LvrtError::Syntax {
                    line,
                    msg: format!("bad number {v:?} for {key}"),
                })
            };
            match key {
                "bus" => {
                    bus = Some(value.parse().map_err(|_| LvrtError::Syntax {
                        line,
                        msg: format!("bad bus id {value:?}"),
                    })?)
                }
                "sag" => sag = Some(num(value)?),
                "t_start" => t_start = Some(num(value)?),
                "duration" => duration = Some(num(value)?),
                "dt" => dt = Some(num(value)?),
                "horizon" => horizon = Some(num(value)?),
                "snapshot" => {
                    snapshot = Some(
                        NaiveTime::parse_from_str(value, "%H:%M")
                            .or_else(|_| NaiveTime::parse_from_str(value, "%H:%M:%S"))
                            .map_err(|_| LvrtError::Syntax {
                                line,
                                msg: format!("bad time of day {value:?}"),
                            })?,
                    )
                }
                _ => {
                    return Err(LvrtError::Syntax {
                        line,
                        msg: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        let need = |v: Option<f64>, k: &str| v.ok_or_else(|| LvrtError::Scenario(format!("missing {k}")));
        let mut s = FaultScenario::new(
            bus.ok_or_else(|| LvrtError::Scenario("missing bus".into()))?,
            need(sag, "sag")?,
            need(t_start, "t_start")?,
            need(duration, "duration")?,
            need(dt, "dt")?,
        )?;
        if let Some(h) = horizon {
            s.horizon = h;
        }
        s.snapshot = snapshot;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, LvrtError> {
        let text = std::fs::read_to_string(path).map_err(|source| LvrtError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FaultOptions {
    pub curve: GridCodeCurve,
    /// Voltage relaxation time constant at full headroom, s.
    pub tau_voltage: f64,
    /// Time constant of the device ramp back to plan, s.
    pub tau_device: f64,
    /// Floor on the headroom fraction.
    pub min_headroom: f64,
    /// A bus has recovered once it is back within this margin of its
    /// pre-fault voltage.
    pub band: f64,
    pub max_iterations: usize,
    pub relaxation: f64,
    pub tolerance: f64,
    pub power_flow: SolveOptions,
}

impl Default for FaultOptions {
    fn default() -> Self {
        FaultOptions {
            curve: GridCodeCurve::default(),
            tau_voltage: 0.05,
            tau_device: 0.1,
            min_headroom: 0.05,
            band: 0.01,
            max_iterations: 500,
            relaxation: 0.5,
            tolerance: 1e-10,
            power_flow: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FaultOutcome {
    Normal,
    Severe { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaultReport {
    pub scenario: FaultScenario,
    pub outcome: FaultOutcome,
    pub times: Vec<f64>,
    /// Per timestep, per device `I_q/I_n` relative to full reactive capacity.
    pub iq_ratio: Vec<Vec<f64>>,
    /// Per timestep, per device reactive output, p.u.
    pub device_q: Vec<Vec<f64>>,
    pub compliant: Vec<bool>,
    pub min_voltage: Vec<f64>,
    pub faulted_bus_voltage: Vec<f64>,
    /// Full reactive capacity per device at the operating point, p.u.
    pub capacity: Vec<f64>,
    /// Reactive output per device while the fault is on, p.u.
    pub fault_q: Vec<f64>,
    pub headroom: f64,
    pub tau: f64,
    /// Time from clearance until every bus has settled back near its
    /// pre-fault voltage, s.
    pub recovery_proxy: f64,
    pub max_voltage_deviation: f64,
}

impl FaultReport {
    pub fn all_compliant(&self) -> bool {
        self.compliant.iter().all(|&c| c)
    }

    /// Time series as CSV, reactive power in kVAr.
    pub fn write_csv<W: std::io::Write>(&self, net: &Network, w: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec![
            "t_s".to_string(),
            "min_voltage_pu".to_string(),
            "faulted_bus_voltage_pu".to_string(),
            "compliant".to_string(),
        ];
        header.extend(net.devices.iter().map(|d| format!("q_kvar_{}", d.bus)));
        header.extend(net.devices.iter().map(|d| format!("iq_ratio_{}", d.bus)));
        w.write_record(&header)?;
        for s in 0..self.times.len() {
            let mut row = vec![
                format!("{:.6}", self.times[s]),
                format!("{:.9}", self.min_voltage[s]),
                format!("{:.9}", self.faulted_bus_voltage[s]),
                (self.compliant[s] as u8).to_string(),
            ];
            row.extend(self.device_q[s].iter().map(|q| format!("{:.6}", net.pu_to_kw(*q))));
            row.extend(self.iq_ratio[s].iter().map(|r| format!("{r:.9}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Solves the linear feeder: shunt `y` draws `y * V`, `j` is injected
/// current, root held at 1.0.
fn solve_linear(pf: &PowerFlow, y: &[Complex64], j: &[Complex64]) -> Vec<Complex64> {
    let tree = pf.tree();
    let z = pf.upstream_impedance();
    let n = y.len();
    let mut y_eq = y.to_vec();
    let mut j_eq = j.to_vec();
    let one = Complex64::new(1.0, 0.0);
    for &bus in tree.order.iter().rev() {
        if let Some(p) = tree.parent[bus] {
            let d = one + z[bus] * y_eq[bus];
            let (yc, jc) = (y_eq[bus] / d, j_eq[bus] / d);
            y_eq[p] += yc;
            j_eq[p] += jc;
        }
    }
    let mut v = vec![one; n];
    for &bus in tree.order.iter().skip(1) {
        let p = tree.parent[bus].expect("non-root has parent");
        v[bus] = (v[p] + z[bus] * j_eq[bus]) / (one + z[bus] * y_eq[bus]);
    }
    v
}

fn fault_admittance(pf: &PowerFlow, y_load: &[Complex64], f: usize, sag: f64) -> Complex64 {
    let n = y_load.len();
    let zero = vec![Complex64::new(0.0, 0.0); n];
    let v_th = solve_linear(pf, y_load, &zero)[f];
    let mut y = y_load.to_vec();
    y[f] += 1.0;
    let v1 = solve_linear(pf, &y, &zero)[f];
    let z_th = v_th / v1 - 1.0;
    Complex64::new(sag / (1.0 - sag), 0.0) / z_th
}

/// Simulates a fault on top of the pre-fault state `op` + `plan`.
pub fn simulate_fault_response(
    net: &Network,
    pf: &PowerFlow,
    op: &OperatingPoint,
    plan: &SetpointPlan,
    scen: &FaultScenario,
    opts: &FaultOptions,
) -> Result<FaultReport, LvrtError> {
    let f = net.bus_index(scen.bus).ok_or(LvrtError::UnknownBus(scen.bus))?;
    let pre = op.solve(net, pf, plan, &opts.power_flow)?;
    let n = net.buses.len();
    let n_dev = net.devices.len();
    let dev_bus: Vec<usize> = net
        .devices
        .iter()
        .map(|d| net.bus_index(d.bus).expect("validated"))
        .collect();
    let mut capacity = Vec::with_capacity(n_dev);
    for (d, dev) in net.devices.iter().enumerate() {
        let cap = if op.connected[d] {
            dev.capability
                .q_limit(op.device_p[d], ReserveCoefficient::ZERO)
                .map_err(|source| ControlError::Capability { bus: dev.bus, source })?
        } else {
            0.0
        };
        capacity.push(cap);
    }
    let plan_q: Vec<f64> = (0..n_dev)
        .map(|d| if op.connected[d] { plan.q[d] } else { 0.0 })
        .collect();
    let total_cap: f64 = capacity.iter().sum();
    let headroom = if total_cap > 0.0 {
        (0..n_dev)
            .map(|d| (capacity[d] - plan_q[d]).max(0.0))
            .sum::<f64>()
            / total_cap
    } else {
        1.0
    };
    let tau = opts.tau_voltage / headroom.max(opts.min_headroom);

    let v_pre = pre.vm.clone();
    let mut outcome = FaultOutcome::Normal;
    let (v_fault, fault_q) = if scen.sag == 0.0 {
        (v_pre.clone(), plan_q.clone())
    } else {
        let mut y: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(op.load_p[i], -op.load_q[i]))
            .collect();
        let y_f = fault_admittance(pf, &y, f, scen.sag);
        y[f] += y_f;
        let fault_q_at = |v: &[Complex64]| -> Vec<f64> {
            (0..n_dev)
                .map(|d| required_reactive_current(v[dev_bus[d]].norm(), &opts.curve).iq_ratio * capacity[d])
                .collect()
        };
        let currents = |v: &[Complex64], q: &[f64]| {
            let mut j = vec![Complex64::new(0.0, 0.0); n];
            for d in 0..n_dev {
                if op.connected[d] {
                    let b = dev_bus[d];
                    j[b] += (Complex64::new(op.device_p[d], q[d]) / v[b]).conj();
                }
            }
            j
        };
        let mut v = solve_linear(pf, &y, &vec![Complex64::new(0.0, 0.0); n]);
        let mut converged = false;
        for _ in 0..opts.max_iterations {
            let q = fault_q_at(&v);
            let v_new = solve_linear(pf, &y, &currents(&v, &q));
            let mut step = 0.0f64;
            for i in 0..n {
                let dv = v_new[i] - v[i];
                step = step.max(dv.norm());
                v[i] += opts.relaxation * dv;
            }
            if !step.is_finite() {
                break;
            }
            if step <= opts.tolerance {
                converged = true;
                break;
            }
        }
        if !converged {
            outcome = FaultOutcome::Severe {
                reason: format!("fault state did not settle in {} iterations", opts.max_iterations),
            };
        }
        let vm: Vec<f64> = v.iter().map(|x| x.norm()).collect();
        let q = fault_q_at(&v);
        (vm, q)
    };
    let severe = matches!(outcome, FaultOutcome::Severe { .. });

    let max_dev = (0..n)
        .map(|i| (v_pre[i] - v_fault[i]).abs())
        .fold(0.0, f64::max);
    let recovery_proxy = if severe {
        scen.horizon
    } else {
        (0..n)
            .map(|i| (v_pre[i] - v_fault[i]).abs())
            .filter(|&dev| dev > opts.band)
            .map(|dev| tau * (dev / opts.band).ln())
            .fold(0.0, f64::max)
    };

    let t_clear = scen.t_clear();
    let t_end = t_clear + scen.horizon;
    let steps = (t_end / scen.dt).round() as usize;
    let ratio = |q: f64, cap: f64| if cap > 0.0 { (q / cap).clamp(0.0, 1.0) } else { 0.0 };
    let mut report = FaultReport {
        scenario: *scen,
        outcome,
        times: Vec::with_capacity(steps + 1),
        iq_ratio: Vec::with_capacity(steps + 1),
        device_q: Vec::with_capacity(steps + 1),
        compliant: Vec::with_capacity(steps + 1),
        min_voltage: Vec::with_capacity(steps + 1),
        faulted_bus_voltage: Vec::with_capacity(steps + 1),
        capacity: capacity.clone(),
        fault_q: fault_q.clone(),
        headroom,
        tau,
        recovery_proxy,
        max_voltage_deviation: max_dev,
    };
    for s in 0..=steps {
        let t = s as f64 * scen.dt;
        let (vm, q): (Vec<f64>, Vec<f64>) = if t < scen.t_start || scen.sag == 0.0 {
            (v_pre.clone(), plan_q.clone())
        } else if t < t_clear {
            (v_fault.clone(), fault_q.clone())
        } else {
            let decay = (-(t - t_clear) / tau).exp();
            let vm: Vec<f64> = (0..n)
                .map(|i| v_pre[i] + (v_fault[i] - v_pre[i]) * decay)
                .collect();
            let ramp = (-(t - t_clear) / opts.tau_device).exp();
            let q = (0..n_dev)
                .map(|d| {
                    let back = plan_q[d] + (fault_q[d] - plan_q[d]) * ramp;
                    let req = required_reactive_current(vm[dev_bus[d]], &opts.curve).iq_ratio;
                    back.max(req * capacity[d])
                })
                .collect();
            (vm, q)
        };
        let in_event = scen.sag > 0.0 && t >= scen.t_start;
        let ok = !in_event
            || (!severe
                && (0..n_dev).all(|d| {
                    let req = required_reactive_current(vm[dev_bus[d]], &opts.curve);
                    capacity[d] <= 0.0
                        || req.disconnect_permitted
                        || ratio(q[d], capacity[d]) >= req.iq_ratio - 1e-9
                }));
        report.times.push(t);
        report.iq_ratio.push((0..n_dev).map(|d| ratio(q[d], capacity[d])).collect());
        report.min_voltage.push(vm.iter().copied().fold(f64::INFINITY, f64::min));
        report.faulted_bus_voltage.push(vm[f]);
        report.device_q.push(q);
        report.compliant.push(ok);
    }
    Ok(report)
}
