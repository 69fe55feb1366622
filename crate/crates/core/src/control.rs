//! Local reactive-power controllers.
//!
//! * no-action: every inverter holds zero reactive output;
//! * LLMA (local load measuring): each inverter supplies its own bus's
//!   reactive load up to its `(1 - k)`-scaled capability;
//! * LFMA (local flow measuring): LLMA, then inverters at branch nodes also
//!   cover the reactive flow measured on their upstream line, with a one-shot
//!   correction when that flow reverses.
//!
//! Both rules optionally evaluate the capability at a forecast of the next
//! active output and keep whichever setpoint is larger; the injected active
//! power itself always stays at the current value.

use serde::Serialize;
use thiserror::Error;

use crate::capability::{CapabilityError, ReserveCoefficient};
use crate::netmodel::{Device, Network, NodeKind};
use crate::powerflow::{InjectionSet, PowerFlow, PowerFlowError, PowerFlowSolution, SolveOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    NoAction,
    Llma,
    LfmaIntermediate,
    LfmaFinal,
    Opf,
}

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("device at bus {bus}: {source}")]
    Capability {
        bus: u32,
        #[source]
        source: CapabilityError,
    },
    #[error("power flow failed at stage {stage:?}: {source}")]
    PowerFlow {
        stage: Stage,
        #[source]
        source: PowerFlowError,
    },
    #[error("forecast requested but the operating point carries none")]
    MissingForecast,
}

/// Reactive setpoints, one per device in `Network::devices` order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetpointPlan {
    pub q: Vec<f64>,
    pub stage: Stage,
    pub k: ReserveCoefficient,
}

impl SetpointPlan {
    pub fn zeros(n: usize, stage: Stage, k: ReserveCoefficient) -> Self {
        SetpointPlan {
            q: vec![0.0; n],
            stage,
            k,
        }
    }

    pub fn total(&self) -> f64 {
        self.q.iter().sum()
    }
}

/// Loads and device outputs for one instant, all p.u.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    /// Current active output per device.
    pub device_p: Vec<f64>,
    /// Forecast of the next active output per device.
    pub forecast_p: Option<Vec<f64>>,
    /// Disconnected devices inject neither P nor Q.
    pub connected: Vec<bool>,
}

impl OperatingPoint {
    /// Case-file loads with every device connected at zero output.
    pub fn base(net: &Network) -> Self {
        OperatingPoint {
            load_p: net.buses.iter().map(|b| b.load_p).collect(),
            load_q: net.buses.iter().map(|b| b.load_q).collect(),
            device_p: vec![0.0; net.devices.len()],
            forecast_p: None,
            connected: vec![true; net.devices.len()],
        }
    }

    pub fn with_outputs(mut self, device_p: Vec<f64>) -> Self {
        self.device_p = device_p;
        self
    }

    pub fn injections(&self, net: &Network, plan: &SetpointPlan) -> InjectionSet {
        let mut inj = InjectionSet {
            p: self.load_p.iter().map(|p| -p).collect(),
            q: self.load_q.iter().map(|q| -q).collect(),
        };
        for (d, dev) in net.devices.iter().enumerate() {
            if self.connected[d] {
                let bus = net.bus_index(dev.bus).expect("validated");
                inj.add(bus, self.device_p[d], plan.q[d]);
            }
        }
        inj
    }

    pub fn solve(
        &self,
        net: &Network,
        pf: &PowerFlow,
        plan: &SetpointPlan,
        opts: &SolveOptions,
    ) -> Result<PowerFlowSolution, ControlError> {
        pf.solve(&self.injections(net, plan), opts)
            .map_err(|source| ControlError::PowerFlow {
                stage: plan.stage,
                source,
            })
    }
}

pub fn no_action(net: &Network) -> SetpointPlan {
    SetpointPlan::zeros(net.devices.len(), Stage::NoAction, ReserveCoefficient::ZERO)
}

/// Local-load rule: `min(Q_load, (1-k) * capability(P))`, never negative.
pub fn llma_setpoint(
    q_load: f64,
    p_g: f64,
    device: &Device,
    k: ReserveCoefficient,
) -> Result<f64, CapabilityError> {
    let limit = device.capability.q_limit(p_g, k)?;
    Ok(q_load.min(limit).max(0.0))
}

/// Which reactive demand a setpoint evaluation tries to cover.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SetpointRule {
    /// Local load only.
    Llma,
    /// Local load plus the measured upstream reactive flow.
    LfmaStep { q_upstream: f64 },
}

/// Evaluates the setpoint at both the current and the forecast output and
/// keeps the larger one. The forecast is clamped to the device rating.
pub fn forecast_adjusted_setpoint(
    p_current: f64,
    p_forecast: f64,
    q_load: f64,
    device: &Device,
    k: ReserveCoefficient,
    rule: SetpointRule,
) -> Result<f64, CapabilityError> {
    let demand = match rule {
        SetpointRule::Llma => q_load,
        SetpointRule::LfmaStep { q_upstream } => q_load + q_upstream,
    };
    let q_current = llma_setpoint(demand, p_current, device, k)?;
    let p_forecast = p_forecast.clamp(0.0, device.p_rated);
    let q_forecast = llma_setpoint(demand, p_forecast, device, k)?;
    Ok(if q_forecast > q_current {
        q_forecast
    } else {
        q_current
    })
}

fn device_setpoint(
    net: &Network,
    op: &OperatingPoint,
    d: usize,
    k: ReserveCoefficient,
    rule: SetpointRule,
    forecast: bool,
) -> Result<f64, ControlError> {
    if !op.connected[d] {
        return Ok(0.0);
    }
    let dev = &net.devices[d];
    let q_load = op.load_q[net.bus_index(dev.bus).expect("validated")];
    let p_c = op.device_p[d];
    let p_f = if forecast {
        op.forecast_p.as_ref().ok_or(ControlError::MissingForecast)?[d]
    } else {
        p_c
    };
    forecast_adjusted_setpoint(p_c, p_f, q_load, dev, k, rule).map_err(|source| {
        ControlError::Capability {
            bus: dev.bus,
            source,
        }
    })
}

/// LLMA for every device.
pub fn llma_plan(
    net: &Network,
    op: &OperatingPoint,
    k: ReserveCoefficient,
    forecast: bool,
) -> Result<SetpointPlan, ControlError> {
    let q = (0..net.devices.len())
        .map(|d| device_setpoint(net, op, d, k, SetpointRule::Llma, forecast))
        .collect::<Result<_, _>>()?;
    Ok(SetpointPlan {
        q,
        stage: Stage::Llma,
        k,
    })
}

/// Reactive flows seen at a branch node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowObservation {
    pub stage: Stage,
    /// Flow on the upstream line, positive towards the node.
    pub q_up: f64,
    /// Flows on the remaining incident lines, positive away from the node.
    pub q_do: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step4 {
    /// Upstream flow kept its direction; intermediate setpoint stands.
    Kept,
    /// Upstream flow reversed with downstream flows stable; reversal subtracted.
    Subtracted,
    /// Upstream and a downstream flow reversed; back to the local-load rule.
    Reverted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchNodeTrace {
    pub device: usize,
    pub upstream_branch: usize,
    pub downstream_branches: Vec<usize>,
    pub observed_h: FlowObservation,
    pub observed_i: FlowObservation,
    pub step4: Step4,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LfmaOutcome {
    pub plan: SetpointPlan,
    pub step2: SetpointPlan,
    pub step3: SetpointPlan,
    pub branch_nodes: Vec<BranchNodeTrace>,
}

fn observe(
    net: &Network,
    sol: &PowerFlowSolution,
    bus: usize,
    up: usize,
    down: &[usize],
    stage: Stage,
) -> FlowObservation {
    FlowObservation {
        stage,
        q_up: sol.q_into(net, up, bus),
        q_do: down.iter().map(|&b| -sol.q_into(net, b, bus)).collect(),
    }
}

/// Local flow measuring algorithm.
///
/// Runs three power flows (no-action, after step 2, after step 3); branch
/// nodes act simultaneously and there is no iteration to a fixed point.
pub fn lfma_plan(
    net: &Network,
    pf: &PowerFlow,
    op: &OperatingPoint,
    k: ReserveCoefficient,
    forecast: bool,
    opts: &SolveOptions,
) -> Result<LfmaOutcome, ControlError> {
    let tree = pf.tree();
    let n_dev = net.devices.len();

    // Step 1: upstream line = incident line with the largest apparent flow
    // under no-action; ties go to the lowest branch index.
    let sol0 = op.solve(net, pf, &no_action(net), opts)?;
    let mut nodes: Vec<(usize, usize, usize, Vec<usize>)> = Vec::new();
    for (d, dev) in net.devices.iter().enumerate() {
        let bus = net.bus_index(dev.bus).expect("validated");
        if tree.kind(bus) != NodeKind::Branch || !op.connected[d] {
            continue;
        }
        let mut incident = tree.incident[bus].clone();
        incident.sort_unstable();
        let up = incident
            .iter()
            .copied()
            .fold(None::<(usize, f64)>, |best, b| {
                let s = sol0.flows[b].apparent();
                match best {
                    Some((_, bs)) if bs >= s => best,
                    _ => Some((b, s)),
                }
            })
            .expect("branch node has incident lines")
            .0;
        let down = incident.into_iter().filter(|&b| b != up).collect();
        nodes.push((d, bus, up, down));
    }

    // Step 2: local-load rule everywhere.
    let step2 = llma_plan(net, op, k, forecast)?;
    let sol_h = op.solve(net, pf, &step2, opts)?;
    let obs_h: Vec<FlowObservation> = nodes
        .iter()
        .map(|(_, bus, up, down)| observe(net, &sol_h, *bus, *up, down, Stage::Llma))
        .collect();

    // Step 3: branch nodes also cover their upstream flow. Only flow towards
    // the node is covered, so no setpoint drops below its step-2 value.
    let mut step3 = step2.clone();
    step3.stage = Stage::LfmaIntermediate;
    for ((d, ..), h) in nodes.iter().zip(&obs_h) {
        let rule = SetpointRule::LfmaStep {
            q_upstream: h.q_up.max(0.0),
        };
        step3.q[*d] = device_setpoint(net, op, *d, k, rule, forecast)?;
    }
    let sol_i = op.solve(net, pf, &step3, opts)?;

    // Step 4: correct where the upstream flow reversed.
    let mut plan = step3.clone();
    plan.stage = Stage::LfmaFinal;
    let mut traces = Vec::with_capacity(nodes.len());
    for ((d, bus, up, down), h) in nodes.into_iter().zip(obs_h) {
        let i = observe(net, &sol_i, bus, up, &down, Stage::LfmaIntermediate);
        let step4 = if h.q_up * i.q_up < 0.0 {
            let downstream_stable = h.q_do.iter().zip(&i.q_do).all(|(a, b)| a * b > 0.0);
            if downstream_stable {
                plan.q[d] = (step3.q[d] - i.q_up.abs()).max(0.0);
                Step4::Subtracted
            } else {
                plan.q[d] = step2.q[d];
                Step4::Reverted
            }
        } else {
            Step4::Kept
        };
        traces.push(BranchNodeTrace {
            device: d,
            upstream_branch: up,
            downstream_branches: down,
            observed_h: h,
            observed_i: i,
            step4,
        });
    }
    debug_assert_eq!(plan.q.len(), n_dev);
    Ok(LfmaOutcome {
        plan,
        step2,
        step3,
        branch_nodes: traces,
    })
}
