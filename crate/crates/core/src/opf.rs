//! Centralized loss-minimizing reactive dispatch.
//!
//! Projected coordinate descent over the device setpoints, each coordinate
//! minimized by golden-section search inside its `(1 - k)`-scaled box, every
//! evaluation a full power flow. Starts from no-action and visits devices in
//! ascending bus order. When the sweep budget runs out before the loss
//! settles, or any power flow fails, the result falls back to no-action.

use serde::Serialize;

use crate::capability::ReserveCoefficient;
use crate::control::{no_action, OperatingPoint, SetpointPlan, Stage};
use crate::netmodel::Network;
use crate::powerflow::{PowerFlow, SolveOptions};

const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpfOptions {
    /// Maximum number of full coordinate sweeps.
    pub max_iterations: usize,
    /// A sweep improving the loss by no more than this (p.u.) ends the search.
    pub tolerance: f64,
    /// Bracket width (p.u.) at which a line search stops.
    pub line_tolerance: f64,
    pub power_flow: SolveOptions,
}

impl Default for OpfOptions {
    fn default() -> Self {
        OpfOptions {
            max_iterations: 50,
            tolerance: 1e-9,
            line_tolerance: 1e-6,
            power_flow: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpfStatus {
    Converged,
    FellBack,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpfResult {
    pub status: OpfStatus,
    pub plan: SetpointPlan,
    /// Loss of `plan`, p.u.; `None` when even the no-action flow failed.
    pub loss: Option<f64>,
    pub iterations: usize,
    pub reason: Option<String>,
}

struct Evaluator<'a> {
    net: &'a Network,
    pf: &'a PowerFlow,
    op: &'a OperatingPoint,
    opts: &'a SolveOptions,
    plan: SetpointPlan,
}

impl Evaluator<'_> {
    fn loss_with(&mut self, d: usize, q: f64) -> Result<f64, String> {
        let saved = self.plan.q[d];
        self.plan.q[d] = q;
        let r = self.loss();
        self.plan.q[d] = saved;
        r
    }

    fn loss(&self) -> Result<f64, String> {
        self.op
            .solve(self.net, self.pf, &self.plan, self.opts)
            .map(|s| s.total_loss)
            .map_err(|e| e.to_string())
    }

    /// Golden-section minimum of the loss along coordinate `d` on `[0, hi]`.
    fn line_search(&mut self, d: usize, hi: f64, tol: f64) -> Result<(f64, f64), String> {
        let (mut a, mut b) = (0.0, hi);
        let mut x1 = b - INV_PHI * (b - a);
        let mut x2 = a + INV_PHI * (b - a);
        let mut f1 = self.loss_with(d, x1)?;
        let mut f2 = self.loss_with(d, x2)?;
        while b - a > tol {
            if f1 <= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - INV_PHI * (b - a);
                f1 = self.loss_with(d, x1)?;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + INV_PHI * (b - a);
                f2 = self.loss_with(d, x2)?;
            }
        }
        let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
        // The optimum often sits on the capability bound.
        let f_hi = self.loss_with(d, hi)?;
        if f_hi < best.1 {
            best = (hi, f_hi);
        }
        Ok(best)
    }
}

pub fn solve_opf(
    net: &Network,
    pf: &PowerFlow,
    op: &OperatingPoint,
    k: ReserveCoefficient,
    opts: &OpfOptions,
) -> OpfResult {
    let fallback = |loss: Option<f64>, iterations: usize, reason: String| OpfResult {
        status: OpfStatus::FellBack,
        plan: SetpointPlan {
            stage: Stage::NoAction,
            k,
            ..no_action(net)
        },
        loss,
        iterations,
        reason: Some(reason),
    };

    let mut caps = Vec::with_capacity(net.devices.len());
    for (d, dev) in net.devices.iter().enumerate() {
        if !op.connected[d] {
            caps.push(0.0);
            continue;
        }
        match dev.capability.q_limit(op.device_p[d], k) {
            Ok(c) => caps.push(c),
            Err(e) => return fallback(None, 0, format!("device at bus {}: {e}", dev.bus)),
        }
    }
    let mut order: Vec<usize> = (0..net.devices.len()).collect();
    order.sort_by_key(|&d| net.devices[d].bus);

    let mut ev = Evaluator {
        net,
        pf,
        op,
        opts: &opts.power_flow,
        plan: SetpointPlan::zeros(net.devices.len(), Stage::Opf, k),
    };
    let base_loss = match ev.loss() {
        Ok(l) => l,
        Err(e) => return fallback(None, 0, e),
    };
    if caps.iter().all(|&c| c <= 0.0) {
        return OpfResult {
            status: OpfStatus::Converged,
            plan: ev.plan,
            loss: Some(base_loss),
            iterations: 0,
            reason: None,
        };
    }

    let mut loss = base_loss;
    for it in 1..=opts.max_iterations {
        let sweep_start = loss;
        for &d in &order {
            if caps[d] <= 0.0 {
                continue;
            }
            let (q, f) = match ev.line_search(d, caps[d], opts.line_tolerance) {
                Ok(best) => best,
                Err(e) => return fallback(Some(base_loss), it, e),
            };
            if f < loss {
                ev.plan.q[d] = q;
                loss = f;
            }
        }
        if sweep_start - loss <= opts.tolerance {
            return OpfResult {
                status: OpfStatus::Converged,
                plan: ev.plan,
                loss: Some(loss),
                iterations: it,
                reason: None,
            };
        }
    }
    fallback(
        Some(base_loss),
        opts.max_iterations,
        format!("no convergence within {} sweeps", opts.max_iterations),
    )
}
