//! Backward/forward sweep power flow for radial feeders.
//!
//! Current summation: node currents are evaluated at the present voltage
//! estimate, accumulated towards the root, and voltages are then updated
//! from the slack outwards. Iteration stops once the power mismatch at every
//! bus, evaluated with the final voltages and branch currents, is below the
//! tolerance. Devices are plain PQ injections.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::netmodel::{orient_radial, Network, RadialTree, TopologyError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerFlowError {
    #[error("power flow did not converge in {iterations} iterations (mismatch {mismatch:.3e} p.u.)")]
    NonConvergence { iterations: usize, mismatch: f64 },
    #[error("injection set has {got} entries, network has {expected} buses")]
    Shape { expected: usize, got: usize },
    #[error("non-finite injection at bus index {0}")]
    NonFinite(usize),
    #[error("losses requested from a non-converged solution")]
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

/// Net injection (generation minus load) per bus, p.u., indexed like
/// `Network::buses`.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSet {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl InjectionSet {
    pub fn zeros(n: usize) -> Self {
        InjectionSet {
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    /// Loads only, no generation.
    pub fn from_loads(net: &Network) -> Self {
        InjectionSet {
            p: net.buses.iter().map(|b| -b.load_p).collect(),
            q: net.buses.iter().map(|b| -b.load_q).collect(),
        }
    }

    pub fn add(&mut self, bus: usize, p: f64, q: f64) {
        self.p[bus] += p;
        self.q[bus] += q;
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Power entering a branch at each of its terminals, oriented like the
/// branch record (`from_bus` / `to_bus`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchFlow {
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
    /// Current magnitude, p.u.
    pub current: f64,
}

impl BranchFlow {
    pub fn loss(&self) -> f64 {
        self.p_from + self.p_to
    }

    pub fn apparent(&self) -> f64 {
        self.p_from.hypot(self.q_from).max(self.p_to.hypot(self.q_to))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerFlowSolution {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    pub flows: Vec<BranchFlow>,
    pub total_loss: f64,
    pub slack_p: f64,
    pub slack_q: f64,
    pub iterations: usize,
    pub mismatch: f64,
    pub converged: bool,
    #[serde(skip)]
    branch_r: Vec<f64>,
}

impl PowerFlowSolution {
    /// Loss recomputed as the sum of `|I|^2 r` over branches.
    pub fn i2r_losses(&self) -> f64 {
        self.flows
            .iter()
            .zip(&self.branch_r)
            .map(|(f, r)| f.current * f.current * r)
            .sum()
    }

    pub fn min_voltage(&self) -> (usize, f64) {
        self.vm
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc })
    }

    /// Reactive power entering bus `bus` through branch `branch`.
    pub fn q_into(&self, net: &Network, branch: usize, bus: usize) -> f64 {
        let br = &net.branches[branch];
        let f = &self.flows[branch];
        if net.bus_index(br.from_bus) == Some(bus) {
            -f.q_from
        } else {
            -f.q_to
        }
    }
}

/// Total active loss, as the sum over branches of the power entering at
/// both terminals.
pub fn total_losses(sol: &PowerFlowSolution) -> Result<f64, PowerFlowError> {
    if !sol.converged {
        return Err(PowerFlowError::NotConverged);
    }
    Ok(sol.flows.iter().map(BranchFlow::loss).sum())
}

/// Solver bound to one feeder. Immutable and cheap to share across threads.
#[derive(Debug, Clone)]
pub struct PowerFlow {
    tree: RadialTree,
    /// Impedance of the branch feeding each bus (zero at the root).
    z_up: Vec<Complex64>,
    /// Whether the branch feeding each bus is recorded child -> parent.
    reversed: Vec<bool>,
    branch_r: Vec<f64>,
    n_branches: usize,
}

impl PowerFlow {
    pub fn new(net: &Network) -> Result<Self, TopologyError> {
        let tree = orient_radial(net)?;
        Ok(Self::with_tree(net, tree))
    }

    pub fn with_tree(net: &Network, tree: RadialTree) -> Self {
        let n = net.buses.len();
        let mut z_up = vec![Complex64::new(0.0, 0.0); n];
        let mut reversed = vec![false; n];
        for bus in 0..n {
            if let Some(k) = tree.parent_branch[bus] {
                let br = &net.branches[k];
                z_up[bus] = Complex64::new(br.r, br.x);
                reversed[bus] = net.bus_index(br.from_bus) == Some(bus);
            }
        }
        PowerFlow {
            tree,
            z_up,
            reversed,
            branch_r: net.branches.iter().map(|b| b.r).collect(),
            n_branches: net.branches.len(),
        }
    }

    pub fn tree(&self) -> &RadialTree {
        &self.tree
    }

    /// Series impedance of the branch feeding each bus, zero at the root.
    pub fn upstream_impedance(&self) -> &[Complex64] {
        &self.z_up
    }

    pub fn bus_count(&self) -> usize {
        self.z_up.len()
    }

    pub fn solve(
        &self,
        inj: &InjectionSet,
        opts: &SolveOptions,
    ) -> Result<PowerFlowSolution, PowerFlowError> {
        let n = self.bus_count();
        if inj.p.len() != n || inj.q.len() != n {
            return Err(PowerFlowError::Shape {
                expected: n,
                got: inj.p.len().min(inj.q.len()),
            });
        }
        if let Some(i) = (0..n).find(|&i| !inj.p[i].is_finite() || !inj.q[i].is_finite()) {
            return Err(PowerFlowError::NonFinite(i));
        }
        // Power drawn from the network at each bus.
        let draw: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(-inj.p[i], -inj.q[i]))
            .collect();
        let root = self.tree.root;
        let one = Complex64::new(1.0, 0.0);
        let mut v = vec![one; n];
        let mut node_i = vec![Complex64::new(0.0, 0.0); n];
        let mut branch_i = vec![Complex64::new(0.0, 0.0); n];
        let mut mismatch = f64::INFINITY;

        for it in 1..=opts.max_iterations {
            for i in 0..n {
                node_i[i] = (draw[i] / v[i]).conj();
            }
            for &bus in self.tree.order.iter().rev() {
                let mut acc = node_i[bus];
                for &c in &self.tree.children[bus] {
                    acc += branch_i[c];
                }
                branch_i[bus] = acc;
            }
            v[root] = one;
            for &bus in self.tree.order.iter().skip(1) {
                let p = self.tree.parent[bus].expect("non-root has parent");
                v[bus] = v[p] - self.z_up[bus] * branch_i[bus];
            }
            mismatch = (0..n)
                .filter(|&i| i != root)
                .map(|i| (v[i] * node_i[i].conj() - draw[i]).norm())
                .fold(0.0, f64::max);
            if !mismatch.is_finite() {
                return Err(PowerFlowError::NonConvergence {
                    iterations: it,
                    mismatch,
                });
            }
            if mismatch <= opts.tolerance {
                return Ok(self.assemble(&v, &branch_i, draw[root], it, mismatch));
            }
        }
        Err(PowerFlowError::NonConvergence {
            iterations: opts.max_iterations,
            mismatch,
        })
    }

    fn assemble(
        &self,
        v: &[Complex64],
        branch_i: &[Complex64],
        root_draw: Complex64,
        iterations: usize,
        mismatch: f64,
    ) -> PowerFlowSolution {
        let zero = BranchFlow {
            p_from: 0.0,
            q_from: 0.0,
            p_to: 0.0,
            q_to: 0.0,
            current: 0.0,
        };
        let mut flows = vec![zero; self.n_branches];
        for (bus, k) in self.tree.parent_branch.iter().enumerate() {
            let Some(k) = *k else { continue };
            let p = self.tree.parent[bus].expect("non-root has parent");
            let i = branch_i[bus];
            let s_parent = v[p] * i.conj();
            let s_child = -(v[bus] * i.conj());
            let (s_from, s_to) = if self.reversed[bus] {
                (s_child, s_parent)
            } else {
                (s_parent, s_child)
            };
            flows[k] = BranchFlow {
                p_from: s_from.re,
                q_from: s_from.im,
                p_to: s_to.re,
                q_to: s_to.im,
                current: i.norm(),
            };
        }
        let root = self.tree.root;
        let mut out_of_root = Complex64::new(0.0, 0.0);
        for &c in &self.tree.children[root] {
            out_of_root += branch_i[c];
        }
        let s_root = v[root] * out_of_root.conj() + root_draw;
        let total_loss = flows.iter().map(BranchFlow::loss).sum();
        PowerFlowSolution {
            vm: v.iter().map(|x| x.norm()).collect(),
            va: v.iter().map(|x| x.arg()).collect(),
            flows,
            total_loss,
            slack_p: s_root.re,
            slack_q: s_root.im,
            iterations,
            mismatch,
            converged: true,
            branch_r: self.branch_r.clone(),
        }
    }
}
