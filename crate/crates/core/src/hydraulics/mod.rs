//! Steady-state pressure-driven hydraulics with pipe-level diffuse leakage
//! and orifice emitters, solved by a global-gradient Newton scheme.

mod laws;
mod solver;
mod sparse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Network, NodeRef, OperativeCycle, ValveStatus};

pub use laws::{
    hazen_williams_resistance, head_loss, mean_pipe_pressure, nodal_demand, orifice_outflow,
    pipe_diffuse_leak, GRAVITY, KINEMATIC_VISCOSITY,
};
pub use solver::{solve_steady_state, solve_with_guess};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Momentum residual bound, m.
    pub head_tolerance: f64,
    /// Nodal mass residual bound, m³/s.
    pub flow_tolerance: f64,
    pub max_iterations: usize,
    /// Initial Newton step factor in (0, 1].
    pub under_relaxation: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            head_tolerance: 1e-6,
            flow_tolerance: 1e-6,
            max_iterations: 200,
            under_relaxation: 1.0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.head_tolerance > 0.0 && self.flow_tolerance > 0.0) {
            return Err(SolveError::InvalidSettings("tolerances must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(SolveError::InvalidSettings("max_iterations must be at least 1".into()));
        }
        if !(self.under_relaxation > 0.0 && self.under_relaxation <= 1.0) {
            return Err(SolveError::InvalidSettings("under_relaxation must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Runtime state of a valve after the status loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValveState {
    Active,
    Open,
    Closed,
}

impl From<ValveStatus> for ValveState {
    fn from(s: ValveStatus) -> Self {
        match s {
            ValveStatus::Active => ValveState::Active,
            ValveStatus::Open => ValveState::Open,
            ValveStatus::Closed => ValveState::Closed,
        }
    }
}

/// Solved hydraulic status of one steady state (or the mean of a cycle).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydraulicState {
    pub multiplier: f64,
    /// Per pipe, m³/s, positive from `from` to `to`; zero on closed pipes.
    pub pipe_flows: Vec<f64>,
    pub valve_flows: Vec<f64>,
    pub valve_states: Vec<ValveState>,
    /// Per junction, m.
    pub heads: Vec<f64>,
    /// Mean pipe pressure `P_k`, m, floored at zero.
    pub pipe_pressures: Vec<f64>,
    /// Diffuse leakage outflow per pipe, m³/s.
    pub pipe_leaks: Vec<f64>,
    /// Orifice outflow per junction, m³/s; zero where no emitter is attached.
    pub punctual_outflows: Vec<f64>,
    pub served_demand: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mass_residual: f64,
    pub max_momentum_residual: f64,
}

impl HydraulicState {
    pub fn pressure(&self, net: &Network, junction: usize) -> f64 {
        self.heads[junction] - net.junctions[junction].elevation
    }

    pub fn node_head(&self, net: &Network, node: NodeRef) -> f64 {
        match node {
            NodeRef::Junction(i) => self.heads[i],
            NodeRef::Reservoir(i) => net.reservoirs[i].head,
        }
    }

    pub fn total_diffuse_leak(&self) -> f64 {
        self.pipe_leaks.iter().sum()
    }

    pub fn total_punctual_outflow(&self) -> f64 {
        self.punctual_outflows.iter().sum()
    }

    /// Pressures at the given junctions, in order.
    pub fn pressures_at(&self, net: &Network, junctions: &[usize]) -> Vec<f64> {
        junctions.iter().map(|&j| self.pressure(net, j)).collect()
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("junction `{junction}` is not connected to a fixed-head node")]
    Disconnected { junction: String },
    #[error("nodal system is singular near junction `{junction}`")]
    Singular { junction: String },
    #[error(
        "no convergence after {} iterations (mass residual {:.3e} m3/s, momentum residual {:.3e} m)",
        .state.iterations, .state.max_mass_residual, .state.max_momentum_residual
    )]
    NotConverged { state: Box<HydraulicState> },
    #[error("valve statuses did not settle within {0} status iterations")]
    ValveStatusCycling(usize),
    #[error("snapshot {index} (multiplier {multiplier}) failed: {source}")]
    Snapshot {
        index: usize,
        multiplier: f64,
        #[source]
        source: Box<SolveError>,
    },
    #[error("invalid solver settings: {0}")]
    InvalidSettings(String),
    #[error("invalid operative cycle: {0}")]
    InvalidCycle(String),
}

/// Per-snapshot states of an operative cycle and their arithmetic mean.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleSolution {
    pub states: Vec<HydraulicState>,
    pub mean: HydraulicState,
}

/// Solves each snapshot of the cycle, warm-starting from the previous one.
pub fn solve_cycle(
    net: &Network,
    cycle: &OperativeCycle,
    settings: &SolverSettings,
) -> Result<CycleSolution, SolveError> {
    cycle.validate().map_err(SolveError::InvalidCycle)?;
    let mut states: Vec<HydraulicState> = Vec::with_capacity(cycle.multipliers.len());
    for (index, &multiplier) in cycle.multipliers.iter().enumerate() {
        let state = solve_with_guess(net, multiplier, settings, states.last()).map_err(|e| {
            SolveError::Snapshot {
                index,
                multiplier,
                source: Box::new(e),
            }
        })?;
        states.push(state);
    }
    let mean = mean_state(&states);
    Ok(CycleSolution { states, mean })
}

/// Arithmetic mean of a set of states over every status variable.
pub fn mean_state(states: &[HydraulicState]) -> HydraulicState {
    assert!(!states.is_empty(), "mean of no states");
    if states.len() == 1 {
        return states[0].clone();
    }
    let n = states.len() as f64;
    let avg = |get: fn(&HydraulicState) -> &Vec<f64>| -> Vec<f64> {
        let len = get(&states[0]).len();
        (0..len)
            .map(|i| states.iter().map(|s| get(s)[i]).sum::<f64>() / n)
            .collect()
    };
    HydraulicState {
        multiplier: states.iter().map(|s| s.multiplier).sum::<f64>() / n,
        pipe_flows: avg(|s| &s.pipe_flows),
        valve_flows: avg(|s| &s.valve_flows),
        valve_states: states[0].valve_states.clone(),
        heads: avg(|s| &s.heads),
        pipe_pressures: avg(|s| &s.pipe_pressures),
        pipe_leaks: avg(|s| &s.pipe_leaks),
        punctual_outflows: avg(|s| &s.punctual_outflows),
        served_demand: avg(|s| &s.served_demand),
        converged: states.iter().all(|s| s.converged),
        iterations: states.iter().map(|s| s.iterations).sum(),
        max_mass_residual: states.iter().map(|s| s.max_mass_residual).fold(0.0, f64::max),
        max_momentum_residual: states.iter().map(|s| s.max_momentum_residual).fold(0.0, f64::max),
    }
}

/// Nodal mass balance residual of every junction, recomputed from the
/// state's flows and outflows: inflow − outflow − served demand − punctual
/// outflow − half of each incident pipe's diffuse leakage.
pub fn mass_residuals(net: &Network, state: &HydraulicState) -> Vec<f64> {
    let mut r: Vec<f64> = (0..net.n_junctions())
        .map(|j| -state.served_demand[j] - state.punctual_outflows[j])
        .collect();
    let mut flow = |from: NodeRef, to: NodeRef, q: f64, leak: f64| {
        if let NodeRef::Junction(i) = from {
            r[i] -= q + 0.5 * leak;
        }
        if let NodeRef::Junction(i) = to {
            r[i] += q - 0.5 * leak;
        }
    };
    for (k, p) in net.pipes.iter().enumerate() {
        flow(p.from, p.to, state.pipe_flows[k], state.pipe_leaks[k]);
    }
    for (v, valve) in net.valves.iter().enumerate() {
        flow(valve.from, valve.to, state.valve_flows[v], 0.0);
    }
    r
}

/// Signed head-loss sum around each independent loop of open pipes
/// between junctions (one loop per chord of a spanning forest).
pub fn loop_energy_residuals(net: &Network, state: &HydraulicState) -> Vec<f64> {
    let nj = net.n_junctions();
    let mut adj: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); nj];
    for (k, p) in net.pipes.iter().enumerate() {
        if !p.is_open() {
            continue;
        }
        if let (NodeRef::Junction(a), NodeRef::Junction(b)) = (p.from, p.to) {
            let h = head_loss(net.headloss, p, state.pipe_flows[k]);
            adj[a].push((b, k, h));
            adj[b].push((a, k, -h));
        }
    }
    let mut potential = vec![f64::NAN; nj];
    let mut tree_edge = vec![false; net.n_pipes()];
    for root in 0..nj {
        if !potential[root].is_nan() {
            continue;
        }
        potential[root] = 0.0;
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for &(v, k, h) in &adj[u] {
                if potential[v].is_nan() {
                    potential[v] = potential[u] - h;
                    tree_edge[k] = true;
                    stack.push(v);
                }
            }
        }
    }
    net.pipes
        .iter()
        .enumerate()
        .filter(|(k, p)| p.is_open() && !tree_edge[*k])
        .filter_map(|(k, p)| match (p.from, p.to) {
            (NodeRef::Junction(a), NodeRef::Junction(b)) => {
                let h = head_loss(net.headloss, p, state.pipe_flows[k]);
                Some(potential[a] - potential[b] - h)
            }
            _ => None,
        })
        .collect()
}
