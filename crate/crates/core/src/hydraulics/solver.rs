use std::collections::VecDeque;

use super::laws::{
    mean_pipe_pressure, nodal_demand_with_slope, orifice_outflow_with_slope,
    pipe_diffuse_leak_with_slope, pipe_head_loss, valve_head_loss,
};
use super::sparse::Skyline;
use super::{HydraulicState, SolveError, SolverSettings, ValveState};
use crate::network::{Network, NodeRef};

/// Smallest link gradient dh/dQ admitted in the Jacobian, s/m².
const MIN_GRADIENT: f64 = 1e-6;
const MAX_STATUS_ITERATIONS: usize = 10;
const MAX_STEP_HALVINGS: usize = 6;

/// Solves the network at a single demand multiplier from a cold start.
pub fn solve_steady_state(
    net: &Network,
    multiplier: f64,
    settings: &SolverSettings,
) -> Result<HydraulicState, SolveError> {
    solve_with_guess(net, multiplier, settings, None)
}

/// Solves the network starting from a previous state. The guess may cover a
/// prefix of the junctions and pipes (e.g. a baseline solved before a leak
/// node was appended); the remainder is initialised locally.
pub fn solve_with_guess(
    net: &Network,
    multiplier: f64,
    settings: &SolverSettings,
    guess: Option<&HydraulicState>,
) -> Result<HydraulicState, SolveError> {
    settings.validate()?;
    if !(multiplier >= 0.0) || !multiplier.is_finite() {
        return Err(SolveError::InvalidSettings(format!(
            "demand multiplier must be non-negative, got {multiplier}"
        )));
    }
    let mut statuses: Vec<ValveState> = net.valves.iter().map(|v| v.status.into()).collect();
    if let Some(g) = guess {
        for (s, (gs, v)) in statuses.iter_mut().zip(g.valve_states.iter().zip(&net.valves)) {
            if v.status == crate::network::ValveStatus::Active {
                *s = *gs;
            }
        }
    }
    let (mut heads, mut pipe_q, mut valve_q) = initial_values(net, guess);
    let mut total_iterations = 0;
    for _ in 0..MAX_STATUS_ITERATIONS {
        let mut sys = System::new(net, multiplier, &statuses)?;
        for (v, s) in statuses.iter().enumerate() {
            if *s == ValveState::Active {
                heads[junction_of(net.valves[v].to)] = sys.pinned_head(v);
            }
        }
        let mut q: Vec<f64> = sys
            .links
            .iter()
            .map(|l| match l.kind {
                LinkKind::Pipe(k) => pipe_q[k],
                LinkKind::Valve(v) => valve_q[v],
            })
            .collect();
        let budget = settings.max_iterations.saturating_sub(total_iterations).max(1);
        let outcome = sys.newton(&mut q, &mut heads, settings, budget)?;
        total_iterations += outcome.iterations;
        for (l, link) in sys.links.iter().enumerate() {
            match link.kind {
                LinkKind::Pipe(k) => pipe_q[k] = q[l],
                LinkKind::Valve(v) => valve_q[v] = q[l],
            }
        }
        for (v, flow) in sys.active_valve_flows(&q, &heads) {
            valve_q[v] = flow;
        }
        for (v, s) in statuses.iter().enumerate() {
            if *s == ValveState::Closed {
                valve_q[v] = 0.0;
            }
        }
        let mut state = sys.build_state(&q, &heads, &valve_q, total_iterations, &outcome);
        if !outcome.converged {
            state.converged = false;
            return Err(SolveError::NotConverged { state: Box::new(state) });
        }
        let next = next_statuses(net, &statuses, &state, settings);
        if next == statuses {
            return Ok(state);
        }
        statuses = next;
    }
    Err(SolveError::ValveStatusCycling(MAX_STATUS_ITERATIONS))
}

fn junction_of(node: NodeRef) -> usize {
    match node {
        NodeRef::Junction(j) => j,
        NodeRef::Reservoir(_) => unreachable!("active valves discharge into junctions"),
    }
}

fn initial_values(net: &Network, guess: Option<&HydraulicState>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let top = net
        .reservoirs
        .iter()
        .map(|r| r.head)
        .fold(f64::NEG_INFINITY, f64::max);
    let default_q = |d: f64| std::f64::consts::PI * d * d / 4.0 * 0.3;
    let mut heads = vec![top; net.n_junctions()];
    let mut pipe_q: Vec<f64> = net.pipes.iter().map(|p| default_q(p.diameter)).collect();
    let mut valve_q: Vec<f64> = net.valves.iter().map(|v| default_q(v.diameter)).collect();
    if let Some(g) = guess {
        let nh = g.heads.len().min(heads.len());
        heads[..nh].copy_from_slice(&g.heads[..nh]);
        let nq = g.pipe_flows.len().min(pipe_q.len());
        pipe_q[..nq].copy_from_slice(&g.pipe_flows[..nq]);
        let nv = g.valve_flows.len().min(valve_q.len());
        valve_q[..nv].copy_from_slice(&g.valve_flows[..nv]);
        // Nodes and pipes beyond the guess: a split pipe's second half
        // carries the flow of its first half, a new node sits between its
        // neighbours.
        for k in nq..net.n_pipes() {
            let p = &net.pipes[k];
            if let Some(parent) = &p.parent {
                if let Some(a) = net.pipe_index(&format!("{parent}#a")) {
                    pipe_q[k] = pipe_q[a];
                }
            }
        }
        for j in nh..net.n_junctions() {
            let mut sum = 0.0;
            let mut n = 0.0;
            for p in &net.pipes {
                let other = if p.from == NodeRef::Junction(j) {
                    p.to
                } else if p.to == NodeRef::Junction(j) {
                    p.from
                } else {
                    continue;
                };
                sum += match other {
                    NodeRef::Junction(i) if i < nh => heads[i],
                    NodeRef::Reservoir(i) => net.reservoirs[i].head,
                    _ => continue,
                };
                n += 1.0;
            }
            if n > 0.0 {
                heads[j] = sum / n;
            }
        }
    }
    (heads, pipe_q, valve_q)
}

fn next_statuses(
    net: &Network,
    current: &[ValveState],
    state: &HydraulicState,
    settings: &SolverSettings,
) -> Vec<ValveState> {
    let htol = settings.head_tolerance;
    let qtol = settings.flow_tolerance;
    current
        .iter()
        .enumerate()
        .map(|(v, &s)| {
            let valve = &net.valves[v];
            if valve.status != crate::network::ValveStatus::Active {
                return s;
            }
            let up = state.node_head(net, valve.from);
            let down = state.node_head(net, valve.to);
            let set = net.elevation(valve.to) + valve.setting;
            let q = state.valve_flows[v];
            match s {
                ValveState::Active if q < -qtol => ValveState::Closed,
                ValveState::Active if up < set - htol => ValveState::Open,
                ValveState::Open if q < -qtol => ValveState::Closed,
                ValveState::Open if down > set + htol => ValveState::Active,
                ValveState::Closed if up >= set => ValveState::Active,
                ValveState::Closed if up > down + htol => ValveState::Open,
                other => other,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum LinkKind {
    Pipe(usize),
    Valve(usize),
}

#[derive(Debug, Clone, Copy)]
enum End {
    /// Junction with unknown head: (junction, unknown index).
    Free(usize, usize),
    /// Junction pinned by an active valve.
    Pinned(usize),
    Reservoir(usize),
}

#[derive(Debug, Clone, Copy)]
struct Link {
    kind: LinkKind,
    from: End,
    to: End,
}

struct NewtonOutcome {
    iterations: usize,
    converged: bool,
    max_mass: f64,
    max_momentum: f64,
}

/// Newton system for a fixed set of valve statuses.
struct System<'a> {
    net: &'a Network,
    multiplier: f64,
    links: Vec<Link>,
    /// Unknown index of each junction, `None` when pinned.
    unknown: Vec<Option<usize>>,
    free_junctions: Vec<usize>,
    /// Active valves as `(valve, upstream end, pinned junction)`.
    active: Vec<(usize, End, usize)>,
    pinned_heads: Vec<Option<f64>>,
    skyline: Skyline,
}

struct Evaluation {
    f1: Vec<f64>,
    f2: Vec<f64>,
    gradient: Vec<f64>,
    merit: f64,
    max_mass: f64,
    max_momentum: f64,
}

impl<'a> System<'a> {
    fn new(net: &'a Network, multiplier: f64, statuses: &[ValveState]) -> Result<Self, SolveError> {
        let nj = net.n_junctions();
        let mut pinned_heads = vec![None; nj];
        let mut active = Vec::new();
        for (v, s) in statuses.iter().enumerate() {
            if *s == ValveState::Active {
                let valve = &net.valves[v];
                let w = junction_of(valve.to);
                pinned_heads[w] = Some(net.junctions[w].elevation + valve.setting);
            }
        }
        let mut unknown = vec![None; nj];
        let mut free_junctions = Vec::with_capacity(nj);
        for j in 0..nj {
            if pinned_heads[j].is_none() {
                unknown[j] = Some(free_junctions.len());
                free_junctions.push(j);
            }
        }
        let end = |n: NodeRef| match n {
            NodeRef::Reservoir(r) => End::Reservoir(r),
            NodeRef::Junction(j) => match unknown[j] {
                Some(u) => End::Free(j, u),
                None => End::Pinned(j),
            },
        };
        let mut links = Vec::with_capacity(net.n_pipes() + net.valves.len());
        for (k, p) in net.pipes.iter().enumerate() {
            if p.is_open() {
                links.push(Link {
                    kind: LinkKind::Pipe(k),
                    from: end(p.from),
                    to: end(p.to),
                });
            }
        }
        for (v, valve) in net.valves.iter().enumerate() {
            match statuses[v] {
                ValveState::Open => links.push(Link {
                    kind: LinkKind::Valve(v),
                    from: end(valve.from),
                    to: end(valve.to),
                }),
                ValveState::Active => active.push((v, end(valve.from), junction_of(valve.to))),
                ValveState::Closed => {}
            }
        }

        let nu = free_junctions.len();
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); nu];
        let mut reached = vec![false; nu];
        let mut queue = VecDeque::new();
        for l in &links {
            match (l.from, l.to) {
                (End::Free(_, a), End::Free(_, b)) => {
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                }
                (End::Free(_, a), _) | (_, End::Free(_, a)) => {
                    if !reached[a] {
                        reached[a] = true;
                        queue.push_back(a);
                    }
                }
                _ => {}
            }
        }
        for nbrs in adjacency.iter_mut() {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        while let Some(a) = queue.pop_front() {
            for &b in &adjacency[a] {
                if !reached[b] {
                    reached[b] = true;
                    queue.push_back(b);
                }
            }
        }
        if let Some(u) = reached.iter().position(|r| !r) {
            return Err(SolveError::Disconnected {
                junction: net.junctions[free_junctions[u]].id.clone(),
            });
        }
        let skyline = Skyline::new(&adjacency);
        Ok(System {
            net,
            multiplier,
            links,
            unknown,
            free_junctions,
            active,
            pinned_heads,
            skyline,
        })
    }

    fn pinned_head(&self, valve: usize) -> f64 {
        let w = junction_of(self.net.valves[valve].to);
        self.pinned_heads[w].expect("active valve pins its downstream node")
    }

    fn head(&self, end: End, heads: &[f64]) -> f64 {
        match end {
            End::Free(j, _) | End::Pinned(j) => heads[j],
            End::Reservoir(r) => self.net.reservoirs[r].head,
        }
    }

    fn node_pressure(&self, node: NodeRef, heads: &[f64]) -> f64 {
        match node {
            NodeRef::Junction(j) => heads[j] - self.net.junctions[j].elevation,
            NodeRef::Reservoir(r) => self.net.reservoirs[r].head - self.net.reservoirs[r].elevation,
        }
    }

    /// Net outflow demanded at every junction (served demand, emitter and
    /// half of each incident pipe's diffuse leakage), with the Jacobian of
    /// those outflows with respect to the unknown heads when requested.
    fn outflows(&self, heads: &[f64], mut jac: Option<&mut Skyline>) -> Vec<f64> {
        let net = self.net;
        let mut d = vec![0.0; net.n_junctions()];
        for (j, junction) in net.junctions.iter().enumerate() {
            let p = heads[j] - junction.elevation;
            let (served, ds) =
                nodal_demand_with_slope(p, junction.demand * self.multiplier, net.demand_model);
            let (orifice, de) = match junction.emitter {
                Some(diam) => orifice_outflow_with_slope(diam, p, net.orifice_cd),
                None => (0.0, 0.0),
            };
            d[j] = served + orifice;
            if let (Some(m), Some(u)) = (jac.as_deref_mut(), self.unknown[j]) {
                m.add(u, u, ds + de);
            }
        }
        for link in &self.links {
            let LinkKind::Pipe(k) = link.kind else { continue };
            let pipe = &net.pipes[k];
            let pm = mean_pipe_pressure(
                self.node_pressure(pipe.from, heads),
                self.node_pressure(pipe.to, heads),
            );
            let (leak, slope) = pipe_diffuse_leak_with_slope(&pipe.leak, pipe.length, pm);
            if leak == 0.0 && slope == 0.0 {
                continue;
            }
            for end in [link.from, link.to] {
                if let End::Free(j, _) | End::Pinned(j) = end {
                    d[j] += 0.5 * leak;
                }
            }
            if let Some(m) = jac.as_deref_mut() {
                let c = 0.25 * slope;
                let a = if let End::Free(_, u) = link.from { Some(u) } else { None };
                let b = if let End::Free(_, u) = link.to { Some(u) } else { None };
                if let Some(a) = a {
                    m.add(a, a, c);
                }
                if let Some(b) = b {
                    m.add(b, b, c);
                }
                if let (Some(a), Some(b)) = (a, b) {
                    m.add(a, b, c);
                }
            }
        }
        d
    }

    /// Flow through each active valve, from the mass balance of its pinned
    /// downstream junction.
    fn active_valve_flows(&self, q: &[f64], heads: &[f64]) -> Vec<(usize, f64)> {
        if self.active.is_empty() {
            return Vec::new();
        }
        let d = self.outflows(heads, None);
        self.pinned_balance(q, &d)
    }

    fn pinned_balance(&self, q: &[f64], d: &[f64]) -> Vec<(usize, f64)> {
        let mut need = vec![0.0; self.net.n_junctions()];
        for (j, h) in self.pinned_heads.iter().enumerate() {
            if h.is_some() {
                need[j] = d[j];
            }
        }
        for (l, link) in self.links.iter().enumerate() {
            if let End::Pinned(j) = link.from {
                need[j] += q[l];
            }
            if let End::Pinned(j) = link.to {
                need[j] -= q[l];
            }
        }
        self.active.iter().map(|&(v, _, w)| (v, need[w])).collect()
    }

    fn link_loss(&self, kind: LinkKind, q: f64) -> (f64, f64) {
        match kind {
            LinkKind::Pipe(k) => {
                let p = &self.net.pipes[k];
                pipe_head_loss(self.net.headloss, p.length, p.diameter, p.roughness, q)
            }
            LinkKind::Valve(v) => {
                let valve = &self.net.valves[v];
                valve_head_loss(valve.diameter, valve.minor_loss, q)
            }
        }
    }

    fn evaluate(&mut self, q: &[f64], heads: &[f64], settings: &SolverSettings, jacobian: bool) -> Evaluation {
        let mut sky = if jacobian {
            self.skyline.clear();
            Some(std::mem::take(&mut self.skyline))
        } else {
            None
        };
        let d = self.outflows(heads, sky.as_mut());
        let nu = self.free_junctions.len();
        let mut f2: Vec<f64> = self.free_junctions.iter().map(|&j| -d[j]).collect();
        let mut f1 = Vec::with_capacity(self.links.len());
        let mut gradient = Vec::with_capacity(self.links.len());
        for (l, link) in self.links.iter().enumerate() {
            let (h, g) = self.link_loss(link.kind, q[l]);
            f1.push(h + self.head(link.to, heads) - self.head(link.from, heads));
            gradient.push(g.max(MIN_GRADIENT));
            if let End::Free(_, u) = link.from {
                f2[u] -= q[l];
            }
            if let End::Free(_, u) = link.to {
                f2[u] += q[l];
            }
        }
        let valve_flows = self.pinned_balance(q, &d);
        for (&(_, up, _), &(_, qv)) in self.active.iter().zip(&valve_flows) {
            if let End::Free(_, u) = up {
                f2[u] -= qv;
            }
        }
        let max_momentum = f1.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let max_mass = f2.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let merit = f1.iter().map(|v| (v / settings.head_tolerance).powi(2)).sum::<f64>()
            + f2.iter().map(|v| (v / settings.flow_tolerance).powi(2)).sum::<f64>();
        if let Some(sky) = sky {
            self.skyline = sky;
        }
        debug_assert_eq!(f2.len(), nu);
        Evaluation {
            f1,
            f2,
            gradient,
            merit,
            max_mass,
            max_momentum,
        }
    }

    fn newton(
        &mut self,
        q: &mut Vec<f64>,
        heads: &mut [f64],
        settings: &SolverSettings,
        budget: usize,
    ) -> Result<NewtonOutcome, SolveError> {
        let mut eval = self.evaluate(q, heads, settings, true);
        let mut last_step = f64::INFINITY;
        let mut iterations = 0;
        loop {
            if eval.max_momentum <= settings.head_tolerance
                && eval.max_mass <= settings.flow_tolerance
                && last_step <= settings.head_tolerance
            {
                return Ok(NewtonOutcome {
                    iterations,
                    converged: true,
                    max_mass: eval.max_mass,
                    max_momentum: eval.max_momentum,
                });
            }
            if iterations >= budget {
                return Ok(NewtonOutcome {
                    iterations,
                    converged: false,
                    max_mass: eval.max_mass,
                    max_momentum: eval.max_momentum,
                });
            }
            iterations += 1;

            // Schur complement on heads: (A21 G⁻¹ A12 + ∂d/∂H) dH = F2 − A21 G⁻¹ F1
            let mut rhs = eval.f2.clone();
            for (l, link) in self.links.iter().enumerate() {
                let c = 1.0 / eval.gradient[l];
                let a = if let End::Free(_, u) = link.from { Some(u) } else { None };
                let b = if let End::Free(_, u) = link.to { Some(u) } else { None };
                let y = eval.f1[l] * c;
                if let Some(a) = a {
                    self.skyline.add(a, a, c);
                    rhs[a] += y;
                }
                if let Some(b) = b {
                    self.skyline.add(b, b, c);
                    rhs[b] -= y;
                }
                if let (Some(a), Some(b)) = (a, b) {
                    self.skyline.add(a, b, -c);
                }
            }
            if let Err(e) = self.skyline.factor() {
                return Err(SolveError::Singular {
                    junction: self.net.junctions[self.free_junctions[e.row]].id.clone(),
                });
            }
            let dh = if rhs.is_empty() { Vec::new() } else { self.skyline.solve(&rhs) };
            let dq: Vec<f64> = self
                .links
                .iter()
                .enumerate()
                .map(|(l, link)| {
                    let dh_to = if let End::Free(_, u) = link.to { dh[u] } else { 0.0 };
                    let dh_from = if let End::Free(_, u) = link.from { dh[u] } else { 0.0 };
                    (-eval.f1[l] - (dh_to - dh_from)) / eval.gradient[l]
                })
                .collect();

            let q0 = q.clone();
            let h0: Vec<f64> = heads.to_vec();
            let mut lambda = settings.under_relaxation;
            let mut halvings = 0;
            loop {
                for l in 0..q.len() {
                    q[l] = q0[l] + lambda * dq[l];
                }
                for (u, &j) in self.free_junctions.iter().enumerate() {
                    heads[j] = h0[j] + lambda * dh[u];
                }
                let trial = self.evaluate(q, heads, settings, true);
                if trial.merit <= eval.merit {
                    eval = trial;
                    break;
                }
                if halvings >= MAX_STEP_HALVINGS {
                    // No shorter step helps either: the merit is rising
                    // because the residual is moving between the two
                    // equation blocks, not because Newton overshot. A
                    // crawl of tiny steps costs dozens of iterations
                    // where the full step converges in a handful.
                    lambda = settings.under_relaxation;
                    for l in 0..q.len() {
                        q[l] = q0[l] + lambda * dq[l];
                    }
                    for (u, &j) in self.free_junctions.iter().enumerate() {
                        heads[j] = h0[j] + lambda * dh[u];
                    }
                    eval = self.evaluate(q, heads, settings, true);
                    break;
                }
                lambda *= 0.5;
                halvings += 1;
            }
            last_step = dh.iter().fold(0.0_f64, |m, v| m.max((lambda * v).abs()));
        }
    }

    fn build_state(
        &self,
        q: &[f64],
        heads: &[f64],
        valve_q: &[f64],
        iterations: usize,
        outcome: &NewtonOutcome,
    ) -> HydraulicState {
        let net = self.net;
        let mut pipe_flows = vec![0.0; net.n_pipes()];
        for (l, link) in self.links.iter().enumerate() {
            if let LinkKind::Pipe(k) = link.kind {
                pipe_flows[k] = q[l];
            }
        }
        let mut pipe_pressures = Vec::with_capacity(net.n_pipes());
        let mut pipe_leaks = Vec::with_capacity(net.n_pipes());
        for p in &net.pipes {
            let pm = mean_pipe_pressure(
                self.node_pressure(p.from, heads),
                self.node_pressure(p.to, heads),
            );
            pipe_pressures.push(pm);
            pipe_leaks.push(if p.is_open() {
                pipe_diffuse_leak_with_slope(&p.leak, p.length, pm).0
            } else {
                0.0
            });
        }
        let mut served_demand = Vec::with_capacity(net.n_junctions());
        let mut punctual_outflows = Vec::with_capacity(net.n_junctions());
        for (j, junction) in net.junctions.iter().enumerate() {
            let p = heads[j] - junction.elevation;
            served_demand.push(
                nodal_demand_with_slope(p, junction.demand * self.multiplier, net.demand_model).0,
            );
            punctual_outflows.push(match junction.emitter {
                Some(d) => orifice_outflow_with_slope(d, p, net.orifice_cd).0,
                None => 0.0,
            });
        }
        let mut valve_states = vec![ValveState::Closed; net.valves.len()];
        for link in &self.links {
            if let LinkKind::Valve(v) = link.kind {
                valve_states[v] = ValveState::Open;
            }
        }
        for &(v, _, _) in &self.active {
            valve_states[v] = ValveState::Active;
        }
        HydraulicState {
            multiplier: self.multiplier,
            pipe_flows,
            valve_flows: valve_q.to_vec(),
            valve_states,
            heads: heads.to_vec(),
            pipe_pressures,
            pipe_leaks,
            punctual_outflows,
            served_demand,
            converged: outcome.converged,
            iterations,
            max_mass_residual: outcome.max_mass,
            max_momentum_residual: outcome.max_momentum,
        }
    }
}
