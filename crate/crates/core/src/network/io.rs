use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    DemandModel, Dma, HeadlossModel, Junction, LeakParams, MeterConfig, Network, NetworkError,
    NodeRef, OperativeCycle, Pipe, PipeStatus, Reservoir, Valve, ValveStatus, DEFAULT_ORIFICE_CD,
};

pub const FORMAT_VERSION: u32 = 1;

/// On-disk JSON layout of a network file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub format: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub headloss_model: HeadlossModel,
    #[serde(default)]
    pub demand_model: DemandModel,
    #[serde(default = "default_cd")]
    pub orifice_cd: f64,
    #[serde(default)]
    pub leak_model_defaults: LeakParams,
    pub dmas: Vec<Dma>,
    pub nodes: Vec<NodeRecord>,
    pub reservoirs: Vec<ReservoirRecord>,
    pub pipes: Vec<PipeRecord>,
    #[serde(default)]
    pub valves: Vec<ValveRecord>,
    #[serde(default)]
    pub meters: MeterConfig,
    #[serde(default)]
    pub demand_cycle: OperativeCycle,
}

fn default_cd() -> f64 {
    DEFAULT_ORIFICE_CD
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: String,
    pub elevation: f64,
    #[serde(default)]
    pub demand: f64,
    #[serde(default)]
    pub dma: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emitter: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirRecord {
    pub id: String,
    #[serde(default)]
    pub elevation: f64,
    pub head: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipeRecord {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: f64,
    pub diameter: f64,
    pub roughness: f64,
    #[serde(default)]
    pub status: PipeStatus,
    #[serde(default)]
    pub dma: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leak: Option<LeakParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValveRecord {
    pub id: String,
    pub from: String,
    pub to: String,
    pub setting: f64,
    pub status: ValveStatus,
    #[serde(default = "default_valve_diameter")]
    pub diameter: f64,
    #[serde(default = "default_minor_loss")]
    pub minor_loss: f64,
}

fn default_valve_diameter() -> f64 {
    0.2
}

fn default_minor_loss() -> f64 {
    1.0
}

impl Network {
    pub fn load(path: impl AsRef<Path>) -> Result<Network, NetworkError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Network::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Network, NetworkError> {
        let file: NetworkFile = serde_json::from_str(text).map_err(|e| NetworkError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Network::from_file(file)
    }

    /// Converts and validates a parsed file, reporting every violation found.
    pub fn from_file(file: NetworkFile) -> Result<Network, NetworkError> {
        let mut problems = Vec::new();
        if file.format != FORMAT_VERSION {
            problems.push(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                file.format
            ));
        }

        let mut nodes: HashMap<String, NodeRef> = HashMap::new();
        let mut junctions = Vec::with_capacity(file.nodes.len());
        for n in &file.nodes {
            if nodes.contains_key(&n.id) {
                problems.push(format!("duplicate node id `{}`", n.id));
                continue;
            }
            let dma = match &n.dma {
                Some(d) => d.clone(),
                None => {
                    problems.push(format!("junction `{}` has no dma", n.id));
                    String::new()
                }
            };
            nodes.insert(n.id.clone(), NodeRef::Junction(junctions.len()));
            junctions.push(Junction {
                id: n.id.clone(),
                elevation: n.elevation,
                demand: n.demand,
                dma,
                emitter: n.emitter,
            });
        }
        let mut reservoirs = Vec::with_capacity(file.reservoirs.len());
        for r in &file.reservoirs {
            if nodes.contains_key(&r.id) {
                problems.push(format!("duplicate node id `{}`", r.id));
                continue;
            }
            nodes.insert(r.id.clone(), NodeRef::Reservoir(reservoirs.len()));
            reservoirs.push(Reservoir {
                id: r.id.clone(),
                elevation: r.elevation,
                head: r.head,
            });
        }

        let resolve = |id: &str, owner: &str, problems: &mut Vec<String>| match nodes.get(id) {
            Some(n) => Some(*n),
            None => {
                problems.push(format!("`{owner}` references unknown node `{id}`"));
                None
            }
        };

        let mut link_ids = HashSet::new();
        let mut pipes = Vec::with_capacity(file.pipes.len());
        for p in &file.pipes {
            if !link_ids.insert(p.id.clone()) {
                problems.push(format!("duplicate link id `{}`", p.id));
                continue;
            }
            let from = resolve(&p.from, &p.id, &mut problems);
            let to = resolve(&p.to, &p.id, &mut problems);
            let (Some(from), Some(to)) = (from, to) else { continue };
            pipes.push(Pipe {
                id: p.id.clone(),
                from,
                to,
                length: p.length,
                diameter: p.diameter,
                roughness: p.roughness,
                status: p.status,
                dma: p.dma.clone(),
                leak: p.leak.unwrap_or(file.leak_model_defaults),
                parent: p.parent.clone(),
            });
        }
        let mut valves = Vec::with_capacity(file.valves.len());
        for v in &file.valves {
            if !link_ids.insert(v.id.clone()) {
                problems.push(format!("duplicate link id `{}`", v.id));
                continue;
            }
            let from = resolve(&v.from, &v.id, &mut problems);
            let to = resolve(&v.to, &v.id, &mut problems);
            let (Some(from), Some(to)) = (from, to) else { continue };
            valves.push(Valve {
                id: v.id.clone(),
                from,
                to,
                setting: v.setting,
                status: v.status,
                diameter: v.diameter,
                minor_loss: v.minor_loss,
            });
        }

        let mut net = Network {
            name: file.name,
            headloss: file.headloss_model,
            demand_model: file.demand_model,
            orifice_cd: file.orifice_cd,
            leak_defaults: file.leak_model_defaults,
            junctions,
            reservoirs,
            pipes,
            valves,
            dmas: file.dmas,
            meters: file.meters,
            cycle: file.demand_cycle,
            nodes: HashMap::new(),
            pipe_index: HashMap::new(),
        };
        net.rebuild_index();
        problems.extend(net.validation_problems());
        if problems.is_empty() {
            Ok(net)
        } else {
            Err(NetworkError::Invalid(problems))
        }
    }

    /// Every invariant violation of the model, empty when valid.
    pub fn validation_problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut dma_ids = HashSet::new();
        for d in &self.dmas {
            if !dma_ids.insert(d.id.as_str()) {
                problems.push(format!("duplicate dma id `{}`", d.id));
            }
        }
        if self.reservoirs.is_empty() {
            problems.push("network has no reservoir".into());
        }
        let dm = self.demand_model;
        if !(dm.p_min >= 0.0 && dm.p_min < dm.p_service) {
            problems.push(format!(
                "demand model requires 0 <= p_min < p_service, got {} / {}",
                dm.p_min, dm.p_service
            ));
        }
        if !(self.orifice_cd > 0.0 && self.orifice_cd <= 1.0) {
            problems.push(format!("orifice_cd must be in (0, 1], got {}", self.orifice_cd));
        }
        if let Err(e) = self.cycle.validate() {
            problems.push(e);
        }
        for j in &self.junctions {
            if !j.elevation.is_finite() {
                problems.push(format!("junction `{}` has non-finite elevation", j.id));
            }
            if !(j.demand >= 0.0) || !j.demand.is_finite() {
                problems.push(format!("junction `{}` has negative demand {}", j.id, j.demand));
            }
            if !j.dma.is_empty() && !dma_ids.contains(j.dma.as_str()) {
                problems.push(format!("junction `{}` references unknown dma `{}`", j.id, j.dma));
            }
            if let Some(d) = j.emitter {
                if !(d >= 0.0) {
                    problems.push(format!("junction `{}` has negative emitter diameter", j.id));
                }
            }
        }
        for r in &self.reservoirs {
            if !r.elevation.is_finite() || !r.head.is_finite() {
                problems.push(format!("reservoir `{}` has non-finite elevation or head", r.id));
            }
        }
        for p in &self.pipes {
            if !(p.length > 0.0) {
                problems.push(format!("pipe `{}` must have positive length", p.id));
            }
            if !(p.diameter > 0.0) {
                problems.push(format!("pipe `{}` must have positive diameter", p.id));
            }
            if !(p.roughness > 0.0) {
                problems.push(format!("pipe `{}` must have positive roughness", p.id));
            }
            if p.from == p.to {
                problems.push(format!("pipe `{}` starts and ends at the same node", p.id));
            }
            match &p.dma {
                Some(d) if !dma_ids.contains(d.as_str()) => {
                    problems.push(format!("pipe `{}` references unknown dma `{d}`", p.id))
                }
                None if p.is_open() => {
                    problems.push(format!("open pipe `{}` has no dma", p.id))
                }
                _ => {}
            }
            let lp = p.leak;
            if !(lp.beta >= 0.0) {
                problems.push(format!("pipe `{}` leak beta must be >= 0", p.id));
            }
            if !(0.5..=2.5).contains(&lp.alpha) {
                problems.push(format!("pipe `{}` leak alpha must lie in [0.5, 2.5]", p.id));
            }
            if !(lp.m_coeff >= 0.0) {
                problems.push(format!("pipe `{}` leak m_coeff must be >= 0", p.id));
            }
        }
        for v in &self.valves {
            if !(v.setting >= 0.0) {
                problems.push(format!("valve `{}` setting must be >= 0", v.id));
            }
            if !(v.diameter > 0.0) {
                problems.push(format!("valve `{}` must have positive diameter", v.id));
            }
            if v.from == v.to {
                problems.push(format!("valve `{}` starts and ends at the same node", v.id));
            }
            if v.status == ValveStatus::Active && !matches!(v.to, NodeRef::Junction(_)) {
                problems.push(format!("active valve `{}` must discharge into a junction", v.id));
            }
        }
        for m in &self.meters.pressure {
            match self.nodes.get(&m.node) {
                Some(NodeRef::Junction(_)) => {}
                Some(NodeRef::Reservoir(_)) => {
                    problems.push(format!("pressure meter at `{}` is not a junction", m.node))
                }
                None => problems.push(format!("pressure meter at unknown node `{}`", m.node)),
            }
        }
        let mut seen = HashSet::new();
        for m in &self.meters.pressure {
            if !seen.insert(m.node.as_str()) {
                problems.push(format!("duplicate pressure meter at `{}`", m.node));
            }
        }
        for f in &self.meters.flow {
            if !self.pipe_index.contains_key(f) {
                problems.push(format!("flow meter on unknown pipe `{f}`"));
            }
        }
        if problems.is_empty() {
            for id in self.unreachable_junctions() {
                problems.push(format!("junction `{id}` is not connected to any reservoir"));
            }
        }
        problems
    }

    fn unreachable_junctions(&self) -> Vec<&str> {
        let nj = self.junctions.len();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nj];
        let mut seen = vec![false; nj];
        let mut queue = VecDeque::new();
        let mut link = |a: NodeRef, b: NodeRef, queue: &mut VecDeque<usize>| match (a, b) {
            (NodeRef::Junction(i), NodeRef::Junction(j)) => {
                adj[i].push(j);
                adj[j].push(i);
            }
            (NodeRef::Junction(i), NodeRef::Reservoir(_))
            | (NodeRef::Reservoir(_), NodeRef::Junction(i)) => queue.push_back(i),
            _ => {}
        };
        for p in self.pipes.iter().filter(|p| p.is_open()) {
            link(p.from, p.to, &mut queue);
        }
        for v in self.valves.iter().filter(|v| v.status != ValveStatus::Closed) {
            link(v.from, v.to, &mut queue);
        }
        for &i in &queue {
            seen[i] = true;
        }
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        self.junctions
            .iter()
            .zip(&seen)
            .filter(|(_, s)| !**s)
            .map(|(j, _)| j.id.as_str())
            .collect()
    }

    pub fn to_file(&self) -> NetworkFile {
        let node_id = |n: NodeRef| self.node_id(n).to_string();
        NetworkFile {
            format: FORMAT_VERSION,
            name: self.name.clone(),
            headloss_model: self.headloss,
            demand_model: self.demand_model,
            orifice_cd: self.orifice_cd,
            leak_model_defaults: self.leak_defaults,
            dmas: self.dmas.clone(),
            nodes: self
                .junctions
                .iter()
                .map(|j| NodeRecord {
                    id: j.id.clone(),
                    elevation: j.elevation,
                    demand: j.demand,
                    dma: Some(j.dma.clone()),
                    emitter: j.emitter,
                })
                .collect(),
            reservoirs: self
                .reservoirs
                .iter()
                .map(|r| ReservoirRecord {
                    id: r.id.clone(),
                    elevation: r.elevation,
                    head: r.head,
                })
                .collect(),
            pipes: self
                .pipes
                .iter()
                .map(|p| PipeRecord {
                    id: p.id.clone(),
                    from: node_id(p.from),
                    to: node_id(p.to),
                    length: p.length,
                    diameter: p.diameter,
                    roughness: p.roughness,
                    status: p.status,
                    dma: p.dma.clone(),
                    leak: (p.leak != self.leak_defaults).then_some(p.leak),
                    parent: p.parent.clone(),
                })
                .collect(),
            valves: self
                .valves
                .iter()
                .map(|v| ValveRecord {
                    id: v.id.clone(),
                    from: node_id(v.from),
                    to: node_id(v.to),
                    setting: v.setting,
                    status: v.status,
                    diameter: v.diameter,
                    minor_loss: v.minor_loss,
                })
                .collect(),
            meters: self.meters.clone(),
            demand_cycle: self.cycle.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("network serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("network serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetworkError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_pretty() + "\n").map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "format": 1,
        "dmas": [{"id": "A"}],
        "nodes": [{"id": "J1", "elevation": 0.0, "demand": 0.0, "dma": "A"}],
        "reservoirs": [{"id": "R1", "elevation": 0.0, "head": 50.0}],
        "pipes": [{"id": "P1", "from": "R1", "to": "J1", "length": 100.0,
                   "diameter": 0.2, "roughness": 130.0, "dma": "A"}]
    }"#;

    #[test]
    fn minimal_network_loads() {
        let net = Network::from_json(MINIMAL).unwrap();
        assert_eq!(net.n_pipes(), 1);
        assert_eq!(net.n_junctions(), 1);
        assert_eq!(net.n_reservoirs(), 1);
        assert_eq!(net.cycle.multipliers, vec![1.0]);
        assert_eq!(net.demand_model, DemandModel::default());
    }

    #[test]
    fn junction_without_dma_is_rejected_by_name() {
        let text = MINIMAL.replace(r#", "dma": "A"}],
        "reservoirs""#, r#"}],
        "reservoirs""#);
        match Network::from_json(&text) {
            Err(NetworkError::Invalid(v)) => {
                assert!(v.iter().any(|m| m.contains("`J1`") && m.contains("no dma")), "{v:?}")
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn all_violations_are_listed() {
        let text = MINIMAL
            .replace(r#""length": 100.0"#, r#""length": -1.0"#)
            .replace(r#""demand": 0.0"#, r#""demand": -2.0"#);
        match Network::from_json(&text) {
            Err(NetworkError::Invalid(v)) => assert!(v.len() >= 2, "{v:?}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = MINIMAL.replace(r#""id": "R1""#, r#""id": "J1""#);
        match Network::from_json(&text) {
            Err(NetworkError::Invalid(v)) => {
                assert!(v.iter().any(|m| m.contains("duplicate node id `J1`")), "{v:?}")
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_position() {
        let err = Network::from_json("{\n  \"format\": 1,\n  \"dmas\": [,]\n}").unwrap_err();
        match err {
            NetworkError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn disconnected_junction_is_invalid() {
        let text = MINIMAL.replace(r#""status""#, "").replace(
            r#""dma": "A"}]
    }"#,
            r#""dma": "A", "status": "closed"}]
    }"#,
        );
        match Network::from_json(&text) {
            Err(NetworkError::Invalid(v)) => {
                assert!(v.iter().any(|m| m.contains("not connected")), "{v:?}")
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn json_round_trip_is_stable() {
        let net = Network::from_json(MINIMAL).unwrap();
        let again = Network::from_json(&net.to_json()).unwrap();
        assert_eq!(net, again);
        assert_eq!(net.fingerprint(), again.fingerprint());
    }
}
