//! Network data model: junctions, reservoirs, pipes, valves, DMA partition and
//! pressure/flow meter layout.
//!
//! A [`Network`] is immutable once loaded. Topology edits such as
//! [`Network::insert_midpoint_leak`] return a modified copy, so a single
//! network can be shared across any number of concurrent scenario workers.

mod io;
mod topology;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{NetworkFile, NodeRecord, PipeRecord, ReservoirRecord, ValveRecord, FORMAT_VERSION};
pub use topology::{DmaSubnetwork, Incidence};

/// Default sharp-edged orifice discharge coefficient.
pub const DEFAULT_ORIFICE_CD: f64 = 0.6;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("network validation failed:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error("unknown pipe `{0}`")]
    UnknownPipe(String),
    #[error("pipe `{0}` is closed")]
    ClosedPipe(String),
    #[error("unknown DMA `{0}`")]
    UnknownDma(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` is not a midpoint leak node")]
    NotALeakNode(String),
    #[error("invalid orifice diameter {0} m")]
    InvalidOrifice(f64),
}

/// Diffuse leakage law applied along a pipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeakModel {
    Power,
    Favad,
}

/// Per-pipe deterioration parameters of the diffuse leakage law.
///
/// `beta` is the outflow per metre of pipe per unit pressure term; `alpha` is
/// the POWER exponent and `m_coeff` the FAVAD pressure-enlargement coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakParams {
    pub model: LeakModel,
    pub beta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub m_coeff: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl Default for LeakParams {
    fn default() -> Self {
        Self {
            model: LeakModel::Power,
            beta: 0.0,
            alpha: 1.0,
            m_coeff: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum HeadlossModel {
    #[default]
    #[serde(rename = "hazen-williams")]
    HazenWilliams,
    #[serde(rename = "darcy-weisbach")]
    DarcyWeisbach,
}

/// Pressure-driven demand bounds (Wagner form).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    pub p_min: f64,
    pub p_service: f64,
}

impl Default for DemandModel {
    fn default() -> Self {
        Self {
            p_min: 0.0,
            p_service: 20.0,
        }
    }
}

/// Operative cycle: `N` steady states of duration `dt` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperativeCycle {
    pub dt: f64,
    pub multipliers: Vec<f64>,
}

impl Default for OperativeCycle {
    fn default() -> Self {
        Self {
            dt: 86_400.0,
            multipliers: vec![1.0],
        }
    }
}

impl OperativeCycle {
    pub fn validate(&self) -> Result<(), String> {
        if self.multipliers.is_empty() {
            return Err("demand cycle needs at least one multiplier".into());
        }
        if !(self.dt > 0.0) {
            return Err(format!("demand cycle dt must be positive, got {}", self.dt));
        }
        if let Some(m) = self.multipliers.iter().find(|m| !(**m > 0.0) || !m.is_finite()) {
            return Err(format!("demand multipliers must be positive, got {m}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeRef {
    Junction(usize),
    Reservoir(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub id: String,
    pub elevation: f64,
    /// Base required demand in m³/s, scaled by the cycle multiplier.
    pub demand: f64,
    pub dma: String,
    /// Orifice diameter (m) of a punctual leak emitter at this node.
    pub emitter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    pub id: String,
    pub elevation: f64,
    pub head: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PipeStatus {
    #[default]
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipe {
    pub id: String,
    pub from: NodeRef,
    pub to: NodeRef,
    pub length: f64,
    pub diameter: f64,
    /// Hazen-Williams C, or absolute roughness in mm for Darcy-Weisbach.
    pub roughness: f64,
    pub status: PipeStatus,
    /// `None` only for closed boundary gates.
    pub dma: Option<String>,
    pub leak: LeakParams,
    /// Id of the original pipe when this is one half of a split pipe.
    pub parent: Option<String>,
}

impl Pipe {
    pub fn is_open(&self) -> bool {
        self.status == PipeStatus::Open
    }

    /// Id of the pipe as it appears in the unsplit network.
    pub fn original_id(&self) -> &str {
        self.parent.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValveStatus {
    /// Pressure reducing: pins the downstream pressure when it would exceed the setting.
    Active,
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Valve {
    pub id: String,
    pub from: NodeRef,
    pub to: NodeRef,
    /// Target downstream pressure, m.
    pub setting: f64,
    pub status: ValveStatus,
    pub diameter: f64,
    /// Minor loss coefficient used while the valve is fully open.
    pub minor_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dma {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MeterTag {
    #[default]
    Boundary,
    Internal,
    Peripheral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureMeter {
    pub node: String,
    #[serde(default)]
    pub tag: MeterTag,
}

/// Pressure and flow meter layout. The order of `pressure` fixes the layout
/// of every pressure-delta vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MeterConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub pressure: Vec<PressureMeter>,
    #[serde(default)]
    pub flow: Vec<String>,
}

impl MeterConfig {
    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.pressure.iter().map(|m| m.node.as_str())
    }

    pub fn len(&self) -> usize {
        self.pressure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pressure.is_empty()
    }

    /// Stable hash of the pressure meter layout.
    pub fn fingerprint(&self) -> String {
        let ids: Vec<&str> = self.node_ids().collect();
        crate::provenance::sha256_hex(serde_json::to_string(&ids).unwrap().as_bytes())
    }

    /// Parses a standalone meter configuration file.
    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        serde_json::from_str(text).map_err(|e| NetworkError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, NetworkError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub name: String,
    pub headloss: HeadlossModel,
    pub demand_model: DemandModel,
    pub orifice_cd: f64,
    pub leak_defaults: LeakParams,
    pub junctions: Vec<Junction>,
    pub reservoirs: Vec<Reservoir>,
    pub pipes: Vec<Pipe>,
    pub valves: Vec<Valve>,
    pub dmas: Vec<Dma>,
    pub meters: MeterConfig,
    pub cycle: OperativeCycle,
    nodes: HashMap<String, NodeRef>,
    pipe_index: HashMap<String, usize>,
}

impl Network {
    pub fn n_pipes(&self) -> usize {
        self.pipes.len()
    }

    pub fn n_junctions(&self) -> usize {
        self.junctions.len()
    }

    pub fn n_reservoirs(&self) -> usize {
        self.reservoirs.len()
    }

    pub fn node(&self, id: &str) -> Option<NodeRef> {
        self.nodes.get(id).copied()
    }

    pub fn junction_index(&self, id: &str) -> Option<usize> {
        match self.nodes.get(id) {
            Some(NodeRef::Junction(i)) => Some(*i),
            _ => None,
        }
    }

    pub fn pipe_index(&self, id: &str) -> Option<usize> {
        self.pipe_index.get(id).copied()
    }

    pub fn pipe(&self, id: &str) -> Option<&Pipe> {
        self.pipe_index(id).map(|i| &self.pipes[i])
    }

    pub fn node_id(&self, node: NodeRef) -> &str {
        match node {
            NodeRef::Junction(i) => &self.junctions[i].id,
            NodeRef::Reservoir(i) => &self.reservoirs[i].id,
        }
    }

    pub fn elevation(&self, node: NodeRef) -> f64 {
        match node {
            NodeRef::Junction(i) => self.junctions[i].elevation,
            NodeRef::Reservoir(i) => self.reservoirs[i].elevation,
        }
    }

    pub fn dma_index(&self, id: &str) -> Option<usize> {
        self.dmas.iter().position(|d| d.id == id)
    }

    /// Junction indices of the configured pressure meters, in meter order.
    pub fn meter_junctions(&self, meters: &MeterConfig) -> Result<Vec<usize>, NetworkError> {
        meters
            .node_ids()
            .map(|id| {
                self.junction_index(id)
                    .ok_or_else(|| NetworkError::UnknownNode(id.to_string()))
            })
            .collect()
    }

    /// Open pipes that can host a punctual leak, in file order.
    pub fn leak_candidates(&self) -> Vec<usize> {
        self.pipes
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_open() && p.dma.is_some())
            .map(|(i, _)| i)
            .collect()
    }

    /// Total length of all pipes assigned to a DMA.
    pub fn districted_length(&self) -> f64 {
        self.pipes
            .iter()
            .filter(|p| p.is_open() && p.dma.is_some())
            .map(|p| p.length)
            .sum()
    }

    pub fn with_meters(&self, meters: MeterConfig) -> Result<Network, NetworkError> {
        let mut net = self.clone();
        net.meters = meters;
        let problems = net.validation_problems();
        if problems.is_empty() {
            Ok(net)
        } else {
            Err(NetworkError::Invalid(problems))
        }
    }

    /// Stable content hash of the network model.
    pub fn fingerprint(&self) -> String {
        crate::provenance::sha256_hex(self.to_json().as_bytes())
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.nodes.clear();
        for (i, j) in self.junctions.iter().enumerate() {
            self.nodes.insert(j.id.clone(), NodeRef::Junction(i));
        }
        for (i, r) in self.reservoirs.iter().enumerate() {
            self.nodes.insert(r.id.clone(), NodeRef::Reservoir(i));
        }
        self.pipe_index = self
            .pipes
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.clone(), i))
            .collect();
    }
}
