//! Deterministic synthetic networks used as fixtures, examples and
//! benchmarks.
//!
//! Every district is a small street grid: a comb-shaped spanning tree
//! (rows plus the first column) closed into loops by extra vertical
//! pipes. Its first pipe is the inlet, from the reservoir or from the
//! last node of the feeding district, optionally through a pressure
//! reducing valve. Districts can be joined by closed boundary gates.

use crate::network::{
    DemandModel, Dma, HeadlossModel, LeakModel, LeakParams, MeterConfig, MeterTag, Network,
    NetworkFile, NodeRecord, OperativeCycle, PipeRecord, PipeStatus, PressureMeter, ReservoirRecord,
    ValveRecord, ValveStatus, DEFAULT_ORIFICE_CD, FORMAT_VERSION,
};

/// Where a district's inlet pipe draws water from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Feeder {
    Reservoir,
    /// Index of an earlier district; the inlet starts at its last node.
    District(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistrictSpec {
    pub id: String,
    /// Open pipes in the district, inlet included.
    pub pipes: usize,
    pub feeder: Feeder,
    /// Pressure setting of a reducing valve in front of the district.
    pub prv_setting: Option<f64>,
    /// Diffuse leakage coefficient of all the district's pipes.
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub name: String,
    pub districts: Vec<DistrictSpec>,
    /// Closed gates between consecutive districts (cyclically).
    pub closed_gates: usize,
    pub reservoir_head: f64,
    pub reservoir_elevation: f64,
    pub pipe_length: f64,
    pub pipe_diameter: f64,
    pub inlet_diameter: f64,
    /// Base demand per junction, m³/s.
    pub node_demand: f64,
    pub cycle: OperativeCycle,
}

impl GridSpec {
    fn new(name: &str, districts: Vec<DistrictSpec>) -> Self {
        Self {
            name: name.to_string(),
            districts,
            closed_gates: 0,
            reservoir_head: 70.0,
            reservoir_elevation: 30.0,
            pipe_length: 100.0,
            pipe_diameter: 0.125,
            inlet_diameter: 0.25,
            node_demand: 4e-4,
            cycle: OperativeCycle::default(),
        }
    }
}

/// Hourly demand pattern used by the larger fixtures.
pub fn daily_pattern() -> OperativeCycle {
    OperativeCycle {
        dt: 3600.0,
        multipliers: vec![
            0.6, 0.5, 0.5, 0.5, 0.6, 0.8, 1.1, 1.3, 1.3, 1.2, 1.1, 1.1, 1.2, 1.1, 1.0, 1.0, 1.1,
            1.2, 1.3, 1.3, 1.2, 1.0, 0.8, 0.7,
        ],
    }
}

/// Node count and internal edge list `(a, b)` of a grid with `edges` pipes.
fn grid_layout(edges: usize) -> (usize, usize, Vec<(usize, usize)>) {
    if edges <= 3 {
        return (edges + 1, edges + 1, (0..edges).map(|i| (i, i + 1)).collect());
    }
    let mut n = ((edges as f64 / 1.25).round() as usize + 1).min(edges + 1);
    loop {
        let cols = (n as f64).sqrt().ceil() as usize;
        let at = |r: usize, c: usize| r * cols + c;
        let mut tree = Vec::new();
        let mut extra = Vec::new();
        for i in 0..n {
            let (r, c) = (i / cols, i % cols);
            if c + 1 < cols && i + 1 < n {
                tree.push((i, i + 1));
            }
            if at(r + 1, c) < n {
                if c == 0 {
                    tree.push((i, at(r + 1, c)));
                } else {
                    extra.push((i, at(r + 1, c)));
                }
            }
        }
        if tree.len() + extra.len() >= edges {
            // spread the loops: alternate from both ends of the grid
            let mut order = Vec::with_capacity(extra.len());
            let (mut lo, mut hi) = (0, extra.len());
            while lo < hi {
                hi -= 1;
                order.push(extra[hi]);
                if lo < hi {
                    order.push(extra[lo]);
                    lo += 1;
                }
            }
            tree.extend(order.into_iter().take(edges - (n - 1)));
            return (n, cols, tree);
        }
        n += 1;
    }
}

/// Smooth, deterministic ground profile in metres.
fn ground(x: f64, y: f64) -> f64 {
    5.0 + 5.0 * (1.0 + (0.35 * x).sin()) + 2.5 * (1.0 + (0.25 * y + 0.5).cos())
}

/// Builds the network file of a grid specification.
pub fn grid_file(spec: &GridSpec) -> NetworkFile {
    let mut nodes = Vec::new();
    let mut pipes = Vec::new();
    let mut valves = Vec::new();
    let mut last_node: Vec<String> = Vec::new();
    let mut gate_node: Vec<String> = Vec::new();
    let mut x_offset = 0.0;
    let default_leak = LeakParams {
        model: LeakModel::Power,
        beta: spec.districts.first().map_or(0.0, |d| d.beta),
        alpha: 1.0,
        m_coeff: 0.0,
    };

    for (d, district) in spec.districts.iter().enumerate() {
        assert!(district.pipes >= 1, "district {} needs at least its inlet", district.id);
        let (n, cols, edges) = grid_layout(district.pipes - 1);
        let id = &district.id;
        let node_id = |i: usize| format!("{id}n{}", i + 1);
        for i in 0..n {
            let (r, c) = ((i / cols) as f64, (i % cols) as f64);
            nodes.push(NodeRecord {
                id: node_id(i),
                elevation: round3(ground(x_offset + c, r) + 0.5 * d as f64),
                demand: spec.node_demand,
                dma: Some(id.clone()),
                emitter: None,
            });
        }
        let leak = if district.beta == default_leak.beta {
            None
        } else {
            Some(LeakParams { beta: district.beta, ..default_leak })
        };
        let pipe = |k: usize, from: String, to: String, diameter: f64| PipeRecord {
            id: format!("{id}{k}"),
            from,
            to,
            length: spec.pipe_length,
            diameter,
            roughness: 130.0,
            status: PipeStatus::Open,
            dma: Some(id.clone()),
            leak,
            parent: None,
        };

        let source = match district.feeder {
            Feeder::Reservoir => "R1".to_string(),
            Feeder::District(p) => {
                assert!(p < d, "district {id} must be fed by an earlier district");
                last_node[p].clone()
            }
        };
        let inlet_to = match district.prv_setting {
            Some(setting) => {
                let entry = format!("{id}in");
                nodes.push(NodeRecord {
                    id: entry.clone(),
                    elevation: round3(ground(x_offset, 0.0) + 0.5 * d as f64),
                    demand: 0.0,
                    dma: Some(id.clone()),
                    emitter: None,
                });
                valves.push(ValveRecord {
                    id: format!("PRV{}", valves.len() + 1),
                    from: entry.clone(),
                    to: node_id(0),
                    setting,
                    status: ValveStatus::Active,
                    diameter: spec.inlet_diameter,
                    minor_loss: 1.0,
                });
                entry
            }
            None => node_id(0),
        };
        pipes.push(pipe(1, source, inlet_to, spec.inlet_diameter));
        for (k, &(a, b)) in edges.iter().enumerate() {
            pipes.push(pipe(k + 2, node_id(a), node_id(b), spec.pipe_diameter));
        }
        last_node.push(node_id(n - 1));
        gate_node.push(node_id(n / 2));
        x_offset += cols as f64 + 1.0;
    }

    let nd = spec.districts.len();
    for g in 0..spec.closed_gates {
        let (a, b) = (g % nd, (g + 1) % nd);
        pipes.push(PipeRecord {
            id: format!("gate{}", g + 1),
            from: gate_node[a].clone(),
            to: gate_node[b].clone(),
            length: spec.pipe_length,
            diameter: 0.1,
            roughness: 130.0,
            status: PipeStatus::Closed,
            dma: None,
            leak: None,
            parent: None,
        });
    }

    NetworkFile {
        format: FORMAT_VERSION,
        name: spec.name.clone(),
        headloss_model: HeadlossModel::HazenWilliams,
        demand_model: DemandModel::default(),
        orifice_cd: DEFAULT_ORIFICE_CD,
        leak_model_defaults: default_leak,
        dmas: spec
            .districts
            .iter()
            .map(|d| Dma { id: d.id.clone(), name: None })
            .collect(),
        nodes,
        reservoirs: vec![ReservoirRecord {
            id: "R1".into(),
            elevation: spec.reservoir_elevation,
            head: spec.reservoir_head,
        }],
        pipes,
        valves,
        meters: MeterConfig::default(),
        demand_cycle: spec.cycle.clone(),
    }
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Builds a validated network with the `peripheral` meter layout attached.
pub fn grid_network(spec: &GridSpec) -> Network {
    let mut file = grid_file(spec);
    file.meters = meter_layout(spec, MeterTag::Peripheral);
    Network::from_file(file).expect("synthetic network is valid")
}

/// Pressure meters for a nested family of layouts: `boundary` meters the
/// inlet node of each district, `internal` adds a mid-grid node and
/// `peripheral` adds the far end of the grid.
pub fn meter_layout(spec: &GridSpec, level: MeterTag) -> MeterConfig {
    let mut pressure = Vec::new();
    for district in &spec.districts {
        let (n, _, _) = grid_layout(district.pipes - 1);
        let id = &district.id;
        let mut add = |i: usize, tag: MeterTag| {
            let node = format!("{id}n{}", i + 1);
            if !pressure.iter().any(|m: &PressureMeter| m.node == node) {
                pressure.push(PressureMeter { node, tag });
            }
        };
        add(0, MeterTag::Boundary);
        if level != MeterTag::Boundary && n > 2 {
            add(n / 2, MeterTag::Internal);
        }
        if level == MeterTag::Peripheral && n > 1 {
            add(n - 1, MeterTag::Peripheral);
        }
    }
    let name = match level {
        MeterTag::Boundary => "boundary",
        MeterTag::Internal => "internal",
        MeterTag::Peripheral => "peripheral",
    };
    MeterConfig {
        name: name.to_string(),
        pressure,
        flow: spec.districts.iter().map(|d| format!("{}1", d.id)).collect(),
    }
}

fn district(id: &str, pipes: usize, feeder: Feeder, beta: f64) -> DistrictSpec {
    DistrictSpec {
        id: id.to_string(),
        pipes,
        feeder,
        prv_setting: None,
        beta,
    }
}

/// Reservoir (head `head`) feeding one junction at `elevation` through
/// pipe `P1` (1000 m, DN200, C=130) with 10 L/s of demand.
pub fn single_pipe(head: f64, elevation: f64) -> Network {
    let file = NetworkFile {
        format: FORMAT_VERSION,
        name: "single-pipe".into(),
        headloss_model: HeadlossModel::HazenWilliams,
        demand_model: DemandModel::default(),
        orifice_cd: DEFAULT_ORIFICE_CD,
        leak_model_defaults: LeakParams::default(),
        dmas: vec![Dma { id: "A".into(), name: None }],
        nodes: vec![NodeRecord {
            id: "J1".into(),
            elevation,
            demand: 0.01,
            dma: Some("A".into()),
            emitter: None,
        }],
        reservoirs: vec![ReservoirRecord { id: "R1".into(), elevation, head }],
        pipes: vec![PipeRecord {
            id: "P1".into(),
            from: "R1".into(),
            to: "J1".into(),
            length: 1000.0,
            diameter: 0.2,
            roughness: 130.0,
            status: PipeStatus::Open,
            dma: Some("A".into()),
            leak: None,
            parent: None,
        }],
        valves: vec![],
        meters: MeterConfig {
            name: "single".into(),
            pressure: vec![PressureMeter { node: "J1".into(), tag: MeterTag::Boundary }],
            flow: vec!["P1".into()],
        },
        demand_cycle: OperativeCycle::default(),
    };
    Network::from_file(file).expect("valid")
}

/// One reservoir, two junctions and three pipes forming a loop, with
/// diffuse leakage on every pipe.
pub fn triangle() -> Network {
    let text = r#"{
      "format": 1,
      "name": "triangle",
      "leak_model_defaults": {"model": "power", "beta": 2e-8, "alpha": 1.0},
      "dmas": [{"id": "A"}],
      "reservoirs": [{"id": "R1", "elevation": 40.0, "head": 60.0}],
      "nodes": [
        {"id": "J1", "elevation": 10.0, "demand": 0.012, "dma": "A"},
        {"id": "J2", "elevation": 15.0, "demand": 0.018, "dma": "A"}
      ],
      "pipes": [
        {"id": "P1", "from": "R1", "to": "J1", "length": 800.0, "diameter": 0.2, "roughness": 120.0, "dma": "A"},
        {"id": "P2", "from": "J1", "to": "J2", "length": 500.0, "diameter": 0.15, "roughness": 110.0, "dma": "A"},
        {"id": "P3", "from": "R1", "to": "J2", "length": 1200.0, "diameter": 0.15, "roughness": 130.0, "dma": "A"}
      ],
      "meters": {"name": "all", "pressure": [{"node": "J1"}, {"node": "J2"}]}
    }"#;
    Network::from_json(text).expect("valid")
}

/// Three districts `A`, `B`, `C` of ten 100 m pipes each, chained
/// A → B → C. Pipe ids are `A1`..`A10`, `B1`..`B10`, `C1`..`C10`.
pub fn three_dma_spec() -> GridSpec {
    GridSpec::new(
        "three-dma",
        vec![
            district("A", 10, Feeder::Reservoir, 2.0e-9),
            district("B", 10, Feeder::District(0), 3.0e-9),
            district("C", 10, Feeder::District(1), 1.5e-9),
        ],
    )
}

pub fn three_dma() -> Network {
    grid_network(&three_dma_spec())
}

/// Five districts of 39 open pipes plus five closed gates: 200 pipes.
pub fn five_dma_spec() -> GridSpec {
    let ids = ["A", "B", "C", "D", "E"];
    let feeders = [
        Feeder::Reservoir,
        Feeder::District(0),
        Feeder::Reservoir,
        Feeder::District(2),
        Feeder::District(1),
    ];
    let mut spec = GridSpec::new(
        "five-dma-200",
        ids.iter()
            .zip(feeders)
            .enumerate()
            .map(|(i, (id, f))| district(id, 39, f, 1.5e-9 + 0.5e-9 * i as f64))
            .collect(),
    );
    spec.closed_gates = 5;
    spec.pipe_diameter = 0.15;
    spec.node_demand = 3e-4;
    spec.cycle = daily_pattern();
    spec
}

pub fn five_dma_200() -> Network {
    grid_network(&five_dma_spec())
}

/// Nine districts of 30 open pipes plus eight closed gates.
pub fn nine_dma_spec() -> GridSpec {
    let ids = ["A", "B", "C", "D", "E", "F", "G", "H", "I"];
    let mut spec = GridSpec::new(
        "nine-dma",
        ids.iter()
            .enumerate()
            .map(|(i, id)| {
                let feeder = if i % 3 == 0 { Feeder::Reservoir } else { Feeder::District(i - 1) };
                district(id, 30, feeder, 1.5e-9 + 0.25e-9 * (i % 4) as f64)
            })
            .collect(),
    );
    spec.closed_gates = 8;
    spec.pipe_diameter = 0.15;
    spec
}

pub fn nine_dma() -> Network {
    grid_network(&nine_dma_spec())
}

/// A larger network with the district size profile of a mid-sized town:
/// nine districts (four large, five small), two of them behind pressure
/// reducing valves, and four closed gates: 853 pipes.
pub fn town_853_spec() -> GridSpec {
    let sizes = [151, 201, 256, 218, 6, 10, 2, 3, 2];
    let ids = ["D1", "D2", "D3", "D4", "D5", "D6", "D7", "D8", "D9"];
    let feeders = [
        Feeder::Reservoir,
        Feeder::Reservoir,
        Feeder::Reservoir,
        Feeder::Reservoir,
        Feeder::District(1),
        Feeder::District(2),
        Feeder::District(3),
        Feeder::District(4),
        Feeder::District(5),
    ];
    let mut districts: Vec<DistrictSpec> = ids
        .iter()
        .zip(sizes)
        .zip(feeders)
        .enumerate()
        .map(|(i, ((id, n), f))| district(id, n, f, 1.0e-9 + 0.4e-9 * (i % 5) as f64))
        .collect();
    districts[3].prv_setting = Some(35.0);
    districts[5].prv_setting = Some(25.0);
    let mut spec = GridSpec::new("town-853", districts);
    spec.closed_gates = 4;
    spec.inlet_diameter = 0.35;
    spec.pipe_diameter = 0.2;
    spec.reservoir_head = 80.0;
    spec.node_demand = 2.5e-4;
    spec.cycle = daily_pattern();
    spec
}

pub fn town_853() -> Network {
    grid_network(&town_853_spec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_layout_has_requested_edges_and_is_connected() {
        for edges in 0..300 {
            let (n, _, list) = grid_layout(edges);
            assert_eq!(list.len(), edges);
            assert!(n <= edges + 1);
            let mut seen = vec![false; n];
            seen[0] = true;
            // tree edges come first and connect in order
            for &(a, b) in &list[..n - 1] {
                assert!(seen[a] || seen[b]);
                seen[a] = true;
                seen[b] = true;
            }
            assert!(seen.iter().all(|s| *s));
            let mut sorted: Vec<_> = list.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), edges, "duplicate edges for {edges}");
        }
    }

    #[test]
    fn fixture_sizes() {
        let net = three_dma();
        assert_eq!((net.n_pipes(), net.dmas.len()), (30, 3));
        assert!(net.pipes.iter().all(|p| p.is_open()));
        let net = five_dma_200();
        assert_eq!(net.n_pipes(), 200);
        assert_eq!(net.pipes.iter().filter(|p| !p.is_open()).count(), 5);
        let net = nine_dma();
        assert_eq!(net.n_pipes(), 278);
        assert_eq!(net.dmas.len(), 9);
        let net = town_853();
        assert_eq!(net.n_pipes(), 853);
        assert_eq!(net.valves.len(), 2);
    }

    #[test]
    fn meter_layouts_are_nested() {
        let spec = nine_dma_spec();
        let b = meter_layout(&spec, MeterTag::Boundary);
        let i = meter_layout(&spec, MeterTag::Internal);
        let p = meter_layout(&spec, MeterTag::Peripheral);
        assert_eq!(b.len(), 9);
        assert!(b.len() < i.len() && i.len() < p.len());
        assert!(b.node_ids().all(|n| i.node_ids().any(|m| m == n)));
        assert!(i.node_ids().all(|n| p.node_ids().any(|m| m == n)));
    }
}
