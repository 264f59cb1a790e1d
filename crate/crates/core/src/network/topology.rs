use super::{Junction, Network, NetworkError, NodeRef, Pipe};

/// Sparse pipe-node incidence in triplet form, `+1` at the downstream
/// (`to`) node and `-1` at the upstream (`from`) node of every pipe row.
#[derive(Debug, Clone, PartialEq)]
pub struct Incidence {
    pub rows: usize,
    pub cols: usize,
    /// `(row, col, value)` sorted by row.
    pub entries: Vec<(usize, usize, f64)>,
}

impl Incidence {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn transpose(&self) -> Incidence {
        let mut entries: Vec<_> = self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        entries.sort_by_key(|&(r, c, _)| (r, c));
        Incidence {
            rows: self.cols,
            cols: self.rows,
            entries,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.cols]; self.rows];
        for &(r, c, v) in &self.entries {
            m[r][c] += v;
        }
        m
    }
}

/// Pipes and nodes of one DMA.
#[derive(Debug, Clone, PartialEq)]
pub struct DmaSubnetwork {
    pub dma: String,
    /// Junction indices, ascending.
    pub nodes: Vec<usize>,
    /// Pipe indices, ascending.
    pub pipes: Vec<usize>,
    pub total_length: f64,
    pub pipe_count: usize,
}

impl Network {
    /// Topological incidence sub-matrices `(A_pn, A_p0)` over all pipes.
    pub fn incidence(&self) -> (Incidence, Incidence) {
        let mut apn = Vec::with_capacity(2 * self.pipes.len());
        let mut ap0 = Vec::new();
        for (k, p) in self.pipes.iter().enumerate() {
            for (node, sign) in [(p.from, -1.0), (p.to, 1.0)] {
                match node {
                    NodeRef::Junction(i) => apn.push((k, i, sign)),
                    NodeRef::Reservoir(i) => ap0.push((k, i, sign)),
                }
            }
        }
        (
            Incidence {
                rows: self.pipes.len(),
                cols: self.junctions.len(),
                entries: apn,
            },
            Incidence {
                rows: self.pipes.len(),
                cols: self.reservoirs.len(),
                entries: ap0,
            },
        )
    }

    pub fn dma_subnetwork(&self, dma: &str) -> Result<DmaSubnetwork, NetworkError> {
        if self.dma_index(dma).is_none() {
            return Err(NetworkError::UnknownDma(dma.to_string()));
        }
        let pipes: Vec<usize> = self
            .pipes
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_open() && p.dma.as_deref() == Some(dma))
            .map(|(i, _)| i)
            .collect();
        let mut nodes: Vec<usize> = pipes
            .iter()
            .flat_map(|&k| [self.pipes[k].from, self.pipes[k].to])
            .filter_map(|n| match n {
                NodeRef::Junction(i) => Some(i),
                NodeRef::Reservoir(_) => None,
            })
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        let total_length = pipes.iter().map(|&k| self.pipes[k].length).sum();
        Ok(DmaSubnetwork {
            dma: dma.to_string(),
            pipe_count: pipes.len(),
            nodes,
            pipes,
            total_length,
        })
    }

    /// Splits an open pipe at its midpoint and attaches an orifice emitter to
    /// the new node.
    ///
    /// The first half keeps the original pipe's position, the second half and
    /// the leak node are appended, and both halves record the original id in
    /// [`Pipe::parent`]. Each half inherits the pipe's leak parameters, so
    /// total diffuse leakage scales with the unchanged total length.
    pub fn insert_midpoint_leak(
        &self,
        pipe_id: &str,
        orifice_diameter: f64,
    ) -> Result<Network, NetworkError> {
        let k = self
            .pipe_index(pipe_id)
            .ok_or_else(|| NetworkError::UnknownPipe(pipe_id.to_string()))?;
        let pipe = &self.pipes[k];
        if !pipe.is_open() {
            return Err(NetworkError::ClosedPipe(pipe_id.to_string()));
        }
        if !(orifice_diameter >= 0.0) || !orifice_diameter.is_finite() {
            return Err(NetworkError::InvalidOrifice(orifice_diameter));
        }
        let dma = pipe.dma.clone().expect("open pipes carry a dma");
        let mut net = self.clone();
        let mid = NodeRef::Junction(net.junctions.len());
        net.junctions.push(Junction {
            id: leak_node_id(pipe_id),
            elevation: 0.5 * (self.elevation(pipe.from) + self.elevation(pipe.to)),
            demand: 0.0,
            dma: dma.clone(),
            emitter: Some(orifice_diameter),
        });
        let half = |suffix: &str, from: NodeRef, to: NodeRef| Pipe {
            id: format!("{pipe_id}#{suffix}"),
            from,
            to,
            length: 0.5 * pipe.length,
            parent: Some(pipe_id.to_string()),
            ..pipe.clone()
        };
        net.pipes[k] = half("a", pipe.from, mid);
        net.pipes.push(half("b", mid, pipe.to));
        net.rebuild_index();
        Ok(net)
    }

    /// Reverses [`Network::insert_midpoint_leak`].
    pub fn remove_midpoint_leak(&self, leak_node: &str) -> Result<Network, NetworkError> {
        let j = self
            .junction_index(leak_node)
            .ok_or_else(|| NetworkError::UnknownNode(leak_node.to_string()))?;
        let original = leak_node
            .strip_suffix("#leak")
            .ok_or_else(|| NetworkError::NotALeakNode(leak_node.to_string()))?;
        let a = self.pipe_index(&format!("{original}#a"));
        let b = self.pipe_index(&format!("{original}#b"));
        let (Some(a), Some(b)) = (a, b) else {
            return Err(NetworkError::NotALeakNode(leak_node.to_string()));
        };
        if j + 1 != self.junctions.len() || b + 1 != self.pipes.len() {
            return Err(NetworkError::NotALeakNode(leak_node.to_string()));
        }
        let mut net = self.clone();
        let first = &self.pipes[a];
        let second = &self.pipes[b];
        net.pipes[a] = Pipe {
            id: original.to_string(),
            from: first.from,
            to: second.to,
            length: first.length + second.length,
            parent: None,
            ..first.clone()
        };
        net.pipes.pop();
        net.junctions.pop();
        net.rebuild_index();
        Ok(net)
    }

    /// Junction index of the punctual leak node, if this network carries one.
    pub fn leak_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.junctions
            .iter()
            .enumerate()
            .filter(|(_, j)| j.emitter.is_some())
            .map(|(i, _)| i)
    }
}

pub(crate) fn leak_node_id(pipe_id: &str) -> String {
    format!("{pipe_id}#leak")
}
