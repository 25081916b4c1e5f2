use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CommError;

/// Propagation delay used when none is given, seconds.
pub const DEFAULT_DELAY_S: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    /// A direct link for every parent/child pair of areas.
    Ideal,
    /// Every node on one cycle, in id order.
    Ring,
    /// Links read from a file.
    Custom,
    /// No links at all.
    Blackout,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TopologyKind::Ideal => "ideal",
            TopologyKind::Ring => "ring",
            TopologyKind::Custom => "custom",
            TopologyKind::Blackout => "blackout",
        };
        f.write_str(s)
    }
}

impl FromStr for TopologyKind {
    type Err = CommError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ideal" => Ok(TopologyKind::Ideal),
            "ring" => Ok(TopologyKind::Ring),
            "custom" => Ok(TopologyKind::Custom),
            "blackout" | "none" => Ok(TopologyKind::Blackout),
            _ => Err(CommError::Kind(s.to_string())),
        }
    }
}

/// Point-to-point full-duplex link. Each direction is an independent FIFO channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub a: usize,
    pub b: usize,
    pub bandwidth_bps: f64,
    pub delay_s: f64,
}

/// On-disk form: `{kind, bandwidth_bps, delay_s, nodes[], links[][2]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyDocument {
    pub kind: TopologyKind,
    pub bandwidth_bps: f64,
    #[serde(default = "default_delay")]
    pub delay_s: f64,
    pub nodes: Vec<usize>,
    #[serde(default)]
    pub links: Vec<[usize; 2]>,
}

fn default_delay() -> f64 {
    DEFAULT_DELAY_S
}

#[derive(Debug, Clone)]
pub struct CommTopology {
    pub kind: TopologyKind,
    pub nodes: Vec<usize>,
    pub links: Vec<Link>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

/// Builds a topology over agents `0..n_agents`. `tree_edges` are the
/// parent/child pairs used by the ideal kind.
pub fn build_topology(
    kind: TopologyKind,
    n_agents: usize,
    tree_edges: &[(usize, usize)],
    bandwidth_bps: f64,
    delay_s: f64,
) -> Result<CommTopology, CommError> {
    let pairs: Vec<[usize; 2]> = match kind {
        TopologyKind::Ideal | TopologyKind::Custom => tree_edges.iter().map(|&(a, b)| [a, b]).collect(),
        TopologyKind::Ring => {
            if n_agents < 2 {
                return Err(CommError::TooFewNodes { kind, n: n_agents });
            }
            if n_agents == 2 {
                vec![[0, 1]]
            } else {
                (0..n_agents).map(|i| [i, (i + 1) % n_agents]).collect()
            }
        }
        TopologyKind::Blackout => Vec::new(),
    };
    CommTopology::new(kind, (0..n_agents).collect(), &pairs, bandwidth_bps, delay_s)
}

impl CommTopology {
    pub fn new(
        kind: TopologyKind,
        nodes: Vec<usize>,
        pairs: &[[usize; 2]],
        bandwidth_bps: f64,
        delay_s: f64,
    ) -> Result<CommTopology, CommError> {
        if !(bandwidth_bps > 0.0) || !bandwidth_bps.is_finite() {
            return Err(CommError::Bandwidth(bandwidth_bps));
        }
        if !(delay_s >= 0.0) || !delay_s.is_finite() {
            return Err(CommError::Delay(delay_s));
        }
        let n = nodes.iter().max().map_or(0, |m| m + 1);
        let known: BTreeSet<usize> = nodes.iter().copied().collect();
        let mut adjacency = vec![Vec::new(); n];
        let mut links = Vec::new();
        for &[a, b] in pairs {
            for v in [a, b] {
                if !known.contains(&v) {
                    return Err(CommError::UnknownNode(v));
                }
            }
            if a == b {
                return Err(CommError::SelfLink(a));
            }
            let k = links.len();
            links.push(Link {
                a,
                b,
                bandwidth_bps,
                delay_s,
            });
            adjacency[a].push((b, k));
            adjacency[b].push((a, k));
        }
        for adj in adjacency.iter_mut() {
            adj.sort();
        }
        let topo = CommTopology {
            kind,
            nodes,
            links,
            adjacency,
        };
        if kind != TopologyKind::Blackout && !topo.is_connected() {
            return Err(CommError::Disconnected);
        }
        Ok(topo)
    }

    pub fn from_document(doc: &TopologyDocument) -> Result<CommTopology, CommError> {
        CommTopology::new(doc.kind, doc.nodes.clone(), &doc.links, doc.bandwidth_bps, doc.delay_s)
    }

    pub fn from_json_str(text: &str) -> Result<CommTopology, CommError> {
        let doc: TopologyDocument = serde_json::from_str(text)?;
        CommTopology::from_document(&doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CommTopology, CommError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CommError::Io {
            path: path.display().to_string(),
            source,
        })?;
        CommTopology::from_json_str(&text)
    }

    /// Document form. Links of mixed bandwidth are written with the first link's values.
    pub fn to_document(&self) -> TopologyDocument {
        let (bandwidth_bps, delay_s) = self
            .links
            .first()
            .map_or((1.0, DEFAULT_DELAY_S), |l| (l.bandwidth_bps, l.delay_s));
        TopologyDocument {
            kind: self.kind,
            bandwidth_bps,
            delay_s,
            nodes: self.nodes.clone(),
            links: self.links.iter().map(|l| [l.a, l.b]).collect(),
        }
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    /// Neighbours of `node` with the connecting link index, by ascending id.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        self.adjacency.get(node).map_or(&[], |v| v.as_slice())
    }

    fn is_connected(&self) -> bool {
        let Some(&start) = self.nodes.first() else {
            return true;
        };
        let mut seen = vec![false; self.adjacency.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        self.nodes.iter().all(|&v| seen[v])
    }

    /// Fewest-hop path as a list of nodes, both ends included. Ties go to
    /// the lower-numbered neighbour.
    pub fn route(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        if from >= self.adjacency.len() || to >= self.adjacency.len() {
            return None;
        }
        if from == to {
            return Some(vec![from]);
        }
        let mut prev = vec![usize::MAX; self.adjacency.len()];
        prev[from] = from;
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in self.neighbors(u) {
                if prev[v] == usize::MAX {
                    prev[v] = u;
                    if v == to {
                        let mut path = vec![to];
                        let mut c = to;
                        while c != from {
                            c = prev[c];
                            path.push(c);
                        }
                        path.reverse();
                        return Some(path);
                    }
                    queue.push_back(v);
                }
            }
        }
        None
    }

    /// Link index joining two adjacent nodes.
    pub fn link_between(&self, a: usize, b: usize) -> Option<usize> {
        self.neighbors(a).iter().find(|&&(v, _)| v == b).map(|&(_, k)| k)
    }
}
