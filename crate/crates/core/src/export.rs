//! Dense adjacency dumps and their sparse JSON / Graphviz renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{assemble, VideoRecord};
use crate::error::{Error, Result};
use crate::graphs::{canonical_order, AffinityTransforms, GraphKind};
use crate::linalg::Matrix;
use crate::regions::BoundingBox;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub frame: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub source_id: String,
}

/// All three adjacencies of one video, dense and row-major, with node
/// metadata in canonical order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub video_id: String,
    pub nodes: Vec<NodeInfo>,
    pub sim: Vec<Vec<f64>>,
    pub front: Vec<Vec<f64>>,
    pub back: Vec<Vec<f64>>,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn graph_dump(record: &VideoRecord, transforms: &AffinityTransforms) -> Result<GraphDump> {
    let input = assemble(record, transforms)?;
    let nodes = canonical_order(&record.proposals)
        .into_iter()
        .map(|i| {
            let p = &record.proposals[i];
            NodeInfo {
                frame: p.frame,
                bbox: p.bbox,
                source_id: p.source_id.clone(),
            }
        })
        .collect();
    Ok(GraphDump {
        video_id: record.video_id.clone(),
        nodes,
        sim: rows(&input.g_sim.m),
        front: rows(&input.g_front.m),
        back: rows(&input.g_back.m),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub kind: GraphKind,
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

impl GraphDump {
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        for (kind, m) in [("sim", &self.sim), ("front", &self.front), ("back", &self.back)] {
            if m.len() != n || m.iter().any(|r| r.len() != n) {
                return Err(Error::data(
                    format!("graph dump {} ({kind})", self.video_id),
                    format!("adjacency is not {n}x{n}"),
                ));
            }
        }
        Ok(())
    }

    /// Every nonzero front/back entry, and similarity entries of at least
    /// `sim_min_weight`.
    pub fn edges(&self, sim_min_weight: f64) -> Vec<Edge> {
        let mut out = Vec::new();
        for (kind, m, min) in [
            (GraphKind::Sim, &self.sim, sim_min_weight),
            (GraphKind::Front, &self.front, f64::MIN_POSITIVE),
            (GraphKind::Back, &self.back, f64::MIN_POSITIVE),
        ] {
            for (i, row) in m.iter().enumerate() {
                for (j, &w) in row.iter().enumerate() {
                    if w >= min {
                        out.push(Edge { kind, from: i, to: j, weight: w });
                    }
                }
            }
        }
        out
    }

    /// Graphviz digraph: nodes grouped by frame, edges colored by graph.
    pub fn to_dot(&self, sim_min_weight: f64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "digraph \"{}\" {{", self.video_id.replace('"', "'"));
        let _ = writeln!(s, "  rankdir=LR;");
        let last = self.nodes.iter().map(|n| n.frame).max().unwrap_or(0);
        for t in 0..=last {
            let _ = writeln!(s, "  subgraph cluster_{t} {{ label=\"frame {t}\";");
            for (i, n) in self.nodes.iter().enumerate().filter(|(_, n)| n.frame == t) {
                let _ = writeln!(s, "    n{i} [label=\"{}\"];", n.source_id.replace('"', "'"));
            }
            let _ = writeln!(s, "  }}");
        }
        for e in self.edges(sim_min_weight) {
            let (color, style) = match e.kind {
                GraphKind::Sim => ("gray50", "dashed"),
                GraphKind::Front => ("blue", "solid"),
                GraphKind::Back => ("red", "solid"),
            };
            let _ = writeln!(
                s,
                "  n{} -> n{} [color={color}, style={style}, label=\"{:.3}\"];",
                e.from, e.to, e.weight
            );
        }
        s.push_str("}\n");
        s
    }
}
