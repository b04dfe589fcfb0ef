//! The three relation graphs over a video's proposals.
//!
//! * similarity: dense, `softmax_rows(affinity)` with a learned bilinear
//!   affinity `(w x_i)ᵀ (w' x_j)`;
//! * front: IoU-weighted edges from frame `t` to frame `t + 1`;
//! * back: the same overlaps stored from frame `t + 1` to frame `t`.
//!
//! Front and back rows are normalized to sum to one; a node with no overlap
//! in the neighbouring frame keeps an all-zero row.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul_nt, softmax_rows, Matrix};
use crate::regions::{iou, RegionProposal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Sim,
    Front,
    Back,
}

impl GraphKind {
    pub const ALL: [GraphKind; 3] = [GraphKind::Sim, GraphKind::Front, GraphKind::Back];

    pub fn name(self) -> &'static str {
        match self {
            GraphKind::Sim => "sim",
            GraphKind::Front => "front",
            GraphKind::Back => "back",
        }
    }
}

/// Row-normalized `N x N` adjacency of one relation type.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyMatrix {
    pub kind: GraphKind,
    pub m: Matrix,
}

impl AdjacencyMatrix {
    pub fn len(&self) -> usize {
        self.m.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.m.rows() == 0
    }
}

/// The two `d x d` maps of the bilinear affinity: `phi(x) = w x`,
/// `phi'(x) = w' x`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityTransforms {
    pub w: Matrix,
    pub w_prime: Matrix,
}

/// Pairwise affinity `F[i][j] = (w x_i)ᵀ (w' x_j)`, computed as
/// `(X wᵀ)(X w'ᵀ)ᵀ`.
pub fn affinity(x: &Matrix, t: &AffinityTransforms) -> Result<Matrix> {
    let left = matmul_nt(x, &t.w)?;
    let right = matmul_nt(x, &t.w_prime)?;
    matmul_nt(&left, &right)
}

pub fn build_similarity_graph(x: &Matrix, t: &AffinityTransforms) -> Result<AdjacencyMatrix> {
    if x.rows() == 0 {
        return Err(Error::Empty {
            op: "build_similarity_graph",
        });
    }
    Ok(AdjacencyMatrix {
        kind: GraphKind::Sim,
        m: softmax_rows(&affinity(x, t)?),
    })
}

/// Unnormalized forward overlaps: `raw[i][j] = iou(i, j)` when `j` sits on
/// the frame right after `i`, else 0.
pub fn raw_front(proposals: &[RegionProposal]) -> Matrix {
    raw_edges(proposals, |frame| Some(frame + 1))
}

/// Unnormalized backward overlaps: `raw[j][i] = iou(i, j)` when `i` sits on
/// the frame right before `j`, else 0.
pub fn raw_back(proposals: &[RegionProposal]) -> Matrix {
    raw_edges(proposals, |frame| frame.checked_sub(1))
}

fn raw_edges(proposals: &[RegionProposal], neighbour: impl Fn(usize) -> Option<usize>) -> Matrix {
    let n = proposals.len();
    let mut by_frame: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in proposals.iter().enumerate() {
        by_frame.entry(p.frame).or_default().push(i);
    }
    let mut raw = Matrix::zeros(n, n);
    for (i, p) in proposals.iter().enumerate() {
        let Some(targets) = neighbour(p.frame).and_then(|f| by_frame.get(&f)) else {
            continue;
        };
        for &j in targets {
            let sigma = iou(&p.bbox, &proposals[j].bbox);
            if sigma > 0.0 {
                raw.set(i, j, sigma);
            }
        }
    }
    raw
}

fn normalize_rows(mut m: Matrix) -> Matrix {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|v| *v /= sum);
        }
    }
    m
}

pub fn build_front_graph(proposals: &[RegionProposal]) -> AdjacencyMatrix {
    AdjacencyMatrix {
        kind: GraphKind::Front,
        m: normalize_rows(raw_front(proposals)),
    }
}

/// Edges `j -> i` from frame `t + 1` back to frame `t`, valued with the same
/// IoU as the forward edge `i -> j`.
pub fn build_back_graph(proposals: &[RegionProposal]) -> AdjacencyMatrix {
    AdjacencyMatrix {
        kind: GraphKind::Back,
        m: normalize_rows(raw_back(proposals)),
    }
}

/// Frame-major node order: a stable sort by frame, so proposals within a
/// frame keep their relative order. Returns `order[new] = old`.
pub fn canonical_order(proposals: &[RegionProposal]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by_key(|&i| proposals[i].frame);
    order
}
