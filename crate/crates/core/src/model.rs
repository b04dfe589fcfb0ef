//! The two-branch residual graph network.
//!
//! Branch A propagates over the similarity graph. Its first layer reads a
//! transformed input `g(X) = X gᵀ` while the residual carries the raw `X`:
//!
//! ```text
//! Z₁ = G_sim · g(X) · W₁ + X,    Z_l = G_sim · Z_{l-1} · W_l + Z_{l-1}
//! ```
//!
//! Branch B sums the front and back graphs with unshared weights:
//!
//! ```text
//! Z_l = G_front · Z_{l-1} · W_l^f + G_back · Z_{l-1} · W_l^b + Z_{l-1}
//! ```
//!
//! Every layer is followed by layer norm and ReLU. The final node features
//! of the two branches are summed, mean-pooled over nodes, concatenated with
//! the clip's global feature and classified by one linear layer.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::graphs::{AdjacencyMatrix, AffinityTransforms};
use crate::linalg::{self, layer_norm, matmul, matmul_nt, relu, Matrix, LAYER_NORM_EPS};
use crate::tape::{Tape, Var};

/// Model hyperparameters fixed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Node feature width.
    pub d: usize,
    /// Graph convolution layers per branch.
    pub layers: usize,
    pub classes: usize,
    /// Dropout rate on the pooled `2d` vector during training.
    pub dropout: f64,
    /// Apply layer norm + ReLU after the last layer of each branch too.
    pub norm_last_layer: bool,
    pub eps: f64,
}

impl ModelConfig {
    pub fn new(d: usize, layers: usize, classes: usize) -> Self {
        ModelConfig {
            d,
            layers,
            classes,
            dropout: 0.3,
            norm_last_layer: true,
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.layers == 0 || self.classes == 0 {
            return Err(Error::Invalid(format!(
                "model dimensions must be positive (d={}, layers={}, classes={})",
                self.d, self.layers, self.classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Layer-norm gain and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl NormParams {
    pub fn identity(d: usize) -> Self {
        NormParams {
            gain: vec![1.0; d],
            bias: vec![0.0; d],
        }
    }
}

/// Spatio-temporal weights of one branch-B layer.
#[derive(Clone, Debug, PartialEq)]
pub struct StWeights {
    pub front: Matrix,
    pub back: Matrix,
}

/// All learnable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnModel {
    pub config: ModelConfig,
    pub transforms: AffinityTransforms,
    /// Input transform `g` of the similarity branch's first layer.
    pub g_weight: Matrix,
    pub sim_weights: Vec<Matrix>,
    pub st_weights: Vec<StWeights>,
    pub sim_norms: Vec<NormParams>,
    pub st_norms: Vec<NormParams>,
    /// `2d x C`.
    pub classifier: Matrix,
    pub classifier_bias: Vec<f64>,
}

/// Read-only view of one parameter tensor.
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

/// Mutable view of one parameter tensor.
#[derive(Debug)]
pub struct TensorMut<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a mut [f64],
}

impl GcnModel {
    /// A model with every tensor zero and norms at identity.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let sq = || Matrix::zeros(d, d);
        Ok(GcnModel {
            transforms: AffinityTransforms {
                w: sq(),
                w_prime: sq(),
            },
            g_weight: sq(),
            sim_weights: (0..config.layers).map(|_| sq()).collect(),
            st_weights: (0..config.layers)
                .map(|_| StWeights {
                    front: sq(),
                    back: sq(),
                })
                .collect(),
            sim_norms: (0..config.layers).map(|_| NormParams::identity(d)).collect(),
            st_norms: (0..config.layers).map(|_| NormParams::identity(d)).collect(),
            classifier: Matrix::zeros(2 * d, config.classes),
            classifier_bias: vec![0.0; config.classes],
            config,
        })
    }

    /// Every parameter tensor, in the fixed order used by gradients and
    /// checkpoints. Vectors appear as `1 x n`.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        fn mat(name: String, m: &Matrix) -> TensorRef<'_> {
            TensorRef {
                name,
                rows: m.rows(),
                cols: m.cols(),
                data: m.data(),
            }
        }
        fn vector(name: String, v: &[f64]) -> TensorRef<'_> {
            TensorRef {
                name,
                rows: 1,
                cols: v.len(),
                data: v,
            }
        }
        out.push(mat("w".into(), &self.transforms.w));
        out.push(mat("w_prime".into(), &self.transforms.w_prime));
        out.push(mat("g_weight".into(), &self.g_weight));
        for (l, w) in self.sim_weights.iter().enumerate() {
            out.push(mat(format!("sim_weight.{l}"), w));
        }
        for (l, w) in self.st_weights.iter().enumerate() {
            out.push(mat(format!("st_front.{l}"), &w.front));
            out.push(mat(format!("st_back.{l}"), &w.back));
        }
        for (l, n) in self.sim_norms.iter().enumerate() {
            out.push(vector(format!("sim_norm.{l}.gain"), &n.gain));
            out.push(vector(format!("sim_norm.{l}.bias"), &n.bias));
        }
        for (l, n) in self.st_norms.iter().enumerate() {
            out.push(vector(format!("st_norm.{l}.gain"), &n.gain));
            out.push(vector(format!("st_norm.{l}.bias"), &n.bias));
        }
        out.push(mat("classifier".into(), &self.classifier));
        out.push(vector("classifier_bias".into(), &self.classifier_bias));
        out
    }

    /// Mutable counterpart of [`GcnModel::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        fn mat(name: String, m: &mut Matrix) -> TensorMut<'_> {
            let (rows, cols) = m.shape();
            TensorMut {
                name,
                rows,
                cols,
                data: m.data_mut(),
            }
        }
        fn vector(name: String, v: &mut [f64]) -> TensorMut<'_> {
            TensorMut {
                name,
                rows: 1,
                cols: v.len(),
                data: v,
            }
        }
        out.push(mat("w".into(), &mut self.transforms.w));
        out.push(mat("w_prime".into(), &mut self.transforms.w_prime));
        out.push(mat("g_weight".into(), &mut self.g_weight));
        for (l, w) in self.sim_weights.iter_mut().enumerate() {
            out.push(mat(format!("sim_weight.{l}"), w));
        }
        for (l, w) in self.st_weights.iter_mut().enumerate() {
            out.push(mat(format!("st_front.{l}"), &mut w.front));
            out.push(mat(format!("st_back.{l}"), &mut w.back));
        }
        for (l, n) in self.sim_norms.iter_mut().enumerate() {
            out.push(vector(format!("sim_norm.{l}.gain"), &mut n.gain));
            out.push(vector(format!("sim_norm.{l}.bias"), &mut n.bias));
        }
        for (l, n) in self.st_norms.iter_mut().enumerate() {
            out.push(vector(format!("st_norm.{l}.gain"), &mut n.gain));
            out.push(vector(format!("st_norm.{l}.bias"), &mut n.bias));
        }
        out.push(mat("classifier".into(), &mut self.classifier));
        out.push(vector("classifier_bias".into(), &mut self.classifier_bias));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Everything one clip contributes to a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoGraphInput {
    /// `N x d`, canonical (frame-major) node order.
    pub node_features: Matrix,
    pub g_sim: AdjacencyMatrix,
    pub g_front: AdjacencyMatrix,
    pub g_back: AdjacencyMatrix,
    pub global_feature: Vec<f64>,
}

impl VideoGraphInput {
    pub fn num_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let n = self.num_nodes();
        if n == 0 {
            return Err(Error::Empty {
                op: "VideoGraphInput",
            });
        }
        if self.node_features.cols() != d {
            return Err(Error::shape(
                "VideoGraphInput features",
                self.node_features.shape(),
                (n, d),
            ));
        }
        for g in [&self.g_sim, &self.g_front, &self.g_back] {
            if g.m.shape() != (n, n) {
                return Err(Error::shape("VideoGraphInput graph", g.m.shape(), (n, n)));
            }
        }
        if self.global_feature.len() != d {
            return Err(Error::Length {
                op: "VideoGraphInput global feature",
                left: d,
                right: self.global_feature.len(),
            });
        }
        Ok(())
    }
}

/// What follows a graph convolution's residual sum.
#[derive(Clone, Copy, Debug)]
pub enum PostOp<'a> {
    /// Raw pre-activation.
    Identity,
    /// `relu(layer_norm(z))`.
    NormRelu { norm: &'a NormParams, eps: f64 },
}

fn apply_post(z: Matrix, post: PostOp<'_>) -> Result<Matrix> {
    match post {
        PostOp::Identity => Ok(z),
        PostOp::NormRelu { norm, eps } => Ok(relu(&layer_norm(&z, &norm.gain, &norm.bias, eps)?)),
    }
}

/// One residual graph convolution: `post(G X W + X)`.
pub fn gcn_layer(g: &AdjacencyMatrix, x: &Matrix, w: &Matrix, post: PostOp<'_>) -> Result<Matrix> {
    let z = matmul(&matmul(&g.m, x)?, w)?.add(x)?;
    apply_post(z, post)
}

/// Multi-relation residual graph convolution: `post(Σᵢ Gᵢ X Wᵢ + X)`, one
/// unshared weight per graph.
pub fn gcn_layer_multi(
    gs: &[&AdjacencyMatrix],
    x: &Matrix,
    ws: &[&Matrix],
    post: PostOp<'_>,
) -> Result<Matrix> {
    if gs.len() != ws.len() {
        return Err(Error::Length {
            op: "gcn_layer_multi",
            left: gs.len(),
            right: ws.len(),
        });
    }
    if gs.is_empty() {
        return Err(Error::Empty {
            op: "gcn_layer_multi",
        });
    }
    let mut acc: Option<Matrix> = None;
    for (g, w) in gs.iter().zip(ws) {
        let term = matmul(&matmul(&g.m, x)?, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    let z = acc.expect("nonempty").add(x)?;
    apply_post(z, post)
}

/// Non-local block over proposals: `Y = G_sim(X) · X gᵀ`, `Z = Y W + X`,
/// with no normalization.
pub fn nonlocal_block(
    x: &Matrix,
    t: &AffinityTransforms,
    g_weight: &Matrix,
    w: &Matrix,
) -> Result<Matrix> {
    let g_sim = crate::graphs::build_similarity_graph(x, t)?;
    let y = matmul(&g_sim.m, &matmul_nt(x, g_weight)?)?;
    matmul(&y, w)?.add(x)
}

/// Max-pools per-clip score vectors into one video score vector.
pub fn aggregate_clips(clip_logits: &[Vec<f64>]) -> Result<Vec<f64>> {
    linalg::max_elementwise(clip_logits)
}

/// Source of the similarity adjacency for a traced forward pass.
#[derive(Clone, Copy, Debug)]
pub enum SimSource<'a> {
    /// Use a precomputed adjacency as a constant.
    Given(&'a Matrix),
    /// Recompute it from the node features and the model's transforms, so
    /// gradients reach `w` and `w'`.
    Learned,
}

/// Handles into a recorded forward pass.
#[derive(Debug)]
pub struct Trace {
    pub tape: Tape,
    /// One leaf per tensor, in [`GcnModel::tensors`] order.
    pub params: Vec<Var>,
    pub sim_graph: Var,
    /// Per-layer residual sums of each branch, before norm/ReLU.
    pub branch_a_pre: Vec<Var>,
    pub branch_b_pre: Vec<Var>,
    pub node_out: Var,
    /// `1 x 2d` pooled GCN feature ⧺ global feature, after dropout.
    pub pooled: Var,
    /// `1 x C`.
    pub logits: Var,
}

/// Records the full forward pass on a fresh tape. `dropout_mask` (a
/// `1 x 2d` row) multiplies the pooled vector when present.
pub fn trace(
    model: &GcnModel,
    input: &VideoGraphInput,
    sim: SimSource<'_>,
    dropout_mask: Option<Matrix>,
) -> Result<Trace> {
    let cfg = &model.config;
    input.validate(cfg.d)?;
    let mut tape = Tape::new();
    let params: Vec<Var> = model
        .tensors()
        .into_iter()
        .map(|t| {
            let m = Matrix::from_vec(t.rows, t.cols, t.data.to_vec())
                .expect("tensor views are consistent");
            tape.param(m)
        })
        .collect();
    let layers = cfg.layers;
    // Indices follow `GcnModel::tensors`.
    let (w, w_prime, g_weight) = (params[0], params[1], params[2]);
    let sim_w = &params[3..3 + layers];
    let st_w = &params[3 + layers..3 + 3 * layers];
    let sim_norm = &params[3 + 3 * layers..3 + 5 * layers];
    let st_norm = &params[3 + 5 * layers..3 + 7 * layers];
    let classifier = params[3 + 7 * layers];
    let classifier_bias = params[4 + 7 * layers];

    let x = tape.constant(input.node_features.clone());
    let sim_graph = match sim {
        SimSource::Given(m) => tape.constant(m.clone()),
        SimSource::Learned => {
            let left = tape.matmul_nt(x, w)?;
            let right = tape.matmul_nt(x, w_prime)?;
            let f = tape.matmul_nt(left, right)?;
            tape.softmax_rows(f)
        }
    };
    let front = tape.constant(input.g_front.m.clone());
    let back = tape.constant(input.g_back.m.clone());

    let post = |tape: &mut Tape, z: Var, l: usize, norms: &[Var]| -> Result<Var> {
        if l + 1 < layers || cfg.norm_last_layer {
            let n = tape.layer_norm(z, norms[2 * l], norms[2 * l + 1], cfg.eps)?;
            Ok(tape.relu(n))
        } else {
            Ok(z)
        }
    };

    // Branch A: similarity graph.
    let mut branch_a_pre = Vec::with_capacity(layers);
    let mut h = x;
    for l in 0..layers {
        let (input_l, residual) = if l == 0 {
            (tape.matmul_nt(x, g_weight)?, x)
        } else {
            (h, h)
        };
        let gx = tape.matmul(sim_graph, input_l)?;
        let prop = tape.matmul(gx, sim_w[l])?;
        let z = tape.add(prop, residual)?;
        branch_a_pre.push(z);
        h = post(&mut tape, z, l, sim_norm)?;
    }
    let branch_a = h;

    // Branch B: front + back graphs.
    let mut branch_b_pre = Vec::with_capacity(layers);
    let mut h = x;
    for l in 0..layers {
        let fx = tape.matmul(front, h)?;
        let ft = tape.matmul(fx, st_w[2 * l])?;
        let bx = tape.matmul(back, h)?;
        let bt = tape.matmul(bx, st_w[2 * l + 1])?;
        let sum = tape.add(ft, bt)?;
        let z = tape.add(sum, h)?;
        branch_b_pre.push(z);
        h = post(&mut tape, z, l, st_norm)?;
    }
    let branch_b = h;

    let node_out = tape.add(branch_a, branch_b)?;
    let pooled_nodes = tape.mean_rows(node_out)?;
    let global = tape.constant(Matrix::row_vector(&input.global_feature));
    let mut pooled = tape.concat_cols(pooled_nodes, global)?;
    if let Some(mask) = dropout_mask {
        pooled = tape.mask(pooled, mask)?;
    }
    let scores = tape.matmul(pooled, classifier)?;
    let logits = tape.add_row(scores, classifier_bias)?;

    Ok(Trace {
        tape,
        params,
        sim_graph,
        branch_a_pre,
        branch_b_pre,
        node_out,
        pooled,
        logits,
    })
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 - rate)`.
pub fn dropout_mask(rate: f64, width: usize, rng: &mut dyn RngCore) -> Matrix {
    let keep = 1.0 - rate;
    let data = (0..width)
        .map(|_| {
            if rate > 0.0 && rng.random::<f64>() < rate {
                0.0
            } else {
                1.0 / keep
            }
        })
        .collect();
    Matrix::from_vec(1, width, data).expect("1 x width")
}

/// Output of [`forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    /// `N x d` summed branch outputs.
    pub node_out: Matrix,
}

/// Runs the model on one clip using the adjacencies stored in `input`.
/// Passing an RNG switches on training-mode dropout.
pub fn forward(
    model: &GcnModel,
    input: &VideoGraphInput,
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<ForwardOutput> {
    let mask = dropout_rng.map(|rng| dropout_mask(model.config.dropout, 2 * model.config.d, rng));
    let t = trace(model, input, SimSource::Given(&input.g_sim.m), mask)?;
    Ok(ForwardOutput {
        logits: t.tape.value(t.logits).data().to_vec(),
        node_out: t.tape.value(t.node_out).clone(),
    })
}
