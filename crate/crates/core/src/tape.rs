//! A small reverse-mode differentiation tape over dense matrices.
//!
//! Each operation appends a node holding its value and the indices of its
//! inputs. [`Tape::backward`] walks the nodes in reverse, accumulating
//! vector-Jacobian products. Nodes created with [`Tape::constant`] (and
//! anything computed only from constants) are skipped during the reverse
//! sweep.

use crate::error::{Error, Result};
use crate::linalg::{self, matmul, matmul_nt, matmul_tn, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    /// `a + 1·b` with `b` a single row broadcast over the rows of `a`.
    AddRow(Var, Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    MeanRows(Var),
    ConcatCols(Var, Var),
    /// Elementwise product with a fixed matrix.
    Mask(Var, Matrix),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` where nothing flowed.
#[derive(Debug)]
pub struct TapeGrads {
    grads: Vec<Option<Matrix>>,
}

impl TapeGrads {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of `shape` if nothing reached it.
    pub fn take_or_zeros(&mut self, v: Var, shape: (usize, usize)) -> Matrix {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A fixed input; no gradient is accumulated into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul_nt(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMulNt(a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(Error::shape("add_row", av.shape(), rv.shape()));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (o, &b) in value.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push(value, Op::AddRow(a, row), needs))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = linalg::softmax_rows(self.value(a));
        let needs = self.needs(a);
        self.push(value, Op::Softmax(a), needs)
    }

    /// Layer norm with `gain` and `bias` given as `1 x d` rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.shape() != (1, xv.cols()) || bv.shape() != (1, xv.cols()) {
            return Err(Error::shape("layer_norm", xv.shape(), gv.shape()));
        }
        let value = linalg::layer_norm(xv, gv.data(), bv.data(), eps)?;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let (mean, s) = linalg::row_stats(xv.row(r), eps);
            xhat.row_mut(r).iter_mut().for_each(|v| *v = (*v - mean) * s);
            inv_std.push(s);
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = linalg::relu(self.value(a));
        let needs = self.needs(a);
        self.push(value, Op::Relu(a), needs)
    }

    /// Mean over rows, as a `1 x d` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::row_vector(&linalg::mean_rows(self.value(a))?);
        let needs = self.needs(a);
        Ok(self.push(value, Op::MeanRows(a), needs))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).concat_cols(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatCols(a, b), needs))
    }

    pub fn mask(&mut self, a: Var, mask: Matrix) -> Result<Var> {
        let value = self.value(a).hadamard(&mask)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Mask(a, mask), needs))
    }

    /// Reverse sweep from `output` seeded with `seed` (same shape as the
    /// output's value).
    pub fn backward(&self, output: Var, seed: Matrix) -> Result<TapeGrads> {
        let out_shape = self.value(output).shape();
        if seed.shape() != out_shape {
            return Err(Error::shape("backward", out_shape, seed.shape()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                // Leaves keep their gradient for the caller.
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, matmul_nt(&g, self.value(*b))?)?;
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, matmul_tn(self.value(*a), &g)?)?;
                    }
                }
                Op::MatMulNt(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, matmul(&g, self.value(*b))?)?;
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, matmul_tn(&g, self.value(*a))?)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone())?;
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        accumulate(&mut grads, *row, Matrix::row_vector(&column_sums(&g)))?;
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g)?;
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut dx = g;
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dot: f64 = dx.row(r).iter().zip(yr).map(|(d, y)| d * y).sum();
                        for (d, &yv) in dx.row_mut(r).iter_mut().zip(yr) {
                            *d = yv * (*d - dot);
                        }
                    }
                    accumulate(&mut grads, *a, dx)?;
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gain_v = self.value(*gain).data();
                    if self.needs(*gain) {
                        let dgain = column_sums(&g.hadamard(xhat)?);
                        accumulate(&mut grads, *gain, Matrix::row_vector(&dgain))?;
                    }
                    if self.needs(*bias) {
                        accumulate(&mut grads, *bias, Matrix::row_vector(&column_sums(&g)))?;
                    }
                    if self.needs(*x) {
                        let d = xhat.cols() as f64;
                        let mut dx = Matrix::zeros(xhat.rows(), xhat.cols());
                        for r in 0..xhat.rows() {
                            let dxhat: Vec<f64> =
                                g.row(r).iter().zip(gain_v).map(|(a, b)| a * b).collect();
                            let sum: f64 = dxhat.iter().sum();
                            let dot: f64 = dxhat.iter().zip(xhat.row(r)).map(|(a, b)| a * b).sum();
                            let s = inv_std[r] / d;
                            for ((o, &dh), &xh) in
                                dx.row_mut(r).iter_mut().zip(&dxhat).zip(xhat.row(r))
                            {
                                *o = s * (d * dh - sum - xh * dot);
                            }
                        }
                        accumulate(&mut grads, *x, dx)?;
                    }
                }
                Op::Relu(a) => {
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, dx)?;
                }
                Op::MeanRows(a) => {
                    let rows = self.value(*a).rows();
                    let scaled: Vec<f64> = g.data().iter().map(|v| v / rows as f64).collect();
                    let dx = Matrix::from_fn(rows, scaled.len(), |_, c| scaled[c]);
                    accumulate(&mut grads, *a, dx)?;
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    if self.needs(*a) {
                        let da = Matrix::from_fn(g.rows(), ca, |r, c| g.get(r, c));
                        accumulate(&mut grads, *a, da)?;
                    }
                    if self.needs(*b) {
                        let cb = self.value(*b).cols();
                        let db = Matrix::from_fn(g.rows(), cb, |r, c| g.get(r, ca + c));
                        accumulate(&mut grads, *b, db)?;
                    }
                }
                Op::Mask(a, mask) => {
                    accumulate(&mut grads, *a, g.hadamard(mask)?)?;
                }
            }
        }
        Ok(TapeGrads { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, &v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Checks d(sum(out ⊙ probe))/d(input) against central differences.
    fn check(build: impl Fn(&mut Tape, Var) -> Var, input: Matrix, probe_seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
        let scalar = |m: &Matrix, probe: &Matrix| -> f64 {
            let mut t = Tape::new();
            let x = t.param(m.clone());
            let out = build(&mut t, x);
            t.value(out).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let mut t = Tape::new();
        let x = t.param(input.clone());
        let out = build(&mut t, x);
        let probe = random(t.value(out).rows(), t.value(out).cols(), &mut rng);
        let mut grads = t.backward(out, probe.clone()).unwrap();
        let analytic = grads.take_or_zeros(x, input.shape());
        let h = 1e-6;
        for i in 0..input.data().len() {
            let mut plus = input.clone();
            plus.data_mut()[i] += h;
            let mut minus = input.clone();
            minus.data_mut()[i] -= h;
            let numeric = (scalar(&plus, &probe) - scalar(&minus, &probe)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!(
                (a - numeric).abs() <= 1e-6 * (1.0 + a.abs().max(numeric.abs())),
                "entry {i}: analytic {a} numeric {numeric}"
            );
        }
    }

    #[test]
    fn matmul_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random(3, 2, &mut rng);
        let b2 = b.clone();
        check(
            move |t, x| {
                let c = t.constant(b2.clone());
                t.matmul(x, c).unwrap()
            },
            random(4, 3, &mut rng),
            2,
        );
        let a = random(4, 3, &mut rng);
        check(
            move |t, x| {
                let c = t.constant(a.clone());
                let p = t.matmul_nt(c, x).unwrap();
                t.matmul(p, x).unwrap()
            },
            random(5, 3, &mut rng),
            3,
        );
        let _ = b;
    }

    #[test]
    fn softmax_and_norm_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        check(|t, x| t.softmax_rows(x), random(3, 5, &mut rng), 5);
        let gain = random(1, 4, &mut rng);
        let bias = random(1, 4, &mut rng);
        check(
            move |t, x| {
                let g = t.constant(gain.clone());
                let b = t.constant(bias.clone());
                t.layer_norm(x, g, b, 1e-5).unwrap()
            },
            random(3, 4, &mut rng),
            6,
        );
        // Gain and bias as the differentiated input.
        let xs = random(3, 4, &mut rng);
        check(
            move |t, g| {
                let x = t.constant(xs.clone());
                t.layer_norm(x, g, g, 1e-5).unwrap()
            },
            random(1, 4, &mut rng),
            7,
        );
    }

    #[test]
    fn pooling_concat_mask_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mask = random(1, 6, &mut rng);
        check(
            move |t, x| {
                let m = t.mean_rows(x).unwrap();
                let r = t.relu(m);
                let c = t.concat_cols(r, m).unwrap();
                let row = t.mean_rows(x).unwrap();
                let c = t.mask(c, mask.clone()).unwrap();
                let sq = t.concat_cols(row, row).unwrap();
                t.add(c, sq).unwrap()
            },
            random(4, 3, &mut rng),
            9,
        );
        let row = random(1, 3, &mut rng);
        check(
            move |t, x| {
                let r = t.constant(row.clone());
                let y = t.add_row(x, r).unwrap();
                let m = t.mean_rows(x).unwrap();
                t.add_row(y, m).unwrap()
            },
            random(4, 3, &mut rng),
            10,
        );
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::filled(2, 2, 1.0));
        let p = t.param(Matrix::identity(2));
        let y = t.matmul(c, p).unwrap();
        let grads = t.backward(y, Matrix::filled(2, 2, 1.0)).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap(), &Matrix::filled(2, 2, 2.0));
    }

    #[test]
    fn backward_rejects_seed_shape() {
        let mut t = Tape::new();
        let p = t.param(Matrix::identity(2));
        assert!(t.backward(p, Matrix::zeros(1, 2)).is_err());
    }
}
