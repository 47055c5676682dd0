//! Reverse-mode differentiation over a closed set of batched node kinds.
//!
//! Values are row-major matrices whose rows are batch items. The node set
//! covers what the VAE objectives need and nothing more: affine layers,
//! pointwise nonlinearities, squared norms, the reparameterized Gaussian
//! sample and the Gaussian-to-standard-normal KL with a Cholesky-factored
//! covariance.

use super::{AutodiffError, GradSet, ParamId, ParamSet};
use crate::linalg::{lower_index, lower_len, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Param(ParamId),
    Const,
    /// `x · wᵀ + b` with `w` shaped `out × in` and `b` shaped `1 × out`.
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Per-row `Σ x²`, shape `B × 1`.
    RowSquaredNorm(NodeId),
    /// Per-row `Σ x`, shape `B × 1`.
    RowSum(NodeId),
    /// Per-row KL( N(mean, L Lᵀ) ‖ N(0, I) ), `L` built from `diag_raw` and
    /// `lower`, shape `B × 1`.
    GaussianKl {
        mean: NodeId,
        diag_raw: NodeId,
        lower: Option<NodeId>,
    },
    /// `mean + L · noise` per row; the noise is a constant.
    Reparam {
        mean: NodeId,
        diag_raw: NodeId,
        lower: Option<NodeId>,
        noise: Matrix,
    },
    /// Mean over all entries, `1 × 1`.
    Mean(NodeId),
    /// Sum over all entries, `1 × 1`.
    Sum(NodeId),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Const => "const",
            Op::Affine { .. } => "affine",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::RowSquaredNorm(_) => "row_squared_norm",
            Op::RowSum(_) => "row_sum",
            Op::GaussianKl { .. } => "gaussian_kl",
            Op::Reparam { .. } => "reparam",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
        }
    }
}

struct Node {
    op: Op,
    value: Matrix,
}

/// A recorded forward computation against one [`ParamSet`].
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    first_non_finite: Option<usize>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            first_non_finite: None,
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.shape(), (1, 1));
        v.as_slice()[0]
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        let idx = self.nodes.len();
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some(idx);
        }
        self.nodes.push(Node { op, value });
        NodeId(idx)
    }

    fn shape_err(&self, op: &'static str, a: NodeId, b: (usize, usize)) -> AutodiffError {
        AutodiffError::NodeShape {
            op,
            left: self.value(a).shape(),
            right: b,
        }
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let v = self.params.value(id).clone();
        self.push(Op::Param(id), v)
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<NodeId, AutodiffError> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        Ok(self.param(id))
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Const, value)
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.cols() || bv.shape() != (1, wv.rows()) {
            return Err(self.shape_err("affine", x, wv.shape()));
        }
        let mut out = xv.matmul_transposed(wv).expect("checked shapes");
        let bias = bv.as_slice();
        for i in 0..out.rows() {
            out.row_mut(i).iter_mut().zip(bias).for_each(|(o, b)| *o += b);
        }
        Ok(self.push(Op::Affine { x, w, b }, out))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), v)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), v)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::exp);
        self.push(Op::Exp(x), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let v = self
            .value(a)
            .add(self.value(b))
            .map_err(|_| self.shape_err("add", a, self.value(b).shape()))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let v = self
            .value(a)
            .sub(self.value(b))
            .map_err(|_| self.shape_err("sub", a, self.value(b).shape()))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).scale(c);
        self.push(Op::Scale(x, c), v)
    }

    pub fn row_squared_norm(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.row_iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
        let v = Matrix::from_raw(xv.rows(), 1, data);
        self.push(Op::RowSquaredNorm(x), v)
    }

    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.row_iter().map(|r| r.iter().sum()).collect();
        let v = Matrix::from_raw(xv.rows(), 1, data);
        self.push(Op::RowSum(x), v)
    }

    fn check_gaussian(
        &self,
        op: &'static str,
        mean: NodeId,
        diag_raw: NodeId,
        lower: Option<NodeId>,
    ) -> Result<(), AutodiffError> {
        let (b, d) = self.value(mean).shape();
        if self.value(diag_raw).shape() != (b, d) {
            return Err(self.shape_err(op, mean, self.value(diag_raw).shape()));
        }
        match lower {
            Some(l) if self.value(l).shape() != (b, lower_len(d)) => {
                Err(self.shape_err(op, mean, self.value(l).shape()))
            }
            None if lower_len(d) != 0 => Err(self.shape_err(op, mean, (b, 0))),
            _ => Ok(()),
        }
    }

    pub fn gaussian_kl(
        &mut self,
        mean: NodeId,
        diag_raw: NodeId,
        lower: Option<NodeId>,
    ) -> Result<NodeId, AutodiffError> {
        self.check_gaussian("gaussian_kl", mean, diag_raw, lower)?;
        let (b, d) = self.value(mean).shape();
        let mut out = Vec::with_capacity(b);
        for r in 0..b {
            let mu = self.value(mean).row(r);
            let dr = self.value(diag_raw).row(r);
            let mut acc: f64 = mu.iter().map(|m| m * m).sum();
            acc += dr.iter().map(|&v| (2.0 * v).exp() - 2.0 * v).sum::<f64>();
            if let Some(l) = lower {
                acc += self.value(l).row(r).iter().map(|u| u * u).sum::<f64>();
            }
            out.push(0.5 * (acc - d as f64));
        }
        let v = Matrix::from_raw(b, 1, out);
        Ok(self.push(Op::GaussianKl { mean, diag_raw, lower }, v))
    }

    pub fn reparam(
        &mut self,
        mean: NodeId,
        diag_raw: NodeId,
        lower: Option<NodeId>,
        noise: Matrix,
    ) -> Result<NodeId, AutodiffError> {
        self.check_gaussian("reparam", mean, diag_raw, lower)?;
        let (b, d) = self.value(mean).shape();
        if noise.shape() != (b, d) {
            return Err(self.shape_err("reparam", mean, noise.shape()));
        }
        let mut out = self.value(mean).clone();
        for r in 0..b {
            let dr = self.value(diag_raw).row(r);
            let eps = noise.row(r);
            let low = lower.map(|l| self.value(l).row(r));
            let z = out.row_mut(r);
            for i in 0..d {
                z[i] += dr[i].exp() * eps[i];
                if let Some(u) = low {
                    for j in 0..i {
                        z[i] += u[lower_index(i, j)] * eps[j];
                    }
                }
            }
        }
        Ok(self.push(
            Op::Reparam {
                mean,
                diag_raw,
                lower,
                noise,
            },
            out,
        ))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x).as_slice();
        let m = xv.iter().sum::<f64>() / xv.len().max(1) as f64;
        self.push(Op::Mean(x), Matrix::from_raw(1, 1, vec![m]))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).as_slice().iter().sum::<f64>();
        self.push(Op::Sum(x), Matrix::from_raw(1, 1, vec![s]))
    }

    /// Gradient of the scalar node `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Result<GradSet, AutodiffError> {
        if let Some(idx) = self.first_non_finite.filter(|&i| i <= loss.0) {
            return Err(AutodiffError::NonFinite {
                node: idx,
                kind: self.nodes[idx].op.kind(),
                phase: "forward",
            });
        }
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(lv.shape()));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::from_raw(1, 1, vec![1.0]));
        let mut out = GradSet::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !g.is_finite() {
                return Err(AutodiffError::NonFinite {
                    node: idx,
                    kind: self.nodes[idx].op.kind(),
                    phase: "backward",
                });
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Param(pid) => {
                    let slot = out.value_mut(*pid);
                    slot.as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .for_each(|(s, v)| *s += v);
                }
                Op::Const => {}
                Op::Affine { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    accumulate(&mut grads, *x, g.matmul(wv).expect("affine shapes"));
                    accumulate(&mut grads, *w, g.transposed_matmul(xv).expect("affine shapes"));
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in g.row_iter() {
                        db.as_mut_slice().iter_mut().zip(r).for_each(|(d, v)| *d += v);
                    }
                    accumulate(&mut grads, *b, db);
                }
                Op::Tanh(x) => {
                    let dx = zip_map(&g, &node.value, |g, y| g * (1.0 - y * y));
                    accumulate(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let dx = zip_map(&g, self.value(*x), |g, v| if v > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, *x, dx);
                }
                Op::Exp(x) => {
                    let dx = zip_map(&g, &node.value, |g, y| g * y);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(x, c) => accumulate(&mut grads, *x, g.scale(*c)),
                Op::RowSquaredNorm(x) => {
                    let mut dx = self.value(*x).scale(2.0);
                    for r in 0..dx.rows() {
                        let gr = g.as_slice()[r];
                        dx.row_mut(r).iter_mut().for_each(|v| *v *= gr);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::RowSum(x) => {
                    let xv = self.value(*x);
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..dx.rows() {
                        let gr = g.as_slice()[r];
                        dx.row_mut(r).iter_mut().for_each(|v| *v = gr);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::GaussianKl { mean, diag_raw, lower } => {
                    let gcol = g.as_slice();
                    let mut dmu = self.value(*mean).clone();
                    let mut ddiag = self.value(*diag_raw).map(|v| (2.0 * v).exp() - 1.0);
                    for r in 0..dmu.rows() {
                        dmu.row_mut(r).iter_mut().for_each(|v| *v *= gcol[r]);
                        ddiag.row_mut(r).iter_mut().for_each(|v| *v *= gcol[r]);
                    }
                    accumulate(&mut grads, *mean, dmu);
                    accumulate(&mut grads, *diag_raw, ddiag);
                    if let Some(l) = lower {
                        let mut dl = self.value(*l).clone();
                        for r in 0..dl.rows() {
                            dl.row_mut(r).iter_mut().for_each(|v| *v *= gcol[r]);
                        }
                        accumulate(&mut grads, *l, dl);
                    }
                }
                Op::Reparam {
                    mean,
                    diag_raw,
                    lower,
                    noise,
                } => {
                    let drv = self.value(*diag_raw);
                    let (b, d) = drv.shape();
                    let mut ddiag = Matrix::zeros(b, d);
                    let mut dl = lower.map(|_| Matrix::zeros(b, lower_len(d)));
                    for r in 0..b {
                        let gr = g.row(r);
                        let eps = noise.row(r);
                        let dr = drv.row(r);
                        for i in 0..d {
                            ddiag[(r, i)] = gr[i] * dr[i].exp() * eps[i];
                        }
                        if let Some(dl) = dl.as_mut() {
                            let row = dl.row_mut(r);
                            for i in 1..d {
                                for j in 0..i {
                                    row[lower_index(i, j)] = gr[i] * eps[j];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *diag_raw, ddiag);
                    if let (Some(l), Some(dl)) = (lower, dl) {
                        accumulate(&mut grads, *l, dl);
                    }
                    accumulate(&mut grads, *mean, g);
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let n = xv.as_slice().len().max(1) as f64;
                    let gv = g.as_slice()[0] / n;
                    accumulate(&mut grads, *x, Matrix::from_raw(xv.rows(), xv.cols(), vec![gv; xv.as_slice().len()]));
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    let gv = g.as_slice()[0];
                    accumulate(&mut grads, *x, Matrix::from_raw(xv.rows(), xv.cols(), vec![gv; xv.as_slice().len()]));
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => existing
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .for_each(|(e, v)| *e += v),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_raw(a.rows(), a.cols(), data)
}
