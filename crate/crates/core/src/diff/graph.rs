//! Wengert-tape computation graph.
//!
//! Forward calls append nodes (value + enough saved state for the backward
//! rule); `backward` replays the tape in reverse and accumulates gradients
//! additively into the [`ParamStore`]. Graphs are single-threaded and
//! throwaway: build, backward, drop.

use std::collections::HashMap;

use super::linalg;
use super::params::{ParamId, ParamStore};
use super::tensor::{matmul, transpose, Scalar, Tensor};
use super::DiffError;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op<S> {
    Leaf { param: Option<ParamId> },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a (r x c) + b (1 x c)` broadcast over rows.
    AddRow(Var, Var),
    Scale(Var, S),
    AddConst(Var, S),
    Sigmoid(Var),
    Tanh(Var),
    /// Row-wise softmax; the saved output is the node value itself.
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<S>,
        inv_std: Vec<S>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
    },
    RowsSlice {
        x: Var,
        start: usize,
    },
    ColsSlice {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    SumAll(Var),
    SegmentMeans {
        x: Var,
        bounds: Vec<usize>,
    },
    Pinv {
        a: Var,
        z: Tensor<S>,
    },
    BceSum {
        probs: Var,
        targets: Tensor<S>,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Probability clamp applied inside [`Graph::bce_sum`] before the log.
pub(crate) const BCE_CLAMP: f64 = 1e-7;

pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    param_cache: HashMap<ParamId, Var>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_cache: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        debug_assert!(value.all_finite(), "non-finite forward value");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Constant/input leaf. Gradient flowing into it is discarded.
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf { param: None })
    }

    /// Parameter leaf: snapshots the current value; backward accumulates
    /// into the store entry. Repeated calls with the same id share a node,
    /// so weight sharing needs no special casing.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&v) = self.param_cache.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf { param: Some(id) });
        self.param_cache.insert(id, v);
        v
    }

    fn expect_matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize), DiffError> {
        let t = self.value(v);
        if !t.is_matrix() {
            return Err(DiffError::BadShape {
                op,
                expected: "a 2-d tensor".into(),
                got: t.shape().to_vec(),
            });
        }
        Ok((t.rows(), t.cols()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (_, k) = self.expect_matrix(a, "matmul")?;
        let (k2, _) = self.expect_matrix(b, "matmul")?;
        if k != k2 {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let out = matmul(self.value(a), self.value(b));
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, DiffError> {
        self.expect_matrix(a, "transpose")?;
        let out = transpose(self.value(a));
        Ok(self.push(out, Op::Transpose(a)))
    }

    fn elementwise(
        &mut self,
        a: Var,
        b: Var,
        op_name: &'static str,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<Var, DiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(DiffError::ShapeMismatch {
                op: op_name,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data);
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (r, c) = self.expect_matrix(a, "add_row")?;
        let (br, bc) = self.expect_matrix(b, "add_row")?;
        if br != 1 || bc != c {
            return Err(DiffError::ShapeMismatch {
                op: "add_row",
                lhs: vec![r, c],
                rhs: vec![br, bc],
            });
        }
        let bd = self.value(b).data().to_vec();
        let mut out = self.value(a).clone();
        for i in 0..r {
            for j in 0..c {
                *out.at_mut(i, j) = out.at(i, j) + bd[j];
            }
        }
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: S) -> Var {
        let out = self.value(a).map(|v| v + c);
        self.push(out, Op::AddConst(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -S::one())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| S::one() / (S::one() + (-v).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.tanh());
        self.push(out, Op::Tanh(a))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var, DiffError> {
        let (r, c) = self.expect_matrix(a, "softmax")?;
        let mut out = self.value(a).clone();
        for i in 0..r {
            let row = &mut out.data_mut()[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(S::neg_infinity(), |m, v| m.max(v));
            let mut sum = S::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        Ok(self.push(out, Op::Softmax(a)))
    }

    /// Per-row layer norm with affine rescale: `xhat * gamma + beta`,
    /// denominator `sqrt(var + eps)` so constant rows map to zero.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: S,
    ) -> Result<Var, DiffError> {
        let (r, c) = self.expect_matrix(x, "layer_norm")?;
        for (v, name) in [(gamma, "gamma"), (beta, "beta")] {
            let (vr, vc) = self.expect_matrix(v, "layer_norm")?;
            if vr != 1 || vc != c {
                return Err(DiffError::BadShape {
                    op: "layer_norm",
                    expected: format!("{name} of shape [1, {c}]"),
                    got: vec![vr, vc],
                });
            }
        }
        let xv = self.value(x);
        let mut xhat = Tensor::<S>::zeros(vec![r, c]);
        let mut inv_std = vec![S::zero(); r];
        let nc = S::from_usize(c).unwrap();
        for i in 0..r {
            let mut mean = S::zero();
            for j in 0..c {
                mean = mean + xv.at(i, j);
            }
            mean = mean / nc;
            let mut var = S::zero();
            for j in 0..c {
                let d = xv.at(i, j) - mean;
                var = var + d * d;
            }
            var = var / nc;
            let istd = S::one() / (var + eps).sqrt();
            inv_std[i] = istd;
            for j in 0..c {
                *xhat.at_mut(i, j) = (xv.at(i, j) - mean) * istd;
            }
        }
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let mut out = Tensor::<S>::zeros(vec![r, c]);
        for i in 0..r {
            for j in 0..c {
                *out.at_mut(i, j) = xhat.at(i, j) * gv[j] + bv[j];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Temporal conv over rows: `x` is `T x c_in`, `w` is `[c_out, c_in, k]`
    /// (k odd), `b` is `1 x c_out`; same zero padding, output `T x c_out`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
        let (t, c_in) = self.expect_matrix(x, "conv1d")?;
        let wshape = self.value(w).shape().to_vec();
        if wshape.len() != 3 || wshape[1] != c_in || wshape[2] % 2 == 0 {
            return Err(DiffError::BadShape {
                op: "conv1d",
                expected: format!("weights [c_out, {c_in}, odd k]"),
                got: wshape,
            });
        }
        let (c_out, k) = (wshape[0], wshape[2]);
        let (br, bc) = self.expect_matrix(b, "conv1d")?;
        if br != 1 || bc != c_out {
            return Err(DiffError::BadShape {
                op: "conv1d",
                expected: format!("bias [1, {c_out}]"),
                got: vec![br, bc],
            });
        }
        let pad = k / 2;
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut out = Tensor::<S>::zeros(vec![t, c_out]);
        for ti in 0..t {
            for o in 0..c_out {
                let mut acc = bv.data()[o];
                for kk in 0..k {
                    let src = ti as isize + kk as isize - pad as isize;
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    let src = src as usize;
                    for i in 0..c_in {
                        acc = acc + wv.data()[o * c_in * k + i * k + kk] * xv.at(src, i);
                    }
                }
                *out.at_mut(ti, o) = acc;
            }
        }
        Ok(self.push(out, Op::Conv1d { x, w, b }))
    }

    pub fn rows_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let (r, c) = self.expect_matrix(x, "rows_slice")?;
        if len == 0 || start + len > r {
            return Err(DiffError::BadShape {
                op: "rows_slice",
                expected: format!("rows [{start}, {}) within {r}", start + len),
                got: vec![r, c],
            });
        }
        let xv = self.value(x);
        let data = xv.data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Tensor::matrix(len, c, data), Op::RowsSlice { x, start }))
    }

    pub fn cols_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let (r, c) = self.expect_matrix(x, "cols_slice")?;
        if len == 0 || start + len > c {
            return Err(DiffError::BadShape {
                op: "cols_slice",
                expected: format!("cols [{start}, {}) within {c}", start + len),
                got: vec![r, c],
            });
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xv.data()[i * c + start..i * c + start + len]);
        }
        Ok(self.push(Tensor::matrix(r, len, data), Op::ColsSlice { x, start }))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var, DiffError> {
        if xs.is_empty() {
            return Err(DiffError::BadHyper("concat_rows of zero inputs".into()));
        }
        let (_, c) = self.expect_matrix(xs[0], "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &v in xs {
            let (r, vc) = self.expect_matrix(v, "concat_rows")?;
            if vc != c {
                return Err(DiffError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![rows, c],
                    rhs: vec![r, vc],
                });
            }
            rows += r;
            data.extend_from_slice(self.value(v).data());
        }
        Ok(self.push(Tensor::matrix(rows, c, data), Op::ConcatRows(xs.to_vec())))
    }

    /// Column-wise mean over rows: `T x d -> 1 x d`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, DiffError> {
        let (r, c) = self.expect_matrix(x, "mean_rows")?;
        let xv = self.value(x);
        let nr = S::from_usize(r).unwrap();
        let mut data = vec![S::zero(); c];
        for i in 0..r {
            for j in 0..c {
                data[j] = data[j] + xv.at(i, j);
            }
        }
        for d in data.iter_mut() {
            *d = *d / nr;
        }
        Ok(self.push(Tensor::row(data), Op::MeanRows(x)))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self
            .value(x)
            .data()
            .iter()
            .fold(S::zero(), |acc, &v| acc + v);
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Means of contiguous row segments: `bounds` has `m + 1` strictly
    /// increasing entries spanning `[0, T]`. Output is `m x d`.
    pub fn segment_means(&mut self, x: Var, bounds: &[usize]) -> Result<Var, DiffError> {
        let (t, c) = self.expect_matrix(x, "segment_means")?;
        let ok = bounds.len() >= 2
            && bounds[0] == 0
            && *bounds.last().unwrap() == t
            && bounds.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(DiffError::BadHyper(format!(
                "segment bounds {bounds:?} invalid for {t} rows"
            )));
        }
        let m = bounds.len() - 1;
        let xv = self.value(x);
        let mut out = Tensor::<S>::zeros(vec![m, c]);
        for s in 0..m {
            let len = S::from_usize(bounds[s + 1] - bounds[s]).unwrap();
            for i in bounds[s]..bounds[s + 1] {
                for j in 0..c {
                    *out.at_mut(s, j) = out.at(s, j) + xv.at(i, j);
                }
            }
            for j in 0..c {
                *out.at_mut(s, j) = out.at(s, j) / len;
            }
        }
        Ok(self.push(
            out,
            Op::SegmentMeans {
                x,
                bounds: bounds.to_vec(),
            },
        ))
    }

    /// Moore-Penrose pseudo-inverse of a square matrix (SVD with relative
    /// singular-value cutoff 1e-8).
    pub fn pinv(&mut self, a: Var) -> Result<Var, DiffError> {
        let (r, c) = self.expect_matrix(a, "pinv")?;
        if r != c {
            return Err(DiffError::BadShape {
                op: "pinv",
                expected: "a square matrix".into(),
                got: vec![r, c],
            });
        }
        let z = linalg::pinv(self.value(a));
        Ok(self.push(z.clone(), Op::Pinv { a, z }))
    }

    /// Summed binary cross-entropy of `probs` against fixed 0/1 `targets`,
    /// probabilities clamped to `[1e-7, 1 - 1e-7]` before the log.
    pub fn bce_sum(&mut self, probs: Var, targets: &Tensor<S>) -> Result<Var, DiffError> {
        if self.value(probs).shape() != targets.shape() {
            return Err(DiffError::ShapeMismatch {
                op: "bce_sum",
                lhs: self.value(probs).shape().to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        let lo = S::from_f64_lit(BCE_CLAMP);
        let hi = S::one() - lo;
        let mut loss = S::zero();
        for (&p, &t) in self.value(probs).data().iter().zip(targets.data()) {
            let pc = p.max(lo).min(hi);
            loss = loss - (t * pc.ln() + (S::one() - t) * (S::one() - pc).ln());
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceSum {
                probs,
                targets: targets.clone(),
            },
        ))
    }

    /// Reverse pass from a scalar `loss`; gradients are added into `store`
    /// (calling twice without a reset doubles them).
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<S>) -> Result<(), DiffError> {
        if !self.value(loss).is_scalar_shape() {
            return Err(DiffError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(
            self.value(loss).shape().to_vec(),
            vec![S::one()],
        ));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backward_op(idx, &g, &mut grads, store);
        }
        Ok(())
    }

    fn backward_op(
        &self,
        idx: usize,
        g: &Tensor<S>,
        grads: &mut [Option<Tensor<S>>],
        store: &mut ParamStore<S>,
    ) {
        let acc = |grads: &mut [Option<Tensor<S>>], v: Var, t: Tensor<S>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &self.nodes[idx].op {
            Op::Leaf { param } => {
                if let Some(id) = param {
                    store.accumulate_grad(*id, g);
                }
            }
            Op::MatMul(a, b) => {
                let da = matmul(g, &transpose(self.value(*b)));
                let db = matmul(&transpose(self.value(*a)), g);
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::Transpose(a) => acc(grads, *a, transpose(g)),
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(bv.data())
                        .map(|(&gv, &b)| gv * b)
                        .collect(),
                );
                let db = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gv, &a)| gv * a)
                        .collect(),
                );
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::AddRow(a, b) => {
                let (r, c) = (g.rows(), g.cols());
                let mut db = vec![S::zero(); c];
                for i in 0..r {
                    for j in 0..c {
                        db[j] = db[j] + g.at(i, j);
                    }
                }
                acc(grads, *a, g.clone());
                acc(grads, *b, Tensor::row(db));
            }
            Op::Scale(a, cst) => acc(grads, *a, g.map(|v| v * *cst)),
            Op::AddConst(a, _) => acc(grads, *a, g.clone()),
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &yv)| gv * yv * (S::one() - yv))
                        .collect(),
                );
                acc(grads, *a, da);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[idx].value;
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &yv)| gv * (S::one() - yv * yv))
                        .collect(),
                );
                acc(grads, *a, da);
            }
            Op::Softmax(a) => {
                let y = &self.nodes[idx].value;
                let (r, c) = (y.rows(), y.cols());
                let mut da = Tensor::<S>::zeros(vec![r, c]);
                for i in 0..r {
                    let mut dot = S::zero();
                    for j in 0..c {
                        dot = dot + g.at(i, j) * y.at(i, j);
                    }
                    for j in 0..c {
                        *da.at_mut(i, j) = y.at(i, j) * (g.at(i, j) - dot);
                    }
                }
                acc(grads, *a, da);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, c) = (g.rows(), g.cols());
                let nc = S::from_usize(c).unwrap();
                let gv = self.value(*gamma);
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                let mut dx = Tensor::<S>::zeros(vec![r, c]);
                for i in 0..r {
                    let mut mean_dxhat = S::zero();
                    let mut mean_dxhat_xhat = S::zero();
                    for j in 0..c {
                        let dy = g.at(i, j);
                        dgamma[j] = dgamma[j] + dy * xhat.at(i, j);
                        dbeta[j] = dbeta[j] + dy;
                        let dxh = dy * gv.data()[j];
                        mean_dxhat = mean_dxhat + dxh;
                        mean_dxhat_xhat = mean_dxhat_xhat + dxh * xhat.at(i, j);
                    }
                    mean_dxhat = mean_dxhat / nc;
                    mean_dxhat_xhat = mean_dxhat_xhat / nc;
                    for j in 0..c {
                        let dxh = g.at(i, j) * gv.data()[j];
                        *dx.at_mut(i, j) =
                            inv_std[i] * (dxh - mean_dxhat - xhat.at(i, j) * mean_dxhat_xhat);
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *gamma, Tensor::row(dgamma));
                acc(grads, *beta, Tensor::row(dbeta));
            }
            Op::Conv1d { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (t, c_in) = (xv.rows(), xv.cols());
                let (c_out, k) = (wv.shape()[0], wv.shape()[2]);
                let pad = k / 2;
                let mut dx = Tensor::<S>::zeros(vec![t, c_in]);
                let mut dw = Tensor::<S>::zeros(wv.shape().to_vec());
                let mut db = vec![S::zero(); c_out];
                for ti in 0..t {
                    for o in 0..c_out {
                        let go = g.at(ti, o);
                        if go == S::zero() {
                            continue;
                        }
                        db[o] = db[o] + go;
                        for kk in 0..k {
                            let src = ti as isize + kk as isize - pad as isize;
                            if src < 0 || src >= t as isize {
                                continue;
                            }
                            let src = src as usize;
                            for i in 0..c_in {
                                let widx = o * c_in * k + i * k + kk;
                                dw.data_mut()[widx] = dw.data()[widx] + go * xv.at(src, i);
                                *dx.at_mut(src, i) = dx.at(src, i) + go * wv.data()[widx];
                            }
                        }
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *w, dw);
                acc(grads, *b, Tensor::row(db));
            }
            Op::RowsSlice { x, start } => {
                let xv = self.value(*x);
                let mut dx = Tensor::<S>::zeros(xv.shape().to_vec());
                let c = xv.cols();
                for i in 0..g.rows() {
                    for j in 0..c {
                        *dx.at_mut(start + i, j) = g.at(i, j);
                    }
                }
                acc(grads, *x, dx);
            }
            Op::ColsSlice { x, start } => {
                let xv = self.value(*x);
                let mut dx = Tensor::<S>::zeros(xv.shape().to_vec());
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        *dx.at_mut(i, start + j) = g.at(i, j);
                    }
                }
                acc(grads, *x, dx);
            }
            Op::ConcatRows(xs) => {
                let mut row = 0;
                for &v in xs {
                    let r = self.value(v).rows();
                    let c = self.value(v).cols();
                    let mut dv = Tensor::<S>::zeros(vec![r, c]);
                    for i in 0..r {
                        for j in 0..c {
                            *dv.at_mut(i, j) = g.at(row + i, j);
                        }
                    }
                    row += r;
                    acc(grads, v, dv);
                }
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let (r, c) = (xv.rows(), xv.cols());
                let nr = S::from_usize(r).unwrap();
                let mut dx = Tensor::<S>::zeros(vec![r, c]);
                for i in 0..r {
                    for j in 0..c {
                        *dx.at_mut(i, j) = g.at(0, j) / nr;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::SumAll(x) => {
                let xv = self.value(*x);
                let gs = g.item();
                let dx = Tensor::new(xv.shape().to_vec(), vec![gs; xv.len()]);
                acc(grads, *x, dx);
            }
            Op::SegmentMeans { x, bounds } => {
                let xv = self.value(*x);
                let (_, c) = (xv.rows(), xv.cols());
                let mut dx = Tensor::<S>::zeros(xv.shape().to_vec());
                for s in 0..bounds.len() - 1 {
                    let len = S::from_usize(bounds[s + 1] - bounds[s]).unwrap();
                    for i in bounds[s]..bounds[s + 1] {
                        for j in 0..c {
                            *dx.at_mut(i, j) = g.at(s, j) / len;
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Pinv { a, z } => {
                // d/dA of the pseudo-inverse (Golub-Pereyra differential):
                // dA = -Z^T G Z^T + (I - A Z) G^T Z Z^T + Z^T Z G^T (I - Z A)
                let av = self.value(*a);
                let n = av.rows();
                let zt = transpose(z);
                let term1 = matmul(&matmul(&zt, g), &zt).map(|v| -v);
                let gt = transpose(g);
                let az = matmul(av, z);
                let mut i_az = Tensor::<S>::eye(n);
                for p in 0..n {
                    for q in 0..n {
                        *i_az.at_mut(p, q) = i_az.at(p, q) - az.at(p, q);
                    }
                }
                let zzt = matmul(z, &zt);
                let term2 = matmul(&matmul(&i_az, &gt), &zzt);
                let za = matmul(z, av);
                let mut i_za = Tensor::<S>::eye(n);
                for p in 0..n {
                    for q in 0..n {
                        *i_za.at_mut(p, q) = i_za.at(p, q) - za.at(p, q);
                    }
                }
                let ztz = matmul(&zt, z);
                let term3 = matmul(&matmul(&ztz, &gt), &i_za);
                let mut da = term1;
                da.add_assign(&term2);
                da.add_assign(&term3);
                acc(grads, *a, da);
            }
            Op::BceSum { probs, targets } => {
                let pv = self.value(*probs);
                let gs = g.item();
                let lo = S::from_f64_lit(BCE_CLAMP);
                let hi = S::one() - lo;
                let data = pv
                    .data()
                    .iter()
                    .zip(targets.data())
                    .map(|(&p, &t)| {
                        if p < lo || p > hi {
                            S::zero()
                        } else {
                            gs * (p - t) / (p * (S::one() - p))
                        }
                    })
                    .collect();
                acc(grads, *probs, Tensor::new(pv.shape().to_vec(), data));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::params::LrGroup;

    type G = Graph<f64>;

    #[test]
    fn square_gradient() {
        // f(x) = x * x at x = 3 -> df/dx = 6
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0), LrGroup::Other);
        let mut g = G::new();
        let xv = g.param(&store, x);
        let y = g.mul(xv, xv).unwrap();
        g.backward(y, &mut store).unwrap();
        assert_eq!(store.get(x).grad.item(), 6.0);
    }

    #[test]
    fn softmax_sum_gradient_is_zero() {
        // f(x) = sum(softmax(x)) == 1 identically -> zero gradient
        let mut store = ParamStore::new();
        let x = store.add(
            "x",
            Tensor::row(vec![0.3, -1.2, 2.0, 0.0]),
            LrGroup::Other,
        );
        let mut g = G::new();
        let xv = g.param(&store, x);
        let s = g.softmax(xv).unwrap();
        let y = g.sum_all(s);
        g.backward(y, &mut store).unwrap();
        for &gv in store.get(x).grad.data() {
            assert!(gv.abs() < 1e-15, "got {gv}");
        }
    }

    #[test]
    fn repeated_backward_doubles() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0), LrGroup::Other);
        let mut g = G::new();
        let xv = g.param(&store, x);
        let y = g.mul(xv, xv).unwrap();
        g.backward(y, &mut store).unwrap();
        g.backward(y, &mut store).unwrap();
        assert_eq!(store.get(x).grad.item(), 12.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(vec![1.0, 2.0]), LrGroup::Other);
        let mut g = G::new();
        let xv = g.param(&store, x);
        let err = g.backward(xv, &mut store).unwrap_err();
        assert!(matches!(err, DiffError::NonScalarLoss(_)));
    }

    #[test]
    fn matmul_shape_error_reports_both() {
        let mut g = G::new();
        let a = g.input(Tensor::matrix(2, 3, vec![0.0; 6]));
        let b = g.input(Tensor::matrix(2, 3, vec![0.0; 6]));
        match g.matmul(a, b) {
            Err(DiffError::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn layer_norm_constant_row_maps_to_zero() {
        let mut g = G::new();
        let x = g.input(Tensor::row(vec![5.0, 5.0, 5.0]));
        let gamma = g.input(Tensor::row(vec![1.0, 1.0, 1.0]));
        let beta = g.input(Tensor::row(vec![0.0, 0.0, 0.0]));
        let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        for &v in g.value(y).data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn layer_norm_normalizes() {
        let mut g = G::new();
        // large-variance row so var/(var+eps) is within 1e-6 of 1
        let x = g.input(Tensor::row(vec![10.0, -30.0, 25.0, 55.0, -60.0]));
        let gamma = g.input(Tensor::row(vec![1.0; 5]));
        let beta = g.input(Tensor::row(vec![0.0; 5]));
        let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        let yd = g.value(y).data();
        let mean: f64 = yd.iter().sum::<f64>() / 5.0;
        let var: f64 = yd.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = G::new();
        let x = g.input(Tensor::matrix(3, 4, (0..12).map(|i| i as f64 * 0.7 - 4.0).collect()));
        let s = g.softmax(x).unwrap();
        for i in 0..3 {
            let sum: f64 = (0..4).map(|j| g.value(s).at(i, j)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
