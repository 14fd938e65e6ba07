//! Learned layers used across the pipeline, plus the spec'd layer-kind
//! dispatch used by the gradient-check harness.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{LrGroup, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use super::DiffError;

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

fn uniform_tensor<S: Scalar, R: Rng>(
    rng: &mut R,
    shape: Vec<usize>,
    limit: f64,
) -> Tensor<S> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| S::from_f64_lit(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::new(shape, data)
}

fn xavier_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Fully connected layer `x @ w + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        group: LrGroup,
        rng: &mut R,
    ) -> Self {
        let limit = xavier_limit(in_dim, out_dim);
        let w = store.add(
            &format!("{name}.w"),
            uniform_tensor(rng, vec![in_dim, out_dim], limit),
            group,
        );
        let b = store.add(
            &format!("{name}.b"),
            Tensor::zeros(vec![1, out_dim]),
            group,
        );
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
    ) -> Result<Var, DiffError> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// MLP with tanh between layers and a linear output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        dims: &[usize],
        group: LrGroup,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least [in, out] dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.l{i}"), w[0], w[1], group, rng))
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        mut x: Var,
    ) -> Result<Var, DiffError> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, store, x)?;
            if i != last {
                x = g.tanh(x);
            }
        }
        Ok(x)
    }
}

/// Single-layer LSTM unrolled over the rows of the input.
///
/// Gate order is (input, forget, cell, output); the forget bias starts
/// at one.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        group: LrGroup,
        rng: &mut R,
    ) -> Self {
        let limit = 1.0 / (hidden as f64).sqrt();
        let wx = store.add(
            &format!("{name}.wx"),
            uniform_tensor(rng, vec![in_dim, 4 * hidden], limit),
            group,
        );
        let wh = store.add(
            &format!("{name}.wh"),
            uniform_tensor(rng, vec![hidden, 4 * hidden], limit),
            group,
        );
        let mut bias = Tensor::zeros(vec![1, 4 * hidden]);
        for j in hidden..2 * hidden {
            bias.data_mut()[j] = S::one();
        }
        let b = store.add(&format!("{name}.b"), bias, group);
        Lstm {
            wx,
            wh,
            b,
            in_dim,
            hidden,
        }
    }

    /// Returns all hidden states stacked, `T x hidden`.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
    ) -> Result<Var, DiffError> {
        let t = g.value(x).rows();
        let h = self.hidden;
        let wx = g.param(store, self.wx);
        let wh = g.param(store, self.wh);
        let b = g.param(store, self.b);
        let mut hs = Vec::with_capacity(t);
        let mut h_prev = g.input(Tensor::zeros(vec![1, h]));
        let mut c_prev = g.input(Tensor::zeros(vec![1, h]));
        for ti in 0..t {
            let xt = g.rows_slice(x, ti, 1)?;
            let xg = g.matmul(xt, wx)?;
            let hg = g.matmul(h_prev, wh)?;
            let pre = g.add(xg, hg)?;
            let pre = g.add_row(pre, b)?;
            let i_gate = g.cols_slice(pre, 0, h)?;
            let f_gate = g.cols_slice(pre, h, h)?;
            let c_cand = g.cols_slice(pre, 2 * h, h)?;
            let o_gate = g.cols_slice(pre, 3 * h, h)?;
            let i_gate = g.sigmoid(i_gate);
            let f_gate = g.sigmoid(f_gate);
            let c_cand = g.tanh(c_cand);
            let o_gate = g.sigmoid(o_gate);
            let fc = g.mul(f_gate, c_prev)?;
            let ic = g.mul(i_gate, c_cand)?;
            let c = g.add(fc, ic)?;
            let ct = g.tanh(c);
            let ht = g.mul(o_gate, ct)?;
            hs.push(ht);
            h_prev = ht;
            c_prev = c;
        }
        g.concat_rows(&hs)
    }
}

/// Temporal convolution layer (kernel odd, same padding).
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        group: LrGroup,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "conv1d kernel must be odd");
        let limit = xavier_limit(c_in * kernel, c_out * kernel);
        let w = store.add(
            &format!("{name}.w"),
            uniform_tensor(rng, vec![c_out, c_in, kernel], limit),
            group,
        );
        let b = store.add(&format!("{name}.b"), Tensor::zeros(vec![1, c_out]), group);
        Conv1d {
            w,
            b,
            c_in,
            c_out,
            kernel,
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
    ) -> Result<Var, DiffError> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv1d(x, w, b)
    }
}

/// Learned gamma/beta for a layer-norm site.
#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNormParams {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        group: LrGroup,
    ) -> Self {
        let gamma = store.add(
            &format!("{name}.gamma"),
            Tensor::new(vec![1, dim], vec![S::one(); dim]),
            group,
        );
        let beta = store.add(&format!("{name}.beta"), Tensor::zeros(vec![1, dim]), group);
        LayerNormParams { gamma, beta, dim }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
    ) -> Result<Var, DiffError> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, S::from_f64_lit(LAYER_NORM_EPS))
    }
}

/// Softmax attention pooling over time: `T x d -> 1 x d`.
#[derive(Debug, Clone)]
pub struct AttentionPool {
    pub score: Linear,
}

impl AttentionPool {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        group: LrGroup,
        rng: &mut R,
    ) -> Self {
        AttentionPool {
            score: Linear::new(store, &format!("{name}.score"), dim, 1, group, rng),
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
    ) -> Result<Var, DiffError> {
        let scores = self.score.forward(g, store, x)?; // T x 1
        let st = g.transpose(scores)?; // 1 x T
        let alpha = g.softmax(st)?;
        g.matmul(alpha, x)
    }
}

/// Segment boundaries for landmark means: `m` contiguous chunks of `[0, t)`
/// as equal as integer division allows.
pub(crate) fn landmark_bounds(t: usize, m: usize) -> Vec<usize> {
    (0..=m).map(|i| i * t / m).collect()
}

fn check_qkv<S: Scalar>(g: &Graph<S>, q: Var, k: Var, v: Var) -> Result<(usize, usize), DiffError> {
    let qs = g.value(q).shape().to_vec();
    for other in [k, v] {
        if g.value(other).shape() != qs.as_slice() {
            return Err(DiffError::ShapeMismatch {
                op: "attention",
                lhs: qs,
                rhs: g.value(other).shape().to_vec(),
            });
        }
    }
    if qs.len() != 2 {
        return Err(DiffError::BadShape {
            op: "attention",
            expected: "2-d q/k/v".into(),
            got: qs,
        });
    }
    Ok((qs[0], qs[1]))
}

/// Dense softmax attention on graph vars.
pub fn attention_exact_var<S: Scalar>(
    g: &mut Graph<S>,
    q: Var,
    k: Var,
    v: Var,
) -> Result<Var, DiffError> {
    let (_, d) = check_qkv(g, q, k, v)?;
    let scale = S::one() / S::from_usize(d).unwrap().sqrt();
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, scale);
    let a = g.softmax(scores)?;
    g.matmul(a, v)
}

/// Nystrom-approximated softmax attention on graph vars, with `m`
/// segment-mean landmarks and an SVD pseudo-inverse of the landmark kernel.
pub fn nystrom_attention_var<S: Scalar>(
    g: &mut Graph<S>,
    q: Var,
    k: Var,
    v: Var,
    m: usize,
) -> Result<Var, DiffError> {
    let (t, d) = check_qkv(g, q, k, v)?;
    if m == 0 {
        return Err(DiffError::BadHyper("nystrom landmark count is zero".into()));
    }
    if m > t {
        return Err(DiffError::TooManyLandmarks { m, t });
    }
    let scale = S::one() / S::from_usize(d).unwrap().sqrt();
    let bounds = landmark_bounds(t, m);
    let ql = g.segment_means(q, &bounds)?;
    let kl = g.segment_means(k, &bounds)?;
    let klt = g.transpose(kl)?;
    let kt = g.transpose(k)?;

    let f = g.matmul(q, klt)?;
    let f = g.scale(f, scale);
    let f = g.softmax(f)?; // T x m

    let a = g.matmul(ql, klt)?;
    let a = g.scale(a, scale);
    let a = g.softmax(a)?; // m x m

    let b = g.matmul(ql, kt)?;
    let b = g.scale(b, scale);
    let b = g.softmax(b)?; // m x T

    let a_pinv = g.pinv(a)?;
    let bv = g.matmul(b, v)?;
    let fa = g.matmul(f, a_pinv)?;
    g.matmul(fa, bv)
}

/// Tensor-level dense attention (forward only).
pub fn attention_exact<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
) -> Result<Tensor<S>, DiffError> {
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
    let out = attention_exact_var(&mut g, qv, kv, vv)?;
    Ok(g.value(out).clone())
}

/// Tensor-level Nystrom attention (forward only).
pub fn nystrom_attention<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    m: usize,
) -> Result<Tensor<S>, DiffError> {
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
    let out = nystrom_attention_var(&mut g, qv, kv, vv, m)?;
    Ok(g.value(out).clone())
}

/// Transformer encoder block: attention + feed-forward, residuals and
/// post-layer-norms. `landmarks == None` selects dense attention.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln1: LayerNormParams,
    pub ffn1: Linear,
    pub ffn2: Linear,
    pub ln2: LayerNormParams,
    pub landmarks: Option<usize>,
    pub dim: usize,
}

impl EncoderBlock {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        ff_dim: usize,
        landmarks: Option<usize>,
        group: LrGroup,
        rng: &mut R,
    ) -> Self {
        EncoderBlock {
            wq: Linear::new(store, &format!("{name}.wq"), dim, dim, group, rng),
            wk: Linear::new(store, &format!("{name}.wk"), dim, dim, group, rng),
            wv: Linear::new(store, &format!("{name}.wv"), dim, dim, group, rng),
            wo: Linear::new(store, &format!("{name}.wo"), dim, dim, group, rng),
            ln1: LayerNormParams::new(store, &format!("{name}.ln1"), dim, group),
            ffn1: Linear::new(store, &format!("{name}.ffn1"), dim, ff_dim, group, rng),
            ffn2: Linear::new(store, &format!("{name}.ffn2"), ff_dim, dim, group, rng),
            ln2: LayerNormParams::new(store, &format!("{name}.ln2"), dim, group),
            landmarks,
            dim,
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
    ) -> Result<Var, DiffError> {
        let t = g.value(x).rows();
        let q = self.wq.forward(g, store, x)?;
        let k = self.wk.forward(g, store, x)?;
        let v = self.wv.forward(g, store, x)?;
        let attn = match self.landmarks {
            // landmark count never exceeds the sequence at call time
            Some(m) => nystrom_attention_var(g, q, k, v, m.min(t))?,
            None => attention_exact_var(g, q, k, v)?,
        };
        let attn = self.wo.forward(g, store, attn)?;
        let res = g.add(x, attn)?;
        let x1 = self.ln1.forward(g, store, res)?;
        let f = self.ffn1.forward(g, store, x1)?;
        let f = g.tanh(f);
        let f = self.ffn2.forward(g, store, f)?;
        let res2 = g.add(x1, f)?;
        self.ln2.forward(g, store, res2)
    }
}

/// The layer kinds the computation core promises to differentiate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Linear { in_dim: usize, out_dim: usize },
    Mlp { dims: Vec<usize> },
    Lstm { in_dim: usize, hidden: usize },
    Conv1d { c_in: usize, c_out: usize, kernel: usize },
    AttentionExact { dim: usize },
    AttentionNystrom { dim: usize, landmarks: usize },
    LayerNorm { dim: usize },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Mlp { .. } => "mlp",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::AttentionExact { .. } => "attention_exact",
            LayerSpec::AttentionNystrom { .. } => "attention_nystrom",
            LayerSpec::LayerNorm { .. } => "layer_norm",
        }
    }

    pub fn validate(&self) -> Result<(), DiffError> {
        let bad = |msg: String| Err(DiffError::BadHyper(msg));
        match self {
            LayerSpec::Linear { in_dim, out_dim } => {
                if *in_dim == 0 || *out_dim == 0 {
                    return bad(format!("linear dims must be positive: {in_dim}x{out_dim}"));
                }
            }
            LayerSpec::Mlp { dims } => {
                if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
                    return bad(format!("mlp dims invalid: {dims:?}"));
                }
            }
            LayerSpec::Lstm { in_dim, hidden } => {
                if *in_dim == 0 || *hidden == 0 {
                    return bad(format!("lstm dims must be positive: {in_dim}x{hidden}"));
                }
            }
            LayerSpec::Conv1d { c_in, c_out, kernel } => {
                if *c_in == 0 || *c_out == 0 || kernel % 2 == 0 {
                    return bad(format!("conv1d needs positive channels and odd kernel, got {c_in}/{c_out}/{kernel}"));
                }
            }
            LayerSpec::AttentionExact { dim } | LayerSpec::LayerNorm { dim } => {
                if *dim == 0 {
                    return bad("dim must be positive".into());
                }
            }
            LayerSpec::AttentionNystrom { dim, landmarks } => {
                if *dim == 0 || *landmarks == 0 {
                    return bad(format!("nystrom dims invalid: d={dim} m={landmarks}"));
                }
            }
        }
        Ok(())
    }

    /// Column count the layer expects on its input rows.
    pub fn input_cols(&self) -> usize {
        match self {
            LayerSpec::Linear { in_dim, .. } => *in_dim,
            LayerSpec::Mlp { dims } => dims[0],
            LayerSpec::Lstm { in_dim, .. } => *in_dim,
            LayerSpec::Conv1d { c_in, .. } => *c_in,
            LayerSpec::AttentionExact { dim }
            | LayerSpec::AttentionNystrom { dim, .. }
            | LayerSpec::LayerNorm { dim } => *dim,
        }
    }

    pub fn build<S: Scalar, R: Rng>(
        &self,
        store: &mut ParamStore<S>,
        name: &str,
        rng: &mut R,
    ) -> Result<LayerInstance, DiffError> {
        self.validate()?;
        Ok(match self {
            LayerSpec::Linear { in_dim, out_dim } => LayerInstance::Linear(Linear::new(
                store,
                name,
                *in_dim,
                *out_dim,
                LrGroup::Other,
                rng,
            )),
            LayerSpec::Mlp { dims } => {
                LayerInstance::Mlp(Mlp::new(store, name, dims, LrGroup::Other, rng))
            }
            LayerSpec::Lstm { in_dim, hidden } => LayerInstance::Lstm(Lstm::new(
                store,
                name,
                *in_dim,
                *hidden,
                LrGroup::Other,
                rng,
            )),
            LayerSpec::Conv1d { c_in, c_out, kernel } => LayerInstance::Conv1d(Conv1d::new(
                store,
                name,
                *c_in,
                *c_out,
                *kernel,
                LrGroup::Other,
                rng,
            )),
            LayerSpec::AttentionExact { dim } => LayerInstance::Encoder(EncoderBlock::new(
                store,
                name,
                *dim,
                2 * dim,
                None,
                LrGroup::Other,
                rng,
            )),
            LayerSpec::AttentionNystrom { dim, landmarks } => {
                LayerInstance::Encoder(EncoderBlock::new(
                    store,
                    name,
                    *dim,
                    2 * dim,
                    Some(*landmarks),
                    LrGroup::Other,
                    rng,
                ))
            }
            LayerSpec::LayerNorm { dim } => {
                LayerInstance::Norm(LayerNormParams::new(store, name, *dim, LrGroup::Other))
            }
        })
    }
}

/// A built layer of any supported kind.
#[derive(Debug, Clone)]
pub enum LayerInstance {
    Linear(Linear),
    Mlp(Mlp),
    Lstm(Lstm),
    Conv1d(Conv1d),
    Encoder(EncoderBlock),
    Norm(LayerNormParams),
}

impl LayerInstance {
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
    ) -> Result<Var, DiffError> {
        match self {
            LayerInstance::Linear(l) => l.forward(g, store, x),
            LayerInstance::Mlp(l) => l.forward(g, store, x),
            LayerInstance::Lstm(l) => l.forward(g, store, x),
            LayerInstance::Conv1d(l) => l.forward(g, store, x),
            LayerInstance::Encoder(l) => l.forward(g, store, x),
            LayerInstance::Norm(l) => l.forward(g, store, x),
        }
    }

    /// One-shot evaluation on a plain tensor (throwaway graph).
    pub fn apply<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        input: &Tensor<S>,
    ) -> Result<Tensor<S>, DiffError> {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let y = self.forward(&mut g, store, x)?;
        Ok(g.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_identity() {
        // identity weights, zero bias: input passes through
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut store, "id", 3, 3, LrGroup::Other, &mut rng);
        store.get_mut(lin.w).value = Tensor::eye(3);
        store.get_mut(lin.b).value = Tensor::zeros(vec![1, 3]);
        let out = LayerInstance::Linear(lin)
            .apply(&store, &Tensor::row(vec![1.0, 2.0, 3.0]))
            .unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn lstm_matches_scalar_oracle() {
        // hand-stepped per-gate recurrence on the same parameters
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (in_dim, hidden, t) = (3, 2, 3);
        let lstm = Lstm::new(&mut store, "l", in_dim, hidden, LrGroup::Other, &mut rng);
        let x = Tensor::matrix(
            t,
            in_dim,
            vec![0.2, -0.4, 0.9, 0.5, 0.1, -0.3, -0.7, 0.6, 0.0],
        );
        let out = LayerInstance::Lstm(lstm.clone()).apply(&store, &x).unwrap();

        let wx = store.value(lstm.wx);
        let wh = store.value(lstm.wh);
        let b = store.value(lstm.b);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        for ti in 0..t {
            let mut pre = vec![0.0; 4 * hidden];
            for j in 0..4 * hidden {
                let mut acc = b.at(0, j);
                for i in 0..in_dim {
                    acc += x.at(ti, i) * wx.at(i, j);
                }
                for i in 0..hidden {
                    acc += h[i] * wh.at(i, j);
                }
                pre[j] = acc;
            }
            let mut h_new = vec![0.0; hidden];
            let mut c_new = vec![0.0; hidden];
            for j in 0..hidden {
                let ig = sig(pre[j]);
                let fg = sig(pre[hidden + j]);
                let cc = pre[2 * hidden + j].tanh();
                let og = sig(pre[3 * hidden + j]);
                c_new[j] = fg * c[j] + ig * cc;
                h_new[j] = og * c_new[j].tanh();
            }
            h = h_new;
            c = c_new;
            for j in 0..hidden {
                assert!(
                    (out.at(ti, j) - h[j]).abs() < 1e-10,
                    "t={ti} j={j}: {} vs {}",
                    out.at(ti, j),
                    h[j]
                );
            }
        }
    }

    #[test]
    fn nystrom_single_token_returns_v() {
        let q = Tensor::<f64>::row(vec![0.3, -1.0]);
        let k = Tensor::row(vec![2.0, 0.5]);
        let v = Tensor::row(vec![7.0, -3.0]);
        let out = nystrom_attention(&q, &k, &v, 1).unwrap();
        assert!((out.at(0, 0) - 7.0).abs() < 1e-12);
        assert!((out.at(0, 1) + 3.0).abs() < 1e-12);
    }

    #[test]
    fn nystrom_full_landmarks_matches_exact() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (t, d) = (6, 4);
        let rand_mat = |rng: &mut ChaCha8Rng| {
            Tensor::<f64>::matrix(t, d, (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        };
        let q = rand_mat(&mut rng);
        let k = rand_mat(&mut rng);
        let v = rand_mat(&mut rng);
        let exact = attention_exact(&q, &k, &v).unwrap();
        let approx = nystrom_attention(&q, &k, &v, t).unwrap();
        for (a, b) in exact.data().iter().zip(approx.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn nystrom_rejects_m_above_t() {
        let q = Tensor::<f64>::matrix(2, 2, vec![0.0; 4]);
        let err = nystrom_attention(&q, &q, &q, 3).unwrap_err();
        assert!(matches!(err, DiffError::TooManyLandmarks { m: 3, t: 2 }));
    }

    #[test]
    fn landmark_bounds_cover_and_increase() {
        for t in 1..40 {
            for m in 1..=t {
                let b = landmark_bounds(t, m);
                assert_eq!(b.len(), m + 1);
                assert_eq!(b[0], 0);
                assert_eq!(*b.last().unwrap(), t);
                assert!(b.windows(2).all(|w| w[0] < w[1]), "t={t} m={m}: {b:?}");
            }
        }
    }
}
