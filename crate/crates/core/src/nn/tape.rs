//! Reverse-mode differentiation over a linear tape of tensor operations.

use std::collections::BTreeMap;

use super::tensor::{log_softmax_row, matmul, matmul_at, matmul_bt, sigmoid, softmax_row, Tensor};
use super::ParamStore;

const LN_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        spec: Conv1dSpec,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Var,
        spec: Conv1dSpec,
    },
    CausalAttention {
        qkv: Var,
        batch: usize,
        time: usize,
        heads: usize,
        weights: Vec<f64>,
    },
    Reshape(Var),
    ConcatChannels(Var, Var),
    BatchStd {
        x: Var,
        std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<String>,
}

/// Records a forward computation so it can be differentiated.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every tape value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn acc(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A named trainable leaf; its gradient is reported by [`Tape::param_grads`].
    pub fn leaf(&mut self, name: &str, t: Tensor) -> Var {
        let v = self.push(t, Op::Leaf);
        self.nodes[v.0].param = Some(name.to_string());
        v
    }

    /// Leaf holding the current value of `name` in `store`.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        let t = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing from store"))
            .clone();
        self.leaf(name, t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.shape.len(), 2, "matmul rhs must be 2-D");
        let (k, m) = (bv.shape[0], bv.shape[1]);
        assert_eq!(av.cols(), k, "matmul inner dimensions {:?} x {:?}", av.shape, bv.shape);
        let n = av.rows();
        let mut shape = av.shape.clone();
        *shape.last_mut().expect("non-empty shape") = m;
        let data = matmul(&av.data, &bv.data, n, k, m);
        self.push(Tensor { shape, data }, Op::MatMul(a, b))
    }

    /// Adds a bias vector along the last dimension.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = xv.cols();
        assert_eq!(bv.len(), c, "bias length");
        let data = xv
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv.data[i % c])
            .collect();
        let shape = xv.shape.clone();
        self.push(Tensor { shape, data }, Op::AddBias(x, b))
    }

    /// `x · w + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_bias(h, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.data.len(), bv.data.len(), "add shapes {:?} {:?}", av.shape, bv.shape);
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
        let shape = av.shape.clone();
        self.push(Tensor { shape, data }, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.data.len(), bv.data.len(), "mul shapes {:?} {:?}", av.shape, bv.shape);
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
        let shape = av.shape.clone();
        self.push(Tensor { shape, data }, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let av = self.value(a);
        let t = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().map(|v| v * c).collect(),
        };
        self.push(t, Op::Scale(a, c))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let t = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().map(|v| f(*v)).collect(),
        };
        self.push(t, op)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Var {
        self.map(a, |v| if v > 0.0 { v } else { alpha * v }, Op::LeakyRelu(a, alpha))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows()).flat_map(|i| softmax_row(av.row(i))).collect();
        let shape = av.shape.clone();
        self.push(Tensor { shape, data }, Op::Softmax(a))
    }

    /// Normalizes each row of the last dimension, then scales and shifts.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.cols();
        assert_eq!(gv.len(), d, "layer norm gamma");
        assert_eq!(bv.len(), d, "layer norm beta");
        let n = xv.rows();
        let mut xhat = vec![0.0; n * d];
        let mut rstd = vec![0.0; n];
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd[i] = r;
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat[i * d + j] = h;
                data[i * d + j] = h * gv.data[j] + bv.data[j];
            }
        }
        let shape = xv.shape.clone();
        self.push(
            Tensor { shape, data },
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Rows of `table [V, d]` selected by `ids`, giving `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        assert_eq!(tv.shape.len(), 2, "embedding table must be 2-D");
        let (v, d) = (tv.shape[0], tv.shape[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "embedding id {id} out of range {v}");
            data.extend_from_slice(tv.row(id));
        }
        self.push(
            Tensor {
                shape: vec![ids.len(), d],
                data,
            },
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// `x [B, Cin, L]`, `w [Cout, Cin, K]`, `b [Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, spec: Conv1dSpec) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let [bs, cin, l] = dims3(&xv.shape, "conv1d input");
        let [cout, wcin, k] = dims3(&wv.shape, "conv1d weight");
        assert_eq!(cin, wcin, "conv1d channels");
        assert_eq!(bv.len(), cout, "conv1d bias");
        let (s, p) = (spec.stride, spec.padding);
        assert!(l + 2 * p >= k && s > 0, "conv1d window");
        let lout = (l + 2 * p - k) / s + 1;
        let mut out = vec![0.0; bs * cout * lout];
        for bi in 0..bs {
            for o in 0..cout {
                for t in 0..lout {
                    let mut acc = bv.data[o];
                    for c in 0..cin {
                        for kk in 0..k {
                            let pos = t * s + kk;
                            if pos < p || pos - p >= l {
                                continue;
                            }
                            acc += wv.data[(o * cin + c) * k + kk]
                                * xv.data[(bi * cin + c) * l + pos - p];
                        }
                    }
                    out[(bi * cout + o) * lout + t] = acc;
                }
            }
        }
        self.push(
            Tensor {
                shape: vec![bs, cout, lout],
                data: out,
            },
            Op::Conv1d { x, w, b, spec },
        )
    }

    /// `x [B, Cin, L]`, `w [Cin, Cout, K]`, `b [Cout]`; output length `(L-1)s - 2p + K`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Var, spec: Conv1dSpec) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let [bs, cin, l] = dims3(&xv.shape, "transposed conv input");
        let [wcin, cout, k] = dims3(&wv.shape, "transposed conv weight");
        assert_eq!(cin, wcin, "transposed conv channels");
        assert_eq!(bv.len(), cout, "transposed conv bias");
        let (s, p) = (spec.stride, spec.padding);
        assert!((l - 1) * s + k >= 2 * p && s > 0, "transposed conv window");
        let lout = (l - 1) * s + k - 2 * p;
        let mut out = vec![0.0; bs * cout * lout];
        for bi in 0..bs {
            for o in 0..cout {
                out[(bi * cout + o) * lout..(bi * cout + o + 1) * lout].fill(bv.data[o]);
            }
            for c in 0..cin {
                for i in 0..l {
                    let xval = xv.data[(bi * cin + c) * l + i];
                    for o in 0..cout {
                        for kk in 0..k {
                            let pos = i * s + kk;
                            if pos < p || pos - p >= lout {
                                continue;
                            }
                            out[(bi * cout + o) * lout + pos - p] +=
                                xval * wv.data[(c * cout + o) * k + kk];
                        }
                    }
                }
            }
        }
        self.push(
            Tensor {
                shape: vec![bs, cout, lout],
                data: out,
            },
            Op::ConvTranspose1d { x, w, b, spec },
        )
    }

    /// Multi-head self-attention where position `t` attends to positions `≤ t`.
    /// `qkv` is `[batch * time, 3d]` holding queries, keys and values side by side;
    /// the result is `[batch * time, d]`.
    pub fn causal_attention(&mut self, qkv: Var, batch: usize, time: usize, heads: usize) -> Var {
        let qv = self.value(qkv);
        let three_d = qv.cols();
        assert_eq!(three_d % 3, 0, "attention input width");
        let d = three_d / 3;
        assert_eq!(d % heads, 0, "heads must divide model width");
        assert_eq!(qv.rows(), batch * time, "attention rows");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut weights = vec![0.0; batch * heads * time * time];
        let mut out = vec![0.0; batch * time * d];
        let data = &qv.data;
        for b in 0..batch {
            for h in 0..heads {
                for t in 0..time {
                    let q = &data[(b * time + t) * three_d + h * dh..][..dh];
                    let scores: Vec<f64> = (0..=t)
                        .map(|j| {
                            let k = &data[(b * time + j) * three_d + d + h * dh..][..dh];
                            q.iter().zip(k).map(|(x, y)| x * y).sum::<f64>() * scale
                        })
                        .collect();
                    let a = softmax_row(&scores);
                    let wrow = &mut weights[((b * heads + h) * time + t) * time..][..time];
                    wrow[..=t].copy_from_slice(&a);
                    let orow = &mut out[(b * time + t) * d + h * dh..][..dh];
                    for (j, aj) in a.iter().enumerate() {
                        let v = &data[(b * time + j) * three_d + 2 * d + h * dh..][..dh];
                        for (o, vv) in orow.iter_mut().zip(v) {
                            *o += aj * vv;
                        }
                    }
                }
            }
        }
        self.push(
            Tensor {
                shape: vec![batch * time, d],
                data: out,
            },
            Op::CausalAttention {
                qkv,
                batch,
                time,
                heads,
                weights,
            },
        )
    }

    /// Attention weights recorded by a [`Tape::causal_attention`] node,
    /// laid out `[batch, heads, time, time]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::CausalAttention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let av = self.value(a);
        assert_eq!(
            shape.iter().product::<usize>(),
            av.len(),
            "reshape {:?} -> {shape:?}",
            av.shape
        );
        let t = Tensor {
            shape: shape.to_vec(),
            data: av.data.clone(),
        };
        self.push(t, Op::Reshape(a))
    }

    /// `[B, C1, L]` and `[B, C2, L]` into `[B, C1 + C2, L]`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let [bs, c1, l] = dims3(&av.shape, "concat lhs");
        let [bs2, c2, l2] = dims3(&bv.shape, "concat rhs");
        assert_eq!((bs, l), (bs2, l2), "concat shapes");
        let mut data = Vec::with_capacity(bs * (c1 + c2) * l);
        for bi in 0..bs {
            data.extend_from_slice(&av.data[bi * c1 * l..(bi + 1) * c1 * l]);
            data.extend_from_slice(&bv.data[bi * c2 * l..(bi + 1) * c2 * l]);
        }
        self.push(
            Tensor {
                shape: vec![bs, c1 + c2, l],
                data,
            },
            Op::ConcatChannels(a, b),
        )
    }

    /// Mean over features of the across-batch standard deviation of `x [B, C, L]`,
    /// broadcast to a `[B, 1, L]` channel.
    pub fn batch_std(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [bs, c, l] = dims3(&xv.shape, "batch std input");
        let feat = c * l;
        let mut std = vec![0.0; feat];
        for (f, sd) in std.iter_mut().enumerate() {
            let mean = (0..bs).map(|b| xv.data[b * feat + f]).sum::<f64>() / bs as f64;
            let var = (0..bs)
                .map(|b| (xv.data[b * feat + f] - mean).powi(2))
                .sum::<f64>()
                / bs as f64;
            *sd = (var + 1e-8).sqrt();
        }
        let s = std.iter().sum::<f64>() / feat as f64;
        self.push(
            Tensor::filled(&[bs, 1, l], s),
            Op::BatchStd { x, std },
        )
    }

    /// Mean negative log-likelihood over rows with a target; other rows are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "one target slot per row");
        let v = lv.cols();
        let mut probs = vec![0.0; lv.len()];
        let mut total = 0.0;
        let mut count = 0;
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            assert!(t < v, "target {t} out of range {v}");
            let logp = log_softmax_row(lv.row(i));
            total -= logp[t];
            count += 1;
            for (p, lp) in probs[i * v..(i + 1) * v].iter_mut().zip(&logp) {
                *p = lp.exp();
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
        )
    }

    /// Mean binary cross-entropy of `σ(logits)` against `targets ∈ [0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), targets.len(), "one target per logit");
        let n = targets.len().max(1) as f64;
        let loss = lv
            .data
            .iter()
            .zip(targets)
            .map(|(z, y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.data.iter().sum::<f64>() / av.len().max(1) as f64;
        self.push(Tensor::scalar(m), Op::Mean(a))
    }

    /// Gradients of the scalar `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        let seed = Tensor::filled(&self.value(out).shape, 1.0);
        self.backward_with(out, &seed)
    }

    /// Vector-Jacobian product for `out` seeded with `grad`.
    pub fn backward_with(&self, out: Var, grad: &Tensor) -> Gradients {
        assert_eq!(grad.len(), self.value(out).len(), "seed gradient shape");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(grad.data.clone());
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (k, m) = (bv.shape[0], bv.shape[1]);
                let n = av.rows();
                let da = matmul_bt(g, &bv.data, n, m, k);
                let db = matmul_at(&av.data, g, n, k, m);
                add_into(acc(&mut grads[a.0], n * k), &da);
                add_into(acc(&mut grads[b.0], k * m), &db);
            }
            Op::AddBias(x, b) => {
                add_into(acc(&mut grads[x.0], g.len()), g);
                let c = self.len_of(*b);
                let db = acc(&mut grads[b.0], c);
                for (i, gv) in g.iter().enumerate() {
                    db[i % c] += gv;
                }
            }
            Op::Add(a, b) => {
                add_into(acc(&mut grads[a.0], g.len()), g);
                add_into(acc(&mut grads[b.0], g.len()), g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da: Vec<f64> = g.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
                let db: Vec<f64> = g.iter().zip(&av.data).map(|(x, y)| x * y).collect();
                add_into(acc(&mut grads[a.0], g.len()), &da);
                add_into(acc(&mut grads[b.0], g.len()), &db);
            }
            Op::Scale(a, c) => {
                let d = acc(&mut grads[a.0], g.len());
                for (o, gv) in d.iter_mut().zip(g) {
                    *o += c * gv;
                }
            }
            Op::Relu(a) => {
                let av = &self.value(*a).data;
                let d = acc(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    if av[i] > 0.0 {
                        d[i] += g[i];
                    }
                }
            }
            Op::LeakyRelu(a, alpha) => {
                let av = &self.value(*a).data;
                let d = acc(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    d[i] += if av[i] > 0.0 { g[i] } else { alpha * g[i] };
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value.data;
                let d = acc(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    d[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
            Op::Tanh(a) => {
                let y = &node.value.data;
                let d = acc(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    d[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let c = y.cols();
                let d = acc(&mut grads[a.0], g.len());
                for i in 0..y.rows() {
                    let yr = y.row(i);
                    let gr = &g[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        d[i * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = &self.value(*gamma).data;
                let dim = gv.len();
                let n = rstd.len();
                let mut dgamma = vec![0.0; dim];
                let mut dbeta = vec![0.0; dim];
                let mut dx = vec![0.0; n * dim];
                for i in 0..n {
                    let gr = &g[i * dim..(i + 1) * dim];
                    let hr = &xhat[i * dim..(i + 1) * dim];
                    let dh: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                    let mean_dh = dh.iter().sum::<f64>() / dim as f64;
                    let mean_dh_h =
                        dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / dim as f64;
                    for j in 0..dim {
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                        dx[i * dim + j] = rstd[i] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                add_into(acc(&mut grads[x.0], n * dim), &dx);
                add_into(acc(&mut grads[gamma.0], dim), &dgamma);
                add_into(acc(&mut grads[beta.0], dim), &dbeta);
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let d = tv.cols();
                let dt = acc(&mut grads[table.0], tv.len());
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[r * d + j];
                    }
                }
            }
            Op::Conv1d { x, w, b, spec } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let [bs, cin, l] = dims3(&xv.shape, "");
                let [cout, _, k] = dims3(&wv.shape, "");
                let lout = node.value.shape[2];
                let (s, p) = (spec.stride, spec.padding);
                let mut dx = vec![0.0; xv.len()];
                let mut dw = vec![0.0; wv.len()];
                let mut db = vec![0.0; cout];
                for bi in 0..bs {
                    for o in 0..cout {
                        for t in 0..lout {
                            let gv = g[(bi * cout + o) * lout + t];
                            db[o] += gv;
                            for c in 0..cin {
                                for kk in 0..k {
                                    let pos = t * s + kk;
                                    if pos < p || pos - p >= l {
                                        continue;
                                    }
                                    let xi = (bi * cin + c) * l + pos - p;
                                    let wi = (o * cin + c) * k + kk;
                                    dx[xi] += wv.data[wi] * gv;
                                    dw[wi] += xv.data[xi] * gv;
                                }
                            }
                        }
                    }
                }
                add_into(acc(&mut grads[x.0], dx.len()), &dx);
                add_into(acc(&mut grads[w.0], dw.len()), &dw);
                add_into(acc(&mut grads[b.0], cout), &db);
            }
            Op::ConvTranspose1d { x, w, b, spec } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let [bs, cin, l] = dims3(&xv.shape, "");
                let [_, cout, k] = dims3(&wv.shape, "");
                let lout = node.value.shape[2];
                let (s, p) = (spec.stride, spec.padding);
                let mut dx = vec![0.0; xv.len()];
                let mut dw = vec![0.0; wv.len()];
                let mut db = vec![0.0; cout];
                for bi in 0..bs {
                    for o in 0..cout {
                        db[o] += g[(bi * cout + o) * lout..(bi * cout + o + 1) * lout]
                            .iter()
                            .sum::<f64>();
                    }
                    for c in 0..cin {
                        for i in 0..l {
                            let xi = (bi * cin + c) * l + i;
                            for o in 0..cout {
                                for kk in 0..k {
                                    let pos = i * s + kk;
                                    if pos < p || pos - p >= lout {
                                        continue;
                                    }
                                    let gv = g[(bi * cout + o) * lout + pos - p];
                                    let wi = (c * cout + o) * k + kk;
                                    dx[xi] += wv.data[wi] * gv;
                                    dw[wi] += xv.data[xi] * gv;
                                }
                            }
                        }
                    }
                }
                add_into(acc(&mut grads[x.0], dx.len()), &dx);
                add_into(acc(&mut grads[w.0], dw.len()), &dw);
                add_into(acc(&mut grads[b.0], cout), &db);
            }
            Op::CausalAttention {
                qkv,
                batch,
                time,
                heads,
                weights,
            } => {
                let qv = self.value(*qkv);
                let three_d = qv.cols();
                let d = three_d / 3;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let data = &qv.data;
                let mut dq = vec![0.0; qv.len()];
                let (batch, time, heads) = (*batch, *time, *heads);
                for b in 0..batch {
                    for h in 0..heads {
                        for t in 0..time {
                            let a = &weights[((b * heads + h) * time + t) * time..][..=t];
                            let go = &g[(b * time + t) * d + h * dh..][..dh];
                            let mut da = vec![0.0; t + 1];
                            for j in 0..=t {
                                let vo = (b * time + j) * three_d + 2 * d + h * dh;
                                let mut dot = 0.0;
                                for e in 0..dh {
                                    dot += go[e] * data[vo + e];
                                    dq[vo + e] += a[j] * go[e];
                                }
                                da[j] = dot;
                            }
                            let mix: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
                            let qo = (b * time + t) * three_d + h * dh;
                            for j in 0..=t {
                                let ds = a[j] * (da[j] - mix) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let ko = (b * time + j) * three_d + d + h * dh;
                                for e in 0..dh {
                                    dq[qo + e] += ds * data[ko + e];
                                    dq[ko + e] += ds * data[qo + e];
                                }
                            }
                        }
                    }
                }
                add_into(acc(&mut grads[qkv.0], dq.len()), &dq);
            }
            Op::Reshape(a) => add_into(acc(&mut grads[a.0], g.len()), g),
            Op::ConcatChannels(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let [bs, c1, l] = dims3(&av.shape, "");
                let c2 = bv.shape[1];
                let da = acc(&mut grads[a.0], av.len());
                for bi in 0..bs {
                    let src = &g[bi * (c1 + c2) * l..][..c1 * l];
                    add_into(&mut da[bi * c1 * l..(bi + 1) * c1 * l], src);
                }
                let db = acc(&mut grads[b.0], bv.len());
                for bi in 0..bs {
                    let src = &g[bi * (c1 + c2) * l + c1 * l..][..c2 * l];
                    add_into(&mut db[bi * c2 * l..(bi + 1) * c2 * l], src);
                }
            }
            Op::BatchStd { x, std } => {
                let xv = self.value(*x);
                let bs = xv.shape[0];
                let feat = std.len();
                let total: f64 = g.iter().sum();
                let d = acc(&mut grads[x.0], xv.len());
                for (f, sd) in std.iter().enumerate() {
                    let mean = (0..bs).map(|b| xv.data[b * feat + f]).sum::<f64>() / bs as f64;
                    for b in 0..bs {
                        d[b * feat + f] +=
                            total * (xv.data[b * feat + f] - mean) / (bs as f64 * sd * feat as f64);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let v = self.value(*logits).cols();
                let scale = g[0] / *count as f64;
                let d = acc(&mut grads[logits.0], probs.len());
                for (i, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    for j in 0..v {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        d[i * v + j] += scale * (probs[i * v + j] - onehot);
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let lv = &self.value(*logits).data;
                let n = targets.len().max(1) as f64;
                let d = acc(&mut grads[logits.0], lv.len());
                for i in 0..lv.len() {
                    d[i] += g[0] * (sigmoid(lv[i]) - targets[i]) / n;
                }
            }
            Op::Sum(a) => {
                let n = self.len_of(*a);
                let d = acc(&mut grads[a.0], n);
                for o in d.iter_mut() {
                    *o += g[0];
                }
            }
            Op::Mean(a) => {
                let n = self.len_of(*a);
                let d = acc(&mut grads[a.0], n);
                for o in d.iter_mut() {
                    *o += g[0] / n.max(1) as f64;
                }
            }
        }
    }

    /// Gradients of named leaves, summed per name.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(name) = &node.param else { continue };
            let entry = out
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&node.value.shape));
            if let Some(g) = grads.get(Var(i)) {
                add_into(&mut entry.data, g);
            }
        }
        out
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn dims3(shape: &[usize], what: &str) -> [usize; 3] {
    match shape {
        [a, b, c] => [*a, *b, *c],
        _ => panic!("{what} must be 3-D, got {shape:?}"),
    }
}
