//! Reverse-mode automatic differentiation over tensor-granular operations.
//!
//! A `Graph` is a write-once tape borrowing a read-only `ParamStore`. Every
//! operation evaluates eagerly; `backward` walks the tape in reverse and
//! returns per-parameter gradients. Building a graph never mutates
//! parameters, so utterances can be processed on parallel tapes against a
//! shared store.

use crate::kernels;
use crate::params::{Gradients, ParamStore};
use crate::tensor::{log_sum_exp, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(usize);

enum Op {
    Input,
    Param(usize),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    ElemMul(NodeId, NodeId),
    /// matrix \[r,c] + row vector \[c] broadcast over rows
    AddRowBroadcast(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    /// v \[k] · M \[k,n] -> \[n]
    VecMat(NodeId, NodeId),
    /// M \[r,c] · v \[c] -> \[r]
    MatVec(NodeId, NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Conv1dVec {
        x: NodeId,
        w: NodeId,
    },
    MaxPoolFeat {
        x: NodeId,
        argmax: Vec<u32>,
    },
    MaxPoolTime {
        x: NodeId,
        argmax: Vec<u32>,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    LayerNormRows {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        /// per-row (mean, inv_std)
        stats: Vec<(f64, f64)>,
    },
    ConcatChannels(Vec<NodeId>),
    ConcatCols(NodeId, NodeId),
    ConcatVec(NodeId, NodeId),
    Row(NodeId, usize),
    StackRows(Vec<NodeId>),
    ReverseTime(NodeId),
    /// \[c,t,d] -> \[t, c*d]
    FlattenChannels(NodeId),
    LogSoftmaxRows(NodeId),
    LogSoftmaxVec(NodeId),
    SoftmaxVec(NodeId),
    /// weights \[t] x matrix \[t,d] -> \[d]
    WeightedSumRows(NodeId, NodeId),
    Pick(NodeId, usize),
    /// entry 0 forced to -inf (decoder never emits the CTC blank slot)
    MaskFirst(NodeId),
    EmbedRow {
        table: NodeId,
        index: usize,
    },
    /// (1-beta)*a + beta*b with scalar node beta
    ConvexMix {
        a: NodeId,
        b: NodeId,
        beta: NodeId,
    },
    /// constant * x
    Scale(NodeId, f64),
    AddN(Vec<NodeId>),
    /// scalar loss with a precomputed gradient w.r.t. its input
    LossWithGrad {
        input: NodeId,
        input_grad: Tensor,
    },
}

struct Node {
    op: Op,
    /// None only for Param nodes, whose value lives in the store.
    value: Option<Tensor>,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match &node.op {
            Op::Param(slot) => self.store.tensor(*slot),
            _ => node.value.as_ref().expect("non-param node has a value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(Op::Input, Tensor::scalar(v))
    }

    pub fn param(&mut self, name: &str) -> NodeId {
        let slot = self
            .store
            .slot(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        self.param_slot(slot)
    }

    pub fn param_slot(&mut self, slot: usize) -> NodeId {
        self.nodes.push(Node {
            op: Op::Param(slot),
            value: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let bv = self.value(b);
        let av = self.value(a);
        assert_eq!(av.shape(), bv.shape());
        let data = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::from_vec(av.shape(), data);
        self.push(Op::Sub(a, b), out)
    }

    pub fn elem_mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let bv = self.value(b);
        let av = self.value(a);
        assert_eq!(av.shape(), bv.shape());
        let data = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_vec(av.shape(), data);
        self.push(Op::ElemMul(a, b), out)
    }

    pub fn add_row_broadcast(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let (mv, vv) = (self.value(m), self.value(v));
        let (r, c) = (mv.shape()[0], mv.shape()[1]);
        assert_eq!(vv.shape(), &[c]);
        let mut out = mv.clone();
        for i in 0..r {
            kernels::add_in_place(&mut out.row_mut(i)[..], vv.as_slice());
        }
        self.push(Op::AddRowBroadcast(m, v), out)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = kernels::matmul(self.value(a), self.value(b));
        self.push(Op::Matmul(a, b), out)
    }

    pub fn vec_mat(&mut self, v: NodeId, m: NodeId) -> NodeId {
        let out = kernels::vec_mat(self.value(v).as_slice(), self.value(m));
        let n = out.len();
        self.push(Op::VecMat(v, m), Tensor::from_vec(&[n], out))
    }

    pub fn mat_vec(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let (mv, vv) = (self.value(m), self.value(v));
        let (r, c) = (mv.shape()[0], mv.shape()[1]);
        assert_eq!(vv.len(), c);
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = mv.row(i);
            let mut acc_v = 0.0;
            for j in 0..c {
                acc_v += row[j] * vv.as_slice()[j];
            }
            out[i] = acc_v;
        }
        self.push(Op::MatVec(m, v), Tensor::from_vec(&[r], out))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let out = kernels::conv2d_same(self.value(x), self.value(w), self.value(b));
        debug_assert!(out.all_finite());
        self.push(Op::Conv2d { x, w, b }, out)
    }

    pub fn conv1d_vec(&mut self, x: NodeId, w: NodeId) -> NodeId {
        let out = kernels::conv1d_vec_same(self.value(x).as_slice(), self.value(w));
        self.push(Op::Conv1dVec { x, w }, out)
    }

    /// Max-pool along the trailing (feature) axis of a \[c,t,d] tensor.
    /// The feature axis must divide evenly; configuration validation
    /// guarantees it before graphs are built.
    pub fn maxpool_feat(&mut self, x: NodeId, size: usize) -> NodeId {
        let xv = self.value(x);
        let (c, t, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        assert!(size >= 1 && d % size == 0, "feature axis {d} not divisible by pool {size}");
        let d_out = d / size;
        let mut out = Tensor::zeros(&[c, t, d_out]);
        let mut argmax = vec![0u32; c * t * d_out];
        let xd = xv.as_slice();
        let od = out.as_mut_slice();
        for ci in 0..c {
            for ti in 0..t {
                let src = &xd[(ci * t + ti) * d..(ci * t + ti + 1) * d];
                for j in 0..d_out {
                    let mut best = src[j * size];
                    let mut best_k = j * size;
                    for k in j * size + 1..(j + 1) * size {
                        if src[k] > best {
                            best = src[k];
                            best_k = k;
                        }
                    }
                    od[(ci * t + ti) * d_out + j] = best;
                    argmax[(ci * t + ti) * d_out + j] = ((ci * t + ti) * d + best_k) as u32;
                }
            }
        }
        self.push(Op::MaxPoolFeat { x, argmax }, out)
    }

    /// Max-pool along the time axis of a \[c,t,d] tensor; output time length
    /// floor(t/size), trailing remainder frames dropped.
    pub fn maxpool_time(&mut self, x: NodeId, size: usize) -> NodeId {
        let xv = self.value(x);
        let (c, t, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        assert!(size >= 1);
        let t_out = t / size;
        assert!(t_out >= 1, "time axis {t} shorter than pool {size}");
        let mut out = Tensor::zeros(&[c, t_out, d]);
        let mut argmax = vec![0u32; c * t_out * d];
        let xd = xv.as_slice();
        let od = out.as_mut_slice();
        for ci in 0..c {
            for i in 0..t_out {
                let dst_base = (ci * t_out + i) * d;
                let first = (ci * t + i * size) * d;
                od[dst_base..dst_base + d].copy_from_slice(&xd[first..first + d]);
                for (j, slot) in argmax[dst_base..dst_base + d].iter_mut().enumerate() {
                    *slot = (first + j) as u32;
                }
                for k in 1..size {
                    let src_base = (ci * t + i * size + k) * d;
                    for j in 0..d {
                        if xd[src_base + j] > od[dst_base + j] {
                            od[dst_base + j] = xd[src_base + j];
                            argmax[dst_base + j] = (src_base + j) as u32;
                        }
                    }
                }
            }
        }
        self.push(Op::MaxPoolTime { x, argmax }, out)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), out)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(kernels::sigmoid);
        self.push(Op::Sigmoid(x), out)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), out)
    }

    /// Row-wise layer normalization of a \[t,d] tensor with learnable gain and
    /// bias of shape \[d]. Statistics are per row, so the result is independent
    /// of batch composition.
    pub fn layer_norm_rows(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        const EPS: f64 = 1e-5;
        let xv = self.value(x);
        let (t, d) = (xv.shape()[0], xv.shape()[1]);
        let gv = self.value(gain).as_slice().to_vec();
        let bv = self.value(bias).as_slice().to_vec();
        assert_eq!(gv.len(), d);
        assert_eq!(bv.len(), d);
        let mut out = Tensor::zeros(&[t, d]);
        let mut stats = Vec::with_capacity(t);
        for i in 0..t {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + EPS).sqrt();
            stats.push((mean, inv_std));
            let orow = out.row_mut(i);
            for j in 0..d {
                orow[j] = (row[j] - mean) * inv_std * gv[j] + bv[j];
            }
        }
        debug_assert!(out.all_finite());
        self.push(
            Op::LayerNormRows {
                x,
                gain,
                bias,
                stats,
            },
            out,
        )
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let (t, d) = {
            let first = self.value(parts[0]);
            (first.shape()[1], first.shape()[2])
        };
        let c_total: usize = parts.iter().map(|&p| self.value(p).shape()[0]).sum();
        let mut data = Vec::with_capacity(c_total * t * d);
        for &p in parts {
            let v = self.value(p);
            assert_eq!(&v.shape()[1..], &[t, d], "concat_channels shape mismatch");
            data.extend_from_slice(v.as_slice());
        }
        let out = Tensor::from_vec(&[c_total, t, d], data);
        self.push(Op::ConcatChannels(parts.to_vec()), out)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        let t = av.shape()[0];
        assert_eq!(bv.shape()[0], t);
        let (da, db) = (av.shape()[1], bv.shape()[1]);
        let mut out = Tensor::zeros(&[t, da + db]);
        for i in 0..t {
            let row = out.row_mut(i);
            row[..da].copy_from_slice(av.row(i));
            row[da..].copy_from_slice(bv.row(i));
        }
        self.push(Op::ConcatCols(a, b), out)
    }

    pub fn concat_vec(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut data = self.value(a).as_slice().to_vec();
        data.extend_from_slice(self.value(b).as_slice());
        let n = data.len();
        self.push(Op::ConcatVec(a, b), Tensor::from_vec(&[n], data))
    }

    pub fn row(&mut self, m: NodeId, t: usize) -> NodeId {
        let out = {
            let mv = self.value(m);
            Tensor::from_vec(&[mv.shape()[1]], mv.row(t).to_vec())
        };
        self.push(Op::Row(m, t), out)
    }

    pub fn stack_rows(&mut self, rows: &[NodeId]) -> NodeId {
        assert!(!rows.is_empty());
        let d = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let v = self.value(r);
            assert_eq!(v.len(), d);
            data.extend_from_slice(v.as_slice());
        }
        let out = Tensor::from_vec(&[rows.len(), d], data);
        self.push(Op::StackRows(rows.to_vec()), out)
    }

    pub fn reverse_time(&mut self, m: NodeId) -> NodeId {
        let mv = self.value(m);
        let (t, d) = (mv.shape()[0], mv.shape()[1]);
        let mut out = Tensor::zeros(&[t, d]);
        for i in 0..t {
            out.row_mut(i).copy_from_slice(mv.row(t - 1 - i));
        }
        self.push(Op::ReverseTime(m), out)
    }

    /// \[c,t,d] -> \[t, c*d]; per-frame flattening, channel-major.
    pub fn flatten_channels(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (c, t, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut out = Tensor::zeros(&[t, c * d]);
        let xd = xv.as_slice();
        for ti in 0..t {
            let orow = out.row_mut(ti);
            for ci in 0..c {
                let src = &xd[(ci * t + ti) * d..(ci * t + ti + 1) * d];
                orow[ci * d..(ci + 1) * d].copy_from_slice(src);
            }
        }
        self.push(Op::FlattenChannels(x), out)
    }

    pub fn log_softmax_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (t, k) = (xv.shape()[0], xv.shape()[1]);
        let mut out = Tensor::zeros(&[t, k]);
        for i in 0..t {
            let row = xv.row(i);
            let z = log_sum_exp(row);
            let orow = out.row_mut(i);
            for j in 0..k {
                orow[j] = row[j] - z;
            }
        }
        self.push(Op::LogSoftmaxRows(x), out)
    }

    pub fn log_softmax_vec(&mut self, x: NodeId) -> NodeId {
        let out = kernels::log_softmax_vec(self.value(x).as_slice());
        let n = out.len();
        self.push(Op::LogSoftmaxVec(x), Tensor::from_vec(&[n], out))
    }

    pub fn softmax_vec(&mut self, x: NodeId) -> NodeId {
        let out = kernels::softmax_vec(self.value(x).as_slice());
        let n = out.len();
        self.push(Op::SoftmaxVec(x), Tensor::from_vec(&[n], out))
    }

    pub fn weighted_sum_rows(&mut self, weights: NodeId, m: NodeId) -> NodeId {
        let (wv, mv) = (self.value(weights), self.value(m));
        let (t, d) = (mv.shape()[0], mv.shape()[1]);
        assert_eq!(wv.len(), t);
        let mut out = vec![0.0; d];
        for i in 0..t {
            let w = wv.as_slice()[i];
            if w == 0.0 {
                continue;
            }
            for (o, x) in out.iter_mut().zip(mv.row(i)) {
                *o += w * x;
            }
        }
        self.push(
            Op::WeightedSumRows(weights, m),
            Tensor::from_vec(&[d], out),
        )
    }

    pub fn pick(&mut self, v: NodeId, index: usize) -> NodeId {
        let value = self.value(v).as_slice()[index];
        self.push(Op::Pick(v, index), Tensor::scalar(value))
    }

    pub fn mask_first(&mut self, v: NodeId) -> NodeId {
        let mut out = self.value(v).clone();
        out.as_mut_slice()[0] = f64::NEG_INFINITY;
        self.push(Op::MaskFirst(v), out)
    }

    pub fn embed_row(&mut self, table: NodeId, index: usize) -> NodeId {
        let out = {
            let tv = self.value(table);
            assert!(index < tv.shape()[0], "embedding index {index} out of range");
            Tensor::from_vec(&[tv.shape()[1]], tv.row(index).to_vec())
        };
        self.push(Op::EmbedRow { table, index }, out)
    }

    /// (1-beta) * a + beta * b, beta a scalar node.
    pub fn convex_mix(&mut self, a: NodeId, b: NodeId, beta: NodeId) -> NodeId {
        let beta_v = self.value(beta).item();
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "convex_mix shape mismatch");
        let data = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(x, y)| (1.0 - beta_v) * x + beta_v * y)
            .collect();
        let out = Tensor::from_vec(av.shape(), data);
        self.push(Op::ConvexMix { a, b, beta }, out)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let out = self.value(x).map(|v| k * v);
        self.push(Op::Scale(x, k), out)
    }

    pub fn add_n(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            out.add_assign(self.value(p));
        }
        self.push(Op::AddN(parts.to_vec()), out)
    }

    /// Attach a scalar loss whose gradient w.r.t. `input` was computed by the
    /// caller (used by the CTC forward-backward loss).
    pub fn loss_with_grad(&mut self, input: NodeId, value: f64, input_grad: Tensor) -> NodeId {
        assert_eq!(input_grad.shape(), self.value(input).shape());
        self.push(Op::LossWithGrad { input, input_grad }, Tensor::scalar(value))
    }

    /// Reverse pass from a scalar node; returns gradients per parameter slot.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads = Gradients::empty(self.store.len());
        let mut node_grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        node_grads.resize_with(self.nodes.len(), || None);
        node_grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = node_grads[id].take() else {
                continue;
            };
            match &self.nodes[id].op {
                Op::Input => {}
                Op::Param(slot) => grads.accumulate_owned(*slot, g),
                Op::Add(a, b) => {
                    acc(&mut node_grads, *a, g.clone());
                    acc(&mut node_grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut node_grads, *a, g.clone());
                    acc(&mut node_grads, *b, g.map(|v| -v));
                }
                Op::ElemMul(a, b) => {
                    let ga = mul_tensors(&g, self.value(*b));
                    let gb = mul_tensors(&g, self.value(*a));
                    acc(&mut node_grads, *a, ga);
                    acc(&mut node_grads, *b, gb);
                }
                Op::AddRowBroadcast(m, v) => {
                    let c = self.value(*v).len();
                    let mut gv = vec![0.0; c];
                    for i in 0..g.shape()[0] {
                        kernels::add_in_place(&mut gv, g.row(i));
                    }
                    acc(&mut node_grads, *m, g);
                    acc(&mut node_grads, *v, Tensor::from_vec(&[c], gv));
                }
                Op::Matmul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut node_grads, *a, kernels::matmul_nt(&g, bv));
                    acc(&mut node_grads, *b, kernels::matmul_tn(av, &g));
                }
                Op::MatVec(m, v) => {
                    let (mv, vv) = (self.value(*m), self.value(*v));
                    let (r, c) = (mv.shape()[0], mv.shape()[1]);
                    let gd = g.as_slice();
                    let mut gm = Tensor::zeros(&[r, c]);
                    let mut gv = vec![0.0; c];
                    for i in 0..r {
                        let gi = gd[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let mrow = mv.row(i);
                        let gmrow = gm.row_mut(i);
                        for j in 0..c {
                            gmrow[j] += gi * vv.as_slice()[j];
                            gv[j] += gi * mrow[j];
                        }
                    }
                    acc(&mut node_grads, *m, gm);
                    acc(&mut node_grads, *v, Tensor::from_vec(&[c], gv));
                }
                Op::VecMat(v, m) => {
                    let (vv, mv) = (self.value(*v), self.value(*m));
                    let (k, n) = (mv.shape()[0], mv.shape()[1]);
                    let gd = g.as_slice();
                    let mut gv = vec![0.0; k];
                    let md = mv.as_slice();
                    for i in 0..k {
                        let mut acc_v = 0.0;
                        let mrow = &md[i * n..(i + 1) * n];
                        for j in 0..n {
                            acc_v += mrow[j] * gd[j];
                        }
                        gv[i] = acc_v;
                    }
                    let mut gm = Tensor::zeros(&[k, n]);
                    let gmd = gm.as_mut_slice();
                    for (i, &vi) in vv.as_slice().iter().enumerate() {
                        if vi == 0.0 {
                            continue;
                        }
                        let row = &mut gmd[i * n..(i + 1) * n];
                        for j in 0..n {
                            row[j] += vi * gd[j];
                        }
                    }
                    acc(&mut node_grads, *v, Tensor::from_vec(&[k], gv));
                    acc(&mut node_grads, *m, gm);
                }
                Op::Conv2d { x, w, b } => {
                    let (gx, gw, gb) = conv2d_backward(self.value(*x), self.value(*w), &g);
                    acc(&mut node_grads, *x, gx);
                    acc(&mut node_grads, *w, gw);
                    acc(&mut node_grads, *b, gb);
                }
                Op::Conv1dVec { x, w } => {
                    let (gx, gw) = conv1d_backward(self.value(*x), self.value(*w), &g);
                    acc(&mut node_grads, *x, gx);
                    acc(&mut node_grads, *w, gw);
                }
                Op::MaxPoolFeat { x, argmax, .. } | Op::MaxPoolTime { x, argmax, .. } => {
                    let mut gx = Tensor::zeros(self.value(*x).shape());
                    let gxd = gx.as_mut_slice();
                    for (out_idx, &src) in argmax.iter().enumerate() {
                        gxd[src as usize] += g.as_slice()[out_idx];
                    }
                    acc(&mut node_grads, *x, gx);
                }
                Op::Relu(x) => {
                    let out = self.nodes[id].value.as_ref().unwrap();
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(out.as_slice())
                        .map(|(gi, oi)| if *oi > 0.0 { *gi } else { 0.0 })
                        .collect();
                    acc(&mut node_grads, *x, Tensor::from_vec(g.shape(), data));
                }
                Op::Sigmoid(x) => {
                    let out = self.nodes[id].value.as_ref().unwrap();
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(out.as_slice())
                        .map(|(gi, oi)| gi * oi * (1.0 - oi))
                        .collect();
                    acc(&mut node_grads, *x, Tensor::from_vec(g.shape(), data));
                }
                Op::Tanh(x) => {
                    let out = self.nodes[id].value.as_ref().unwrap();
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(out.as_slice())
                        .map(|(gi, oi)| gi * (1.0 - oi * oi))
                        .collect();
                    acc(&mut node_grads, *x, Tensor::from_vec(g.shape(), data));
                }
                Op::LayerNormRows {
                    x,
                    gain,
                    bias,
                    stats,
                } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gain);
                    let (t, d) = (xv.shape()[0], xv.shape()[1]);
                    let mut gx = Tensor::zeros(&[t, d]);
                    let mut ggain = vec![0.0; d];
                    let mut gbias = vec![0.0; d];
                    for i in 0..t {
                        let (mean, inv_std) = stats[i];
                        let xrow = xv.row(i);
                        let grow = g.row(i);
                        // xhat and dxhat for this row
                        let mut dxhat = vec![0.0; d];
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for j in 0..d {
                            let xhat = (xrow[j] - mean) * inv_std;
                            ggain[j] += grow[j] * xhat;
                            gbias[j] += grow[j];
                            let dx = grow[j] * gv.as_slice()[j];
                            dxhat[j] = dx;
                            sum_dxhat += dx;
                            sum_dxhat_xhat += dx * xhat;
                        }
                        let inv_d = 1.0 / d as f64;
                        let gxrow = gx.row_mut(i);
                        for j in 0..d {
                            let xhat = (xrow[j] - mean) * inv_std;
                            gxrow[j] = inv_std
                                * (dxhat[j] - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
                        }
                    }
                    acc(&mut node_grads, *x, gx);
                    acc(&mut node_grads, *gain, Tensor::from_vec(&[d], ggain));
                    acc(&mut node_grads, *bias, Tensor::from_vec(&[d], gbias));
                }
                Op::ConcatChannels(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let len = pv.len();
                        let slice = g.as_slice()[offset..offset + len].to_vec();
                        acc(&mut node_grads, p, Tensor::from_vec(pv.shape(), slice));
                        offset += len;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (da, db) = (self.value(*a).shape()[1], self.value(*b).shape()[1]);
                    let t = g.shape()[0];
                    let mut ga = Tensor::zeros(&[t, da]);
                    let mut gb = Tensor::zeros(&[t, db]);
                    for i in 0..t {
                        let grow = g.row(i);
                        ga.row_mut(i).copy_from_slice(&grow[..da]);
                        gb.row_mut(i).copy_from_slice(&grow[da..]);
                    }
                    acc(&mut node_grads, *a, ga);
                    acc(&mut node_grads, *b, gb);
                }
                Op::ConcatVec(a, b) => {
                    let da = self.value(*a).len();
                    let gd = g.as_slice();
                    acc(
                        &mut node_grads,
                        *a,
                        Tensor::from_vec(&[da], gd[..da].to_vec()),
                    );
                    acc(
                        &mut node_grads,
                        *b,
                        Tensor::from_vec(&[gd.len() - da], gd[da..].to_vec()),
                    );
                }
                Op::Row(m, t) => {
                    let mv = self.value(*m);
                    let mut gm = Tensor::zeros(mv.shape());
                    gm.row_mut(*t).copy_from_slice(g.as_slice());
                    acc(&mut node_grads, *m, gm);
                }
                Op::StackRows(rows) => {
                    let d = g.shape()[1];
                    for (i, &r) in rows.iter().enumerate() {
                        acc(&mut node_grads, r, Tensor::from_vec(&[d], g.row(i).to_vec()));
                    }
                }
                Op::ReverseTime(m) => {
                    let (t, d) = (g.shape()[0], g.shape()[1]);
                    let mut gm = Tensor::zeros(&[t, d]);
                    for i in 0..t {
                        gm.row_mut(i).copy_from_slice(g.row(t - 1 - i));
                    }
                    acc(&mut node_grads, *m, gm);
                }
                Op::FlattenChannels(x) => {
                    let xv = self.value(*x);
                    let (c, t, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                    let mut gx = Tensor::zeros(&[c, t, d]);
                    let gxd = gx.as_mut_slice();
                    for ti in 0..t {
                        let grow = g.row(ti);
                        for ci in 0..c {
                            let dst = &mut gxd[(ci * t + ti) * d..(ci * t + ti + 1) * d];
                            dst.copy_from_slice(&grow[ci * d..(ci + 1) * d]);
                        }
                    }
                    acc(&mut node_grads, *x, gx);
                }
                Op::LogSoftmaxRows(x) => {
                    let out = self.nodes[id].value.as_ref().unwrap();
                    let (t, k) = (out.shape()[0], out.shape()[1]);
                    let mut gx = Tensor::zeros(&[t, k]);
                    for i in 0..t {
                        let grow = g.row(i);
                        let orow = out.row(i);
                        let gsum: f64 = grow.iter().sum();
                        let gxrow = gx.row_mut(i);
                        for j in 0..k {
                            gxrow[j] = grow[j] - orow[j].exp() * gsum;
                        }
                    }
                    acc(&mut node_grads, *x, gx);
                }
                Op::LogSoftmaxVec(x) => {
                    let out = self.nodes[id].value.as_ref().unwrap();
                    let gsum: f64 = g.as_slice().iter().sum();
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(out.as_slice())
                        .map(|(gi, oi)| gi - oi.exp() * gsum)
                        .collect();
                    acc(&mut node_grads, *x, Tensor::from_vec(g.shape(), data));
                }
                Op::SoftmaxVec(x) => {
                    let out = self.nodes[id].value.as_ref().unwrap();
                    let dot: f64 = g
                        .as_slice()
                        .iter()
                        .zip(out.as_slice())
                        .map(|(gi, oi)| gi * oi)
                        .sum();
                    let data = out
                        .as_slice()
                        .iter()
                        .zip(g.as_slice())
                        .map(|(oi, gi)| oi * (gi - dot))
                        .collect();
                    acc(&mut node_grads, *x, Tensor::from_vec(g.shape(), data));
                }
                Op::WeightedSumRows(w, m) => {
                    let (wv, mv) = (self.value(*w), self.value(*m));
                    let (t, d) = (mv.shape()[0], mv.shape()[1]);
                    let mut gw = vec![0.0; t];
                    let mut gm = Tensor::zeros(&[t, d]);
                    for i in 0..t {
                        let mrow = mv.row(i);
                        let mut dot = 0.0;
                        for j in 0..d {
                            dot += g.as_slice()[j] * mrow[j];
                        }
                        gw[i] = dot;
                        let wi = wv.as_slice()[i];
                        let gmrow = gm.row_mut(i);
                        for j in 0..d {
                            gmrow[j] = wi * g.as_slice()[j];
                        }
                    }
                    acc(&mut node_grads, *w, Tensor::from_vec(&[t], gw));
                    acc(&mut node_grads, *m, gm);
                }
                Op::Pick(v, index) => {
                    let mut gv = Tensor::zeros(self.value(*v).shape());
                    gv.as_mut_slice()[*index] = g.item();
                    acc(&mut node_grads, *v, gv);
                }
                Op::MaskFirst(v) => {
                    let mut gv = g.clone();
                    gv.as_mut_slice()[0] = 0.0;
                    acc(&mut node_grads, *v, gv);
                }
                Op::EmbedRow { table, index } => {
                    let tv = self.value(*table);
                    let mut gt = Tensor::zeros(tv.shape());
                    gt.row_mut(*index).copy_from_slice(g.as_slice());
                    acc(&mut node_grads, *table, gt);
                }
                Op::ConvexMix { a, b, beta } => {
                    let beta_v = self.value(*beta).item();
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut gbeta = 0.0;
                    for ((gi, x), y) in g.as_slice().iter().zip(av.as_slice()).zip(bv.as_slice()) {
                        gbeta += gi * (y - x);
                    }
                    acc(&mut node_grads, *a, g.map(|v| v * (1.0 - beta_v)));
                    acc(&mut node_grads, *b, g.map(|v| v * beta_v));
                    acc(&mut node_grads, *beta, Tensor::scalar(gbeta));
                }
                Op::Scale(x, k) => {
                    let k = *k;
                    acc(&mut node_grads, *x, g.map(|v| k * v));
                }
                Op::AddN(parts) => {
                    for &p in parts {
                        acc(&mut node_grads, p, g.clone());
                    }
                }
                Op::LossWithGrad { input, input_grad } => {
                    let scale = g.item();
                    acc(&mut node_grads, *input, {
                        let mut ig = input_grad.clone();
                        ig.scale_assign(scale);
                        ig
                    });
                }
            }
        }
        grads
    }
}

fn acc(node_grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
    match &mut node_grads[id.0] {
        Some(t) => t.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

fn mul_tensors(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .collect();
    Tensor::from_vec(a.shape(), data)
}

fn conv2d_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (ci, t_len, d_len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, _, kt, kf) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (pt, pf) = (kt / 2, kf / 2);
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[co]);
    let (xd, wd, gd) = (x.as_slice(), w.as_slice(), g.as_slice());
    let gxd = gx.as_mut_slice();
    let gwd = gw.as_mut_slice();
    let gbd = gb.as_mut_slice();
    for oc in 0..co {
        let gplane = &gd[oc * t_len * d_len..(oc + 1) * t_len * d_len];
        gbd[oc] += gplane.iter().sum::<f64>();
        for ic in 0..ci {
            let x_base = ic * t_len * d_len;
            for dt in 0..kt {
                let t_lo = pt.saturating_sub(dt);
                let t_hi = (t_len + pt).saturating_sub(dt).min(t_len);
                if kf == 3 && d_len >= 2 {
                    // Fused passes for the three frequency taps: one dot pass
                    // for the weight gradient, one saxpy pass for the input
                    // gradient (offsets mirror).
                    let base = ((oc * ci + ic) * kt + dt) * 3;
                    let (w0, w1, w2) = (wd[base], wd[base + 1], wd[base + 2]);
                    let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
                    for t in t_lo..t_hi {
                        let src_row = x_base + (t + dt - pt) * d_len;
                        let src = &xd[src_row..src_row + d_len];
                        let grow = &gplane[t * d_len..(t + 1) * d_len];
                        a1 += grow[0] * src[0];
                        a2 += grow[0] * src[1];
                        for d in 1..d_len - 1 {
                            let gv = grow[d];
                            a0 += gv * src[d - 1];
                            a1 += gv * src[d];
                            a2 += gv * src[d + 1];
                        }
                        let gv = grow[d_len - 1];
                        a0 += gv * src[d_len - 2];
                        a1 += gv * src[d_len - 1];
                        let dst = &mut gxd[src_row..src_row + d_len];
                        dst[0] += w1 * grow[0] + w0 * grow[1];
                        for d in 1..d_len - 1 {
                            dst[d] += w2 * grow[d - 1] + w1 * grow[d] + w0 * grow[d + 1];
                        }
                        dst[d_len - 1] += w2 * grow[d_len - 2] + w1 * grow[d_len - 1];
                    }
                    gwd[base] += a0;
                    gwd[base + 1] += a1;
                    gwd[base + 2] += a2;
                    continue;
                }
                for df in 0..kf {
                    let widx = ((oc * ci + ic) * kt + dt) * kf + df;
                    let wv = wd[widx];
                    let d_lo = pf.saturating_sub(df);
                    let d_hi = (d_len + pf).saturating_sub(df).min(d_len);
                    if d_lo >= d_hi {
                        continue;
                    }
                    let mut wacc = 0.0;
                    for t in t_lo..t_hi {
                        let src_row = x_base + (t + dt - pt) * d_len;
                        let grow = &gplane[t * d_len..(t + 1) * d_len];
                        for d in d_lo..d_hi {
                            let gv = grow[d];
                            wacc += gv * xd[src_row + d + df - pf];
                            gxd[src_row + d + df - pf] += gv * wv;
                        }
                    }
                    gwd[widx] += wacc;
                }
            }
        }
    }
    (gx, gw, gb)
}

fn conv1d_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let t_len = x.len();
    let (nf, kw) = (w.shape()[0], w.shape()[1]);
    let pad = kw / 2;
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let (xd, wd, gd) = (x.as_slice(), w.as_slice(), g.as_slice());
    let gxd = gx.as_mut_slice();
    let gwd = gw.as_mut_slice();
    for t in 0..t_len {
        for f in 0..nf {
            let gv = gd[t * nf + f];
            if gv == 0.0 {
                continue;
            }
            for j in 0..kw {
                let src = t + j;
                if src >= pad && src - pad < t_len {
                    gwd[f * kw + j] += gv * xd[src - pad];
                    gxd[src - pad] += gv * wd[f * kw + j];
                }
            }
        }
    }
    (gx, gw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Central-difference check for a scalar graph built from a store.
    fn fd_check(build: impl Fn(&ParamStore, &mut Graph) -> NodeId, store: &mut ParamStore) {
        let mut g = Graph::new(store);
        let loss = build(store, &mut g);
        let analytic = g.backward(loss);
        let loss_of = |store: &ParamStore| -> f64 {
            let mut g = Graph::new(store);
            let loss = build(store, &mut g);
            g.value(loss).item()
        };
        let eps = 1e-6;
        for slot in 0..store.len() {
            for i in 0..store.tensor(slot).len() {
                let orig = store.tensor(slot).as_slice()[i];
                store.tensor_mut(slot).as_mut_slice()[i] = orig + eps;
                let up = loss_of(store);
                store.tensor_mut(slot).as_mut_slice()[i] = orig - eps;
                let down = loss_of(store);
                store.tensor_mut(slot).as_mut_slice()[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic.get(slot).map(|t| t.as_slice()[i]).unwrap_or(0.0);
                let denom = a.abs().max(numeric.abs()).max(1e-12);
                assert!(
                    (a - numeric).abs() / denom < 1e-4,
                    "slot {slot} [{i}]: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
        let len: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
    }

    #[test]
    fn matmul_chain_gradients() {
        let mut rng = Rng::seed(11);
        let mut store = ParamStore::new();
        store.insert("a", rand_tensor(&[3, 4], &mut rng));
        store.insert("b", rand_tensor(&[4, 2], &mut rng));
        fd_check(
            |_s, g| {
                let a = g.param("a");
                let b = g.param("b");
                let c = g.matmul(a, b);
                let t = g.tanh(c);
                // reduce to scalar by summing via weighted rows
                let w = g.input(Tensor::from_vec(&[3], vec![1.0, -0.5, 2.0]));
                let v = g.weighted_sum_rows(w, t);
                let p0 = g.pick(v, 0);
                let p1 = g.pick(v, 1);
                g.add(p0, p1)
            },
            &mut store,
        );
    }

    #[test]
    fn conv_pool_flatten_gradients() {
        let mut rng = Rng::seed(13);
        let mut store = ParamStore::new();
        store.insert("x", rand_tensor(&[2, 4, 6], &mut rng));
        store.insert("w", rand_tensor(&[3, 2, 3, 3], &mut rng));
        store.insert("b", rand_tensor(&[3], &mut rng));
        store.insert("proj", rand_tensor(&[9, 1], &mut rng));
        fd_check(
            |_s, g| {
                let x = g.param("x");
                let w = g.param("w");
                let b = g.param("b");
                let c = g.conv2d(x, w, b);
                let r = g.relu(c);
                let p1 = g.maxpool_feat(r, 2);
                let p2 = g.maxpool_time(p1, 2);
                let f = g.flatten_channels(p2);
                let proj = g.param("proj");
                let y = g.matmul(f, proj);
                let wsum = g.input(Tensor::from_vec(&[2], vec![1.0, 1.0]));
                let v = g.weighted_sum_rows(wsum, y);
                g.pick(v, 0)
            },
            &mut store,
        );
    }

    #[test]
    fn layer_norm_softmax_gradients() {
        let mut rng = Rng::seed(17);
        let mut store = ParamStore::new();
        store.insert("x", rand_tensor(&[3, 5], &mut rng));
        store.insert("gain", rand_tensor(&[5], &mut rng));
        store.insert("bias", rand_tensor(&[5], &mut rng));
        fd_check(
            |_s, g| {
                let x = g.param("x");
                let gain = g.param("gain");
                let bias = g.param("bias");
                let n = g.layer_norm_rows(x, gain, bias);
                let ls = g.log_softmax_rows(n);
                let r0 = g.row(ls, 0);
                let r1 = g.row(ls, 2);
                let s = g.concat_vec(r0, r1);
                let p = g.pick(s, 3);
                let q = g.pick(s, 7);
                g.add(p, q)
            },
            &mut store,
        );
    }

    #[test]
    fn convex_mix_endpoints_bitwise() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::from_vec(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]));
        let b = g.input(Tensor::from_vec(&[2, 2], vec![4.0, 2.0, -1.0, 7.0]));
        let zero = g.scalar(0.0);
        let one = g.scalar(1.0);
        let m0 = g.convex_mix(a, b, zero);
        let m1 = g.convex_mix(a, b, one);
        assert_eq!(g.value(m0).as_slice(), g.value(a).as_slice());
        assert_eq!(g.value(m1).as_slice(), g.value(b).as_slice());
    }

    #[test]
    fn convex_mix_gradient_flows_to_beta() {
        let mut rng = Rng::seed(19);
        let mut store = ParamStore::new();
        store.insert("f1", rand_tensor(&[4], &mut rng));
        store.insert("f2", rand_tensor(&[4], &mut rng));
        store.insert("beta_raw", Tensor::scalar(0.2));
        fd_check(
            |_s, g| {
                let f1 = g.param("f1");
                let f2 = g.param("f2");
                let raw = g.param("beta_raw");
                let beta = g.sigmoid(raw);
                let mix = g.convex_mix(f1, f2, beta);
                let sq = g.elem_mul(mix, mix);
                let parts: Vec<NodeId> = (0..4).map(|i| g.pick(sq, i)).collect();
                g.add_n(&parts)
            },
            &mut store,
        );
    }

    #[test]
    fn mask_first_blocks_gradient() {
        let mut store = ParamStore::new();
        store.insert("v", Tensor::from_vec(&[3], vec![0.5, 1.0, -1.0]));
        let mut g = Graph::new(&store);
        let v = g.param("v");
        let masked = g.mask_first(v);
        let ls = g.log_softmax_vec(masked);
        let loss = g.pick(ls, 1);
        let grads = g.backward(loss);
        let gv = grads.get(0).unwrap();
        assert_eq!(gv.as_slice()[0], 0.0);
        assert_eq!(g.value(masked).as_slice()[0], f64::NEG_INFINITY);
    }

    #[test]
    fn forward_deterministic() {
        let mut rng = Rng::seed(23);
        let mut store = ParamStore::new();
        store.insert("w", rand_tensor(&[6, 6], &mut rng));
        let x = rand_tensor(&[4, 6], &mut rng);
        let run = |store: &ParamStore, x: &Tensor| -> Vec<f64> {
            let mut g = Graph::new(store);
            let xi = g.input(x.clone());
            let w = g.param("w");
            let y = g.matmul(xi, w);
            let t = g.tanh(y);
            g.value(t).as_slice().to_vec()
        };
        let a = run(&store, &x);
        let b = run(&store, &x);
        assert_eq!(a, b);
    }
}
