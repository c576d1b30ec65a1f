//! Tape-based reverse-mode differentiation.
//!
//! Every op evaluates eagerly and appends a node; `backward` walks the tape
//! in reverse. Nodes are only differentiated when a parameter feeds them.

use std::collections::HashMap;

use super::kernels::{self, Conv3dGeom, PoolGeom};
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv3d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: Conv3dGeom,
    },
    MaxPool3d {
        x: NodeId,
        arg: Vec<usize>,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    ScaleChannels {
        x: NodeId,
        gate: NodeId,
    },
    ChannelMean(NodeId),
    ConcatRows(Vec<NodeId>),
    Reshape(NodeId),
    MatMul(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    Transpose(NodeId),
    SoftmaxRows(NodeId),
    LayerNormRows {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MeanRows(NodeId),
    MaxRows {
        x: NodeId,
        arg: Vec<usize>,
    },
    ConcatCols(Vec<NodeId>),
    SliceCols {
        x: NodeId,
        start: usize,
    },
    Mse {
        pred: NodeId,
        target: Vec<f64>,
    },
    L1 {
        pred: NodeId,
        target: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, NodeId>,
}

fn shape_err(msg: String) -> Error {
    Error::ShapeMismatch(msg)
}

fn dims2(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(shape_err(format!("expected a matrix, got {s:?}"))),
    }
}

fn dims4(t: &Tensor) -> Result<[usize; 4]> {
    match t.shape() {
        [c, d, h, w] => Ok([*c, *d, *h, *w]),
        s => Err(shape_err(format!("expected [C, D, H, W], got {s:?}"))),
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes held by node values.
    pub fn bytes(&self) -> usize {
        self.nodes.iter().map(|n| n.value.len() * 8).sum()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[NodeId]) -> NodeId {
        let requires_grad = match op {
            Op::Param(_) => true,
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn v(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Constant input; never differentiated.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, &[])
    }

    /// Parameter node, shared across repeated uses within the graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.params.get(&id) {
            return n;
        }
        let n = self.push(store.get(id).clone(), Op::Param(id), &[]);
        self.params.insert(id, n);
        n
    }

    /// 3-D convolution. `x` is `[C, D, H, W]`, `w` is `[O, C, kd, kh, kw]`,
    /// `b` is `[O]`.
    pub fn conv3d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<NodeId> {
        let [c, d, h, wd] = dims4(self.v(x))?;
        let ws = self.v(w).shape().to_vec();
        if ws.len() != 5 || ws[1] != c {
            return Err(shape_err(format!(
                "conv weight {ws:?} does not fit input channels {c}"
            )));
        }
        if let Some(b) = b {
            if self.v(b).shape() != [ws[0]] {
                return Err(shape_err(format!(
                    "conv bias {:?} for {} outputs",
                    self.v(b).shape(),
                    ws[0]
                )));
            }
        }
        if stride.contains(&0) {
            return Err(Error::InvalidArgument("zero stride".into()));
        }
        let geom = Conv3dGeom {
            in_ch: c,
            out_ch: ws[0],
            input: [d, h, wd],
            kernel: [ws[2], ws[3], ws[4]],
            stride,
            pad,
        };
        let o = geom.output();
        if o.contains(&0) {
            return Err(shape_err(format!(
                "conv output empty for input {:?}",
                [d, h, wd]
            )));
        }
        let out = kernels::conv3d_forward(
            &geom,
            self.v(x).data(),
            self.v(w).data(),
            b.map(|b| self.v(b).data()),
        );
        let value = Tensor::new(vec![geom.out_ch, o[0], o[1], o[2]], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(value, Op::Conv3d { x, w, b, geom }, &parents))
    }

    pub fn maxpool3d(
        &mut self,
        x: NodeId,
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<NodeId> {
        let [c, d, h, w] = dims4(self.v(x))?;
        if (0..3).any(|a| pad[a] >= kernel[a] || stride[a] == 0) {
            return Err(Error::InvalidArgument(
                "pooling padding must be smaller than the kernel".into(),
            ));
        }
        let geom = PoolGeom {
            channels: c,
            input: [d, h, w],
            kernel,
            stride,
            pad,
        };
        let o = geom.output();
        if o.contains(&0) {
            return Err(shape_err(format!(
                "pool output empty for input {:?}",
                [d, h, w]
            )));
        }
        let (out, arg) = kernels::maxpool3d_forward(&geom, self.v(x).data());
        let value = Tensor::new(vec![c, o[0], o[1], o[2]], out)?;
        Ok(self.push(value, Op::MaxPool3d { x, arg }, &[x]))
    }

    fn map(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let t = self.v(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
            .expect("same shape");
        self.push(value, op, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        self.map(x, |v| v * k, Op::Scale(x, k))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.v(a), self.v(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(format!(
                "add {:?} + {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Multiplies channel `c` of `x` (`[C, ...]`) by `gate[c]`.
    pub fn scale_channels(&mut self, x: NodeId, gate: NodeId) -> Result<NodeId> {
        let (tx, tg) = (self.v(x), self.v(gate));
        if tg.len() != tx.rows() {
            return Err(shape_err(format!(
                "gate of {} for {} channels",
                tg.len(),
                tx.rows()
            )));
        }
        let n = tx.row_len();
        let mut data = tx.data().to_vec();
        for (c, chunk) in data.chunks_mut(n.max(1)).enumerate() {
            let g = tg.data()[c];
            chunk.iter_mut().for_each(|v| *v *= g);
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(value, Op::ScaleChannels { x, gate }, &[x, gate]))
    }

    /// Mean over everything but the first axis: `[C, ...] -> [C]`.
    pub fn channel_mean(&mut self, x: NodeId) -> NodeId {
        let t = self.v(x);
        let n = t.row_len();
        let data = t
            .data()
            .chunks(n.max(1))
            .map(|c| c.iter().sum::<f64>() / n as f64)
            .collect();
        let value = Tensor::new(vec![t.rows()], data).expect("row count");
        self.push(value, Op::ChannelMean(x), &[x])
    }

    /// Concatenation along the first axis.
    pub fn concat_rows(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = xs
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty concat".into()))?;
        let tail = self.v(*first).shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &x in xs {
            let t = self.v(x);
            if t.shape()[1..] != tail[..] {
                return Err(shape_err(format!(
                    "concat {:?} with trailing {tail:?}",
                    t.shape()
                )));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::ConcatRows(xs.to_vec()), xs))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.v(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = dims2(self.v(a))?;
        let (k2, n) = dims2(self.v(b))?;
        if k != k2 {
            return Err(shape_err(format!("matmul [{m}, {k}] x [{k2}, {n}]")));
        }
        let value = Tensor::new(
            vec![m, n],
            matmul_raw(self.v(a).data(), self.v(b).data(), m, k, n),
        )?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `x` is `[m, n]`, `b` is `[n]`.
    pub fn add_row_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (_, n) = dims2(self.v(x))?;
        if self.v(b).len() != n {
            return Err(shape_err(format!(
                "bias of {} for {n} columns",
                self.v(b).len()
            )));
        }
        let bias = self.v(b).data().to_vec();
        let mut data = self.v(x).data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            row.iter_mut().zip(&bias).for_each(|(v, b)| *v += b);
        }
        let value = Tensor::new(self.v(x).shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddRowBias(x, b), &[x, b]))
    }

    /// `x @ w + b`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        self.add_row_bias(y, b)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = dims2(self.v(x))?;
        let value = Tensor::new(vec![n, m], transpose_raw(self.v(x).data(), m, n))?;
        Ok(self.push(value, Op::Transpose(x), &[x]))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (_, n) = dims2(self.v(x))?;
        let mut data = self.v(x).data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let value = Tensor::new(self.v(x).shape().to_vec(), data)?;
        Ok(self.push(value, Op::SoftmaxRows(x), &[x]))
    }

    /// Per-row normalization with learned `gamma`, `beta` of length `n`.
    pub fn layer_norm_rows(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (m, n) = dims2(self.v(x))?;
        if self.v(gamma).len() != n || self.v(beta).len() != n {
            return Err(shape_err(format!(
                "layer norm affine size does not match {n}"
            )));
        }
        let (g, bt) = (self.v(gamma).data(), self.v(beta).data());
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.v(x).data()[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = g[j] * h + bt[j];
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            value,
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Column means: `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = dims2(self.v(x))?;
        let mut out = vec![0.0; n];
        for row in self.v(x).data().chunks(n.max(1)) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let value = Tensor::new(vec![1, n], out)?;
        Ok(self.push(value, Op::MeanRows(x), &[x]))
    }

    /// Column maxima: `[m, n] -> [1, n]`.
    pub fn max_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = dims2(self.v(x))?;
        let d = self.v(x).data();
        let mut out = vec![f64::NEG_INFINITY; n];
        let mut arg = vec![0; n];
        for i in 0..m {
            for j in 0..n {
                if i == 0 || d[i * n + j] > out[j] {
                    out[j] = d[i * n + j];
                    arg[j] = i * n + j;
                }
            }
        }
        let value = Tensor::new(vec![1, n], out)?;
        Ok(self.push(value, Op::MaxRows { x, arg }, &[x]))
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = xs
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty concat".into()))?;
        let (m, _) = dims2(self.v(*first))?;
        let mut widths = Vec::new();
        for &x in xs {
            let (mi, ni) = dims2(self.v(x))?;
            if mi != m {
                return Err(shape_err(format!("concat_cols rows {mi} vs {m}")));
            }
            widths.push(ni);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.v(x).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(vec![m, total], out)?;
        Ok(self.push(value, Op::ConcatCols(xs.to_vec()), xs))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = dims2(self.v(x))?;
        if start + len > n || len == 0 {
            return Err(shape_err(format!(
                "columns {start}..{} of {n}",
                start + len
            )));
        }
        let d = self.v(x).data();
        let out = (0..m)
            .flat_map(|i| d[i * n + start..i * n + start + len].iter().copied())
            .collect();
        let value = Tensor::new(vec![m, len], out)?;
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    fn check_target(&self, pred: NodeId, target: &[f64]) -> Result<()> {
        if self.v(pred).len() != target.len() || target.is_empty() {
            return Err(shape_err(format!(
                "{} predictions for {} targets",
                self.v(pred).len(),
                target.len()
            )));
        }
        Ok(())
    }

    /// Mean squared error against constant targets.
    pub fn mse(&mut self, pred: NodeId, target: &[f64]) -> Result<NodeId> {
        self.check_target(pred, target)?;
        let v = mse_value(self.v(pred).data(), target);
        Ok(self.push(
            Tensor::scalar(v),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            &[pred],
        ))
    }

    /// Mean absolute error against constant targets.
    pub fn l1(&mut self, pred: NodeId, target: &[f64]) -> Result<NodeId> {
        self.check_target(pred, target)?;
        let v = l1_value(self.v(pred).data(), target);
        Ok(self.push(
            Tensor::scalar(v),
            Op::L1 {
                pred,
                target: target.to_vec(),
            },
            &[pred],
        ))
    }

    /// Gradients of the scalar `loss` with respect to every parameter in
    /// the graph.
    pub fn backward(&self, loss: NodeId, store: &ParamStore) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        if self.v(loss).len() != 1 {
            return Err(shape_err(format!(
                "loss must be scalar, got {:?}",
                self.v(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients {
            grads: vec![None; store.len()],
        };
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop(node, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn backprop(
        &self,
        node: &Node,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) -> Result<()> {
        let mut acc = |id: NodeId, delta: Vec<f64>| {
            if !self.needs(id) {
                return;
            }
            match &mut grads[id.0] {
                Some(e) => e.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
                slot => *slot = Some(delta),
            }
        };
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Param(pid) => {
                let t = Tensor::new(node.value.shape().to_vec(), g)?;
                match &mut out.grads[pid.0] {
                    Some(e) => e.add_assign(&t),
                    slot => *slot = Some(t),
                }
            }
            Op::Conv3d { x, w, b, geom } => {
                if self.needs(*x) {
                    acc(
                        *x,
                        kernels::conv3d_backward_input(geom, &g, self.v(*w).data()),
                    );
                }
                if self.needs(*w) || b.is_some_and(|b| self.needs(b)) {
                    let (gw, gb) = kernels::conv3d_backward_params(geom, &g, self.v(*x).data());
                    acc(*w, gw);
                    if let Some(b) = b {
                        acc(*b, gb);
                    }
                }
            }
            Op::MaxPool3d { x, arg } => {
                let mut gx = vec![0.0; self.v(*x).len()];
                for (gv, &a) in g.iter().zip(arg) {
                    gx[a] += gv;
                }
                acc(*x, gx);
            }
            Op::Relu(x) => acc(
                *x,
                g.iter()
                    .zip(y)
                    .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                    .collect(),
            ),
            Op::Sigmoid(x) => acc(
                *x,
                g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
            ),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g);
            }
            Op::Scale(x, k) => acc(*x, g.iter().map(|v| v * k).collect()),
            Op::ScaleChannels { x, gate } => {
                let tx = self.v(*x);
                let gt = self.v(*gate).data();
                let n = tx.row_len().max(1);
                if self.needs(*x) {
                    let gx = g
                        .chunks(n)
                        .enumerate()
                        .flat_map(|(c, ch)| ch.iter().map(move |v| v * gt[c]))
                        .collect();
                    acc(*x, gx);
                }
                let gg = g
                    .chunks(n)
                    .zip(tx.data().chunks(n))
                    .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).sum())
                    .collect();
                acc(*gate, gg);
            }
            Op::ChannelMean(x) => {
                let n = self.v(*x).row_len();
                let gx = g
                    .iter()
                    .flat_map(|v| std::iter::repeat_n(v / n as f64, n))
                    .collect();
                acc(*x, gx);
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for &x in xs {
                    let len = self.v(x).len();
                    acc(x, g[off..off + len].to_vec());
                    off += len;
                }
            }
            Op::Reshape(x) => acc(*x, g),
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.v(*a))?;
                let (_, n) = dims2(self.v(*b))?;
                if self.needs(*a) {
                    let bt = transpose_raw(self.v(*b).data(), k, n);
                    acc(*a, matmul_raw(&g, &bt, m, n, k));
                }
                if self.needs(*b) {
                    let at = transpose_raw(self.v(*a).data(), m, k);
                    acc(*b, matmul_raw(&at, &g, k, m, n));
                }
            }
            Op::AddRowBias(x, b) => {
                let n = self.v(*b).len();
                let mut gb = vec![0.0; n];
                for row in g.chunks(n.max(1)) {
                    gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                acc(*b, gb);
                acc(*x, g);
            }
            Op::Transpose(x) => {
                let (m, n) = dims2(self.v(*x))?;
                acc(*x, transpose_raw(&g, n, m));
            }
            Op::SoftmaxRows(x) => {
                let n = node.value.row_len().max(1);
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), dst) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dst[j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, gx);
            }
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = node.value.row_len().max(1);
                let gam = self.v(*gamma).data();
                let mut gg = vec![0.0; n];
                let mut gbeta = vec![0.0; n];
                let mut gx = vec![0.0; g.len()];
                for (i, (gr, hr)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..n {
                        gg[j] += gr[j] * hr[j];
                        gbeta[j] += gr[j];
                        let gh = gr[j] * gam[j];
                        m1 += gh;
                        m2 += gh * hr[j];
                    }
                    m1 /= n as f64;
                    m2 /= n as f64;
                    for j in 0..n {
                        gx[i * n + j] = inv_std[i] * (gr[j] * gam[j] - m1 - hr[j] * m2);
                    }
                }
                acc(*x, gx);
                acc(*gamma, gg);
                acc(*beta, gbeta);
            }
            Op::MeanRows(x) => {
                let m = self.v(*x).rows();
                let gx = (0..m)
                    .flat_map(|_| g.iter().map(move |v| v / m as f64))
                    .collect();
                acc(*x, gx);
            }
            Op::MaxRows { x, arg } => {
                let mut gx = vec![0.0; self.v(*x).len()];
                for (gv, &a) in g.iter().zip(arg) {
                    gx[a] += gv;
                }
                acc(*x, gx);
            }
            Op::ConcatCols(xs) => {
                let (m, total) = dims2(&node.value)?;
                let mut off = 0;
                for &x in xs {
                    let w = self.v(x).shape()[1];
                    let gx = (0..m)
                        .flat_map(|i| g[i * total + off..i * total + off + w].iter().copied())
                        .collect();
                    acc(x, gx);
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = dims2(self.v(*x))?;
                let len = node.value.shape()[1];
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    gx[i * n + start..i * n + start + len]
                        .copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                acc(*x, gx);
            }
            Op::Mse { pred, target } => {
                let p = self.v(*pred).data();
                let k = 2.0 * g[0] / p.len() as f64;
                acc(
                    *pred,
                    p.iter().zip(target).map(|(p, t)| k * (p - t)).collect(),
                );
            }
            Op::L1 { pred, target } => {
                let p = self.v(*pred).data();
                let k = g[0] / p.len() as f64;
                let gx = p
                    .iter()
                    .zip(target)
                    .map(|(p, t)| {
                        let d = p - t;
                        if d > 0.0 {
                            k
                        } else if d < 0.0 {
                            -k
                        } else {
                            0.0
                        }
                    })
                    .collect();
                acc(*pred, gx);
            }
        }
        Ok(())
    }
}

pub fn mse_value(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64
}

pub fn l1_value(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64
}
