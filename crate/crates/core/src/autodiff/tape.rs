use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::gemm::{gemm, View};
use super::tensor::{NodeRef, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

const LAYER_NORM_EPS: f64 = 1e-5;

/// Primitive operation recorded on a tape. Inputs are stored as tensors so
/// constant operands keep their values for the backward pass.
#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    ScaleColumns(Tensor, Vec<f64>),
    Relu(Tensor),
    Square(Tensor),
    Sum(Tensor),
    Reshape(Tensor),
    SliceCols(Tensor, usize),
    ConcatCols(Vec<Tensor>),
    LayerNorm {
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout(Tensor, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    op: Op,
}

/// Define-by-run record of primitive operations.
///
/// Nodes are appended in evaluation order, so parents always precede their
/// children. Operations whose inputs are all detached are evaluated without
/// being recorded. A tape built with [`Tape::no_grad`] never records.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    recording: bool,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            recording: true,
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// A tape that evaluates primitives but records nothing.
    pub fn no_grad() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `value` as a differentiable leaf.
    pub fn leaf(&self, value: &Tensor) -> Tensor {
        if !self.recording {
            return value.detach();
        }
        let node = self.push(value.shape().to_vec(), Op::Leaf);
        value.with_node(node)
    }

    pub fn var(&self, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        Ok(self.leaf(&Tensor::new(shape, data)?))
    }

    fn push(&self, shape: Vec<usize>, op: Op) -> NodeRef {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, op });
        NodeRef {
            tape: self.id,
            index: nodes.len() - 1,
        }
    }

    fn check(&self, inputs: &[&Tensor]) -> Result<()> {
        for t in inputs {
            if let Some(node) = t.node {
                if node.tape != self.id {
                    return Err(Error::NotOnTape);
                }
            }
        }
        Ok(())
    }

    fn record(&self, shape: Vec<usize>, data: Vec<f64>, inputs: &[&Tensor], op: impl FnOnce() -> Op) -> Tensor {
        let out = Tensor::from_parts(shape, data);
        if self.recording && inputs.iter().any(|t| t.node.is_some()) {
            let node = self.push(out.shape().to_vec(), op());
            out.with_node(node)
        } else {
            out
        }
    }

    fn dims2(op: &'static str, a: &Tensor) -> Result<(usize, usize)> {
        a.dims2().ok_or_else(|| Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: vec![],
        })
    }

    fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::Shape {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// `a (m x k) * b (k x n)`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.check(&[a, b])?;
        let shape_err = || Error::Shape {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        let (m, k) = a.dims2().ok_or_else(shape_err)?;
        let (k2, n) = b.dims2().ok_or_else(shape_err)?;
        if k != k2 {
            return Err(shape_err());
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, View::rows(a.data(), k), View::rows(b.data(), n), 0.0, &mut out);
        Ok(self.record(vec![m, n], out, &[a, b], || Op::MatMul(a.clone(), b.clone())))
    }

    /// Elementwise sum. `b` may also be a row vector (`[n]` or `[1, n]`)
    /// broadcast over the rows of a 2-D `a`.
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.check(&[a, b])?;
        let data = if a.shape() == b.shape() {
            a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()
        } else {
            let n = Self::row_broadcast_width(a, b).ok_or_else(|| Error::Shape {
                op: "add",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })?;
            let bias = b.data();
            a.data()
                .chunks(n)
                .flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y))
                .collect()
        };
        Ok(self.record(a.shape().to_vec(), data, &[a, b], || Op::Add(a.clone(), b.clone())))
    }

    fn row_broadcast_width(a: &Tensor, b: &Tensor) -> Option<usize> {
        let (_, n) = a.dims2()?;
        match b.shape() {
            [len] | [1, len] if *len == n => Some(n),
            _ => None,
        }
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.check(&[a, b])?;
        Self::same_shape("sub", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        Ok(self.record(a.shape().to_vec(), data, &[a, b], || Op::Sub(a.clone(), b.clone())))
    }

    /// Elementwise product.
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.check(&[a, b])?;
        Self::same_shape("mul", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        Ok(self.record(a.shape().to_vec(), data, &[a, b], || Op::Mul(a.clone(), b.clone())))
    }

    pub fn scale(&self, a: &Tensor, factor: f64) -> Result<Tensor> {
        self.check(&[a])?;
        let data = a.data().iter().map(|x| x * factor).collect();
        Ok(self.record(a.shape().to_vec(), data, &[a], || Op::Scale(a.clone(), factor)))
    }

    /// Per-column affine map `a[:, j] * scale[j] + shift[j]` of a 2-D tensor.
    pub fn scale_shift(&self, a: &Tensor, scale: &[f64], shift: &[f64]) -> Result<Tensor> {
        self.check(&[a])?;
        let (_, n) = Self::dims2("scale_shift", a)?;
        if scale.len() != n || shift.len() != n {
            return Err(Error::Shape {
                op: "scale_shift",
                lhs: a.shape().to_vec(),
                rhs: vec![scale.len(), shift.len()],
            });
        }
        let data = a
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(scale).zip(shift).map(|((x, s), b)| x * s + b))
            .collect();
        Ok(self.record(a.shape().to_vec(), data, &[a], || {
            Op::ScaleColumns(a.clone(), scale.to_vec())
        }))
    }

    /// Elementwise `max(x, 0)`; derivative at 0 is taken as 0. NaN propagates.
    pub fn relu(&self, a: &Tensor) -> Result<Tensor> {
        self.check(&[a])?;
        let data = a.data().iter().map(|&x| if x <= 0.0 { 0.0 } else { x }).collect();
        Ok(self.record(a.shape().to_vec(), data, &[a], || Op::Relu(a.clone())))
    }

    pub fn square(&self, a: &Tensor) -> Result<Tensor> {
        self.check(&[a])?;
        let data = a.data().iter().map(|x| x * x).collect();
        Ok(self.record(a.shape().to_vec(), data, &[a], || Op::Square(a.clone())))
    }

    /// Sum of all elements, as a shape-`[1]` tensor.
    pub fn sum(&self, a: &Tensor) -> Result<Tensor> {
        self.check(&[a])?;
        let total = a.data().iter().sum();
        Ok(self.record(vec![1], vec![total], &[a], || Op::Sum(a.clone())))
    }

    pub fn reshape(&self, a: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
        self.check(&[a])?;
        if shape.iter().product::<usize>() != a.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: a.shape().to_vec(),
                rhs: shape,
            });
        }
        Ok(self.record(shape, a.to_vec(), &[a], || Op::Reshape(a.clone())))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&self, a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        self.check(&[a])?;
        let (m, n) = Self::dims2("slice_cols", a)?;
        if start >= end || end > n {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: a.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let data = a
            .data()
            .chunks(n)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        Ok(self.record(vec![m, end - start], data, &[a], || Op::SliceCols(a.clone(), start)))
    }

    /// Horizontal concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(&self, parts: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        self.check(&refs)?;
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("concat_cols of nothing".into()))?;
        let (m, _) = Self::dims2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            match p.dims2() {
                Some((rows, cols)) if rows == m => widths.push(cols),
                _ => {
                    return Err(Error::Shape {
                        op: "concat_cols",
                        lhs: first.shape().to_vec(),
                        rhs: p.shape().to_vec(),
                    })
                }
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        Ok(self.record(vec![m, total], data, &refs, || Op::ConcatCols(parts.to_vec())))
    }

    /// Row-wise layer normalization of a 2-D tensor with affine `gamma`, `beta` (length = columns).
    pub fn layer_norm(&self, x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
        self.check(&[x, gamma, beta])?;
        let (m, n) = Self::dims2("layer_norm", x)?;
        if gamma.len() != n || beta.len() != n {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &x.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..n {
                let h = (row[c] - mean) * inv;
                xhat[r * n + c] = h;
                out[r * n + c] = h * gamma.data()[c] + beta.data()[c];
            }
        }
        Ok(self.record(vec![m, n], out, &[x, gamma, beta], || Op::LayerNorm {
            x: x.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            xhat,
            inv_std,
        }))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// rescales survivors by `1 / (1 - rate)`. Identity when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&self, a: &Tensor, rate: f64, rng: &mut R) -> Result<Tensor> {
        self.check(&[a])?;
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a.clone());
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..a.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = a.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(self.record(a.shape().to_vec(), data, &[a], || Op::Dropout(a.clone(), mask)))
    }

    /// `x * w + b` for `x: [m, k]`, `w: [k, n]`, `b: [n]`.
    pub fn linear(&self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        let xw = self.matmul(x, w)?;
        self.add(&xw, b)
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: &Tensor) -> Result<Gradients> {
        let node = root.node.ok_or(Error::NotOnTape)?;
        if node.tape != self.id {
            return Err(Error::NotOnTape);
        }
        if !root.is_scalar() {
            return Err(Error::NonScalarRoot(root.shape().to_vec()));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; node.index + 1];
        grads[node.index] = Some(vec![1.0]);

        for i in (0..=node.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &nodes[i].op {
                Op::Leaf => grads[i] = Some(g),
                Op::MatMul(a, b) => {
                    let (m, k) = a.dims2().expect("matmul lhs is 2-D");
                    let n = b.shape()[1];
                    if let Some(idx) = index_of(a) {
                        let acc = slot(&mut grads, idx, m * k);
                        gemm(m, n, k, View::rows(&g, n), View::transposed(b.data(), n), 1.0, acc);
                    }
                    if let Some(idx) = index_of(b) {
                        let acc = slot(&mut grads, idx, k * n);
                        gemm(k, m, n, View::transposed(a.data(), k), View::rows(&g, n), 1.0, acc);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, &g);
                    if let Some(idx) = index_of(b) {
                        if a.shape() == b.shape() {
                            add_into(slot(&mut grads, idx, g.len()), &g);
                        } else {
                            let n = b.len();
                            let acc = slot(&mut grads, idx, n);
                            for row in g.chunks(n) {
                                add_into(acc, row);
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, a, &g);
                    if let Some(idx) = index_of(b) {
                        let acc = slot(&mut grads, idx, g.len());
                        acc.iter_mut().zip(&g).for_each(|(s, v)| *s -= v);
                    }
                }
                Op::Mul(a, b) => {
                    if let Some(idx) = index_of(a) {
                        let acc = slot(&mut grads, idx, g.len());
                        for ((s, gv), bv) in acc.iter_mut().zip(&g).zip(b.data()) {
                            *s += gv * bv;
                        }
                    }
                    if let Some(idx) = index_of(b) {
                        let acc = slot(&mut grads, idx, g.len());
                        for ((s, gv), av) in acc.iter_mut().zip(&g).zip(a.data()) {
                            *s += gv * av;
                        }
                    }
                }
                Op::Scale(a, f) => {
                    if let Some(idx) = index_of(a) {
                        let acc = slot(&mut grads, idx, g.len());
                        acc.iter_mut().zip(&g).for_each(|(s, v)| *s += v * f);
                    }
                }
                Op::ScaleColumns(a, scale) => {
                    if let Some(idx) = index_of(a) {
                        let n = scale.len();
                        let acc = slot(&mut grads, idx, g.len());
                        for (arow, grow) in acc.chunks_mut(n).zip(g.chunks(n)) {
                            for ((s, v), f) in arow.iter_mut().zip(grow).zip(scale) {
                                *s += v * f;
                            }
                        }
                    }
                }
                Op::Relu(a) => {
                    if let Some(idx) = index_of(a) {
                        let acc = slot(&mut grads, idx, g.len());
                        for ((s, v), x) in acc.iter_mut().zip(&g).zip(a.data()) {
                            if *x > 0.0 {
                                *s += v;
                            }
                        }
                    }
                }
                Op::Square(a) => {
                    if let Some(idx) = index_of(a) {
                        let acc = slot(&mut grads, idx, g.len());
                        for ((s, v), x) in acc.iter_mut().zip(&g).zip(a.data()) {
                            *s += 2.0 * x * v;
                        }
                    }
                }
                Op::Sum(a) => {
                    if let Some(idx) = index_of(a) {
                        let acc = slot(&mut grads, idx, a.len());
                        acc.iter_mut().for_each(|s| *s += g[0]);
                    }
                }
                Op::Reshape(a) => accumulate(&mut grads, a, &g),
                Op::SliceCols(a, start) => {
                    if let Some(idx) = index_of(a) {
                        let n = a.shape()[1];
                        let w = nodes[i].shape[1];
                        let acc = slot(&mut grads, idx, a.len());
                        for (arow, grow) in acc.chunks_mut(n).zip(g.chunks(w)) {
                            add_into(&mut arow[*start..start + w], grow);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = nodes[i].shape[1];
                    let mut offset = 0;
                    for p in parts {
                        let w = p.shape()[1];
                        if let Some(idx) = index_of(p) {
                            let acc = slot(&mut grads, idx, p.len());
                            for (prow, grow) in acc.chunks_mut(w).zip(g.chunks(total)) {
                                add_into(prow, &grow[offset..offset + w]);
                            }
                        }
                        offset += w;
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let n = gamma.len();
                    if let Some(idx) = index_of(gamma) {
                        let acc = slot(&mut grads, idx, n);
                        for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                            for ((s, gv), h) in acc.iter_mut().zip(grow).zip(hrow) {
                                *s += gv * h;
                            }
                        }
                    }
                    if let Some(idx) = index_of(beta) {
                        let acc = slot(&mut grads, idx, n);
                        for grow in g.chunks(n) {
                            add_into(acc, grow);
                        }
                    }
                    if let Some(idx) = index_of(x) {
                        let acc = slot(&mut grads, idx, x.len());
                        let nf = n as f64;
                        let mut dxhat = vec![0.0; n];
                        for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                            for ((d, gv), gm) in dxhat.iter_mut().zip(grow).zip(gamma.data()) {
                                *d = gv * gm;
                            }
                            let sum_d: f64 = dxhat.iter().sum();
                            let sum_dh: f64 = dxhat.iter().zip(hrow).map(|(d, h)| d * h).sum();
                            let inv = inv_std[r];
                            for c in 0..n {
                                acc[r * n + c] += inv / nf * (nf * dxhat[c] - sum_d - hrow[c] * sum_dh);
                            }
                        }
                    }
                }
                Op::Dropout(a, mask) => {
                    if let Some(idx) = index_of(a) {
                        let acc = slot(&mut grads, idx, g.len());
                        for ((s, v), m) in acc.iter_mut().zip(&g).zip(mask) {
                            *s += v * m;
                        }
                    }
                }
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }
}

fn index_of(t: &Tensor) -> Option<usize> {
    t.node.map(|n| n.index)
}

fn slot(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    acc.iter_mut().zip(g).for_each(|(s, v)| *s += v);
}

fn accumulate(grads: &mut [Option<Vec<f64>>], t: &Tensor, g: &[f64]) {
    if let Some(idx) = index_of(t) {
        add_into(slot(grads, idx, g.len()), g);
    }
}

/// Gradients of a scalar root with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `leaf`; zeros if the root does not depend on it.
    pub fn get(&self, leaf: &Tensor) -> Result<Tensor> {
        let node = leaf.node.ok_or(Error::NotOnTape)?;
        if node.tape != self.tape {
            return Err(Error::NotOnTape);
        }
        match self.grads.get(node.index).and_then(|g| g.as_ref()) {
            Some(g) => Ok(Tensor::from_parts(leaf.shape().to_vec(), g.clone())),
            None => Ok(Tensor::zeros(leaf.shape())),
        }
    }

    /// Like [`get`](Self::get) but moves the buffer out.
    pub fn take(&mut self, leaf: &Tensor) -> Result<Vec<f64>> {
        let node = leaf.node.ok_or(Error::NotOnTape)?;
        if node.tape != self.tape {
            return Err(Error::NotOnTape);
        }
        Ok(self
            .grads
            .get_mut(node.index)
            .and_then(Option::take)
            .unwrap_or_else(|| vec![0.0; leaf.len()]))
    }
}
