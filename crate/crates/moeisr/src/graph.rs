//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records operations eagerly: each builder computes its output
//! immediately and appends an op record, so node order is already a valid
//! topological order. [`Graph::backward`] walks the records in reverse,
//! accumulating gradients by sum over all paths. Gradient buffers are
//! allocated fresh on every call, so repeated backward passes over the same
//! graph yield identical results.

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Scalar, Tensor};

/// Handle to a node in a [`Graph`]. Only valid for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        pad: usize,
    },
    /// x[c,h,w] + bias[c] broadcast over spatial sites.
    AddChanBias(NodeId, NodeId),
    /// mat[m,n] + bias[n] broadcast over rows.
    AddRowBias(NodeId, NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    SoftmaxRows(NodeId),
    SumAll(NodeId),
    SumAxis0(NodeId),
    GatherRows {
        input: NodeId,
        indices: Vec<usize>,
    },
    ConcatCols(NodeId, NodeId),
    /// mat[m,n] with row i scaled by scales[i].
    ScaleRows {
        input: NodeId,
        scales: NodeId,
    },
    SelectCol {
        input: NodeId,
        col: usize,
    },
    Unfold3x3(NodeId),
    ChwToRows(NodeId),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op,
    /// True when a gradient can flow into this node (leaf with requires_grad,
    /// or any input needs grad). Used to prune backward work.
    needs_grad: bool,
}

/// Gradients of a scalar loss w.r.t. graph leaves, keyed by [`NodeId`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `id`, or `None` if none was accumulated.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.index()).and_then(|g| g.as_ref())
    }
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.index()].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.index()].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.index()].needs_grad
    }

    /// Registers an input tensor. `requires_grad` marks it as a parameter
    /// whose gradient [`Graph::backward`] must report.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dimension(format!(
                "matmul: incompatible shapes {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), needs))
    }

    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, pad: usize) -> Result<NodeId> {
        let (si, sk) = (self.shape(input), self.shape(kernel));
        if si.len() != 3 || sk.len() != 4 {
            return Err(Error::dimension(format!(
                "conv2d: want input [c,h,w] and kernel [co,ci,kh,kw], got {si:?} and {sk:?}"
            )));
        }
        let (cin, h, w) = (si[0], si[1], si[2]);
        let (cout, kcin, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        if kcin != cin {
            return Err(Error::dimension(format!(
                "conv2d: input channels {cin} != kernel channels {kcin}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::dimension(format!(
                "conv2d: kernel extents must be odd, got {kh}x{kw}"
            )));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::dimension(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let oh = h + 2 * pad + 1 - kh;
        let ow = w + 2 * pad + 1 - kw;
        let data = kernels::conv2d(
            self.value(input).data(),
            cin,
            h,
            w,
            self.value(kernel).data(),
            cout,
            kh,
            kw,
            pad,
        );
        let out = Tensor::new(vec![cout, oh, ow], data)?;
        let needs = self.needs(input) || self.needs(kernel);
        Ok(self.push(out, Op::Conv2d { input, kernel, pad }, needs))
    }

    pub fn add_chan_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let (si, sb) = (self.shape(input), self.shape(bias));
        if si.len() != 3 || sb != [si[0]] {
            return Err(Error::dimension(format!(
                "add_chan_bias: input {si:?} with bias {sb:?}"
            )));
        }
        let (c, h, w) = (si[0], si[1], si[2]);
        let mut data = self.value(input).data().to_vec();
        let bias_v = self.value(bias).data();
        for (ci, &b) in bias_v.iter().enumerate().take(c) {
            for v in &mut data[ci * h * w..(ci + 1) * h * w] {
                *v = *v + b;
            }
        }
        let out = Tensor::new(vec![c, h, w], data)?;
        let needs = self.needs(input) || self.needs(bias);
        Ok(self.push(out, Op::AddChanBias(input, bias), needs))
    }

    pub fn add_row_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let (si, sb) = (self.shape(input), self.shape(bias));
        if si.len() != 2 || sb != [si[1]] {
            return Err(Error::dimension(format!(
                "add_row_bias: input {si:?} with bias {sb:?}"
            )));
        }
        let (m, n) = (si[0], si[1]);
        let mut data = self.value(input).data().to_vec();
        let bias_v = self.value(bias).data();
        for r in 0..m {
            for (v, &b) in data[r * n..(r + 1) * n].iter_mut().zip(bias_v) {
                *v = *v + b;
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        let needs = self.needs(input) || self.needs(bias);
        Ok(self.push(out, Op::AddRowBias(input, bias), needs))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v.max(T::zero()))
            .collect();
        let out = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(out, Op::Relu(x), needs)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|&v| v.abs()).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(out, Op::Abs(x), needs)
    }

    fn binary_pointwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &str,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dimension(format!(
                "{name}: shape {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, op, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_pointwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_pointwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_pointwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiply every element by a compile-time constant (not a graph input).
    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let cv = T::from_f64(c);
        let data = self.value(x).data().iter().map(|&v| v * cv).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(out, Op::Scale(x, c), needs)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let cv = T::from_f64(c);
        let data = self.value(x).data().iter().map(|&v| v + cv).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(out, Op::AddScalar(x, c), needs)
    }

    /// Softmax along the last axis of a `[rows, cols]` matrix,
    /// computed with max subtraction per row.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dimension(format!(
                "softmax_rows: want [rows, cols], got {s:?}"
            )));
        }
        let (rows, cols) = (s[0], s[1]);
        let data = kernels::softmax_rows(self.value(x).data(), rows, cols);
        let out = Tensor::new(vec![rows, cols], data)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::SoftmaxRows(x), needs))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let total: T = self.value(x).data().iter().copied().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(total), Op::SumAll(x), needs)
    }

    /// Column sums of a `[m, n]` matrix -> `[n]`.
    pub fn sum_axis0(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dimension(format!(
                "sum_axis0: want [m, n], got {s:?}"
            )));
        }
        let (m, n) = (s[0], s[1]);
        let mut data = vec![T::zero(); n];
        for r in 0..m {
            for (acc, &v) in data.iter_mut().zip(&self.value(x).data()[r * n..(r + 1) * n]) {
                *acc = *acc + v;
            }
        }
        let out = Tensor::new(vec![n], data)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::SumAxis0(x), needs))
    }

    /// Row gather: out[i] = input[indices[i]]. Indices may repeat.
    pub fn gather_rows(&mut self, input: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let s = self.shape(input);
        if s.len() != 2 {
            return Err(Error::dimension(format!(
                "gather_rows: want [m, n], got {s:?}"
            )));
        }
        let (m, n) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::usage(format!(
                "gather_rows: index {bad} out of range for {m} rows"
            )));
        }
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in &indices {
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let out = Tensor::new(vec![indices.len(), n], data)?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::GatherRows { input, indices }, needs))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::dimension(format!(
                "concat_cols: shape {sa:?} vs {sb:?}"
            )));
        }
        let (m, na, nb) = (sa[0], sa[1], sb[1]);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(m * (na + nb));
        for r in 0..m {
            data.extend_from_slice(&va[r * na..(r + 1) * na]);
            data.extend_from_slice(&vb[r * nb..(r + 1) * nb]);
        }
        let out = Tensor::new(vec![m, na + nb], data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::ConcatCols(a, b), needs))
    }

    /// out[i, :] = input[i, :] * scales[i], with `scales` shaped `[m]`.
    pub fn scale_rows(&mut self, input: NodeId, scales: NodeId) -> Result<NodeId> {
        let (si, ss) = (self.shape(input), self.shape(scales));
        if si.len() != 2 || ss != [si[0]] {
            return Err(Error::dimension(format!(
                "scale_rows: input {si:?} with scales {ss:?}"
            )));
        }
        let (m, n) = (si[0], si[1]);
        let sc = self.value(scales).data();
        let mut data = self.value(input).data().to_vec();
        for r in 0..m {
            let s = sc[r];
            for v in &mut data[r * n..(r + 1) * n] {
                *v = *v * s;
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        let needs = self.needs(input) || self.needs(scales);
        Ok(self.push(out, Op::ScaleRows { input, scales }, needs))
    }

    /// Column `col` of a `[m, n]` matrix -> `[m]`.
    pub fn select_col(&mut self, input: NodeId, col: usize) -> Result<NodeId> {
        let s = self.shape(input);
        if s.len() != 2 || col >= s[1] {
            return Err(Error::dimension(format!(
                "select_col: column {col} of shape {s:?}"
            )));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.value(input).data();
        let data: Vec<T> = (0..m).map(|r| src[r * n + col]).collect();
        let out = Tensor::new(vec![m], data)?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::SelectCol { input, col }, needs))
    }

    pub fn unfold3x3(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::dimension(format!(
                "unfold3x3: want [c,h,w], got {s:?}"
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let data = kernels::unfold3x3(self.value(x).data(), c, h, w);
        let out = Tensor::new(vec![9 * c, h, w], data)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::Unfold3x3(x), needs))
    }

    /// `[c,h,w]` -> `[h*w, c]` site-major rows.
    pub fn chw_to_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::dimension(format!(
                "chw_to_rows: want [c,h,w], got {s:?}"
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let data = kernels::chw_to_rows(self.value(x).data(), c, h, w);
        let out = Tensor::new(vec![h * w, c], data)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::ChwToRows(x), needs))
    }

    /// Reverse pass from a scalar loss. Returns per-leaf gradients; leaves
    /// with `requires_grad` that the loss does not reach get explicit zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::usage(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.index()] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.index()).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &grad, &mut grads);
            // Leaves keep their accumulated gradient.
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(grad);
            }
        }

        // Reachable-from-nothing parameters still report a zero gradient.
        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.needs_grad && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], target: NodeId, delta: Tensor<T>) {
        if !self.needs(target) {
            return;
        }
        match &mut grads[target.index()] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e = *e + *d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, grad: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.needs(*a) {
                    let da = kernels::matmul_nt(grad.data(), self.value(*b).data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], da).unwrap());
                }
                if self.needs(*b) {
                    let db = kernels::matmul_tn(self.value(*a).data(), grad.data(), m, k, n);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], db).unwrap());
                }
            }
            Op::Conv2d { input, kernel, pad } => {
                let si = self.shape(*input);
                let sk = self.shape(*kernel);
                let (cin, h, w) = (si[0], si[1], si[2]);
                let (cout, kh, kw) = (sk[0], sk[2], sk[3]);
                if self.needs(*input) {
                    let di = kernels::conv2d_grad_input(
                        grad.data(),
                        cin,
                        h,
                        w,
                        self.value(*kernel).data(),
                        cout,
                        kh,
                        kw,
                        *pad,
                    );
                    self.accumulate(grads, *input, Tensor::new(vec![cin, h, w], di).unwrap());
                }
                if self.needs(*kernel) {
                    let dk = kernels::conv2d_grad_kernel(
                        grad.data(),
                        self.value(*input).data(),
                        cin,
                        h,
                        w,
                        cout,
                        kh,
                        kw,
                        *pad,
                    );
                    self.accumulate(
                        grads,
                        *kernel,
                        Tensor::new(vec![cout, cin, kh, kw], dk).unwrap(),
                    );
                }
            }
            Op::AddChanBias(input, bias) => {
                let s = self.shape(*input);
                let (c, h, w) = (s[0], s[1], s[2]);
                if self.needs(*input) {
                    self.accumulate(grads, *input, grad.clone());
                }
                if self.needs(*bias) {
                    let mut db = vec![T::zero(); c];
                    for (ci, acc) in db.iter_mut().enumerate() {
                        for &g in &grad.data()[ci * h * w..(ci + 1) * h * w] {
                            *acc = *acc + g;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::new(vec![c], db).unwrap());
                }
            }
            Op::AddRowBias(input, bias) => {
                let s = self.shape(*input);
                let (m, n) = (s[0], s[1]);
                if self.needs(*input) {
                    self.accumulate(grads, *input, grad.clone());
                }
                if self.needs(*bias) {
                    let mut db = vec![T::zero(); n];
                    for r in 0..m {
                        for (acc, &g) in db.iter_mut().zip(&grad.data()[r * n..(r + 1) * n]) {
                            *acc = *acc + g;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::new(vec![n], db).unwrap());
                }
            }
            Op::Relu(x) => {
                // Subgradient at 0 is 0.
                let data = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(
                    grads,
                    *x,
                    Tensor::new(self.shape(*x).to_vec(), data).unwrap(),
                );
            }
            Op::Abs(x) => {
                // d|x|/dx at 0 is 0.
                let data = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&v, &g)| {
                        if v > T::zero() {
                            g
                        } else if v < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.accumulate(
                    grads,
                    *x,
                    Tensor::new(self.shape(*x).to_vec(), data).unwrap(),
                );
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, grad.clone());
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, grad.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, grad.clone());
                }
                if self.needs(*b) {
                    let data = grad.data().iter().map(|&g| -g).collect();
                    self.accumulate(
                        grads,
                        *b,
                        Tensor::new(grad.shape().to_vec(), data).unwrap(),
                    );
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let data = grad
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&g, &v)| g * v)
                        .collect();
                    self.accumulate(
                        grads,
                        *a,
                        Tensor::new(grad.shape().to_vec(), data).unwrap(),
                    );
                }
                if self.needs(*b) {
                    let data = grad
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&g, &v)| g * v)
                        .collect();
                    self.accumulate(
                        grads,
                        *b,
                        Tensor::new(grad.shape().to_vec(), data).unwrap(),
                    );
                }
            }
            Op::Scale(x, c) => {
                let cv = T::from_f64(*c);
                let data = grad.data().iter().map(|&g| g * cv).collect();
                self.accumulate(
                    grads,
                    *x,
                    Tensor::new(grad.shape().to_vec(), data).unwrap(),
                );
            }
            Op::AddScalar(x, _) => {
                self.accumulate(grads, *x, grad.clone());
            }
            Op::SoftmaxRows(x) => {
                let s = node.value.shape();
                let (rows, cols) = (s[0], s[1]);
                let dx =
                    kernels::softmax_rows_grad(node.value.data(), grad.data(), rows, cols);
                self.accumulate(grads, *x, Tensor::new(vec![rows, cols], dx).unwrap());
            }
            Op::SumAll(x) => {
                let g = grad.data()[0];
                self.accumulate(
                    grads,
                    *x,
                    Tensor::full(self.shape(*x).to_vec(), g),
                );
            }
            Op::SumAxis0(x) => {
                let s = self.shape(*x);
                let (m, n) = (s[0], s[1]);
                let mut data = Vec::with_capacity(m * n);
                for _ in 0..m {
                    data.extend_from_slice(grad.data());
                }
                self.accumulate(grads, *x, Tensor::new(vec![m, n], data).unwrap());
            }
            Op::GatherRows { input, indices } => {
                let s = self.shape(*input);
                let (m, n) = (s[0], s[1]);
                let mut data = vec![T::zero(); m * n];
                for (r, &i) in indices.iter().enumerate() {
                    let g_row = &grad.data()[r * n..(r + 1) * n];
                    for (d, &g) in data[i * n..(i + 1) * n].iter_mut().zip(g_row) {
                        *d = *d + g;
                    }
                }
                self.accumulate(grads, *input, Tensor::new(vec![m, n], data).unwrap());
            }
            Op::ConcatCols(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, na, nb) = (sa[0], sa[1], sb[1]);
                if self.needs(*a) {
                    let mut da = Vec::with_capacity(m * na);
                    for r in 0..m {
                        da.extend_from_slice(&grad.data()[r * (na + nb)..r * (na + nb) + na]);
                    }
                    self.accumulate(grads, *a, Tensor::new(vec![m, na], da).unwrap());
                }
                if self.needs(*b) {
                    let mut db = Vec::with_capacity(m * nb);
                    for r in 0..m {
                        db.extend_from_slice(
                            &grad.data()[r * (na + nb) + na..(r + 1) * (na + nb)],
                        );
                    }
                    self.accumulate(grads, *b, Tensor::new(vec![m, nb], db).unwrap());
                }
            }
            Op::ScaleRows { input, scales } => {
                let s = self.shape(*input);
                let (m, n) = (s[0], s[1]);
                let sc = self.value(*scales).data();
                if self.needs(*input) {
                    let mut data = grad.data().to_vec();
                    for r in 0..m {
                        let sv = sc[r];
                        for v in &mut data[r * n..(r + 1) * n] {
                            *v = *v * sv;
                        }
                    }
                    self.accumulate(grads, *input, Tensor::new(vec![m, n], data).unwrap());
                }
                if self.needs(*scales) {
                    let x = self.value(*input).data();
                    let mut ds = vec![T::zero(); m];
                    for (r, acc) in ds.iter_mut().enumerate() {
                        for (g, v) in grad.data()[r * n..(r + 1) * n]
                            .iter()
                            .zip(&x[r * n..(r + 1) * n])
                        {
                            *acc = *acc + *g * *v;
                        }
                    }
                    self.accumulate(grads, *scales, Tensor::new(vec![m], ds).unwrap());
                }
            }
            Op::SelectCol { input, col } => {
                let s = self.shape(*input);
                let (m, n) = (s[0], s[1]);
                let mut data = vec![T::zero(); m * n];
                for (r, &g) in grad.data().iter().enumerate().take(m) {
                    data[r * n + col] = g;
                }
                self.accumulate(grads, *input, Tensor::new(vec![m, n], data).unwrap());
            }
            Op::Unfold3x3(x) => {
                let s = self.shape(*x);
                let (c, h, w) = (s[0], s[1], s[2]);
                let dx = kernels::unfold3x3_grad(grad.data(), c, h, w);
                self.accumulate(grads, *x, Tensor::new(vec![c, h, w], dx).unwrap());
            }
            Op::ChwToRows(x) => {
                let s = self.shape(*x);
                let (c, h, w) = (s[0], s[1], s[2]);
                let dx = kernels::rows_to_chw(grad.data(), c, h, w);
                self.accumulate(grads, *x, Tensor::new(vec![c, h, w], dx).unwrap());
            }
        }
    }
}
