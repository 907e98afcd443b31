//! Reverse-mode automatic differentiation on an arena tape.
//!
//! Values are computed eagerly as nodes are pushed; `backward` walks the
//! arena in reverse insertion order (a valid reverse topological order,
//! since parents always precede children) and accumulates adjoints, summing
//! on fan-out. Parameters live outside the tape in a [`ParamStore`] and are
//! bound to at most one leaf node per tape.

use crate::error::Result;
use crate::linalg;
use crate::tensor::{Shape, Tensor};
use std::collections::HashMap;
use std::sync::Arc;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct NodeId(pub usize);

/// Trainable tensors plus their optimizer moment buffers.
#[derive(Clone, Debug)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    pub(crate) m: Vec<Tensor>,
    pub(crate) v: Vec<Tensor>,
    pub(crate) step: u64,
    index: HashMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new(), m: Vec::new(), v: Vec::new(), step: 0, index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.m.push(Tensor::zeros(value.shape));
        self.v.push(Tensor::zeros(value.shape));
        self.values.push(value);
        self.index.insert(name.clone(), id);
        self.names.push(name);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.values[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Per-parameter gradients, aligned with [`ParamStore`] ids; parameters not
/// reachable from the backward root hold zeros.
pub struct Gradients {
    pub per_param: Vec<Tensor>,
}

/// Immutable description of a squared-exponential kernel on a time grid,
/// shared by the fused kernel op across epochs.
#[derive(Debug)]
pub struct SeKernelSpec {
    pub t: Vec<f64>,
    pub sigma_f2: f64,
    pub xi: f64,
    /// Grid spacing if the grid is uniform (enables an O(T) exp fast path).
    pub uniform_h: Option<f64>,
}

impl SeKernelSpec {
    pub fn new(t: Vec<f64>, sigma_f2: f64, xi: f64) -> Arc<Self> {
        assert!(!t.is_empty());
        assert!(sigma_f2 > 0.0 && xi >= 0.0);
        let uniform_h = if t.len() < 2 {
            Some(0.0)
        } else {
            let h = t[1] - t[0];
            let uniform = t.windows(2).all(|w| ((w[1] - w[0]) - h).abs() < 1e-12 * h.abs().max(1.0));
            if uniform { Some(h) } else { None }
        };
        Arc::new(SeKernelSpec { t, sigma_f2, xi, uniform_h })
    }

    /// Length-scale from the unconstrained parameter.
    pub fn ell(gamma: f64) -> f64 {
        gamma.exp() + 1e-6
    }
}

enum Op {
    Const,
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Recip(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    Square(NodeId),
    Clamp(NodeId, f64, f64),
    Sum(NodeId),
    Mean(NodeId),
    SumSq(NodeId),
    Dot(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    Transpose(NodeId),
    Col(NodeId, usize),
    ConcatVec(NodeId, NodeId),
    AppendConst(NodeId),
    StackCols(Vec<NodeId>),
    AddRow(NodeId, NodeId),
    Cholesky(NodeId),
    TriSolveVec { l: NodeId, b: NodeId },
    LogDetFromChol(NodeId),
    SeKernel { gamma: NodeId, spec: Arc<SeKernelSpec> },
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_leaf: HashMap<usize, NodeId>,
}

fn broadcast_pair(a: &Tensor, b: &Tensor) -> Shape {
    if a.shape == b.shape {
        a.shape
    } else if a.shape == Shape::Scalar {
        b.shape
    } else if b.shape == Shape::Scalar {
        a.shape
    } else {
        panic!("shape mismatch: {} vs {}", a.shape, b.shape)
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let shape = broadcast_pair(a, b);
    let n = shape.len();
    let data = (0..n)
        .map(|i| {
            let x = if a.shape == Shape::Scalar { a.data[0] } else { a.data[i] };
            let y = if b.shape == Shape::Scalar { b.data[0] } else { b.data[i] };
            f(x, y)
        })
        .collect();
    Tensor::new(shape, data)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const, value)
    }

    /// Leaf for a trainable parameter; repeated calls return the same node so
    /// each parameter has exactly one adjoint slot per tape.
    pub fn param(&mut self, store: &ParamStore, param: usize) -> NodeId {
        if let Some(&id) = self.param_leaf.get(&param) {
            return id;
        }
        let value = store.get(param).clone();
        let id = self.push(Op::Leaf, value);
        self.param_leaf.insert(param, id);
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = zip_broadcast(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = zip_broadcast(self.value(a), self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), value)
    }

    /// Elementwise product (equal shapes or scalar broadcast).
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = zip_broadcast(self.value(a), self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = Tensor::new(self.value(a).shape, self.value(a).data.iter().map(|x| c * x).collect());
        self.push(Op::Scale(a, c), value)
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = Tensor::new(self.value(a).shape, self.value(a).data.iter().map(|x| x + c).collect());
        self.push(Op::Offset(a), value)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::new(self.value(a).shape, self.value(a).data.iter().map(|x| 1.0 / x).collect());
        self.push(Op::Recip(a), value)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::new(self.value(a).shape, self.value(a).data.iter().map(|x| x.exp()).collect());
        self.push(Op::Exp(a), value)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::new(self.value(a).shape, self.value(a).data.iter().map(|x| x.ln()).collect());
        self.push(Op::Log(a), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::new(self.value(a).shape, self.value(a).data.iter().map(|x| x.tanh()).collect());
        self.push(Op::Tanh(a), value)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::new(self.value(a).shape, self.value(a).data.iter().map(|x| x * x).collect());
        self.push(Op::Square(a), value)
    }

    /// Forward clamp to `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        assert!(lo < hi);
        let value = Tensor::new(self.value(a).shape, self.value(a).data.iter().map(|x| x.clamp(lo, hi)).collect());
        self.push(Op::Clamp(a, lo, hi), value)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(Op::Sum(a), value)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let value = Tensor::scalar(v.data.iter().sum::<f64>() / v.len() as f64);
        self.push(Op::Mean(a), value)
    }

    /// Sum of squared entries (squared Frobenius / Euclidean norm).
    pub fn sum_sq(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).norm_sq());
        self.push(Op::SumSq(a), value)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape, vb.shape, "dot shape mismatch");
        assert!(matches!(va.shape, Shape::Vector(_)), "dot needs vectors");
        let value = Tensor::scalar(va.data.iter().zip(vb.data.iter()).map(|(x, y)| x * y).sum());
        self.push(Op::Dot(a, b), value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = linalg::matmul(self.value(a), self.value(b));
        self.push(Op::MatMul(a, b), value)
    }

    pub fn matvec(&mut self, a: NodeId, x: NodeId) -> NodeId {
        let value = linalg::matvec(self.value(a), self.value(x), false);
        self.push(Op::MatVec(a, x), value)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transposed();
        self.push(Op::Transpose(a), value)
    }

    pub fn col(&mut self, a: NodeId, j: usize) -> NodeId {
        let value = self.value(a).col(j);
        self.push(Op::Col(a, j), value)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        let (na, nb) = match (va.shape, vb.shape) {
            (Shape::Vector(na), Shape::Vector(nb)) => (na, nb),
            _ => panic!("concat needs vectors"),
        };
        let mut data = Vec::with_capacity(na + nb);
        data.extend_from_slice(&va.data);
        data.extend_from_slice(&vb.data);
        self.push(Op::ConcatVec(a, b), Tensor::vector(data))
    }

    /// Vector extended by one constant entry (used to feed the step fraction
    /// into the noise networks).
    pub fn append_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let va = self.value(a);
        assert!(matches!(va.shape, Shape::Vector(_)));
        let mut data = va.data.clone();
        data.push(c);
        self.push(Op::AppendConst(a), Tensor::vector(data))
    }

    /// Equal-length vectors stacked as matrix columns.
    pub fn stack_cols(&mut self, cols: &[NodeId]) -> NodeId {
        let tensors: Vec<Tensor> = cols.iter().map(|&id| self.value(id).clone()).collect();
        let value = Tensor::from_cols(&tensors);
        self.push(Op::StackCols(cols.to_vec()), value)
    }

    /// Matrix plus a row vector broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (va, vr) = (self.value(a), self.value(row));
        let (r, c) = match va.shape {
            Shape::Matrix(r, c) => (r, c),
            _ => panic!("add_row needs a matrix"),
        };
        assert_eq!(vr.shape, Shape::Vector(c), "row length must match matrix columns");
        let mut out = va.clone();
        for i in 0..r {
            for j in 0..c {
                out.data[i * c + j] += vr.data[j];
            }
        }
        self.push(Op::AddRow(a, row), out)
    }

    /// Lower Cholesky factor. Reads only the lower triangle of the input;
    /// the adjoint it emits is likewise lower triangular.
    pub fn cholesky(&mut self, k: NodeId) -> Result<NodeId> {
        let l = linalg::cholesky_lower(self.value(k))?;
        Ok(self.push(Op::Cholesky(k), l))
    }

    /// Solve L·x = b with L lower triangular.
    pub fn tri_solve_lower(&mut self, l: NodeId, b: NodeId) -> NodeId {
        let value = linalg::tri_solve_lower_vec(self.value(l), self.value(b), false);
        self.push(Op::TriSolveVec { l, b }, value)
    }

    /// log|K| = 2·Σ log L_ii from the Cholesky factor L.
    pub fn logdet_from_chol(&mut self, l: NodeId) -> NodeId {
        let v = self.value(l);
        let n = match v.shape {
            Shape::Matrix(r, c) => {
                assert_eq!(r, c);
                r
            }
            _ => panic!("logdet needs a square matrix"),
        };
        let ld = 2.0 * (0..n).map(|i| v.at(i, i).ln()).sum::<f64>();
        self.push(Op::LogDetFromChol(l), Tensor::scalar(ld))
    }

    /// Fused squared-exponential kernel K(γ): K_ij = σ_f²·exp(−(t_i−t_j)²/(2ℓ²)) + ξδ_ij
    /// with ℓ = exp(γ)+1e−6. Input is the unconstrained scalar γ.
    pub fn se_kernel(&mut self, gamma: NodeId, spec: &Arc<SeKernelSpec>) -> NodeId {
        let g = self.value(gamma).as_scalar();
        let value = se_kernel_forward(g, spec);
        self.push(Op::SeKernel { gamma, spec: Arc::clone(spec) }, value)
    }

    /// Reverse pass from a scalar root; returns one gradient tensor per
    /// parameter in the store (zeros when unreachable).
    pub fn backward(&self, root: NodeId, store: &ParamStore) -> Gradients {
        assert_eq!(self.value(root).shape, Shape::Scalar, "backward root must be scalar");
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(a) = adj[i].take() else { continue };
            self.propagate(i, &a, &mut adj);
            adj[i] = Some(a);
        }

        let per_param = (0..store.len())
            .map(|pid| match self.param_leaf.get(&pid) {
                Some(&nid) => adj[nid.0].clone().unwrap_or_else(|| Tensor::zeros(self.value(nid).shape)),
                None => Tensor::zeros(store.get(pid).shape),
            })
            .collect();
        Gradients { per_param }
    }

    fn accumulate(adj: &mut [Option<Tensor>], target: NodeId, shape: Shape, f: impl FnOnce(&mut Tensor)) {
        let slot = &mut adj[target.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(shape));
        }
        f(slot.as_mut().unwrap());
    }

    fn propagate(&self, i: usize, a: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Const | Op::Leaf => {}
            Op::Add(x, y) => {
                for &(t, _sign) in &[(*x, 1.0), (*y, 1.0)] {
                    self.acc_broadcast(adj, t, a, 1.0);
                }
            }
            Op::Sub(x, y) => {
                self.acc_broadcast(adj, *x, a, 1.0);
                self.acc_broadcast(adj, *y, a, -1.0);
            }
            Op::Mul(x, y) => {
                let (vx, vy) = (self.value(*x).clone(), self.value(*y).clone());
                self.acc_broadcast_weighted(adj, *x, a, &vy);
                self.acc_broadcast_weighted(adj, *y, a, &vx);
            }
            Op::Scale(x, c) => {
                let c = *c;
                Self::accumulate(adj, *x, a.shape, |g| {
                    for (gi, ai) in g.data.iter_mut().zip(a.data.iter()) {
                        *gi += c * ai;
                    }
                });
            }
            Op::Offset(x) => {
                Self::accumulate(adj, *x, a.shape, |g| {
                    for (gi, ai) in g.data.iter_mut().zip(a.data.iter()) {
                        *gi += ai;
                    }
                });
            }
            Op::Recip(x) => {
                let out = &node.value;
                Self::accumulate(adj, *x, a.shape, |g| {
                    for ((gi, ai), oi) in g.data.iter_mut().zip(a.data.iter()).zip(out.data.iter()) {
                        *gi -= ai * oi * oi;
                    }
                });
            }
            Op::Exp(x) => {
                let out = &node.value;
                Self::accumulate(adj, *x, a.shape, |g| {
                    for ((gi, ai), oi) in g.data.iter_mut().zip(a.data.iter()).zip(out.data.iter()) {
                        *gi += ai * oi;
                    }
                });
            }
            Op::Log(x) => {
                let vx = self.value(*x);
                Self::accumulate(adj, *x, a.shape, |g| {
                    for ((gi, ai), xi) in g.data.iter_mut().zip(a.data.iter()).zip(vx.data.iter()) {
                        *gi += ai / xi;
                    }
                });
            }
            Op::Tanh(x) => {
                let out = &node.value;
                Self::accumulate(adj, *x, a.shape, |g| {
                    for ((gi, ai), oi) in g.data.iter_mut().zip(a.data.iter()).zip(out.data.iter()) {
                        *gi += ai * (1.0 - oi * oi);
                    }
                });
            }
            Op::Square(x) => {
                let vx = self.value(*x);
                Self::accumulate(adj, *x, a.shape, |g| {
                    for ((gi, ai), xi) in g.data.iter_mut().zip(a.data.iter()).zip(vx.data.iter()) {
                        *gi += 2.0 * ai * xi;
                    }
                });
            }
            Op::Clamp(x, lo, hi) => {
                let vx = self.value(*x);
                let (lo, hi) = (*lo, *hi);
                Self::accumulate(adj, *x, a.shape, |g| {
                    for ((gi, ai), xi) in g.data.iter_mut().zip(a.data.iter()).zip(vx.data.iter()) {
                        if *xi > lo && *xi < hi {
                            *gi += ai;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let c = a.as_scalar();
                let shape = self.value(*x).shape;
                Self::accumulate(adj, *x, shape, |g| {
                    for gi in g.data.iter_mut() {
                        *gi += c;
                    }
                });
            }
            Op::Mean(x) => {
                let shape = self.value(*x).shape;
                let c = a.as_scalar() / shape.len() as f64;
                Self::accumulate(adj, *x, shape, |g| {
                    for gi in g.data.iter_mut() {
                        *gi += c;
                    }
                });
            }
            Op::SumSq(x) => {
                let c = 2.0 * a.as_scalar();
                let vx = self.value(*x);
                Self::accumulate(adj, *x, vx.shape, |g| {
                    for (gi, xi) in g.data.iter_mut().zip(vx.data.iter()) {
                        *gi += c * xi;
                    }
                });
            }
            Op::Dot(x, y) => {
                let c = a.as_scalar();
                let (vx, vy) = (self.value(*x).clone(), self.value(*y).clone());
                Self::accumulate(adj, *x, vx.shape, |g| {
                    for (gi, yi) in g.data.iter_mut().zip(vy.data.iter()) {
                        *gi += c * yi;
                    }
                });
                Self::accumulate(adj, *y, vy.shape, |g| {
                    for (gi, xi) in g.data.iter_mut().zip(vx.data.iter()) {
                        *gi += c * xi;
                    }
                });
            }
            Op::MatMul(x, y) => {
                let (vx, vy) = (self.value(*x), self.value(*y));
                let gx = linalg::matmul_tt(a, false, vy, true);
                let gy = linalg::matmul_tt(vx, true, a, false);
                Self::accumulate(adj, *x, vx.shape, |g| add_into(g, &gx));
                Self::accumulate(adj, *y, vy.shape, |g| add_into(g, &gy));
            }
            Op::MatVec(x, v) => {
                let (vx, vv) = (self.value(*x), self.value(*v));
                let gv = linalg::matvec(vx, a, true);
                Self::accumulate(adj, *v, vv.shape, |g| add_into(g, &gv));
                Self::accumulate(adj, *x, vx.shape, |g| linalg::ger(1.0, a, vv, g));
            }
            Op::Transpose(x) => {
                let vx = self.value(*x);
                let (r, c) = match a.shape {
                    Shape::Matrix(r, c) => (r, c),
                    _ => unreachable!(),
                };
                Self::accumulate(adj, *x, vx.shape, |g| {
                    for i in 0..r {
                        for j in 0..c {
                            *g.at_mut(j, i) += a.at(i, j);
                        }
                    }
                });
            }
            Op::Col(x, j) => {
                let vx = self.value(*x);
                let j = *j;
                Self::accumulate(adj, *x, vx.shape, |g| {
                    let c = match g.shape {
                        Shape::Matrix(_, c) => c,
                        _ => unreachable!(),
                    };
                    for (i, ai) in a.data.iter().enumerate() {
                        g.data[i * c + j] += ai;
                    }
                });
            }
            Op::ConcatVec(x, y) => {
                let (vx, vy) = (self.value(*x), self.value(*y));
                let na = vx.len();
                Self::accumulate(adj, *x, vx.shape, |g| {
                    for (gi, ai) in g.data.iter_mut().zip(a.data[..na].iter()) {
                        *gi += ai;
                    }
                });
                Self::accumulate(adj, *y, vy.shape, |g| {
                    for (gi, ai) in g.data.iter_mut().zip(a.data[na..].iter()) {
                        *gi += ai;
                    }
                });
            }
            Op::AppendConst(x) => {
                let vx = self.value(*x);
                let n = vx.len();
                Self::accumulate(adj, *x, vx.shape, |g| {
                    for (gi, ai) in g.data.iter_mut().zip(a.data[..n].iter()) {
                        *gi += ai;
                    }
                });
            }
            Op::StackCols(cols) => {
                let c = cols.len();
                for (j, &colid) in cols.iter().enumerate() {
                    let shape = self.value(colid).shape;
                    Self::accumulate(adj, colid, shape, |g| {
                        for (i, gi) in g.data.iter_mut().enumerate() {
                            *gi += a.data[i * c + j];
                        }
                    });
                }
            }
            Op::AddRow(x, row) => {
                let (vx, vr) = (self.value(*x), self.value(*row));
                let (r, c) = match vx.shape {
                    Shape::Matrix(r, c) => (r, c),
                    _ => unreachable!(),
                };
                Self::accumulate(adj, *x, vx.shape, |g| add_into(g, a));
                Self::accumulate(adj, *row, vr.shape, |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g.data[j] += a.data[i * c + j];
                        }
                    }
                });
            }
            Op::Cholesky(k) => {
                let l = &node.value;
                let gk = cholesky_backward(l, a);
                let shape = self.value(*k).shape;
                Self::accumulate(adj, *k, shape, |g| add_into(g, &gk));
            }
            Op::TriSolveVec { l, b } => {
                let x = &node.value;
                let vl = self.value(*l);
                // x = L⁻¹b: b̄ += L⁻ᵀx̄; L̄ -= tril((L⁻ᵀx̄)·xᵀ).
                let gb = linalg::tri_solve_lower_vec(vl, a, true);
                Self::accumulate(adj, *b, self.value(*b).shape, |g| add_into(g, &gb));
                let n = x.len();
                Self::accumulate(adj, *l, vl.shape, |g| {
                    for i in 0..n {
                        for j in 0..=i {
                            g.data[i * n + j] -= gb.data[i] * x.data[j];
                        }
                    }
                });
            }
            Op::LogDetFromChol(l) => {
                let vl = self.value(*l);
                let c = a.as_scalar();
                let n = match vl.shape {
                    Shape::Matrix(r, _) => r,
                    _ => unreachable!(),
                };
                Self::accumulate(adj, *l, vl.shape, |g| {
                    for i in 0..n {
                        g.data[i * n + i] += 2.0 * c / vl.data[i * n + i];
                    }
                });
            }
            Op::SeKernel { gamma, spec } => {
                let g = self.value(*gamma).as_scalar();
                let gg = se_kernel_backward(g, spec, &node.value, a);
                Self::accumulate(adj, *gamma, Shape::Scalar, |t| t.data[0] += gg);
            }
        }
    }

    fn acc_broadcast(&self, adj: &mut [Option<Tensor>], target: NodeId, a: &Tensor, sign: f64) {
        let shape = self.value(target).shape;
        if shape == a.shape {
            Self::accumulate(adj, target, shape, |g| {
                for (gi, ai) in g.data.iter_mut().zip(a.data.iter()) {
                    *gi += sign * ai;
                }
            });
        } else {
            // Target was a scalar broadcast across `a`'s shape.
            assert_eq!(shape, Shape::Scalar);
            let s: f64 = a.data.iter().sum();
            Self::accumulate(adj, target, shape, |g| g.data[0] += sign * s);
        }
    }

    fn acc_broadcast_weighted(&self, adj: &mut [Option<Tensor>], target: NodeId, a: &Tensor, other: &Tensor) {
        let shape = self.value(target).shape;
        if shape == a.shape || (shape != Shape::Scalar && other.shape == Shape::Scalar) {
            Self::accumulate(adj, target, shape, |g| {
                for (i, gi) in g.data.iter_mut().enumerate() {
                    let o = if other.shape == Shape::Scalar { other.data[0] } else { other.data[i] };
                    *gi += a.data[i] * o;
                }
            });
        } else {
            assert_eq!(shape, Shape::Scalar);
            let s: f64 = a.data.iter().zip(other.data.iter()).map(|(ai, oi)| ai * oi).sum();
            Self::accumulate(adj, target, shape, |g| g.data[0] += s);
        }
    }
}

fn add_into(g: &mut Tensor, a: &Tensor) {
    debug_assert_eq!(g.shape, a.shape);
    for (gi, ai) in g.data.iter_mut().zip(a.data.iter()) {
        *gi += ai;
    }
}

/// Kernel matrix for a given unconstrained length-scale parameter; shared by
/// the tape op and the non-tape evaluation paths so both see identical bits.
pub fn se_kernel_forward(gamma: f64, spec: &SeKernelSpec) -> Tensor {
    let ell = SeKernelSpec::ell(gamma);
    let t = &spec.t;
    let n = t.len();
    let mut k = Tensor::zeros(Shape::Matrix(n, n));
    let denom = 2.0 * ell * ell;
    if let Some(h) = spec.uniform_h {
        let band: Vec<f64> = (0..n)
            .map(|d| {
                let dt = d as f64 * h;
                spec.sigma_f2 * (-(dt * dt) / denom).exp()
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                k.data[i * n + j] = band[i.abs_diff(j)];
            }
        }
    } else {
        for i in 0..n {
            for j in 0..=i {
                let dt = t[i] - t[j];
                let v = spec.sigma_f2 * (-(dt * dt) / denom).exp();
                k.data[i * n + j] = v;
                k.data[j * n + i] = v;
            }
        }
    }
    for i in 0..n {
        k.data[i * n + i] += spec.xi;
    }
    k
}

/// dγ for the fused kernel: Σ_ij K̄_ij · (K_ij − ξδ_ij) · Δt²_ij/ℓ³ · dℓ/dγ.
fn se_kernel_backward(gamma: f64, spec: &SeKernelSpec, k: &Tensor, kbar: &Tensor) -> f64 {
    let ell = SeKernelSpec::ell(gamma);
    let t = &spec.t;
    let n = t.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let kb = kbar.data[i * n + j];
            if kb == 0.0 {
                continue;
            }
            let dt = t[i] - t[j];
            let base = if i == j { k.data[i * n + j] - spec.xi } else { k.data[i * n + j] };
            acc += kb * base * dt * dt;
        }
    }
    acc / (ell * ell * ell) * gamma.exp()
}

/// Reverse-mode rule for the lower Cholesky factorization.
///
/// With C = L⁻ᵀ·Φ(Lᵀ·L̄)·L⁻¹ (Φ keeps the lower triangle and halves the
/// diagonal), the adjoint of the read lower triangle of K is
/// K̄_ij = C_ij + C_ji for i > j and K̄_ii = C_ii.
fn cholesky_backward(l: &Tensor, lbar: &Tensor) -> Tensor {
    let n = match l.shape {
        Shape::Matrix(r, c) => {
            assert_eq!(r, c);
            r
        }
        _ => panic!("cholesky backward needs a square factor"),
    };
    let mut p = linalg::trmm_lower_left(l, lbar, true);
    for i in 0..n {
        p.data[i * n + i] *= 0.5;
        for j in i + 1..n {
            p.data[i * n + j] = 0.0;
        }
    }
    let s1 = linalg::tri_solve_lower_mat_left(l, &p, true);
    let c = linalg::tri_solve_lower_mat_right(l, &s1, false);
    let mut out = Tensor::zeros(Shape::Matrix(n, n));
    for i in 0..n {
        out.data[i * n + i] = c.data[i * n + i];
        for j in 0..i {
            out.data[i * n + j] = c.data[i * n + j] + c.data[j * n + i];
        }
    }
    out
}

/// Finite-difference gradient checking used by unit tests and the runtime
/// self-check command.
pub mod gradcheck {
    use super::*;

    /// Max relative error between analytic and central finite-difference
    /// gradients of `build` (a scalar function of the store's parameters).
    pub fn max_rel_error(
        store: &mut ParamStore,
        step: f64,
        mut build: impl FnMut(&mut Tape, &ParamStore) -> NodeId,
    ) -> f64 {
        let mut tape = Tape::new();
        let root = build(&mut tape, store);
        let grads = tape.backward(root, store);

        let mut worst = 0.0f64;
        for pid in 0..store.len() {
            for idx in 0..store.get(pid).len() {
                let orig = store.get(pid).data[idx];
                store.get_mut(pid).data[idx] = orig + step;
                let mut tp = Tape::new();
                let up = build(&mut tp, store);
                let fp = tp.value(up).as_scalar();
                store.get_mut(pid).data[idx] = orig - step;
                let mut tm = Tape::new();
                let dn = build(&mut tm, store);
                let fm = tm.value(dn).as_scalar();
                store.get_mut(pid).data[idx] = orig;

                let fd = (fp - fm) / (2.0 * step);
                let an = grads.per_param[pid].data[idx];
                let scale = an.abs().max(fd.abs());
                let err = if scale > 1e-6 { (an - fd).abs() / scale } else { (an - fd).abs() };
                worst = worst.max(err);
            }
        }
        worst
    }
}
