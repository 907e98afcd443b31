//! Observation maps from the stacked sources S (T×n) to mixtures Ŷ (T×m):
//! a trainable linear map Ŷ = S·Aᵀ with post-step column normalization, and
//! a per-time-index feed-forward map for nonlinear mixing.

use crate::error::{Result, StradiffError};
use crate::linalg;
use crate::rng::standard_normal_vec;
use crate::tape::{NodeId, ParamStore, Tape};
use crate::tensor::{Shape, Tensor};
use rand_chacha::ChaCha20Rng;

/// Columns with Euclidean norm below this are treated as collapsed.
const COLLAPSE_TOL: f64 = 1e-12;

pub const MIXING_HIDDEN: usize = 64;

#[derive(Clone, Debug)]
pub struct LinearMixing {
    pub a: usize,
    pub m: usize,
    pub n: usize,
}

impl LinearMixing {
    /// A is m×n with i.i.d. N(0,1) entries, column-normalized at init.
    pub fn init(store: &mut ParamStore, m: usize, n: usize, rng: &mut ChaCha20Rng) -> Result<Self> {
        assert!(m >= n, "linear mixing needs at least as many channels as sources");
        let a = Tensor::matrix(m, n, standard_normal_vec(rng, m * n));
        let id = store.add("mixing.a", a);
        let map = LinearMixing { a: id, m, n };
        normalize_columns(store, &map)?;
        Ok(map)
    }

    pub fn mix_tape(&self, tape: &mut Tape, store: &ParamStore, s: NodeId) -> NodeId {
        let a = tape.param(store, self.a);
        let at = tape.transpose(a);
        tape.matmul(s, at)
    }

    pub fn mix_raw(&self, store: &ParamStore, s: &Tensor) -> Tensor {
        let at = store.get(self.a).transposed();
        linalg::matmul(s, &at)
    }
}

/// Divides each column of A by its Euclidean norm. Runs after the optimizer
/// step, outside the gradient path.
pub fn normalize_columns(store: &mut ParamStore, map: &LinearMixing) -> Result<()> {
    let a = store.get_mut(map.a);
    for j in 0..map.n {
        let norm = (0..map.m).map(|i| a.data[i * map.n + j].powi(2)).sum::<f64>().sqrt();
        if norm < COLLAPSE_TOL {
            return Err(StradiffError::DegenerateMixing { column: j });
        }
        for i in 0..map.m {
            a.data[i * map.n + j] /= norm;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct NonlinearMixing {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
    pub m: usize,
    pub n: usize,
}

impl NonlinearMixing {
    /// n → hidden → hidden → m, tanh activations, linear output. Weights are
    /// scaled-down N(0,1)·0.5/√fan_in so the initial map stays in the
    /// near-linear regime of tanh; biases start at zero.
    pub fn init(store: &mut ParamStore, m: usize, n: usize, hidden: usize, rng: &mut ChaCha20Rng) -> Self {
        let mut layer = |rows: usize, cols: usize, name: &str| {
            let scale = 0.5 / (cols as f64).sqrt();
            let mut w = standard_normal_vec(rng, rows * cols);
            for v in w.iter_mut() {
                *v *= scale;
            }
            store.add(name, Tensor::matrix(rows, cols, w))
        };
        let w1 = layer(hidden, n, "mixing.w1");
        let w2 = layer(hidden, hidden, "mixing.w2");
        let w3 = layer(m, hidden, "mixing.w3");
        NonlinearMixing {
            w1,
            b1: store.add("mixing.b1", Tensor::zeros(Shape::Vector(hidden))),
            w2,
            b2: store.add("mixing.b2", Tensor::zeros(Shape::Vector(hidden))),
            w3,
            b3: store.add("mixing.b3", Tensor::zeros(Shape::Vector(m))),
            m,
            n,
        }
    }

    pub fn mix_tape(&self, tape: &mut Tape, store: &ParamStore, s: NodeId) -> NodeId {
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let w1t = tape.transpose(w1);
        let h1 = tape.matmul(s, w1t);
        let h1b = tape.add_row(h1, b1);
        let t1 = tape.tanh(h1b);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        let w2t = tape.transpose(w2);
        let h2 = tape.matmul(t1, w2t);
        let h2b = tape.add_row(h2, b2);
        let t2 = tape.tanh(h2b);
        let w3 = tape.param(store, self.w3);
        let b3 = tape.param(store, self.b3);
        let w3t = tape.transpose(w3);
        let h3 = tape.matmul(t2, w3t);
        tape.add_row(h3, b3)
    }

    pub fn mix_raw(&self, store: &ParamStore, s: &Tensor) -> Tensor {
        let dense = |x: &Tensor, w: usize, b: usize, act: bool| -> Tensor {
            let wt = store.get(w).transposed();
            let mut h = linalg::matmul(x, &wt);
            let bv = store.get(b);
            let (r, c) = match h.shape {
                Shape::Matrix(r, c) => (r, c),
                _ => unreachable!(),
            };
            for i in 0..r {
                for j in 0..c {
                    h.data[i * c + j] += bv.data[j];
                    if act {
                        h.data[i * c + j] = h.data[i * c + j].tanh();
                    }
                }
            }
            h
        };
        let t1 = dense(s, self.w1, self.b1, true);
        let t2 = dense(&t1, self.w2, self.b2, true);
        dense(&t2, self.w3, self.b3, false)
    }
}

/// Either observation map behind one interface.
#[derive(Clone, Debug)]
pub enum MixingMap {
    Linear(LinearMixing),
    Nonlinear(NonlinearMixing),
}

impl MixingMap {
    pub fn mix_tape(&self, tape: &mut Tape, store: &ParamStore, s: NodeId) -> NodeId {
        match self {
            MixingMap::Linear(l) => l.mix_tape(tape, store, s),
            MixingMap::Nonlinear(n) => n.mix_tape(tape, store, s),
        }
    }

    pub fn mix_raw(&self, store: &ParamStore, s: &Tensor) -> Tensor {
        match self {
            MixingMap::Linear(l) => l.mix_raw(store, s),
            MixingMap::Nonlinear(n) => n.mix_raw(store, s),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            MixingMap::Linear(l) => l.m,
            MixingMap::Nonlinear(n) => n.m,
        }
    }
}
