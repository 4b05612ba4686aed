//! One-hidden-layer maps `x -> W2 relu(W1 x + b1) + b2`, trained with Adam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{gemm, Matrix};
use crate::scalar::{dot, Scalar};

/// Adam moments for one parameter block.
#[derive(Clone, Debug, Default)]
pub(crate) struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: i32,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
        }
    }

    pub fn update<T: Scalar>(&self, params: &mut [T], grads: &[T], state: &mut AdamState<T>) {
        if state.m.len() != params.len() {
            state.m = vec![T::zero(); params.len()];
            state.v = vec![T::zero(); params.len()];
        }
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.step));
        let c2 = T::of(1.0 - self.beta2.powi(self.step));
        let lr = T::of(self.learning_rate);
        let eps = T::of(self.eps);
        for k in 0..params.len() {
            let g = grads[k];
            state.m[k] = b1 * state.m[k] + (T::one() - b1) * g;
            state.v[k] = b2 * state.v[k] + (T::one() - b2) * g * g;
            let mhat = state.m[k] / c1;
            let vhat = state.v[k] / c2;
            params[k] = params[k] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Tower<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

pub(crate) struct TowerGrad<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

#[derive(Default)]
pub(crate) struct TowerAdam<T> {
    w1: AdamState<T>,
    b1: AdamState<T>,
    w2: AdamState<T>,
    b2: AdamState<T>,
}

impl<T: Scalar> Tower<T> {
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let s1 = (6.0 / (input + hidden) as f64).sqrt();
        let s2 = (6.0 / (hidden + output) as f64).sqrt();
        Self {
            w1: Matrix::from_fn(hidden, input, |_, _| T::of(rng.random_range(-s1..=s1))),
            b1: vec![T::zero(); hidden],
            w2: Matrix::from_fn(output, hidden, |_, _| T::of(rng.random_range(-s2..=s2))),
            b2: vec![T::zero(); output],
        }
    }

    pub fn seeded(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        Self::new(input, hidden, output, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().chain(&self.b2).all(|v| v.is_finite())
    }

    fn hidden_into(&self, x: &[T], hidden: &mut [T]) {
        for (h, out) in hidden.iter_mut().enumerate() {
            *out = (self.b1[h] + dot(self.w1.row(h), x)).max(T::zero());
        }
    }

    pub fn forward_one(&self, x: &[T]) -> Vec<T> {
        let mut hidden = vec![T::zero(); self.b1.len()];
        self.hidden_into(x, &mut hidden);
        (0..self.output_dim())
            .map(|o| self.b2[o] + dot(self.w2.row(o), &hidden))
            .collect()
    }

    /// Batch forward pass; returns (post-activation hidden, output).
    pub fn forward(&self, x: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
        let mut hidden = Matrix::zeros(x.rows(), self.b1.len());
        gemm(T::one(), x, false, &self.w1, true, T::zero(), &mut hidden);
        for r in 0..hidden.rows() {
            for (v, &b) in hidden.row_mut(r).iter_mut().zip(&self.b1) {
                *v = (*v + b).max(T::zero());
            }
        }
        let mut out = Matrix::zeros(x.rows(), self.output_dim());
        gemm(T::one(), &hidden, false, &self.w2, true, T::zero(), &mut out);
        for r in 0..out.rows() {
            for (v, &b) in out.row_mut(r).iter_mut().zip(&self.b2) {
                *v = *v + b;
            }
        }
        (hidden, out)
    }

    /// Gradients for the batch plus the gradient with respect to the input.
    pub(crate) fn backward(&self, x: &Matrix<T>, hidden: &Matrix<T>, d_out: &Matrix<T>) -> (TowerGrad<T>, Matrix<T>) {
        let nh = self.b1.len();
        let mut g = TowerGrad {
            w1: Matrix::zeros(nh, self.input_dim()),
            b1: column_sums(d_out.rows(), nh, |_, _| T::zero()),
            w2: Matrix::zeros(self.output_dim(), nh),
            b2: column_sums(d_out.rows(), self.output_dim(), |r, c| d_out.get(r, c)),
        };
        gemm(T::one(), d_out, true, hidden, false, T::zero(), &mut g.w2);
        let mut d_hidden = Matrix::zeros(x.rows(), nh);
        gemm(T::one(), d_out, false, &self.w2, false, T::zero(), &mut d_hidden);
        for r in 0..d_hidden.rows() {
            for (d, &h) in d_hidden.row_mut(r).iter_mut().zip(hidden.row(r)) {
                if h <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        g.b1 = column_sums(d_hidden.rows(), nh, |r, c| d_hidden.get(r, c));
        gemm(T::one(), &d_hidden, true, x, false, T::zero(), &mut g.w1);
        let mut d_x = Matrix::zeros(x.rows(), self.input_dim());
        gemm(T::one(), &d_hidden, false, &self.w1, false, T::zero(), &mut d_x);
        (g, d_x)
    }

    pub(crate) fn apply(&mut self, adam: &Adam, g: &TowerGrad<T>, state: &mut TowerAdam<T>) {
        adam.update(self.w1.as_mut_slice(), g.w1.as_slice(), &mut state.w1);
        adam.update(&mut self.b1, &g.b1, &mut state.b1);
        adam.update(self.w2.as_mut_slice(), g.w2.as_slice(), &mut state.w2);
        adam.update(&mut self.b2, &g.b2, &mut state.b2);
    }
}

fn column_sums<T: Scalar>(rows: usize, cols: usize, f: impl Fn(usize, usize) -> T) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for r in 0..rows {
        for (c, v) in out.iter_mut().enumerate() {
            *v = *v + f(r, c);
        }
    }
    out
}
