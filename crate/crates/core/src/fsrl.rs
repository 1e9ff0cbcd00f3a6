//! Per-view feature self-representation head.
//!
//! For a mini-batch `X` (`N × m`) of one view's frozen features:
//!
//! ```text
//! H = dropout(X) · W                         N × C   linear head
//! E_ij = v[..C]·h_i + v[C..]·h_j              N × N   attention scores
//! A = rowsoftmax(ReLU(E))                     N × N   self-representation weights
//! Z = A · H + H                               N × C   information passing
//! S = rowsoftmax(Z)                           N × C   assignment distributions
//! ```
//!
//! `backward` returns exact gradients of any scalar loss given `∂L/∂S`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{MsrlError, Result};
use crate::numerics::{softmax_in_place, softmax_rows, Matrix};

/// Trainable parameters of one view's head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewModel {
    /// `m × C` linear head.
    pub weights: Matrix,
    /// `2C` attention vector; first half scores the query, second half the key.
    pub attention: Vec<f64>,
    pub dropout_rate: f64,
    pub row_normalize: bool,
}

/// Whether dropout is active, and where its randomness comes from.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

/// Every intermediate of one forward pass, kept for `backward`.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Features after dropout (equal to the batch in eval mode).
    pub input: Matrix,
    /// Per-entry inverted-dropout multipliers, `None` when dropout was off.
    pub dropout_mask: Option<Vec<f64>>,
    pub logits: Matrix,
    pub scores: Matrix,
    pub attention: Matrix,
    pub aggregated: Matrix,
    pub assignments: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewGrads {
    pub weights: Matrix,
    pub attention: Vec<f64>,
}

impl ViewGrads {
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weights.as_slice());
        out.extend_from_slice(&self.attention);
    }
}

impl ViewModel {
    pub fn new(weights: Matrix, attention: Vec<f64>) -> Result<Self> {
        if attention.len() != 2 * weights.cols() {
            return Err(MsrlError::shape(
                "ViewModel::new attention",
                2 * weights.cols(),
                attention.len(),
            ));
        }
        Ok(Self {
            weights,
            attention,
            dropout_rate: 0.0,
            row_normalize: false,
        })
    }

    /// `W ~ U(−1/√m, 1/√m)`, `v = 0` so the first step attends uniformly.
    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        clusters: usize,
        dropout_rate: f64,
        row_normalize: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let weights = Matrix::from_fn(dim, clusters, |_, _| rng.random_range(-bound..bound));
        let mut model = Self {
            weights,
            attention: vec![0.0; 2 * clusters],
            dropout_rate,
            row_normalize,
        };
        if row_normalize {
            model.normalize_columns();
        }
        model
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn clusters(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weights.as_slice().len() + self.attention.len()
    }

    /// Appends `[W (row-major), v]` to `out`.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weights.as_slice());
        out.extend_from_slice(&self.attention);
    }

    /// Inverse of [`flatten_into`](Self::flatten_into); `src` must hold exactly `num_params` values.
    pub fn load_flat(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.num_params() {
            return Err(MsrlError::shape("ViewModel::load_flat", self.num_params(), src.len()));
        }
        let w = self.weights.as_slice().len();
        self.weights.as_mut_slice().copy_from_slice(&src[..w]);
        self.attention.copy_from_slice(&src[w..]);
        Ok(())
    }

    /// Projects every column of `W` onto the unit sphere.
    pub fn normalize_columns(&mut self) {
        let (m, c) = self.weights.shape();
        for j in 0..c {
            let norm = (0..m).map(|i| self.weights[(i, j)].powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for i in 0..m {
                    self.weights[(i, j)] /= norm;
                }
            }
        }
    }

    pub fn forward(&self, batch: &Matrix, mode: Mode<'_>) -> Result<ForwardTrace> {
        let (input, dropout_mask) = match mode {
            Mode::Train(rng) if self.dropout_rate > 0.0 => {
                let (x, mask) = apply_dropout(batch, self.dropout_rate, rng);
                (x, Some(mask))
            }
            _ => (batch.clone(), None),
        };
        let logits = forward_linear(self, &input)?;
        let (scores, attention) = attention_coeffs(self, &logits)?;
        let aggregated = aggregate(&logits, &attention)?;
        let assignments = assign_dist(&aggregated);
        Ok(ForwardTrace {
            input,
            dropout_mask,
            logits,
            scores,
            attention,
            aggregated,
            assignments,
        })
    }

    pub fn backward(&self, trace: &ForwardTrace, grad_assign: &Matrix) -> Result<ViewGrads> {
        let n = trace.logits.rows();
        let c = self.clusters();
        if trace.logits.cols() != c || trace.input.cols() != self.input_dim() {
            return Err(MsrlError::shape(
                "backward trace",
                format!("{}×{} head", self.input_dim(), c),
                format!("trace input {} / logits {}", trace.input.cols(), trace.logits.cols()),
            ));
        }
        if grad_assign.shape() != (n, c) {
            return Err(MsrlError::shape(
                "backward dL/dS",
                format!("{n}×{c}"),
                format!("{:?}", grad_assign.shape()),
            ));
        }

        // softmax: dZ_i = s_i ⊙ (dS_i − ⟨dS_i, s_i⟩)
        let s = &trace.assignments;
        let mut d_agg = Matrix::zeros(n, c);
        for i in 0..n {
            let (si, gi) = (s.row(i), grad_assign.row(i));
            let dot: f64 = si.iter().zip(gi).map(|(a, b)| a * b).sum();
            for (o, (a, g)) in d_agg.row_mut(i).iter_mut().zip(si.iter().zip(gi)) {
                *o = a * (g - dot);
            }
        }

        // Z = A·H + H
        let a = &trace.attention;
        let h = &trace.logits;
        let mut d_logits = a.t_matmul(&d_agg)?.add(&d_agg)?;
        let d_attn = d_agg.matmul(&h.transpose())?;

        // A = rowsoftmax(ReLU(E)); E_ij = v_q·h_i + v_k·h_j
        let (v_q, v_k) = self.attention.split_at(c);
        let mut row_sums = vec![0.0; n];
        let mut col_sums = vec![0.0; n];
        for i in 0..n {
            let (ai, gi) = (a.row(i), d_attn.row(i));
            let dot: f64 = ai.iter().zip(gi).map(|(x, y)| x * y).sum();
            for j in 0..n {
                if trace.scores[(i, j)] > 0.0 {
                    let d = ai[j] * (gi[j] - dot);
                    row_sums[i] += d;
                    col_sums[j] += d;
                }
            }
        }
        let mut d_attention = vec![0.0; 2 * c];
        for i in 0..n {
            let hi = h.row(i);
            for k in 0..c {
                d_attention[k] += row_sums[i] * hi[k];
                d_attention[c + k] += col_sums[i] * hi[k];
            }
            for (k, d) in d_logits.row_mut(i).iter_mut().enumerate() {
                *d += v_q[k] * row_sums[i] + v_k[k] * col_sums[i];
            }
        }

        let d_weights = trace.input.t_matmul(&d_logits)?;
        Ok(ViewGrads {
            weights: d_weights,
            attention: d_attention,
        })
    }
}

fn apply_dropout(batch: &Matrix, rate: f64, rng: &mut dyn RngCore) -> (Matrix, Vec<f64>) {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mask: Vec<f64> = (0..batch.as_slice().len())
        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
        .collect();
    let mut out = batch.clone();
    out.as_mut_slice()
        .iter_mut()
        .zip(&mask)
        .for_each(|(x, m)| *x *= m);
    (out, mask)
}

/// `H = X · W`. Dropout, when wanted, is applied by the caller (see [`ViewModel::forward`]).
pub fn forward_linear(model: &ViewModel, batch: &Matrix) -> Result<Matrix> {
    if batch.cols() != model.input_dim() {
        return Err(MsrlError::shape(
            "forward_linear feature dim",
            model.input_dim(),
            batch.cols(),
        ));
    }
    batch.matmul(&model.weights)
}

/// Returns the raw scores `E` and the row-stochastic attention matrix `A`.
pub fn attention_coeffs(model: &ViewModel, logits: &Matrix) -> Result<(Matrix, Matrix)> {
    let c = model.clusters();
    if logits.cols() != c {
        return Err(MsrlError::shape("attention_coeffs", c, logits.cols()));
    }
    let n = logits.rows();
    let (v_q, v_k) = model.attention.split_at(c);
    let dot = |v: &[f64], h: &[f64]| v.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
    let query: Vec<f64> = logits.row_iter().map(|h| dot(v_q, h)).collect();
    let key: Vec<f64> = logits.row_iter().map(|h| dot(v_k, h)).collect();

    let scores = Matrix::from_fn(n, n, |i, j| query[i] + key[j]);
    let mut attn = Matrix::from_fn(n, n, |i, j| scores[(i, j)].max(0.0));
    for i in 0..n {
        softmax_in_place(attn.row_mut(i));
    }
    Ok((scores, attn))
}

/// `Z = A · H + H`.
pub fn aggregate(logits: &Matrix, attention: &Matrix) -> Result<Matrix> {
    if attention.rows() != logits.rows() || attention.cols() != logits.rows() {
        return Err(MsrlError::shape(
            "aggregate",
            format!("{0}×{0} attention", logits.rows()),
            format!("{:?}", attention.shape()),
        ));
    }
    attention.matmul(logits)?.add(logits)
}

/// Row-wise softmax of the aggregated logits.
pub fn assign_dist(aggregated: &Matrix) -> Matrix {
    softmax_rows(aggregated)
}
