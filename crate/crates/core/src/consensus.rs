//! Cross-view fusion: consensus distribution, pseudolabels, the three loss
//! terms and their gradients with respect to every view's assignments, and
//! the incremental consensus update.
//!
//! Pseudolabels and the first argument of each consistency cross-entropy
//! are treated as constants when differentiating.

use serde::{Deserialize, Serialize};

use crate::error::{MsrlError, Result};
use crate::numerics::{argmax, clamp_simplex, clamp_simplex_backward, Matrix, DELTA_FLOOR};

/// Consensus distributions for a batch plus their argmax labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusState {
    pub consensus: Matrix,
    pub labels: Vec<usize>,
}

impl ConsensusState {
    pub fn from_views(views: &[Matrix]) -> Result<Self> {
        let consensus = consensus_dist(views)?;
        let labels = pseudo_labels(&consensus);
        Ok(Self { consensus, labels })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub semantic: f64,
    pub diversity: f64,
    pub consistency: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LossBreakdown {
    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("L_s", self.semantic),
            ("L_a", self.diversity),
            ("L_c", self.consistency),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// Loss value, the pseudolabels it used, and `∂L/∂S⁽ˡ⁾` for every view.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    pub labels: Vec<usize>,
    pub grads: Vec<Matrix>,
}

fn check_views(views: &[Matrix]) -> Result<(usize, usize)> {
    let first = views
        .first()
        .ok_or_else(|| MsrlError::InvalidArgument("no views".into()))?;
    let shape = first.shape();
    for (l, v) in views.iter().enumerate() {
        if v.shape() != shape {
            return Err(MsrlError::shape(
                "view assignments",
                format!("{shape:?}"),
                format!("view {l} {:?}", v.shape()),
            ));
        }
    }
    Ok(shape)
}

/// `P = (1/L) Σ_l S⁽ˡ⁾`.
pub fn consensus_dist(views: &[Matrix]) -> Result<Matrix> {
    let (n, c) = check_views(views)?;
    let mut p = Matrix::zeros(n, c);
    for v in views {
        p.as_mut_slice()
            .iter_mut()
            .zip(v.as_slice())
            .for_each(|(a, b)| *a += b);
    }
    p.scale(1.0 / views.len() as f64);
    Ok(p)
}

/// Row-wise argmax, lowest index on ties.
pub fn pseudo_labels(consensus: &Matrix) -> Vec<usize> {
    consensus.row_iter().map(argmax).collect()
}

fn check_labels(labels: &[usize], n: usize, c: usize) -> Result<()> {
    if labels.len() != n {
        return Err(MsrlError::shape("pseudolabels", n, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(MsrlError::InvalidArgument(format!(
            "label {bad} out of range for {c} clusters"
        )));
    }
    Ok(())
}

/// `(1/B) Σ_i (1/L) Σ_l −log S⁽ˡ⁾_{i,yᵢ}`.
pub fn loss_semantic(views: &[Matrix], labels: &[usize]) -> Result<f64> {
    semantic_with_floor(views, labels, DELTA_FLOOR)
}

fn semantic_with_floor(views: &[Matrix], labels: &[usize], floor: f64) -> Result<f64> {
    let (n, c) = check_views(views)?;
    check_labels(labels, n, c)?;
    let mut total = 0.0;
    for v in views {
        for (i, &y) in labels.iter().enumerate() {
            total -= clamp_simplex(v.row(i), floor).as_slice()[y].ln();
        }
    }
    Ok(total / (n * views.len()) as f64)
}

/// Column means `q_j = (1/B) Σ_i s_ij`.
pub fn cluster_marginal(assignments: &Matrix) -> Vec<f64> {
    let (n, c) = assignments.shape();
    let mut q = vec![0.0; c];
    for row in assignments.row_iter() {
        q.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    q.iter_mut().for_each(|x| *x /= n as f64);
    q
}

/// `Σ_l Σ_j q_j⁽ˡ⁾ log q_j⁽ˡ⁾`, minimal when every view's marginal is uniform.
pub fn loss_diversity(views: &[Matrix]) -> f64 {
    diversity_with_floor(views, DELTA_FLOOR)
}

fn diversity_with_floor(views: &[Matrix], floor: f64) -> f64 {
    views
        .iter()
        .map(|v| {
            let q = clamp_simplex(&cluster_marginal(v), floor);
            q.as_slice().iter().map(|&x| x * x.ln()).sum::<f64>()
        })
        .sum()
}

/// `(1/B) Σ_i Σ_{p≠q} H(s_i⁽ᵖ⁾, s_i⁽ᵠ⁾)` over ordered view pairs.
pub fn loss_consistency(views: &[Matrix]) -> f64 {
    consistency_against(views, views, DELTA_FLOOR)
}

/// Consistency loss with the cross-entropy targets taken from `targets`.
fn consistency_against(targets: &[Matrix], views: &[Matrix], floor: f64) -> f64 {
    let l = views.len();
    if l < 2 {
        return 0.0;
    }
    let n = views[0].rows();
    let mut total = 0.0;
    for i in 0..n {
        let logs: Vec<Vec<f64>> = views
            .iter()
            .map(|v| {
                clamp_simplex(v.row(i), floor)
                    .into_inner()
                    .into_iter()
                    .map(f64::ln)
                    .collect()
            })
            .collect();
        let tgt: Vec<_> = targets
            .iter()
            .map(|v| clamp_simplex(v.row(i), floor))
            .collect();
        for p in 0..l {
            for q in 0..l {
                if p != q {
                    total -= tgt[p]
                        .as_slice()
                        .iter()
                        .zip(&logs[q])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
            }
        }
    }
    total / n as f64
}

/// `L_s + α·L_a + β·L_c` with pseudolabels from the batch consensus, plus
/// the gradient with respect to every view's assignment matrix.
pub fn total_loss(views: &[Matrix], alpha: f64, beta: f64) -> Result<LossOutput> {
    total_loss_with_floor(views, alpha, beta, DELTA_FLOOR)
}

/// [`total_loss`] with an explicit simplex floor.
pub fn total_loss_with_floor(
    views: &[Matrix],
    alpha: f64,
    beta: f64,
    floor: f64,
) -> Result<LossOutput> {
    let (n, c) = check_views(views)?;
    if !(floor > 0.0 && floor <= 1.0 / c as f64) {
        return Err(MsrlError::InvalidArgument(format!(
            "simplex floor {floor} outside (0, 1/{c}]"
        )));
    }
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(MsrlError::InvalidArgument(format!(
            "alpha and beta must be ≥ 0 (got {alpha}, {beta})"
        )));
    }
    let labels = ConsensusState::from_views(views)?.labels;
    let l = views.len();
    let semantic = semantic_with_floor(views, &labels, floor)?;
    let diversity = diversity_with_floor(views, floor);
    let consistency = consistency_against(views, views, floor);
    let breakdown = LossBreakdown {
        semantic,
        diversity,
        consistency,
        total: semantic + alpha * diversity + beta * consistency,
        alpha,
        beta,
    };

    let inv_b = 1.0 / n as f64;
    let clamped: Vec<Vec<Vec<f64>>> = views
        .iter()
        .map(|v| {
            v.row_iter()
                .map(|r| clamp_simplex(r, floor).into_inner())
                .collect()
        })
        .collect();

    let mut grads = Vec::with_capacity(l);
    for (vl, view) in views.iter().enumerate() {
        let mut g = Matrix::zeros(n, c);

        // L_s and L_c both act on the clamped row s̃_i⁽ˡ⁾.
        let mut row_grad = vec![0.0; c];
        for i in 0..n {
            row_grad.iter_mut().for_each(|x| *x = 0.0);
            let s = &clamped[vl][i];
            row_grad[labels[i]] -= inv_b / (l as f64 * s[labels[i]]);
            if beta != 0.0 {
                for (p, other) in clamped.iter().enumerate() {
                    if p != vl {
                        for j in 0..c {
                            row_grad[j] -= beta * inv_b * other[i][j] / s[j];
                        }
                    }
                }
            }
            g.row_mut(i)
                .copy_from_slice(&clamp_simplex_backward(view.row(i), floor, &row_grad));
        }

        // L_a acts through the clamped marginal q̃⁽ˡ⁾.
        if alpha != 0.0 {
            let q = cluster_marginal(view);
            let q_t = clamp_simplex(&q, floor);
            let dq_t: Vec<f64> = q_t.as_slice().iter().map(|&x| alpha * (x.ln() + 1.0)).collect();
            let dq = clamp_simplex_backward(&q, floor, &dq_t);
            for i in 0..n {
                g.row_mut(i)
                    .iter_mut()
                    .zip(&dq)
                    .for_each(|(a, b)| *a += b * inv_b);
            }
        }
        grads.push(g);
    }

    Ok(LossOutput {
        breakdown,
        labels,
        grads,
    })
}

/// The quantities held constant when differentiating [`total_loss`].
#[derive(Clone, Debug)]
pub struct DetachedTargets {
    pub labels: Vec<usize>,
    pub views: Vec<Matrix>,
}

impl DetachedTargets {
    pub fn capture(views: &[Matrix]) -> Result<Self> {
        Ok(Self {
            labels: ConsensusState::from_views(views)?.labels,
            views: views.to_vec(),
        })
    }
}

/// The objective whose exact gradient [`total_loss`] returns: pseudolabels
/// and consistency targets frozen at `targets`. Equal in value to
/// `total_loss(views, …).total` when `targets` was captured from `views`.
pub fn detached_objective(
    views: &[Matrix],
    targets: &DetachedTargets,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    let semantic = loss_semantic(views, &targets.labels)?;
    Ok(semantic
        + alpha * loss_diversity(views)
        + beta * consistency_against(&targets.views, views, DELTA_FLOOR))
}

/// `P⁽ᴸ⁺¹⁾ = L/(L+1)·P⁽ᴸ⁾ + 1/(L+1)·S_new`.
pub fn incremental_update(consensus: &Matrix, new_view: &Matrix, views_so_far: usize) -> Result<Matrix> {
    if views_so_far < 1 {
        return Err(MsrlError::InvalidArgument(
            "incremental update needs L ≥ 1 views so far".into(),
        ));
    }
    if consensus.shape() != new_view.shape() {
        return Err(MsrlError::shape(
            "incremental_update",
            format!("{:?}", consensus.shape()),
            format!("{:?}", new_view.shape()),
        ));
    }
    let l = views_so_far as f64;
    let keep = l / (l + 1.0);
    let add = 1.0 / (l + 1.0);
    let data = consensus
        .as_slice()
        .iter()
        .zip(new_view.as_slice())
        .map(|(p, s)| keep * p + add * s)
        .collect();
    Matrix::from_vec(consensus.rows(), consensus.cols(), data)
}
