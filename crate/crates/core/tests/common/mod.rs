//! Independent reference implementations used as test oracles. None of these
//! call into the library's numerical code; they are deliberately naive.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Row-major dense product by the textbook triple loop.
pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|x| x.exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Single-view head evaluated directly from its definition:
/// `h = xW`, `e_ij = v_q·h_i + v_k·h_j`, `a_i = softmax(relu(e_i))`,
/// `z_i = Σ_j a_ij h_j + h_i`, `s_i = softmax(z_i)`.
pub fn head_forward(x: &[Vec<f64>], w: &[Vec<f64>], v: &[f64]) -> Vec<Vec<f64>> {
    let h = matmul(x, w);
    let n = h.len();
    let c = w[0].len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    (0..n)
        .map(|i| {
            let e: Vec<f64> = (0..n)
                .map(|j| (dot(&v[..c], &h[i]) + dot(&v[c..], &h[j])).max(0.0))
                .collect();
            let a = softmax(&e);
            let z: Vec<f64> = (0..c)
                .map(|k| (0..n).map(|j| a[j] * h[j][k]).sum::<f64>() + h[i][k])
                .collect();
            softmax(&z)
        })
        .collect()
}

fn clamp(p: &[f64], floor: f64) -> Vec<f64> {
    let c: Vec<f64> = p.iter().map(|x| x.max(floor).min(1.0)).collect();
    let s: f64 = c.iter().sum();
    c.into_iter().map(|x| x / s).collect()
}

/// `L_s + α L_a + β L_c` for a list of per-view assignment matrices.
pub fn total_loss(views: &[Vec<Vec<f64>>], alpha: f64, beta: f64) -> f64 {
    let floor = 1e-8;
    let l = views.len();
    let n = views[0].len();
    let c = views[0][0].len();
    let labels: Vec<usize> = (0..n)
        .map(|i| {
            let p: Vec<f64> = (0..c)
                .map(|k| views.iter().map(|v| v[i][k]).sum::<f64>() / l as f64)
                .collect();
            let mut best = 0;
            for k in 1..c {
                if p[k] > p[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    let mut ls = 0.0;
    for v in views {
        for i in 0..n {
            ls -= clamp(&v[i], floor)[labels[i]].ln();
        }
    }
    ls /= (n * l) as f64;
    let mut la = 0.0;
    for v in views {
        let q: Vec<f64> = (0..c).map(|k| v.iter().map(|r| r[k]).sum::<f64>() / n as f64).collect();
        la += clamp(&q, floor).iter().map(|x| x * x.ln()).sum::<f64>();
    }
    let mut lc = 0.0;
    for i in 0..n {
        for p in 0..l {
            for q in 0..l {
                if p != q {
                    let a = clamp(&views[p][i], floor);
                    let b = clamp(&views[q][i], floor);
                    lc -= a.iter().zip(&b).map(|(x, y)| x * y.ln()).sum::<f64>();
                }
            }
        }
    }
    lc /= n as f64;
    ls + alpha * la + beta * lc
}

/// Maximum matched fraction over every injective relabeling of `pred`,
/// by exhaustive enumeration.
pub fn brute_force_acc(pred: &[usize], truth: &[usize]) -> f64 {
    let kp = pred.iter().max().unwrap() + 1;
    let kt = truth.iter().max().unwrap() + 1;
    let k = kp.max(kt);
    let mut counts = vec![vec![0usize; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[p][t] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let s: usize = (0..k).map(|i| counts[i][p[i]]).sum();
        best = best.max(s);
    });
    best as f64 / pred.len() as f64
}

fn permute(p: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
    if i == p.len() {
        f(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, f);
        p.swap(i, j);
    }
}

/// ARI from an explicit loop over all `n(n−1)/2` sample pairs.
pub fn pair_count_ari(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len();
    let (mut a, mut b, mut c, mut d) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in i + 1..n {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    let total = a + b + c + d;
    let expected = (a + b) * (a + c) / total;
    let max = ((a + b) + (a + c)) / 2.0;
    if max == expected {
        return 1.0;
    }
    (a - expected) / (max - expected)
}

/// NMI with geometric-mean normalization from joint and marginal frequencies.
pub fn contingency_nmi(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut pp: HashMap<usize, f64> = HashMap::new();
    let mut pt: HashMap<usize, f64> = HashMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *joint.entry((p, t)).or_default() += 1.0 / n;
        *pp.entry(p).or_default() += 1.0 / n;
        *pt.entry(t).or_default() += 1.0 / n;
    }
    if pp.len() == 1 || pt.len() == 1 {
        return if pp.len() == pt.len() { 1.0 } else { 0.0 };
    }
    let h = |m: &HashMap<usize, f64>| -m.values().map(|p| p * p.ln()).sum::<f64>();
    let mi: f64 = joint
        .iter()
        .map(|(&(p, t), &pj)| pj * (pj / (pp[&p] * pt[&t])).ln())
        .sum();
    mi / (h(&pp) * h(&pt)).sqrt()
}

/// Lloyd's k-means with random-sample initialization; best of `restarts` by inertia.
pub fn kmeans(x: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let d = x[0].len();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let mut best = (f64::INFINITY, vec![0; n]);
    for _ in 0..restarts {
        let mut centers: Vec<Vec<f64>> = (0..k).map(|_| x[rng.random_range(0..n)].clone()).collect();
        let mut labels = vec![0; n];
        for _ in 0..100 {
            let mut changed = false;
            for i in 0..n {
                let mut bj = 0;
                for j in 1..k {
                    if dist(&x[i], &centers[j]) < dist(&x[i], &centers[bj]) {
                        bj = j;
                    }
                }
                changed |= labels[i] != bj;
                labels[i] = bj;
            }
            for (j, center) in centers.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = (0..n).filter(|&i| labels[i] == j).map(|i| &x[i]).collect();
                if !members.is_empty() {
                    *center = (0..d)
                        .map(|t| members.iter().map(|m| m[t]).sum::<f64>() / members.len() as f64)
                        .collect();
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = (0..n).map(|i| dist(&x[i], &centers[labels[i]])).sum();
        if inertia < best.0 {
            best = (inertia, labels);
        }
    }
    best.1
}

pub fn rows(m: &msrl_core::Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

pub mod gradcheck;
