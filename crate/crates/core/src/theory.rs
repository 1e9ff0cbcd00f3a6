//! Monte-Carlo checks of the model's theoretical guarantees: softmax
//! translation invariance, the multiview consistency bounds built on the
//! entropy's Lipschitz constant on the floored simplex, the attraction of the
//! incremental consensus towards a shared distribution, the per-view entropy
//! change bound, and the column-normalization amplification bound.
//!
//! Every trial draws from its own RNG stream keyed by `(seed, check, trial)`,
//! so reports are reproducible regardless of worker count.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::consensus::incremental_update;
use crate::error::{MsrlError, Result};
use crate::fsrl::assign_dist;
use crate::numerics::{clamp_simplex, entropy, l1_distance, l2_norm, softmax, Matrix, DELTA_FLOOR};
use crate::rng::{derived_rng, stream};

/// `Q_δ = 1 + |log δ|`, a bound on `|∂H/∂w_i| = |1 + log w_i|` over the
/// simplex with every coordinate at least `δ`.
pub fn lipschitz_constant(delta: f64, classes: usize) -> Result<f64> {
    if classes < 1 || !(delta > 0.0 && delta <= 1.0 / classes as f64) {
        return Err(MsrlError::InvalidArgument(format!(
            "delta {delta} outside (0, 1/{classes}]"
        )));
    }
    Ok(1.0 + delta.ln().abs())
}

/// Outcome of one check. `max_violation` is the largest observed
/// `statistic − bound` over all trials (negative means slack everywhere).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryCheck {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    pub max_violation: f64,
    /// The bound at the trial that came closest to (or past) it.
    pub bound: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Informational checks are reported but never fail the suite.
    pub gating: bool,
    pub note: String,
    /// Description of the worst trial, kept for failed checks.
    pub worst_trial: Option<String>,
}

struct Outcome {
    excess: f64,
    bound: f64,
    describe: Box<dyn FnOnce() -> String + Send>,
}

fn summarize(name: &str, tolerance: f64, outcomes: Vec<Outcome>) -> TheoryCheck {
    let trials = outcomes.len();
    let violations = outcomes.iter().filter(|o| o.excess > tolerance).count();
    let mut worst: Option<Outcome> = None;
    for o in outcomes {
        if worst.as_ref().is_none_or(|w| o.excess > w.excess) {
            worst = Some(o);
        }
    }
    let (max_violation, bound, describe) = match worst {
        Some(w) => (w.excess, w.bound, Some(w.describe)),
        None => (f64::NEG_INFINITY, 0.0, None),
    };
    let pass = violations == 0 && max_violation.is_finite() || trials == 0;
    TheoryCheck {
        name: name.to_string(),
        trials,
        violations,
        max_violation,
        bound,
        tolerance,
        pass,
        gating: true,
        note: String::new(),
        worst_trial: if pass { None } else { describe.map(|d| d()) },
    }
}

fn trial_rng(seed: u64, check: u64, trial: usize) -> rand_chacha::ChaCha8Rng {
    derived_rng(seed, &[stream::THEORY, check, trial as u64])
}

/// A point on the simplex with every coordinate at least `floor`.
fn random_interior<R: Rng>(rng: &mut R, classes: usize, floor: f64) -> Vec<f64> {
    let g: Vec<f64> = (0..classes).map(|_| Exp1.sample(rng)).collect();
    let sum: f64 = g.iter().sum();
    let p: Vec<f64> = g.iter().map(|x| x / sum).collect();
    clamp_simplex(&p, floor).into_inner()
}

/// A zero-sum direction with unit l1 norm, from a symmetric Dirichlet draw.
fn random_direction<R: Rng>(rng: &mut R, classes: usize) -> Vec<f64> {
    loop {
        let g = random_interior(rng, classes, 0.0);
        let mut u: Vec<f64> = g.iter().map(|x| x - 1.0 / classes as f64).collect();
        let norm: f64 = u.iter().map(|x| x.abs()).sum();
        if norm > 1e-12 {
            u.iter_mut().for_each(|x| *x /= norm);
            return u;
        }
    }
}

/// Moves `p` by at most `radius` in l1 along a random direction, shortening
/// the step so every coordinate stays at or above `floor`.
fn perturb<R: Rng>(rng: &mut R, p: &[f64], radius: f64, floor: f64) -> Vec<f64> {
    let u = random_direction(rng, p.len());
    let mut t = radius;
    for (&pi, &ui) in p.iter().zip(&u) {
        if ui < 0.0 {
            t = t.min((pi - floor) / -ui);
        }
    }
    let t = t.max(0.0);
    let s: Vec<f64> = p.iter().zip(&u).map(|(a, b)| a + t * b).collect();
    clamp_simplex(&s, floor).into_inner()
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        m.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|a| *a /= rows.len() as f64);
    m
}

mod id {
    pub const TRANSLATION: u64 = 1;
    pub const LIPSCHITZ: u64 = 2;
    pub const CONSISTENCY: u64 = 3;
    pub const ATTRACTIVITY: u64 = 4;
    pub const ENTROPY: u64 = 5;
    pub const ROWNORM: u64 = 6;
}

/// Softmax outputs for `z` and `z + c·1` (as two rows of one aggregated
/// batch) must agree to 1e-12 for random `z` and `|c| ≤ 1e3`.
pub fn check_translation_invariance(trials: usize, classes: usize, seed: u64) -> TheoryCheck {
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, id::TRANSLATION, t);
            let z: Vec<f64> = (0..classes).map(|_| rng.random_range(-10.0..10.0)).collect();
            let c: f64 = if t == 0 { 0.0 } else { rng.random_range(-1e3..1e3) };
            let rows = Matrix::from_rows(&[z.clone(), z.iter().map(|x| x + c).collect()])
                .expect("two equal rows");
            let s = assign_dist(&rows);
            let direct = softmax(&z).expect("nonempty");
            let gap = (0..classes)
                .map(|j| {
                    (s[(0, j)] - s[(1, j)])
                        .abs()
                        .max((s[(0, j)] - direct.as_slice()[j]).abs())
                })
                .fold(0.0, f64::max);
            Outcome {
                excess: gap - 1e-12,
                bound: 1e-12,
                describe: Box::new(move || format!("z={z:?} c={c}")),
            }
        })
        .collect();
    let mut check = summarize("translation invariance", 0.0, outcomes);
    check.note = format!("C={classes}, |c| ≤ 1e3");
    check
}

/// `|H(u) − H(v)| ≤ Q_δ·‖u − v‖₁` for random pairs on the floored simplex.
pub fn check_entropy_lipschitz(pairs: usize, max_classes: usize, seed: u64, q_scale: f64) -> TheoryCheck {
    let outcomes = (0..pairs)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, id::LIPSCHITZ, t);
            let c = rng.random_range(2..=max_classes.max(2));
            // alternate between generic points and points hugging the floor
            let floor = DELTA_FLOOR;
            let (u, v) = if t % 2 == 0 {
                (random_interior(&mut rng, c, floor), random_interior(&mut rng, c, floor))
            } else {
                let mut u = vec![floor; c];
                u[0] = 1.0 - floor * (c - 1) as f64;
                // shift a little mass onto one floored coordinate, where |∂H| peaks
                let k = rng.random_range(1..c);
                let r = rng.random_range(1e-9..1e-3);
                let mut v = u.clone();
                v[0] -= r;
                v[k] += r;
                (u, v)
            };
            let q = q_scale * lipschitz_constant(floor, c).expect("valid floor");
            let lhs = (entropy(&u) - entropy(&v)).abs();
            let bound = q * l1_distance(&u, &v);
            Outcome {
                excess: lhs - bound,
                bound,
                describe: Box::new(move || format!("u={u:?} v={v:?}")),
            }
        })
        .collect();
    let mut check = summarize("entropy lipschitz", 1e-15, outcomes);
    check.note = format!("C ≤ {max_classes}, δ = {DELTA_FLOOR:e}");
    check
}

/// Views drawn within `eps` of each other (pairwise l1) around a random
/// interior point: `H(mean) ≤ mean H + Q_δ·eps` and `‖s⁽ˡ⁾ − mean‖₁ ≤ eps`.
///
/// Returns the two bound checks plus an informational Jensen probe that
/// counts trials with `H(mean) < mean H`.
pub fn check_consistency_bounds(
    trials: usize,
    classes: usize,
    views: usize,
    eps: f64,
    seed: u64,
    q_scale: f64,
) -> [TheoryCheck; 3] {
    let q = q_scale * lipschitz_constant(DELTA_FLOOR, classes).expect("valid floor");
    let samples: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, id::CONSISTENCY, t);
            let p = random_interior(&mut rng, classes, DELTA_FLOOR);
            // radius eps/2 about p keeps every pair within eps
            let s: Vec<Vec<f64>> = (0..views)
                .map(|_| perturb(&mut rng, &p, eps / 2.0, DELTA_FLOOR))
                .collect();
            (p, s)
        })
        .collect();
    let mut entropy_bound = Vec::with_capacity(trials);
    let mut spread_bound = Vec::with_capacity(trials);
    let mut jensen = Vec::with_capacity(trials);
    for (_, s) in &samples {
        let mean = mean_rows(s);
        let h_mean = entropy(&mean);
        let mean_h = s.iter().map(|x| entropy(x)).sum::<f64>() / views as f64;
        let bound = mean_h + q * eps;
        let (s1, s2) = (s.clone(), s.clone());
        entropy_bound.push(Outcome {
            excess: h_mean - bound,
            bound,
            describe: Box::new(move || format!("views={s1:?}")),
        });
        let spread = s.iter().map(|x| l1_distance(x, &mean)).fold(0.0, f64::max);
        spread_bound.push(Outcome {
            excess: spread - eps,
            bound: eps,
            describe: Box::new(move || format!("views={s2:?}")),
        });
        jensen.push(Outcome {
            excess: mean_h - h_mean,
            bound: 0.0,
            describe: Box::new(String::new),
        });
    }
    let note = format!("C={classes}, L={views}, eps={eps}, Q={q:.6}");
    let mut a = summarize("consistency entropy bound", 1e-12, entropy_bound);
    a.note = note.clone();
    let mut b = summarize("consistency spread bound", 1e-12, spread_bound);
    b.note = note;
    let mut c = summarize("jensen probe (informational)", 1e-12, jensen);
    c.gating = false;
    c.note = format!(
        "{} of {} trials with H(mean) < mean H; concavity predicts none",
        c.violations, c.trials
    );
    c.worst_trial = None;
    [a, b, c]
}

/// Per-trial sequence `P⁽ᴸ⁾` built by incremental updates from views drawn
/// within `eps` (l1) of a fixed interior point `p`. Returns `(p, [P⁽¹⁾..P⁽ᴸᵐᵃˣ⁾])`.
fn consensus_path(seed: u64, check: u64, trial: usize, classes: usize, l_max: usize, eps: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut rng = trial_rng(seed, check, trial);
    let p = random_interior(&mut rng, classes, DELTA_FLOOR);
    let mut path = Vec::with_capacity(l_max);
    let r = eps * rng.random::<f64>();
    let first = perturb(&mut rng, &p, r, DELTA_FLOOR);
    let mut cur = Matrix::from_vec(1, classes, first).expect("row");
    path.push(cur.row(0).to_vec());
    for l in 1..l_max {
        let r = eps * rng.random::<f64>();
        let s = perturb(&mut rng, &p, r, DELTA_FLOOR);
        let s = Matrix::from_vec(1, classes, s).expect("row");
        cur = incremental_update(&cur, &s, l).expect("l ≥ 1");
        path.push(cur.row(0).to_vec());
    }
    (p, path)
}

/// Fits the smallest `w` with `mean‖P⁽ᴸ⁾ − p‖₁ ≤ w·(1/L + eps)` for all
/// `L ≤ l_max`, and checks `mean‖P⁽ᴸ⁾ − p‖₁ ≤ eps` (the consensus never
/// leaves the ball its views were drawn from).
pub fn simulate_attractivity(l_max: usize, eps: f64, trials: usize, classes: usize, seed: u64) -> TheoryCheck {
    let l_max = l_max.max(1);
    let paths: Vec<_> = (0..trials)
        .into_par_iter()
        .map(|t| consensus_path(seed, id::ATTRACTIVITY, t, classes, l_max, eps))
        .collect();
    let mut err = vec![0.0; l_max];
    for (p, path) in &paths {
        for (e, pl) in err.iter_mut().zip(path) {
            *e += l1_distance(pl, p);
        }
    }
    err.iter_mut().for_each(|e| *e /= trials.max(1) as f64);
    let w = err
        .iter()
        .enumerate()
        .map(|(i, e)| e / (1.0 / (i + 1) as f64 + eps))
        .fold(0.0, f64::max);
    let outcomes = err
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let envelope = w * (1.0 / (i + 1) as f64 + eps);
            let bound = envelope.min(eps);
            Outcome {
                excess: e - bound,
                bound,
                describe: Box::new(move || format!("L={} mean error={e}", i + 1)),
            }
        })
        .collect();
    let mut check = summarize("consensus attractivity", 1e-12, outcomes);
    check.trials = trials;
    if !w.is_finite() {
        check.pass = false;
    }
    check.note = format!(
        "C={classes}, eps={eps}, L ≤ {l_max}, fitted w = {w:.6}, error at L_max = {:.3e}",
        err[l_max - 1]
    );
    check
}

/// `E[H(P⁽ᴸ⁺¹⁾)] − E[H(P⁽ᴸ⁾)] ≤ 2·Q_δ·eps/(L+1)` for every `L < l_max`.
pub fn check_entropy_change(
    l_max: usize,
    eps: f64,
    trials: usize,
    classes: usize,
    seed: u64,
    q_scale: f64,
) -> TheoryCheck {
    let l_max = l_max.max(2);
    let q = q_scale * lipschitz_constant(DELTA_FLOOR, classes).expect("valid floor");
    let paths: Vec<_> = (0..trials)
        .into_par_iter()
        .map(|t| consensus_path(seed, id::ENTROPY, t, classes, l_max, eps))
        .collect();
    let mut mean_h = vec![0.0; l_max];
    for (_, path) in &paths {
        for (h, pl) in mean_h.iter_mut().zip(path) {
            *h += entropy(pl);
        }
    }
    mean_h.iter_mut().for_each(|h| *h /= trials.max(1) as f64);
    let outcomes = (1..l_max)
        .map(|l| {
            let change = mean_h[l] - mean_h[l - 1];
            let bound = 2.0 * q * eps / (l + 1) as f64;
            Outcome {
                excess: change - bound,
                bound,
                describe: Box::new(move || format!("L={l} entropy change={change}")),
            }
        })
        .collect();
    let mut check = summarize("entropy change", 1e-9, outcomes);
    check.trials = trials;
    check.note = format!("C={classes}, eps={eps}, L ≤ {l_max}, Q={q:.6}");
    check
}

/// With unit-norm columns, `‖Wᵀ(φ_i − φ_j)‖₂ ≤ √C·‖φ_i − φ_j‖₂`.
pub fn check_rownorm_bound(trials: usize, dim: usize, classes: usize, seed: u64) -> TheoryCheck {
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, id::ROWNORM, t);
            let mut model = crate::fsrl::ViewModel::new(
                Matrix::from_fn(dim, classes, |_, _| rng.random_range(-1.0..1.0)),
                vec![0.0; 2 * classes],
            )
            .expect("consistent shapes");
            model.normalize_columns();
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
            let b: Vec<f64> = if t == 0 {
                a.clone()
            } else {
                (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()
            };
            let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let diff = Matrix::from_vec(1, dim, d.clone()).expect("row");
            let lhs = l2_norm(diff.matmul(&model.weights).expect("shapes").as_slice());
            let bound = (classes as f64).sqrt() * l2_norm(&d);
            Outcome {
                excess: lhs - bound,
                bound,
                describe: Box::new(move || format!("phi_i={a:?} phi_j={b:?}")),
            }
        })
        .collect();
    let mut check = summarize("row-norm amplification", 1e-12, outcomes);
    check.note = format!("m={dim}, C={classes}");
    check
}

/// Trial counts and seed for [`run_all`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryConfig {
    /// Trials for the static checks; the consensus-dynamics checks use a
    /// tenth of this and the Lipschitz check ten times as many pairs.
    pub trials: usize,
    pub seed: u64,
    /// Multiplies `Q_δ` wherever it enters a bound. Anything below 1 is a
    /// deliberately broken suite used to exercise the failure path.
    pub q_scale: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            trials: 10_000,
            seed: 0,
            q_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryReport {
    pub config: TheoryConfig,
    pub checks: Vec<TheoryCheck>,
}

impl TheoryReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().filter(|c| c.gating).all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&TheoryCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,trials,violations,max_violation,bound,tolerance,pass,gating,note\n");
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{},{},{},{:e},{:e},{:e},{},{},\"{}\"",
                c.name, c.trials, c.violations, c.max_violation, c.bound, c.tolerance, c.pass, c.gating,
                c.note.replace('"', "'")
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<30} {:>7} {:>6} {:>13} {:>13}  result",
            "check", "trials", "viol", "max excess", "bound"
        );
        for c in &self.checks {
            let result = match (c.pass, c.gating) {
                (_, false) => "info",
                (true, _) => "pass",
                (false, _) => "FAIL",
            };
            let _ = writeln!(
                s,
                "{:<30} {:>7} {:>6} {:>13.3e} {:>13.3e}  {}",
                c.name, c.trials, c.violations, c.max_violation, c.bound, result
            );
            if !c.note.is_empty() {
                let _ = writeln!(s, "    {}", c.note);
            }
        }
        s
    }
}

/// Runs every check with the suite's standard parameters.
pub fn run_all(config: &TheoryConfig) -> TheoryReport {
    let t = config.trials.max(1);
    let dynamics = t.div_ceil(10);
    let (seed, qs) = (config.seed, config.q_scale);
    let mut checks = vec![
        check_translation_invariance(t, 10, seed),
        check_entropy_lipschitz(10 * t, 10, seed, qs),
    ];
    checks.extend(check_consistency_bounds(t, 5, 4, 0.1, seed, qs));
    checks.push(simulate_attractivity(64, 0.05, dynamics, 5, seed));
    checks.push(check_entropy_change(16, 0.05, dynamics, 5, seed, qs));
    checks.push(check_rownorm_bound(t, 64, 10, seed));
    TheoryReport {
        config: config.clone(),
        checks,
    }
}
