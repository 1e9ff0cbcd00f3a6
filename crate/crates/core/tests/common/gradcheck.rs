//! End-to-end gradient check: analytic backward of the full multiview loss
//! against central finite differences of the same objective with pseudolabels
//! and consistency targets held fixed.

use msrl_core::consensus::{detached_objective, total_loss, DetachedTargets};
use msrl_core::fsrl::{Mode, ViewModel};
use msrl_core::numerics::finite_diff_grad;
use msrl_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub inputs: Vec<Matrix>,
    pub models: Vec<ViewModel>,
    pub alpha: f64,
    pub beta: f64,
}

impl Instance {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=8);
        let c = rng.random_range(2..=4);
        let l = rng.random_range(1..=3);
        let mut inputs = Vec::new();
        let mut models = Vec::new();
        for _ in 0..l {
            let m = rng.random_range(1..=6);
            inputs.push(Matrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0)));
            let w = Matrix::from_fn(m, c, |_, _| rng.random_range(-1.0..1.0));
            let v = (0..2 * c).map(|_| rng.random_range(-1.0..1.0)).collect();
            models.push(ViewModel::new(w, v).unwrap());
        }
        Self {
            inputs,
            models,
            alpha: rng.random_range(0.0..10.0),
            beta: rng.random_range(0.0..2.0),
        }
    }

    fn assignments(&self, models: &[ViewModel]) -> Vec<Matrix> {
        models
            .iter()
            .zip(&self.inputs)
            .map(|(m, x)| m.forward(x, Mode::Eval).unwrap().assignments)
            .collect()
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for m in &self.models {
            m.flatten_into(&mut out);
        }
        out
    }

    pub fn analytic(&self) -> Vec<f64> {
        let traces: Vec<_> = self
            .models
            .iter()
            .zip(&self.inputs)
            .map(|(m, x)| m.forward(x, Mode::Eval).unwrap())
            .collect();
        let views: Vec<Matrix> = traces.iter().map(|t| t.assignments.clone()).collect();
        let loss = total_loss(&views, self.alpha, self.beta).unwrap();
        let mut out = Vec::new();
        for ((m, t), g) in self.models.iter().zip(&traces).zip(&loss.grads) {
            m.backward(t, g).unwrap().flatten_into(&mut out);
        }
        out
    }

    pub fn numeric(&self, h: f64) -> Vec<f64> {
        let targets = DetachedTargets::capture(&self.assignments(&self.models)).unwrap();
        let sizes: Vec<usize> = self.models.iter().map(ViewModel::num_params).collect();
        let f = |theta: &[f64]| {
            let mut models = self.models.clone();
            let mut offset = 0;
            for (m, &k) in models.iter_mut().zip(&sizes) {
                m.load_flat(&theta[offset..offset + k]).unwrap();
                offset += k;
            }
            detached_objective(&self.assignments(&models), &targets, self.alpha, self.beta).unwrap()
        };
        finite_diff_grad(f, &self.params(), h)
    }

    /// `‖analytic − numeric‖∞ / max(‖numeric‖∞, 1e-12)`.
    pub fn relative_error(&self, h: f64) -> f64 {
        let a = self.analytic();
        let n = self.numeric(h);
        let err = a.iter().zip(&n).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let scale = n.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        err / scale.max(1e-12)
    }
}
