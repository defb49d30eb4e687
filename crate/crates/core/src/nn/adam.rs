use serde::{Deserialize, Serialize};

/// Adam moments for one flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One bias-corrected descent step along `grad`. `lr_multiplier` scales
    /// the base learning rate for this step only (schedules).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr_multiplier: f64) {
        assert_eq!(params.len(), self.m.len(), "adam parameter length");
        assert_eq!(grad.len(), self.m.len(), "adam gradient length");
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = self.lr * lr_multiplier;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// `0.5 · (1 + cos(π · step / total))`, clamped to the schedule's end.
pub fn cosine_lr_multiplier(step: u64, total: u64) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let frac = (step as f64 / total as f64).min(1.0);
    0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// `target ← (1 − τ)·target + τ·online`, elementwise.
pub fn polyak_update(target: &mut [f64], online: &[f64], tau: f64) {
    assert_eq!(target.len(), online.len(), "polyak shapes");
    assert!((0.0..=1.0).contains(&tau), "tau must lie in [0, 1]");
    if tau == 1.0 {
        target.copy_from_slice(online);
        return;
    }
    for (t, &o) in target.iter_mut().zip(online) {
        *t = (1.0 - tau) * *t + tau * o;
    }
}
