//! AdamW with decoupled weight decay and cosine-annealed learning rate.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::params::ParamStore;

/// Optimizer state: first/second moment estimates per parameter plus the
/// step counter driving the cosine schedule.
pub struct AdamW {
    pub lr_max: f64,
    pub lr_floor: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of steps over which the learning rate anneals to the floor.
    pub horizon: usize,
    step: usize,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamW {
    /// Moments are allocated to match the store's current entries; the store
    /// must not gain or lose parameters afterwards.
    pub fn new(
        store: &ParamStore,
        lr_max: f64,
        lr_floor: f64,
        weight_decay: f64,
        horizon: usize,
    ) -> Self {
        let shapes: Vec<(usize, usize)> = (0..store.num_entries())
            .map(|i| store.value_at(i).shape())
            .collect();
        AdamW {
            lr_max,
            lr_floor,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            horizon: horizon.max(1),
            step: 0,
            m: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Jump the schedule to a given step (testing / resumption).
    pub fn set_step(&mut self, step: usize) {
        self.step = step;
    }

    /// Cosine-annealed learning rate at the current step:
    /// floor + 0.5 (max - floor) (1 + cos(pi t / horizon)); exactly the
    /// floor once t reaches the horizon.
    pub fn current_lr(&self) -> f64 {
        let t = self.step.min(self.horizon) as f64;
        let frac = t / self.horizon as f64;
        self.lr_floor
            + 0.5 * (self.lr_max - self.lr_floor) * (1.0 + (std::f64::consts::PI * frac).cos())
    }

    /// Apply one update from the gradients accumulated in the store, zero
    /// them, and advance the schedule. Returns the learning rate used.
    /// Stepping without a prior backward pass is a contract error.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<f64> {
        if !store.grads_ready() {
            return Err(Error::Contract(
                "optimizer step before any backward pass".into(),
            ));
        }
        if store.num_entries() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer built for {} parameters, store has {}",
                self.m.len(),
                store.num_entries()
            )));
        }
        let lr = self.current_lr();
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..store.num_entries() {
            let (value, grad) = store.value_mut_grad(i);
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            let p = value.as_mut_slice();
            let g = grad.as_slice();
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * p[j]);
            }
        }
        store.zero_grads();
        self.step += 1;
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with_scalar(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Mat::scalar(x)).unwrap();
        s
    }

    fn push_grad(store: &mut ParamStore, g: f64) {
        store.accumulate_grad(0, &Mat::scalar(g)).unwrap();
        store.mark_grads_ready();
    }

    #[test]
    fn step_before_backward_is_rejected() {
        let mut s = store_with_scalar(1.0);
        let mut opt = AdamW::new(&s, 1e-3, 1e-3, 0.0, 10);
        assert!(matches!(opt.step(&mut s), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_grad_zero_decay_leaves_parameters_unchanged() {
        let mut s = store_with_scalar(1.25);
        let mut opt = AdamW::new(&s, 1e-3, 1e-3, 0.0, 10);
        push_grad(&mut s, 0.0);
        opt.step(&mut s).unwrap();
        assert_eq!(s.get("x").unwrap().item(), 1.25);
    }

    #[test]
    fn three_step_recurrence_matches_hand_computation() {
        // Constant lr (max == floor) isolates the update rule from the
        // schedule. Grads fed in order: 0.5, -0.3, 0.2; wd = 0.01.
        let lr = 1e-2;
        let wd = 0.01;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut s = store_with_scalar(1.0);
        let mut opt = AdamW::new(&s, lr, lr, wd, 1000);

        let mut x = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (k, g) in [0.5f64, -0.3, 0.2].into_iter().enumerate() {
            push_grad(&mut s, g);
            opt.step(&mut s).unwrap();

            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            x -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * x);
        }
        let got = s.get("x").unwrap().item();
        assert!((got - x).abs() < 1e-15, "got {}, want {}", got, x);
    }

    #[test]
    fn cosine_schedule_endpoints_and_midpoint() {
        let s = store_with_scalar(0.0);
        let mut opt = AdamW::new(&s, 2e-4, 1e-6, 0.0, 100);
        assert_eq!(opt.current_lr(), 2e-4);
        opt.set_step(50);
        let mid = opt.current_lr();
        assert!((mid - (2e-4 + 1e-6) / 2.0).abs() < 1e-18);
        opt.set_step(100);
        assert_eq!(opt.current_lr(), 1e-6);
        opt.set_step(250); // past the horizon stays at the floor
        assert_eq!(opt.current_lr(), 1e-6);
    }

    #[test]
    fn grads_are_zeroed_after_step() {
        let mut s = store_with_scalar(1.0);
        let mut opt = AdamW::new(&s, 1e-3, 1e-3, 0.0, 10);
        push_grad(&mut s, 2.0);
        opt.step(&mut s).unwrap();
        assert_eq!(s.grad("x").unwrap().item(), 0.0);
        assert!(!s.grads_ready());
    }
}
