use crate::error::{NdError, Result};
use crate::params::ParamStore;
use crate::scalar::{lit, Scalar};

/// Learning-rate schedule applied on top of the base rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// `lr * rate^floor(step / interval)`.
    StepDecay { rate: f64, interval: u64 },
    /// Linear decay from `lr` to 0 over `total_steps`.
    Linear { total_steps: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied as `p -= lr_t * decay * p`.
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            schedule: LrSchedule::Constant,
        }
    }
}

impl AdamConfig {
    pub fn rate_at(&self, step: u64) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::StepDecay { rate, interval } => {
                self.lr * rate.powi((step / interval.max(1)) as i32)
            }
            LrSchedule::Linear { total_steps } => {
                let frac = 1.0 - step as f64 / total_steps.max(1) as f64;
                self.lr * frac.max(0.0)
            }
        }
    }
}

/// First and second moment estimates for every parameter in a store.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![T::zero(); p.value.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam update of every trainable parameter from its
    /// gradient slot. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(NdError::Invalid(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for (id, p) in store.iter() {
            if p.grad.len() != self.m[id.0].len() {
                return Err(NdError::Invalid(format!("moment shape mismatch for `{}`", p.name)));
            }
            if p.trainable && !p.grad.all_finite() {
                return Err(NdError::NonFiniteGradient(p.name.clone()));
            }
        }
        let lr_t = self.config.rate_at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let (b1s, b2s) = (lit::<T>(b1), lit::<T>(b2));
        let (one_b1, one_b2) = (lit::<T>(1.0 - b1), lit::<T>(1.0 - b2));
        let step_size = lit::<T>(lr_t / bc1);
        let bc2_sqrt = lit::<T>(bc2.sqrt());
        let eps = lit::<T>(self.config.eps);
        let decay = lit::<T>(lr_t * self.config.weight_decay);
        for (id, p) in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let grad = p.grad.data().to_vec();
            for (k, x) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[k];
                m[k] = b1s * m[k] + one_b1 * g;
                v[k] = b2s * v[k] + one_b2 * g * g;
                let denom = v[k].sqrt() / bc2_sqrt + eps;
                *x -= step_size * m[k] / denom + decay * *x;
            }
        }
        Ok(())
    }
}
