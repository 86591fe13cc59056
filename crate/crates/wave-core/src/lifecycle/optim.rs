//! AdamW with decoupled weight decay and a cosine learning-rate schedule.
//! The optimizer itself is stateless; moment estimates live in an
//! `OptimState` aligned with the caller's tensor list.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Total update count T for the cosine schedule.
    pub total_steps: usize,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug)]
pub struct AdamW {
    cfg: OptimConfig,
}

/// First and second moment estimates, one pair per registered tensor.
#[derive(Clone, Debug)]
pub struct OptimState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl OptimState {
    /// Zero state shaped like the given tensors.
    pub fn like(tensors: &[&Matrix]) -> OptimState {
        let zeros: Vec<Matrix> =
            tensors.iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
        OptimState { m: zeros.clone(), v: zeros }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

impl AdamW {
    pub fn new(cfg: OptimConfig) -> Result<AdamW> {
        if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
            return Err(Error::Input(format!(
                "learning_rate must be positive, got {}",
                cfg.learning_rate
            )));
        }
        if !(cfg.weight_decay.is_finite() && cfg.weight_decay >= 0.0) {
            return Err(Error::Input(format!(
                "weight_decay must be nonnegative, got {}",
                cfg.weight_decay
            )));
        }
        if cfg.total_steps == 0 {
            return Err(Error::Input("total_steps must be at least 1".into()));
        }
        Ok(AdamW { cfg })
    }

    /// Cosine-decayed learning rate for 0-based step t:
    /// lr * 0.5 * (1 + cos(pi * t / T)). No warmup.
    pub fn lr_at(&self, step: usize) -> f64 {
        let t = step.min(self.cfg.total_steps) as f64;
        let frac = t / self.cfg.total_steps as f64;
        self.cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }

    /// One update over aligned (param, grad) pairs. `step` is 0-based and
    /// shared by all tensors; bias correction uses step + 1.
    pub fn step(
        &self,
        step: usize,
        params: &mut [&mut Matrix],
        grads: &[&Matrix],
        state: &mut OptimState,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != state.len() {
            return Err(Error::State(format!(
                "optimizer called with {} params, {} grads, state of {}",
                params.len(),
                grads.len(),
                state.len()
            )));
        }
        let lr = self.lr_at(step);
        let t = (step + 1) as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for i in 0..params.len() {
            let p = &mut *params[i];
            let g = grads[i];
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "param {i} is {}x{}, its gradient is {}x{}",
                    p.rows(),
                    p.cols(),
                    g.rows(),
                    g.cols()
                )));
            }
            let m = &mut state.m[i];
            let v = &mut state.v[i];
            let ps = p.as_mut_slice();
            let gs = g.as_slice();
            let ms = m.as_mut_slice();
            let vs = v.as_mut_slice();
            for j in 0..ps.len() {
                ms[j] = BETA1 * ms[j] + (1.0 - BETA1) * gs[j];
                vs[j] = BETA2 * vs[j] + (1.0 - BETA2) * gs[j] * gs[j];
                let mhat = ms[j] / bc1;
                let vhat = vs[j] / bc2;
                ps[j] -= lr * (mhat / (vhat.sqrt() + EPS) + self.cfg.weight_decay * ps[j]);
            }
        }
        Ok(())
    }
}
