use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;
use crate::transformer::Checkpoint;

/// Linear warmup then cosine decay from `peak` to `floor` at `total` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub floor: f64,
    pub warmup: u64,
    pub total: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            peak: 3e-4,
            floor: 1e-5,
            warmup: 0,
            total: 10_000,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup {
            return self.peak * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup).max(1);
        let p = ((step - self.warmup) as f64 / span as f64).min(1.0);
        self.floor + 0.5 * (self.peak - self.floor) * (1.0 + (PI * p).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied to matrices only (not to bias or norm rows).
    pub weight_decay: f64,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub schedule: LrSchedule,
    m: ParamStore<T>,
    v: ParamStore<T>,
    step: u64,
}

pub fn grad_norm<T: Scalar>(grads: &ParamStore<T>) -> f64 {
    grads
        .iter()
        .flat_map(|(_, _, t)| t.data().iter())
        .map(|x| {
            let x = x.to_f64().unwrap_or(f64::NAN);
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ParamStore<T>, config: AdamWConfig, schedule: LrSchedule) -> Self {
        Self {
            config,
            schedule,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr(self.step)
    }

    /// Applies one update from `grads` (same layout as `params`); returns
    /// the learning rate used.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>) -> f64 {
        let c = self.config;
        let lr = self.schedule.lr(self.step);
        self.step += 1;
        let mut scale = 1.0;
        if let Some(max) = c.clip_norm {
            let norm = grad_norm(grads);
            if norm > max {
                scale = max / norm;
            }
        }
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (lit::<T>(c.beta1), lit::<T>(c.beta2));
        let (one, eps, lr_t, scale) = (T::one(), lit::<T>(c.eps), lit::<T>(lr), lit::<T>(scale));
        let (bc1, bc2) = (lit::<T>(bc1), lit::<T>(bc2));
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let decay = if params.get(id).rows() > 1 { lit::<T>(c.weight_decay) } else { T::zero() };
            let g = grads.get(id).data();
            let m = self.m.get_mut(id).data_mut();
            let v = self.v.get_mut(id).data_mut();
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g[i] * scale;
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr_t * (mh / (vh.sqrt() + eps) + decay * p[i]);
            }
        }
        lr
    }

    pub fn save_into(&self, ckpt: &mut Checkpoint) {
        ckpt.push_store("opt.m.", &self.m);
        ckpt.push_store("opt.v.", &self.v);
        ckpt.push("opt.step", &Tensor::<f64>::from_vec(1, 1, vec![self.step as f64]));
    }

    /// Restores moments saved by [`AdamW::save_into`].
    pub fn restore(
        ckpt: &Checkpoint,
        params: &ParamStore<T>,
        config: AdamWConfig,
        schedule: LrSchedule,
    ) -> Result<Self> {
        let mut opt = Self::new(params, config, schedule);
        let step = ckpt
            .get("opt.step")
            .ok_or_else(|| Error::Format("checkpoint has no optimizer state".into()))?;
        opt.step = step.get(0, 0) as u64;
        for (id, name, t) in params.iter() {
            for (prefix, store) in [("opt.m.", &mut opt.m), ("opt.v.", &mut opt.v)] {
                let rec = ckpt
                    .get(&format!("{prefix}{name}"))
                    .ok_or_else(|| Error::Format(format!("missing {prefix}{name}")))?;
                if rec.shape() != t.shape() {
                    return Err(Error::Format(format!("shape mismatch for {prefix}{name}")));
                }
                *store.get_mut(id) = rec.cast();
            }
        }
        Ok(opt)
    }
}
