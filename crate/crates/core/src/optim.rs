//! Learning-rate schedule and the AdamW optimizer.

use std::collections::BTreeMap;

use crate::autograd::{Gradients, ParamGroup, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const DEFAULT_WARMUP_FRACTION: f64 = 0.1;

/// Number of warmup steps: `ceil(fraction · total)`.
pub fn warmup_steps(total_steps: usize, warmup_fraction: f64) -> usize {
    // the small offset keeps e.g. 0.1 · 30 from rounding up to 4
    ((warmup_fraction * total_steps as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Linear warmup to `base_lr` over the first tenth of the steps, then linear
/// decay to zero at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    lr_schedule_with(step, total_steps, base_lr, DEFAULT_WARMUP_FRACTION)
}

pub fn lr_schedule_with(step: usize, total_steps: usize, base_lr: f64, warmup_fraction: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::argument("total_steps must be positive"));
    }
    if step > total_steps {
        return Err(Error::argument(format!("step {step} beyond total_steps {total_steps}")));
    }
    if !(warmup_fraction > 0.0 && warmup_fraction < 1.0) {
        return Err(Error::argument(format!("warmup fraction {warmup_fraction} outside (0, 1)")));
    }
    let warmup = warmup_steps(total_steps, warmup_fraction);
    if step >= total_steps {
        return Ok(0.0);
    }
    if step < warmup {
        return Ok(base_lr * (step as f64 / warmup as f64));
    }
    Ok(base_lr * ((total_steps - step) as f64 / (total_steps - warmup) as f64))
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros = |s: &ParamStore| {
            s.iter()
                .map(|(_, p)| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros(store),
            v: zeros(store),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update of every trainable parameter that has a gradient. `lrs`
    /// gives the current rate of each parameter group; decay applies to
    /// parameters flagged for it and is decoupled from the gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lrs: &BTreeMap<ParamGroup, f64>) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let param = store.get_mut(id);
            let lr = *lrs
                .get(&param.group)
                .ok_or_else(|| Error::config(format!("no learning rate for parameter group `{}`", param.group.name())))?;
            let decay = if param.decay { self.weight_decay } else { 0.0 };
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            for (((w, &gi), mi), vi) in param.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                *w -= lr * (update + decay * *w);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(5, 100, 1e-3).unwrap(), 5e-4);
        assert_eq!(lr_schedule(10, 100, 1e-3).unwrap(), 1e-3);
        assert_eq!(lr_schedule(100, 100, 1e-3).unwrap(), 0.0);
        assert_eq!(lr_schedule(0, 100, 1e-3).unwrap(), 0.0);
        assert!(lr_schedule(0, 0, 1e-3).is_err());
        assert!(lr_schedule(101, 100, 1e-3).is_err());
        assert_eq!(warmup_steps(30, 0.1), 3);
        assert_eq!(warmup_steps(31, 0.1), 4);
        assert_eq!(warmup_steps(5, 0.1), 1);
    }

    #[test]
    fn adamw_minimises_quadratic() {
        let mut store = ParamStore::new();
        let w = store.add("w", ParamGroup::Fusion, Matrix::row_vector(vec![3.0, -2.0]), false);
        let mut opt = AdamW::new(&store, 0.0);
        let lrs = BTreeMap::from([(ParamGroup::Fusion, 0.1)]);
        for _ in 0..300 {
            let mut g = Graph::new(&store);
            let x = g.param(w);
            let loss = g.bce_with_logits(x, &[1.0, 0.0]);
            let grads = g.backward(loss);
            opt.step(&mut store, &grads, &lrs).unwrap();
        }
        let v = store.value(w);
        assert!(v.get(0, 0) > 5.0 && v.get(0, 1) < -5.0);
    }

    #[test]
    fn first_step_moves_by_lr_and_decay_is_decoupled() {
        let mut store = ParamStore::new();
        let w = store.add("w", ParamGroup::Text, Matrix::row_vector(vec![1.0]), true);
        let mut opt = AdamW::new(&store, 0.01);
        let mut grads = Gradients::zeros_like(&store);
        let mut one = Gradients::zeros_like(&store);
        {
            let mut g = Graph::new(&store);
            let x = g.param(w);
            let s = g.scale(x, 1.0);
            let l = g.bce_with_logits(s, &[0.0]);
            one.accumulate(&g.backward(l));
        }
        grads.accumulate(&one);
        opt.step(&mut store, &grads, &BTreeMap::from([(ParamGroup::Text, 0.5)])).unwrap();
        // Adam's first step is lr · sign(g); decay adds lr · wd · w
        let expected = 1.0 - 0.5 * (1.0 + 0.01 * 1.0);
        assert!((store.value(w).get(0, 0) - expected).abs() < 1e-6);
        assert!(opt.step(&mut store, &grads, &BTreeMap::new()).is_err());
    }
}
