use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Linear ramp from 0 to `base_lr` over the first `warmup_frac * total_steps`
/// steps, then linear decay to 0 at `total_steps`.
pub fn linear_warmup_lr(step: usize, base_lr: f64, warmup_frac: f64, total_steps: usize) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::contract("total_steps must be positive"));
    }
    if !(0.0..=1.0).contains(&warmup_frac) {
        return Err(Error::contract(format!("warmup fraction {warmup_frac} outside [0, 1]")));
    }
    if step > total_steps {
        return Err(Error::contract(format!("step {step} past total {total_steps}")));
    }
    if step == total_steps {
        return Ok(0.0);
    }
    let total = total_steps as f64;
    let warm = warmup_frac * total;
    let s = step as f64;
    if s < warm {
        Ok(base_lr * s / warm)
    } else {
        Ok(base_lr * (total - s) / (total - warm))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant(f64),
    LinearWarmup {
        base_lr: f64,
        warmup_frac: f64,
        total_steps: usize,
    },
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> Result<f64> {
        match *self {
            LrSchedule::Constant(lr) => Ok(lr),
            LrSchedule::LinearWarmup {
                base_lr,
                warmup_frac,
                total_steps,
            } => linear_warmup_lr(step, base_lr, warmup_frac, total_steps),
        }
    }
}

/// AdamW moments and schedule. Weight decay is decoupled and applied only to
/// parameters of rank two or more (biases and norm gains are exempt).
#[derive(Clone, Debug)]
pub struct OptimState {
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: usize,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl OptimState {
    pub fn new(schedule: LrSchedule, weight_decay: f64) -> Self {
        OptimState {
            schedule,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

/// One AdamW update of every parameter in `params`, using the learning rate
/// the schedule gives for the current step. Returns that learning rate.
pub fn adamw_step(
    params: &mut BTreeMap<String, Tensor<f32>>,
    grads: &BTreeMap<String, Tensor<f32>>,
    state: &mut OptimState,
) -> Result<f64> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::contract(format!("no gradient for parameter {name}")))?;
        if g.dims() != p.dims() {
            return Err(Error::Shape {
                op: "adamw_step",
                lhs: p.dims().to_vec(),
                rhs: g.dims().to_vec(),
            })
            .map_err(|e| Error::contract(format!("parameter {name}: {e}")));
        }
    }

    let lr = state.schedule.at(state.step)?;
    let t = (state.step + 1) as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);

    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; p.len()]);
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; p.len()]);
        let decay = if p.rank() >= 2 { state.weight_decay } else { 0.0 };
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            let gk = g.data()[k] as f64;
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            let mut x = *w as f64;
            x -= lr * (mhat / (vhat.sqrt() + state.eps) + decay * x);
            *w = x as f32;
        }
    }
    state.step += 1;
    Ok(lr)
}
