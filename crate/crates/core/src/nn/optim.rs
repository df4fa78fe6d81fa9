//! AdamW with cosine learning-rate annealing.

use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::io::container::NamedTensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub min_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    /// Length of the cosine period; the rate stays at `min_lr` afterwards.
    pub total_steps: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            min_lr: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 0,
            total_steps: 1000,
            clip_norm: 1.0,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.min_lr >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::invalid("learning rates and weight decay must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Learning rate at a zero-based step.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.lr == 0.0 {
            return 0.0;
        }
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.min_lr + 0.5 * (self.lr - self.min_lr) * (1.0 + (PI * progress).cos())
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: usize,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParamStore) -> Self {
        let m: Vec<_> = store.values().iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Self {
            cfg,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// Applies one update. Parameters with no gradient are left untouched.
    /// Returns the gradient norm before clipping.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Option<Array2<f64>>]) -> Result<f64> {
        if grads.len() != store.len() {
            return Err(Error::shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        let norm = grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm at step {}", self.step)));
        }
        let clip = if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };
        let lr = self.cfg.lr_at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let (b1, b2, eps, wd) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps, self.cfg.weight_decay);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = &mut store.values_mut()[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    let g = g * clip;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= lr * (mh / (vh.sqrt() + eps) + wd * *p);
                });
        }
        Ok(norm)
    }

    pub fn to_tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut out = Vec::with_capacity(2 * self.m.len() + 1);
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            out.push(NamedTensor::from_array2(format!("{prefix}m.{i}"), m));
            out.push(NamedTensor::from_array2(format!("{prefix}v.{i}"), v));
        }
        out.push(NamedTensor::from_u32(
            format!("{prefix}step"),
            vec![2],
            &[(self.step & 0xffff_ffff) as u32, (self.step >> 32) as u32],
        ));
        out
    }

    pub fn load_tensors(&mut self, prefix: &str, tensors: &[NamedTensor]) -> Result<()> {
        let find = |name: String| {
            tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Format(format!("missing optimizer tensor {name}")))
        };
        for i in 0..self.m.len() {
            let m = find(format!("{prefix}m.{i}"))?.to_array2()?;
            let v = find(format!("{prefix}v.{i}"))?.to_array2()?;
            if m.dim() != self.m[i].dim() || v.dim() != self.v[i].dim() {
                return Err(Error::shape(format!("optimizer state {i} shape mismatch")));
            }
            self.m[i] = m;
            self.v[i] = v;
        }
        let s = find(format!("{prefix}step"))?.to_u32()?;
        if s.len() != 2 {
            return Err(Error::Format("optimizer step tensor".into()));
        }
        self.step = s[0] as usize | ((s[1] as usize) << 32);
        Ok(())
    }
}

/// Sums per-sample gradients in list order and scales the result.
pub fn sum_gradients(parts: Vec<Vec<Option<Array2<f64>>>>, scale: f64) -> Vec<Option<Array2<f64>>> {
    let mut it = parts.into_iter();
    let Some(mut acc) = it.next() else {
        return Vec::new();
    };
    for part in it {
        for (a, p) in acc.iter_mut().zip(part) {
            match (a.as_mut(), p) {
                (Some(a), Some(p)) => *a += &p,
                (None, Some(p)) => *a = Some(p),
                _ => {}
            }
        }
    }
    for a in acc.iter_mut().flatten() {
        a.mapv_inplace(|v| v * scale);
    }
    acc
}
