//! Low-dimensional Gaussian-to-Gaussian flow with a closed-form answer, used
//! to check the flow machinery end to end.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::net::PointwiseFlowNet;
use super::ode::sample_ode;
use crate::nn::{AdamW, AdamWConfig, Graph};
use crate::rng;
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianFlowSetup {
    pub target_mean: Vec<f64>,
    pub target_std: f64,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub hidden: usize,
    pub depth: usize,
    pub samples: usize,
    pub sample_steps: usize,
    pub seed: u64,
}

impl Default for GaussianFlowSetup {
    fn default() -> Self {
        Self {
            target_mean: vec![2.0, -1.0],
            target_std: 0.5,
            batch: 256,
            steps: 1500,
            lr: 3e-3,
            hidden: 64,
            depth: 2,
            samples: 1000,
            sample_steps: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFlowReport {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `‖mean − m‖ / ‖m‖`.
    pub mean_rel_err: f64,
    /// Largest `|var_k − σ²| / σ²`.
    pub var_rel_err: f64,
    pub final_loss: f64,
}

/// Trains a row-wise flow from `N(0, I)` to `N(m, σ²I)` and measures the moments
/// of fresh samples.
pub fn train_gaussian_flow(s: &GaussianFlowSetup) -> Result<GaussianFlowReport> {
    let dim = s.target_mean.len();
    let mut net = PointwiseFlowNet::new(dim, s.hidden, s.depth, s.seed)?;
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: s.lr,
            min_lr: s.lr * 0.05,
            warmup_steps: 0,
            total_steps: s.steps,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
        &net.params,
    );
    let draw = |r: &mut rng::Rng, n: usize, mean: &[f64], std: f64| {
        let e = rng::normal_vec(r, n * dim);
        Array2::from_shape_fn((n, dim), |(i, k)| mean[k] + std * e[i * dim + k])
    };
    let zero = vec![0.0; dim];
    let mut final_loss = f64::NAN;
    for step in 0..s.steps {
        let mut r = rng::stream(s.seed, 0x70, step as u64);
        let x0 = draw(&mut r, s.batch, &zero, 1.0);
        let x1 = draw(&mut r, s.batch, &s.target_mean, s.target_std);
        let t: Vec<f64> = (0..s.batch).map(|_| rand::Rng::random(&mut r)).collect();
        let xt = Array2::from_shape_fn((s.batch, dim), |(i, k)| (1.0 - t[i]) * x0[[i, k]] + t[i] * x1[[i, k]]);
        let mut g = Graph::new();
        let xv = g.constant(xt);
        let v = net.forward(&mut g, xv, &t)?;
        let target = g.constant(&x1 - &x0);
        let l = g.mse(v, target);
        final_loss = g.scalar(l);
        let grads = g.backward(l)?.for_store(&net.params);
        opt.update(&mut net.params, &grads)?;
    }
    let mut r = rng::stream(s.seed, 0x71, 0);
    let x0 = draw(&mut r, s.samples, &zero, 1.0);
    let field = |x: &Array2<f64>, t: f64| net.velocity(x, t);
    let out = sample_ode(&field, &x0, s.sample_steps)?;
    let n = s.samples as f64;
    let mean: Vec<f64> = (0..dim).map(|k| out.column(k).sum() / n).collect();
    let variance: Vec<f64> = (0..dim)
        .map(|k| out.column(k).iter().map(|v| (v - mean[k]).powi(2)).sum::<f64>() / (n - 1.0))
        .collect();
    let norm = |v: &[f64]| v.iter().map(|e| e * e).sum::<f64>().sqrt();
    let diff: Vec<f64> = mean.iter().zip(&s.target_mean).map(|(a, b)| a - b).collect();
    let sigma2 = s.target_std * s.target_std;
    Ok(GaussianFlowReport {
        mean_rel_err: norm(&diff) / norm(&s.target_mean),
        var_rel_err: variance.iter().map(|v| (v - sigma2).abs() / sigma2).fold(0.0, f64::max),
        mean,
        variance,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_run_moves_toward_target() {
        let s = GaussianFlowSetup {
            steps: 150,
            samples: 400,
            ..GaussianFlowSetup::default()
        };
        let r = train_gaussian_flow(&s).unwrap();
        assert!(r.mean_rel_err < 0.5, "{r:?}");
        assert!(r.final_loss.is_finite());
    }
}
