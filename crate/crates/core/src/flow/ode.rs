//! Rectified-flow primitives: interpolants, the matching objective, the Euler
//! sampler and the start-point noise augmentation.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::nn::{Graph, Var};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// A velocity field `v(x, t)` over token matrices; conditioning is owned by the
/// implementor.
pub trait VelocityField {
    fn velocity(&self, x: &Array2<f64>, t: f64) -> Result<Array2<f64>>;
}

impl<F> VelocityField for F
where
    F: Fn(&Array2<f64>, f64) -> Result<Array2<f64>>,
{
    fn velocity(&self, x: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
        self(x, t)
    }
}

/// `(1 − t)·x0 + t·x1`.
pub fn interpolate_xt(x0: &Array2<f64>, x1: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
    if x0.dim() != x1.dim() {
        return Err(Error::shape(format!("interpolating {:?} and {:?}", x0.dim(), x1.dim())));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("flow time {t} outside [0, 1]")));
    }
    Ok(ndarray::Zip::from(x0)
        .and(x1)
        .map_collect(|&a, &b| (1.0 - t) * a + t * b))
}

/// Mean squared error between a predicted velocity and the straight-line target `x1 − x0`.
pub fn cfm_loss_var(g: &mut Graph, v: Var, x0: &Array2<f64>, x1: &Array2<f64>) -> Result<Var> {
    if g.shape(v) != x0.dim() || x0.dim() != x1.dim() {
        return Err(Error::shape(format!(
            "velocity {:?} against endpoints {:?} / {:?}",
            g.shape(v),
            x0.dim(),
            x1.dim()
        )));
    }
    let target = g.constant(x1 - x0);
    Ok(g.mse(v, target))
}

/// Matching objective of a plain field over `(x0, x1)` pairs at the given times.
pub fn cfm_loss(field: &impl VelocityField, pairs: &[(Array2<f64>, Array2<f64>)], times: &[f64]) -> Result<f64> {
    if pairs.len() != times.len() || pairs.is_empty() {
        return Err(Error::invalid(format!("{} pairs with {} times", pairs.len(), times.len())));
    }
    let mut total = 0.0;
    for ((x0, x1), &t) in pairs.iter().zip(times) {
        let xt = interpolate_xt(x0, x1, t)?;
        let v = field.velocity(&xt, t)?;
        if v.dim() != x0.dim() {
            return Err(Error::shape(format!("velocity {:?} for tokens {:?}", v.dim(), x0.dim())));
        }
        let d = &v - &(x1 - x0);
        total += d.mapv(|e| e * e).mean().unwrap();
    }
    Ok(total / pairs.len() as f64)
}

/// Explicit Euler from `t = 0` to `t = 1` in `steps` equal steps.
///
/// The state is kept as `x0 + (k/n)·m_k` with `m_k` the running mean of the
/// velocities seen so far, which equals the usual update and makes constant
/// fields exact for every step count.
pub fn sample_ode(field: &impl VelocityField, x0: &Array2<f64>, steps: usize) -> Result<Array2<f64>> {
    if steps == 0 {
        return Err(Error::invalid("sampling needs at least one step"));
    }
    let n = steps as f64;
    let mut mean = Array2::<f64>::zeros(x0.dim());
    let mut x = x0.clone();
    for k in 0..steps {
        let v = field.velocity(&x, k as f64 / n)?;
        if v.dim() != x0.dim() {
            return Err(Error::shape(format!("velocity {:?} for tokens {:?}", v.dim(), x0.dim())));
        }
        let c = (k + 1) as f64;
        ndarray::Zip::from(&mut mean).and(&v).for_each(|m, &vi| *m += (vi - *m) / c);
        let frac = c / n;
        x = ndarray::Zip::from(x0).and(&mean).map_collect(|&a, &m| a + frac * m);
        if x.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite(format!("ODE state at step {k}")));
        }
    }
    Ok(x)
}

/// Cosine noise-augmentation schedule over `num_steps` discrete levels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseAugSchedule {
    pub num_steps: usize,
    /// Level applied at inference.
    pub eval_step: usize,
}

impl Default for NoiseAugSchedule {
    fn default() -> Self {
        Self {
            num_steps: 150,
            eval_step: 75,
        }
    }
}

const COSINE_OFFSET: f64 = 0.008;

impl NoiseAugSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 || self.eval_step > self.num_steps {
            return Err(Error::invalid(format!(
                "noise schedule step {} of {}",
                self.eval_step, self.num_steps
            )));
        }
        Ok(())
    }

    fn f(&self, s: f64) -> f64 {
        let u = (s / self.num_steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
        (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
    }

    /// Signal fraction `ᾱ(s)`; exactly 1 at step 0.
    pub fn alpha_bar(&self, step: usize) -> f64 {
        if step == 0 {
            return 1.0;
        }
        (self.f(step as f64) / self.f(0.0)).clamp(0.0, 1.0)
    }

    /// Noise standard deviation `sqrt(1 − ᾱ(s))`.
    pub fn level(&self, step: usize) -> f64 {
        (1.0 - self.alpha_bar(step)).sqrt()
    }

    /// Step as a fraction of the schedule, fed to the network.
    pub fn fraction(&self, step: usize) -> f64 {
        step as f64 / self.num_steps as f64
    }

    /// `sqrt(ᾱ)·x0 + sqrt(1 − ᾱ)·ε`.
    pub fn augment(&self, x0: &Array2<f64>, step: usize, rng: &mut Rng) -> Result<Array2<f64>> {
        if step > self.num_steps {
            return Err(Error::invalid(format!("augmentation step {step} of {}", self.num_steps)));
        }
        if step == 0 {
            return Ok(x0.clone());
        }
        let a = self.alpha_bar(step).sqrt();
        let s = self.level(step);
        let eps = rng::normal_vec(rng, x0.len());
        Ok(Array2::from_shape_fn(x0.dim(), |(i, j)| {
            a * x0[[i, j]] + s * eps[i * x0.ncols() + j]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn mat(r: usize, c: usize) -> impl Strategy<Value = Array2<f64>> {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    }

    #[test]
    fn interpolation_examples() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let b = array![[5.0, -2.0], [0.5, 8.0]];
        assert_eq!(interpolate_xt(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate_xt(&a, &b, 1.0).unwrap(), b);
        assert_eq!(interpolate_xt(&a, &b, 0.5).unwrap(), array![[3.0, 0.0], [1.75, 6.0]]);
        assert!(interpolate_xt(&a, &b.slice(ndarray::s![..1, ..]).to_owned(), 0.5).is_err());
        assert!(interpolate_xt(&a, &b, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn interpolation_endpoints_and_linearity(a in mat(3, 2), b in mat(3, 2), t in 0.0f64..=1.0) {
            prop_assert_eq!(interpolate_xt(&a, &b, 0.0).unwrap(), a.clone());
            prop_assert_eq!(interpolate_xt(&a, &b, 1.0).unwrap(), b.clone());
            let s = interpolate_xt(&a, &b, t).unwrap() + interpolate_xt(&b, &a, t).unwrap();
            let sum = &a + &b;
            for (x, y) in s.iter().zip(sum.iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn constant_field_is_exact_for_any_step_count(x0 in mat(2, 3), c in mat(2, 3), n in 1usize..80) {
            let field = |_: &Array2<f64>, _: f64| Ok(c.clone());
            let one = sample_ode(&field, &x0, 1).unwrap();
            prop_assert_eq!(sample_ode(&field, &x0, n).unwrap(), one.clone());
            prop_assert_eq!(one, &x0 + &c);
        }

        #[test]
        fn level_zero_augmentation_is_identity(x in mat(4, 3), seed in 0u64..100) {
            let s = NoiseAugSchedule::default();
            prop_assert_eq!(s.augment(&x, 0, &mut rng::stream(seed, 0, 0)).unwrap(), x);
        }
    }

    #[test]
    fn oracle_field_gives_zero_loss_and_zero_field_gives_target_power() {
        let x0 = array![[0.0, 1.0], [2.0, -1.0]];
        let x1 = array![[1.0, 1.0], [0.0, 3.0]];
        let pairs = vec![(x0.clone(), x1.clone())];
        let oracle = |_: &Array2<f64>, _: f64| Ok(&x1 - &x0);
        assert_eq!(cfm_loss(&oracle, &pairs, &[0.3]).unwrap(), 0.0);
        let zero = |x: &Array2<f64>, _: f64| Ok(Array2::zeros(x.dim()));
        // (1 + 0 + 4 + 16) / 4
        assert_eq!(cfm_loss(&zero, &pairs, &[0.7]).unwrap(), 21.0 / 4.0);
    }

    #[test]
    fn cfm_loss_matches_scalar_loop() {
        let mut r = rng::stream(5, 0, 0);
        let pairs: Vec<_> = (0..3)
            .map(|_| {
                let a = Array2::from_shape_vec((2, 2), rng::normal_vec(&mut r, 4)).unwrap();
                let b = Array2::from_shape_vec((2, 2), rng::normal_vec(&mut r, 4)).unwrap();
                (a, b)
            })
            .collect();
        let times = [0.1, 0.5, 0.9];
        let field = |x: &Array2<f64>, t: f64| Ok(x.mapv(|e| e.sin() * t + 0.5));
        let mut expect = 0.0;
        for ((a, b), &t) in pairs.iter().zip(&times) {
            let mut s = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    let xt = (1.0 - t) * a[[i, j]] + t * b[[i, j]];
                    let v = xt.sin() * t + 0.5;
                    s += (v - (b[[i, j]] - a[[i, j]])).powi(2);
                }
            }
            expect += s / 4.0;
        }
        expect /= 3.0;
        let got = cfm_loss(&field, &pairs, &times).unwrap();
        assert!((got - expect).abs() < 1e-14, "{got} {expect}");
    }

    #[test]
    fn cfm_var_matches_values() {
        let x0 = array![[0.0, 1.0], [2.0, -1.0]];
        let x1 = array![[1.0, 1.0], [0.0, 3.0]];
        let mut g = Graph::new();
        let v = g.leaf(array![[0.5, 0.0], [-2.0, 4.0]]);
        let l = cfm_loss_var(&mut g, v, &x0, &x1).unwrap();
        let field = |_: &Array2<f64>, _: f64| Ok(array![[0.5, 0.0], [-2.0, 4.0]]);
        let expect = cfm_loss(&field, &[(x0.clone(), x1.clone())], &[0.2]).unwrap();
        assert_eq!(g.scalar(l), expect);
        let w = g.leaf(Array2::zeros((1, 2)));
        assert!(cfm_loss_var(&mut g, w, &x0, &x1).is_err());
    }

    #[test]
    fn single_step_is_one_field_evaluation() {
        let x0 = array![[0.3, -0.2]];
        let field = |x: &Array2<f64>, t: f64| Ok(x.mapv(|e| e * e + t));
        let out = sample_ode(&field, &x0, 1).unwrap();
        assert_eq!(out, &x0 + &x0.mapv(|e| e * e));
        assert!(sample_ode(&field, &x0, 0).is_err());
    }

    #[test]
    fn linear_field_follows_euler_recurrence() {
        let x0 = array![[1.0, -2.0, 0.5]];
        let field = |x: &Array2<f64>, _: f64| Ok(-x);
        for n in [1usize, 2, 5, 50, 1000] {
            let out = sample_ode(&field, &x0, n).unwrap();
            let f = (1.0 - 1.0 / n as f64).powi(n as i32);
            for (o, a) in out.iter().zip(x0.iter()) {
                assert!((o - a * f).abs() < 1e-12, "n={n}");
            }
        }
        let out = sample_ode(&field, &x0, 5000).unwrap();
        assert!((out[[0, 0]] - (-1.0f64).exp()).abs() < 1e-4);
    }

    #[test]
    fn non_finite_state_reports_step() {
        let x0 = array![[1.0]];
        let field = |_: &Array2<f64>, t: f64| Ok(array![[if t >= 0.5 { f64::NAN } else { 1.0 }]]);
        let e = sample_ode(&field, &x0, 4).unwrap_err();
        assert!(e.is_numeric());
        assert!(e.to_string().contains("step 2"), "{e}");
    }

    #[test]
    fn schedule_is_monotone() {
        let s = NoiseAugSchedule::default();
        assert_eq!(s.level(0), 0.0);
        assert_eq!(s.alpha_bar(0), 1.0);
        for k in 1..=s.num_steps {
            assert!(s.level(k) > s.level(k - 1), "step {k}");
        }
        assert!(s.level(150) > 0.999);
        assert!(s.augment(&array![[1.0]], 151, &mut rng::stream(0, 0, 0)).is_err());
        let mid = s.augment(&array![[1.0, 2.0]], 75, &mut rng::stream(0, 0, 0)).unwrap();
        assert_ne!(mid, array![[1.0, 2.0]]);
    }
}
