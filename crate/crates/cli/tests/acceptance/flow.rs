//! Rectified-flow sanity and the token-alignment ablation.

use anyhow::ensure;
use seedsplat::flow::{sample_ode, train_gaussian_flow, GaussianFlowSetup};
use seedsplat::rng;

use super::shared::{ablation_run, normal_mat, ABLATION_SEEDS, FLOW_STEPS};
use super::Outcome;

const MEAN_TOL: f64 = 0.05;
const VAR_TOL: f64 = 0.10;

pub fn sanity() -> Outcome {
    let setup = GaussianFlowSetup::default();
    let rep = train_gaussian_flow(&setup)?;
    ensure!(
        rep.mean_rel_err < MEAN_TOL && rep.var_rel_err < VAR_TOL,
        "mean {:?} (rel err {:.3}), variance {:?} (rel err {:.3})",
        rep.mean,
        rep.mean_rel_err,
        rep.variance,
        rep.var_rel_err
    );
    let mut r = rng::stream(3, 0, 0);
    let x0 = normal_mat(&mut r, 7, 3);
    let c = normal_mat(&mut r, 7, 3);
    let field = |_: &ndarray::Array2<f64>, _: f64| Ok(c.clone());
    let exact = &x0 + &c;
    for steps in [1, 10, 50] {
        let out = sample_ode(&field, &x0, steps)?;
        ensure!(out == exact, "constant field with {steps} steps is not exact");
    }
    Ok(format!(
        "{} samples: mean rel err {:.4} < {MEAN_TOL}, variance rel err {:.4} < {VAR_TOL}; constant field exact for 1/10/50 steps",
        setup.samples, rep.mean_rel_err, rep.var_rel_err
    ))
}

pub fn ablation() -> Outcome {
    let run = ablation_run();
    let wins = run.losses.iter().filter(|(c, s)| c < s).count();
    let table: Vec<String> = ABLATION_SEEDS
        .iter()
        .zip(&run.losses)
        .map(|(seed, (c, s))| format!("seed {seed}: {c:.4} vs {s:.4}"))
        .collect();
    ensure!(
        wins == ABLATION_SEEDS.len(),
        "cluster alignment lower in {wins}/{} seeds ({})",
        ABLATION_SEEDS.len(),
        table.join(", ")
    );
    Ok(format!(
        "cluster vs shuffled CFM after {FLOW_STEPS} steps, {wins}/{} seeds lower ({})",
        ABLATION_SEEDS.len(),
        table.join(", ")
    ))
}
