//! Geometry routines against exhaustive brute-force formulations.

use anyhow::{bail, ensure};
use ndarray::Array2;
use rand::Rng as _;
use seedsplat::geometry::{chamfer_distance, cluster_partition, earth_movers_distance, farthest_point_sampling, hungarian, knn};
use seedsplat::rng::{self, Rng};

use super::Outcome;

const INSTANCES: usize = 120;
const MAX_N: usize = 64;

/// Random cloud; every other instance snaps to a coarse grid so ties occur.
fn cloud(r: &mut Rng, n: usize, snap: bool) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            std::array::from_fn(|_| {
                let v: f64 = r.random_range(-1.0..1.0);
                if snap { (v * 2.0).round() / 2.0 } else { v }
            })
        })
        .collect()
}

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

fn fps_oracle(p: &[[f64; 3]], count: usize, start: usize) -> Vec<usize> {
    let mut sel = vec![start];
    while sel.len() < count {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..p.len() {
            if sel.contains(&i) {
                continue;
            }
            let m = sel.iter().map(|&s| d2(&p[i], &p[s])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((i, m));
            }
        }
        sel.push(best.unwrap().0);
    }
    sel
}

fn knn_oracle(q: &[[f64; 3]], r: &[[f64; 3]], k: usize) -> Vec<Vec<usize>> {
    q.iter()
        .map(|x| {
            let mut idx: Vec<usize> = (0..r.len()).collect();
            idx.sort_by(|&a, &b| d2(x, &r[a]).partial_cmp(&d2(x, &r[b])).unwrap().then(a.cmp(&b)));
            idx.truncate(k);
            idx
        })
        .collect()
}

fn chamfer_oracle(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let one = |x: &[[f64; 3]], y: &[[f64; 3]]| {
        x.iter().map(|p| y.iter().map(|q| d2(p, q)).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64
    };
    one(a, b) + one(b, a)
}

fn owner_oracle(seeds: &[[f64; 3]], anchors: &[[f64; 3]]) -> Vec<usize> {
    anchors
        .iter()
        .map(|a| (0..seeds.len()).min_by(|&i, &j| d2(a, &seeds[i]).partial_cmp(&d2(a, &seeds[j])).unwrap().then(i.cmp(&j))).unwrap())
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

pub fn run() -> Outcome {
    let mut r = rng::stream(42, 0, 0);
    for i in 0..INSTANCES {
        let snap = i % 2 == 1;
        let n = r.random_range(1..=MAX_N);
        let p = cloud(&mut r, n, snap);

        let count = r.random_range(1..=n);
        let start = r.random_range(0..n);
        ensure!(farthest_point_sampling(&p, count, start)? == fps_oracle(&p, count, start), "FPS instance {i} (n={n})");

        let m = r.random_range(1..=MAX_N);
        let q = cloud(&mut r, m, snap);
        let k = r.random_range(1..=n);
        ensure!(knn(&q, &p, k)? == knn_oracle(&q, &p, k), "KNN instance {i} (n={n}, k={k})");

        let (cd, oracle) = (chamfer_distance(&p, &q)?, chamfer_oracle(&p, &q));
        ensure!(close(cd, oracle), "Chamfer instance {i}: {cd} vs {oracle}");

        let s = r.random_range(1..=16.min(n));
        let seeds = cloud(&mut r, s, snap);
        ensure!(cluster_partition(&seeds, &p)?.owner == owner_oracle(&seeds, &p), "cluster partition instance {i}");
    }
    let mut emd_cases = 0;
    for n in 1..=6 {
        let perms = permutations(n);
        for i in 0..INSTANCES / 6 + 1 {
            let a = cloud(&mut r, n, i % 3 == 0);
            let b = cloud(&mut r, n, i % 3 == 0);
            let best = perms
                .iter()
                .map(|p| (0..n).map(|k| d2(&a[k], &b[p[k]])).sum::<f64>() / n as f64)
                .fold(f64::INFINITY, f64::min);
            let emd = earth_movers_distance(&a, &b)?;
            ensure!(close(emd, best), "EMD n={n} instance {i}: {emd} vs {best}");
            let cost = Array2::from_shape_fn((n, n), |_| r.random_range(-2.0f64..2.0));
            let assign = hungarian(&cost);
            let got: f64 = (0..n).map(|k| cost[[k, assign[k]]]).sum();
            let opt = perms.iter().map(|p| (0..n).map(|k| cost[[k, p[k]]]).sum::<f64>()).fold(f64::INFINITY, f64::min);
            let mut seen = assign.clone();
            seen.sort_unstable();
            if seen != (0..n).collect::<Vec<_>>() {
                bail!("hungarian returned a non-permutation {assign:?}");
            }
            ensure!(close(got, opt), "assignment n={n} instance {i}: {got} vs {opt}");
            emd_cases += 1;
        }
    }
    Ok(format!(
        "FPS/KNN/Chamfer/cluster {INSTANCES} instances each (n ≤ {MAX_N}); EMD and assignment {emd_cases} instances vs permutation enumeration (n ≤ 6)"
    ))
}
