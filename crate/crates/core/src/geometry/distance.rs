use ndarray::Array2;

use super::points::dist2;
use crate::{Error, Result};

/// Largest set size solved exactly; bigger sets use entropic transport.
pub const EXACT_EMD_CAP: usize = 256;

/// Index and squared distance of the nearest `b` point for every `a` point.
/// Ties go to the lower index.
pub fn nearest_neighbors(a: &[[f64; 3]], b: &[[f64; 3]]) -> Vec<(usize, f64)> {
    a.iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, q) in b.iter().enumerate() {
                let d = dist2(p, q);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

/// Symmetric Chamfer distance: mean squared nearest distance in each direction, summed.
pub fn chamfer_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance of an empty set"));
    }
    let ab: f64 = nearest_neighbors(a, b).iter().map(|x| x.1).sum::<f64>() / a.len() as f64;
    let ba: f64 = nearest_neighbors(b, a).iter().map(|x| x.1).sum::<f64>() / b.len() as f64;
    Ok(ab + ba)
}

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns `assign` with row `i` matched to column `assign[i]`. Potentials-based
/// shortest augmenting path, O(n³).
pub fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "hungarian needs a square matrix");
    // 1-based arrays with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// Dot product with four independent accumulators.
fn dot4(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in xc.zip(yc) {
        for k in 0..4 {
            acc[k] += a[k] * b[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Entropic optimal transport with uniform marginals `1/n`.
///
/// Stops early once every row marginal is within `1e-6` relative error.
pub fn sinkhorn_plan(cost: &Array2<f64>, iters: usize) -> Array2<f64> {
    let n = cost.nrows();
    let max_c = cost.iter().cloned().fold(0.0, f64::max);
    let eps = (max_c / 200.0).max(1e-12);
    let k = cost.mapv(|c| (-c / eps).exp());
    let kt = k.t().as_standard_layout().into_owned();
    let target = 1.0 / n as f64;
    let mut a = vec![1.0; n];
    let mut b = vec![1.0; n];
    let dot = |row: ndarray::ArrayView1<f64>, v: &[f64]| -> f64 { dot4(row.as_slice().unwrap(), v).max(1e-300) };
    for it in 0..iters {
        let mut worst = 0.0f64;
        for (ai, row) in a.iter_mut().zip(k.rows()) {
            let s = dot(row, &b);
            worst = worst.max((*ai * s / target - 1.0).abs());
            *ai = target / s;
        }
        if it > 0 && worst < 1e-6 {
            break;
        }
        for (bj, row) in b.iter_mut().zip(kt.rows()) {
            *bj = target / dot(row, &a);
        }
    }
    Array2::from_shape_fn((n, n), |(i, j)| a[i] * k[[i, j]] * b[j])
}

/// Transport plan between equal-size sets: sparse `(i, j, mass)` entries with
/// total mass 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub entries: Vec<(usize, usize, f64)>,
    pub exact: bool,
}

impl TransportPlan {
    pub fn cost(&self, a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, w)| w * dist2(&a[i], &b[j]))
            .sum()
    }
}

fn cost_matrix(a: &[[f64; 3]], b: &[[f64; 3]]) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| dist2(&a[i], &b[j]))
}

/// Optimal matching below `cap`, Sinkhorn above it.
pub fn transport_plan(a: &[[f64; 3]], b: &[[f64; 3]], cap: usize) -> Result<TransportPlan> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "EMD needs equal-size sets, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("EMD of empty sets"));
    }
    let n = a.len();
    let c = cost_matrix(a, b);
    if n <= cap {
        let w = 1.0 / n as f64;
        let assign = hungarian(&c);
        Ok(TransportPlan {
            entries: assign.iter().enumerate().map(|(i, &j)| (i, j, w)).collect(),
            exact: true,
        })
    } else {
        let plan = sinkhorn_plan(&c, 100);
        // drop negligible entries
        let floor = 1e-8 / n as f64;
        let kept: Vec<(usize, usize, f64)> = plan
            .indexed_iter()
            .filter(|(_, &w)| w > floor)
            .map(|((i, j), &w)| (i, j, w))
            .collect();
        let total: f64 = kept.iter().map(|e| e.2).sum();
        let entries = kept.into_iter().map(|(i, j, w)| (i, j, w / total)).collect();
        Ok(TransportPlan {
            entries,
            exact: false,
        })
    }
}

/// Mean squared distance under the optimal perfect matching.
pub fn earth_movers_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    Ok(transport_plan(a, b, EXACT_EMD_CAP)?.cost(a, b))
}
