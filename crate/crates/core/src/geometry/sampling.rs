use super::points::dist2;
use crate::{Error, Result};

/// Greedy max-min subset selection starting from `start`.
///
/// Each pick maximises the squared distance to the already selected set;
/// ties go to the lowest index.
pub fn farthest_point_sampling(points: &[[f64; 3]], count: usize, start: usize) -> Result<Vec<usize>> {
    if count == 0 || count > points.len() {
        return Err(Error::invalid(format!(
            "cannot sample {count} of {} points",
            points.len()
        )));
    }
    if start >= points.len() {
        return Err(Error::invalid(format!("start index {start} out of range")));
    }
    let mut selected = Vec::with_capacity(count);
    let mut min_d = vec![f64::INFINITY; points.len()];
    let mut taken = vec![false; points.len()];
    let mut current = start;
    selected.push(current);
    taken[current] = true;
    while selected.len() < count {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p, &points[current]);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !taken[i] && min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
        taken[current] = true;
        selected.push(current);
    }
    Ok(selected)
}

/// `k` nearest reference points per query, ascending squared distance, ties by index.
pub fn knn_with_distances(
    query: &[[f64; 3]],
    reference: &[[f64; 3]],
    k: usize,
) -> Result<Vec<Vec<(usize, f64)>>> {
    if k > reference.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds reference size {}",
            reference.len()
        )));
    }
    Ok(query
        .iter()
        .map(|q| {
            let mut d: Vec<(usize, f64)> = reference
                .iter()
                .enumerate()
                .map(|(j, r)| (j, dist2(q, r)))
                .collect();
            // stable sort keeps lower indices first among equal distances
            d.sort_by(|a, b| a.1.total_cmp(&b.1));
            d.truncate(k);
            d
        })
        .collect())
}

pub fn knn(query: &[[f64; 3]], reference: &[[f64; 3]], k: usize) -> Result<Vec<Vec<usize>>> {
    Ok(knn_with_distances(query, reference, k)?
        .into_iter()
        .map(|v| v.into_iter().map(|(j, _)| j).collect())
        .collect())
}
