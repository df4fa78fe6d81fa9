use std::ops::Deref;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A finite set of 3D points.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    points: Vec<[f64; 3]>,
}

impl PointSet {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub fn from_array(a: &Array2<f64>) -> Result<Self> {
        if a.ncols() != 3 {
            return Err(Error::shape(format!("expected P×3 points, got {:?}", a.dim())));
        }
        Self::new(a.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect())
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.points.len(), 3), |(i, j)| self.points[i][j])
    }

    pub fn select(&self, idx: &[usize]) -> PointSet {
        PointSet {
            points: idx.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn into_inner(self) -> Vec<[f64; 3]> {
        self.points
    }
}

impl Deref for PointSet {
    type Target = [[f64; 3]];

    fn deref(&self) -> &Self::Target {
        &self.points
    }
}

pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Length of the axis-aligned bounding box diagonal.
pub fn bbox_diagonal(points: &[[f64; 3]]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt()
}
