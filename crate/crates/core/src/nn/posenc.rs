use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionalEncodingConfig {
    pub num_frequencies: usize,
    pub include_input: bool,
}

impl Default for PositionalEncodingConfig {
    fn default() -> Self {
        Self {
            num_frequencies: 6,
            include_input: true,
        }
    }
}

impl PositionalEncodingConfig {
    pub fn output_dim(&self) -> usize {
        3 * (2 * self.num_frequencies + usize::from(self.include_input))
    }
}

/// Frequency encoding of 3-D points.
///
/// Row layout: `[x y z]` (optional), then for each frequency `f` the block
/// `[sin(2^f π x) sin(2^f π y) sin(2^f π z) cos(2^f π x) cos(2^f π y) cos(2^f π z)]`.
pub fn pos_encode(points: &[[f64; 3]], cfg: &PositionalEncodingConfig) -> Result<Array2<f64>> {
    let dim = cfg.output_dim();
    let mut out = Array2::zeros((points.len(), dim));
    for (i, p) in points.iter().enumerate() {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "positional encoding input row {i} is {p:?}"
            )));
        }
        let mut row = out.row_mut(i);
        let mut c = 0;
        if cfg.include_input {
            for &v in p {
                row[c] = v;
                c += 1;
            }
        }
        for f in 0..cfg.num_frequencies {
            let w = (1u64 << f) as f64 * std::f64::consts::PI;
            for &v in p {
                row[c] = (w * v).sin();
                c += 1;
            }
            for &v in p {
                row[c] = (w * v).cos();
                c += 1;
            }
        }
    }
    Ok(out)
}
