use ndarray::Array2;

/// Bilinear weights for continuous grid coordinates `uv = (row, col)` on an
/// `h × w` grid stored row-major. Coordinates outside the grid clamp to the border.
///
/// Returns up to four `(flat_index, weight)` pairs; weights sum to one.
pub fn bilinear_weights(h: usize, w: usize, uv: [f64; 2]) -> [(usize, f64); 4] {
    let r = uv[0].clamp(0.0, (h - 1) as f64);
    let c = uv[1].clamp(0.0, (w - 1) as f64);
    let r0 = (r.floor() as usize).min(h - 1);
    let c0 = (c.floor() as usize).min(w - 1);
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let fr = r - r0 as f64;
    let fc = c - c0 as f64;
    [
        (r0 * w + c0, (1.0 - fr) * (1.0 - fc)),
        (r0 * w + c1, (1.0 - fr) * fc),
        (r1 * w + c0, fr * (1.0 - fc)),
        (r1 * w + c1, fr * fc),
    ]
}

/// Samples a feature plane stored as `(h·w) × C` at continuous `(row, col)`.
pub fn bilinear_sample(plane: &Array2<f64>, h: usize, w: usize, uv: [f64; 2]) -> Vec<f64> {
    assert_eq!(plane.nrows(), h * w, "plane rows must equal h*w");
    let mut out = vec![0.0; plane.ncols()];
    for (idx, wt) in bilinear_weights(h, w, uv) {
        if wt == 0.0 {
            continue;
        }
        for (o, &v) in out.iter_mut().zip(plane.row(idx).iter()) {
            *o += wt * v;
        }
    }
    out
}
