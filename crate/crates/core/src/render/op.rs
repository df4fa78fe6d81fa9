use ndarray::Array2;

use super::camera::Camera;
use super::gaussian::GaussianPrimitive;
use super::raster::{rasterize, rasterize_backward, RenderOptions};
use crate::nn::{CustomOp, Graph, Var};
use crate::{Error, Result};

/// Per-primitive attribute matrices inside a graph: centers P×3, scales P×3,
/// rotations P×4, opacities P×1, colors P×3.
#[derive(Clone, Copy, Debug)]
pub struct SplatVars {
    pub centers: Var,
    pub scales: Var,
    pub rotations: Var,
    pub opacities: Var,
    pub colors: Var,
}

impl SplatVars {
    pub fn primitives(&self, g: &Graph) -> Result<Vec<GaussianPrimitive>> {
        primitives_from(&[
            g.value(self.centers),
            g.value(self.scales),
            g.value(self.rotations),
            g.value(self.opacities),
            g.value(self.colors),
        ])
    }
}

fn primitives_from(m: &[&Array2<f64>]) -> Result<Vec<GaussianPrimitive>> {
    let n = m[0].nrows();
    let widths = [3, 3, 4, 1, 3];
    for (a, &w) in m.iter().zip(&widths) {
        if a.dim() != (n, w) {
            return Err(Error::shape(format!(
                "splat attribute {:?}, expected ({n}, {w})",
                a.dim()
            )));
        }
    }
    Ok((0..n)
        .map(|i| GaussianPrimitive {
            center: [m[0][[i, 0]], m[0][[i, 1]], m[0][[i, 2]]],
            scale: [m[1][[i, 0]], m[1][[i, 1]], m[1][[i, 2]]],
            rotation: [m[2][[i, 0]], m[2][[i, 1]], m[2][[i, 2]], m[2][[i, 3]]],
            opacity: m[3][[i, 0]],
            color: [m[4][[i, 0]], m[4][[i, 1]], m[4][[i, 2]]],
        })
        .collect())
}

struct RasterizeOp {
    cam: Camera,
    opts: RenderOptions,
}

impl CustomOp for RasterizeOp {
    fn name(&self) -> &'static str {
        "rasterize"
    }

    fn backward(&self, inputs: &[&Array2<f64>], _output: &Array2<f64>, grad: &Array2<f64>) -> Vec<Option<Array2<f64>>> {
        let prims = primitives_from(inputs).expect("shapes checked in forward");
        let g = rasterize_backward(&prims, &self.cam, &self.opts, grad).expect("forward succeeded");
        let n = prims.len();
        vec![
            Some(Array2::from_shape_fn((n, 3), |(i, k)| g.center[i][k])),
            Some(Array2::from_shape_fn((n, 3), |(i, k)| g.scale[i][k])),
            Some(Array2::from_shape_fn((n, 4), |(i, k)| g.rotation[i][k])),
            Some(Array2::from_shape_fn((n, 1), |(i, _)| g.opacity[i])),
            Some(Array2::from_shape_fn((n, 3), |(i, k)| g.color[i][k])),
        ]
    }
}

/// Differentiable render; the output is the `(H·W) × 3` color buffer.
pub fn rasterize_var(g: &mut Graph, splats: SplatVars, cam: &Camera, opts: &RenderOptions) -> Result<Var> {
    let prims = splats.primitives(g)?;
    let img = rasterize(&prims, cam, opts)?;
    let inputs = [
        splats.centers,
        splats.scales,
        splats.rotations,
        splats.opacities,
        splats.colors,
    ];
    Ok(g.custom(
        &inputs,
        img.color,
        Box::new(RasterizeOp {
            cam: cam.clone(),
            opts: *opts,
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_inputs;
    use rand::Rng as _;

    #[test]
    fn graph_gradients_match_finite_differences() {
        let mut rng = crate::rng::stream(21, 0, 0);
        let cam = Camera::look_at([0.0, -3.0, 0.5], [0.0; 3], [0.0, 0.0, 1.0], 45.0, 8, 8).unwrap();
        let opts = RenderOptions {
            background: [1.0; 3],
            cutoff: false,
        };
        let n = 3;
        let centers = Array2::from_shape_fn((n, 3), |_| rng.random_range(-0.3..0.3));
        let raw_scales = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let target = Array2::from_shape_fn((64, 3), |_| rng.random::<f64>());
        let build = |c: &Array2<f64>, s: &Array2<f64>| {
            let mut g = Graph::new();
            let cv = g.leaf(c.clone());
            let sv = g.leaf(s.clone());
            let sig = g.sigmoid(sv);
            let scales = g.scale(sig, 0.4);
            let rotations = g.constant(Array2::from_shape_fn((n, 4), |(i, k)| if k == 0 { 1.0 } else { 0.1 * i as f64 }));
            let opacities = g.constant(Array2::from_elem((n, 1), 0.7));
            let colors = g.constant(Array2::from_shape_fn((n, 3), |(i, k)| 0.2 + 0.2 * ((i + k) % 3) as f64));
            let sp = SplatVars {
                centers: cv,
                scales,
                rotations,
                opacities,
                colors,
            };
            let img = rasterize_var(&mut g, sp, &cam, &opts).unwrap();
            let t = g.constant(target.clone());
            let l = g.mse(img, t);
            (g, l, cv, sv)
        };
        let (g, l, cv, sv) = build(&centers, &raw_scales);
        let gr = g.backward(l).unwrap();
        let gc = gr.wrt(cv).unwrap().clone();
        let gs = gr.wrt(sv).unwrap().clone();
        let e1 = check_inputs(&centers, |c| { let (g, l, ..) = build(c, &raw_scales); g.scalar(l) }, &gc, 1e-6);
        let e2 = check_inputs(&raw_scales, |s| { let (g, l, ..) = build(&centers, s); g.scalar(l) }, &gs, 1e-6);
        assert!(e1 < 1e-4 && e2 < 1e-4, "{e1} {e2}");
    }
}
