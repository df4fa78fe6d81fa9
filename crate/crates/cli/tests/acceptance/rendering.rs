//! Rasterizer invariants and the hand-computed examples.

use anyhow::ensure;
use rand::seq::SliceRandom;
use rand::Rng as _;
use seedsplat::render::{quat_mul, quat_to_mat, rasterize, Camera, GaussianPrimitive, RenderOptions, RenderedImage};
use seedsplat::rng;

use super::grads::random_scene;
use super::Outcome;

const SCENES: usize = 24;
const RIGID_TOL: f64 = 1e-6;

fn front_camera(size: usize) -> Camera {
    let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    Camera::new(id, [0.0; 3], size as f64, size as f64, size, size).unwrap()
}

fn examples() -> anyhow::Result<()> {
    let bg = RenderOptions {
        background: [0.2, 0.4, 0.6],
        cutoff: true,
    };
    ensure!(rasterize(&[], &front_camera(8), &bg)? == RenderedImage::filled(8, 8, [0.2, 0.4, 0.6]), "empty scene");

    let p = GaussianPrimitive::isotropic([0.0, 0.0, -2.0], 0.5, 1.0, [0.3, 0.6, 0.9]);
    let img = rasterize(&[p], &front_camera(5), &RenderOptions::default())?;
    ensure!(img.pixel(2, 2) == [0.3, 0.6, 0.9], "opaque primitive center {:?}", img.pixel(2, 2));

    let red = GaussianPrimitive::isotropic([0.0, 0.0, -2.0], 0.5, 0.5, [1.0, 0.0, 0.0]);
    let blue = GaussianPrimitive::isotropic([0.0, 0.0, -3.0], 0.5, 1.0, [0.0, 0.0, 1.0]);
    let black = RenderOptions {
        background: [0.0; 3],
        cutoff: true,
    };
    for scene in [[red, blue], [blue, red]] {
        let px = rasterize(&scene, &front_camera(5), &black)?.pixel(2, 2);
        ensure!(px == [0.5, 0.0, 0.5], "two-layer blend {px:?}");
    }
    Ok(())
}

pub fn run() -> Outcome {
    examples()?;
    let mut r = rng::stream(9, 0, 0);
    let mut worst_rigid = 0.0f64;
    for s in 0..SCENES {
        let n = r.random_range(1..=16);
        let mut scene = random_scene(&mut r, n);
        let eye = [r.random_range(-0.3..0.3), r.random_range(-0.3..0.3), 0.0];
        let cam = Camera::look_at(eye, [0.0, 0.0, -3.0], [0.0, 1.0, 0.0], 50.0, 16, 12)?;
        for cutoff in [true, false] {
            let opts = RenderOptions {
                background: std::array::from_fn(|_| r.random()),
                cutoff,
            };
            let img = rasterize(&scene, &cam, &opts)?;
            ensure!(img.alpha.iter().all(|a| (0.0..=1.0).contains(a)), "scene {s}: accumulated opacity outside [0, 1]");
            ensure!(img.color.iter().all(|c| (0.0..=1.0).contains(c)), "scene {s}: color outside [0, 1]");
            scene.shuffle(&mut r);
            ensure!(rasterize(&scene, &cam, &opts)? == img, "scene {s}: permuted render differs");
        }

        let q = {
            let q: [f64; 4] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            q.map(|x| x / n)
        };
        let rq = quat_to_mat(q);
        let tau: [f64; 3] = std::array::from_fn(|_| r.random_range(-2.0..2.0));
        let apply = |p: [f64; 3]| -> [f64; 3] { std::array::from_fn(|i| tau[i] + (0..3).map(|k| rq[i][k] * p[k]).sum::<f64>()) };
        let moved: Vec<_> = scene
            .iter()
            .map(|p| GaussianPrimitive {
                center: apply(p.center),
                rotation: quat_mul(q, p.rotation),
                ..*p
            })
            .collect();
        // world → camera becomes R Qᵀ with translation t − R Qᵀ τ
        let mut cam2 = cam.clone();
        for i in 0..3 {
            for j in 0..3 {
                cam2.rotation[i][j] = (0..3).map(|k| cam.rotation[i][k] * rq[j][k]).sum();
            }
        }
        for i in 0..3 {
            cam2.translation[i] = cam.translation[i] - (0..3).map(|k| cam2.rotation[i][k] * tau[k]).sum::<f64>();
        }
        let a = rasterize(&scene, &cam, &RenderOptions::default())?;
        let b = rasterize(&moved, &cam2, &RenderOptions::default())?;
        let d = a.color.iter().zip(b.color.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst_rigid = worst_rigid.max(d);
    }
    ensure!(worst_rigid <= RIGID_TOL, "rigid-motion difference {worst_rigid:.2e} > {RIGID_TOL:.0e}");
    Ok(format!(
        "3 examples exact; {SCENES} scenes: opacity in [0, 1], permutation bit-exact, rigid max diff {worst_rigid:.1e}"
    ))
}
