use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::geometry::PointSet;
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Analytic closed surface. Tori lie in a plane normal to z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Empty,
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half_extents: [f64; 3] },
    Torus { center: [f64; 3], major: f64, minor: f64 },
    Union { a: std::boxed::Box<Shape>, b: std::boxed::Box<Shape> },
}

impl Shape {
    pub fn area(&self) -> f64 {
        match self {
            Shape::Empty => 0.0,
            Shape::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Shape::Box { half_extents: h, .. } => 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]),
            Shape::Torus { major, minor, .. } => 4.0 * PI * PI * major * minor,
            Shape::Union { a, b } => a.area() + b.area(),
        }
    }

    /// Strictly inside the solid.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            Shape::Empty => false,
            Shape::Sphere { center, radius } => dist(p, *center) < *radius,
            Shape::Box { center, half_extents } => {
                (0..3).all(|k| (p[k] - center[k]).abs() < half_extents[k])
            }
            Shape::Torus { center, major, minor } => {
                let q = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
                let ring = (q[0] * q[0] + q[1] * q[1]).sqrt() - major;
                ring * ring + q[2] * q[2] < minor * minor
            }
            Shape::Union { a, b } => a.contains(p) || b.contains(p),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Empty => true,
            Shape::Sphere { radius, .. } => *radius > 0.0,
            Shape::Box { half_extents, .. } => half_extents.iter().all(|&h| h > 0.0),
            Shape::Torus { major, minor, .. } => *minor > 0.0 && major > minor,
            Shape::Union { a, b } => {
                a.validate()?;
                b.validate()?;
                true
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("degenerate shape parameters: {self:?}")))
        }
    }

    /// One uniform-area surface sample of a primitive (not a union).
    fn sample_one(&self, rng: &mut Rng) -> [f64; 3] {
        match self {
            Shape::Sphere { center, radius } => loop {
                let v = [rng::normal(rng), rng::normal(rng), rng::normal(rng)];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n > 1e-12 {
                    break [0, 1, 2].map(|k| center[k] + radius * v[k] / n);
                }
            },
            Shape::Box { center, half_extents: h } => {
                let faces = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total = faces.iter().sum::<f64>();
                let mut pick = rng.random_range(0.0..total);
                let mut axis = 2;
                for (k, &a) in faces.iter().enumerate() {
                    if pick < a {
                        axis = k;
                        break;
                    }
                    pick -= a;
                }
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = if k == axis {
                        center[k] + sign * h[k]
                    } else {
                        center[k] + rng.random_range(-h[k]..h[k])
                    };
                }
                p
            }
            Shape::Torus { center, major, minor } => {
                let u = rng.random_range(0.0..2.0 * PI);
                let v = loop {
                    let v = rng.random_range(0.0..2.0 * PI);
                    // area element is proportional to (R + r cos v)
                    if rng.random_range(0.0..major + minor) < major + minor * v.cos() {
                        break v;
                    }
                };
                let ring = major + minor * v.cos();
                [
                    center[0] + ring * u.cos(),
                    center[1] + ring * u.sin(),
                    center[2] + minor * v.sin(),
                ]
            }
            Shape::Empty | Shape::Union { .. } => unreachable!("composite sampled via parts"),
        }
    }

    fn parts(&self) -> Vec<&Shape> {
        match self {
            Shape::Union { a, b } => {
                let mut v = a.parts();
                v.extend(b.parts());
                v
            }
            Shape::Empty => Vec::new(),
            s => vec![s],
        }
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Surface color as a function of position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ColorField {
    Constant { color: [f64; 3] },
    /// `a` where `(p − origin)·axis ≥ 0`, `b` elsewhere.
    Hemispheres { origin: [f64; 3], axis: [f64; 3], a: [f64; 3], b: [f64; 3] },
    /// Linear blend from `a` to `b` along `axis` over `[-1, 1]`.
    Gradient { axis: [f64; 3], a: [f64; 3], b: [f64; 3] },
    /// Alternating bands of `a` and `b` along `axis`.
    Stripes { axis: [f64; 3], frequency: f64, a: [f64; 3], b: [f64; 3] },
}

impl ColorField {
    pub fn eval(&self, p: [f64; 3]) -> [f64; 3] {
        let dot = |x: [f64; 3], y: [f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
        match self {
            ColorField::Constant { color } => *color,
            ColorField::Hemispheres { origin, axis, a, b } => {
                let q = [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]];
                if dot(q, *axis) >= 0.0 {
                    *a
                } else {
                    *b
                }
            }
            ColorField::Gradient { axis, a, b } => {
                let t = (0.5 * (dot(p, *axis) + 1.0)).clamp(0.0, 1.0);
                [0, 1, 2].map(|k| a[k] + t * (b[k] - a[k]))
            }
            ColorField::Stripes { axis, frequency, a, b } => {
                if (dot(p, *axis) * frequency).rem_euclid(2.0) < 1.0 {
                    *a
                } else {
                    *b
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticObject {
    pub shape: Shape,
    pub color: ColorField,
}

fn random_color(rng: &mut Rng) -> [f64; 3] {
    [0.1, 0.1, 0.1].map(|lo: f64| lo + 0.8 * rng.random::<f64>())
}

impl SyntheticObject {
    /// A random object of the given kind index (0 sphere, 1 box, 2 torus, 3 union)
    /// fitting inside `[-0.8, 0.8]³`.
    pub fn random(kind: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, 0x5_4a9e, 0);
        let jitter = |rng: &mut Rng, s: f64| [0, 1, 2].map(|_| rng.random_range(-s..s));
        let shape = match kind % 4 {
            0 => Shape::Sphere {
                center: jitter(&mut rng, 0.05),
                radius: rng.random_range(0.5..0.7),
            },
            1 => Shape::Box {
                center: jitter(&mut rng, 0.05),
                half_extents: [0, 1, 2].map(|_| rng.random_range(0.3..0.6)),
            },
            2 => Shape::Torus {
                center: jitter(&mut rng, 0.05),
                major: rng.random_range(0.45..0.55),
                minor: rng.random_range(0.15..0.22),
            },
            _ => Shape::Union {
                a: std::boxed::Box::new(Shape::Sphere {
                    center: [-0.25, 0.0, -0.1],
                    radius: rng.random_range(0.35..0.45),
                }),
                b: std::boxed::Box::new(Shape::Box {
                    center: [0.3, 0.0, 0.15],
                    half_extents: [0, 1, 2].map(|_| rng.random_range(0.2..0.3)),
                }),
            },
        };
        let (a, b) = (random_color(&mut rng), random_color(&mut rng));
        let color = match rng.random_range(0..3) {
            0 => ColorField::Hemispheres {
                origin: [0.0; 3],
                axis: [1.0, 0.0, 0.0],
                a,
                b,
            },
            1 => ColorField::Gradient {
                axis: [0.0, 0.0, 1.0],
                a,
                b,
            },
            _ => ColorField::Stripes {
                axis: [0.0, 0.0, 1.0],
                frequency: 3.0,
                a,
                b,
            },
        };
        Self { shape, color }
    }
}

/// Uniform-area samples of the object surface with their colors.
///
/// For unions, samples falling strictly inside the other part are rejected so
/// only the outer surface remains.
pub fn sample_surface(obj: &SyntheticObject, count: usize, seed: u64) -> Result<(PointSet, Vec<[f64; 3]>)> {
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    obj.shape.validate()?;
    let parts = obj.shape.parts();
    if parts.is_empty() {
        return Err(Error::invalid("empty shape has no surface"));
    }
    let areas: Vec<f64> = parts.iter().map(|p| p.area()).collect();
    let total: f64 = areas.iter().sum();
    let mut rng = rng::stream(seed, 0x5a_3f1e, 0);
    let mut pts = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while pts.len() < count {
        attempts += 1;
        if attempts > 1000 * count + 10_000 {
            return Err(Error::invalid("surface sampling failed: shape fully enclosed"));
        }
        let mut pick = rng.random_range(0.0..total);
        let mut which = parts.len() - 1;
        for (i, &a) in areas.iter().enumerate() {
            if pick < a {
                which = i;
                break;
            }
            pick -= a;
        }
        let p = parts[which].sample_one(&mut rng);
        let hidden = parts
            .iter()
            .enumerate()
            .any(|(i, s)| i != which && s.contains(p));
        if !hidden {
            pts.push(p);
        }
    }
    let colors = pts.iter().map(|&p| obj.color.eval(p)).collect();
    Ok((PointSet::new(pts)?, colors))
}
