use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rig::{render_ground_truth, ViewRig};
use super::shapes::{sample_surface, SyntheticObject};
use crate::geometry::PointSet;
use crate::io::{cloud, image};
use crate::render::{Camera, RenderOptions, RenderedImage};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectEntry {
    pub seed: u64,
    /// 0 sphere, 1 box, 2 torus, 3 union.
    pub kind: usize,
    /// Explicit object; when absent it is drawn from `(kind, seed)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<SyntheticObject>,
}

impl ObjectEntry {
    pub fn object(&self) -> SyntheticObject {
        self.object
            .clone()
            .unwrap_or_else(|| SyntheticObject::random(self.kind, self.seed))
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub objects: Vec<ObjectEntry>,
    #[serde(default)]
    pub rig: ViewRig,
    /// Surface cloud size `M`.
    pub surface_points: usize,
    /// Size of the dense supervision cloud for Gaussian centers.
    pub dense_points: usize,
    #[serde(default = "white")]
    pub background: [f64; 3],
}

fn white() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Clone, Debug)]
pub struct ObjectSample {
    pub object: SyntheticObject,
    pub cloud: PointSet,
    pub colors: Vec<[f64; 3]>,
    pub dense: PointSet,
    pub cameras: Vec<Camera>,
    pub images: Vec<RenderedImage>,
}

impl DatasetManifest {
    /// `count` objects cycling through the four shape kinds.
    pub fn toy(count: usize, seed: u64) -> Self {
        Self {
            objects: (0..count)
                .map(|i| ObjectEntry {
                    seed: seed.wrapping_mul(1000).wrapping_add(i as u64),
                    kind: i % 4,
                    object: None,
                })
                .collect(),
            rig: ViewRig::default(),
            surface_points: 256,
            dense_points: 512,
            background: white(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::invalid("dataset has no objects"));
        }
        if self.surface_points == 0 || self.dense_points == 0 {
            return Err(Error::invalid("point counts must be positive"));
        }
        if self.rig.views == 0 || self.rig.width == 0 || self.rig.height == 0 {
            return Err(Error::invalid("rig needs at least one non-empty view"));
        }
        for (i, e) in self.objects.iter().enumerate() {
            if e.kind > 3 {
                return Err(Error::invalid(format!("object {i}: unknown shape kind {}", e.kind)));
            }
        }
        Ok(())
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            background: self.background,
            ..RenderOptions::default()
        }
    }

    pub fn generate(&self, index: usize) -> Result<ObjectSample> {
        let entry = self
            .objects
            .get(index)
            .ok_or_else(|| Error::invalid(format!("object index {index} out of range")))?;
        let object = entry.object();
        let (cloud, colors) = sample_surface(&object, self.surface_points, entry.seed)?;
        let (dense, _) = sample_surface(&object, self.dense_points, entry.seed ^ 0xd3_75e0)?;
        let images = render_ground_truth(&object, &self.rig, &self.render_options())?;
        Ok(ObjectSample {
            object,
            cloud,
            colors,
            dense,
            cameras: self.rig.cameras()?,
            images,
        })
    }

    pub fn generate_all(&self) -> Result<Vec<ObjectSample>> {
        self.validate()?;
        (0..self.objects.len())
            .into_par_iter()
            .map(|i| self.generate(i))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Writes `manifest.json` plus per-object clouds and PNG views under `dir`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.save(dir.join("manifest.json"))?;
        for (i, s) in self.generate_all()?.iter().enumerate() {
            let od = dir.join(format!("object_{i:04}"));
            fs::create_dir_all(&od)?;
            cloud::save_binary(od.join("cloud.bin"), &s.cloud)?;
            fs::write(od.join("cloud.ply"), cloud::write_ply(&s.cloud, Some(&s.colors))?)?;
            cloud::save_binary(od.join("dense.bin"), &s.dense)?;
            for (v, img) in s.images.iter().enumerate() {
                image::save_png(od.join(format!("view_{v:02}.png")), img)?;
            }
        }
        Ok(())
    }
}
