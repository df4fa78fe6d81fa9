//! Flow training pairs produced once by the frozen VAE.

use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde_json::json;

use crate::data::FeatureMaps;
use crate::geometry::{cluster_partition, farthest_point_sampling, ClusterAssignment};
use crate::io::container::{Container, NamedTensor};
use crate::render::Camera;
use crate::vae::{points_array, rows3, AnchorVae, PreparedObject};
use crate::{Error, Result};

const PAIRS_KIND: &str = "flow-pairs";

/// One object's flow endpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct PairRecord {
    /// Surface cloud `X_M`.
    pub cloud: Vec<[f64; 3]>,
    /// Anchors `X_N` in FPS order.
    pub anchors: Vec<[f64; 3]>,
    /// Seeds as indices into `anchors`.
    pub seed_index: Vec<usize>,
    /// Anchor latent means `Z`, `N × d`.
    pub z: Array2<f64>,
    /// Seed latents `Z_S`, `S × d`.
    pub z_seeds: Array2<f64>,
    /// Seed owning each anchor.
    pub owner: Vec<usize>,
    /// Image tokens of the input view.
    pub tokens: Array2<f64>,
}

impl PairRecord {
    pub fn seeds(&self) -> Vec<[f64; 3]> {
        self.seed_index.iter().map(|&i| self.anchors[i]).collect()
    }

    pub fn assignment(&self) -> Result<ClusterAssignment> {
        ClusterAssignment::from_owner(self.seed_index.len(), self.owner.clone())
    }
}

/// Encodes seeds through the frozen VAE encoder with `anchors = cloud = X_S`.
///
/// Returns `Z_S` and the per-seed image features it was encoded with.
pub fn dimension_align(vae: &AnchorVae, seeds: &[[f64; 3]], maps: &FeatureMaps, cam: &Camera) -> Result<(Array2<f64>, Array2<f64>)> {
    let features = maps.sample(seeds, cam);
    let z = vae.encode_values(seeds, seeds, &features, &maps.tokens)?;
    Ok((z, features))
}

/// Builds the record for one prepared object.
pub fn build_pair(vae: &AnchorVae, obj: &PreparedObject, seeds: usize) -> Result<PairRecord> {
    if seeds == 0 || seeds > obj.anchors.len() {
        return Err(Error::invalid(format!("{seeds} seeds for {} anchors", obj.anchors.len())));
    }
    let (img, cam) = obj.input();
    let maps = vae.feature_maps(img)?;
    let feats = maps.sample(&obj.anchors, cam);
    let z = vae.encode_values(&obj.anchors, &obj.cloud, &feats, &maps.tokens)?;
    let seed_index = farthest_point_sampling(&obj.anchors, seeds, 0)?;
    let seed_pts: Vec<[f64; 3]> = seed_index.iter().map(|&i| obj.anchors[i]).collect();
    let (z_seeds, _) = dimension_align(vae, &seed_pts, &maps, cam)?;
    let owner = cluster_partition(&seed_pts, &obj.anchors)?.owner;
    Ok(PairRecord {
        cloud: obj.cloud.clone(),
        anchors: obj.anchors.clone(),
        seed_index,
        z,
        z_seeds,
        owner,
        tokens: maps.tokens,
    })
}

pub fn build_pairs(vae: &AnchorVae, objects: &[PreparedObject], seeds: usize) -> Result<Vec<PairRecord>> {
    objects.par_iter().map(|o| build_pair(vae, o, seeds)).collect()
}

fn indices_tensor(name: String, v: &[usize]) -> NamedTensor {
    let u: Vec<u32> = v.iter().map(|&i| i as u32).collect();
    NamedTensor::from_u32(name, vec![u.len()], &u)
}

fn indices(c: &Container, name: &str) -> Result<Vec<usize>> {
    Ok(c.require(name)?.to_u32()?.into_iter().map(|i| i as usize).collect())
}

/// Saves records into the tensor container.
pub fn save_pairs(path: impl AsRef<Path>, records: &[PairRecord]) -> Result<()> {
    let mut c = Container::new(json!({ "kind": PAIRS_KIND, "count": records.len() }));
    for (i, r) in records.iter().enumerate() {
        c.tensors.push(NamedTensor::from_array2(format!("{i}.cloud"), &points_array(&r.cloud)));
        c.tensors.push(NamedTensor::from_array2(format!("{i}.anchors"), &points_array(&r.anchors)));
        c.tensors.push(indices_tensor(format!("{i}.seed_index"), &r.seed_index));
        c.tensors.push(NamedTensor::from_array2(format!("{i}.z"), &r.z));
        c.tensors.push(NamedTensor::from_array2(format!("{i}.z_seeds"), &r.z_seeds));
        c.tensors.push(indices_tensor(format!("{i}.owner"), &r.owner));
        c.tensors.push(NamedTensor::from_array2(format!("{i}.tokens"), &r.tokens));
    }
    c.save(path)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    let c = Container::load(path)?;
    if c.header["kind"] != PAIRS_KIND {
        return Err(Error::Format(format!("not a pair cache: {}", c.header["kind"])));
    }
    let n = c.header["count"]
        .as_u64()
        .ok_or_else(|| Error::Format("pair cache lacks a count".into()))? as usize;
    (0..n)
        .map(|i| {
            let rec = PairRecord {
                cloud: rows3(&c.require(&format!("{i}.cloud"))?.to_array2()?),
                anchors: rows3(&c.require(&format!("{i}.anchors"))?.to_array2()?),
                seed_index: indices(&c, &format!("{i}.seed_index"))?,
                z: c.require(&format!("{i}.z"))?.to_array2()?,
                z_seeds: c.require(&format!("{i}.z_seeds"))?.to_array2()?,
                owner: indices(&c, &format!("{i}.owner"))?,
                tokens: c.require(&format!("{i}.tokens"))?.to_array2()?,
            };
            rec.assignment()?;
            Ok(rec)
        })
        .collect()
}
