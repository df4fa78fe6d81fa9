//! Drag editing: move seed points, re-encode them against the original image
//! features, blend latents by mask and regenerate the splats.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::StageExt;
use crate::flow::MappedAnchors;
use crate::geometry::dist2;
use crate::pipeline::{Generation, Pipeline};
use crate::render::RenderedImage;
use crate::vae::DecodedGaussians;
use crate::{Error, Result};

/// A seed whose position changed by less than this counts as unchanged.
pub const UNCHANGED_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DragOperation {
    pub seed_index: usize,
    pub target: [f64; 3],
    /// Seeds within this distance of the dragged seed move along with it,
    /// linearly less the further away they are.
    #[serde(default)]
    pub falloff: f64,
}

/// Per-seed flags; `true` keeps the original latent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EditMask(pub Vec<bool>);

impl EditMask {
    pub fn all(len: usize, keep: bool) -> Self {
        Self(vec![keep; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Moves the dragged seeds to their targets and drags falloff neighbours by
/// `drag · max(0, 1 − dist/r)` per operation, distances taken between original
/// positions. Dragged seeds land exactly on their targets; a later operation
/// on the same seed wins.
pub fn apply_drags(seeds: &[[f64; 3]], ops: &[DragOperation]) -> Result<(Vec<[f64; 3]>, EditMask)> {
    for op in ops {
        if op.seed_index >= seeds.len() {
            return Err(Error::invalid(format!("drag on seed {} of {}", op.seed_index, seeds.len())));
        }
        if op.target.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite drag target {:?}", op.target)));
        }
        if !(op.falloff.is_finite() && op.falloff >= 0.0) {
            return Err(Error::invalid(format!("falloff {} must be finite and non-negative", op.falloff)));
        }
    }
    let mut out = seeds.to_vec();
    for op in ops {
        let src = seeds[op.seed_index];
        let drag = [op.target[0] - src[0], op.target[1] - src[1], op.target[2] - src[2]];
        if op.falloff > 0.0 {
            for (i, p) in seeds.iter().enumerate() {
                if i == op.seed_index {
                    continue;
                }
                let w = (1.0 - dist2(p, &src).sqrt() / op.falloff).max(0.0);
                if w > 0.0 {
                    for k in 0..3 {
                        out[i][k] += w * drag[k];
                    }
                }
            }
        }
    }
    // explicit targets override accumulated falloff
    for op in ops {
        out[op.seed_index] = op.target;
    }
    let mask = EditMask(
        seeds
            .iter()
            .zip(&out)
            .map(|(a, b)| dist2(a, b).sqrt() < UNCHANGED_EPS)
            .collect(),
    );
    Ok((out, mask))
}

/// `mask ⊙ Z + (1 − mask) ⊙ Ẑ`, row by row.
pub fn mask_blend(z: &Array2<f64>, z_hat: &Array2<f64>, mask: &EditMask) -> Result<Array2<f64>> {
    if z.dim() != z_hat.dim() || mask.len() != z.nrows() {
        return Err(Error::shape(format!(
            "blending {:?} with {:?} under a mask of {}",
            z.dim(),
            z_hat.dim(),
            mask.len()
        )));
    }
    let mut out = z_hat.clone();
    for (i, &keep) in mask.0.iter().enumerate() {
        if keep {
            out.row_mut(i).assign(&z.row(i));
        }
    }
    Ok(out)
}

/// One editing session: the generation it started from plus the current edit.
#[derive(Clone, Debug)]
pub struct EditSession {
    pub image: RenderedImage,
    /// Fixed at creation.
    original: Generation,
    pub current_seeds: Vec<[f64; 3]>,
    pub mask: EditMask,
    pub last: DecodedGaussians,
    pub rng_seed: u64,
}

impl EditSession {
    /// Runs the generation pipeline and opens a session on its result.
    pub fn create(p: &Pipeline, image: RenderedImage, rng_seed: u64) -> Result<Self> {
        let original = p.generate(&image, rng_seed)?;
        Ok(Self::from_generation(image, original, rng_seed))
    }

    pub fn from_generation(image: RenderedImage, original: Generation, rng_seed: u64) -> Self {
        let s = original.seeds.len();
        Self {
            image,
            current_seeds: original.seeds.clone(),
            mask: EditMask::all(s, true),
            last: original.decoded.clone(),
            original,
            rng_seed,
        }
    }

    pub fn original(&self) -> &Generation {
        &self.original
    }

    /// Test hook: corrupts the stored feature plane, which editing must never read.
    #[cfg(test)]
    pub(crate) fn poison_feature_plane(&mut self) {
        self.original.maps.plane.fill(f64::NAN);
    }
}

/// Seed latents of dragged seeds, using the features sampled at the original
/// seed positions and positional encodings of the new ones.
pub fn encode_dragged(p: &Pipeline, session: &EditSession, dragged: &[[f64; 3]]) -> Result<Array2<f64>> {
    let o = session.original();
    if dragged.len() != o.seeds.len() {
        return Err(Error::shape(format!("{} dragged seeds for {}", dragged.len(), o.seeds.len())));
    }
    p.vae.encode_values(dragged, dragged, &o.features, &o.maps.tokens)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    #[serde(default)]
    pub ops: Vec<DragOperation>,
    /// Overrides the automatically derived mask.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<EditMask>,
    /// Defaults to the session's seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    #[serde(default)]
    pub views: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditResult {
    pub seeds: Vec<[f64; 3]>,
    pub mask: EditMask,
    pub z_blend: Array2<f64>,
    pub mapped: MappedAnchors,
    pub decoded: DecodedGaussians,
    pub renders: Vec<RenderedImage>,
}

/// drag → encode → blend → map → decode → render.
pub fn edit_pipeline(p: &Pipeline, session: &EditSession, req: &EditRequest, view_count: usize) -> Result<EditResult> {
    let o = session.original();
    let (seeds, auto_mask) = apply_drags(&o.seeds, &req.ops).stage("drag")?;
    let mask = match &req.mask {
        Some(m) if m.len() != seeds.len() => {
            return Err(Error::shape(format!("mask of {} for {} seeds", m.len(), seeds.len()))).stage("drag")
        }
        Some(m) => m.clone(),
        None => auto_mask,
    };
    let z_hat = encode_dragged(p, session, &seeds).stage("encode")?;
    let z_blend = mask_blend(&o.z_seeds, &z_hat, &mask).stage("blend")?;
    let rng_seed = req.rng_seed.unwrap_or(session.rng_seed);
    let (mapped, decoded) = p.map_and_decode(&z_blend, &o.maps.tokens, rng_seed)?;
    let renders = req
        .views
        .iter()
        .map(|&v| {
            let cam = p.view_camera(v, view_count)?;
            crate::render::rasterize(&decoded.primitives, &cam, &p.render_options())
        })
        .collect::<Result<Vec<_>>>()
        .stage("render")?;
    Ok(EditResult {
        seeds,
        mask,
        z_blend,
        mapped,
        decoded,
        renders,
    })
}

impl EditSession {
    /// Runs an edit and makes it the session's current state.
    pub fn apply(&mut self, p: &Pipeline, req: &EditRequest, view_count: usize) -> Result<EditResult> {
        let r = edit_pipeline(p, self, req, view_count)?;
        self.current_seeds = r.seeds.clone();
        self.mask = r.mask.clone();
        self.last = r.decoded.clone();
        Ok(r)
    }
}
