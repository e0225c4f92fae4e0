//! Conditional generation: continue a sequence from a few given meshes.

use rand::Rng;

use crate::codec::{Direction, FeatureFrame, ANCHOR_VERTEX};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec3};
use crate::train::TrainedModel;

impl TrainedModel {
    /// Normalized features of consecutive meshes.
    pub fn encode_meshes(&self, meshes: &[Mesh]) -> Result<Vec<FeatureFrame>> {
        for m in meshes {
            if !m.same_connectivity(&self.codec.reference) {
                return Err(Error::TopologyMismatch(
                    "mesh does not share the model's connectivity".into(),
                ));
            }
        }
        self.codec
            .encode_sequence(meshes)?
            .iter()
            .map(|f| self.normalization.apply(f, Direction::Forward))
            .collect()
    }

    /// Meshes from normalized features, every frame anchored at `anchor`.
    pub fn decode_frames(&self, frames: &[FeatureFrame], anchor: Vec3) -> Result<Vec<Mesh>> {
        let raw = frames
            .iter()
            .map(|f| self.normalization.apply(f, Direction::Inverse))
            .collect::<Result<Vec<_>>>()?;
        self.codec.decode_sequence(&raw, &vec![anchor; raw.len()])
    }

    /// Default forward initial state from the training configuration.
    pub fn default_state(&self) -> crate::net::ChainState {
        self.model.initial_state(self.meta.config.init_state)
    }
}

/// Feeds `initial` (u ≥ 1 meshes) to the network and returns the next `n`
/// meshes. Features are translation-free, so every output is placed with
/// its anchor vertex where the last initial mesh has it.
pub fn generate_conditional(
    model: &TrainedModel,
    initial: &[Mesh],
    n: usize,
    sample: bool,
    rng: &mut impl Rng,
) -> Result<Vec<Mesh>> {
    let last = initial.last().ok_or_else(|| {
        Error::InvalidArgument("generation needs at least one initial mesh".into())
    })?;
    let feats = model.encode_meshes(initial)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let frames = model
        .model
        .rollout(&feats, n, &model.default_state(), sample, rng)?;
    model.decode_frames(&frames, last.vertices[ANCHOR_VERTEX])
}
