//! Conversion between meshes and normalized per-vertex deformation features.

mod feature;
mod gradient;
mod io;
mod normalize;
mod reconstruct;
mod rotation;

pub use feature::{
    assemble_feature, closest_branch, consistent_axis_angle, decode_feature, decompose_field,
    FeatureFrame, RotScaleField, CHANNELS,
};
pub use gradient::{
    compute_deform_gradients, vertex_normals, DeformGradientField, GradientFit, GradientSolver,
};
pub use io::{
    decode_feature_bytes, encode_feature_bytes, read_feature_dir, read_features, write_feature_dir,
    write_features, FeatureSidecar, FEATURE_MAGIC, FEATURE_VERSION, SIDECAR_NAME,
};
pub use normalize::{
    fit_normalization, Direction, Granularity, NormalizationParams, MIN_RANGE, NORMALIZED_BOUND,
};
pub use reconstruct::{reconstruct_positions, Anchor, PositionSolver, SOLVER_TOLERANCE};
pub use rotation::{exp_rotation, log_rotation, polar_decompose, skew, Mat3, Vec3};

use crate::error::Result;
use crate::mesh::{build_topology, cotangent_weights, CotanWeights, Mesh, Topology};

/// Reconstruction always pins this vertex.
pub const ANCHOR_VERTEX: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecConfig {
    pub fit: GradientFit,
    /// Correction passes after the least-squares position solve.
    pub refine_iterations: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            fit: GradientFit::default(),
            refine_iterations: 60,
        }
    }
}

/// Everything derived from the reference mesh that encoding and decoding share.
#[derive(Debug, Clone)]
pub struct Codec {
    pub reference: Mesh,
    pub topology: Topology,
    pub weights: CotanWeights,
    pub config: CodecConfig,
    solver: GradientSolver,
}

impl Codec {
    pub fn new(reference: Mesh) -> Result<Self> {
        Self::with_config(reference, CodecConfig::default())
    }

    pub fn with_config(reference: Mesh, config: CodecConfig) -> Result<Self> {
        let topology = build_topology(&reference)?;
        let weights = cotangent_weights(&reference, &topology)?;
        let solver = GradientSolver::new(&reference, &weights, &topology, config.fit)?;
        Ok(Codec {
            reference,
            topology,
            weights,
            config,
            solver,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.reference.vertex_count()
    }

    pub fn gradients(&self, mesh: &Mesh) -> Result<DeformGradientField> {
        self.solver
            .solve(&self.reference, mesh, &self.weights, &self.topology)
    }

    /// Consistent rotation/scale split of one frame; `prev` is the previous
    /// frame's result when encoding a sequence.
    pub fn rot_scale(&self, mesh: &Mesh, prev: Option<&RotScaleField>) -> Result<RotScaleField> {
        let field = decompose_field(&self.gradients(mesh)?)?;
        Ok(consistent_axis_angle(&field, &self.topology, prev))
    }

    pub fn encode(
        &self,
        mesh: &Mesh,
        prev: Option<&RotScaleField>,
    ) -> Result<(FeatureFrame, RotScaleField)> {
        let rs = self.rot_scale(mesh, prev)?;
        Ok((assemble_feature(&rs), rs))
    }

    /// Unnormalized features of consecutive frames, seeded frame to frame.
    pub fn encode_sequence(&self, meshes: &[Mesh]) -> Result<Vec<FeatureFrame>> {
        let mut prev: Option<RotScaleField> = None;
        let mut out = Vec::with_capacity(meshes.len());
        for m in meshes {
            let (f, rs) = self.encode(m, prev.as_ref())?;
            out.push(f);
            prev = Some(rs);
        }
        Ok(out)
    }

    pub fn position_solver(&self) -> Result<PositionSolver<'_>> {
        PositionSolver::new(
            &self.reference,
            &self.weights,
            &self.topology,
            ANCHOR_VERTEX,
        )
    }

    /// Positions from an unnormalized feature frame, anchor vertex at `anchor`.
    pub fn decode(&self, frame: &FeatureFrame, anchor: Vec3) -> Result<Mesh> {
        let field = decode_feature(frame)?;
        self.decode_field(&field, anchor)
    }

    pub fn decode_field(&self, field: &DeformGradientField, anchor: Vec3) -> Result<Mesh> {
        let solver = self.position_solver()?;
        solver.solve_consistent(field, anchor, &self.solver, self.config.refine_iterations)
    }

    pub fn decode_sequence(&self, frames: &[FeatureFrame], anchors: &[Vec3]) -> Result<Vec<Mesh>> {
        let solver = self.position_solver()?;
        frames
            .iter()
            .zip(anchors)
            .map(|(f, &a)| {
                solver.solve_consistent(
                    &decode_feature(f)?,
                    a,
                    &self.solver,
                    self.config.refine_iterations,
                )
            })
            .collect()
    }
}
