//! Rotation/scale split of deformation gradients and the 9-D per-vertex feature.
//!
//! Feature layout per vertex: `[ωθ_x, ωθ_y, ωθ_z, s11, s12, s13, s22, s23, s33]`,
//! the scaled rotation axis followed by the upper triangle of the symmetric
//! stretch.

use std::collections::VecDeque;
use std::f64::consts::PI;

use super::gradient::DeformGradientField;
use super::rotation::{exp_rotation, log_rotation, polar_decompose, Mat3, Vec3};
use crate::error::{Error, Result};
use crate::mesh::Topology;

pub const CHANNELS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct RotScaleField {
    pub rotations: Vec<Mat3>,
    pub scales: Vec<Mat3>,
    pub axes: Vec<Vec3>,
    pub angles: Vec<f64>,
    /// BFS parent used during the consistent assignment; `None` for seeds.
    pub parents: Vec<Option<usize>>,
}

impl RotScaleField {
    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    /// `ω_i θ_i`.
    pub fn rotation_vector(&self, i: usize) -> Vec3 {
        self.axes[i] * self.angles[i]
    }
}

/// Polar-decomposes every gradient; axes/angles are the principal logarithms.
pub fn decompose_field(field: &DeformGradientField) -> Result<RotScaleField> {
    let n = field.len();
    let mut out = RotScaleField {
        rotations: Vec::with_capacity(n),
        scales: Vec::with_capacity(n),
        axes: Vec::with_capacity(n),
        angles: Vec::with_capacity(n),
        parents: vec![None; n],
    };
    for (i, d) in field.gradients.iter().enumerate() {
        let (r, s) = polar_decompose(d).map_err(|e| match e {
            Error::Degenerate(msg) => Error::Degenerate(format!("vertex {i}: {msg}")),
            other => other,
        })?;
        let (axis, angle) = log_rotation(&r);
        out.rotations.push(r);
        out.scales.push(s);
        out.axes.push(axis);
        out.angles.push(angle);
    }
    Ok(out)
}

/// The representative `ω(θ + 2πk)` of a rotation closest to `target`.
///
/// Returned as a unit axis and a non-negative angle. An identity rotation
/// borrows the target's direction so that multiples of 2π remain reachable.
pub fn closest_branch(axis: Vec3, angle: f64, target: &Vec3) -> (Vec3, f64) {
    let axis = if angle == 0.0 {
        let len = target.norm();
        if len > 0.0 {
            target / len
        } else {
            axis
        }
    } else {
        axis
    };
    let along = axis.dot(target);
    let k0 = ((along - angle) / (2.0 * PI)).round();
    let mut best = (f64::INFINITY, 0.0);
    for k in [k0 - 1.0, k0, k0 + 1.0] {
        let t = angle + 2.0 * PI * k;
        let d = (axis * t - target).norm_squared();
        if d < best.0 {
            best = (d, t);
        }
    }
    let t = best.1;
    if t < 0.0 {
        (-axis, -t)
    } else {
        (axis, t)
    }
}

/// Chooses axis sign and angle branch per vertex so that neighbors agree.
///
/// Breadth-first from vertex 0 (and from the lowest unvisited vertex of any
/// further component); each newly reached vertex takes the branch closest to
/// the neighbor it was reached from. With `prev`, seeds take the branch
/// closest to their previous-frame value. Must run in frame order when
/// temporal seeding is used.
pub fn consistent_axis_angle(
    field: &RotScaleField,
    topo: &Topology,
    prev: Option<&RotScaleField>,
) -> RotScaleField {
    let n = field.len();
    let mut out = field.clone();
    let mut assigned = vec![false; n];
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if assigned[seed] {
            continue;
        }
        let (axis, angle) = match prev {
            Some(p) if p.len() == n => closest_branch(
                field.axes[seed],
                field.angles[seed],
                &p.rotation_vector(seed),
            ),
            _ => (field.axes[seed], field.angles[seed]),
        };
        out.axes[seed] = axis;
        out.angles[seed] = angle;
        out.parents[seed] = None;
        assigned[seed] = true;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            let target = out.rotation_vector(i);
            for &j in &topo.neighbors[i] {
                if assigned[j] {
                    continue;
                }
                let (axis, angle) = closest_branch(field.axes[j], field.angles[j], &target);
                out.axes[j] = axis;
                out.angles[j] = angle;
                out.parents[j] = Some(i);
                assigned[j] = true;
                queue.push_back(j);
            }
        }
    }
    out
}

/// Per-vertex 9-D features, row-major `vertex × channel`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub data: Vec<f64>,
    pub normalized: bool,
}

impl FeatureFrame {
    pub fn zeros(vertices: usize, normalized: bool) -> Self {
        FeatureFrame {
            data: vec![0.0; vertices * CHANNELS],
            normalized,
        }
    }

    pub fn from_data(data: Vec<f64>, normalized: bool) -> Result<Self> {
        if data.len() % CHANNELS != 0 {
            return Err(Error::Shape(format!(
                "feature length {} is not a multiple of {CHANNELS}",
                data.len()
            )));
        }
        Ok(FeatureFrame { data, normalized })
    }

    pub fn vertex_count(&self) -> usize {
        self.data.len() / CHANNELS
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.data[i * CHANNELS..(i + 1) * CHANNELS]
    }
}

pub fn assemble_feature(rs: &RotScaleField) -> FeatureFrame {
    let mut data = Vec::with_capacity(rs.len() * CHANNELS);
    for i in 0..rs.len() {
        let v = rs.rotation_vector(i);
        let s = &rs.scales[i];
        data.extend_from_slice(&[
            v.x,
            v.y,
            v.z,
            s[(0, 0)],
            s[(0, 1)],
            s[(0, 2)],
            s[(1, 1)],
            s[(1, 2)],
            s[(2, 2)],
        ]);
    }
    FeatureFrame {
        data,
        normalized: false,
    }
}

/// Rebuilds `D_i = exp([ω_i θ_i]×) S_i` from unnormalized features.
pub fn decode_feature(frame: &FeatureFrame) -> Result<DeformGradientField> {
    if frame.normalized {
        return Err(Error::InvalidArgument(
            "decode_feature expects unnormalized features".into(),
        ));
    }
    let mut gradients = Vec::with_capacity(frame.vertex_count());
    for i in 0..frame.vertex_count() {
        let q = frame.vertex(i);
        if q.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("feature of vertex {i}")));
        }
        let r = exp_rotation(&Vec3::new(q[0], q[1], q[2]));
        let s = Mat3::new(q[3], q[4], q[5], q[4], q[6], q[7], q[5], q[7], q[8]);
        gradients.push(r * s);
    }
    Ok(DeformGradientField { gradients })
}
