//! Per-vertex deformation gradients from cotangent-weighted 1-ring fits.

use super::rotation::{Mat3, Vec3};
use crate::error::{Error, Result};
use crate::mesh::{CotanWeights, Mesh, Topology};

#[derive(Debug, Clone, PartialEq)]
pub struct DeformGradientField {
    pub gradients: Vec<Mat3>,
}

impl DeformGradientField {
    pub fn identity(n: usize) -> Self {
        DeformGradientField {
            gradients: vec![Mat3::identity(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.gradients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gradients.is_empty()
    }
}

/// Regularization of the per-vertex fits.
///
/// Surface 1-rings are close to planar, so edge vectors alone leave the
/// normal column of `D` undetermined. The fit therefore also maps the
/// reference ring normal onto the deformed ring normal with weight
/// `normal_weight · tr(A)/3`, plus a Tikhonov pull toward the identity of
/// `tikhonov · tr(A)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientFit {
    pub normal_weight: f64,
    pub tikhonov: f64,
}

impl Default for GradientFit {
    fn default() -> Self {
        GradientFit {
            normal_weight: 1.0,
            tikhonov: 1e-10,
        }
    }
}

/// Area-weighted vertex normals (unit length, zero where undefined).
pub fn vertex_normals(mesh: &Mesh) -> Vec<Vec3> {
    let mut normals = vec![Vec3::zeros(); mesh.vertex_count()];
    for f in &mesh.faces {
        let [a, b, c] = *f;
        let n = (mesh.vertices[b] - mesh.vertices[a]).cross(&(mesh.vertices[c] - mesh.vertices[a]));
        for &v in f {
            normals[v] += n;
        }
    }
    for n in normals.iter_mut() {
        let len = n.norm();
        if len > 0.0 {
            *n /= len;
        }
    }
    normals
}

/// Precomputed reference-side quantities for repeated fits against one reference.
#[derive(Debug, Clone)]
pub struct GradientSolver {
    fit: GradientFit,
    ref_normals: Vec<Vec3>,
    /// Inverse of the regularized reference moment matrix per vertex.
    inv_moment: Vec<Mat3>,
    normal_scale: Vec<f64>,
    tikhonov: Vec<f64>,
}

impl GradientSolver {
    pub fn new(
        reference: &Mesh,
        weights: &CotanWeights,
        topo: &Topology,
        fit: GradientFit,
    ) -> Result<Self> {
        let n = reference.vertex_count();
        if topo.vertex_count() != n || weights.weights.len() != n {
            return Err(Error::TopologyMismatch(
                "reference, topology and weights disagree".into(),
            ));
        }
        let ref_normals = vertex_normals(reference);
        let mut inv_moment = Vec::with_capacity(n);
        let mut normal_scale = Vec::with_capacity(n);
        let mut tikhonov = Vec::with_capacity(n);
        for i in 0..n {
            let mut a = Mat3::zeros();
            for (k, &j) in topo.neighbors[i].iter().enumerate() {
                let e = reference.vertices[i] - reference.vertices[j];
                a += weights.weights[i][k] * e * e.transpose();
            }
            let tr = a.trace();
            let wn = fit.normal_weight * tr / 3.0;
            let nr = ref_normals[i];
            let lambda = fit.tikhonov * tr;
            let m = a + wn * nr * nr.transpose() + Mat3::identity() * lambda;
            let inv = m.try_inverse().ok_or_else(|| Error::Singular {
                vertex: i,
                msg: "1-ring moment matrix is not invertible".into(),
            })?;
            if inv.iter().any(|x| !x.is_finite()) {
                return Err(Error::Singular {
                    vertex: i,
                    msg: "1-ring moment matrix is not invertible".into(),
                });
            }
            inv_moment.push(inv);
            normal_scale.push(wn);
            tikhonov.push(lambda);
        }
        Ok(GradientSolver {
            fit,
            ref_normals,
            inv_moment,
            normal_scale,
            tikhonov,
        })
    }

    pub fn fit(&self) -> GradientFit {
        self.fit
    }

    /// Fits `D_i` for every vertex of `deformed`.
    pub fn solve(
        &self,
        reference: &Mesh,
        deformed: &Mesh,
        weights: &CotanWeights,
        topo: &Topology,
    ) -> Result<DeformGradientField> {
        if !deformed.same_connectivity(reference) {
            return Err(Error::TopologyMismatch(
                "deformed mesh does not share the reference connectivity".into(),
            ));
        }
        let def_normals = vertex_normals(deformed);
        let mut gradients = Vec::with_capacity(reference.vertex_count());
        for i in 0..reference.vertex_count() {
            let mut b = Mat3::identity() * self.tikhonov[i];
            for (k, &j) in topo.neighbors[i].iter().enumerate() {
                let e = reference.vertices[i] - reference.vertices[j];
                let e_def = deformed.vertices[i] - deformed.vertices[j];
                b += weights.weights[i][k] * e_def * e.transpose();
            }
            b += self.normal_scale[i] * def_normals[i] * self.ref_normals[i].transpose();
            let d = b * self.inv_moment[i];
            if d.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "deformation gradient of vertex {i}"
                )));
            }
            gradients.push(d);
        }
        Ok(DeformGradientField { gradients })
    }
}

/// One-shot gradient computation with the default fit.
pub fn compute_deform_gradients(
    reference: &Mesh,
    deformed: &Mesh,
    weights: &CotanWeights,
    topo: &Topology,
) -> Result<DeformGradientField> {
    GradientSolver::new(reference, weights, topo, GradientFit::default())?
        .solve(reference, deformed, weights, topo)
}
