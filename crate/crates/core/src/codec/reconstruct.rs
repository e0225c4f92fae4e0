//! Vertex positions from a deformation gradient field.

use super::gradient::{DeformGradientField, GradientSolver};
use super::rotation::{Mat3, Vec3};
use crate::error::{Error, Result};
use crate::mesh::{CotanWeights, Mesh, Topology};

/// Fixes one vertex to remove the translation null space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub vertex: usize,
    pub position: Vec3,
}

impl Anchor {
    pub fn of(mesh: &Mesh, vertex: usize) -> Self {
        Anchor {
            vertex,
            position: mesh.vertices[vertex],
        }
    }
}

pub const SOLVER_TOLERANCE: f64 = 1e-10;

/// Symmetric positive-definite system over the free (non-anchor) vertices:
/// the edge-difference Laplacian with entries `2 c_ij`.
struct AnchoredLaplacian {
    /// Free vertex -> row, anchor -> None.
    row_of: Vec<Option<usize>>,
    diag: Vec<f64>,
    /// Off-diagonal (column, value) per row.
    off: Vec<Vec<(usize, f64)>>,
}

impl AnchoredLaplacian {
    fn new(weights: &CotanWeights, topo: &Topology, anchor: usize) -> Self {
        let n = topo.vertex_count();
        let mut row_of = vec![None; n];
        let mut next = 0;
        for (v, slot) in row_of.iter_mut().enumerate() {
            if v != anchor {
                *slot = Some(next);
                next += 1;
            }
        }
        let mut diag = vec![0.0; next];
        let mut off = vec![Vec::new(); next];
        for i in 0..n {
            let Some(r) = row_of[i] else { continue };
            for (k, &j) in topo.neighbors[i].iter().enumerate() {
                let c = 2.0 * weights.weights[i][k];
                diag[r] += c;
                if let Some(cj) = row_of[j] {
                    off[r].push((cj, -c));
                }
            }
        }
        AnchoredLaplacian { row_of, diag, off }
    }

    fn rows(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.rows() {
            let mut acc = self.diag[r] * x[r];
            for &(c, v) in &self.off[r] {
                acc += v * x[c];
            }
            y[r] = acc;
        }
    }

    /// Jacobi-preconditioned conjugate gradients.
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.rows();
        let mut x = vec![0.0; n];
        let bnorm = norm(b);
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        let max_iter = 20 * n + 200;
        for _ in 0..max_iter {
            self.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Solver("matrix is not positive definite".into()));
            }
            let alpha = rz / pap;
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            if norm(&r) <= SOLVER_TOLERANCE * bnorm {
                return Ok(x);
            }
            for k in 0..n {
                z[k] = r[k] / self.diag[k];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
        }
        Err(Error::Solver(format!(
            "conjugate gradients stopped after {max_iter} iterations at relative residual {:.3e}",
            norm(&r) / bnorm
        )))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_connected(topo: &Topology) -> Result<()> {
    let n = topo.vertex_count();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = stack.pop() {
        for &j in &topo.neighbors[i] {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                stack.push(j);
            }
        }
    }
    if count != n {
        return Err(Error::TopologyMismatch(format!(
            "mesh is disconnected ({count} of {n} vertices reachable); one anchor cannot fix every component"
        )));
    }
    Ok(())
}

/// Solves for positions minimizing
/// `Σ_i Σ_{j∈N_i} c_ij ‖(p_i − p_j) − D_i (r_i − r_j)‖²` with the anchor fixed.
pub struct PositionSolver<'a> {
    reference: &'a Mesh,
    weights: &'a CotanWeights,
    topo: &'a Topology,
    anchor_vertex: usize,
    system: AnchoredLaplacian,
}

impl<'a> PositionSolver<'a> {
    pub fn new(
        reference: &'a Mesh,
        weights: &'a CotanWeights,
        topo: &'a Topology,
        anchor_vertex: usize,
    ) -> Result<Self> {
        if topo.vertex_count() != reference.vertex_count() {
            return Err(Error::TopologyMismatch(
                "reference and topology disagree".into(),
            ));
        }
        if anchor_vertex >= reference.vertex_count() {
            return Err(Error::InvalidArgument(format!(
                "anchor vertex {anchor_vertex} out of range"
            )));
        }
        check_connected(topo)?;
        Ok(PositionSolver {
            reference,
            weights,
            topo,
            anchor_vertex,
            system: AnchoredLaplacian::new(weights, topo, anchor_vertex),
        })
    }

    /// Right-hand side `Σ_j c_ij (D_i + D_j) e_ij` per vertex.
    fn rhs(&self, field: &DeformGradientField) -> Vec<Vec3> {
        let r = &self.reference.vertices;
        (0..r.len())
            .map(|i| {
                let mut acc = Vec3::zeros();
                for (k, &j) in self.topo.neighbors[i].iter().enumerate() {
                    let e = r[i] - r[j];
                    acc += self.weights.weights[i][k]
                        * ((field.gradients[i] + field.gradients[j]) * e);
                }
                acc
            })
            .collect()
    }

    fn solve_with_anchor(&self, field: &DeformGradientField, anchor: Vec3) -> Result<Vec<Vec3>> {
        if field.len() != self.reference.vertex_count() {
            return Err(Error::Shape(format!(
                "field has {} gradients, mesh has {} vertices",
                field.len(),
                self.reference.vertex_count()
            )));
        }
        let rhs = self.rhs(field);
        let rows = self.system.rows();
        let mut out = vec![anchor; self.reference.vertex_count()];
        for axis in 0..3 {
            let mut b = vec![0.0; rows];
            for (v, row) in self.system.row_of.iter().enumerate() {
                let Some(row) = *row else { continue };
                b[row] = rhs[v][axis];
                if let Some(k) = self.topo.slot(v, self.anchor_vertex) {
                    b[row] += 2.0 * self.weights.weights[v][k] * anchor[axis];
                }
            }
            let x = self.system.solve(&b)?;
            for (v, row) in self.system.row_of.iter().enumerate() {
                if let Some(row) = *row {
                    out[v][axis] = x[row];
                }
            }
        }
        Ok(out)
    }

    pub fn solve(&self, field: &DeformGradientField, anchor_position: Vec3) -> Result<Mesh> {
        let vertices = self.solve_with_anchor(field, anchor_position)?;
        self.reference.with_vertices(vertices)
    }

    /// Finds positions whose own fitted gradients reproduce `field`.
    ///
    /// Starts from [`solve`](Self::solve) and drives the correction
    /// `f(p) = solve(field − fit(p))` (anchor at zero displacement) to zero
    /// with Anderson-accelerated fixed-point steps. For a field fitted from
    /// real positions the fixed point is those positions.
    pub fn solve_consistent(
        &self,
        field: &DeformGradientField,
        anchor_position: Vec3,
        fitter: &GradientSolver,
        max_iterations: usize,
    ) -> Result<Mesh> {
        const MEMORY: usize = 40;
        let start = self.solve(field, anchor_position)?;
        let n = start.vertex_count();
        let scale = self.reference.bbox_diagonal().max(f64::MIN_POSITIVE);
        let flatten = |v: &[Vec3]| v.iter().flat_map(|p| [p.x, p.y, p.z]).collect::<Vec<f64>>();
        let correction = |x: &[f64]| -> Result<Option<Vec<f64>>> {
            let mesh = self.reference.with_vertices(
                x.chunks_exact(3)
                    .map(|c| Vec3::new(c[0], c[1], c[2]))
                    .collect(),
            )?;
            let Ok(fitted) = fitter.solve(self.reference, &mesh, self.weights, self.topo) else {
                return Ok(None);
            };
            let residual = DeformGradientField {
                gradients: field
                    .gradients
                    .iter()
                    .zip(&fitted.gradients)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<Mat3>>(),
            };
            Ok(Some(flatten(
                &self.solve_with_anchor(&residual, Vec3::zeros())?,
            )))
        };
        let rms = |f: &[f64]| (f.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();

        let mut x = flatten(&start.vertices);
        let mut best = (f64::INFINITY, x.clone());
        let mut history: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for _ in 0..=max_iterations {
            let Some(f) = correction(&x)? else { break };
            let err = rms(&f);
            if !err.is_finite() {
                break;
            }
            if err < best.0 {
                best = (err, x.clone());
            } else if err > 1e3 * best.0 {
                break;
            }
            if err <= 1e-13 * scale {
                break;
            }
            history.push((x.clone(), f.clone()));
            if history.len() > MEMORY + 1 {
                history.remove(0);
            }
            let mut next: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a + b).collect();
            let m = history.len() - 1;
            if m > 0 {
                let dim = x.len();
                let mut df = nalgebra::DMatrix::<f64>::zeros(dim, m);
                let mut dx = nalgebra::DMatrix::<f64>::zeros(dim, m);
                for k in 0..m {
                    let (x0, f0) = &history[k];
                    let (x1, f1) = &history[k + 1];
                    for r in 0..dim {
                        df[(r, k)] = f1[r] - f0[r];
                        dx[(r, k)] = x1[r] - x0[r];
                    }
                }
                let rhs = nalgebra::DVector::from_column_slice(&f);
                if let Ok(gamma) = df.clone().svd(true, true).solve(&rhs, 1e-14) {
                    let shift = (&dx + &df) * gamma;
                    for (v, s) in next.iter_mut().zip(shift.iter()) {
                        *v -= s;
                    }
                }
            }
            x = next;
        }
        let vertices = best
            .1
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect();
        self.reference.with_vertices(vertices)
    }
}

/// One-shot least-squares reconstruction.
pub fn reconstruct_positions(
    field: &DeformGradientField,
    reference: &Mesh,
    weights: &CotanWeights,
    topo: &Topology,
    anchor: Anchor,
) -> Result<Mesh> {
    PositionSolver::new(reference, weights, topo, anchor.vertex)?.solve(field, anchor.position)
}
