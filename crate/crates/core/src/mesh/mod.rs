//! Shared-connectivity triangle meshes, 1-ring topology and cotangent edge weights.
//!
//! Every frame of an animation sequence shares the faces of the reference mesh;
//! only vertex positions change.

mod manifest;
mod obj;

pub use manifest::SequenceManifest;
pub use obj::{load_obj, parse_obj, save_obj, write_obj};

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Lower bound applied to every cotangent weight.
pub const COTAN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    /// Builds a mesh after checking face indices.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Mesh { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let count = self.vertices.len();
        for (f, face) in self.faces.iter().enumerate() {
            for &index in face {
                if index >= count {
                    return Err(Error::IndexOutOfRange {
                        face: f,
                        index,
                        count,
                    });
                }
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(Error::DegenerateFace { face: f });
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Same vertex count and identical faces.
    pub fn same_connectivity(&self, other: &Mesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.faces == other.faces
    }

    /// A copy of this mesh with different positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Mesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::TopologyMismatch(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(Mesh {
            vertices,
            faces: self.faces.clone(),
        })
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
        }
    }
}

/// Root-mean-square vertex distance between two meshes of equal size.
pub fn vertex_rmse(a: &Mesh, b: &Mesh) -> f64 {
    assert_eq!(a.vertex_count(), b.vertex_count());
    let sum: f64 = a
        .vertices
        .iter()
        .zip(&b.vertices)
        .map(|(p, q)| (p - q).norm_squared())
        .sum();
    (sum / a.vertex_count() as f64).sqrt()
}

/// 1-ring adjacency, neighbors sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub neighbors: Vec<Vec<usize>>,
}

impl Topology {
    pub fn vertex_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    /// Undirected edges `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Position of `j` in the neighbor list of `i`.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        self.neighbors[i].binary_search(&j).ok()
    }

    /// Builds a topology directly from adjacency lists; lists are sorted and
    /// checked for symmetry.
    pub fn from_neighbors(mut neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        for ns in neighbors.iter_mut() {
            ns.sort_unstable();
            ns.dedup();
        }
        for (i, ns) in neighbors.iter().enumerate() {
            if ns.is_empty() {
                return Err(Error::IsolatedVertex(i));
            }
            for &j in ns {
                if j >= n || j == i || neighbors[j].binary_search(&i).is_err() {
                    return Err(Error::TopologyMismatch(format!(
                        "adjacency {i} -> {j} is not symmetric"
                    )));
                }
            }
        }
        Ok(Topology { neighbors })
    }
}

pub fn build_topology(mesh: &Mesh) -> Result<Topology> {
    let mut neighbors = vec![Vec::new(); mesh.vertex_count()];
    for face in &mesh.faces {
        for k in 0..3 {
            let a = face[k];
            let b = face[(k + 1) % 3];
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
    }
    for (i, ns) in neighbors.iter_mut().enumerate() {
        ns.sort_unstable();
        ns.dedup();
        if ns.is_empty() {
            return Err(Error::IsolatedVertex(i));
        }
    }
    Ok(Topology { neighbors })
}

/// Cotangent weights stored parallel to the topology's neighbor lists.
#[derive(Debug, Clone, PartialEq)]
pub struct CotanWeights {
    pub weights: Vec<Vec<f64>>,
}

impl CotanWeights {
    /// Weight of edge `(i, j)`, if it is a topology edge.
    pub fn get(&self, topo: &Topology, i: usize, j: usize) -> Option<f64> {
        topo.slot(i, j).map(|k| self.weights[i][k])
    }
}

/// `c_ij = ½ Σ cot(angle opposite (i, j))` over the faces containing the
/// edge, floored at [`COTAN_FLOOR`]. Boundary edges get the one-sided sum.
pub fn cotangent_weights(mesh: &Mesh, topo: &Topology) -> Result<CotanWeights> {
    if topo.vertex_count() != mesh.vertex_count() {
        return Err(Error::TopologyMismatch(format!(
            "topology has {} vertices, mesh has {}",
            topo.vertex_count(),
            mesh.vertex_count()
        )));
    }
    let mut weights: Vec<Vec<f64>> = topo
        .neighbors
        .iter()
        .map(|ns| vec![0.0; ns.len()])
        .collect();
    for (f, face) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            let o = face[k];
            let a = face[(k + 1) % 3];
            let b = face[(k + 2) % 3];
            let u = mesh.vertices[a] - mesh.vertices[o];
            let v = mesh.vertices[b] - mesh.vertices[o];
            let cross = u.cross(&v).norm();
            let scale = u.norm() * v.norm();
            if !(cross > 1e-14 * scale) || scale == 0.0 {
                return Err(Error::ZeroAreaFace(f));
            }
            let half_cot = 0.5 * u.dot(&v) / cross;
            let (sa, sb) = match (topo.slot(a, b), topo.slot(b, a)) {
                (Some(sa), Some(sb)) => (sa, sb),
                _ => {
                    return Err(Error::TopologyMismatch(format!(
                        "edge ({a}, {b}) of face {f} missing from topology"
                    )))
                }
            };
            weights[a][sa] += half_cot;
            weights[b][sb] += half_cot;
        }
    }
    for row in weights.iter_mut() {
        for w in row.iter_mut() {
            *w = w.max(COTAN_FLOOR);
        }
    }
    Ok(CotanWeights { weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(a: Vec3, b: Vec3, c: Vec3) -> Mesh {
        Mesh::new(vec![a, b, c], vec![[0, 1, 2]]).unwrap()
    }

    fn two_equilateral() -> Mesh {
        let h = 3f64.sqrt() / 2.0;
        Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.5, h, 0.0),
                Vec3::new(0.5, -h, 0.0),
            ],
            vec![[0, 1, 2], [1, 0, 3]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_faces() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(matches!(
            Mesh::new(v.clone(), vec![[0, 1, 1]]),
            Err(Error::DegenerateFace { face: 0 })
        ));
        assert!(matches!(
            Mesh::new(v.clone(), vec![[0, 1, 3]]),
            Err(Error::IndexOutOfRange { index: 3, .. })
        ));
        assert!(matches!(Mesh::new(v, vec![]), Err(Error::EmptyMesh)));
    }

    #[test]
    fn single_triangle_topology() {
        let m = tri(Vec3::zeros(), Vec3::x(), Vec3::y());
        let t = build_topology(&m).unwrap();
        assert_eq!(t.degrees(), vec![2, 2, 2]);
        assert_eq!(t.neighbors[0], vec![1, 2]);
    }

    #[test]
    fn shared_edge_degrees() {
        let t = build_topology(&two_equilateral()).unwrap();
        assert_eq!(t.degrees(), vec![3, 3, 2, 2]);
        assert_eq!(t.edge_count(), 5);
    }

    #[test]
    fn isolated_vertex_is_error() {
        let m = Mesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(build_topology(&m), Err(Error::IsolatedVertex(3))));
    }

    #[test]
    fn equilateral_cotangents() {
        let m = two_equilateral();
        let t = build_topology(&m).unwrap();
        let w = cotangent_weights(&m, &t).unwrap();
        let cot60 = 1.0 / 3f64.sqrt();
        assert!((w.get(&t, 0, 1).unwrap() - cot60).abs() < 1e-12);
        assert!((w.get(&t, 0, 2).unwrap() - 0.5 * cot60).abs() < 1e-12);
        assert_eq!(w.get(&t, 0, 1), w.get(&t, 1, 0));
        assert_eq!(w.get(&t, 2, 3), None);
    }

    #[test]
    fn right_angle_is_floored() {
        let m = tri(Vec3::zeros(), Vec3::x(), Vec3::y());
        let t = build_topology(&m).unwrap();
        let w = cotangent_weights(&m, &t).unwrap();
        assert_eq!(w.get(&t, 1, 2).unwrap(), COTAN_FLOOR);
        assert!((w.get(&t, 0, 1).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_area_face_is_error() {
        let m = tri(Vec3::zeros(), Vec3::x(), Vec3::new(2.0, 0.0, 0.0));
        let t = build_topology(&m).unwrap();
        assert!(matches!(
            cotangent_weights(&m, &t),
            Err(Error::ZeroAreaFace(0))
        ));
    }
}
