//! Analytically deformed bar/cylinder sequences used as small training sets.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{save_obj, Mesh, SequenceManifest, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    BendBar,
    TwistBar,
    SwingCylinder,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bend-bar" => Ok(SynthKind::BendBar),
            "twist-bar" => Ok(SynthKind::TwistBar),
            "swing-cylinder" => Ok(SynthKind::SwingCylinder),
            other => Err(Error::InvalidArgument(format!(
                "unknown synthetic kind {other:?}"
            ))),
        }
    }
}

/// Closed cylinder along +x. Vertex 0 is the base cap center, the last
/// vertex the tip cap center; rings of `around` vertices sit at
/// `segments + 1` stations in between.
pub fn bar_mesh(around: usize, segments: usize, radius: f64, length: f64) -> Result<Mesh> {
    if around < 3 || segments < 1 {
        return Err(Error::InvalidArgument(
            "bar needs >= 3 vertices around and >= 1 segment".into(),
        ));
    }
    let rings = segments + 1;
    let mut vertices = vec![Vec3::zeros()];
    for s in 0..rings {
        let x = length * s as f64 / segments as f64;
        for a in 0..around {
            let phi = 2.0 * PI * a as f64 / around as f64;
            vertices.push(Vec3::new(x, radius * phi.cos(), radius * phi.sin()));
        }
    }
    let tip = vertices.len();
    vertices.push(Vec3::new(length, 0.0, 0.0));
    let ring = |s: usize, a: usize| 1 + s * around + a % around;
    let mut faces = Vec::new();
    for a in 0..around {
        faces.push([0, ring(0, a + 1), ring(0, a)]);
    }
    for s in 0..segments {
        for a in 0..around {
            let (p, q, r, t) = (
                ring(s, a),
                ring(s, a + 1),
                ring(s + 1, a),
                ring(s + 1, a + 1),
            );
            faces.push([p, q, t]);
            faces.push([p, t, r]);
        }
    }
    for a in 0..around {
        faces.push([tip, ring(segments, a), ring(segments, a + 1)]);
    }
    Mesh::new(vertices, faces)
}

/// Ring/segment counts giving roughly `target` vertices with `around` per ring.
pub fn bar_for_vertex_count(target: usize, around: usize) -> Result<Mesh> {
    let rings = ((target.saturating_sub(2)) as f64 / around as f64)
        .round()
        .max(2.0) as usize;
    bar_mesh(around, rings - 1, 0.1, 1.0)
}

/// Constant-curvature bend in the xy plane; `angle` is the total turn at the tip.
pub fn bend(mesh: &Mesh, angle: f64, length: f64) -> Mesh {
    let kappa = angle / length;
    if kappa.abs() < 1e-12 {
        return mesh.clone();
    }
    let r = 1.0 / kappa;
    mesh.transformed(|p| {
        let theta = kappa * p.x;
        let rr = r - p.y;
        Vec3::new(rr * theta.sin(), r - rr * theta.cos(), p.z)
    })
}

/// Twist about +x growing linearly to `tip_angle` at `x = length`.
pub fn twist(mesh: &Mesh, tip_angle: f64, length: f64) -> Mesh {
    mesh.transformed(|p| {
        let tau = tip_angle * p.x / length;
        let (s, c) = tau.sin_cos();
        Vec3::new(p.x, c * p.y - s * p.z, s * p.y + c * p.z)
    })
}

fn rotate_z(mesh: &Mesh, angle: f64) -> Mesh {
    let (s, c) = angle.sin_cos();
    mesh.transformed(|p| Vec3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    /// Approximate vertex count.
    pub vertices: usize,
    /// Vertices per ring.
    pub around: usize,
    pub frames: usize,
    /// Frames per motion cycle.
    pub period: f64,
    /// Peak bend/twist/swing angle in radians.
    pub amplitude: f64,
    /// Phase offset in radians.
    pub phase: f64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, frames: usize) -> Self {
        SynthSpec {
            kind,
            vertices: 400,
            around: 12,
            frames,
            period: 16.0,
            amplitude: PI / 2.0,
            phase: 0.0,
        }
    }
}

/// Rest pose and the deformed frames.
pub fn synth_sequence(spec: &SynthSpec) -> Result<(Mesh, Vec<Mesh>)> {
    if spec.frames < 2 {
        return Err(Error::InvalidArgument(
            "a synthetic sequence needs at least 2 frames".into(),
        ));
    }
    if !(spec.period > 0.0) {
        return Err(Error::InvalidArgument("period must be positive".into()));
    }
    let rest = bar_for_vertex_count(spec.vertices, spec.around)?;
    let length = 1.0;
    let frames = (0..spec.frames)
        .map(|t| {
            let phase = 2.0 * PI * t as f64 / spec.period + spec.phase;
            let s = phase.sin();
            match spec.kind {
                SynthKind::BendBar => bend(&rest, spec.amplitude * s, length),
                SynthKind::TwistBar => twist(&rest, spec.amplitude * s, length),
                SynthKind::SwingCylinder => {
                    let bent = bend(&rest, 0.5 * spec.amplitude * phase.cos(), length);
                    rotate_z(&bent, 0.5 * spec.amplitude * s)
                }
            }
        })
        .collect();
    Ok((rest, frames))
}

/// Writes `reference.obj`, `frame_XXXX.obj` and `manifest.json` into `dir`.
pub fn write_sequence(
    dir: impl AsRef<Path>,
    reference: &Mesh,
    frames: &[Mesh],
) -> Result<SequenceManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_obj(reference, dir.join("reference.obj"))?;
    let mut names = Vec::with_capacity(frames.len());
    for (t, m) in frames.iter().enumerate() {
        let name = PathBuf::from(format!("frame_{t:04}.obj"));
        save_obj(m, dir.join(&name))?;
        names.push(name);
    }
    let manifest = SequenceManifest {
        reference: "reference.obj".into(),
        frames: names,
        subsample_stride: 1,
        base_dir: dir.to_path_buf(),
    };
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

pub fn synth_dataset(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<SequenceManifest> {
    let (rest, frames) = synth_sequence(spec)?;
    write_sequence(dir, &rest, &frames)
}
