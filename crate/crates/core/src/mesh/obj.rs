use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Mesh, Vec3};
use crate::error::{Error, Result};

/// Reads an ASCII OBJ file. Only `v` and `f` records are used.
pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_obj(BufReader::new(file), path)
}

pub fn parse_obj(reader: impl Read, path: &Path) -> Result<Mesh> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for c in xyz.iter_mut() {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| parse_err(lineno, "vertex needs 3 coordinates".into()))?;
                    *c = tok
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad coordinate {tok:?}")))?;
                }
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let refs: Vec<&str> = tokens.collect();
                if refs.len() != 3 {
                    return Err(parse_err(
                        lineno,
                        format!("non-triangular face with {} vertices", refs.len()),
                    ));
                }
                let mut face = [0usize; 3];
                for (slot, r) in face.iter_mut().zip(&refs) {
                    let idx = r.split('/').next().unwrap_or("");
                    let idx: i64 = idx
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad face index {r:?}")))?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        return Err(parse_err(lineno, "face index 0".into()));
                    };
                    if resolved < 0 {
                        return Err(parse_err(lineno, format!("face index {idx} out of range")));
                    }
                    *slot = resolved as usize;
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}

pub fn save_obj(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_obj(mesh, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Coordinates use Rust's shortest round-trip float formatting, so a
/// save/load cycle is exact.
pub fn write_obj(mesh: &Mesh, w: &mut impl Write) -> std::io::Result<()> {
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}
