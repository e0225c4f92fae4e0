//! Binary feature files and the JSON sidecar that accompanies a directory of them.
//!
//! Feature file layout (little-endian): `"MSQF"`, version `u32`, vertex
//! count `u32`, channel count `u32` (always 9), then `vertex × channel`
//! `f64` values in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::feature::{FeatureFrame, CHANNELS};
use super::normalize::NormalizationParams;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"MSQF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode_feature_bytes(frame: &FeatureFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * frame.data.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(frame.vertex_count() as u32).to_le_bytes());
    out.extend_from_slice(&(CHANNELS as u32).to_le_bytes());
    for x in &frame.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_feature_bytes(bytes: &[u8], normalized: bool) -> Result<FeatureFrame> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format("missing MSQF magic".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap());
    let (version, vertices, channels) = (word(1), word(2) as usize, word(3) as usize);
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!(
            "unsupported feature file version {version}"
        )));
    }
    if channels != CHANNELS {
        return Err(Error::Format(format!(
            "expected {CHANNELS} channels, found {channels}"
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != vertices * channels * 8 {
        return Err(Error::Format(format!(
            "payload is {} bytes, header promises {}",
            payload.len(),
            vertices * channels * 8
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureFrame::from_data(data, normalized)
}

pub fn write_features(path: impl AsRef<Path>, frame: &FeatureFrame) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_feature_bytes(frame)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>, normalized: bool) -> Result<FeatureFrame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_bytes(&bytes, normalized)
}

/// Sidecar describing an encoded sequence directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    /// Reference mesh used for encoding.
    pub reference: PathBuf,
    /// Whether the feature files hold normalized values.
    pub normalized: bool,
    pub normalization: NormalizationParams,
    /// Position of the anchor vertex in each frame.
    pub anchor_vertex: usize,
    pub anchors: Vec<[f64; 3]>,
    /// Feature file names, relative to the sidecar.
    pub frames: Vec<PathBuf>,
}

pub const SIDECAR_NAME: &str = "features.json";

impl FeatureSidecar {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Writes `frames` as `frame_XXXX.msqf` plus the sidecar into `dir`.
pub fn write_feature_dir(
    dir: impl AsRef<Path>,
    reference: impl Into<PathBuf>,
    frames: &[FeatureFrame],
    normalization: &NormalizationParams,
    anchor_vertex: usize,
    anchors: Vec<[f64; 3]>,
) -> Result<FeatureSidecar> {
    let dir = dir.as_ref();
    if anchors.len() != frames.len() {
        return Err(Error::Shape(format!(
            "{} anchors for {} frames",
            anchors.len(),
            frames.len()
        )));
    }
    let normalized = frames.first().map_or(false, |f| f.normalized);
    if frames.iter().any(|f| f.normalized != normalized) {
        return Err(Error::InvalidArgument(
            "frames mix normalized and raw features".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::with_capacity(frames.len());
    for (t, f) in frames.iter().enumerate() {
        let name = PathBuf::from(format!("frame_{t:04}.msqf"));
        write_features(dir.join(&name), f)?;
        names.push(name);
    }
    let sidecar = FeatureSidecar {
        reference: reference.into(),
        normalized,
        normalization: normalization.clone(),
        anchor_vertex,
        anchors,
        frames: names,
    };
    sidecar.save(dir.join(SIDECAR_NAME))?;
    Ok(sidecar)
}

/// Reads a directory written by [`write_feature_dir`].
pub fn read_feature_dir(dir: impl AsRef<Path>) -> Result<(FeatureSidecar, Vec<FeatureFrame>)> {
    let dir = dir.as_ref();
    let sidecar = FeatureSidecar::load(dir.join(SIDECAR_NAME))?;
    if sidecar.anchors.len() != sidecar.frames.len() {
        return Err(Error::Format(
            "sidecar lists a different number of anchors and frames".into(),
        ));
    }
    let frames = sidecar
        .frames
        .iter()
        .map(|p| read_features(dir.join(p), sidecar.normalized))
        .collect::<Result<Vec<_>>>()?;
    Ok((sidecar, frames))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let f = FeatureFrame::from_data((0..18).map(|x| x as f64 * 0.5).collect(), true).unwrap();
        let b = encode_feature_bytes(&f);
        assert_eq!(&b[..4], b"MSQF");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &9u32.to_le_bytes());
        assert_eq!(&b[16 + 8..16 + 16], &0.5f64.to_le_bytes());
        assert_eq!(b.len(), 16 + 18 * 8);
        assert_eq!(decode_feature_bytes(&b, true).unwrap(), f);
    }

    #[test]
    fn rejects_corruption() {
        let f = FeatureFrame::zeros(3, false);
        let mut b = encode_feature_bytes(&f);
        assert!(decode_feature_bytes(&b[..b.len() - 1], false).is_err());
        b[0] = b'X';
        assert!(matches!(
            decode_feature_bytes(&b, false),
            Err(Error::Format(_))
        ));
    }
}
