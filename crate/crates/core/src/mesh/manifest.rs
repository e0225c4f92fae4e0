use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_obj, Mesh};
use crate::error::{Error, Result};

/// A dataset unit: an ordered list of OBJ frames sharing the connectivity
/// of `reference`. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub reference: PathBuf,
    pub frames: Vec<PathBuf>,
    #[serde(default = "default_stride")]
    pub subsample_stride: usize,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_stride() -> usize {
    1
}

impl SequenceManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: SequenceManifest = serde_json::from_str(&text)?;
        if m.subsample_stride == 0 {
            return Err(Error::InvalidArgument(
                "subsample_stride must be >= 1".into(),
            ));
        }
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn reference_path(&self) -> PathBuf {
        self.resolve(&self.reference)
    }

    /// Frame paths after stride subsampling.
    pub fn frame_paths(&self) -> Vec<PathBuf> {
        self.frames
            .iter()
            .step_by(self.subsample_stride.max(1))
            .map(|p| self.resolve(p))
            .collect()
    }

    pub fn load_reference(&self) -> Result<Mesh> {
        load_obj(self.reference_path())
    }

    /// Loads the subsampled frames and checks they share the reference connectivity.
    pub fn load_frames(&self) -> Result<(Mesh, Vec<Mesh>)> {
        let reference = self.load_reference()?;
        let mut frames = Vec::new();
        for p in self.frame_paths() {
            let m = load_obj(&p)?;
            if !m.same_connectivity(&reference) {
                return Err(Error::TopologyMismatch(format!(
                    "{} does not share the reference connectivity",
                    p.display()
                )));
            }
            frames.push(m);
        }
        Ok((reference, frames))
    }
}
