//! Affine per-dimension normalization of features into `[-0.95, 0.95]`.

use serde::{Deserialize, Serialize};

use super::feature::{FeatureFrame, CHANNELS};
use crate::error::{Error, Result};

pub const NORMALIZED_BOUND: f64 = 0.95;

/// Dimensions whose fitted range is at most this wide are treated as
/// constant; otherwise round-off noise would be blown up to full scale.
pub const MIN_RANGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// One range per (vertex, channel) scalar.
    #[default]
    PerVertexChannel,
    /// One range per channel, shared by all vertices.
    PerChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub granularity: Granularity,
    pub vertex_count: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl NormalizationParams {
    fn dim(&self, k: usize) -> usize {
        match self.granularity {
            Granularity::PerVertexChannel => k,
            Granularity::PerChannel => k % CHANNELS,
        }
    }

    /// `(scale, offset)` of the forward map for scalar `k`; constant dims get scale 0.
    pub fn affine(&self, k: usize) -> (f64, f64) {
        let d = self.dim(k);
        let (lo, hi) = (self.lower[d], self.upper[d]);
        if hi - lo > MIN_RANGE {
            let scale = 2.0 * NORMALIZED_BOUND / (hi - lo);
            (scale, -NORMALIZED_BOUND - scale * lo)
        } else {
            (0.0, 0.0)
        }
    }

    pub fn apply(&self, frame: &FeatureFrame, direction: Direction) -> Result<FeatureFrame> {
        if frame.vertex_count() != self.vertex_count {
            return Err(Error::Shape(format!(
                "frame has {} vertices, normalization expects {}",
                frame.vertex_count(),
                self.vertex_count
            )));
        }
        let want_normalized = direction == Direction::Inverse;
        if frame.normalized != want_normalized {
            return Err(Error::InvalidArgument(format!(
                "{direction:?} normalization applied to a frame with normalized = {}",
                frame.normalized
            )));
        }
        let data = frame
            .data
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let d = self.dim(k);
                let lo = self.lower[d];
                let hi = self.upper[d];
                match direction {
                    Direction::Forward if hi - lo > MIN_RANGE => {
                        -NORMALIZED_BOUND + 2.0 * NORMALIZED_BOUND * (x - lo) / (hi - lo)
                    }
                    Direction::Forward => 0.0,
                    Direction::Inverse if hi - lo > MIN_RANGE => {
                        lo + (x + NORMALIZED_BOUND) * (hi - lo) / (2.0 * NORMALIZED_BOUND)
                    }
                    Direction::Inverse => 0.5 * (lo + hi),
                }
            })
            .collect();
        Ok(FeatureFrame {
            data,
            normalized: !frame.normalized,
        })
    }
}

/// Per-dimension min/max over `frames`, mapped onto `[-0.95, 0.95]`.
pub fn fit_normalization(
    frames: &[FeatureFrame],
    granularity: Granularity,
) -> Result<NormalizationParams> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot fit normalization to zero frames".into()))?;
    let vertex_count = first.vertex_count();
    let dims = match granularity {
        Granularity::PerVertexChannel => vertex_count * CHANNELS,
        Granularity::PerChannel => CHANNELS,
    };
    let mut lower = vec![f64::INFINITY; dims];
    let mut upper = vec![f64::NEG_INFINITY; dims];
    for f in frames {
        if f.vertex_count() != vertex_count {
            return Err(Error::Shape("frames have different vertex counts".into()));
        }
        if f.normalized {
            return Err(Error::InvalidArgument(
                "fit_normalization expects unnormalized frames".into(),
            ));
        }
        for (k, &x) in f.data.iter().enumerate() {
            let d = match granularity {
                Granularity::PerVertexChannel => k,
                Granularity::PerChannel => k % CHANNELS,
            };
            lower[d] = lower[d].min(x);
            upper[d] = upper[d].max(x);
        }
    }
    Ok(NormalizationParams {
        granularity,
        vertex_count,
        lower,
        upper,
    })
}
