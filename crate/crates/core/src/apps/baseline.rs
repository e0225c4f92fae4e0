//! Linear feature-space baselines.

use serde::{Deserialize, Serialize};

use crate::codec::FeatureFrame;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearMode {
    /// `count` frames from `a` to `b`, both included.
    Interpolate,
    /// The `count` frames after `a`, `b`, continuing the step `b − a`.
    Extrapolate,
}

/// `X_t = a + (t − 1)(b − a)` with `a = X_1`, `b = X_2`.
pub fn extrapolate_at(a: &FeatureFrame, b: &FeatureFrame, t: f64) -> FeatureFrame {
    FeatureFrame {
        data: a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| x + (t - 1.0) * (y - x))
            .collect(),
        normalized: a.normalized,
    }
}

pub fn baseline_linear(
    a: &FeatureFrame,
    b: &FeatureFrame,
    count: usize,
    mode: LinearMode,
) -> Result<Vec<FeatureFrame>> {
    if a.data.len() != b.data.len() || a.normalized != b.normalized {
        return Err(Error::Shape(
            "baseline frames differ in shape or normalization".into(),
        ));
    }
    Ok(match mode {
        LinearMode::Interpolate => (0..count)
            .map(|j| {
                if j == 0 {
                    return a.clone();
                }
                let t = j as f64 / (count - 1) as f64;
                extrapolate_at(a, b, 1.0 + t)
            })
            .collect(),
        LinearMode::Extrapolate => (0..count)
            .map(|j| extrapolate_at(a, b, (j + 3) as f64))
            .collect(),
    })
}
