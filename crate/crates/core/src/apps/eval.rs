//! Evaluation metrics: per-vertex position error and feature change.

use std::path::Path;

use serde::Serialize;

use crate::codec::FeatureFrame;
use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Position errors are customarily quoted in units of 1e-4.
pub const ERROR_UNIT: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Mean Euclidean vertex distance of each frame, in model units.
    pub per_frame: Vec<f64>,
    pub mean: f64,
}

impl EvalReport {
    pub fn mean_scaled(&self) -> f64 {
        self.mean / ERROR_UNIT
    }

    /// CSV with columns `frame,error,error_e4`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            frame: usize,
            error: f64,
            error_e4: f64,
        }
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for (frame, &error) in self.per_frame.iter().enumerate() {
            w.serialize(Row {
                frame,
                error,
                error_e4: error / ERROR_UNIT,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn eval_position_error(pred: &[Mesh], gt: &[Mesh]) -> Result<EvalReport> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "{} predicted frames for {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let per_frame = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            if p.vertex_count() != g.vertex_count() {
                return Err(Error::Shape(format!(
                    "{} vs {} vertices",
                    p.vertex_count(),
                    g.vertex_count()
                )));
            }
            Ok(p.vertices
                .iter()
                .zip(&g.vertices)
                .map(|(a, b)| (a - b).norm())
                .sum::<f64>()
                / p.vertex_count() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(EvalReport { per_frame, mean })
}

/// `mean|X_{t+1} − X_t| / mean|X_t|` for every adjacent pair; an all-zero
/// `X_t` yields `f64::INFINITY`.
pub fn feature_change_curve(frames: &[FeatureFrame]) -> Result<Vec<f64>> {
    if frames.len() < 2 {
        return Err(Error::InvalidArgument(
            "feature change needs at least 2 frames".into(),
        ));
    }
    if frames.iter().any(|f| f.data.len() != frames[0].data.len()) {
        return Err(Error::Shape("frames differ in size".into()));
    }
    Ok(frames
        .windows(2)
        .map(|w| {
            let len = w[0].data.len() as f64;
            let base = w[0].data.iter().map(|x| x.abs()).sum::<f64>() / len;
            let change = w[0]
                .data
                .iter()
                .zip(&w[1].data)
                .map(|(a, b)| (b - a).abs())
                .sum::<f64>()
                / len;
            if base == 0.0 {
                f64::INFINITY
            } else {
                change / base
            }
        })
        .collect())
}

/// CSV with columns `frame,change` (`frame` is the first of each pair).
pub fn write_change_curve(path: impl AsRef<Path>, curve: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["frame", "change"])?;
    for (i, c) in curve.iter().enumerate() {
        w.write_record([i.to_string(), c.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Vec3;

    #[test]
    fn offsets_and_identity() {
        let m = Mesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
        let moved = m.transformed(|p| p + Vec3::new(0.01, 0.0, 0.0));
        let r = eval_position_error(&[m.clone(), moved.clone()], &[m.clone(), m.clone()]).unwrap();
        assert_eq!(r.per_frame[0], 0.0);
        assert!((r.per_frame[1] - 0.01).abs() < 1e-15);
        assert!(
            (eval_position_error(&[moved], &[m.clone()])
                .unwrap()
                .mean_scaled()
                - 100.0)
                .abs()
                < 1e-9
        );
        assert!(eval_position_error(&[m.clone()], &[]).is_err());
    }

    #[test]
    fn change_curve_cases() {
        let x = FeatureFrame::from_data((1..=9).map(f64::from).collect(), false).unwrap();
        let x2 = FeatureFrame::from_data(x.data.iter().map(|v| 2.0 * v).collect(), false).unwrap();
        assert_eq!(
            feature_change_curve(&[x.clone(), x.clone(), x.clone()]).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(feature_change_curve(&[x.clone(), x2]).unwrap(), vec![1.0]);
        let zero = FeatureFrame::zeros(1, false);
        assert_eq!(
            feature_change_curve(&[zero, x.clone()]).unwrap(),
            vec![f64::INFINITY]
        );
        assert!(feature_change_curve(&[x]).is_err());
    }
}
