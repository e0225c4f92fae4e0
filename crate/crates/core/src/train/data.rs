use std::ops::Range;
use std::path::Path;

use rand::Rng;

use super::config::TrainConfig;
use crate::codec::{
    fit_normalization, Codec, Direction, FeatureFrame, Granularity, NormalizationParams,
};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, SequenceManifest};

/// Contiguous frames of one sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub sequence: usize,
    pub frames: Range<usize>,
}

/// Frame ranges of one sequence after holding out a test window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<Range<usize>>,
    pub test: Range<usize>,
}

/// Holds out one contiguous block of `round(frames · fraction)` frames at a
/// random position, chosen so that at least one training piece still fits
/// a window of `n` frames.
pub fn split_dataset(
    frames: usize,
    n: usize,
    test_fraction: f64,
    rng: &mut impl Rng,
) -> Result<Split> {
    if frames < 2 * n {
        return Err(Error::DatasetTooShort(format!(
            "{frames} frames after subsampling; a window of {n} needs at least {}",
            2 * n
        )));
    }
    let test_len = ((frames as f64 * test_fraction).round() as usize).clamp(1, frames - n);
    let starts: Vec<usize> = (0..=frames - test_len)
        .filter(|&s| s.max(frames - s - test_len) >= n)
        .collect();
    let s = starts[rng.gen_range(0..starts.len())];
    let train = [0..s, s + test_len..frames]
        .into_iter()
        .filter(|r| !r.is_empty())
        .collect();
    Ok(Split {
        train,
        test: s..s + test_len,
    })
}

/// Start of a uniformly random window of `n` frames lying inside one of
/// `segments`; every admissible start is equally likely.
pub fn sample_window(segments: &[Segment], n: usize, rng: &mut impl Rng) -> Result<Segment> {
    let count = |s: &Segment| (s.frames.len() + 1).saturating_sub(n);
    let total: usize = segments.iter().map(count).sum();
    if n == 0 || total == 0 {
        return Err(Error::DatasetTooShort(format!(
            "no training segment holds a window of {n} frames"
        )));
    }
    let mut k = rng.gen_range(0..total);
    for s in segments {
        let c = count(s);
        if k < c {
            let start = s.frames.start + k;
            return Ok(Segment {
                sequence: s.sequence,
                frames: start..start + n,
            });
        }
        k -= c;
    }
    unreachable!("k < total")
}

/// Meshes of one or more sequences on a shared reference, with their
/// normalized features.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub codec: Codec,
    pub meshes: Vec<Vec<Mesh>>,
    pub features: Vec<Vec<FeatureFrame>>,
    pub normalization: NormalizationParams,
}

impl Corpus {
    /// Encodes every sequence (temporal seeding restarts per sequence) and
    /// fits the normalization on the frames of `fit` (all frames if `None`).
    pub fn new(
        reference: Mesh,
        meshes: Vec<Vec<Mesh>>,
        granularity: Granularity,
        fit: Option<&[Segment]>,
    ) -> Result<Self> {
        if meshes.is_empty() || meshes.iter().any(Vec::is_empty) {
            return Err(Error::DatasetTooShort(
                "corpus needs non-empty sequences".into(),
            ));
        }
        let codec = Codec::new(reference)?;
        let raw = meshes
            .iter()
            .map(|s| codec.encode_sequence(s))
            .collect::<Result<Vec<_>>>()?;
        let fit_frames: Vec<FeatureFrame> = match fit {
            Some(segs) => segs
                .iter()
                .flat_map(|s| raw[s.sequence][s.frames.clone()].iter().cloned())
                .collect(),
            None => raw.iter().flatten().cloned().collect(),
        };
        let normalization = fit_normalization(&fit_frames, granularity)?;
        let features = raw
            .iter()
            .map(|s| {
                s.iter()
                    .map(|f| normalization.apply(f, Direction::Forward))
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            codec,
            meshes,
            features,
            normalization,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.codec.vertex_count()
    }

    /// Every frame of every sequence as one segment each.
    pub fn all_segments(&self) -> Vec<Segment> {
        self.features
            .iter()
            .enumerate()
            .map(|(i, s)| Segment {
                sequence: i,
                frames: 0..s.len(),
            })
            .collect()
    }

    pub fn window(&self, seg: &Segment) -> &[FeatureFrame] {
        &self.features[seg.sequence][seg.frames.clone()]
    }
}

/// A corpus with its training and held-out segments.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub corpus: Corpus,
    pub train: Vec<Segment>,
    pub test: Vec<Segment>,
}

impl TrainSet {
    /// Holds out `cfg.test_fraction` of every sequence and fits the
    /// normalization on the rest.
    pub fn split(
        reference: Mesh,
        meshes: Vec<Vec<Mesh>>,
        cfg: &TrainConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, seq) in meshes.iter().enumerate() {
            let split = split_dataset(seq.len(), cfg.seq_len, cfg.test_fraction, rng)?;
            train.extend(split.train.into_iter().map(|frames| Segment {
                sequence: i,
                frames,
            }));
            test.push(Segment {
                sequence: i,
                frames: split.test,
            });
        }
        let corpus = Corpus::new(reference, meshes, cfg.normalization, Some(&train))?;
        Ok(TrainSet {
            corpus,
            train,
            test,
        })
    }

    /// Trains on everything; nothing is held out.
    pub fn full(reference: Mesh, meshes: Vec<Vec<Mesh>>, cfg: &TrainConfig) -> Result<Self> {
        let corpus = Corpus::new(reference, meshes, cfg.normalization, None)?;
        let train = corpus.all_segments();
        Ok(TrainSet {
            corpus,
            train,
            test: Vec::new(),
        })
    }
}

/// Loads manifests sharing one reference, keeping every `stride`-th frame
/// (on top of each manifest's own subsampling).
pub fn load_sequences(
    manifests: &[impl AsRef<Path>],
    stride: usize,
) -> Result<(Mesh, Vec<Vec<Mesh>>)> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let mut reference: Option<Mesh> = None;
    let mut out = Vec::new();
    for path in manifests {
        let (r, frames) = SequenceManifest::load(path)?.load_frames()?;
        match &reference {
            None => reference = Some(r),
            Some(existing) if existing.same_connectivity(&r) => {}
            Some(_) => {
                return Err(Error::TopologyMismatch(format!(
                    "{} uses a different mesh than the first manifest",
                    path.as_ref().display()
                )))
            }
        }
        out.push(frames.into_iter().step_by(stride).collect());
    }
    let reference = reference.ok_or_else(|| Error::InvalidArgument("no manifests given".into()))?;
    Ok((reference, out))
}
