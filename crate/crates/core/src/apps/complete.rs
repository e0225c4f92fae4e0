//! Keyframe completion: fill in the frames between two given poses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::baseline::{baseline_linear, LinearMode};
use super::cmaes::{cmaes_minimize, CmaesConfig, CmaesResult};
use crate::codec::FeatureFrame;
use crate::error::{Error, Result};
use crate::net::{ChainState, GeneratorModel};
use crate::train::bidirectional_rollout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Bidirectional,
    Optimized,
    BaselineLinear,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bidirectional" => Ok(Strategy::Bidirectional),
            "optimized" => Ok(Strategy::Optimized),
            "baseline-linear" => Ok(Strategy::BaselineLinear),
            other => Err(Error::InvalidArgument(format!(
                "unknown completion strategy {other:?}"
            ))),
        }
    }
}

/// Complete the `n` frames from `start` to `end` (both included).
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub start: FeatureFrame,
    pub end: FeatureFrame,
    pub frames: usize,
    pub strategy: Strategy,
    /// Perturbs the initial LSTM state for a different in-between.
    pub diversity_seed: Option<u64>,
    /// Standard deviation of that perturbation.
    pub diversity_scale: f64,
    /// Crossfade width around the stitch point, in frames.
    pub blend: usize,
}

impl CompletionRequest {
    pub fn new(start: FeatureFrame, end: FeatureFrame, frames: usize, strategy: Strategy) -> Self {
        CompletionRequest {
            start,
            end,
            frames,
            strategy,
            diversity_seed: None,
            diversity_scale: 0.1,
            blend: 0,
        }
    }

    fn validate(&self, model: &GeneratorModel) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::InvalidArgument(format!(
                "a completed segment has at least 2 frames, got {}",
                self.frames
            )));
        }
        for f in [&self.start, &self.end] {
            if !f.normalized {
                return Err(Error::InvalidArgument(
                    "keyframes must be normalized features".into(),
                ));
            }
            if f.vertex_count() != model.config.vertices {
                return Err(Error::Shape(format!(
                    "keyframe has {} vertices, model expects {}",
                    f.vertex_count(),
                    model.config.vertices
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub frames: Vec<FeatureFrame>,
    /// 1-based frame where the forward chain hands over (bidirectional only).
    pub stitch: Option<usize>,
    /// Optimizer outcome (optimized only).
    pub search: Option<CmaesResult>,
}

fn mse(a: &FeatureFrame, b: &FeatureFrame) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64
}

fn lerp(a: &FeatureFrame, b: &FeatureFrame, t: f64) -> FeatureFrame {
    FeatureFrame {
        data: a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| x + t * (y - x))
            .collect(),
        normalized: a.normalized,
    }
}

/// Forward initial state, optionally perturbed by a seeded Gaussian.
pub fn completion_state(base: &ChainState, seed: Option<u64>, scale: f64) -> ChainState {
    let Some(seed) = seed else {
        return base.clone();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = |v: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        v.iter()
            .map(|l| {
                l.iter()
                    .map(|x| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x + scale * e
                    })
                    .collect()
            })
            .collect()
    };
    let h = noisy(&base.h);
    let c = noisy(&base.c);
    ChainState { h, c }
}

/// Index `i*` (1-based, `1 ≤ i* < n`) minimizing `mse(S_f[i], S_b[n+1−i])`.
pub fn stitch_index(forward: &[FeatureFrame], backward: &[FeatureFrame]) -> usize {
    let n = forward.len();
    (1..n)
        .min_by(|&i, &j| {
            let d = |i: usize| mse(&forward[i - 1], &backward[n - i]);
            d(i).total_cmp(&d(j))
        })
        .unwrap_or(1)
}

/// Joins the chains at `i*`: frames `1..=i*` from the forward chain, the
/// rest from the reversed backward chain, with a linear crossfade over
/// `blend` frames centred on the joint. The endpoints are never blended.
pub fn stitch(
    forward: &[FeatureFrame],
    backward: &[FeatureFrame],
    istar: usize,
    blend: usize,
) -> Vec<FeatureFrame> {
    let n = forward.len();
    let from_back = |j: usize| &backward[n - j];
    let mut out: Vec<FeatureFrame> = (1..=n)
        .map(|j| {
            if j <= istar {
                forward[j - 1].clone()
            } else {
                from_back(j).clone()
            }
        })
        .collect();
    if blend > 0 {
        // blend weight of the backward chain rises linearly across [lo, hi]
        let lo = istar as f64 + 0.5 - blend as f64 / 2.0;
        for j in 2..n {
            let t = (j as f64 - lo + 0.5) / (blend as f64 + 1.0);
            if t > 0.0 && t < 1.0 {
                out[j - 1] = lerp(&forward[j - 1], from_back(j), t);
            }
        }
    }
    out
}

/// Runs both chains from the keyframes (forward state `s`, backward `−s`)
/// and stitches them where they agree best.
pub fn complete_bidirectional(
    model: &GeneratorModel,
    req: &CompletionRequest,
    base_state: &ChainState,
) -> Result<Completion> {
    req.validate(model)?;
    let s0 = completion_state(base_state, req.diversity_seed, req.diversity_scale);
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let (f, b) = bidirectional_rollout(
        model,
        &req.start,
        &req.end,
        req.frames,
        &s0,
        false,
        &mut unused,
    )?;
    let istar = stitch_index(&f, &b);
    let mut frames = stitch(&f, &b, istar, req.blend);
    pin_endpoints(&mut frames, req);
    Ok(Completion {
        frames,
        stitch: Some(istar),
        search: None,
    })
}

fn pin_endpoints(frames: &mut [FeatureFrame], req: &CompletionRequest) {
    let n = frames.len();
    frames[0] = req.start.clone();
    frames[n - 1] = req.end.clone();
}

/// Root-mean-square gap between the end of an `n − 1`-step chain started
/// in each state and the target keyframe, with the generated frames.
fn endpoint_errors(
    model: &GeneratorModel,
    req: &CompletionRequest,
    states: &[ChainState],
) -> Result<Vec<(f64, Vec<FeatureFrame>)>> {
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let initial = vec![vec![req.start.clone()]; states.len()];
    let runs = model.rollout_batch(&initial, req.frames - 1, states, false, &mut unused)?;
    Ok(runs
        .into_iter()
        .map(|(frames, _)| (mse(frames.last().expect("n >= 2"), &req.end).sqrt(), frames))
        .collect())
}

/// Searches the forward initial state with CMA-ES so that the unidirectional
/// rollout from the start keyframe lands on the end keyframe, starting the
/// search at `base_state`.
pub fn complete_optimized(
    model: &GeneratorModel,
    req: &CompletionRequest,
    base_state: &ChainState,
    cfg: &CmaesConfig,
) -> Result<Completion> {
    req.validate(model)?;
    let (layers, hidden) = (model.config.lstm_layers, model.config.lstm_hidden);
    let objective = |xs: &[Vec<f64>]| -> Result<Vec<f64>> {
        let states = xs
            .iter()
            .map(|x| ChainState::from_flat(layers, hidden, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(endpoint_errors(model, req, &states)?
            .into_iter()
            .map(|(e, _)| e)
            .collect())
    };
    let search = cmaes_minimize(objective, &base_state.to_flat(), cfg)?;
    let best = ChainState::from_flat(layers, hidden, &search.best)?;
    let (_, generated) = endpoint_errors(model, req, &[best])?
        .pop()
        .expect("one chain");
    let mut frames = Vec::with_capacity(req.frames);
    frames.push(req.start.clone());
    frames.extend(generated);
    pin_endpoints(&mut frames, req);
    Ok(Completion {
        frames,
        stitch: None,
        search: Some(search),
    })
}

/// Dispatches on the request's strategy.
pub fn complete(
    model: &GeneratorModel,
    req: &CompletionRequest,
    base_state: &ChainState,
    cmaes: &CmaesConfig,
) -> Result<Completion> {
    match req.strategy {
        Strategy::Bidirectional => complete_bidirectional(model, req, base_state),
        Strategy::Optimized => complete_optimized(model, req, base_state, cmaes),
        Strategy::BaselineLinear => {
            req.validate(model)?;
            let mut frames =
                baseline_linear(&req.start, &req.end, req.frames, LinearMode::Interpolate)?;
            pin_endpoints(&mut frames, req);
            Ok(Completion {
                frames,
                stitch: None,
                search: None,
            })
        }
    }
}
