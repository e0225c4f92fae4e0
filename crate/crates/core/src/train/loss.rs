use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::LossWeights;
use crate::autodiff::{Tape, Tensor, Var};
use crate::codec::FeatureFrame;
use crate::error::{Error, Result};
use crate::net::{ChainState, GeneratorModel};

/// Scalar loss terms of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub rec: f64,
    pub bd: f64,
    pub kl: f64,
    pub l2: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.total, self.rec, self.bd, self.kl, self.l2]
            .iter()
            .all(|x| x.is_finite())
    }
}

/// Both chains of a batch of windows on one tape. Every frame var is
/// `[B·V, 9]`; `mu`/`logvar` are `[2B, k]`, forward rows first.
#[derive(Debug, Clone)]
pub struct BidiVars {
    pub forward: Vec<Var>,
    pub backward: Vec<Var>,
    pub mu: Vec<Var>,
    pub logvar: Vec<Var>,
    pub windows: usize,
}

/// Loss terms living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub rec: Var,
    pub bd: Var,
    pub kl: Var,
    pub l2: Var,
}

impl LossVars {
    pub fn report(&self, tape: &Tape) -> LossReport {
        let v = |x: Var| tape.value(x).data()[0];
        LossReport {
            total: v(self.total),
            rec: v(self.rec),
            bd: v(self.bd),
            kl: v(self.kl),
            l2: v(self.l2),
        }
    }
}

/// Runs the forward chains from `xa` with state `s0` and the backward chains
/// from `xb` with `−s0`, all `2B` rows in one batch sharing the weights.
/// Each chain yields `n` frames, its start included. `eps` holds one
/// `[2B, k]` noise tensor per step (`n − 1` of them) or is empty for the
/// mean latent code.
pub fn bidirectional_on_tape(
    model: &GeneratorModel,
    tape: &mut Tape,
    xa: &[&FeatureFrame],
    xb: &[&FeatureFrame],
    n: usize,
    s0: &ChainState,
    eps: &[Tensor],
) -> Result<BidiVars> {
    let windows = xa.len();
    if windows == 0 || xb.len() != windows {
        return Err(Error::InvalidArgument(
            "need one backward endpoint per forward endpoint".into(),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "chains need at least one frame".into(),
        ));
    }
    if !eps.is_empty() && eps.len() != n - 1 {
        return Err(Error::InvalidArgument(format!(
            "{} noise draws for {} steps",
            eps.len(),
            n - 1
        )));
    }
    let rows = windows * model.config.vertices;
    let b = model.bind(tape, 2 * windows);
    let neg = s0.negated();
    let states: Vec<&ChainState> = std::iter::repeat(s0)
        .take(windows)
        .chain(std::iter::repeat(&neg).take(windows))
        .collect();
    let mut state = model.state_on_tape(tape, &states)?;
    let starts: Vec<&FeatureFrame> = xa.iter().chain(xb).copied().collect();
    let mut x = model.frames_on_tape(tape, &starts)?;
    let mut out = BidiVars {
        forward: Vec::with_capacity(n),
        backward: Vec::with_capacity(n),
        mu: Vec::with_capacity(n - 1),
        logvar: Vec::with_capacity(n - 1),
        windows,
    };
    for i in 0..n {
        out.forward.push(tape.slice(x, 0, 0, rows)?);
        out.backward.push(tape.slice(x, 0, rows, rows)?);
        if i + 1 == n {
            break;
        }
        let step = model.step_on_tape(tape, &b, &state, x, eps.get(i))?;
        out.mu.push(step.mu);
        out.logvar.push(step.logvar);
        state = step.state;
        x = step.next;
    }
    Ok(out)
}

fn mse(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

fn sum_scalars(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = tape.constant(Tensor::scalar(0.0));
    for &t in terms {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// The training objective on the tape. `gt[i]` stacks frame `i` of every
/// window as `[B·V, 9]`.
///
/// - `rec = Σᵢ mse(S_f[i], X_i) + Σᵢ mse(S_b[i], X_{n+1−i})`
/// - `bd = Σᵢ mse(S_f[i], S_b[n+1−i])`
/// - `kl`: Gaussian KL to N(0, I), summed over latent dims and averaged over rows and steps
/// - `l2`: mean square of all decaying weights
pub fn loss_on_tape(
    model: &GeneratorModel,
    tape: &mut Tape,
    bidi: &BidiVars,
    gt: &[Var],
    weights: &LossWeights,
) -> Result<LossVars> {
    let n = bidi.forward.len();
    if gt.len() != n || bidi.backward.len() != n {
        return Err(Error::Shape(format!(
            "{} ground-truth frames for chains of {} and {}",
            gt.len(),
            n,
            bidi.backward.len()
        )));
    }
    let mut rec_terms = Vec::with_capacity(2 * n);
    let mut bd_terms = Vec::with_capacity(n);
    for i in 0..n {
        rec_terms.push(mse(tape, bidi.forward[i], gt[i])?);
        rec_terms.push(mse(tape, bidi.backward[i], gt[n - 1 - i])?);
        bd_terms.push(mse(tape, bidi.forward[i], bidi.backward[n - 1 - i])?);
    }
    let rec = sum_scalars(tape, &rec_terms)?;
    let bd = sum_scalars(tape, &bd_terms)?;

    let kl = if bidi.mu.is_empty() {
        tape.constant(Tensor::scalar(0.0))
    } else {
        let rows = (2 * bidi.windows * bidi.mu.len()) as f64;
        let mut terms = Vec::with_capacity(bidi.mu.len());
        for (&mu, &lv) in bidi.mu.iter().zip(&bidi.logvar) {
            let m2 = tape.square(mu);
            let ev = tape.exp(lv);
            let a = tape.add(m2, ev)?;
            let a = tape.sub(a, lv)?;
            terms.push(tape.sum(a));
        }
        let s = sum_scalars(tape, &terms)?;
        let s = tape.scale(s, 0.5 / rows);
        let k = tape.constant(Tensor::scalar(0.5 * model.config.latent as f64));
        tape.sub(s, k)?
    };

    let decay: Vec<_> = model
        .store
        .iter()
        .filter(|(_, p)| p.decay)
        .map(|(id, p)| (id, p.value.len()))
        .collect();
    let count: usize = decay.iter().map(|d| d.1).sum();
    let mut l2_terms = Vec::with_capacity(decay.len());
    for (id, _) in decay {
        let w = tape.param(&model.store, id);
        let sq = tape.square(w);
        l2_terms.push(tape.sum(sq));
    }
    let l2 = sum_scalars(tape, &l2_terms)?;
    let l2 = tape.scale(l2, 1.0 / count.max(1) as f64);

    let reg = tape.add(kl, l2)?;
    let reg = tape.scale(reg, weights.alpha2);
    let bdw = tape.scale(bd, weights.alpha1);
    let total = tape.add(rec, bdw)?;
    let total = tape.add(total, reg)?;
    Ok(LossVars {
        total,
        rec,
        bd,
        kl,
        l2,
    })
}

/// Stacks frame `i` of every window into one tape constant per `i`.
pub fn ground_truth_on_tape(
    model: &GeneratorModel,
    tape: &mut Tape,
    windows: &[&[FeatureFrame]],
) -> Result<Vec<Var>> {
    let n = windows.first().map_or(0, |w| w.len());
    if windows.iter().any(|w| w.len() != n) {
        return Err(Error::Shape("windows differ in length".into()));
    }
    (0..n)
        .map(|i| {
            let frames: Vec<&FeatureFrame> = windows.iter().map(|w| &w[i]).collect();
            model.frames_on_tape(tape, &frames)
        })
        .collect()
}

/// Evaluates the objective for given chain outputs and latent statistics
/// (one `(μ, logvar)` pair of `[2B·k]` values per step).
#[allow(clippy::too_many_arguments)]
pub fn compute_loss(
    model: &GeneratorModel,
    forward: &[FeatureFrame],
    backward: &[FeatureFrame],
    gt: &[FeatureFrame],
    mu: &[Vec<f64>],
    logvar: &[Vec<f64>],
    weights: &LossWeights,
) -> Result<LossReport> {
    let n = gt.len();
    if forward.len() != n || backward.len() != n {
        return Err(Error::Shape(format!(
            "chains of {} and {} frames for {n} ground-truth frames",
            forward.len(),
            backward.len()
        )));
    }
    if mu.len() != logvar.len() {
        return Err(Error::Shape("μ and logvar records differ in length".into()));
    }
    let k = model.config.latent;
    let mut tape = Tape::inference();
    let put = |tape: &mut Tape, fs: &[FeatureFrame]| -> Result<Vec<Var>> {
        fs.iter()
            .map(|f| model.frames_on_tape(tape, &[f]))
            .collect()
    };
    let fwd = put(&mut tape, forward)?;
    let bwd = put(&mut tape, backward)?;
    let gtv = put(&mut tape, gt)?;
    let stat = |tape: &mut Tape, xs: &[Vec<f64>]| -> Result<Vec<Var>> {
        xs.iter()
            .map(|x| {
                if x.len() != 2 * k {
                    return Err(Error::Shape(format!(
                        "latent record of {} values, expected {}",
                        x.len(),
                        2 * k
                    )));
                }
                Ok(tape.constant(Tensor::matrix(2, k, x.clone())?))
            })
            .collect()
    };
    let muv = stat(&mut tape, mu)?;
    let lvv = stat(&mut tape, logvar)?;
    let bidi = BidiVars {
        forward: fwd,
        backward: bwd,
        mu: muv,
        logvar: lvv,
        windows: 1,
    };
    Ok(loss_on_tape(model, &mut tape, &bidi, &gtv, weights)?.report(&tape))
}

/// Both chains for a single pair of endpoints, off the tape.
pub fn bidirectional_rollout(
    model: &GeneratorModel,
    xa: &FeatureFrame,
    xb: &FeatureFrame,
    n: usize,
    s0: &ChainState,
    sample: bool,
    rng: &mut impl Rng,
) -> Result<(Vec<FeatureFrame>, Vec<FeatureFrame>)> {
    let mut tape = Tape::inference();
    let eps: Vec<Tensor> = if sample {
        (1..n).map(|_| model.draw_eps(2, rng)).collect()
    } else {
        Vec::new()
    };
    let bidi = bidirectional_on_tape(model, &mut tape, &[xa], &[xb], n, s0, &eps)?;
    let read = |vars: &[Var]| {
        vars.iter()
            .map(|&v| model.frame_from_tape(&tape, v, 0))
            .collect::<Vec<_>>()
    };
    let (f, b) = (read(&bidi.forward), read(&bidi.backward));
    if f.iter()
        .chain(&b)
        .any(|x| x.data.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite("bidirectional rollout".into()));
    }
    Ok((f, b))
}
