//! Tape-level building blocks shared by the model and the standalone ops.

use std::sync::Arc;

use crate::autodiff::{NeighborMean, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub(crate) fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// `x · W + 1 · b` for `x: [B, in]`, `W: [in, out]`, `b: [1, out]`.
pub(crate) fn linear(tape: &mut Tape, x: Var, w: Var, b: Var, ones: Var) -> Result<Var> {
    let xw = tape.matmul(x, w, false, false)?;
    let bias = tape.matmul(ones, b, false, false)?;
    tape.add(xw, bias)
}

/// One mesh convolution over `[B·V, C]` rows:
/// `act(x W1ᵀ + mean_N(x) W2ᵀ + b)`. With `transpose` the weights act as
/// `W1`, `W2` (mapping the layer's output width back to its input width).
#[allow(clippy::too_many_arguments)]
pub(crate) fn mesh_conv(
    tape: &mut Tape,
    x: Var,
    w1: Var,
    w2: Var,
    bias: Option<(Var, Var)>,
    gather: &Arc<NeighborMean>,
    activation: Activation,
    transpose: bool,
) -> Result<Var> {
    let own = tape.matmul(x, w1, false, !transpose)?;
    let mean = tape.neighbor_mean(x, gather)?;
    let nb = tape.matmul(mean, w2, false, !transpose)?;
    let mut y = tape.add(own, nb)?;
    if let Some((b, ones)) = bias {
        let bb = tape.matmul(ones, b, false, false)?;
        y = tape.add(y, bb)?;
    }
    Ok(activation.apply(tape, y))
}

/// Parameters of one LSTM layer bound to a tape. Gate column order is
/// input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

/// One LSTM cell update on `[B, ·]` rows; returns `(h′, c′)`.
pub(crate) fn lstm_cell(
    tape: &mut Tape,
    x: Var,
    h: Var,
    c: Var,
    p: LstmVars,
    ones: Var,
    hidden: usize,
) -> Result<(Var, Var)> {
    let xw = tape.matmul(x, p.wx, false, false)?;
    let hw = tape.matmul(h, p.wh, false, false)?;
    let bb = tape.matmul(ones, p.b, false, false)?;
    let pre = tape.add(xw, hw)?;
    let pre = tape.add(pre, bb)?;
    let gi = tape.slice(pre, 1, 0, hidden)?;
    let gf = tape.slice(pre, 1, hidden, hidden)?;
    let gg = tape.slice(pre, 1, 2 * hidden, hidden)?;
    let go = tape.slice(pre, 1, 3 * hidden, hidden)?;
    let i = tape.sigmoid(gi);
    let f = tape.sigmoid(gf);
    let g = tape.tanh(gg);
    let o = tape.sigmoid(go);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

pub(crate) fn ones(tape: &mut Tape, rows: usize) -> Var {
    tape.constant(Tensor::filled(&[rows, 1], 1.0))
}
