use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::{self, Activation, LstmVars};
use crate::autodiff::{NeighborMean, ParamId, ParamStore, Tape, Tensor, Var};
use crate::codec::{FeatureFrame, CHANNELS};
use crate::error::{Error, Result};
use crate::mesh::Topology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub vertices: usize,
    /// Output widths of the encoder convolutions; the input width is 9.
    pub conv_widths: Vec<usize>,
    /// Latent dimension k.
    pub latent: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    /// Seed for weight initialization.
    pub init_seed: u64,
}

impl NetConfig {
    pub fn new(vertices: usize) -> Self {
        NetConfig {
            vertices,
            conv_widths: vec![32, 64, 128],
            latent: 128,
            lstm_layers: 3,
            lstm_hidden: 128,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices == 0
            || self.conv_widths.is_empty()
            || self.latent == 0
            || self.lstm_layers == 0
            || self.lstm_hidden == 0
        {
            return Err(Error::InvalidArgument(format!(
                "degenerate network config {self:?}"
            )));
        }
        if self.conv_widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "conv widths must be positive".into(),
            ));
        }
        Ok(())
    }

    fn top_width(&self) -> usize {
        *self.conv_widths.last().expect("validated")
    }

    /// Flattened encoder output size `V · C_last`.
    pub fn flat_width(&self) -> usize {
        self.vertices * self.top_width()
    }
}

/// Hidden and cell vectors per LSTM layer for one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl ChainState {
    pub fn filled(layers: usize, hidden: usize, value: f64) -> Self {
        ChainState {
            h: vec![vec![value; hidden]; layers],
            c: vec![vec![value; hidden]; layers],
        }
    }

    pub fn negated(&self) -> Self {
        let neg = |v: &Vec<Vec<f64>>| v.iter().map(|l| l.iter().map(|x| -x).collect()).collect();
        ChainState {
            h: neg(&self.h),
            c: neg(&self.c),
        }
    }

    /// `[h_0, …, h_L, c_0, …, c_L]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.h.iter().chain(&self.c).flatten().copied().collect()
    }

    pub fn from_flat(layers: usize, hidden: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * layers * hidden {
            return Err(Error::Shape(format!(
                "state vector has {} values, expected {}",
                flat.len(),
                2 * layers * hidden
            )));
        }
        let mut chunks = flat.chunks(hidden).map(<[f64]>::to_vec);
        let h = (&mut chunks).take(layers).collect();
        let c = chunks.collect();
        Ok(ChainState { h, c })
    }

    pub fn is_finite(&self) -> bool {
        self.h
            .iter()
            .chain(&self.c)
            .flatten()
            .all(|x| x.is_finite())
    }

    fn check(&self, cfg: &NetConfig) -> Result<()> {
        let ok = |v: &Vec<Vec<f64>>| {
            v.len() == cfg.lstm_layers && v.iter().all(|l| l.len() == cfg.lstm_hidden)
        };
        if !ok(&self.h) || !ok(&self.c) {
            return Err(Error::Shape(format!(
                "chain state does not match {} layers × {} hidden",
                cfg.lstm_layers, cfg.lstm_hidden
            )));
        }
        Ok(())
    }
}

/// A standalone mesh convolution (weights `out × in`).
#[derive(Debug, Clone, PartialEq)]
pub struct MeshConvLayer {
    pub w1: Tensor,
    pub w2: Tensor,
    pub b: Vec<f64>,
    pub activation: Activation,
}

/// `y_i = act(W1 x_i + W2 · mean_{j∈N(i)} x_j + b)` for `x` laid out `V × in`.
pub fn mesh_conv_forward(x: &Tensor, layer: &MeshConvLayer, topo: &Topology) -> Result<Tensor> {
    let (_, cin) = x.dims2()?;
    let (out, win) = layer.w1.dims2()?;
    if layer.w2.shape() != layer.w1.shape() || layer.b.len() != out || win != cin {
        return Err(Error::Shape(format!(
            "conv layer {:?}/{:?}/{} does not accept {cin} channels",
            layer.w1.shape(),
            layer.w2.shape(),
            layer.b.len()
        )));
    }
    let gather = Arc::new(NeighborMean::new(topo)?);
    let mut tape = Tape::inference();
    let xv = tape.constant(x.clone());
    let w1 = tape.constant(layer.w1.clone());
    let w2 = tape.constant(layer.w2.clone());
    let b = tape.constant(Tensor::matrix(1, out, layer.b.clone())?);
    let ones = layers::ones(&mut tape, x.dims2()?.0);
    let y = layers::mesh_conv(
        &mut tape,
        xv,
        w1,
        w2,
        Some((b, ones)),
        &gather,
        layer.activation,
        false,
    )?;
    Ok(tape.value(y).clone())
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ModelIds {
    conv: Vec<[ParamId; 3]>,
    mu: [ParamId; 2],
    logvar: [ParamId; 2],
    lstm: Vec<[ParamId; 3]>,
    out: [ParamId; 2],
    dec_fc: [ParamId; 2],
}

impl ModelIds {
    pub(crate) fn resolve(store: &ParamStore, cfg: &NetConfig) -> Result<Self> {
        let get = |name: String| {
            store
                .id(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name:?}")))
        };
        let pair = |p: &str| -> Result<[ParamId; 2]> {
            Ok([get(format!("{p}.w"))?, get(format!("{p}.b"))?])
        };
        Ok(ModelIds {
            conv: (0..cfg.conv_widths.len())
                .map(|l| {
                    Ok([
                        get(format!("conv{l}.w1"))?,
                        get(format!("conv{l}.w2"))?,
                        get(format!("conv{l}.b"))?,
                    ])
                })
                .collect::<Result<_>>()?,
            mu: pair("head.mu")?,
            logvar: pair("head.logvar")?,
            lstm: (0..cfg.lstm_layers)
                .map(|l| {
                    Ok([
                        get(format!("lstm{l}.wx"))?,
                        get(format!("lstm{l}.wh"))?,
                        get(format!("lstm{l}.b"))?,
                    ])
                })
                .collect::<Result<_>>()?,
            out: pair("out")?,
            dec_fc: pair("dec.fc")?,
        })
    }
}

/// Parameters of a model bound to one tape, plus the bias ones-columns for
/// a batch of `B` chains.
#[derive(Debug, Clone)]
pub struct Bound {
    conv: Vec<[Var; 3]>,
    mu: [Var; 2],
    logvar: [Var; 2],
    lstm: Vec<LstmVars>,
    out: [Var; 2],
    dec_fc: [Var; 2],
    ones_batch: Var,
    ones_vertices: Var,
    pub batch: usize,
}

/// Chain states of a batch, living on a tape.
#[derive(Debug, Clone)]
pub struct TapeState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

/// Everything one generator step leaves on the tape.
#[derive(Debug, Clone)]
pub struct StepVars {
    pub state: TapeState,
    pub next: Var,
    pub mu: Var,
    pub logvar: Var,
}

/// Latent code of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub z: Vec<f64>,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

/// Mesh-conv encoder, latent head, stacked LSTM and weight-shared decoder.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    pub config: NetConfig,
    pub neighbors: Vec<Vec<usize>>,
    pub store: ParamStore,
    pub(crate) ids: ModelIds,
    gather: Arc<NeighborMean>,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, shape: &[usize]) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-a..a)).collect(),
    )
    .expect("sized")
}

impl GeneratorModel {
    /// Fresh Glorot-initialized weights, zero biases except a forget-gate bias of 1.
    pub fn new(config: NetConfig, topo: &Topology) -> Result<Self> {
        config.validate()?;
        if topo.vertex_count() != config.vertices {
            return Err(Error::TopologyMismatch(format!(
                "config expects {} vertices, topology has {}",
                config.vertices,
                topo.vertex_count()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let mut cin = CHANNELS;
        for (l, &cout) in config.conv_widths.iter().enumerate() {
            store.add(
                format!("conv{l}.w1"),
                glorot(&mut rng, 2 * cin, cout, &[cout, cin]),
                true,
            )?;
            store.add(
                format!("conv{l}.w2"),
                glorot(&mut rng, 2 * cin, cout, &[cout, cin]),
                true,
            )?;
            store.add(format!("conv{l}.b"), Tensor::zeros(&[1, cout]), false)?;
            cin = cout;
        }
        let (flat, k, h) = (config.flat_width(), config.latent, config.lstm_hidden);
        for head in ["head.mu", "head.logvar"] {
            store.add(
                format!("{head}.w"),
                glorot(&mut rng, flat, k, &[flat, k]),
                true,
            )?;
            store.add(format!("{head}.b"), Tensor::zeros(&[1, k]), false)?;
        }
        for l in 0..config.lstm_layers {
            let input = if l == 0 { k } else { h };
            store.add(
                format!("lstm{l}.wx"),
                glorot(&mut rng, input, 4 * h, &[input, 4 * h]),
                true,
            )?;
            store.add(
                format!("lstm{l}.wh"),
                glorot(&mut rng, h, 4 * h, &[h, 4 * h]),
                true,
            )?;
            let mut b = Tensor::zeros(&[1, 4 * h]);
            b.data_mut()[h..2 * h].iter_mut().for_each(|x| *x = 1.0);
            store.add(format!("lstm{l}.b"), b, false)?;
        }
        store.add("out.w", glorot(&mut rng, h, k, &[h, k]), true)?;
        store.add("out.b", Tensor::zeros(&[1, k]), false)?;
        store.add("dec.fc.w", glorot(&mut rng, k, flat, &[k, flat]), true)?;
        store.add("dec.fc.b", Tensor::zeros(&[1, flat]), false)?;
        Self::from_parts(config, topo.neighbors.clone(), store)
    }

    pub(crate) fn from_parts(
        config: NetConfig,
        neighbors: Vec<Vec<usize>>,
        store: ParamStore,
    ) -> Result<Self> {
        config.validate()?;
        if neighbors.len() != config.vertices {
            return Err(Error::TopologyMismatch(
                "neighbor lists do not match vertex count".into(),
            ));
        }
        let ids = ModelIds::resolve(&store, &config)?;
        let gather = Arc::new(NeighborMean::from_lists(&neighbors)?);
        let model = GeneratorModel {
            config,
            neighbors,
            store,
            ids,
            gather,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let expect = |id: ParamId, shape: &[usize]| -> Result<()> {
            let p = self.store.get(id);
            if p.value.shape() != shape {
                return Err(Error::Format(format!(
                    "parameter {} has shape {:?}, expected {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
            Ok(())
        };
        let cfg = &self.config;
        let mut cin = CHANNELS;
        for (ids, &cout) in self.ids.conv.iter().zip(&cfg.conv_widths) {
            expect(ids[0], &[cout, cin])?;
            expect(ids[1], &[cout, cin])?;
            expect(ids[2], &[1, cout])?;
            cin = cout;
        }
        let (flat, k, h) = (cfg.flat_width(), cfg.latent, cfg.lstm_hidden);
        for ids in [self.ids.mu, self.ids.logvar] {
            expect(ids[0], &[flat, k])?;
            expect(ids[1], &[1, k])?;
        }
        for (l, ids) in self.ids.lstm.iter().enumerate() {
            expect(ids[0], &[if l == 0 { k } else { h }, 4 * h])?;
            expect(ids[1], &[h, 4 * h])?;
            expect(ids[2], &[1, 4 * h])?;
        }
        expect(self.ids.out[0], &[h, k])?;
        expect(self.ids.dec_fc[0], &[k, flat])?;
        Ok(())
    }

    pub fn gather(&self) -> &Arc<NeighborMean> {
        &self.gather
    }

    /// Number of parameters owned by the decoder's convolutions (always 0:
    /// they reuse the encoder's weights).
    pub fn decoder_conv_param_count(&self) -> usize {
        self.store
            .iter()
            .filter(|(_, p)| {
                p.name.starts_with("dec.") && p.name != "dec.fc.w" && p.name != "dec.fc.b"
            })
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn initial_state(&self, magnitude: f64) -> ChainState {
        ChainState::filled(self.config.lstm_layers, self.config.lstm_hidden, magnitude)
    }

    /// Encoder layer `l` as a standalone convolution.
    pub fn conv_layer(&self, l: usize) -> MeshConvLayer {
        let ids = self.ids.conv[l];
        MeshConvLayer {
            w1: self.store.value(ids[0]).clone(),
            w2: self.store.value(ids[1]).clone(),
            b: self.store.value(ids[2]).data().to_vec(),
            activation: Activation::Tanh,
        }
    }

    /// Parameter ids of encoder layer `l` as `[W1, W2, b]`.
    pub fn conv_ids(&self, l: usize) -> [ParamId; 3] {
        self.ids.conv[l]
    }

    /// Parameter ids of the decoder's input FC as `[W, b]`.
    pub fn decoder_fc_ids(&self) -> [ParamId; 2] {
        self.ids.dec_fc
    }

    /// Parameter ids of the LSTM output FC as `[W, b]`.
    pub fn output_fc_ids(&self) -> [ParamId; 2] {
        self.ids.out
    }

    /// Puts every parameter on `tape` for a batch of `batch` chains.
    pub fn bind(&self, tape: &mut Tape, batch: usize) -> Bound {
        let s = &self.store;
        let pair =
            |tape: &mut Tape, ids: [ParamId; 2]| [tape.param(s, ids[0]), tape.param(s, ids[1])];
        let conv = self
            .ids
            .conv
            .iter()
            .map(|ids| {
                [
                    tape.param(s, ids[0]),
                    tape.param(s, ids[1]),
                    tape.param(s, ids[2]),
                ]
            })
            .collect();
        let mu = pair(tape, self.ids.mu);
        let logvar = pair(tape, self.ids.logvar);
        let lstm = self
            .ids
            .lstm
            .iter()
            .map(|ids| LstmVars {
                wx: tape.param(s, ids[0]),
                wh: tape.param(s, ids[1]),
                b: tape.param(s, ids[2]),
            })
            .collect();
        let out = pair(tape, self.ids.out);
        let dec_fc = pair(tape, self.ids.dec_fc);
        let ones_batch = layers::ones(tape, batch);
        let ones_vertices = layers::ones(tape, batch * self.config.vertices);
        Bound {
            conv,
            mu,
            logvar,
            lstm,
            out,
            dec_fc,
            ones_batch,
            ones_vertices,
            batch,
        }
    }

    /// Stacks per-chain states into tape constants.
    pub fn state_on_tape(&self, tape: &mut Tape, states: &[&ChainState]) -> Result<TapeState> {
        for s in states {
            s.check(&self.config)?;
        }
        let (layers_n, h) = (self.config.lstm_layers, self.config.lstm_hidden);
        let stack = |tape: &mut Tape, pick: &dyn Fn(&ChainState) -> &Vec<Vec<f64>>, l: usize| {
            let data = states
                .iter()
                .flat_map(|s| pick(s)[l].iter().copied())
                .collect();
            tape.constant(Tensor::matrix(states.len(), h, data).expect("sized"))
        };
        let hs = (0..layers_n).map(|l| stack(tape, &|s| &s.h, l)).collect();
        let cs = (0..layers_n).map(|l| stack(tape, &|s| &s.c, l)).collect();
        Ok(TapeState { h: hs, c: cs })
    }

    /// Reads row `row` of a tape state back out.
    pub fn state_from_tape(&self, tape: &Tape, state: &TapeState, row: usize) -> ChainState {
        let h = self.config.lstm_hidden;
        let read = |vars: &[Var]| {
            vars.iter()
                .map(|v| tape.value(*v).data()[row * h..(row + 1) * h].to_vec())
                .collect()
        };
        ChainState {
            h: read(&state.h),
            c: read(&state.c),
        }
    }

    /// Stacks frames into a `[B·V, 9]` tape constant.
    pub fn frames_on_tape(&self, tape: &mut Tape, frames: &[&FeatureFrame]) -> Result<Var> {
        let v = self.config.vertices;
        let mut data = Vec::with_capacity(frames.len() * v * CHANNELS);
        for f in frames {
            if f.vertex_count() != v {
                return Err(Error::Shape(format!(
                    "frame has {} vertices, model expects {v}",
                    f.vertex_count()
                )));
            }
            data.extend_from_slice(&f.data);
        }
        Ok(tape.constant(Tensor::matrix(frames.len() * v, CHANNELS, data)?))
    }

    /// Row `row` of a `[B·V, 9]` tape value as a normalized frame.
    pub fn frame_from_tape(&self, tape: &Tape, x: Var, row: usize) -> FeatureFrame {
        let n = self.config.vertices * CHANNELS;
        FeatureFrame {
            data: tape.value(x).data()[row * n..(row + 1) * n].to_vec(),
            normalized: true,
        }
    }

    /// Encoder on the tape: `(μ, logvar)`, each `[B, k]`.
    pub fn encode_on_tape(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        for c in &b.conv {
            h = layers::mesh_conv(
                tape,
                h,
                c[0],
                c[1],
                Some((c[2], b.ones_vertices)),
                &self.gather,
                Activation::Tanh,
                false,
            )?;
        }
        let flat = tape.reshape(h, vec![b.batch, self.config.flat_width()])?;
        let mu = layers::linear(tape, flat, b.mu[0], b.mu[1], b.ones_batch)?;
        let logvar = layers::linear(tape, flat, b.logvar[0], b.logvar[1], b.ones_batch)?;
        Ok((mu, logvar))
    }

    /// `z = μ + exp(logvar / 2) ⊙ ε`, or `μ` when `eps` is `None`.
    pub fn reparameterize(
        &self,
        tape: &mut Tape,
        mu: Var,
        logvar: Var,
        eps: Option<&Tensor>,
    ) -> Result<Var> {
        let Some(eps) = eps else { return Ok(mu) };
        let half = tape.scale(logvar, 0.5);
        let sigma = tape.exp(half);
        let e = tape.constant(eps.clone());
        let noise = tape.mul(sigma, e)?;
        tape.add(mu, noise)
    }

    /// Stacked LSTM then output FC: `(ẑ, state′)`.
    pub fn lstm_on_tape(
        &self,
        tape: &mut Tape,
        b: &Bound,
        z: Var,
        state: &TapeState,
    ) -> Result<(Var, TapeState)> {
        let mut input = z;
        let mut next = TapeState {
            h: Vec::with_capacity(b.lstm.len()),
            c: Vec::with_capacity(b.lstm.len()),
        };
        for (l, p) in b.lstm.iter().enumerate() {
            let (h, c) = layers::lstm_cell(
                tape,
                input,
                state.h[l],
                state.c[l],
                *p,
                b.ones_batch,
                self.config.lstm_hidden,
            )?;
            next.h.push(h);
            next.c.push(c);
            input = h;
        }
        let zhat = layers::linear(tape, input, b.out[0], b.out[1], b.ones_batch)?;
        Ok((zhat, next))
    }

    /// FC then transposed convolutions reusing the encoder weights in
    /// reverse order; tanh between layers, linear output. `[B·V, 9]`.
    pub fn decode_on_tape(&self, tape: &mut Tape, b: &Bound, zhat: Var) -> Result<Var> {
        let flat = layers::linear(tape, zhat, b.dec_fc[0], b.dec_fc[1], b.ones_batch)?;
        let mut h = tape.reshape(
            flat,
            vec![b.batch * self.config.vertices, self.config.top_width()],
        )?;
        let last = b.conv.len() - 1;
        for (k, c) in b.conv.iter().rev().enumerate() {
            let act = if k == last {
                Activation::Identity
            } else {
                Activation::Tanh
            };
            h = layers::mesh_conv(tape, h, c[0], c[1], None, &self.gather, act, true)?;
        }
        Ok(h)
    }

    /// One application of G on the tape: `X′ = X + decode(lstm(encode(X)))`.
    pub fn step_on_tape(
        &self,
        tape: &mut Tape,
        b: &Bound,
        state: &TapeState,
        x: Var,
        eps: Option<&Tensor>,
    ) -> Result<StepVars> {
        let (mu, logvar) = self.encode_on_tape(tape, b, x)?;
        let z = self.reparameterize(tape, mu, logvar, eps)?;
        let (zhat, state) = self.lstm_on_tape(tape, b, z, state)?;
        let delta = self.decode_on_tape(tape, b, zhat)?;
        let next = tape.add(x, delta)?;
        Ok(StepVars {
            state,
            next,
            mu,
            logvar,
        })
    }

    /// Standard-normal noise for `rows` latent draws.
    pub fn draw_eps(&self, rows: usize, rng: &mut impl Rng) -> Tensor {
        let k = self.config.latent;
        Tensor::matrix(
            rows,
            k,
            (0..rows * k).map(|_| rng.sample(StandardNormal)).collect(),
        )
        .expect("sized")
    }

    fn check_frame(&self, x: &FeatureFrame) -> Result<()> {
        if !x.normalized {
            return Err(Error::InvalidArgument(
                "network input must be a normalized frame".into(),
            ));
        }
        if x.vertex_count() != self.config.vertices {
            return Err(Error::Shape(format!(
                "frame has {} vertices, model expects {}",
                x.vertex_count(),
                self.config.vertices
            )));
        }
        Ok(())
    }

    pub fn encode_latent(
        &self,
        x: &FeatureFrame,
        sample: bool,
        rng: &mut impl Rng,
    ) -> Result<Latent> {
        self.check_frame(x)?;
        let mut tape = Tape::inference();
        let b = self.bind(&mut tape, 1);
        let xv = self.frames_on_tape(&mut tape, &[x])?;
        let (mu, logvar) = self.encode_on_tape(&mut tape, &b, xv)?;
        let eps = sample.then(|| self.draw_eps(1, rng));
        let z = self.reparameterize(&mut tape, mu, logvar, eps.as_ref())?;
        if !tape.value(z).is_finite() {
            return Err(Error::NonFinite("latent code".into()));
        }
        Ok(Latent {
            z: tape.value(z).data().to_vec(),
            mu: tape.value(mu).data().to_vec(),
            logvar: tape.value(logvar).data().to_vec(),
        })
    }

    pub fn lstm_step(&self, z: &[f64], s: &ChainState) -> Result<(Vec<f64>, ChainState)> {
        if z.len() != self.config.latent {
            return Err(Error::Shape(format!(
                "latent has {} values, expected {}",
                z.len(),
                self.config.latent
            )));
        }
        let mut tape = Tape::inference();
        let b = self.bind(&mut tape, 1);
        let st = self.state_on_tape(&mut tape, &[s])?;
        let zv = tape.constant(Tensor::matrix(1, z.len(), z.to_vec())?);
        let (zhat, next) = self.lstm_on_tape(&mut tape, &b, zv, &st)?;
        Ok((
            tape.value(zhat).data().to_vec(),
            self.state_from_tape(&tape, &next, 0),
        ))
    }

    pub fn decode_delta(&self, zhat: &[f64]) -> Result<FeatureFrame> {
        if zhat.len() != self.config.latent {
            return Err(Error::Shape(format!(
                "latent has {} values, expected {}",
                zhat.len(),
                self.config.latent
            )));
        }
        let mut tape = Tape::inference();
        let b = self.bind(&mut tape, 1);
        let zv = tape.constant(Tensor::matrix(1, zhat.len(), zhat.to_vec())?);
        let d = self.decode_on_tape(&mut tape, &b, zv)?;
        Ok(self.frame_from_tape(&tape, d, 0))
    }

    /// The map G(s, X) → (s′, X′).
    pub fn generator_step(
        &self,
        s: &ChainState,
        x: &FeatureFrame,
        sample: bool,
        rng: &mut impl Rng,
    ) -> Result<(ChainState, FeatureFrame)> {
        let mut out = self.rollout_batch(&[vec![x.clone()]], 1, &[s.clone()], sample, rng)?;
        let (frames, state) = out.pop().expect("one chain");
        Ok((state, frames.into_iter().next().expect("one frame")))
    }

    /// Feeds `initial` in order (ground truth, outputs discarded), then
    /// iterates G `n` times from the last initial frame.
    pub fn rollout(
        &self,
        initial: &[FeatureFrame],
        n: usize,
        s0: &ChainState,
        sample: bool,
        rng: &mut impl Rng,
    ) -> Result<Vec<FeatureFrame>> {
        let mut out = self.rollout_batch(&[initial.to_vec()], n, &[s0.clone()], sample, rng)?;
        Ok(out.pop().expect("one chain").0)
    }

    /// [`rollout`](Self::rollout) for several chains in one pass; every
    /// chain needs the same number of initial frames. Returns each chain's
    /// frames and final state.
    pub fn rollout_batch(
        &self,
        initial: &[Vec<FeatureFrame>],
        n: usize,
        s0: &[ChainState],
        sample: bool,
        rng: &mut impl Rng,
    ) -> Result<Vec<(Vec<FeatureFrame>, ChainState)>> {
        let batch = initial.len();
        if batch == 0 || s0.len() != batch {
            return Err(Error::InvalidArgument(
                "rollout needs one state per chain".into(),
            ));
        }
        let u = initial[0].len();
        if u == 0 {
            return Err(Error::InvalidArgument(
                "rollout needs at least one initial frame".into(),
            ));
        }
        if initial.iter().any(|c| c.len() != u) {
            return Err(Error::InvalidArgument(
                "all chains need the same number of initial frames".into(),
            ));
        }
        for f in initial.iter().flatten() {
            self.check_frame(f)?;
        }
        let mut tape = Tape::inference();
        let b = self.bind(&mut tape, batch);
        let refs: Vec<&ChainState> = s0.iter().collect();
        let mut state = self.state_on_tape(&mut tape, &refs)?;
        let mut outputs: Vec<Vec<FeatureFrame>> = vec![Vec::with_capacity(n); batch];
        if n == 0 {
            return Ok(outputs.into_iter().zip(s0.iter().cloned()).collect());
        }
        for t in 0..u - 1 {
            let frames: Vec<&FeatureFrame> = initial.iter().map(|c| &c[t]).collect();
            let x = self.frames_on_tape(&mut tape, &frames)?;
            let eps = sample.then(|| self.draw_eps(batch, rng));
            state = self
                .step_on_tape(&mut tape, &b, &state, x, eps.as_ref())?
                .state;
        }
        let last: Vec<&FeatureFrame> = initial.iter().map(|c| &c[u - 1]).collect();
        let mut x = self.frames_on_tape(&mut tape, &last)?;
        for _ in 0..n {
            let eps = sample.then(|| self.draw_eps(batch, rng));
            let step = self.step_on_tape(&mut tape, &b, &state, x, eps.as_ref())?;
            if !tape.value(step.next).is_finite() {
                return Err(Error::NonFinite("generated frame".into()));
            }
            for (row, out) in outputs.iter_mut().enumerate() {
                out.push(self.frame_from_tape(&tape, step.next, row));
            }
            state = step.state;
            x = step.next;
        }
        Ok(outputs
            .into_iter()
            .enumerate()
            .map(|(row, frames)| (frames, self.state_from_tape(&tape, &state, row)))
            .collect())
    }
}
