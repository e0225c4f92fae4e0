use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{sample_window, Segment, TrainSet};
use super::loss::{bidirectional_on_tape, ground_truth_on_tape, loss_on_tape, LossReport};
use crate::autodiff::{Tape, Tensor};
use crate::codec::{Codec, FeatureFrame, NormalizationParams};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec3};
use crate::net::{load_checkpoint, save_checkpoint, GeneratorModel};

/// Random stream of iteration `iteration`; a resumed run draws exactly what
/// an uninterrupted one would.
pub fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&iteration.to_le_bytes());
    key[16] = 1;
    ChaCha8Rng::from_seed(key)
}

/// Random stream used for the train/test split.
pub fn split_rng(seed: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[16] = 2;
    ChaCha8Rng::from_seed(key)
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: u64,
    pub total: f64,
    pub rec: f64,
    pub bd: f64,
    pub kl: f64,
    pub l2: f64,
}

impl LogRow {
    fn new(iteration: u64, r: &LossReport) -> Self {
        LogRow {
            iteration,
            total: r.total,
            rec: r.rec,
            bd: r.bd,
            kl: r.kl,
            l2: r.l2,
        }
    }
}

pub fn write_loss_log(path: impl AsRef<Path>, rows: &[LogRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_log(path: impl AsRef<Path>) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Plain-data copy of a mesh for checkpoint metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshData {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl MeshData {
    pub fn from_mesh(m: &Mesh) -> Self {
        MeshData {
            vertices: m.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            faces: m.faces.clone(),
        }
    }

    pub fn to_mesh(&self) -> Result<Mesh> {
        Mesh::new(
            self.vertices
                .iter()
                .map(|v| Vec3::new(v[0], v[1], v[2]))
                .collect(),
            self.faces.clone(),
        )
    }
}

/// Everything besides the weights that a checkpoint must carry to resume
/// training or to drive generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub iteration: u64,
    pub config: TrainConfig,
    pub normalization: NormalizationParams,
    pub reference: MeshData,
}

/// A trained model with the codec context needed to turn its output into meshes.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: GeneratorModel,
    pub codec: Codec,
    pub normalization: NormalizationParams,
    pub meta: TrainMeta,
}

impl TrainedModel {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        let meta: TrainMeta = serde_json::from_value(ck.meta)?;
        let codec = Codec::new(meta.reference.to_mesh()?)?;
        if codec.vertex_count() != ck.model.config.vertices {
            return Err(Error::Format(
                "checkpoint mesh and network disagree on vertex count".into(),
            ));
        }
        Ok(TrainedModel {
            model: ck.model,
            codec,
            normalization: meta.normalization.clone(),
            meta,
        })
    }
}

/// Bidirectional training over a [`TrainSet`].
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub data: TrainSet,
    pub model: GeneratorModel,
    /// Completed iterations.
    pub iteration: u64,
    pub log: Vec<LogRow>,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: TrainSet) -> Result<Self> {
        config.validate()?;
        let net = config
            .model
            .net_config(data.corpus.vertex_count(), config.seed);
        let model = GeneratorModel::new(net, &data.corpus.codec.topology)?;
        Ok(Trainer {
            config,
            data,
            model,
            iteration: 0,
            log: Vec::new(),
        })
    }

    /// Picks up a run from a checkpoint written by [`Trainer::save`]. The
    /// data must be the same corpus split the run was started with.
    pub fn resume(path: impl AsRef<Path>, data: TrainSet) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        let meta: TrainMeta = serde_json::from_value(ck.meta)?;
        if ck.model.config.vertices != data.corpus.vertex_count() {
            return Err(Error::TopologyMismatch(
                "checkpoint was trained on a different mesh".into(),
            ));
        }
        if meta.normalization != data.corpus.normalization {
            return Err(Error::InvalidArgument(
                "data normalization differs from the checkpoint's".into(),
            ));
        }
        Ok(Trainer {
            config: meta.config,
            data,
            model: ck.model,
            iteration: meta.iteration,
            log: Vec::new(),
        })
    }

    pub fn meta(&self) -> TrainMeta {
        TrainMeta {
            iteration: self.iteration,
            config: self.config.clone(),
            normalization: self.data.corpus.normalization.clone(),
            reference: MeshData::from_mesh(&self.data.corpus.codec.reference),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &self.model, &serde_json::to_value(self.meta())?)
    }

    pub fn trained(&self) -> TrainedModel {
        TrainedModel {
            model: self.model.clone(),
            codec: self.data.corpus.codec.clone(),
            normalization: self.data.corpus.normalization.clone(),
            meta: self.meta(),
        }
    }

    /// Loss and gradients of one batch of windows, without updating weights.
    /// Gradients are left in the parameter store.
    pub fn batch_loss(&mut self, windows: &[Segment], eps: &[Tensor]) -> Result<LossReport> {
        let n = self.config.seq_len;
        let frames: Vec<&[FeatureFrame]> =
            windows.iter().map(|w| self.data.corpus.window(w)).collect();
        let xa: Vec<&FeatureFrame> = frames.iter().map(|w| &w[0]).collect();
        let xb: Vec<&FeatureFrame> = frames.iter().map(|w| &w[n - 1]).collect();
        let s0 = self.model.initial_state(self.config.init_state);
        let mut tape = Tape::new();
        let bidi = bidirectional_on_tape(&self.model, &mut tape, &xa, &xb, n, &s0, eps)?;
        let gt = ground_truth_on_tape(&self.model, &mut tape, &frames)?;
        let loss = loss_on_tape(&self.model, &mut tape, &bidi, &gt, &self.config.loss)?;
        let report = loss.report(&tape);
        if !report.is_finite() {
            return Err(Error::Diverged {
                iteration: self.iteration as usize + 1,
                msg: format!("non-finite loss {report:?}"),
            });
        }
        self.model.store.zero_grad();
        tape.backward_into(loss.total, &mut self.model.store)?;
        Ok(report)
    }

    /// One iteration: sample windows, run both chains, backpropagate, Adam.
    pub fn step(&mut self) -> Result<LossReport> {
        let cfg = &self.config;
        let mut rng = iteration_rng(cfg.seed, self.iteration);
        let windows = (0..cfg.batch)
            .map(|_| sample_window(&self.data.train, cfg.seq_len, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let eps: Vec<Tensor> = if cfg.sample_latent {
            (1..cfg.seq_len)
                .map(|_| self.model.draw_eps(2 * cfg.batch, &mut rng))
                .collect()
        } else {
            Vec::new()
        };
        let report = self.batch_loss(&windows, &eps)?;
        let adam = self.config.adam;
        self.model
            .store
            .adam_step(&adam)
            .map_err(|e| Error::Diverged {
                iteration: self.iteration as usize + 1,
                msg: e.to_string(),
            })?;
        self.iteration += 1;
        self.log.push(LogRow::new(self.iteration, &report));
        Ok(report)
    }

    /// Trains until `config.iterations` are done. With a checkpoint path, a
    /// checkpoint is written every `checkpoint_interval` iterations and at
    /// the end; on divergence the last written checkpoint is left untouched
    /// and the error is returned.
    pub fn run(
        &mut self,
        checkpoint: Option<&Path>,
        mut progress: impl FnMut(&LogRow),
    ) -> Result<()> {
        while self.iteration < self.config.iterations {
            self.step()?;
            progress(self.log.last().expect("just logged"));
            let every = self.config.checkpoint_interval;
            if let Some(path) = checkpoint {
                if every > 0 && self.iteration % every == 0 {
                    self.save(path)?;
                }
            }
        }
        if let Some(path) = checkpoint {
            self.save(path)?;
        }
        Ok(())
    }
}

/// Where `train_loop` writes its artifacts.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
}

impl TrainOutputs {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        TrainOutputs {
            checkpoint: dir.join("model.ckpt"),
            loss_log: dir.join("loss.csv"),
        }
    }
}

/// Splits the data, trains, and writes checkpoint and loss log. Progress
/// lines go to `progress` every `report_every` iterations (0 = silent).
pub fn train_loop(
    reference: Mesh,
    sequences: Vec<Vec<Mesh>>,
    config: TrainConfig,
    outputs: &TrainOutputs,
    report_every: u64,
    progress: &mut dyn Write,
) -> Result<Trainer> {
    config.validate()?;
    let data = TrainSet::split(reference, sequences, &config, &mut split_rng(config.seed))?;
    let mut trainer = Trainer::new(config, data)?;
    let mut io_err = None;
    let result = trainer.run(Some(&outputs.checkpoint), |row| {
        if report_every > 0 && row.iteration % report_every == 0 && io_err.is_none() {
            if let Err(e) = writeln!(
                progress,
                "iter {:>6}  total {:.6}  rec {:.6}  bd {:.6}  kl {:.6}  l2 {:.3e}",
                row.iteration, row.total, row.rec, row.bd, row.kl, row.l2
            ) {
                io_err = Some(e);
            }
        }
    });
    write_loss_log(&outputs.loss_log, &trainer.log)?;
    result?;
    Ok(trainer)
}
