//! Python bindings: meshes, the feature codec, training, generation,
//! completion and evaluation.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use meshseq_core::apps::{
    self, CmaesConfig, CompletionRequest, LinearMode, Strategy, SynthKind, SynthSpec,
};
use meshseq_core::codec::{self, Vec3, ANCHOR_VERTEX};
use meshseq_core::mesh;
use meshseq_core::train::{self, LogRow, TrainConfig};
use meshseq_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn point(p: [f64; 3]) -> Vec3 {
    Vec3::new(p[0], p[1], p[2])
}

/// Triangle mesh with fixed connectivity.
#[pyclass(module = "meshseq", from_py_object)]
#[derive(Clone)]
pub struct Mesh {
    inner: mesh::Mesh,
}

#[pymethods]
impl Mesh {
    #[new]
    fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> PyResult<Self> {
        let inner =
            mesh::Mesh::new(vertices.into_iter().map(point).collect(), faces).map_err(py_err)?;
        Ok(Mesh { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Mesh {
            inner: mesh::load_obj(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        mesh::save_obj(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn vertices(&self) -> Vec<[f64; 3]> {
        self.inner
            .vertices
            .iter()
            .map(|v| [v.x, v.y, v.z])
            .collect()
    }

    #[getter]
    fn faces(&self) -> Vec<[usize; 3]> {
        self.inner.faces.clone()
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    fn bbox_diagonal(&self) -> f64 {
        self.inner.bbox_diagonal()
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh({} vertices, {} faces)",
            self.inner.vertex_count(),
            self.inner.faces.len()
        )
    }
}

fn meshes(list: &[Mesh]) -> Vec<mesh::Mesh> {
    list.iter().map(|m| m.inner.clone()).collect()
}

fn wrap_meshes(list: Vec<mesh::Mesh>) -> Vec<Mesh> {
    list.into_iter().map(|inner| Mesh { inner }).collect()
}

/// Per-vertex 9-channel feature frame.
#[pyclass(module = "meshseq", from_py_object)]
#[derive(Clone)]
pub struct FeatureFrame {
    inner: codec::FeatureFrame,
}

#[pymethods]
impl FeatureFrame {
    #[new]
    #[pyo3(signature = (rows, normalized = true))]
    fn new(rows: Vec<[f64; 9]>, normalized: bool) -> Self {
        FeatureFrame {
            inner: codec::FeatureFrame {
                data: rows.into_iter().flatten().collect(),
                normalized,
            },
        }
    }

    /// One row of 9 values per vertex.
    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner
            .data
            .chunks(codec::CHANNELS)
            .map(<[f64]>::to_vec)
            .collect()
    }

    #[getter]
    fn normalized(&self) -> bool {
        self.inner.normalized
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }
}

fn frames(list: &[FeatureFrame]) -> Vec<codec::FeatureFrame> {
    list.iter().map(|f| f.inner.clone()).collect()
}

fn wrap_frames(list: Vec<codec::FeatureFrame>) -> Vec<FeatureFrame> {
    list.into_iter()
        .map(|inner| FeatureFrame { inner })
        .collect()
}

/// Mesh ⇄ feature codec bound to a reference mesh.
#[pyclass(module = "meshseq", from_py_object)]
#[derive(Clone)]
pub struct Codec {
    inner: codec::Codec,
}

#[pymethods]
impl Codec {
    #[new]
    fn new(reference: &Mesh) -> PyResult<Self> {
        Ok(Codec {
            inner: codec::Codec::new(reference.inner.clone()).map_err(py_err)?,
        })
    }

    /// Raw (unnormalized) features of consecutive meshes.
    fn encode_sequence(&self, meshes_: Vec<Mesh>) -> PyResult<Vec<FeatureFrame>> {
        self.inner
            .encode_sequence(&meshes(&meshes_))
            .map(wrap_frames)
            .map_err(py_err)
    }

    /// Meshes from raw features; each frame's anchor vertex goes to the
    /// matching entry of `anchors`.
    fn decode_sequence(
        &self,
        frames_: Vec<FeatureFrame>,
        anchors: Vec<[f64; 3]>,
    ) -> PyResult<Vec<Mesh>> {
        let anchors: Vec<Vec3> = anchors.into_iter().map(point).collect();
        self.inner
            .decode_sequence(&frames(&frames_), &anchors)
            .map(wrap_meshes)
            .map_err(py_err)
    }

    #[getter]
    fn reference(&self) -> Mesh {
        Mesh {
            inner: self.inner.reference.clone(),
        }
    }
}

/// Rest pose and frames of a synthetic animation.
#[pyfunction]
#[pyo3(signature = (kind, frames, vertices = 400, around = 12, period = 16.0, amplitude = None, phase = 0.0))]
fn synth_sequence(
    kind: &str,
    frames: usize,
    vertices: usize,
    around: usize,
    period: f64,
    amplitude: Option<f64>,
    phase: f64,
) -> PyResult<(Mesh, Vec<Mesh>)> {
    let kind: SynthKind = kind.parse().map_err(py_err)?;
    let mut spec = SynthSpec::new(kind, frames);
    spec.vertices = vertices;
    spec.around = around;
    spec.period = period;
    spec.phase = phase;
    if let Some(a) = amplitude {
        spec.amplitude = a;
    }
    let (rest, seq) = apps::synth_sequence(&spec).map_err(py_err)?;
    Ok((Mesh { inner: rest }, wrap_meshes(seq)))
}

fn row_tuple(r: &LogRow) -> (u64, f64, f64, f64, f64, f64) {
    (r.iteration, r.total, r.rec, r.bd, r.kl, r.l2)
}

/// Generator training. `config` is a JSON object in the training
/// configuration format; missing fields take their defaults.
#[pyclass(module = "meshseq")]
pub struct Trainer {
    inner: train::Trainer,
}

#[pymethods]
impl Trainer {
    #[new]
    #[pyo3(signature = (reference, sequences, config = None, hold_out = true))]
    fn new(
        reference: &Mesh,
        sequences: Vec<Vec<Mesh>>,
        config: Option<&str>,
        hold_out: bool,
    ) -> PyResult<Self> {
        let cfg: TrainConfig = match config {
            Some(json) => {
                serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))?
            }
            None => TrainConfig::default(),
        };
        cfg.validate().map_err(py_err)?;
        let seqs = sequences.iter().map(|s| meshes(s)).collect();
        let data = if hold_out {
            train::TrainSet::split(
                reference.inner.clone(),
                seqs,
                &cfg,
                &mut train::split_rng(cfg.seed),
            )
        } else {
            train::TrainSet::full(reference.inner.clone(), seqs, &cfg)
        }
        .map_err(py_err)?;
        Ok(Trainer {
            inner: train::Trainer::new(cfg, data).map_err(py_err)?,
        })
    }

    /// One iteration; returns (iteration, total, rec, bd, kl, l2).
    fn step(&mut self) -> PyResult<(u64, f64, f64, f64, f64, f64)> {
        self.inner.step().map_err(py_err)?;
        Ok(row_tuple(self.inner.log.last().expect("logged")))
    }

    /// Trains to the configured iteration count, checkpointing if a path is given.
    #[pyo3(signature = (checkpoint = None))]
    fn run(&mut self, py: Python<'_>, checkpoint: Option<PathBuf>) -> PyResult<()> {
        let inner = &mut self.inner;
        py.detach(|| inner.run(checkpoint.as_deref(), |_| {}))
            .map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.inner.iteration
    }

    /// Loss rows so far as (iteration, total, rec, bd, kl, l2).
    #[getter]
    fn log(&self) -> Vec<(u64, f64, f64, f64, f64, f64)> {
        self.inner.log.iter().map(row_tuple).collect()
    }

    fn trained(&self) -> TrainedModel {
        TrainedModel {
            inner: self.inner.trained(),
        }
    }
}

/// A trained generator with its codec and normalization.
#[pyclass(module = "meshseq")]
pub struct TrainedModel {
    inner: train::TrainedModel,
}

#[pymethods]
impl TrainedModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(TrainedModel {
            inner: train::TrainedModel::load(path).map_err(py_err)?,
        })
    }

    /// Normalized features of consecutive meshes.
    fn encode(&self, meshes_: Vec<Mesh>) -> PyResult<Vec<FeatureFrame>> {
        self.inner
            .encode_meshes(&meshes(&meshes_))
            .map(wrap_frames)
            .map_err(py_err)
    }

    /// Continues `initial` by `frames` meshes.
    #[pyo3(signature = (initial, frames, sample = false, seed = 0))]
    fn generate(
        &self,
        initial: Vec<Mesh>,
        frames: usize,
        sample: bool,
        seed: u64,
    ) -> PyResult<Vec<Mesh>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        apps::generate_conditional(&self.inner, &meshes(&initial), frames, sample, &mut rng)
            .map(wrap_meshes)
            .map_err(py_err)
    }

    /// `frames` meshes from `start` to `end`, both returned unchanged.
    #[pyo3(signature = (start, end, frames, strategy = "bidirectional", diversity_seed = None, diversity_scale = 0.1, blend = 0, population = 16, sigma0 = 0.05, generations = 200))]
    #[allow(clippy::too_many_arguments)]
    fn complete(
        &self,
        start: &Mesh,
        end: &Mesh,
        frames: usize,
        strategy: &str,
        diversity_seed: Option<u64>,
        diversity_scale: f64,
        blend: usize,
        population: usize,
        sigma0: f64,
        generations: usize,
    ) -> PyResult<Vec<Mesh>> {
        let m = &self.inner;
        let strategy: Strategy = strategy.parse().map_err(py_err)?;
        let keys = m
            .encode_meshes(&[start.inner.clone(), end.inner.clone()])
            .map_err(py_err)?;
        let mut req = CompletionRequest::new(keys[0].clone(), keys[1].clone(), frames, strategy);
        req.diversity_seed = diversity_seed;
        req.diversity_scale = diversity_scale;
        req.blend = blend;
        let cma = CmaesConfig {
            population,
            sigma0,
            generations,
            ..CmaesConfig::default()
        };
        let done = apps::complete(&m.model, &req, &m.default_state(), &cma).map_err(py_err)?;
        let mut out = m
            .decode_frames(&done.frames, start.inner.vertices[ANCHOR_VERTEX])
            .map_err(py_err)?;
        let n = out.len();
        out[0] = start.inner.clone();
        out[n - 1] = end.inner.clone();
        Ok(wrap_meshes(out))
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.codec.vertex_count()
    }
}

/// Per-frame mean vertex distance and its average over frames.
#[pyfunction]
fn eval_position_error(pred: Vec<Mesh>, gt: Vec<Mesh>) -> PyResult<(Vec<f64>, f64)> {
    let r = apps::eval_position_error(&meshes(&pred), &meshes(&gt)).map_err(py_err)?;
    Ok((r.per_frame, r.mean))
}

#[pyfunction]
fn feature_change_curve(frames_: Vec<FeatureFrame>) -> PyResult<Vec<f64>> {
    apps::feature_change_curve(&frames(&frames_)).map_err(py_err)
}

/// Linear feature baseline: "interpolate" spans `a`..`b` in `count` frames,
/// "extrapolate" continues the step `b − a` for `count` frames.
#[pyfunction]
#[pyo3(signature = (a, b, count, mode = "interpolate"))]
fn baseline_linear(
    a: &FeatureFrame,
    b: &FeatureFrame,
    count: usize,
    mode: &str,
) -> PyResult<Vec<FeatureFrame>> {
    let mode = match mode {
        "interpolate" => LinearMode::Interpolate,
        "extrapolate" => LinearMode::Extrapolate,
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    apps::baseline_linear(&a.inner, &b.inner, count, mode)
        .map(wrap_frames)
        .map_err(py_err)
}

/// Minimizes `f`, which maps a list of candidate vectors to a list of
/// values. Returns (best, best_value, generations).
#[pyfunction]
#[pyo3(signature = (f, x0, population = 16, sigma0 = 0.05, generations = 200, seed = 0))]
fn cmaes_minimize(
    f: &Bound<'_, PyAny>,
    x0: Vec<f64>,
    population: usize,
    sigma0: f64,
    generations: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, f64, usize)> {
    let cfg = CmaesConfig {
        population,
        sigma0,
        generations,
        seed,
        ..CmaesConfig::default()
    };
    let mut failure: Option<PyErr> = None;
    let objective = |xs: &[Vec<f64>]| -> meshseq_core::Result<Vec<f64>> {
        let values = f
            .call1((xs.to_vec(),))
            .and_then(|v| v.extract::<Vec<f64>>().map_err(PyErr::from));
        values.map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            Error::InvalidArgument(format!("objective raised: {msg}"))
        })
    };
    let result = apps::cmaes_minimize(objective, &x0, &cfg);
    if let Some(e) = failure {
        return Err(e);
    }
    let r = result.map_err(py_err)?;
    Ok((r.best, r.best_value, r.generations))
}

#[pymodule]
fn meshseq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mesh>()?;
    m.add_class::<FeatureFrame>()?;
    m.add_class::<Codec>()?;
    m.add_class::<Trainer>()?;
    m.add_class::<TrainedModel>()?;
    m.add_function(wrap_pyfunction!(synth_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(eval_position_error, m)?)?;
    m.add_function(wrap_pyfunction!(feature_change_curve, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_linear, m)?)?;
    m.add_function(wrap_pyfunction!(cmaes_minimize, m)?)?;
    Ok(())
}
