//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cmaes::CmaesConfig;
use super::complete::{complete, CompletionRequest, Strategy};
use super::eval::{eval_position_error, feature_change_curve, write_change_curve};
use super::generate::generate_conditional;
use super::synth::{synth_dataset, write_sequence, SynthKind, SynthSpec};
use crate::codec::{
    fit_normalization, read_feature_dir, write_feature_dir, Codec, Direction, Granularity,
    ANCHOR_VERTEX,
};
use crate::error::{Error, Result};
use crate::mesh::{load_obj, save_obj, Mesh, SequenceManifest, Vec3};
use crate::train::{load_sequences, train_loop, TrainConfig, TrainOutputs, TrainedModel};

#[derive(Debug, Parser)]
#[command(
    name = "meshseq",
    version,
    about = "Encode, learn, generate and complete mesh animation sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic animated bar/cylinder as OBJ files plus a manifest.
    Synth(SynthArgs),
    /// Encode a manifest's frames into normalized feature files.
    Encode(EncodeArgs),
    /// Reconstruct meshes from a feature directory.
    Decode(DecodeArgs),
    /// Train a generator on one or more manifests.
    Train(TrainArgs),
    /// Continue a sequence from initial meshes.
    Generate(GenerateArgs),
    /// Fill in the frames between two keyframe meshes.
    Complete(CompleteArgs),
    /// Per-vertex position error between two mesh directories.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: SynthKind,
    #[arg(long)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 400)]
    vertices: usize,
    #[arg(long, default_value_t = 12)]
    around: usize,
    #[arg(long, default_value_t = 16.0)]
    period: f64,
    /// Peak angle in radians [default: π/2].
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    phase: f64,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// per-vertex-channel or per-channel.
    #[arg(long, value_parser = parse_granularity, default_value = "per-vertex-channel")]
    normalization: Granularity,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Sequence manifest; repeat for several sequences on the same mesh.
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// JSON training configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    checkpoint_interval: Option<u64>,
    /// Print losses every this many iterations (0 = quiet).
    #[arg(long, default_value_t = 50)]
    report_every: u64,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Initial mesh; repeat in temporal order.
    #[arg(long = "initial", required = true)]
    initial: Vec<PathBuf>,
    #[arg(long)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
    /// Sample latent codes instead of using their means.
    #[arg(long)]
    sample: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct CompleteArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    start: PathBuf,
    #[arg(long)]
    end: PathBuf,
    /// Output frames, keyframes included.
    #[arg(long)]
    frames: usize,
    #[arg(long, value_parser = parse_strategy, default_value = "bidirectional")]
    strategy: Strategy,
    #[arg(long)]
    diversity_seed: Option<u64>,
    #[arg(long, default_value_t = 0.1)]
    diversity_scale: f64,
    #[arg(long, default_value_t = 0)]
    blend: usize,
    #[arg(long, default_value_t = 16)]
    population: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma0: f64,
    #[arg(long, default_value_t = 200)]
    generations: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Write per-frame errors here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the feature-change curve of the predictions here.
    #[arg(long)]
    change_curve: Option<PathBuf>,
}

fn parse_kind(s: &str) -> std::result::Result<SynthKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_granularity(s: &str) -> std::result::Result<Granularity, String> {
    match s {
        "per-vertex-channel" => Ok(Granularity::PerVertexChannel),
        "per-channel" => Ok(Granularity::PerChannel),
        other => Err(format!("unknown normalization {other:?}")),
    }
}

fn point(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Meshes of a directory: the manifest's frames if there is one, otherwise
/// every `.obj` in name order.
fn load_mesh_dir(dir: &Path) -> Result<(Option<Mesh>, Vec<Mesh>)> {
    let manifest = dir.join("manifest.json");
    if manifest.exists() {
        let (r, frames) = SequenceManifest::load(&manifest)?.load_frames()?;
        return Ok((Some(r), frames));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "obj"))
        .collect();
    paths.sort();
    let frames = paths.iter().map(load_obj).collect::<Result<Vec<_>>>()?;
    Ok((None, frames))
}

fn write_meshes(dir: &Path, reference: &Mesh, meshes: &[Mesh]) -> Result<()> {
    write_sequence(dir, reference, meshes).map(|_| ())
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let mut spec = SynthSpec::new(a.kind, a.frames);
    spec.vertices = a.vertices;
    spec.around = a.around;
    spec.period = a.period;
    spec.phase = a.phase;
    if let Some(amp) = a.amplitude {
        spec.amplitude = amp;
    }
    let m = synth_dataset(&spec, &a.out)?;
    writeln!(
        out,
        "wrote {} frames to {}",
        m.frames.len(),
        a.out.display()
    )
    .map_err(|e| Error::io(&a.out, e))
}

fn encode(a: EncodeArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = SequenceManifest::load(&a.manifest)?;
    let (reference, frames) = manifest.load_frames()?;
    let codec = Codec::new(reference)?;
    let raw = codec.encode_sequence(&frames)?;
    let norm = fit_normalization(&raw, a.normalization)?;
    let feats = raw
        .iter()
        .map(|f| norm.apply(f, Direction::Forward))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    save_obj(&codec.reference, a.out.join("reference.obj"))?;
    let anchors = frames
        .iter()
        .map(|m| point(&m.vertices[ANCHOR_VERTEX]))
        .collect();
    write_feature_dir(
        &a.out,
        "reference.obj",
        &feats,
        &norm,
        ANCHOR_VERTEX,
        anchors,
    )?;
    writeln!(
        out,
        "encoded {} frames into {}",
        feats.len(),
        a.out.display()
    )
    .map_err(|e| Error::io(&a.out, e))
}

fn decode(a: DecodeArgs, out: &mut dyn Write) -> Result<()> {
    let (sidecar, frames) = read_feature_dir(&a.features)?;
    if sidecar.anchor_vertex != ANCHOR_VERTEX {
        return Err(Error::Format(format!(
            "features were anchored at vertex {}",
            sidecar.anchor_vertex
        )));
    }
    let reference = load_obj(a.features.join(&sidecar.reference))?;
    let codec = Codec::new(reference)?;
    let raw = if sidecar.normalized {
        frames
            .iter()
            .map(|f| sidecar.normalization.apply(f, Direction::Inverse))
            .collect::<Result<Vec<_>>>()?
    } else {
        frames
    };
    let anchors: Vec<Vec3> = sidecar
        .anchors
        .iter()
        .map(|p| Vec3::new(p[0], p[1], p[2]))
        .collect();
    let meshes = codec.decode_sequence(&raw, &anchors)?;
    write_meshes(&a.out, &codec.reference, &meshes)?;
    writeln!(
        out,
        "decoded {} frames into {}",
        meshes.len(),
        a.out.display()
    )
    .map_err(|e| Error::io(&a.out, e))
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident $(. $sub:ident)?),*) => {
            $(if let Some(v) = a.$field { cfg.$field $(.$sub)? = v; })*
        };
    }
    set!(
        iterations,
        batch,
        seq_len,
        seed,
        stride,
        checkpoint_interval
    );
    if let Some(lr) = a.lr {
        cfg.adam.lr = lr;
    }
    cfg.validate()?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    cfg.save(a.out.join("config.json"))?;
    let (reference, sequences) = load_sequences(&a.manifests, cfg.stride)?;
    let outputs = TrainOutputs::in_dir(&a.out);
    let trainer = train_loop(reference, sequences, cfg, &outputs, a.report_every, out)?;
    writeln!(
        out,
        "trained {} iterations; checkpoint {}, loss log {}",
        trainer.iteration,
        outputs.checkpoint.display(),
        outputs.loss_log.display()
    )
    .map_err(|e| Error::io(&a.out, e))
}

fn generate(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let model = TrainedModel::load(&a.checkpoint)?;
    let initial = a.initial.iter().map(load_obj).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let meshes = generate_conditional(&model, &initial, a.frames, a.sample, &mut rng)?;
    write_meshes(&a.out, &model.codec.reference, &meshes)?;
    writeln!(
        out,
        "generated {} frames into {}",
        meshes.len(),
        a.out.display()
    )
    .map_err(|e| Error::io(&a.out, e))
}

fn complete_cmd(a: CompleteArgs, out: &mut dyn Write) -> Result<()> {
    let model = TrainedModel::load(&a.checkpoint)?;
    let start = load_obj(&a.start)?;
    let end = load_obj(&a.end)?;
    let feats = model.encode_meshes(&[start.clone(), end.clone()])?;
    let mut req = CompletionRequest::new(feats[0].clone(), feats[1].clone(), a.frames, a.strategy);
    req.diversity_seed = a.diversity_seed;
    req.diversity_scale = a.diversity_scale;
    req.blend = a.blend;
    let cmaes = CmaesConfig {
        population: a.population,
        sigma0: a.sigma0,
        generations: a.generations,
        ..CmaesConfig::default()
    };
    let done = complete(&model.model, &req, &model.default_state(), &cmaes)?;
    let mut meshes = model.decode_frames(&done.frames, start.vertices[ANCHOR_VERTEX])?;
    // keyframes go out exactly as given
    let n = meshes.len();
    meshes[0] = start;
    meshes[n - 1] = end;
    write_meshes(&a.out, &model.codec.reference, &meshes)?;
    if let Some(search) = &done.search {
        let note = if search.stagnated {
            " (search stagnated)"
        } else {
            ""
        };
        writeln!(
            out,
            "endpoint gap {:.6} (default state {:.6}) after {} generations{note}",
            search.best_value, search.initial_value, search.generations
        )
        .map_err(|e| Error::io(&a.out, e))?;
    }
    writeln!(out, "completed {} frames into {}", n, a.out.display())
        .map_err(|e| Error::io(&a.out, e))
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (_, pred) = load_mesh_dir(&a.pred)?;
    let (gt_ref, gt) = load_mesh_dir(&a.gt)?;
    let report = eval_position_error(&pred, &gt)?;
    if let Some(path) = &a.csv {
        report.write_csv(path)?;
    }
    if let Some(path) = &a.change_curve {
        let reference = gt_ref.unwrap_or_else(|| gt[0].clone());
        let codec = Codec::new(reference)?;
        let curve = feature_change_curve(&codec.encode_sequence(&pred)?)?;
        write_change_curve(path, &curve)?;
    }
    writeln!(
        out,
        "mean per-vertex error {:.9} ({:.3} x 1e-4) over {} frames",
        report.mean,
        report.mean_scaled(),
        report.per_frame.len()
    )
    .map_err(|e| Error::io(&a.pred, e))
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a, out),
        Command::Encode(a) => encode(a, out),
        Command::Decode(a) => decode(a, out),
        Command::Train(a) => train(a, out),
        Command::Generate(a) => generate(a, out),
        Command::Complete(a) => complete_cmd(a, out),
        Command::Eval(a) => eval(a, out),
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 1 on failure, 2 on bad usage.
pub fn cli_main<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{text}");
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}
