use meshseq_core::apps::{synth_sequence, write_sequence, SynthKind, SynthSpec};
use meshseq_core::autodiff::{grad_check_params, Tape, Tensor};
use meshseq_core::codec::{FeatureFrame, CHANNELS};
use meshseq_core::mesh::Mesh;
use meshseq_core::net::{ChainState, GeneratorModel};
use meshseq_core::train::*;
use meshseq_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_shape() -> ModelShape {
    ModelShape {
        conv_widths: vec![4, 5, 6],
        latent: 8,
        lstm_layers: 1,
        lstm_hidden: 16,
    }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        iterations: 6,
        batch: 2,
        seq_len: 6,
        model: tiny_shape(),
        seed: 5,
        ..TrainConfig::default()
    }
}

fn tiny_sequence(frames: usize) -> (Mesh, Vec<Mesh>) {
    let mut spec = SynthSpec::new(SynthKind::BendBar, frames);
    spec.vertices = 12;
    spec.around = 5;
    let (r, f) = synth_sequence(&spec).unwrap();
    assert_eq!(r.vertex_count(), 12);
    (r, f)
}

fn tiny_trainer(cfg: TrainConfig) -> Trainer {
    let (r, f) = tiny_sequence(24);
    let data = TrainSet::split(r, vec![f], &cfg, &mut split_rng(cfg.seed)).unwrap();
    Trainer::new(cfg, data).unwrap()
}

fn random_frame(rng: &mut ChaCha8Rng, v: usize) -> FeatureFrame {
    FeatureFrame {
        data: (0..v * CHANNELS)
            .map(|_| rng.gen_range(-0.9..0.9))
            .collect(),
        normalized: true,
    }
}

fn mse(a: &FeatureFrame, b: &FeatureFrame) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64
}

/// Straight-line evaluation of the objective.
fn scalar_loss(
    model: &GeneratorModel,
    f: &[FeatureFrame],
    b: &[FeatureFrame],
    gt: &[FeatureFrame],
    mu: &[Vec<f64>],
    lv: &[Vec<f64>],
    w: &LossWeights,
) -> [f64; 5] {
    let n = gt.len();
    let mut rec = 0.0;
    let mut bd = 0.0;
    for i in 0..n {
        rec += mse(&f[i], &gt[i]) + mse(&b[i], &gt[n - 1 - i]);
        bd += mse(&f[i], &b[n - 1 - i]);
    }
    let mut kl = 0.0;
    let mut rows = 0;
    for (m, l) in mu.iter().zip(lv) {
        let k = model.config.latent;
        for r in 0..m.len() / k {
            let mut s = 0.0;
            for j in r * k..(r + 1) * k {
                s += m[j] * m[j] + l[j].exp() - l[j] - 1.0;
            }
            kl += 0.5 * s;
            rows += 1;
        }
    }
    if rows > 0 {
        kl /= rows as f64;
    }
    let (mut sq, mut count) = (0.0, 0usize);
    for (_, p) in model.store.iter() {
        if p.decay {
            sq += p.value.data().iter().map(|x| x * x).sum::<f64>();
            count += p.value.len();
        }
    }
    let l2 = sq / count as f64;
    [rec + w.alpha1 * bd + w.alpha2 * (kl + l2), rec, bd, kl, l2]
}

#[test]
fn loss_matches_scalar_oracle() {
    let trainer = tiny_trainer(tiny_config());
    let model = &trainer.model;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [1, 2, 5] {
        let frames =
            |rng: &mut ChaCha8Rng| (0..n).map(|_| random_frame(rng, 12)).collect::<Vec<_>>();
        let (f, b, gt) = (frames(&mut rng), frames(&mut rng), frames(&mut rng));
        let stats = |rng: &mut ChaCha8Rng| {
            (1..n)
                .map(|_| (0..16).map(|_| rng.gen_range(-1.5..1.5)).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        let (mu, lv) = (stats(&mut rng), stats(&mut rng));
        let w = LossWeights {
            alpha1: 0.7,
            alpha2: 0.3,
        };
        let r = compute_loss(model, &f, &b, &gt, &mu, &lv, &w).unwrap();
        let o = scalar_loss(model, &f, &b, &gt, &mu, &lv, &w);
        for (got, want) in [r.total, r.rec, r.bd, r.kl, r.l2].into_iter().zip(o) {
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "{got} vs {want}"
            );
        }
        let plain = compute_loss(
            model,
            &f,
            &b,
            &gt,
            &mu,
            &lv,
            &LossWeights {
                alpha1: 0.0,
                alpha2: 0.0,
            },
        )
        .unwrap();
        assert_eq!(plain.total, plain.rec);
    }
    assert!(compute_loss(
        model,
        &[random_frame(&mut rng, 12)],
        &[],
        &[random_frame(&mut rng, 12)],
        &[],
        &[],
        &LossWeights::default()
    )
    .is_err());
}

#[test]
fn loss_vanishes_on_perfect_chains() {
    let mut trainer = tiny_trainer(tiny_config());
    for p in trainer.model.store.iter_mut() {
        if p.decay {
            p.value.data_mut().fill(0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gt: Vec<FeatureFrame> = (0..4).map(|_| random_frame(&mut rng, 12)).collect();
    let rev: Vec<FeatureFrame> = gt.iter().rev().cloned().collect();
    let zeros = vec![vec![0.0; 16]; 3];
    let r = compute_loss(
        &trainer.model,
        &gt,
        &rev,
        &gt,
        &zeros,
        &zeros,
        &LossWeights::default(),
    )
    .unwrap();
    assert_eq!(r.total, 0.0);
}

#[test]
fn bidirectional_rollout_contracts() {
    let mut trainer = tiny_trainer(tiny_config());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (xa, xb) = (random_frame(&mut rng, 12), random_frame(&mut rng, 12));
    let s0 = trainer.model.initial_state(0.1);
    let (f, b) = bidirectional_rollout(&trainer.model, &xa, &xb, 1, &s0, true, &mut rng).unwrap();
    assert_eq!((f, b), (vec![xa.clone()], vec![xb.clone()]));

    let (f, b) = bidirectional_rollout(&trainer.model, &xa, &xb, 5, &s0, false, &mut rng).unwrap();
    assert_eq!((f.len(), b.len()), (5, 5));
    assert_eq!((&f[0], &b[0]), (&xa, &xb));
    assert_ne!(f[1], xa);

    // swapping endpoint and state sign swaps the chains
    let (f2, b2) =
        bidirectional_rollout(&trainer.model, &xb, &xa, 5, &s0.negated(), false, &mut rng).unwrap();
    for (p, q) in f.iter().zip(&b2).chain(b.iter().zip(&f2)) {
        assert_eq!(p, q);
    }

    for p in trainer.model.store.iter_mut() {
        p.value.data_mut().fill(0.0);
    }
    let (f, b) = bidirectional_rollout(&trainer.model, &xa, &xb, 4, &s0, true, &mut rng).unwrap();
    assert!(f.iter().all(|x| *x == xa) && b.iter().all(|x| *x == xb));
}

#[test]
fn full_loss_gradients_match_finite_differences() {
    let trainer = tiny_trainer(tiny_config());
    let model = &trainer.model;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 5; // four generator steps per chain
    let gt: Vec<FeatureFrame> = (0..n).map(|_| random_frame(&mut rng, 12)).collect();
    let s0 = model.initial_state(0.1);
    let eps: Vec<Tensor> = (1..n).map(|_| model.draw_eps(2, &mut rng)).collect();
    let weights = LossWeights::default();
    let err = grad_check_params(
        |t: &mut Tape, store| {
            let mut m = model.clone();
            m.store = store.clone();
            let bidi = bidirectional_on_tape(&m, t, &[&gt[0]], &[&gt[n - 1]], n, &s0, &eps)?;
            let g = ground_truth_on_tape(&m, t, &[&gt])?;
            Ok(loss_on_tape(&m, t, &bidi, &g, &weights)?.total)
        },
        &model.store,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn one_iteration_is_one_adam_step() {
    let mut trainer = tiny_trainer(TrainConfig {
        batch: 1,
        ..tiny_config()
    });
    let before = trainer.model.store.clone();
    let r = trainer.step().unwrap();
    assert_eq!(trainer.model.store.step, 1);
    assert_eq!(trainer.iteration, 1);
    let changed = before
        .iter()
        .zip(trainer.model.store.iter())
        .any(|((_, a), (_, b))| a.value != b.value);
    assert!(changed);
    let w = trainer.config.loss;
    assert!((r.total - (r.rec + w.alpha1 * r.bd + w.alpha2 * (r.kl + r.l2))).abs() <= 1e-10);
}

#[test]
fn identical_seeds_give_identical_logs() {
    let mut a = tiny_trainer(tiny_config());
    let mut b = tiny_trainer(tiny_config());
    a.run(None, |_| {}).unwrap();
    b.run(None, |_| {}).unwrap();
    assert_eq!(a.log.len(), 6);
    let bits = |t: &Trainer| {
        t.log
            .iter()
            .flat_map(|r| [r.total, r.rec, r.bd, r.kl, r.l2].map(f64::to_bits))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    let mut c = tiny_trainer(TrainConfig {
        seed: 6,
        ..tiny_config()
    });
    c.run(None, |_| {}).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let mut full = tiny_trainer(tiny_config());
    full.run(None, |_| {}).unwrap();

    let mut first = tiny_trainer(TrainConfig {
        iterations: 3,
        ..tiny_config()
    });
    first.run(Some(&path), |_| {}).unwrap();
    let mut resumed = Trainer::resume(&path, first.data.clone()).unwrap();
    assert_eq!(resumed.iteration, 3);
    resumed.config.iterations = 6;
    resumed.run(None, |_| {}).unwrap();
    assert_eq!(&full.log[3..], &resumed.log[..]);
    for ((_, p), (_, q)) in full.model.store.iter().zip(resumed.model.store.iter()) {
        assert_eq!(p.value, q.value);
        assert_eq!((&p.m, &p.v), (&q.m, &q.v));
    }
}

#[test]
fn train_loop_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (r, f) = tiny_sequence(24);
    let out = TrainOutputs::in_dir(dir.path());
    let mut progress = Vec::new();
    let cfg = TrainConfig {
        iterations: 4,
        checkpoint_interval: 2,
        ..tiny_config()
    };
    let trainer = train_loop(r, vec![f], cfg, &out, 2, &mut progress).unwrap();
    let log = read_loss_log(&out.loss_log).unwrap();
    assert_eq!(log, trainer.log);
    assert_eq!(
        log.iter().map(|r| r.iteration).collect::<Vec<_>>(),
        vec![1, 2, 3, 4]
    );
    let header = std::fs::read_to_string(&out.loss_log).unwrap();
    assert!(header.starts_with("iteration,total,rec,bd,kl,l2\n"));
    assert_eq!(String::from_utf8(progress).unwrap().lines().count(), 2);

    let loaded = TrainedModel::load(&out.checkpoint).unwrap();
    assert_eq!(loaded.meta.iteration, 4);
    assert_eq!(loaded.normalization, trainer.data.corpus.normalization);
    assert_eq!(loaded.codec.reference, trainer.data.corpus.codec.reference);
}

#[test]
fn divergence_aborts_and_keeps_last_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let mut t = tiny_trainer(TrainConfig {
        iterations: 2,
        ..tiny_config()
    });
    t.run(Some(&path), |_| {}).unwrap();
    let saved = std::fs::read(&path).unwrap();
    let id = t.model.store.id("out.w").unwrap();
    t.model.store.get_mut(id).value.data_mut()[0] = f64::NAN;
    t.config.iterations = 4;
    let err = t.run(Some(&path), |_| {}).unwrap_err();
    assert!(matches!(err, Error::Diverged { iteration: 3, .. }), "{err}");
    assert_eq!(std::fs::read(&path).unwrap(), saved);
    assert_eq!(t.iteration, 2);
}

#[test]
fn split_holds_out_a_contiguous_fifth() {
    let (r, f) = tiny_sequence(100);
    let cfg = TrainConfig {
        seq_len: 32,
        ..tiny_config()
    };
    let a = TrainSet::split(r.clone(), vec![f.clone()], &cfg, &mut split_rng(1)).unwrap();
    let b = TrainSet::split(r.clone(), vec![f.clone()], &cfg, &mut split_rng(1)).unwrap();
    assert_eq!((&a.train, &a.test), (&b.train, &b.test));
    assert_eq!(a.test[0].frames.len(), 20);
    assert_eq!(a.train.iter().map(|s| s.frames.len()).sum::<usize>(), 80);
    // normalization is fit on training frames only
    let fit = meshseq_core::codec::fit_normalization(
        &a.train
            .iter()
            .flat_map(|s| {
                let raw = a.corpus.codec.encode_sequence(&f).unwrap();
                raw[s.frames.clone()].to_vec()
            })
            .collect::<Vec<_>>(),
        cfg.normalization,
    )
    .unwrap();
    assert_eq!(fit, a.corpus.normalization);
    assert!(TrainSet::split(r, vec![f[..63].to_vec()], &cfg, &mut split_rng(1)).is_err());
}

#[test]
fn stride_subsamples_before_splitting() {
    let dir = tempfile::tempdir().unwrap();
    let (r, f) = tiny_sequence(200);
    write_sequence(dir.path(), &r, &f).unwrap();
    let manifest = dir.path().join("manifest.json");
    let (_, seqs) = load_sequences(&[&manifest], 2).unwrap();
    assert_eq!(seqs[0].len(), 100);
    assert_eq!(seqs[0][1], f[2]);
    let cfg = TrainConfig {
        seq_len: 32,
        ..tiny_config()
    };
    let s = TrainSet::split(r, seqs, &cfg, &mut split_rng(0)).unwrap();
    assert_eq!(s.test[0].frames.len(), 20);
}

#[test]
fn initial_state_is_uniform() {
    let t = tiny_trainer(tiny_config());
    assert_eq!(t.model.initial_state(0.1), ChainState::filled(1, 16, 0.1));
}
