use meshseq_core::apps::bar_mesh;
use meshseq_core::autodiff::{grad_check_params, Tape, Tensor};
use meshseq_core::codec::{FeatureFrame, CHANNELS};
use meshseq_core::mesh::{build_topology, Topology};
use meshseq_core::net::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> (GeneratorModel, Topology) {
    let mesh = bar_mesh(5, 1, 0.2, 1.0).unwrap();
    assert_eq!(mesh.vertex_count(), 12);
    let topo = build_topology(&mesh).unwrap();
    let cfg = NetConfig {
        vertices: 12,
        conv_widths: vec![4, 5, 6],
        latent: 8,
        lstm_layers: 1,
        lstm_hidden: 16,
        init_seed: 3,
    };
    (GeneratorModel::new(cfg, &topo).unwrap(), topo)
}

fn random_frame(rng: &mut ChaCha8Rng, v: usize) -> FeatureFrame {
    FeatureFrame {
        data: (0..v * CHANNELS)
            .map(|_| rng.gen_range(-0.9..0.9))
            .collect(),
        normalized: true,
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn random_topology(rng: &mut ChaCha8Rng, n: usize) -> Topology {
    let mut adj = vec![std::collections::BTreeSet::new(); n];
    for i in 0..n {
        let j = (i + 1 + rng.gen_range(0..n - 1)) % n;
        adj[i].insert(j);
        adj[j].insert(i);
    }
    for _ in 0..rng.gen_range(0..2 * n) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }
    Topology::from_neighbors(adj.into_iter().map(|s| s.into_iter().collect()).collect()).unwrap()
}

/// (W1 ⊗ I + W2 ⊗ A_mean) x + b, assembled as one dense matrix over the
/// vertex-major stacked vector.
fn dense_conv(x: &Tensor, layer: &MeshConvLayer, topo: &Topology) -> Vec<f64> {
    let (n, cin) = x.dims2().unwrap();
    let (cout, _) = layer.w1.dims2().unwrap();
    let mut big = vec![vec![0.0; n * cin]; n * cout];
    for i in 0..n {
        let d = topo.neighbors[i].len() as f64;
        for o in 0..cout {
            for c in 0..cin {
                big[i * cout + o][i * cin + c] += layer.w1.data()[o * cin + c];
                for &j in &topo.neighbors[i] {
                    big[i * cout + o][j * cin + c] += layer.w2.data()[o * cin + c] / d;
                }
            }
        }
    }
    (0..n * cout)
        .map(|r| {
            let s: f64 = big[r].iter().zip(x.data()).map(|(a, b)| a * b).sum();
            let y = s + layer.b[r % cout];
            match layer.activation {
                Activation::Tanh => y.tanh(),
                Activation::Identity => y,
            }
        })
        .collect()
}

#[test]
fn mesh_conv_matches_dense_operator_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..100 {
        let n = rng.gen_range(2..=50);
        let topo = random_topology(&mut rng, n);
        let (cin, cout) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let layer = MeshConvLayer {
            w1: random_tensor(&mut rng, cout, cin),
            w2: random_tensor(&mut rng, cout, cin),
            b: (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            activation: if trial % 2 == 0 {
                Activation::Tanh
            } else {
                Activation::Identity
            },
        };
        let x = random_tensor(&mut rng, n, cin);
        let y = mesh_conv_forward(&x, &layer, &topo).unwrap();
        let expected = dense_conv(&x, &layer, &topo);
        for (a, b) in y.data().iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12, "trial {trial}");
        }
    }
}

#[test]
fn mesh_conv_trivial_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let topo = random_topology(&mut rng, 9);
    let x = random_tensor(&mut rng, 9, 3);
    let id = MeshConvLayer {
        w1: Tensor::identity(3),
        w2: Tensor::zeros(&[3, 3]),
        b: vec![0.0; 3],
        activation: Activation::Identity,
    };
    assert_eq!(mesh_conv_forward(&x, &id, &topo).unwrap(), x);

    let layer = MeshConvLayer {
        w1: random_tensor(&mut rng, 2, 3),
        w2: random_tensor(&mut rng, 2, 3),
        b: vec![0.3, -0.2],
        activation: Activation::Tanh,
    };
    let c = [0.5, -1.0, 2.0];
    let constant = Tensor::matrix(9, 3, c.repeat(9)).unwrap();
    let y = mesh_conv_forward(&constant, &layer, &topo).unwrap();
    for o in 0..2 {
        let pre: f64 = (0..3)
            .map(|k| (layer.w1.data()[o * 3 + k] + layer.w2.data()[o * 3 + k]) * c[k])
            .sum::<f64>()
            + layer.b[o];
        for i in 0..9 {
            assert!((y.data()[i * 2 + o] - pre.tanh()).abs() < 1e-14);
        }
    }
    let bad = random_tensor(&mut rng, 9, 4);
    assert!(mesh_conv_forward(&bad, &layer, &topo).is_err());
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn lstm_matches_hand_trace() {
    let mesh = bar_mesh(3, 1, 0.2, 1.0).unwrap();
    let topo = build_topology(&mesh).unwrap();
    let cfg = NetConfig {
        vertices: mesh.vertex_count(),
        conv_widths: vec![2],
        latent: 2,
        lstm_layers: 1,
        lstm_hidden: 2,
        init_seed: 0,
    };
    let mut model = GeneratorModel::new(cfg, &topo).unwrap();
    // gate columns: [i0 i1 f0 f1 g0 g1 o0 o1]
    let wx = [
        0.1, -0.2, 0.3, 0.05, -0.4, 0.2, 0.15, -0.1, 0.25, 0.1, -0.3, 0.4, 0.05, 0.2, -0.15, 0.3,
    ];
    let wh = [
        0.2, 0.1, -0.1, 0.3, 0.05, -0.25, 0.1, 0.2, -0.3, 0.15, 0.2, -0.05, 0.1, 0.1, 0.3, -0.2,
    ];
    let b = [0.01, -0.02, 1.0, 0.9, 0.0, 0.05, -0.1, 0.1];
    let wo = [0.5, -0.5, 0.25, 1.0];
    let bo = [0.1, -0.1];
    let set = |m: &mut GeneratorModel, name: &str, v: &[f64]| {
        let id = m.store.id(name).unwrap();
        m.store.get_mut(id).value.data_mut().copy_from_slice(v);
    };
    set(&mut model, "lstm0.wx", &wx);
    set(&mut model, "lstm0.wh", &wh);
    set(&mut model, "lstm0.b", &b);
    set(&mut model, "out.w", &wo);
    set(&mut model, "out.b", &bo);

    let z = [0.7, -0.3];
    let s = ChainState {
        h: vec![vec![0.1, -0.2]],
        c: vec![vec![0.3, 0.05]],
    };
    let (zhat, next) = model.lstm_step(&z, &s).unwrap();

    // hand trace, one gate at a time
    let pre = |col: usize| {
        z[0] * wx[col] + z[1] * wx[8 + col] + s.h[0][0] * wh[col] + s.h[0][1] * wh[8 + col] + b[col]
    };
    let mut h = [0.0; 2];
    let mut c = [0.0; 2];
    for u in 0..2 {
        let i = sigmoid(pre(u));
        let f = sigmoid(pre(2 + u));
        let g = pre(4 + u).tanh();
        let o = sigmoid(pre(6 + u));
        c[u] = f * s.c[0][u] + i * g;
        h[u] = o * c[u].tanh();
    }
    let out = [
        h[0] * wo[0] + h[1] * wo[2] + bo[0],
        h[0] * wo[1] + h[1] * wo[3] + bo[1],
    ];
    for u in 0..2 {
        assert!((next.h[0][u] - h[u]).abs() <= 1e-12);
        assert!((next.c[0][u] - c[u]).abs() <= 1e-12);
        assert!((zhat[u] - out[u]).abs() <= 1e-12);
    }
    // purity
    assert_eq!(model.lstm_step(&z, &s).unwrap(), (zhat, next));
}

#[test]
fn zero_weights_give_output_bias() {
    let (mut model, _) = tiny();
    let ids: Vec<_> = model
        .store
        .iter()
        .map(|(id, p)| (id, p.name.clone()))
        .collect();
    for (id, name) in ids {
        let v = model.store.get_mut(id).value.data_mut();
        if name == "out.b" {
            v.iter_mut()
                .enumerate()
                .for_each(|(i, x)| *x = i as f64 * 0.1);
        } else {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let s = ChainState::filled(1, 16, 0.0);
    let (zhat, next) = model.lstm_step(&[0.4; 8], &s).unwrap();
    assert!(next.h[0].iter().chain(&next.c[0]).all(|&x| x == 0.0));
    for (i, z) in zhat.iter().enumerate() {
        assert!((z - i as f64 * 0.1).abs() < 1e-15);
    }
}

#[test]
fn latent_reparameterization() {
    let (mut model, _) = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_frame(&mut rng, 12);
    let a = model.encode_latent(&x, false, &mut rng).unwrap();
    let b = model.encode_latent(&x, false, &mut rng).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.z, a.mu);

    let mut r1 = ChaCha8Rng::seed_from_u64(9);
    let s = model.encode_latent(&x, true, &mut r1).unwrap();
    let mut r2 = ChaCha8Rng::seed_from_u64(9);
    let eps = model.draw_eps(1, &mut r2);
    for k in 0..8 {
        let expected = (s.logvar[k] / 2.0).exp() * eps.data()[k];
        assert!(((s.z[k] - s.mu[k]) - expected).abs() <= 1e-12);
    }

    let id = model.store.id("head.logvar.b").unwrap();
    model
        .store
        .get_mut(id)
        .value
        .data_mut()
        .iter_mut()
        .for_each(|x| *x = f64::NEG_INFINITY);
    let s = model.encode_latent(&x, true, &mut rng).unwrap();
    assert_eq!(s.z, s.mu);
    assert!(model
        .encode_latent(&FeatureFrame::zeros(11, true), false, &mut rng)
        .is_err());
}

#[test]
fn decoder_shares_encoder_weights() {
    let (mut model, _) = tiny();
    assert_eq!(model.decoder_conv_param_count(), 0);
    let zero = model.decode_delta(&[0.0; 8]).unwrap();
    assert!(zero.data.iter().all(|&x| x == 0.0));

    let zhat = [0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.0, 0.6];
    let before = model.decode_delta(&zhat).unwrap();
    let id = model.conv_ids(0)[0];
    model.store.get_mut(id).value.data_mut()[0] += 0.25;
    let after = model.decode_delta(&zhat).unwrap();
    assert_ne!(before, after);

    // finite-difference check of decode w.r.t. all parameters, the shared
    // conv weights included
    let err = grad_check_params(
        |t: &mut Tape, store| {
            let mut m = model.clone();
            m.store = store.clone();
            let b = m.bind(t, 1);
            let z = t.constant(Tensor::matrix(1, 8, zhat.to_vec())?);
            let d = m.decode_on_tape(t, &b, z)?;
            let sq = t.square(d);
            Ok(t.sum(sq))
        },
        &model.store,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");

    let mut t = Tape::new();
    let b = model.bind(&mut t, 1);
    let z = t.constant(Tensor::matrix(1, 8, zhat.to_vec()).unwrap());
    let d = model.decode_on_tape(&mut t, &b, z).unwrap();
    let sq = t.square(d);
    let loss = t.sum(sq);
    let mut store = model.store.clone();
    store.zero_grad();
    t.backward_into(loss, &mut store).unwrap();
    for l in 0..3 {
        let [w1, w2, _] = model.conv_ids(l);
        assert!(store.get(w1).grad.iter().any(|g| *g != 0.0));
        assert!(store.get(w2).grad.iter().any(|g| *g != 0.0));
    }
}

#[test]
fn generator_step_and_rollout_contracts() {
    let (mut model, _) = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let frames: Vec<FeatureFrame> = (0..3).map(|_| random_frame(&mut rng, 12)).collect();
    let s0 = model.initial_state(0.1);

    let (s1, x1) = model
        .generator_step(&s0, &frames[0], false, &mut rng)
        .unwrap();
    assert_eq!(
        model
            .generator_step(&s0, &frames[0], false, &mut rng)
            .unwrap(),
        (s1.clone(), x1.clone())
    );
    assert_eq!(
        model
            .rollout(&frames[..1], 1, &s0, false, &mut rng)
            .unwrap(),
        vec![x1.clone()]
    );

    // u = 2: one warm-up step on frame 0, then predict from frame 1
    let (sw, _) = model
        .generator_step(&s0, &frames[0], false, &mut rng)
        .unwrap();
    let mut manual = Vec::new();
    let (mut s, mut x) = (sw, frames[1].clone());
    for _ in 0..4 {
        let (ns, nx) = model.generator_step(&s, &x, false, &mut rng).unwrap();
        manual.push(nx.clone());
        s = ns;
        x = nx;
    }
    assert_eq!(
        model
            .rollout(&frames[..2], 4, &s0, false, &mut rng)
            .unwrap(),
        manual
    );
    assert!(model.rollout(&[], 3, &s0, false, &mut rng).is_err());
    assert!(model
        .rollout(&frames[..1], 0, &s0, false, &mut rng)
        .unwrap()
        .is_empty());

    // seeded sampling is reproducible
    let a = model
        .rollout(
            &frames[..1],
            3,
            &s0,
            true,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
    let b = model
        .rollout(
            &frames[..1],
            3,
            &s0,
            true,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
    assert_eq!(a, b);

    let [w, bias] = model.decoder_fc_ids();
    for id in [w, bias] {
        model
            .store
            .get_mut(id)
            .value
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = 0.0);
    }
    let (s1, x1) = model
        .generator_step(&s0, &frames[2], false, &mut rng)
        .unwrap();
    assert_eq!(x1, frames[2]);
    assert_ne!(s1, s0);
}

#[test]
fn rollout_gradients_match_finite_differences() {
    let (model, _) = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x0 = random_frame(&mut rng, 12);
    let target = random_frame(&mut rng, 12);
    let s0 = model.initial_state(0.1);
    let eps: Vec<Tensor> = (0..4).map(|_| model.draw_eps(1, &mut rng)).collect();
    let err = grad_check_params(
        |t: &mut Tape, store| {
            let mut m = model.clone();
            m.store = store.clone();
            let b = m.bind(t, 1);
            let mut state = m.state_on_tape(t, &[&s0])?;
            let mut x = m.frames_on_tape(t, &[&x0])?;
            let goal = m.frames_on_tape(t, &[&target])?;
            let mut total: Option<meshseq_core::autodiff::Var> = None;
            for e in &eps {
                let step = m.step_on_tape(t, &b, &state, x, Some(e))?;
                let d = t.sub(step.next, goal)?;
                let sq = t.square(d);
                let m = t.mean(sq);
                total = Some(match total {
                    Some(acc) => t.add(acc, m)?,
                    None => m,
                });
                state = step.state;
                x = step.next;
            }
            Ok(total.expect("four steps"))
        },
        &model.store,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn checkpoint_roundtrip_is_bitwise() {
    let (mut model, _) = tiny();
    model.store.step = 17;
    for p in model.store.iter_mut() {
        p.m.iter_mut()
            .enumerate()
            .for_each(|(i, m)| *m = i as f64 * 1e-3);
        p.v.iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = (i as f64).sqrt());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.msqc");
    let meta = serde_json::json!({"iteration": 5});
    save_checkpoint(&path, &model, &meta).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.meta, meta);
    assert_eq!(back.model.config, model.config);
    assert_eq!(back.model.neighbors, model.neighbors);
    assert_eq!(back.model.store.step, 17);
    for ((_, a), (_, b)) in model.store.iter().zip(back.model.store.iter()) {
        assert_eq!(a.name, b.name);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.value.data()), bits(b.value.data()));
        assert_eq!(bits(&a.m), bits(&b.m));
        assert_eq!(bits(&a.v), bits(&b.v));
    }

    let bytes = encode_checkpoint(&model, &meta).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_checkpoint(&bad).is_err());
    assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    let mut wrong_version = bytes.clone();
    wrong_version[4] = 9;
    assert!(decode_checkpoint(&wrong_version).is_err());
}
