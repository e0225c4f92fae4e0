use std::sync::Arc;

use meshseq_core::autodiff::*;
use meshseq_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPES: [(usize, usize); 3] = [(1, 1), (3, 4), (6, 2)];
const TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

/// Reduces an arbitrary tensor to a scalar with fixed random weights so
/// that no coordinate's gradient cancels by symmetry.
fn weighted_sum(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = t.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = t.constant(Tensor::new(
        shape,
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn check(name: &str, x: &Tensor, f: impl Fn(&mut Tape, Var) -> Result<Var>) {
    let err = grad_check(
        |t, v| {
            let y = f(t, v)?;
            weighted_sum(t, y, 99)
        },
        x,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "{name} {:?}: relative error {err:e}", x.shape());
}

#[test]
fn unary_ops_pass_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (r, c) in SHAPES {
        let x = random(&mut rng, r, c);
        check("tanh", &x, |t, v| Ok(t.tanh(v)));
        check("sigmoid", &x, |t, v| Ok(t.sigmoid(v)));
        check("exp", &x, |t, v| Ok(t.exp(v)));
        check("square", &x, |t, v| Ok(t.square(v)));
        check("scale", &x, |t, v| Ok(t.scale(v, -2.5)));
        check("sum", &x, |t, v| Ok(t.sum(v)));
        check("mean", &x, |t, v| Ok(t.mean(v)));
        check("reshape", &x, |t, v| t.reshape(v, vec![c, r]));
        check("slice rows", &x, |t, v| t.slice(v, 0, r / 2, r - r / 2));
        check("slice cols", &x, |t, v| t.slice(v, 1, c / 2, c - c / 2));
    }
}

#[test]
fn binary_ops_pass_gradient_check_in_both_arguments() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (r, c) in SHAPES {
        let x = random(&mut rng, r, c);
        let other = random(&mut rng, r, c);
        for first in [true, false] {
            let pair = |t: &mut Tape, v: Var| {
                let o = t.constant(other.clone());
                if first {
                    (v, o)
                } else {
                    (o, v)
                }
            };
            check("add", &x, |t, v| {
                let (a, b) = pair(t, v);
                t.add(a, b)
            });
            check("sub", &x, |t, v| {
                let (a, b) = pair(t, v);
                t.sub(a, b)
            });
            check("mul", &x, |t, v| {
                let (a, b) = pair(t, v);
                t.mul(a, b)
            });
            check("concat rows", &x, |t, v| {
                let (a, b) = pair(t, v);
                t.concat(&[a, b], 0)
            });
            check("concat cols", &x, |t, v| {
                let (a, b) = pair(t, v);
                t.concat(&[a, b, a], 1)
            });
        }
        check("mul self", &x, |t, v| t.mul(v, v));
    }
}

#[test]
fn matmul_passes_gradient_check_for_all_transposes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (m, k, n) in [(1, 1, 1), (3, 4, 2), (5, 2, 6)] {
        for ta in [false, true] {
            for tb in [false, true] {
                let a = if ta {
                    random(&mut rng, k, m)
                } else {
                    random(&mut rng, m, k)
                };
                let b = if tb {
                    random(&mut rng, n, k)
                } else {
                    random(&mut rng, k, n)
                };
                let bc = b.clone();
                check("matmul lhs", &a, |t, v| {
                    let bv = t.constant(bc.clone());
                    t.matmul(v, bv, ta, tb)
                });
                let ac = a.clone();
                check("matmul rhs", &b, |t, v| {
                    let av = t.constant(ac.clone());
                    t.matmul(av, v, ta, tb)
                });
            }
        }
    }
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<usize>> {
    // ring plus random chords: connected, no isolated vertices
    let mut adj = vec![std::collections::BTreeSet::new(); n];
    for i in 0..n {
        let j = (i + 1) % n;
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    for _ in 0..n {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }
    adj.into_iter().map(|s| s.into_iter().collect()).collect()
}

#[test]
fn neighbor_mean_matches_dense_operator() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..20 {
        let n = rng.gen_range(2..=50);
        let lists = random_graph(&mut rng, n);
        let idx = Arc::new(NeighborMean::from_lists(&lists).unwrap());
        let (batch, channels) = (1 + trial % 3, 1 + trial % 4);
        let x = random(&mut rng, batch * n, channels);
        let dy = random(&mut rng, batch * n, channels);

        // dense A with A[i][j] = 1/d_i
        let mut a = vec![vec![0.0; n]; n];
        for (i, l) in lists.iter().enumerate() {
            for &j in l {
                a[i][j] = 1.0 / l.len() as f64;
            }
        }
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let y = tape.neighbor_mean(xv, &idx).unwrap();
        let w = tape.constant(dy.clone());
        let p = tape.mul(y, w).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        for b in 0..batch {
            for i in 0..n {
                for c in 0..channels {
                    let row = b * n + i;
                    let fwd: f64 = (0..n)
                        .map(|j| a[i][j] * x.data()[(b * n + j) * channels + c])
                        .sum();
                    assert!((tape.value(y).data()[row * channels + c] - fwd).abs() <= 1e-12);
                    // Aᵀ dy: vertex i receives 1/d_j from each j that lists it
                    let bwd: f64 = (0..n)
                        .map(|j| a[j][i] * dy.data()[(b * n + j) * channels + c])
                        .sum();
                    assert!((g.wrt(xv).unwrap()[row * channels + c] - bwd).abs() <= 1e-12);
                }
            }
        }
        let small = random(&mut rng, n, 2);
        let err = grad_check(
            |t, v| {
                let y = t.neighbor_mean(v, &idx)?;
                weighted_sum(t, y, 5)
            },
            &small,
            EPS,
        )
        .unwrap();
        assert!(err <= TOL);
    }
}

#[test]
fn linear_and_tanh_comparator_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, 4, 5);
    assert!(grad_check(|t, v| Ok(t.sum(v)), &x, EPS).unwrap() <= 1e-10);
    assert!(
        grad_check(
            |t, v| {
                let y = t.tanh(v);
                Ok(t.sum(y))
            },
            &x,
            EPS
        )
        .unwrap()
            <= 1e-6
    );
}

#[test]
fn parameters_receive_gradients_and_runs_are_bitwise_repeatable() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let w = store.add("w", random(&mut rng, 3, 4), true).unwrap();
        let b = store.add("b", random(&mut rng, 1, 4), false).unwrap();
        let x = random(&mut rng, 5, 3);
        let mut t = Tape::new();
        let (wv, bv) = (t.param(&store, w), t.param(&store, b));
        let xv = t.constant(x);
        let ones = t.constant(Tensor::filled(&[5, 1], 1.0));
        let h = t.matmul(xv, wv, false, false).unwrap();
        let bias = t.matmul(ones, bv, false, false).unwrap();
        let z = t.add(h, bias).unwrap();
        let a = t.tanh(z);
        let sq = t.square(a);
        let loss = t.mean(sq);
        t.backward_into(loss, &mut store).unwrap();
        (t.value(loss).clone(), store)
    };
    let (l1, s1) = run();
    let (l2, s2) = run();
    assert_eq!(l1.data()[0].to_bits(), l2.data()[0].to_bits());
    assert_eq!(s1, s2);
    assert!(s1.iter().all(|(_, p)| p.grad.iter().any(|g| *g != 0.0)));
}

#[test]
fn adam_minimizes_quadratic_bowl() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut init: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = init.iter().map(|x| x * x).sum::<f64>().sqrt();
    init.iter_mut().for_each(|x| *x /= norm);
    let id = store
        .add("theta", Tensor::new(vec![10], init).unwrap(), true)
        .unwrap();
    let cfg = AdamConfig {
        lr: 0.01,
        ..AdamConfig::default()
    };
    for _ in 0..500 {
        let mut t = Tape::new();
        let v = t.param(&store, id);
        let sq = t.square(v);
        let loss = t.sum(sq);
        t.backward_into(loss, &mut store).unwrap();
        store.adam_step(&cfg).unwrap();
    }
    let n = store
        .value(id)
        .data()
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    assert!(n < 1e-3, "‖θ‖ = {n}");
}
