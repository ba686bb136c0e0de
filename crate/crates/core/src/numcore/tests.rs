use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

#[test]
fn matmul_examples() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let eye = tape.input(Tensor::identity(2));
    let m = tape.input(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let out = tape.matmul(eye, m).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = tape.input(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
    let b = tape.input(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
    let out = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(out).shape(), &[1, 1]);
    assert_eq!(tape.value(out).data(), &[11.0]);

    let z = tape.input(Tensor::zeros(vec![2, 3]));
    let any = tape.input(Tensor::from_rows(&vec![vec![1.0, -2.0, 3.0, 4.0]; 3]).unwrap());
    let out = tape.matmul(z, any).unwrap();
    assert_eq!(tape.value(out), &Tensor::zeros(vec![2, 4]));
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let a = tape.input(Tensor::zeros(vec![2, 3]));
    let b = tape.input(Tensor::zeros(vec![2, 3]));
    match tape.matmul(a, b) {
        Err(Error::Shape { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn softmax_examples() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let x = tape.input(Tensor::vector(vec![0.0, 0.0, 0.0]));
    let s = tape.softmax(x).unwrap();
    assert!(close(tape.value(s).data(), &[1.0 / 3.0; 3], 1e-15));

    let delta = 0.7;
    for c in [-50.0, 0.0, 3.0, 400.0] {
        let shifted = tape.input(Tensor::vector(vec![c, c + delta]));
        let base = tape.input(Tensor::vector(vec![0.0, delta]));
        let (s1, s2) = (tape.softmax(shifted).unwrap(), tape.softmax(base).unwrap());
        assert!(close(tape.value(s1).data(), tape.value(s2).data(), 1e-12));
    }

    let x = tape.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let s = tape.softmax(x).unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    let oracle: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp() / z).collect();
    assert!(close(tape.value(s).data(), &oracle, 1e-15));
    let got = tape.value(s).data();
    assert!(got[2] > got[1] && got[1] > got[0]);

    let bad = tape.input(Tensor::vector(vec![1.0, f64::NAN]));
    assert!(matches!(tape.softmax(bad), Err(Error::Numeric { .. })));
}

#[test]
fn elementwise_examples() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let x = tape.input(Tensor::vector(vec![-1.0, 0.0, 2.0]));
    let r = tape.relu(x);
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);

    let zero = tape.input(Tensor::scalar(0.0));
    let s = tape.sigmoid(zero);
    assert_eq!(tape.value(s).item(), Some(0.5));

    let nonpos = tape.input(Tensor::vector(vec![1.0, 0.0]));
    assert!(matches!(tape.log(nonpos), Err(Error::Numeric { .. })));

    let a = tape.input(Tensor::vector(vec![1.0, 2.0]));
    let two = tape.input(Tensor::scalar(2.0));
    let m = tape.mul(a, two).unwrap();
    assert_eq!(tape.value(m).data(), &[2.0, 4.0]);
    let bad = tape.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
    assert!(matches!(tape.add(a, bad), Err(Error::Shape { .. })));
}

#[test]
fn sigmoid_slope_at_zero_by_finite_difference() {
    let mut store = ParamStore::new();
    let p = store.add("x", Tensor::scalar(0.0)).unwrap();
    let eps = 1e-6;
    let eval = |x: f64| {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let v = tape.input(Tensor::scalar(x));
        let s = tape.sigmoid(v);
        tape.value(s).item().unwrap()
    };
    let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
    assert!((numeric - 0.25).abs() < 1e-10);

    let mut tape = Tape::new(&store);
    let x = tape.param(p);
    let s = tape.sigmoid(x);
    let mut grads = GradStore::for_store(&store);
    tape.backward(s, &mut grads).unwrap();
    assert!((grads.get(p)[0] - numeric).abs() < 1e-10);
}

#[test]
fn concat_examples() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let a = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
    assert_eq!(tape.concat(&[a]).unwrap(), a);
    let b = tape.leaf(Tensor::from_rows(&[vec![3.0, 4.0, 5.0]]).unwrap());
    let c = tape.concat(&[a, b]).unwrap();
    assert_eq!(tape.value(c).shape(), &[1, 5]);
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);

    let s = tape.sum(c);
    let mut grads = GradStore::for_store(&store);
    let g = tape.backward(s, &mut grads).unwrap();
    assert_eq!(g.get(a).unwrap(), &[1.0, 1.0]);

    let bad = tape.input(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
    assert!(matches!(tape.concat(&[a, bad]), Err(Error::Shape { .. })));
    assert!(tape.concat(&[]).is_err());
}

#[test]
fn backward_examples() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
    let unused = store.add("unused", Tensor::vector(vec![5.0])).unwrap();

    let mut grads = GradStore::for_store(&store);
    let mut tape = Tape::new(&store);
    let wv = tape.param(w);
    let s = tape.sum(wv);
    tape.backward(s, &mut grads).unwrap();
    assert_eq!(grads.get(w), &[1.0, 1.0]);
    assert_eq!(grads.get(unused), &[0.0]);

    grads.zero_grad();
    let mut tape = Tape::new(&store);
    let wv = tape.param(w);
    let sq = tape.mul(wv, wv).unwrap();
    let s = tape.sum(sq);
    tape.backward(s, &mut grads).unwrap();
    assert_eq!(grads.get(w), &[2.0, 4.0]);

    // A second backward without zeroing accumulates.
    tape.backward(s, &mut grads).unwrap();
    assert_eq!(grads.get(w), &[4.0, 8.0]);

    assert!(matches!(tape.backward(sq, &mut grads), Err(Error::Contract(_))));
}

#[test]
fn grad_check_exact_on_linear_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let p = store.add("p", random_tensor(&mut rng, vec![3, 4])).unwrap();
    let report = grad_check(
        &store,
        p,
        |tape| {
            let v = tape.param(p);
            Ok(tape.sum(v))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert_eq!(report.checked, 12);
    assert!(report.max_rel_error < 1e-8, "{report:?}");
}

#[test]
fn grad_check_masks_relu_kinks() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::vector(vec![0.0, 0.5, -0.5, 0.0])).unwrap();
    let f = |tape: &mut Tape<'_>| {
        let v = tape.param(p);
        let r = tape.relu(v);
        Ok(tape.sum(r))
    };
    let report = grad_check(&store, p, f, &GradCheckOptions::default()).unwrap();
    assert_eq!(report.masked, 2);
    assert_eq!(report.checked, 2);
    assert!(report.max_rel_error < 1e-8);

    // Without masking, the kinks at zero show up as large disagreement.
    let unmasked = grad_check(
        &store,
        p,
        f,
        &GradCheckOptions {
            mask_kinks: false,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(unmasked.max_rel_error > 0.1);
}

#[test]
fn grad_check_rejects_out_of_range_step() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::scalar(1.0)).unwrap();
    let opts = GradCheckOptions {
        eps: 1e-2,
        ..Default::default()
    };
    assert!(grad_check(&store, p, |t| Ok(t.param(p)), &opts).is_err());
}

/// One op under test: builds its output from the given parameter nodes.
type OpCase = (&'static str, Vec<Vec<usize>>, fn(&mut Tape<'_>, &[Var]) -> Var);

fn op_cases() -> Vec<OpCase> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| t.matmul(v[0], v[1]).unwrap()),
        ("matmul_bt", vec![vec![3, 4], vec![5, 4]], |t, v| t.matmul_bt(v[0], v[1]).unwrap()),
        ("add_bias", vec![vec![3, 4], vec![4]], |t, v| t.add_bias(v[0], v[1]).unwrap()),
        ("add", vec![vec![2, 3], vec![2, 3]], |t, v| t.add(v[0], v[1]).unwrap()),
        ("sub_scalar", vec![vec![2, 3], vec![]], |t, v| t.sub(v[0], v[1]).unwrap()),
        ("mul", vec![vec![2, 3], vec![2, 3]], |t, v| t.mul(v[0], v[1]).unwrap()),
        ("mul_scalar", vec![vec![], vec![2, 3]], |t, v| t.mul(v[0], v[1]).unwrap()),
        ("scale", vec![vec![2, 3]], |t, v| t.scale(v[0], -1.7)),
        ("neg", vec![vec![4]], |t, v| t.neg(v[0])),
        ("relu", vec![vec![3, 3]], |t, v| t.relu(v[0])),
        ("sigmoid", vec![vec![3, 3]], |t, v| t.sigmoid(v[0])),
        ("log", vec![vec![2, 2]], |t, v| {
            let sq = t.mul(v[0], v[0]).unwrap();
            let one = t.input(Tensor::scalar(0.5));
            let pos = t.add(sq, one).unwrap();
            t.log(pos).unwrap()
        }),
        ("clamp", vec![vec![3, 3]], |t, v| t.clamp(v[0], -0.5, 0.8)),
        ("softmax", vec![vec![3, 4]], |t, v| t.softmax(v[0]).unwrap()),
        ("concat", vec![vec![2, 3], vec![2, 1], vec![2, 2]], |t, v| t.concat(v).unwrap()),
        ("mix_rows", vec![vec![3, 2], vec![3, 4], vec![3, 4]], |t, v| {
            let w = t.softmax(v[0]).unwrap();
            t.mix(w, &v[1..]).unwrap()
        }),
        ("mix_shared", vec![vec![1, 3], vec![2, 4], vec![2, 4], vec![2, 4]], |t, v| {
            let w = t.softmax(v[0]).unwrap();
            t.mix(w, &v[1..]).unwrap()
        }),
        ("gather", vec![vec![5, 3]], |t, v| t.gather_rows(v[0], &[4, 0, 4, 2]).unwrap()),
        ("sum", vec![vec![2, 3]], |t, v| t.sum(v[0])),
        ("mean", vec![vec![2, 3]], |t, v| t.mean(v[0]).unwrap()),
        ("bce", vec![vec![3, 1]], |t, v| {
            let p = t.sigmoid(v[0]);
            t.bce(p, &[1.0, 0.0, 1.0]).unwrap()
        }),
    ]
}

#[test]
fn every_op_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for (name, shapes, build) in op_cases() {
        for trial in 0..20 {
            let mut store = ParamStore::new();
            let ids: Vec<ParamId> = shapes
                .iter()
                .enumerate()
                .map(|(i, s)| store.add(format!("{name}.{i}"), random_tensor(&mut rng, s.clone())).unwrap())
                .collect();
            // Random projection of the output so every element contributes distinctly.
            let out_len = {
                let mut tape = Tape::new(&store);
                let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
                let out = build(&mut tape, &vars);
                tape.value(out).shape().to_vec()
            };
            let projection = random_tensor(&mut rng, out_len);
            let f = |tape: &mut Tape<'_>| {
                let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
                let out = build(tape, &vars);
                let proj = tape.input(projection.clone());
                let prod = tape.mul(out, proj)?;
                Ok(tape.sum(prod))
            };
            for &id in &ids {
                let report = grad_check(&store, id, f, &GradCheckOptions::default()).unwrap();
                assert!(
                    report.max_rel_error < 1e-5,
                    "{name} trial {trial}: {report:?}"
                );
            }
        }
    }
}

#[test]
fn gather_rejects_out_of_vocab() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let table = tape.input(Tensor::zeros(vec![3, 2]));
    assert!(matches!(
        tape.gather_rows(table, &[0, 3]),
        Err(Error::Index { index: 3, size: 3, .. })
    ));
}

#[test]
fn tape_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut store = ParamStore::new();
        let w = store
            .add_init("w", vec![4, 6], Init::GlorotUniform { fan_in: 6, fan_out: 4 }, &mut rng)
            .unwrap();
        let x = random_tensor(&mut rng, vec![5, 6]);
        let mut tape = Tape::new(&store);
        let xv = tape.input(x);
        let wv = tape.param(w);
        let h = tape.matmul_bt(xv, wv).unwrap();
        let s = tape.softmax(h).unwrap();
        let l = tape.bce(s, &[0.0; 20]).unwrap();
        let m = tape.mean(l).unwrap();
        tape.value(m).item().unwrap().to_bits()
    };
    assert_eq!(run(), run());
}

#[test]
fn sgd_examples() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::scalar(1.0)).unwrap();
    let mut grads = GradStore::for_store(&store);
    let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1), &store);

    opt.step(&mut store, &grads).unwrap();
    assert_eq!(store.value(p).item(), Some(1.0));

    grads.accumulate(p, &[1.0]);
    opt.step(&mut store, &grads).unwrap();
    assert!((store.value(p).item().unwrap() - 0.9).abs() < 1e-15);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    for g in [1e-3, 1.0, 1e3] {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::scalar(0.0)).unwrap();
        let mut grads = GradStore::for_store(&store);
        grads.accumulate(p, &[g]);
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01), &store);
        opt.step(&mut store, &grads).unwrap();
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε).
        let moved = store.value(p).item().unwrap().abs();
        assert!((moved - 0.01).abs() < 1e-7, "g={g}: moved {moved}");
    }
}

#[test]
fn non_finite_gradient_names_parameter() {
    let mut store = ParamStore::new();
    store.add("fine", Tensor::scalar(1.0)).unwrap();
    let bad = store.add("layer.bad.w", Tensor::scalar(1.0)).unwrap();
    let mut grads = GradStore::for_store(&store);
    grads.accumulate(bad, &[f64::NAN]);
    let before = store.clone();
    let mut opt = Optimizer::new(OptimizerConfig::adam(0.1), &store);
    match opt.step(&mut store, &grads) {
        Err(Error::NonFiniteGradient { param }) => assert_eq!(param, "layer.bad.w"),
        other => panic!("expected non-finite gradient error, got {other:?}"),
    }
    assert_eq!(store, before);
}

proptest! {
    #[test]
    fn softmax_is_a_probability_vector(logits in prop::collection::vec(-30.0f64..30.0, 1..12)) {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(Tensor::vector(logits.clone()));
        let s = tape.softmax(x).unwrap();
        let out = tape.value(s).data();
        prop_assert!(out.iter().all(|&v| v > 0.0));
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let argmax = |v: &[f64]| v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best });
        prop_assert_eq!(argmax(out), argmax(&logits));
    }

    #[test]
    fn backward_is_linear_in_the_loss(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w = store.add("w", random_tensor(&mut rng, vec![3, 2])).unwrap();
        let x = random_tensor(&mut rng, vec![4, 3]);
        let build = |tape: &mut Tape<'_>| {
            let xv = tape.input(x.clone());
            let wv = tape.param(w);
            let h = tape.matmul(xv, wv).unwrap();
            let a = tape.sigmoid(h);
            let l1 = tape.sum(a);
            let sq = tape.mul(h, h).unwrap();
            let l2 = tape.mean(sq).unwrap();
            (l1, l2)
        };
        let mut joint = GradStore::for_store(&store);
        let mut separate = GradStore::for_store(&store);
        let mut tape = Tape::new(&store);
        let (l1, l2) = build(&mut tape);
        let total = tape.add(l1, l2).unwrap();
        tape.backward(total, &mut joint).unwrap();
        tape.backward(l1, &mut separate).unwrap();
        tape.backward(l2, &mut separate).unwrap();
        prop_assert!(close(joint.get(w), separate.get(w), 1e-12));
    }
}
