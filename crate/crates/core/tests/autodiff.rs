use nsatp::autodiff::ops::{conv1d, conv2d, linear, relu, softmax_rows};
use nsatp::autodiff::{Adam, Checkpoint, Padding, ParamStore, Tape, Tensor};
use nsatp::harness::gradcheck::{op_suite, OP_TOL};
use nsatp::nn::{mlp_forward, Mlp};
use nsatp::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
    )
    .unwrap()
}

#[test]
fn linear_examples() {
    let x = Tensor::vector(vec![1.0, 2.0]);
    let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(linear(&x, &eye, None).unwrap().values(), &[1.0, 2.0]);
    let b = Tensor::vector(vec![3.0, 4.0]);
    assert_eq!(linear(&x, &eye, Some(&b)).unwrap().values(), &[4.0, 6.0]);
}

#[test]
fn identity_kernels() {
    let x = random(1, &[7, 1]);
    let k1 = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
    assert!(conv1d(&x, &k1, Padding::Zeros).unwrap().bits_eq(&x));
    let g = random(2, &[3, 4, 2]);
    let k2 = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert!(conv2d(&g, &k2, Padding::Zeros).unwrap().bits_eq(&g));
}

#[test]
fn even_kernels_rejected() {
    let x = random(1, &[6, 2]);
    let k = random(2, &[2, 2, 3]);
    assert!(matches!(
        conv1d(&x, &k, Padding::Zeros),
        Err(Error::EvenKernel(2))
    ));
    let g = random(3, &[3, 3, 1]);
    let k = random(4, &[3, 2, 1, 1]);
    assert!(matches!(
        conv2d(&g, &k, Padding::Zeros),
        Err(Error::EvenKernel(_))
    ));
}

#[test]
fn relu_variants() {
    let r = |v: f64| relu(&Tensor::vector(vec![v])).unwrap().values()[0];
    assert_eq!(
        relu(&Tensor::vector(vec![-1.0, 0.0, 2.0]))
            .unwrap()
            .values(),
        &[0.0, 0.0, 2.0]
    );
    assert_eq!(r(3.0 * 2.0 - 5.0), 1.0);
    assert_eq!(r(2.0 * 2.0 - 7.0), 0.0);
    assert!(matches!(
        relu(&Tensor::vector(vec![f64::NAN])),
        Err(Error::NonFinite(_))
    ));
    assert!(softmax_rows(&Tensor::vector(vec![f64::INFINITY, 0.0])).is_err());
}

#[test]
fn softmax_rows_are_stochastic() {
    let x = random(5, &[6, 9]).map(|v| 10.0 * v);
    let s = softmax_rows(&x).unwrap();
    for r in 0..6 {
        let row = &s.values()[r * 9..(r + 1) * 9];
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&v| v >= 0.0));
    }
    let c = softmax_rows(&Tensor::vector(vec![2.0; 4])).unwrap();
    assert_eq!(c.values(), &[0.25; 4]);
}

#[test]
fn every_op_passes_finite_differences() {
    for case in op_suite(3).unwrap() {
        assert!(case.passes(), "{}: {:?}", case.name, case.report);
        assert!(case.tol <= OP_TOL);
    }
}

#[test]
fn plain_mlp_matches_tape() {
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "m", &[4, 6, 3], 9, false);
    let x = random(7, &[4]);
    let plain = mlp_forward(&store, &mlp, &x).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let y = mlp.forward(&mut tape, &store, xv).unwrap();
    assert!(tape.value(y).bits_eq(&plain));
}

#[test]
fn checkpoint_file_round_trip() {
    let mut store = ParamStore::new();
    store.add_uniform("a.w", &[3, 5], 3, 1);
    store.add_uniform("a.b", &[5], 3, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    store
        .to_checkpoint(serde_json::json!({"note": "x"}))
        .save(&path)
        .unwrap();
    let ckpt = Checkpoint::load(&path).unwrap();
    let mut other = ParamStore::new();
    other.add("a.w", Tensor::zeros(&[3, 5]));
    other.add("a.b", Tensor::zeros(&[5]));
    other.load_checkpoint(&ckpt).unwrap();
    for id in store.ids() {
        assert!(store.value(id).bits_eq(other.value(id)));
    }
    let mut wrong = ParamStore::new();
    wrong.add("a.w", Tensor::zeros(&[5, 3]));
    wrong.add("a.b", Tensor::zeros(&[5]));
    assert!(wrong.load_checkpoint(&ckpt).is_err());
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let mut store = ParamStore::new();
        let w = store.add_uniform("w", &[4], 4, 3);
        let mut opt = Adam::new(0.01);
        for _ in 0..25 {
            let mut tape = Tape::new();
            let wv = tape.param(&store, w);
            let sq = tape.mul(wv, wv).unwrap();
            let loss = tape.sum(sq);
            let g = tape.backward(loss).unwrap();
            opt.step(&mut store, &tape, &g);
        }
        store.value(w).clone()
    };
    assert!(run().bits_eq(&run()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv1d_is_linear(seed in 0u64..10_000, a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let x = random(seed, &[9, 3]);
        let y = random(seed + 1, &[9, 3]);
        let k = random(seed + 2, &[3, 3, 2]);
        let lhs = conv1d(&x.axpby(a, &y, b).unwrap(), &k, Padding::Zeros).unwrap();
        let rhs = conv1d(&x, &k, Padding::Zeros).unwrap()
            .axpby(a, &conv1d(&y, &k, Padding::Zeros).unwrap(), b).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }
}
