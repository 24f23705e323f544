mod common;

use nsatp::autodiff::{ParamStore, Tape, Tensor};
use nsatp::cnn::{CnnModel, CnnModelConfig, Placement};
use nsatp::compensation::FeatureScales;
use nsatp::harness::gradcheck::{jitter_params, random_sample};
use nsatp::model::Normalization;
use nsatp::sample::TemporalSample;
use nsatp::spectral::top_k_periods;

fn config(n_p: usize, n_f: usize, compensation: bool) -> CnnModelConfig {
    CnnModelConfig {
        d_model: 6,
        layers: 2,
        k: 2,
        n_kernels: 3,
        n_p,
        n_f,
        placement: Placement::AfterLastBlock,
        compensation,
        mlp_hidden: 16,
    }
}

fn samples(n_p: usize, n_f: usize, n: u64) -> Vec<TemporalSample> {
    (0..n).map(|i| random_sample(n_p, n_f, 100 + i)).collect()
}

fn build(
    cfg: CnnModelConfig,
    norm: Normalization,
    data: &[TemporalSample],
) -> (CnnModel, ParamStore) {
    let mut store = ParamStore::new();
    let model = CnnModel::new(cfg, norm, FeatureScales::fit(data), 5, &mut store).unwrap();
    (model, store)
}

fn delays(m: &CnnModel, store: &ParamStore, s: &TemporalSample) -> Vec<f64> {
    let mut tape = Tape::new();
    m.forward(&mut tape, store, s, None).unwrap().delays(&tape)
}

#[test]
fn fresh_compensation_is_neutral() {
    let data = samples(10, 5, 20);
    let (m, store) = build(config(10, 5, true), Normalization::Series, &data);
    for s in &data {
        let c = m.estimate_compensation(&store, s).unwrap();
        assert_eq!(c.tau, 1.0);
        assert!(c.delta.values().iter().all(|&v| v == 0.0));
        assert_eq!(c.delta.shape(), &[15, 6]);
    }
}

#[test]
fn tau_is_positive() {
    let data = samples(10, 5, 1000);
    let (m, mut store) = build(config(10, 5, true), Normalization::Series, &data[..50]);
    jitter_params(&mut store, 3, 1.5);
    for s in &data {
        let tau = m.estimate_compensation(&store, s).unwrap().tau;
        assert!(tau > 0.0 && tau.is_finite());
    }
}

#[test]
fn golden_compensation() {
    let data = samples(10, 5, 4);
    let (m, mut store) = build(config(10, 5, true), Normalization::Series, &data);
    jitter_params(&mut store, 11, 0.3);
    let c = m.estimate_compensation(&store, &data[0]).unwrap();
    let mut v = vec![c.tau];
    v.extend_from_slice(c.delta.values());
    common::golden("cnn_compensation.json", &v, 1e-9);
}

#[test]
fn golden_forward() {
    let data = samples(10, 5, 4);
    let (m, mut store) = build(config(10, 5, true), Normalization::Series, &data);
    jitter_params(&mut store, 11, 0.3);
    let v: Vec<f64> = data.iter().flat_map(|s| delays(&m, &store, s)).collect();
    common::golden("cnn_forward.json", &v, 1e-9);
}

#[test]
fn zero_kernels_leave_block_input_unchanged() {
    let data = samples(10, 5, 1);
    let (m, mut store) = build(config(10, 5, true), Normalization::Series, &data);
    for b in &m.blocks {
        for id in b.first.params().into_iter().chain(b.second.params()) {
            let shape = store.value(id).shape().to_vec();
            *store.value_mut(id) = Tensor::zeros(&shape);
        }
    }
    let mut tape = Tape::new();
    let (x, _) = m.frontend.embed(&mut tape, &store, &data[0]).unwrap();
    let pd = top_k_periods(tape.value(x), 2).unwrap();
    let y = m.block(&mut tape, &store, &m.blocks[0], x, &pd).unwrap();
    assert!(tape.value(y).bits_eq(tape.value(x)));
}

#[test]
fn output_shapes() {
    for (n_p, n_f) in [(8, 4), (10, 5), (10, 10), (12, 3)] {
        let data = samples(n_p, n_f, 3);
        for comp in [false, true] {
            let (m, store) = build(config(n_p, n_f, comp), Normalization::Series, &data);
            for s in &data {
                let d = delays(&m, &store, s);
                assert_eq!(d.len(), n_f);
                assert!(d.iter().all(|v| v.is_finite()));
            }
        }
    }
}

#[test]
fn wrong_window_is_rejected() {
    let data = samples(10, 5, 1);
    let (m, store) = build(config(10, 5, true), Normalization::Series, &data);
    let mut tape = Tape::new();
    assert!(m
        .forward(&mut tape, &store, &random_sample(10, 4, 1), None)
        .is_err());
    assert!(m
        .forward(&mut tape, &store, &random_sample(9, 5, 1), None)
        .is_err());
}

#[test]
fn invalid_configs() {
    let mut c = config(10, 5, true);
    c.k = 8;
    assert!(c.validate().is_err());
    let mut c = config(10, 5, true);
    c.n_kernels = 0;
    assert!(c.validate().is_err());
}

#[test]
fn neutral_factors_reduce_to_base_model() {
    let data = samples(10, 5, 8);
    let (mut nsatp, mut s1) = build(config(10, 5, true), Normalization::Series, &data);
    let (base, mut s2) = build(config(10, 5, false), Normalization::Series, &data);
    // untrained: zero-initialised estimators are already neutral
    for s in &data {
        let a = delays(&nsatp, &s1, s);
        let b = delays(&base, &s2, s);
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
    jitter_params(&mut s1, 9, 0.3);
    jitter_params(&mut s2, 9, 0.3);
    nsatp.force_neutral = true;
    for s in &data {
        assert_eq!(delays(&nsatp, &s1, s), delays(&base, &s2, s));
    }
    nsatp.force_neutral = false;
    assert_ne!(delays(&nsatp, &s1, &data[0]), delays(&base, &s2, &data[0]));
}

#[test]
fn placements_agree_with_one_layer() {
    let data = samples(10, 5, 4);
    let mut c = config(10, 5, true);
    c.layers = 1;
    let (after, mut s1) = build(c.clone(), Normalization::Series, &data);
    c.placement = Placement::InsideEachBlock;
    let (inside, mut s2) = build(c, Normalization::Series, &data);
    jitter_params(&mut s1, 2, 0.3);
    jitter_params(&mut s2, 2, 0.3);
    for s in &data {
        assert_eq!(delays(&after, &s1, s), delays(&inside, &s2, s));
    }
}

#[test]
fn arrivals_are_schedule_plus_delay() {
    let data = samples(10, 5, 4);
    let (m, mut store) = build(config(10, 5, true), Normalization::Series, &data);
    jitter_params(&mut store, 4, 0.2);
    let model = nsatp::model::Model::Cnn(m);
    for s in &data {
        let a = model.predict(&store, s).unwrap();
        let d = model.predict_delays(&store, s).unwrap();
        for i in 0..5 {
            assert_eq!(a[i], s.future_schedule[i] + d[i]);
        }
        let mut later = s.clone();
        later.future_schedule.iter_mut().for_each(|t| *t += 600.0);
        assert_eq!(model.predict_delays(&store, &later).unwrap(), d);
    }
}

#[test]
fn series_normalization_is_scale_invariant_on_delay() {
    // Affine images of the delay column (with other features fixed) give
    // affinely related predictions for the base model.
    let data = samples(10, 5, 3);
    let (m, mut store) = build(config(10, 5, false), Normalization::Series, &data);
    jitter_params(&mut store, 6, 0.2);
    for s in &data {
        let d = delays(&m, &store, s);
        let mut t = s.clone();
        for r in &mut t.past_features {
            r[2] = 3.0 * r[2] + 40.0;
        }
        let e = delays(&m, &store, &t);
        for (a, b) in d.iter().zip(&e) {
            assert!((3.0 * a + 40.0 - b).abs() < 1e-8 * b.abs().max(1.0));
        }
    }
}
