//! The finite-difference suite behind the `gradcheck` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{check_inputs, check_params, GradCheckReport, DEFAULT_STEP};
use crate::autodiff::params::name_seed;
use crate::autodiff::{Padding, ParamStore, Tape, Tensor, Var};
use crate::cnn::{CnnModelConfig, Placement};
use crate::compensation::FeatureScales;
use crate::error::Result;
use crate::model::{normalized_target, Model, ModelSpec, Normalization};
use crate::sample::TemporalSample;
use crate::spectral::PeriodDecomposition;
use crate::swin::SwinModelConfig;

/// Tolerance on the relative error of single operations.
pub const OP_TOL: f64 = 1e-4;
/// Tolerance on the relative error of whole models.
pub const MODEL_TOL: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckCase {
    pub name: String,
    pub tol: f64,
    pub report: GradCheckReport,
}

impl GradCheckCase {
    pub fn passes(&self) -> bool {
        self.report.passes(self.tol)
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("shape matches length")
}

/// `Σ w ⊙ out` with fixed random weights, so every output entry matters.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, tape.shape(out), -1.0, 1.0);
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

type OpFn = fn(&mut Tape, &[Var]) -> Result<Var>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    let m = |s: &[usize]| s.to_vec();
    vec![
        ("add", vec![m(&[3, 4]), m(&[3, 4])], |t, v| {
            t.add(v[0], v[1])
        }),
        ("sub", vec![m(&[3, 4]), m(&[3, 4])], |t, v| {
            t.sub(v[0], v[1])
        }),
        ("mul", vec![m(&[3, 4]), m(&[3, 4])], |t, v| {
            t.mul(v[0], v[1])
        }),
        ("scale", vec![m(&[5])], |t, v| Ok(t.scale(v[0], -1.7))),
        ("scale_by", vec![m(&[2, 3]), m(&[1])], |t, v| {
            t.scale_by(v[0], v[1])
        }),
        ("div_by", vec![m(&[2, 3]), m(&[1])], |t, v| {
            let s = t.exp(v[1]);
            t.div_by(v[0], s)
        }),
        ("add_scalar", vec![m(&[2, 3]), m(&[1])], |t, v| {
            t.add_scalar(v[0], v[1])
        }),
        ("add_row", vec![m(&[3, 4]), m(&[4])], |t, v| {
            t.add_row(v[0], v[1])
        }),
        ("mul_row", vec![m(&[2, 3, 4]), m(&[4])], |t, v| {
            t.mul_row(v[0], v[1])
        }),
        ("exp", vec![m(&[6])], |t, v| Ok(t.exp(v[0]))),
        ("relu", vec![m(&[4, 3])], |t, v| t.relu(v[0])),
        ("matmul", vec![m(&[3, 4]), m(&[4, 2])], |t, v| {
            t.matmul(v[0], v[1])
        }),
        (
            "matmul_batched",
            vec![m(&[2, 3, 4]), m(&[2, 4, 2])],
            |t, v| t.matmul(v[0], v[1]),
        ),
        ("matmul_nt", vec![m(&[3, 4]), m(&[5, 4])], |t, v| {
            t.matmul_nt(v[0], v[1])
        }),
        ("linear", vec![m(&[4, 3]), m(&[3, 2]), m(&[2])], |t, v| {
            t.linear(v[0], v[1], Some(v[2]))
        }),
        ("linear_no_bias", vec![m(&[4, 3]), m(&[3, 2])], |t, v| {
            t.linear(v[0], v[1], None)
        }),
        ("conv1d", vec![m(&[7, 3]), m(&[3, 3, 2])], |t, v| {
            t.conv1d(v[0], v[1], Padding::Zeros)
        }),
        (
            "conv1d_circular",
            vec![m(&[7, 3]), m(&[3, 3, 2])],
            |t, v| t.conv1d(v[0], v[1], Padding::Circular),
        ),
        ("conv2d", vec![m(&[4, 5, 2]), m(&[3, 3, 2, 3])], |t, v| {
            t.conv2d(v[0], v[1], Padding::Zeros)
        }),
        (
            "conv2d_circular",
            vec![m(&[4, 5, 2]), m(&[3, 3, 2, 3])],
            |t, v| t.conv2d(v[0], v[1], Padding::Circular),
        ),
        (
            "centered_kernel_mean",
            vec![m(&[1, 1, 2, 2]), m(&[3, 3, 2, 2])],
            |t, v| t.centered_kernel_mean(v),
        ),
        (
            "mean_of",
            vec![m(&[3, 2]), m(&[3, 2]), m(&[3, 2])],
            |t, v| t.mean_of(v),
        ),
        ("softmax_rows", vec![m(&[3, 5])], |t, v| {
            t.softmax_rows(v[0])
        }),
        ("layer_norm", vec![m(&[3, 5]), m(&[5]), m(&[5])], |t, v| {
            t.layer_norm(v[0], v[1], v[2])
        }),
        ("mse", vec![m(&[6]), m(&[6])], |t, v| t.mse(v[0], v[1])),
        ("sum", vec![m(&[2, 3])], |t, v| Ok(t.sum(v[0]))),
        ("gather_rows", vec![m(&[4, 3])], |t, v| {
            t.gather_rows(
                v[0],
                3,
                vec![Some(2), None, Some(0), Some(2), Some(3)],
                vec![5, 3],
            )
        }),
        ("concat_cols", vec![m(&[3, 2]), m(&[3, 4])], |t, v| {
            t.concat_cols(v[0], v[1])
        }),
        ("reshape", vec![m(&[2, 6])], |t, v| {
            t.reshape(v[0], vec![3, 4])
        }),
    ]
}

/// Checks every differentiable tape operation on random inputs.
pub fn op_suite(seed: u64) -> Result<Vec<GradCheckCase>> {
    op_cases()
        .into_iter()
        .map(|(name, shapes, f)| {
            let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
            let inputs: Vec<Tensor> = shapes
                .iter()
                .map(|s| random(&mut rng, s, -2.0, 2.0))
                .collect();
            let proj = name_seed(seed, &format!("{name}.proj"));
            let report = check_inputs(&inputs, DEFAULT_STEP, |t, v| {
                let out = f(t, v)?;
                project(t, out, proj)
            })?;
            Ok(GradCheckCase {
                name: name.to_string(),
                tol: OP_TOL,
                report,
            })
        })
        .collect()
}

/// A plausible random window, for tests and gradient checks.
pub fn random_sample(n_p: usize, n_f: usize, seed: u64) -> TemporalSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut delay: f64 = rng.random_range(-30.0..60.0);
    let mut clock = rng.random_range(20_000.0..70_000.0);
    let mut past = Vec::with_capacity(n_p);
    for _ in 0..n_p {
        let travel = rng.random_range(40.0..120.0);
        delay = 0.8 * delay + rng.random_range(-15.0..20.0);
        past.push([
            rng.random_range(250.0..700.0),
            travel,
            delay,
            f64::from(rng.random_bool(0.5)),
            travel + rng.random_range(-10.0..10.0),
        ]);
    }
    let mut schedule = Vec::with_capacity(n_f);
    let mut truth = Vec::with_capacity(n_f);
    for _ in 0..n_f {
        clock += rng.random_range(40.0..120.0);
        delay = 0.8 * delay + rng.random_range(-15.0..20.0);
        schedule.push(clock);
        truth.push(delay);
    }
    let weekend = u8::from(rng.random_bool(0.3));
    let context = (0..n_p + n_f)
        .map(|_| [u8::from(rng.random_bool(0.3)), weekend])
        .collect();
    TemporalSample {
        past_features: past,
        context,
        future_arrival_truth: schedule.iter().zip(&truth).map(|(s, d)| s + d).collect(),
        future_schedule: schedule,
        future_delay_truth: truth,
    }
}

pub fn tiny_cnn(n_p: usize, n_f: usize) -> CnnModelConfig {
    CnnModelConfig {
        d_model: 4,
        layers: 2,
        k: 2,
        n_kernels: 2,
        n_p,
        n_f,
        placement: Placement::AfterLastBlock,
        compensation: true,
        mlp_hidden: 8,
    }
}

pub fn tiny_swin(n_p: usize, n_f: usize) -> SwinModelConfig {
    SwinModelConfig {
        d_model: 4,
        d_k: 4,
        window: 2,
        layers: 2,
        k: 2,
        n_p,
        n_f,
        heads: 1,
        mlp_hidden: 8,
        ffn_hidden: 6,
        comp_inner: true,
        comp_outer: true,
    }
}

/// Moves every parameter off its initial value so zero-initialised layers
/// carry gradient through the rest of the network.
pub fn jitter_params(store: &mut ParamStore, seed: u64, amount: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, store.name(id)));
        for v in store.value_mut(id).values_mut() {
            *v += rng.random_range(-amount..amount);
        }
    }
}

/// End-to-end check of a model's loss on one window with respect to every
/// trainable parameter. The period plan is fixed from an unperturbed pass, and
/// the loss is divided by its initial value so the finite-difference noise
/// floor does not depend on the scale the model works in.
pub fn check_model(
    spec: &ModelSpec,
    normalization: Normalization,
    sample: &TemporalSample,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let scales = FeatureScales::fit(std::iter::once(sample));
    let model = Model::build(spec, normalization, scales, seed, &mut store)?;
    jitter_params(&mut store, seed, 0.2);
    let loss = |tape: &mut Tape,
                store: &ParamStore,
                plan: Option<&[PeriodDecomposition]>|
     -> Result<(Var, Vec<PeriodDecomposition>)> {
        let out = model.forward(tape, store, sample, plan)?;
        let target = tape.constant(Tensor::vector(normalized_target(sample, &out.stats)));
        Ok((tape.mse(out.pred_norm, target)?, out.plan))
    };
    let (plan, l0) = {
        let mut tape = Tape::new();
        let (l, plan) = loss(&mut tape, &store, None)?;
        (plan, tape.value(l).values()[0])
    };
    check_params(&mut store, DEFAULT_STEP, |tape, store| {
        let (l, _) = loss(tape, store, Some(&plan))?;
        Ok(tape.scale(l, 1.0 / l0))
    })
}

/// Tiny end-to-end models covering each backbone and switch.
pub fn model_suite(seed: u64) -> Result<Vec<GradCheckCase>> {
    let (n_p, n_f) = (6, 3);
    let sample = random_sample(n_p, n_f, name_seed(seed, "sample"));
    let cnn = tiny_cnn(n_p, n_f);
    let swin = tiny_swin(n_p, n_f);
    let cases = [
        (
            "nsatp_cnn",
            ModelSpec::Cnn(cnn.clone()),
            Normalization::Series,
        ),
        (
            "nsatp_cnn_inside",
            ModelSpec::Cnn(CnnModelConfig {
                placement: Placement::InsideEachBlock,
                ..cnn.clone()
            }),
            Normalization::Series,
        ),
        (
            "arrivalnet_cnn",
            ModelSpec::Cnn(CnnModelConfig {
                compensation: false,
                ..cnn.clone()
            }),
            Normalization::Series,
        ),
        ("nsatp_cnn_revin", ModelSpec::Cnn(cnn), Normalization::RevIn),
        (
            "nsatp_swin",
            ModelSpec::Swin(swin.clone()),
            Normalization::Series,
        ),
        (
            "nsatp_swin_raw",
            ModelSpec::Swin(swin.clone()),
            Normalization::Off,
        ),
        (
            "arrivalnet_swin",
            ModelSpec::Swin(SwinModelConfig {
                comp_inner: false,
                comp_outer: false,
                ..swin
            }),
            Normalization::RevIn,
        ),
    ];
    cases
        .into_iter()
        .map(|(name, spec, norm)| {
            Ok(GradCheckCase {
                name: name.to_string(),
                tol: MODEL_TOL,
                report: check_model(&spec, norm, &sample, name_seed(seed, name))?,
            })
        })
        .collect()
}

/// Operations first, then whole models.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheckCase>> {
    let mut cases = op_suite(seed)?;
    cases.extend(model_suite(seed)?);
    Ok(cases)
}
