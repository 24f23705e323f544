//! Central finite-difference checks of tape gradients.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// `(name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            checked: 0,
            worst: None,
        }
    }

    fn record(&mut self, name: &str, idx: usize, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.checked += 1;
        self.max_abs_err = self.max_abs_err.max(abs);
        if rel > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(rel);
            self.worst = Some((name.to_string(), idx, analytic, numeric));
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares the tape gradient of `f` with respect to each input against
/// `(f(x+h) - f(x-h)) / 2h`, one coordinate at a time.
pub fn check_inputs<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).values()[0])
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut report = GradCheckReport::new();
    let mut xs = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let zero = vec![0.0; inputs[k].len()];
        let analytic = grads.get(v).unwrap_or(&zero).to_vec();
        for i in 0..inputs[k].len() {
            let orig = xs[k].values()[i];
            xs[k].values_mut()[i] = orig + h;
            let up = eval(&xs)?;
            xs[k].values_mut()[i] = orig - h;
            let down = eval(&xs)?;
            xs[k].values_mut()[i] = orig;
            report.record(
                &format!("input{k}"),
                i,
                analytic[i],
                (up - down) / (2.0 * h),
            );
        }
    }
    Ok(report)
}

/// Same as [`check_inputs`] but over every trainable scalar of a parameter store.
pub fn check_params<F>(store: &mut ParamStore, h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let grads = tape.backward(out)?;
    let loaded: std::collections::HashMap<_, _> = tape.param_vars().collect();
    let mut report = GradCheckReport::new();
    let ids: Vec<_> = store.ids().filter(|&id| store.trainable(id)).collect();
    for id in ids {
        let n = store.value(id).len();
        let analytic = match loaded.get(&id).and_then(|&v| grads.get(v)) {
            Some(g) => g.to_vec(),
            None => vec![0.0; n],
        };
        let name = store.name(id).to_string();
        for i in 0..n {
            let orig = store.value(id).values()[i];
            store.value_mut(id).values_mut()[i] = orig + h;
            let up = eval_params(store, &f)?;
            store.value_mut(id).values_mut()[i] = orig - h;
            let down = eval_params(store, &f)?;
            store.value_mut(id).values_mut()[i] = orig;
            report.record(&name, i, analytic[i], (up - down) / (2.0 * h));
        }
    }
    Ok(report)
}

fn eval_params<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    Ok(tape.value(out).values()[0])
}
