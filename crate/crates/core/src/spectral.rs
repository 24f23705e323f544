//! Period detection with a direct DFT and the 1-D ⇄ 2-D folding used by the
//! two backbones.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{shape_err, Error, Result};

/// `Y[k] = Σ_t x[t]·exp(-2πi·k·t/T)`, computed directly in O(T²).
pub fn dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    let twiddle: Vec<Complex64> = (0..n)
        .map(|m| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * m as f64 / n as f64))
        .collect();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, &v)| twiddle[(k * t) % n] * v)
                .sum()
        })
        .collect()
}

/// Dominant frequencies of a `[T × d_model]` sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodDecomposition {
    pub freqs: Vec<usize>,
    pub periods: Vec<usize>,
    pub amplitudes: Vec<f64>,
}

/// Channel-averaged DFT magnitude for frequencies `1..=T/2` (index 0 is `f = 1`).
pub fn amplitude_spectrum(x: &Tensor) -> Result<Vec<f64>> {
    if x.shape().len() != 2 || x.is_empty() {
        return Err(shape_err(format!("expected [T × d], got {:?}", x.shape())));
    }
    let (t, d) = (x.shape()[0], x.shape()[1]);
    let mut amp = vec![0.0; t / 2];
    for c in 0..d {
        let spec = dft(&x.column(c));
        for (f, a) in amp.iter_mut().enumerate() {
            *a += spec[f + 1].norm();
        }
    }
    for a in &mut amp {
        *a /= d as f64;
    }
    Ok(amp)
}

/// The `k` strongest non-DC frequencies, ties going to the lower frequency.
pub fn top_k_periods(x: &Tensor, k: usize) -> Result<PeriodDecomposition> {
    let amp = amplitude_spectrum(x)?;
    let t = x.shape()[0];
    if k == 0 || 2 * k >= t {
        return Err(Error::OutOfRange(format!(
            "k = {k} needs 1 <= k < T/2 with T = {t}"
        )));
    }
    let mut order: Vec<usize> = (0..amp.len()).collect();
    order.sort_by(|&a, &b| amp[b].total_cmp(&amp[a]).then(a.cmp(&b)));
    order.truncate(k);
    let freqs: Vec<usize> = order.iter().map(|&i| i + 1).collect();
    Ok(PeriodDecomposition {
        periods: freqs.iter().map(|&f| t.div_ceil(f)).collect(),
        amplitudes: order.iter().map(|&i| amp[i]).collect(),
        freqs,
    })
}

/// Source row of each cell of an `f × p` grid filled row-major from `t` rows;
/// `None` marks zero padding.
pub fn fold_index(t: usize, f: usize, p: usize) -> Result<Vec<Option<usize>>> {
    if f * p < t {
        return Err(shape_err(format!("fold {f} × {p} cannot hold {t} steps")));
    }
    Ok((0..f * p).map(|i| (i < t).then_some(i)).collect())
}

/// `[T × d] → [f × p × d]`, zero-padding the tail.
pub fn fold_2d(x: &Tensor, f: usize, p: usize) -> Result<Tensor> {
    if x.shape().len() != 2 {
        return Err(shape_err(format!("expected [T × d], got {:?}", x.shape())));
    }
    let (t, d) = (x.shape()[0], x.shape()[1]);
    fold_index(t, f, p)?;
    let mut v = x.values().to_vec();
    v.resize(f * p * d, 0.0);
    Tensor::new(vec![f, p, d], v)
}

/// `[f × p × d] → [T × d]`, dropping the padded tail.
pub fn unfold_1d(x: &Tensor, t: usize) -> Result<Tensor> {
    if x.shape().len() != 3 || x.shape()[0] * x.shape()[1] < t {
        return Err(shape_err(format!(
            "cannot unfold {:?} to {t} steps",
            x.shape()
        )));
    }
    let d = x.shape()[2];
    Tensor::new(vec![t, d], x.values()[..t * d].to_vec())
}

/// Softmax of the amplitudes, used as branch weights.
pub fn softmax_weights(amplitudes: &[f64]) -> Result<Vec<f64>> {
    if amplitudes.is_empty() {
        return Err(shape_err("no branches to recombine"));
    }
    let max = amplitudes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = amplitudes.iter().map(|a| (a - max).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// `Σ_i softmax(A)_i · branch_i`.
pub fn weighted_recombine(branches: &[Tensor], amplitudes: &[f64]) -> Result<Tensor> {
    if branches.len() != amplitudes.len() {
        return Err(shape_err("one amplitude per branch"));
    }
    let w = softmax_weights(amplitudes)?;
    let mut out = Tensor::zeros(branches[0].shape());
    for (b, wi) in branches.iter().zip(w) {
        out = out.axpby(1.0, b, wi)?;
    }
    Ok(out)
}
