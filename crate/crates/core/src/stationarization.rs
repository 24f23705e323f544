//! Per-window standardisation of the past features along the time axis.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{ensure_finite, shape_err, Error, Result};

/// Floor applied to each per-feature standard deviation.
pub const EPSILON: f64 = 1e-5;

/// Stats of one window: raw per-feature mean and floored standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarizationStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub epsilon: f64,
}

impl StationarizationStats {
    /// Stats that leave a window unchanged (`mu = 0`, `sigma = 1`).
    pub fn identity(channels: usize) -> Self {
        Self {
            mu: vec![0.0; channels],
            sigma: vec![1.0; channels],
            epsilon: EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }

    /// `(x - mu) / sigma`, column by column.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.channels();
        if x.shape().len() != 2 || x.shape()[1] != c {
            return Err(shape_err(format!("window {:?} with {c} stats", x.shape())));
        }
        let mut out = x.clone();
        for row in out.values_mut().chunks_exact_mut(c) {
            for ((v, m), s) in row.iter_mut().zip(&self.mu).zip(&self.sigma) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    /// `sigma[col]·y + mu[col]` for a prediction on the scale of column `col`.
    pub fn denormalize(&self, pred: &[f64], col: usize) -> Result<Vec<f64>> {
        if col >= self.channels() {
            return Err(shape_err(format!(
                "column {col} of {} stats",
                self.channels()
            )));
        }
        let (s, m) = (self.sigma[col], self.mu[col]);
        Ok(pred.iter().map(|&p| s * p + m).collect())
    }
}

/// Standardises each column of a `[N_p × C]` window.
pub fn normalize(past: &Tensor) -> Result<(Tensor, StationarizationStats)> {
    if past.is_empty() {
        return Err(Error::EmptyWindow);
    }
    if past.shape().len() != 2 {
        return Err(shape_err(format!(
            "window must be 2-D, got {:?}",
            past.shape()
        )));
    }
    let (n, c) = (past.shape()[0], past.shape()[1]);
    if n < 2 {
        return Err(Error::TooShort { need: 2, got: n });
    }
    ensure_finite(past.values(), "normalize")?;
    let mut mu = vec![0.0; c];
    for row in past.values().chunks_exact(c) {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }
    let mut var = vec![0.0; c];
    for row in past.values().chunks_exact(c) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mu) {
            *s += (v - m) * (v - m);
        }
    }
    let sigma = var
        .iter()
        .map(|v| (v / n as f64).sqrt().max(EPSILON))
        .collect();
    let stats = StationarizationStats {
        mu,
        sigma,
        epsilon: EPSILON,
    };
    let normalized = stats.apply(past)?;
    Ok((normalized, stats))
}

/// Standardises a univariate series in consecutive blocks of `block` values,
/// the way the model sees it one input window at a time. A trailing block
/// shorter than two values is left out.
pub fn blockwise_normalize(series: &[f64], block: usize) -> Result<Vec<f64>> {
    if block < 2 {
        return Err(Error::TooShort {
            need: 2,
            got: block,
        });
    }
    let mut out = Vec::with_capacity(series.len());
    for chunk in series.chunks(block).filter(|c| c.len() >= 2) {
        let (z, _) = normalize(&Tensor::new(vec![chunk.len(), 1], chunk.to_vec())?)?;
        out.extend_from_slice(z.values());
    }
    Ok(out)
}

/// Maps a prediction on the normalised delay scale back to seconds.
pub fn denormalize_delay(pred_norm: &[f64], stats: &StationarizationStats) -> Result<Vec<f64>> {
    stats.denormalize(pred_norm, crate::sample::DELAY)
}

/// Frobenius distance between the standardised copies of two windows.
/// Zero means the two windows are indistinguishable after normalisation.
pub fn collision_score(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (na, _) = normalize(a)?;
    let (nb, _) = normalize(b)?;
    Ok(na
        .values()
        .iter()
        .zip(nb.values())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn window(seed: u64, n: usize, c: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n * c).map(|_| rng.random_range(-50.0..50.0)).collect();
        Tensor::new(vec![n, c], v).unwrap()
    }

    #[test]
    fn constant_column_is_zeroed_with_floored_sigma() {
        let x = Tensor::new(vec![4, 1], vec![0.0; 4]).unwrap();
        let (n, s) = normalize(&x).unwrap();
        assert!(n.values().iter().all(|&v| v == 0.0));
        assert_eq!(s.sigma, vec![EPSILON]);
    }

    #[test]
    fn standardized_input_is_a_fixed_point() {
        let (z, _) = normalize(&window(5, 12, 3)).unwrap();
        let (zz, _) = normalize(&z).unwrap();
        assert!(z.max_abs_diff(&zz) < 1e-9);
    }

    #[test]
    fn columns_have_zero_mean_unit_std() {
        let (z, _) = normalize(&window(42, 10, 5)).unwrap();
        for c in 0..5 {
            let col = z.column(c);
            let m = col.iter().sum::<f64>() / 10.0;
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 10.0).sqrt();
            assert!(m.abs() < 1e-9);
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn denormalize_arithmetic() {
        let stats = StationarizationStats {
            mu: vec![0.0, 0.0, 3.0, 0.0, 0.0],
            sigma: vec![1.0, 1.0, 2.0, 1.0, 1.0],
            epsilon: EPSILON,
        };
        assert_eq!(
            denormalize_delay(&[1.0, -1.0], &stats).unwrap(),
            vec![5.0, 1.0]
        );
        assert_eq!(denormalize_delay(&[0.0; 3], &stats).unwrap(), vec![3.0; 3]);
        let short = StationarizationStats::identity(2);
        assert!(matches!(
            denormalize_delay(&[0.0], &short),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            normalize(&Tensor::new(vec![0, 5], vec![]).unwrap()),
            Err(Error::EmptyWindow)
        ));
        assert!(matches!(
            normalize(&window(1, 1, 5)),
            Err(Error::TooShort { .. })
        ));
        assert!(collision_score(&window(1, 4, 2), &window(1, 5, 2)).is_err());
    }

    #[test]
    fn affine_images_collide() {
        let a = window(9, 10, 5);
        let b = a.map(|v| 3.0 * v + 7.0);
        assert!(collision_score(&a, &b).unwrap() < 1e-9);
        assert_eq!(collision_score(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn blockwise_blocks_are_standardised() {
        let y: Vec<f64> = (0..25).map(|i| (i * i) as f64).collect();
        let z = blockwise_normalize(&y, 10).unwrap();
        assert_eq!(z.len(), 25);
        for b in z.chunks(10) {
            let m = b.iter().sum::<f64>() / b.len() as f64;
            assert!(m.abs() < 1e-12);
        }
        assert_eq!(blockwise_normalize(&y[..21], 10).unwrap().len(), 20);
        assert!(blockwise_normalize(&y, 1).is_err());
    }
}
