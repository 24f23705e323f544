#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};

/// Compares `values` with a frozen file under `tests/golden`. The file is
/// (re)written when missing or when `NSATP_BLESS` is set.
pub fn golden(name: &str, values: &[f64], tol: f64) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    if std::env::var_os("NSATP_BLESS").is_some() || !path.exists() {
        std::fs::write(&path, serde_json::to_string_pretty(values).unwrap()).unwrap();
        return;
    }
    let want: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(want.len(), values.len(), "{name}: length");
    for (i, (a, b)) in values.iter().zip(&want).enumerate() {
        assert!(
            (a - b).abs() <= tol * b.abs().max(1.0),
            "{name}[{i}]: {a} vs {b}"
        );
    }
}

/// `(coef, std_err, ssr)` by nalgebra's SVD least squares.
pub fn reference_ols(rows: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let (n, k) = (rows.len(), rows[0].len());
    let x = DMatrix::from_fn(n, k, |i, j| rows[i][j]);
    let yv = DVector::from_column_slice(y);
    let b = x.clone().svd(true, true).solve(&yv, 1e-14).unwrap();
    let resid = &yv - &x * &b;
    let ssr = resid.norm_squared();
    let cov = (x.transpose() * &x).try_inverse().unwrap() * (ssr / (n - k) as f64);
    let se = (0..k).map(|i| cov[(i, i)].sqrt()).collect();
    (b.iter().copied().collect(), se, ssr)
}

/// ADF design rows `[1, (t), y_{t-1}, Δy_{t-1} … Δy_{t-p}]` and responses `Δy_t`.
pub fn adf_design(y: &[f64], p: usize, start: usize, trend: bool) -> (Vec<Vec<f64>>, Vec<f64>) {
    (start..y.len())
        .map(|t| {
            let mut r = vec![1.0];
            if trend {
                r.push(t as f64);
            }
            r.push(y[t - 1]);
            r.extend((1..=p).map(|i| y[t - i] - y[t - i - 1]));
            (r, y[t] - y[t - 1])
        })
        .unzip()
}
