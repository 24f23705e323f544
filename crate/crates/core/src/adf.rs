//! Augmented Dickey-Fuller regression by ordinary least squares.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, shape_err, Error, Result};

pub const MIN_OBSERVATIONS: usize = 20;

/// Relative pivot size below which the design is treated as rank deficient.
const PIVOT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionKind {
    Constant,
    #[default]
    ConstantAndTrend,
}

impl RegressionKind {
    fn n_det(self) -> usize {
        match self {
            RegressionKind::Constant => 1,
            RegressionKind::ConstantAndTrend => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    /// `γ̂ / SE(γ̂)`.
    pub statistic: f64,
    pub gamma_hat: f64,
    pub lags: usize,
    pub aic: f64,
    pub nobs: usize,
    pub regression_kind: RegressionKind,
}

/// Least-squares fit.
#[derive(Clone, Debug, PartialEq)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    pub std_err: Vec<f64>,
    pub ssr: f64,
}

/// Solves the normal equations `XᵀX b = Xᵀy` by Gauss-Jordan elimination with
/// partial pivoting on column-scaled data. `rows` holds the design row by row.
pub fn ols(rows: &[Vec<f64>], y: &[f64]) -> Result<OlsFit> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if n != y.len() || k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(shape_err("design matrix and response disagree"));
    }
    if n <= k {
        return Err(Error::TooShort {
            need: k + 1,
            got: n,
        });
    }
    // Scale columns to unit norm so the pivot tolerance is scale free.
    let mut scale = vec![0.0; k];
    for r in rows {
        for (s, v) in scale.iter_mut().zip(r) {
            *s += v * v;
        }
    }
    for s in &mut scale {
        *s = s.sqrt();
        if *s == 0.0 {
            return Err(Error::Collinear);
        }
    }
    // Augmented [XᵀX | I] in scaled coordinates.
    let w = 2 * k;
    let mut a = vec![0.0; k * w];
    let mut rhs = vec![0.0; k];
    for (r, &yv) in rows.iter().zip(y) {
        for i in 0..k {
            let xi = r[i] / scale[i];
            rhs[i] += xi * yv;
            for j in 0..k {
                a[i * w + j] += xi * r[j] / scale[j];
            }
        }
    }
    for i in 0..k {
        a[i * w + k + i] = 1.0;
    }
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&p, &q| a[p * w + col].abs().total_cmp(&a[q * w + col].abs()))
            .expect("non-empty range");
        if a[piv * w + col].abs() < PIVOT_TOL {
            return Err(Error::Collinear);
        }
        if piv != col {
            for j in 0..w {
                a.swap(col * w + j, piv * w + j);
            }
            rhs.swap(col, piv);
        }
        let d = a[col * w + col];
        for j in 0..w {
            a[col * w + j] /= d;
        }
        rhs[col] /= d;
        for r in 0..k {
            if r == col {
                continue;
            }
            let f = a[r * w + col];
            if f == 0.0 {
                continue;
            }
            for j in 0..w {
                a[r * w + j] -= f * a[col * w + j];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let coef: Vec<f64> = rhs.iter().zip(&scale).map(|(b, s)| b / s).collect();
    let ssr: f64 = rows
        .iter()
        .zip(y)
        .map(|(r, &yv)| {
            let fit: f64 = r.iter().zip(&coef).map(|(x, b)| x * b).sum();
            (yv - fit).powi(2)
        })
        .sum();
    let s2 = ssr / (n - k) as f64;
    let std_err = (0..k)
        .map(|i| (s2 * a[i * w + k + i]).sqrt() / scale[i])
        .collect();
    Ok(OlsFit { coef, std_err, ssr })
}

/// `⌊12·(n/100)^{1/4}⌋`, capped so every lag leaves enough observations.
pub fn default_max_lag(n: usize, kind: RegressionKind) -> usize {
    let schwert = (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize;
    schwert.min(n.saturating_sub(kind.n_det() + 4) / 2)
}

/// Rows `t ∈ [start, n)` of the ADF design with `p` lagged differences.
/// Columns: deterministic terms, `y_{t-1}`, `Δy_{t-1} … Δy_{t-p}`.
fn design(y: &[f64], p: usize, start: usize, kind: RegressionKind) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rows = Vec::with_capacity(y.len() - start);
    let mut resp = Vec::with_capacity(y.len() - start);
    for t in start..y.len() {
        let mut r = Vec::with_capacity(kind.n_det() + 1 + p);
        r.push(1.0);
        if kind == RegressionKind::ConstantAndTrend {
            r.push(t as f64);
        }
        r.push(y[t - 1]);
        for i in 1..=p {
            r.push(y[t - i] - y[t - i - 1]);
        }
        rows.push(r);
        resp.push(y[t] - y[t - 1]);
    }
    (rows, resp)
}

fn aic(ssr: f64, nobs: usize, k: usize) -> f64 {
    nobs as f64 * (ssr / nobs as f64).ln() + 2.0 * k as f64
}

/// ADF test. `max_lag = None` uses [`default_max_lag`]. Lags are compared by
/// AIC on a common sample; the chosen lag is then refitted on all usable rows.
pub fn adf_test(y: &[f64], max_lag: Option<usize>, kind: RegressionKind) -> Result<AdfResult> {
    if y.len() < MIN_OBSERVATIONS {
        return Err(Error::TooShort {
            need: MIN_OBSERVATIONS,
            got: y.len(),
        });
    }
    ensure_finite(y, "adf_test")?;
    let max_lag = max_lag.unwrap_or_else(|| default_max_lag(y.len(), kind));
    let n_det = kind.n_det();
    if y.len() < max_lag + 2 + n_det + 1 + max_lag + 1 {
        return Err(Error::TooShort {
            need: 2 * max_lag + n_det + 4,
            got: y.len(),
        });
    }
    let gamma_col = n_det;
    let mut best: Option<(f64, usize)> = None;
    for p in 0..=max_lag {
        let (rows, resp) = design(y, p, max_lag + 1, kind);
        let fit = ols(&rows, &resp)?;
        let score = aic(fit.ssr, rows.len(), rows[0].len());
        if best.is_none_or(|(b, _)| score < b) {
            best = Some((score, p));
        }
    }
    let (_, p) = best.expect("at least lag 0 is fitted");
    let (rows, resp) = design(y, p, p + 1, kind);
    let fit = ols(&rows, &resp)?;
    let se = fit.std_err[gamma_col];
    if !(se > 0.0) {
        return Err(Error::Collinear);
    }
    Ok(AdfResult {
        statistic: fit.coef[gamma_col] / se,
        gamma_hat: fit.coef[gamma_col],
        lags: p,
        aic: aic(fit.ssr, rows.len(), rows[0].len()),
        nobs: rows.len(),
        regression_kind: kind,
    })
}

/// ADF statistic of a predicted sequence over that of the true sequence.
/// Above 1 the prediction looks more stationary than the data.
pub fn adf_ratio(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(shape_err("prediction and truth sequences differ in length"));
    }
    let kind = RegressionKind::default();
    let t = adf_test(truth, None, kind)?.statistic;
    if t.abs() < 1e-9 {
        return Err(Error::IllConditionedRatio(t));
    }
    Ok(adf_test(pred, None, kind)?.statistic / t)
}

/// Reads a one-column CSV of numbers. A non-numeric first row is taken as a header.
pub fn read_series_csv<R: Read>(r: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 1 {
            return Err(Error::Format(format!(
                "row {}: expected one column, got {}",
                i + 1,
                rec.len()
            )));
        }
        let field = &rec[0];
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(_) => return Err(Error::Format(format!("row {}: non-finite value", i + 1))),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::Format(format!(
                    "row {}: not a number: {field:?}",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_trend_is_collinear() {
        let y: Vec<f64> = (0..50).map(|t| 3.0 + 0.5 * t as f64).collect();
        assert!(matches!(
            adf_test(&y, None, RegressionKind::ConstantAndTrend),
            Err(Error::Collinear)
        ));
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            adf_test(&[1.0; 10], None, RegressionKind::Constant),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn ols_recovers_exact_coefficients() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![1.0, i as f64, (i * i) as f64])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 - r[1] + 0.25 * r[2]).collect();
        let fit = ols(&rows, &y).unwrap();
        for (c, e) in fit.coef.iter().zip([2.0, -1.0, 0.25]) {
            assert!((c - e).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_with_header() {
        let v = read_series_csv("delay\n1.5\n-2\n\n3e1\n".as_bytes()).unwrap();
        assert_eq!(v, vec![1.5, -2.0, 30.0]);
        assert!(read_series_csv("1\nx\n".as_bytes()).is_err());
        assert!(read_series_csv("1,2\n".as_bytes()).is_err());
    }
}
