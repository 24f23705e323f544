//! Raw forward/backward loops shared by the tape and the functional API.
//!
//! All buffers are row-major. Backward routines accumulate (`+=`) into the
//! gradient buffers they are handed.

use serde::{Deserialize, Serialize};

/// Boundary handling for the "same"-size convolutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Out-of-range taps read zero.
    #[default]
    Zeros,
    /// Out-of-range taps wrap around (periodic boundary).
    Circular,
}

#[inline]
fn tap(pos: isize, len: usize, padding: Padding) -> Option<usize> {
    if pos >= 0 && (pos as usize) < len {
        Some(pos as usize)
    } else {
        match padding {
            Padding::Zeros => None,
            Padding::Circular => Some(pos.rem_euclid(len as isize) as usize),
        }
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`.
pub fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn matmul_backward(
    a: &[f64],
    b: &[f64],
    dout: &[f64],
    da: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
    m: usize,
    k: usize,
    n: usize,
) {
    if let Some(da) = da {
        for i in 0..m {
            let drow = &dout[i * n..(i + 1) * n];
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                da[i * k + p] += drow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }
    if let Some(db) = db {
        for i in 0..m {
            let drow = &dout[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let dbrow = &mut db[p * n..(p + 1) * n];
                for (o, &d) in dbrow.iter_mut().zip(drow) {
                    *o += av * d;
                }
            }
        }
    }
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`.
pub fn matmul_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

pub fn matmul_nt_backward(
    a: &[f64],
    b: &[f64],
    dout: &[f64],
    mut da: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        for j in 0..n {
            let g = dout[i * n + j];
            if g == 0.0 {
                continue;
            }
            if let Some(da) = da.as_deref_mut() {
                for p in 0..k {
                    da[i * k + p] += g * b[j * k + p];
                }
            }
            if let Some(db) = db.as_deref_mut() {
                for p in 0..k {
                    db[j * k + p] += g * a[i * k + p];
                }
            }
        }
    }
}

/// Same-size 1-D convolution (cross-correlation centred on the kernel).
/// `x: [t × cin]`, `k: [m × cin × cout]`, `out: [t × cout]`.
pub fn conv1d(
    x: &[f64],
    k: &[f64],
    out: &mut [f64],
    t: usize,
    cin: usize,
    cout: usize,
    m: usize,
    padding: Padding,
) {
    let half = (m / 2) as isize;
    for ti in 0..t {
        let orow = &mut out[ti * cout..(ti + 1) * cout];
        for mi in 0..m {
            let Some(src) = tap(ti as isize + mi as isize - half, t, padding) else {
                continue;
            };
            for ci in 0..cin {
                let xv = x[src * cin + ci];
                if xv == 0.0 {
                    continue;
                }
                let krow = &k[(mi * cin + ci) * cout..(mi * cin + ci + 1) * cout];
                for (o, &kv) in orow.iter_mut().zip(krow) {
                    *o += xv * kv;
                }
            }
        }
    }
}

pub fn conv1d_backward(
    x: &[f64],
    k: &[f64],
    dout: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dk: Option<&mut [f64]>,
    t: usize,
    cin: usize,
    cout: usize,
    m: usize,
    padding: Padding,
) {
    let half = (m / 2) as isize;
    for ti in 0..t {
        let grow = &dout[ti * cout..(ti + 1) * cout];
        for mi in 0..m {
            let Some(src) = tap(ti as isize + mi as isize - half, t, padding) else {
                continue;
            };
            for ci in 0..cin {
                let kidx = (mi * cin + ci) * cout;
                let krow = &k[kidx..kidx + cout];
                if let Some(dx) = dx.as_deref_mut() {
                    dx[src * cin + ci] += grow.iter().zip(krow).map(|(g, w)| g * w).sum::<f64>();
                }
                if let Some(dk) = dk.as_deref_mut() {
                    let xv = x[src * cin + ci];
                    if xv != 0.0 {
                        for (d, &g) in dk[kidx..kidx + cout].iter_mut().zip(grow) {
                            *d += xv * g;
                        }
                    }
                }
            }
        }
    }
}

/// Geometry of a same-size 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dDims {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
}

/// `x: [h × w × cin]`, `k: [kh × kw × cin × cout]`, `out: [h × w × cout]`.
pub fn conv2d(x: &[f64], k: &[f64], out: &mut [f64], d: Conv2dDims, padding: Padding) {
    let (hh, hw) = ((d.kh / 2) as isize, (d.kw / 2) as isize);
    for i in 0..d.h {
        for j in 0..d.w {
            let obase = (i * d.w + j) * d.cout;
            for mi in 0..d.kh {
                let Some(si) = tap(i as isize + mi as isize - hh, d.h, padding) else {
                    continue;
                };
                for ni in 0..d.kw {
                    let Some(sj) = tap(j as isize + ni as isize - hw, d.w, padding) else {
                        continue;
                    };
                    let xbase = (si * d.w + sj) * d.cin;
                    for ci in 0..d.cin {
                        let xv = x[xbase + ci];
                        if xv == 0.0 {
                            continue;
                        }
                        let kbase = ((mi * d.kw + ni) * d.cin + ci) * d.cout;
                        let krow = &k[kbase..kbase + d.cout];
                        let orow = &mut out[obase..obase + d.cout];
                        for (o, &kv) in orow.iter_mut().zip(krow) {
                            *o += xv * kv;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_backward(
    x: &[f64],
    k: &[f64],
    dout: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dk: Option<&mut [f64]>,
    d: Conv2dDims,
    padding: Padding,
) {
    let (hh, hw) = ((d.kh / 2) as isize, (d.kw / 2) as isize);
    for i in 0..d.h {
        for j in 0..d.w {
            let obase = (i * d.w + j) * d.cout;
            let grow = &dout[obase..obase + d.cout];
            if grow.iter().all(|&g| g == 0.0) {
                continue;
            }
            for mi in 0..d.kh {
                let Some(si) = tap(i as isize + mi as isize - hh, d.h, padding) else {
                    continue;
                };
                for ni in 0..d.kw {
                    let Some(sj) = tap(j as isize + ni as isize - hw, d.w, padding) else {
                        continue;
                    };
                    let xbase = (si * d.w + sj) * d.cin;
                    for ci in 0..d.cin {
                        let kbase = ((mi * d.kw + ni) * d.cin + ci) * d.cout;
                        if let Some(dx) = dx.as_deref_mut() {
                            let krow = &k[kbase..kbase + d.cout];
                            dx[xbase + ci] +=
                                grow.iter().zip(krow).map(|(g, w)| g * w).sum::<f64>();
                        }
                        if let Some(dk) = dk.as_deref_mut() {
                            let xv = x[xbase + ci];
                            if xv != 0.0 {
                                for (dd, &g) in dk[kbase..kbase + d.cout].iter_mut().zip(grow) {
                                    *dd += xv * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-wise softmax over the trailing axis of width `n`.
pub fn softmax_rows(x: &[f64], out: &mut [f64], n: usize) {
    for (xr, or) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in or.iter_mut() {
            *o /= sum;
        }
    }
}
