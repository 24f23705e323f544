//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value and the ids of its parents. Nodes are appended in
//! execution order, so the node list is already topologically sorted and
//! [`Tape::backward`] walks it once in reverse.

use std::collections::HashMap;

use super::kernels::{self, Conv2dDims, Padding};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{ensure_finite, shape_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    DivBy(Var, Var),
    AddScalar(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Exp(Var),
    Relu(Var),
    Matmul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Conv1d {
        x: Var,
        k: Var,
        t: usize,
        cin: usize,
        cout: usize,
        m: usize,
        padding: Padding,
    },
    Conv2d {
        x: Var,
        k: Var,
        dims: Conv2dDims,
        padding: Padding,
    },
    CenteredKernelMean {
        kernels: Vec<(Var, usize)>,
        size: usize,
        inner: usize,
    },
    MeanOf(Vec<Var>),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Mse(Var, Var),
    Sum(Var),
    Gather {
        x: Var,
        row_len: usize,
        index: Vec<Option<usize>>,
    },
    ConcatCols(Var, Var),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// One forward pass worth of recorded operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input data that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf not tied to a parameter store.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Loads parameter `id` as a leaf; repeated calls on one tape share the node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, store.trainable(id));
        self.params.insert(id, v);
        v
    }

    pub fn param_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn scalar_of(&self, s: Var, what: &str) -> Result<f64> {
        let t = self.value(s);
        if t.len() != 1 {
            return Err(shape_err(format!(
                "{what}: expected a scalar, got {:?}",
                t.shape()
            )));
        }
        Ok(t.values()[0])
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let vals = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), vals).expect("same shape");
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    /// `s·a` where `s` is a one-element node.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let c = self.scalar_of(s, "scale_by")?;
        let out = self.value(a).map(|x| c * x);
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(out, Op::ScaleBy(a, s), ng))
    }

    /// `a / s` where `s` is a one-element node.
    pub fn div_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let c = self.scalar_of(s, "div_by")?;
        let out = self.value(a).map(|x| x / c);
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(out, Op::DivBy(a, s), ng))
    }

    /// `a + s` where `s` is a one-element node.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let c = self.scalar_of(s, "add_scalar")?;
        let out = self.value(a).map(|x| x + c);
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(out, Op::AddScalar(a, s), ng))
    }

    fn row_broadcast(&mut self, a: Var, row: Var, mul: bool) -> Result<Var> {
        let w = self.value(a).last_dim();
        if self.value(row).len() != w {
            return Err(shape_err(format!(
                "row broadcast: row of {} onto trailing axis {w}",
                self.value(row).len()
            )));
        }
        let r = self.value(row).values().to_vec();
        let ta = self.value(a);
        let mut vals = ta.values().to_vec();
        for chunk in vals.chunks_exact_mut(w) {
            for (v, &rv) in chunk.iter_mut().zip(&r) {
                if mul {
                    *v *= rv;
                } else {
                    *v += rv;
                }
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), vals)?;
        let ng = self.ng(a) || self.ng(row);
        let op = if mul {
            Op::MulRow(a, row)
        } else {
            Op::AddRow(a, row)
        };
        Ok(self.push(out, op, ng))
    }

    /// Adds `row` to every slice along the trailing axis (`X + 1·rowᵀ`).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row, false)
    }

    /// Multiplies every trailing-axis slice elementwise by `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row, true)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let ng = self.ng(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        ensure_finite(self.value(a).values(), "relu")?;
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let ng = self.ng(a);
        Ok(self.push(out, Op::Relu(a), ng))
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || shape_err(format!("matmul {sa:?} x {sb:?} (trans_b={trans_b})"));
        let (batch, m, k, n) = match (sa.len(), sb.len()) {
            (2, 2) => {
                let (m, k) = (sa[0], sa[1]);
                let n = if trans_b { sb[0] } else { sb[1] };
                let kb = if trans_b { sb[1] } else { sb[0] };
                if k != kb {
                    return Err(bad());
                }
                (1, m, k, n)
            }
            (3, 3) => {
                if sa[0] != sb[0] {
                    return Err(bad());
                }
                let (m, k) = (sa[1], sa[2]);
                let n = if trans_b { sb[1] } else { sb[2] };
                let kb = if trans_b { sb[2] } else { sb[1] };
                if k != kb {
                    return Err(bad());
                }
                (sa[0], m, k, n)
            }
            _ => return Err(bad()),
        };
        let mut out = vec![0.0; batch * m * n];
        {
            let (va, vb) = (self.value(a).values(), self.value(b).values());
            for bi in 0..batch {
                let ai = &va[bi * m * k..(bi + 1) * m * k];
                let bsl = &vb[bi * k * n..(bi + 1) * k * n];
                let oi = &mut out[bi * m * n..(bi + 1) * m * n];
                if trans_b {
                    kernels::matmul_nt(ai, bsl, oi, m, k, n);
                } else {
                    kernels::matmul(ai, bsl, oi, m, k, n);
                }
            }
        }
        let shape = if sa.len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Matmul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            },
            ng,
        ))
    }

    /// Matrix product; 2-D × 2-D or batched 3-D × 3-D.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`; 2-D or batched 3-D.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    /// Affine map over the trailing axis: `x[.. × d_in] · W[d_in × d_out] + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sw.len() != 2 || sx.last() != Some(&sw[0]) {
            return Err(shape_err(format!("linear: x {sx:?} with W {sw:?}")));
        }
        let rows = self.value(x).len() / sw[0];
        let flat = self.reshape(x, vec![rows, sw[0]])?;
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            y = self.add_row(y, b)?;
        }
        let mut out_shape = sx;
        *out_shape.last_mut().expect("non-empty") = sw[1];
        self.reshape(y, out_shape)
    }

    /// Same-size 1-D convolution: `x[T × C_in]`, `kernels[M × C_in × C_out]`.
    pub fn conv1d(&mut self, x: Var, k: Var, padding: Padding) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if sx.len() != 2 || sk.len() != 3 || sx[1] != sk[1] {
            return Err(shape_err(format!("conv1d: x {sx:?} with kernels {sk:?}")));
        }
        let (t, cin, m, cout) = (sx[0], sx[1], sk[0], sk[2]);
        if m % 2 == 0 {
            return Err(Error::EvenKernel(m));
        }
        let mut out = vec![0.0; t * cout];
        kernels::conv1d(
            self.value(x).values(),
            self.value(k).values(),
            &mut out,
            t,
            cin,
            cout,
            m,
            padding,
        );
        let ng = self.ng(x) || self.ng(k);
        Ok(self.push(
            Tensor::new(vec![t, cout], out)?,
            Op::Conv1d {
                x,
                k,
                t,
                cin,
                cout,
                m,
                padding,
            },
            ng,
        ))
    }

    /// Same-size 2-D convolution: `x[H × W × C_in]`, `kernels[M × N × C_in × C_out]`.
    pub fn conv2d(&mut self, x: Var, k: Var, padding: Padding) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if sx.len() != 3 || sk.len() != 4 || sx[2] != sk[2] {
            return Err(shape_err(format!("conv2d: x {sx:?} with kernels {sk:?}")));
        }
        if sk[0] % 2 == 0 {
            return Err(Error::EvenKernel(sk[0]));
        }
        if sk[1] % 2 == 0 {
            return Err(Error::EvenKernel(sk[1]));
        }
        let dims = Conv2dDims {
            h: sx[0],
            w: sx[1],
            cin: sx[2],
            cout: sk[3],
            kh: sk[0],
            kw: sk[1],
        };
        let mut out = vec![0.0; dims.h * dims.w * dims.cout];
        kernels::conv2d(
            self.value(x).values(),
            self.value(k).values(),
            &mut out,
            dims,
            padding,
        );
        let ng = self.ng(x) || self.ng(k);
        Ok(self.push(
            Tensor::new(vec![dims.h, dims.w, dims.cout], out)?,
            Op::Conv2d {
                x,
                k,
                dims,
                padding,
            },
            ng,
        ))
    }

    /// Averages square odd-sized kernels `[s × s × ..]` after centring each
    /// inside the largest one. A same-size convolution with the result equals
    /// the mean of the individual same-size convolutions.
    pub fn centered_kernel_mean(&mut self, kernels: &[Var]) -> Result<Var> {
        let first = kernels
            .first()
            .ok_or_else(|| shape_err("centered_kernel_mean: no kernels"))?;
        let tail = self.shape(*first)[2..].to_vec();
        let inner: usize = tail.iter().product();
        let mut size = 0;
        let mut sized = Vec::with_capacity(kernels.len());
        for &k in kernels {
            let s = self.shape(k);
            if s.len() != 4 || s[0] != s[1] || s[0].is_multiple_of(2) || s[2..] != tail[..] {
                return Err(shape_err(format!("centered_kernel_mean: kernel {s:?}")));
            }
            size = size.max(s[0]);
            sized.push((k, s[0]));
        }
        let scale = 1.0 / kernels.len() as f64;
        let mut out = vec![0.0; size * size * inner];
        for &(k, s) in &sized {
            let off = (size - s) / 2;
            let kv = self.value(k).values();
            for m in 0..s {
                for n in 0..s {
                    let src = &kv[(m * s + n) * inner..(m * s + n + 1) * inner];
                    let dst = ((m + off) * size + n + off) * inner;
                    for (o, &v) in out[dst..dst + inner].iter_mut().zip(src) {
                        *o += scale * v;
                    }
                }
            }
        }
        let mut shape = vec![size, size];
        shape.extend_from_slice(&tail);
        let ng = sized.iter().any(|&(k, _)| self.ng(k));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::CenteredKernelMean {
                kernels: sized,
                size,
                inner,
            },
            ng,
        ))
    }

    /// Elementwise mean of same-shape nodes.
    pub fn mean_of(&mut self, vars: &[Var]) -> Result<Var> {
        let first = *vars.first().ok_or_else(|| shape_err("mean_of: empty"))?;
        for &v in vars {
            self.same_shape(first, v, "mean_of")?;
        }
        let scale = 1.0 / vars.len() as f64;
        let mut out = vec![0.0; self.value(first).len()];
        for &v in vars {
            for (o, &x) in out.iter_mut().zip(self.value(v).values()) {
                *o += scale * x;
            }
        }
        let shape = self.shape(first).to_vec();
        let ng = vars.iter().any(|&v| self.ng(v));
        Ok(self.push(Tensor::new(shape, out)?, Op::MeanOf(vars.to_vec()), ng))
    }

    /// Softmax over the trailing axis.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        ensure_finite(self.value(a).values(), "softmax_rows")?;
        let t = self.value(a);
        let n = t.last_dim();
        let mut out = vec![0.0; t.len()];
        kernels::softmax_rows(t.values(), &mut out, n);
        let out = Tensor::new(t.shape().to_vec(), out)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::SoftmaxRows(a), ng))
    }

    /// Layer normalisation over the trailing axis with elementwise gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        ensure_finite(self.value(x).values(), "layer_norm")?;
        let d = self.value(x).last_dim();
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(shape_err("layer_norm: gain/bias width"));
        }
        let tx = self.value(x);
        let (g, b) = (self.value(gain).values(), self.value(bias).values());
        let rows = tx.len() / d;
        let mut xhat = vec![0.0; tx.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = &tx.values()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let xh = (row[c] - mean) * rs;
                xhat[r * d + c] = xh;
                out[r * d + c] = xh * g[c] + b[c];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Mean squared error, returned as a one-element node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "mse")?;
        ensure_finite(self.value(pred).values(), "mse")?;
        ensure_finite(self.value(target).values(), "mse")?;
        let (p, t) = (self.value(pred).values(), self.value(target).values());
        let n = p.len().max(1) as f64;
        let v = p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.push(Tensor::scalar(v), Op::Mse(pred, target), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).values().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(v), Op::Sum(a), ng)
    }

    /// Row gather: output row `r` is input row `index[r]`, or zeros for `None`.
    /// Rows are contiguous runs of `row_len` values.
    pub fn gather_rows(
        &mut self,
        x: Var,
        row_len: usize,
        index: Vec<Option<usize>>,
        out_shape: Vec<usize>,
    ) -> Result<Var> {
        let tx = self.value(x);
        if row_len == 0 || !tx.len().is_multiple_of(row_len) {
            return Err(shape_err(format!(
                "gather_rows: row_len {row_len} on {:?}",
                tx.shape()
            )));
        }
        let nrows = tx.len() / row_len;
        if out_shape.iter().product::<usize>() != index.len() * row_len {
            return Err(shape_err(format!(
                "gather_rows: {} rows of {row_len} into {out_shape:?}",
                index.len()
            )));
        }
        let mut out = vec![0.0; index.len() * row_len];
        for (r, src) in index.iter().enumerate() {
            if let Some(s) = *src {
                if s >= nrows {
                    return Err(shape_err(format!("gather_rows: row {s} of {nrows}")));
                }
                out[r * row_len..(r + 1) * row_len]
                    .copy_from_slice(&tx.values()[s * row_len..(s + 1) * row_len]);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::Gather { x, row_len, index },
            ng,
        ))
    }

    /// Concatenates two matrices (or vectors, treated as one row) along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ra, rb) = (ta.rows(), tb.rows());
        if ra != rb {
            return Err(shape_err(format!(
                "concat_cols: {:?} with {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (ca, cb) = (ta.last_dim(), tb.last_dim());
        let mut out = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..ra {
            out.extend_from_slice(ta.row(r));
            out.extend_from_slice(tb.row(r));
        }
        let shape = if ta.shape().len() == 1 {
            vec![ca + cb]
        } else {
            vec![ra, ca + cb]
        };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::ConcatCols(a, b), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    /// Reverse sweep from a one-element `loss`. Allowed once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::BackwardConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if self.nodes[i].needs_grad {
                self.backprop_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.values();
        // Returns the gradient buffer of `v` if it needs one; created on demand.
        macro_rules! buf {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].needs_grad {
                    let n = nodes[v.0].value.len();
                    Some(
                        grads[v.0]
                            .get_or_insert_with(|| vec![0.0; n])
                            .as_mut_slice(),
                    )
                } else {
                    None
                }
            }};
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(da) = buf!(*a) {
                    add_into(da, g);
                }
                if let Some(db) = buf!(*b) {
                    add_into(db, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = buf!(*a) {
                    add_into(da, g);
                }
                if let Some(db) = buf!(*b) {
                    for (d, &x) in db.iter_mut().zip(g) {
                        *d -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).to_vec(), val(*b).to_vec());
                if let Some(da) = buf!(*a) {
                    for ((d, &x), &y) in da.iter_mut().zip(g).zip(&vb) {
                        *d += x * y;
                    }
                }
                if let Some(db) = buf!(*b) {
                    for ((d, &x), &y) in db.iter_mut().zip(g).zip(&va) {
                        *d += x * y;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(da) = buf!(*a) {
                    for (d, &x) in da.iter_mut().zip(g) {
                        *d += c * x;
                    }
                }
            }
            Op::ScaleBy(a, s) => {
                let c = val(*s)[0];
                let ds: f64 = g.iter().zip(val(*a)).map(|(x, y)| x * y).sum();
                if let Some(da) = buf!(*a) {
                    for (d, &x) in da.iter_mut().zip(g) {
                        *d += c * x;
                    }
                }
                if let Some(dsb) = buf!(*s) {
                    dsb[0] += ds;
                }
            }
            Op::DivBy(a, s) => {
                let c = val(*s)[0];
                let ds: f64 = -g.iter().zip(val(*a)).map(|(x, y)| x * y).sum::<f64>() / (c * c);
                if let Some(da) = buf!(*a) {
                    for (d, &x) in da.iter_mut().zip(g) {
                        *d += x / c;
                    }
                }
                if let Some(dsb) = buf!(*s) {
                    dsb[0] += ds;
                }
            }
            Op::AddScalar(a, s) => {
                if let Some(da) = buf!(*a) {
                    add_into(da, g);
                }
                if let Some(dsb) = buf!(*s) {
                    dsb[0] += g.iter().sum::<f64>();
                }
            }
            Op::AddRow(a, row) => {
                if let Some(da) = buf!(*a) {
                    add_into(da, g);
                }
                if let Some(dr) = buf!(*row) {
                    let w = dr.len();
                    for chunk in g.chunks_exact(w) {
                        add_into(dr, chunk);
                    }
                }
            }
            Op::MulRow(a, row) => {
                let r = val(*row).to_vec();
                let w = r.len();
                if let Some(da) = buf!(*a) {
                    for (dchunk, gchunk) in da.chunks_exact_mut(w).zip(g.chunks_exact(w)) {
                        for ((d, &x), &y) in dchunk.iter_mut().zip(gchunk).zip(&r) {
                            *d += x * y;
                        }
                    }
                }
                let va = val(*a).to_vec();
                if let Some(dr) = buf!(*row) {
                    for (gchunk, achunk) in g.chunks_exact(w).zip(va.chunks_exact(w)) {
                        for ((d, &x), &y) in dr.iter_mut().zip(gchunk).zip(achunk) {
                            *d += x * y;
                        }
                    }
                }
            }
            Op::Exp(a) => {
                let y = nodes[i].value.values();
                if let Some(da) = buf!(*a) {
                    for ((d, &x), &e) in da.iter_mut().zip(g).zip(y) {
                        *d += x * e;
                    }
                }
            }
            Op::Relu(a) => {
                let x = val(*a).to_vec();
                if let Some(da) = buf!(*a) {
                    for ((d, &gx), &xv) in da.iter_mut().zip(g).zip(&x) {
                        if xv > 0.0 {
                            *d += gx;
                        }
                    }
                }
            }
            Op::Matmul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            } => {
                let (va, vb) = (val(*a).to_vec(), val(*b).to_vec());
                let (m, k, n) = (*m, *k, *n);
                let need_a = nodes[a.0].needs_grad;
                let need_b = nodes[b.0].needs_grad;
                let mut da = need_a.then(|| vec![0.0; va.len()]);
                let mut db = need_b.then(|| vec![0.0; vb.len()]);
                for bi in 0..*batch {
                    let ra = bi * m * k..(bi + 1) * m * k;
                    let rb = bi * k * n..(bi + 1) * k * n;
                    let rg = bi * m * n..(bi + 1) * m * n;
                    let dai = da.as_mut().map(|d| &mut d[ra.clone()]);
                    let dbi = db.as_mut().map(|d| &mut d[rb.clone()]);
                    if *trans_b {
                        kernels::matmul_nt_backward(&va[ra], &vb[rb], &g[rg], dai, dbi, m, k, n);
                    } else {
                        kernels::matmul_backward(&va[ra], &vb[rb], &g[rg], dai, dbi, m, k, n);
                    }
                }
                if let (Some(d), Some(buf)) = (da, buf!(*a)) {
                    add_into(buf, &d);
                }
                if let (Some(d), Some(buf)) = (db, buf!(*b)) {
                    add_into(buf, &d);
                }
            }
            Op::Conv1d {
                x,
                k,
                t,
                cin,
                cout,
                m,
                padding,
            } => {
                let (vx, vk) = (val(*x).to_vec(), val(*k).to_vec());
                let mut dx = nodes[x.0].needs_grad.then(|| vec![0.0; vx.len()]);
                let mut dk = nodes[k.0].needs_grad.then(|| vec![0.0; vk.len()]);
                kernels::conv1d_backward(
                    &vx,
                    &vk,
                    g,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                    *t,
                    *cin,
                    *cout,
                    *m,
                    *padding,
                );
                if let (Some(d), Some(buf)) = (dx, buf!(*x)) {
                    add_into(buf, &d);
                }
                if let (Some(d), Some(buf)) = (dk, buf!(*k)) {
                    add_into(buf, &d);
                }
            }
            Op::Conv2d {
                x,
                k,
                dims,
                padding,
            } => {
                let (vx, vk) = (val(*x).to_vec(), val(*k).to_vec());
                let mut dx = nodes[x.0].needs_grad.then(|| vec![0.0; vx.len()]);
                let mut dk = nodes[k.0].needs_grad.then(|| vec![0.0; vk.len()]);
                kernels::conv2d_backward(
                    &vx,
                    &vk,
                    g,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                    *dims,
                    *padding,
                );
                if let (Some(d), Some(buf)) = (dx, buf!(*x)) {
                    add_into(buf, &d);
                }
                if let (Some(d), Some(buf)) = (dk, buf!(*k)) {
                    add_into(buf, &d);
                }
            }
            Op::CenteredKernelMean {
                kernels,
                size,
                inner,
            } => {
                let scale = 1.0 / kernels.len() as f64;
                for &(k, s) in kernels {
                    let off = (size - s) / 2;
                    if let Some(dk) = buf!(k) {
                        for m in 0..s {
                            for n in 0..s {
                                let src = ((m + off) * size + n + off) * inner;
                                let dst = (m * s + n) * inner;
                                for (d, &x) in
                                    dk[dst..dst + inner].iter_mut().zip(&g[src..src + inner])
                                {
                                    *d += scale * x;
                                }
                            }
                        }
                    }
                }
            }
            Op::MeanOf(vars) => {
                let scale = 1.0 / vars.len() as f64;
                for &v in vars {
                    if let Some(dv) = buf!(v) {
                        for (d, &x) in dv.iter_mut().zip(g) {
                            *d += scale * x;
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let y = nodes[i].value.values();
                let n = nodes[i].value.last_dim();
                if let Some(da) = buf!(*a) {
                    for ((dr, gr), yr) in da
                        .chunks_exact_mut(n)
                        .zip(g.chunks_exact(n))
                        .zip(y.chunks_exact(n))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((d, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = val(*gain).to_vec();
                let d = gv.len();
                if let Some(dg) = buf!(*gain) {
                    for (gr, xr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for ((o, &a), &b) in dg.iter_mut().zip(gr).zip(xr) {
                            *o += a * b;
                        }
                    }
                }
                if let Some(db) = buf!(*bias) {
                    for gr in g.chunks_exact(d) {
                        add_into(db, gr);
                    }
                }
                if let Some(dx) = buf!(*x) {
                    for (r, (gr, xr)) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
                        let dxhat: Vec<f64> = gr.iter().zip(&gv).map(|(a, b)| a * b).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx =
                            dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for c in 0..d {
                            dx[r * d + c] += rstd[r] * (dxhat[c] - mean_d - xr[c] * mean_dx);
                        }
                    }
                }
            }
            Op::Mse(p, t) => {
                let (vp, vt) = (val(*p).to_vec(), val(*t).to_vec());
                let scale = 2.0 * g[0] / vp.len().max(1) as f64;
                if let Some(dp) = buf!(*p) {
                    for ((d, &a), &b) in dp.iter_mut().zip(&vp).zip(&vt) {
                        *d += scale * (a - b);
                    }
                }
                if let Some(dt) = buf!(*t) {
                    for ((d, &a), &b) in dt.iter_mut().zip(&vp).zip(&vt) {
                        *d -= scale * (a - b);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(da) = buf!(*a) {
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Gather { x, row_len, index } => {
                if let Some(dx) = buf!(*x) {
                    for (r, src) in index.iter().enumerate() {
                        if let Some(s) = *src {
                            add_into(
                                &mut dx[s * row_len..(s + 1) * row_len],
                                &g[r * row_len..(r + 1) * row_len],
                            );
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = nodes[a.0].value.last_dim();
                let cb = nodes[b.0].value.last_dim();
                let w = ca + cb;
                if let Some(da) = buf!(*a) {
                    for (dr, gr) in da.chunks_exact_mut(ca).zip(g.chunks_exact(w)) {
                        add_into(dr, &gr[..ca]);
                    }
                }
                if let Some(db) = buf!(*b) {
                    for (dr, gr) in db.chunks_exact_mut(cb).zip(g.chunks_exact(w)) {
                        add_into(dr, &gr[ca..]);
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(da) = buf!(*a) {
                    add_into(da, g);
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
