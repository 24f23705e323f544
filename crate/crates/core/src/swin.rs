//! Shifted-window attention backbone with de-stationary attention.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::compensation::{CompensationNet, FeatureScales};
use crate::error::{shape_err, Error, Result};
use crate::model::{Frontend, Normalization, SampleForward};
use crate::nn::{LayerNorm, Linear, Mlp};
use crate::sample::TemporalSample;
use crate::spectral::{softmax_weights, top_k_periods, PeriodDecomposition};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwinModelConfig {
    pub d_model: usize,
    pub d_k: usize,
    pub window: usize,
    pub layers: usize,
    pub k: usize,
    pub n_p: usize,
    pub n_f: usize,
    pub heads: usize,
    /// Hidden width of the compensation estimators.
    pub mlp_hidden: usize,
    /// Hidden width of the per-token feed-forward network.
    pub ffn_hidden: usize,
    /// Scaling/shifting inside the attention softmax (τ¹, Δ¹).
    pub comp_inner: bool,
    /// Scaling/shifting of the final block output (τ², Δ²).
    pub comp_outer: bool,
}

impl Default for SwinModelConfig {
    fn default() -> Self {
        Self {
            d_model: 16,
            d_k: 16,
            window: 2,
            layers: 2,
            k: 3,
            n_p: 10,
            n_f: 5,
            heads: 1,
            mlp_hidden: 128,
            ffn_hidden: 32,
            comp_inner: true,
            comp_outer: true,
        }
    }
}

impl SwinModelConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.n_p + self.n_f;
        if [
            self.d_model,
            self.d_k,
            self.layers,
            self.k,
            self.n_f,
            self.mlp_hidden,
            self.ffn_hidden,
        ]
        .contains(&0)
            || self.n_p < 2
        {
            return Err(Error::Config(
                "swin sizes must be positive and n_p >= 2".into(),
            ));
        }
        if self.d_k > self.d_model {
            return Err(Error::Config("d_k must not exceed d_model".into()));
        }
        if self.window < 2 {
            return Err(Error::Config("window must be >= 2".into()));
        }
        if self.heads != 1 {
            return Err(Error::Config(
                "only a single attention head is supported".into(),
            ));
        }
        if 2 * self.k >= t {
            return Err(Error::Config(format!(
                "k = {} needs k < T/2 = {t}/2",
                self.k
            )));
        }
        Ok(())
    }

    pub fn compensated(&self) -> bool {
        self.comp_inner || self.comp_outer
    }
}

/// Grid cell (row-major in the padded `rows × cols` grid) of every window
/// token, windows and tokens both in row-major order. With `shift` the grid
/// is first rolled by `⌊w/2⌋` along both axes.
pub fn window_index(rows: usize, cols: usize, w: usize, shift: bool) -> Vec<usize> {
    let s = if shift { w / 2 } else { 0 };
    let mut idx = Vec::with_capacity(rows * cols);
    for wr in 0..rows / w {
        for wc in 0..cols / w {
            for i in 0..w {
                for j in 0..w {
                    let r = (wr * w + i + s) % rows;
                    let c = (wc * w + j + s) % cols;
                    idx.push(r * cols + c);
                }
            }
        }
    }
    idx
}

fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn padded(n: usize, w: usize) -> usize {
    n.max(1).div_ceil(w) * w
}

/// Splits an `[f × p × d]` grid into `w × w` windows of shape `[w² × d]`,
/// zero-padding each axis up to a multiple of `w`.
pub fn window_partition(x: &Tensor, w: usize, shift: bool) -> Result<Vec<Tensor>> {
    if x.shape().len() != 3 || w == 0 {
        return Err(shape_err(format!(
            "expected [f × p × d], got {:?}",
            x.shape()
        )));
    }
    let (f, p, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (rows, cols) = (padded(f, w), padded(p, w));
    let mut grid = vec![0.0; rows * cols * d];
    for r in 0..f {
        let src = &x.values()[r * p * d..(r + 1) * p * d];
        grid[r * cols * d..r * cols * d + p * d].copy_from_slice(src);
    }
    let idx = window_index(rows, cols, w, shift);
    Ok(idx
        .chunks_exact(w * w)
        .map(|win| {
            let v = win
                .iter()
                .flat_map(|&c| grid[c * d..(c + 1) * d].iter().copied())
                .collect();
            Tensor::new(vec![w * w, d], v).expect("window shape")
        })
        .collect())
}

/// Inverse of [`window_partition`] for an original grid of `f × p`.
pub fn window_combine(
    windows: &[Tensor],
    f: usize,
    p: usize,
    w: usize,
    shift: bool,
) -> Result<Tensor> {
    let (rows, cols) = (padded(f, w), padded(p, w));
    if windows.len() * w * w != rows * cols {
        return Err(shape_err("window count does not match grid"));
    }
    let d = windows.first().map_or(0, |t| t.last_dim());
    let idx = window_index(rows, cols, w, shift);
    let mut grid = vec![0.0; rows * cols * d];
    for (tok, &cell) in idx.iter().enumerate() {
        let win = &windows[tok / (w * w)];
        let i = tok % (w * w);
        grid[cell * d..(cell + 1) * d].copy_from_slice(win.row(i));
    }
    let mut out = Vec::with_capacity(f * p * d);
    for r in 0..f {
        out.extend_from_slice(&grid[r * cols * d..r * cols * d + p * d]);
    }
    Tensor::new(vec![f, p, d], out)
}

/// `softmax((τ·QKᵀ + 1·δᵀ)/√d_k)`. `q`, `k` are `[n × d_k]` or batched
/// `[b × n × d_k]`; `delta` has length `n` and is added to every row.
pub fn destationary_scores(
    tape: &mut Tape,
    q: Var,
    k: Var,
    tau: Option<Var>,
    delta: Option<Var>,
) -> Result<Var> {
    let d_k = tape.value(q).last_dim();
    let mut s = tape.matmul_nt(q, k)?;
    if let Some(tau) = tau {
        s = tape.scale_by(s, tau)?;
    }
    if let Some(delta) = delta {
        s = tape.add_row(s, delta)?;
    }
    let s = tape.scale(s, 1.0 / (d_k as f64).sqrt());
    tape.softmax_rows(s)
}

/// De-stationary attention on plain tensors: `softmax((τ·Q′K′ᵀ + 1·δᵀ)/√d_k)·V′`.
pub fn destationary_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    tau: f64,
    delta: &[f64],
) -> Result<Tensor> {
    if q.shape().len() != 2 || q.shape() != k.shape() || v.shape()[0] != q.shape()[0] {
        return Err(shape_err(format!(
            "attention Q {:?}, K {:?}, V {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if delta.len() != q.shape()[0] {
        return Err(shape_err("delta needs one entry per token"));
    }
    let mut tape = Tape::new();
    let (qv, kv, vv) = (
        tape.constant(q.clone()),
        tape.constant(k.clone()),
        tape.constant(v.clone()),
    );
    let t = tape.constant(Tensor::scalar(tau));
    let dl = tape.constant(Tensor::vector(delta.to_vec()));
    let w = destationary_scores(&mut tape, qv, kv, Some(t), Some(dl))?;
    let out = tape.matmul(w, vv)?;
    Ok(tape.value(out).clone())
}

/// Pre-norm window attention followed by a pre-norm feed-forward network.
#[derive(Clone, Debug)]
pub struct SwinLayer {
    pub ln1: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2: LayerNorm,
    pub ffn: Mlp,
    pub shift: bool,
}

impl SwinLayer {
    fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &SwinModelConfig,
        shift: bool,
        seed: u64,
    ) -> Self {
        let (d, dk) = (cfg.d_model, cfg.d_k);
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            wq: Linear::without_bias(store, &format!("{name}.wq"), d, dk, seed),
            wk: Linear::without_bias(store, &format!("{name}.wk"), d, dk, seed),
            wv: Linear::without_bias(store, &format!("{name}.wv"), d, dk, seed),
            wo: Linear::new(store, &format!("{name}.wo"), dk, d, seed),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            ffn: Mlp::new(
                store,
                &format!("{name}.ffn"),
                &[d, cfg.ffn_hidden, d],
                seed,
                false,
            ),
            shift,
        }
    }

    /// `x: [rows·cols × d]` tokens of a padded grid.
    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        rows: usize,
        cols: usize,
        w: usize,
        inner: Option<(Var, Var)>,
    ) -> Result<Var> {
        let d = tape.value(x).last_dim();
        let n = rows * cols;
        let idx = window_index(rows, cols, w, self.shift);
        let inv = inverse(&idx);
        let n_win = n / (w * w);
        let h = self.ln1.forward(tape, store, x)?;
        let win = tape.gather_rows(
            h,
            d,
            idx.into_iter().map(Some).collect(),
            vec![n_win, w * w, d],
        )?;
        let q = self.wq.forward(tape, store, win)?;
        let k = self.wk.forward(tape, store, win)?;
        let v = self.wv.forward(tape, store, win)?;
        let (tau, delta) = match inner {
            Some((t, dl)) => (Some(t), Some(dl)),
            None => (None, None),
        };
        let a = destationary_scores(tape, q, k, tau, delta)?;
        let o = tape.matmul(a, v)?;
        let o = self.wo.forward(tape, store, o)?;
        let back = tape.gather_rows(o, d, inv.into_iter().map(Some).collect(), vec![n, d])?;
        let x = tape.add(x, back)?;
        let h = self.ln2.forward(tape, store, x)?;
        let m = self.ffn.forward(tape, store, h)?;
        tape.add(x, m)
    }
}

#[derive(Clone, Debug)]
pub struct SwinBlock {
    pub plain: SwinLayer,
    pub shifted: SwinLayer,
}

#[derive(Clone, Debug)]
pub struct SwinModel {
    pub cfg: SwinModelConfig,
    pub frontend: Frontend,
    pub blocks: Vec<SwinBlock>,
    pub comp: Option<CompensationNet>,
    pub scales: FeatureScales,
    /// Replace every estimated factor by τ = 1, Δ = 0 (still applied).
    pub force_neutral: bool,
}

/// Compensation nodes for one sample.
#[derive(Clone, Copy, Debug)]
struct SwinComp {
    inner: Option<(Var, Var)>,
    outer: Option<(Var, Var)>,
}

impl SwinModel {
    pub fn new(
        cfg: SwinModelConfig,
        normalization: Normalization,
        scales: FeatureScales,
        seed: u64,
        store: &mut ParamStore,
    ) -> Result<Self> {
        cfg.validate()?;
        let frontend = Frontend::new(store, normalization, cfg.n_p, cfg.n_f, cfg.d_model, seed);
        let blocks = (0..cfg.layers)
            .map(|l| SwinBlock {
                plain: SwinLayer::new(store, &format!("block{l}.wmsa"), &cfg, false, seed),
                shifted: SwinLayer::new(store, &format!("block{l}.swmsa"), &cfg, true, seed),
            })
            .collect();
        let w2 = cfg.window * cfg.window;
        let comp = cfg.compensated().then(|| {
            CompensationNet::new(
                store,
                "comp",
                cfg.n_p,
                cfg.mlp_hidden,
                2,
                w2 + cfg.d_model,
                seed,
            )
        });
        Ok(Self {
            cfg,
            frontend,
            blocks,
            comp,
            scales,
            force_neutral: false,
        })
    }

    fn t(&self) -> usize {
        self.cfg.n_p + self.cfg.n_f
    }

    fn compensation(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prep: &crate::model::Prepared,
    ) -> Result<SwinComp> {
        let w2 = self.cfg.window * self.cfg.window;
        let d = self.cfg.d_model;
        let Some(net) = &self.comp else {
            return Ok(SwinComp {
                inner: None,
                outer: None,
            });
        };
        let (tau1, delta1, tau2, delta2) = if self.force_neutral {
            (
                tape.constant(Tensor::scalar(1.0)),
                tape.constant(Tensor::zeros(&[w2])),
                tape.constant(Tensor::scalar(1.0)),
                tape.constant(Tensor::zeros(&[d])),
            )
        } else {
            let (tau, delta) =
                net.forward(tape, store, &prep.raw_past, &prep.stats, &self.scales)?;
            (
                tape.gather_rows(tau, 1, vec![Some(0)], vec![1])?,
                tape.gather_rows(delta, 1, (0..w2).map(Some).collect(), vec![w2])?,
                tape.gather_rows(tau, 1, vec![Some(1)], vec![1])?,
                tape.gather_rows(delta, 1, (w2..w2 + d).map(Some).collect(), vec![d])?,
            )
        };
        Ok(SwinComp {
            inner: self.cfg.comp_inner.then_some((tau1, delta1)),
            outer: self.cfg.comp_outer.then_some((tau2, delta2)),
        })
    }

    /// One block: per period, fold onto a padded grid, run window attention
    /// and shifted-window attention, unfold, and mix the per-period updates
    /// with amplitude softmax weights.
    pub fn block(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        block: &SwinBlock,
        x: Var,
        pd: &PeriodDecomposition,
        inner: Option<(Var, Var)>,
    ) -> Result<Var> {
        let (t, d, w) = (self.t(), self.cfg.d_model, self.cfg.window);
        let weights = softmax_weights(&pd.amplitudes)?;
        let mut acc = x;
        for ((&f, &p), &wt) in pd.freqs.iter().zip(&pd.periods).zip(&weights) {
            let (rows, cols) = (padded(f, w), padded(p, w));
            let fold: Vec<Option<usize>> = (0..rows * cols)
                .map(|cell| {
                    let (r, c) = (cell / cols, cell % cols);
                    let src = r * p + c;
                    (r < f && c < p && src < t).then_some(src)
                })
                .collect();
            let unfold: Vec<Option<usize>> = (0..t).map(|i| Some((i / p) * cols + i % p)).collect();
            let g = tape.gather_rows(x, d, fold, vec![rows * cols, d])?;
            let g = block.plain.forward(tape, store, g, rows, cols, w, inner)?;
            let g = block
                .shifted
                .forward(tape, store, g, rows, cols, w, inner)?;
            let back = tape.gather_rows(g, d, unfold, vec![t, d])?;
            let upd = tape.sub(back, x)?;
            let upd = tape.scale(upd, wt);
            acc = tape.add(acc, upd)?;
        }
        Ok(acc)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sample: &TemporalSample,
        plan: Option<&[PeriodDecomposition]>,
    ) -> Result<SampleForward> {
        let (mut x, prep) = self.frontend.embed(tape, store, sample)?;
        let comp = self.compensation(tape, store, &prep)?;
        let mut used = Vec::with_capacity(self.blocks.len());
        for (l, block) in self.blocks.iter().enumerate() {
            let pd = match plan {
                Some(p) => p
                    .get(l)
                    .cloned()
                    .ok_or_else(|| Error::Shape("period plan shorter than block count".into()))?,
                None => top_k_periods(tape.value(x), self.cfg.k)?,
            };
            x = self.block(tape, store, block, x, &pd, comp.inner)?;
            used.push(pd);
        }
        if let Some((tau2, delta2)) = comp.outer {
            x = tape.scale_by(x, tau2)?;
            x = tape.add_row(x, delta2)?;
        }
        let pred_norm = self.frontend.head(tape, store, x, &prep)?;
        if tape
            .value(pred_norm)
            .values()
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(Error::Diverged("non-finite activations".into()));
        }
        Ok(SampleForward {
            pred_norm,
            stats: prep.stats,
            plan: used,
        })
    }
}
