//! Parameterised layers built on the tape.

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Affine layer `x·W + b` over the trailing axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, seed: u64) -> Self {
        let w = store.add_uniform(format!("{name}.w"), &[d_in, d_out], d_in, seed);
        let b = store.add_uniform(format!("{name}.b"), &[d_out], d_in, seed);
        Self {
            w,
            b: Some(b),
            d_in,
            d_out,
        }
    }

    pub fn without_bias(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        seed: u64,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), &[d_in, d_out], d_in, seed);
        Self {
            w,
            b: None,
            d_in,
            d_out,
        }
    }

    /// Weights and bias start at zero.
    pub fn zeros(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros(&[d_in, d_out]));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[d_out]));
        Self {
            w,
            b: Some(b),
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = self.b.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

/// Fully connected network with ReLU between layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [d_in, h_1, …, d_out]`. With `zero_output` the last layer
    /// starts at zero so the network initially outputs exactly 0.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        seed: u64,
        zero_output: bool,
    ) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let lname = format!("{name}.{i}");
                if zero_output && i == n - 1 {
                    Linear::zeros(store, &lname, dims[i], dims[i + 1])
                } else {
                    Linear::new(store, &lname, dims[i], dims[i + 1], seed)
                }
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, store, x)?;
            if i < last {
                x = tape.relu(x)?;
            }
        }
        Ok(x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::params).collect()
    }
}

/// Evaluates an MLP on a plain tensor.
pub fn mlp_forward(store: &ParamStore, mlp: &Mlp, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = mlp.forward(&mut tape, store, v)?;
    Ok(tape.value(out).clone())
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[d], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Same-size 1-D convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        size: usize,
        c_in: usize,
        c_out: usize,
        seed: u64,
    ) -> Self {
        let fan_in = size * c_in;
        Self {
            kernel: store.add_uniform(format!("{name}.kernel"), &[size, c_in, c_out], fan_in, seed),
            bias: store.add_uniform(format!("{name}.bias"), &[c_out], fan_in, seed),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let k = tape.param(store, self.kernel);
        let b = tape.param(store, self.bias);
        let y = tape.conv1d(x, k, Default::default())?;
        tape.add_row(y, b)
    }
}

/// Parallel square 2-D convolutions of sizes 1, 3, …, 2n−1 whose outputs are
/// averaged. Evaluated as one convolution with the centred mean kernel.
#[derive(Clone, Debug)]
pub struct Inception {
    pub kernels: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

impl Inception {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n_kernels: usize,
        c_in: usize,
        c_out: usize,
        seed: u64,
    ) -> Self {
        let mut kernels = Vec::with_capacity(n_kernels);
        let mut biases = Vec::with_capacity(n_kernels);
        for i in 0..n_kernels {
            let s = 2 * i + 1;
            let fan_in = s * s * c_in;
            kernels.push(store.add_uniform(
                format!("{name}.k{s}"),
                &[s, s, c_in, c_out],
                fan_in,
                seed,
            ));
            biases.push(store.add_uniform(format!("{name}.b{s}"), &[c_out], fan_in, seed));
        }
        Self { kernels, biases }
    }

    /// `x: [H × W × c_in] → [H × W × c_out]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let ks: Vec<Var> = self.kernels.iter().map(|&k| tape.param(store, k)).collect();
        let bs: Vec<Var> = self.biases.iter().map(|&b| tape.param(store, b)).collect();
        let k = tape.centered_kernel_mean(&ks)?;
        let b = tape.mean_of(&bs)?;
        let y = tape.conv2d(x, k, Default::default())?;
        tape.add_row(y, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.kernels.iter().chain(&self.biases).copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Padding;

    #[test]
    fn fused_inception_equals_mean_of_branches() {
        let mut store = ParamStore::new();
        let inc = Inception::new(&mut store, "inc", 3, 2, 3, 5);
        let x = Tensor::new(
            vec![4, 5, 2],
            (0..40).map(|i| ((i * 7) % 11) as f64 - 5.0).collect(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let fused = inc.forward(&mut tape, &store, xv).unwrap();
        let fused = tape.value(fused).clone();

        let mut mean = Tensor::zeros(&[4, 5, 3]);
        for (&k, &b) in inc.kernels.iter().zip(&inc.biases) {
            let mut y = crate::autodiff::ops::conv2d(&x, store.value(k), Padding::Zeros).unwrap();
            let bias = store.value(b).values();
            for row in y.values_mut().chunks_exact_mut(3) {
                for (v, bv) in row.iter_mut().zip(bias) {
                    *v += bv;
                }
            }
            mean = mean.axpby(1.0, &y, 1.0 / 3.0).unwrap();
        }
        assert!(fused.max_abs_diff(&mean) < 1e-12);
    }

    #[test]
    fn zero_output_mlp_outputs_zero() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[4, 8, 8, 3], 1, true);
        let y = mlp_forward(&store, &mlp, &Tensor::vector(vec![1.0, -2.0, 3.0, 0.5])).unwrap();
        assert_eq!(y.values(), &[0.0, 0.0, 0.0]);
    }
}
