//! Dense tensors with reverse-mode differentiation.

pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use kernels::Padding;
pub use optim::Adam;
pub use params::{Checkpoint, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::Result;

/// Gradient-free evaluation of single tape ops.
pub mod ops {
    use super::*;

    fn unary(x: &Tensor, f: impl FnOnce(&mut Tape, Var) -> Result<Var>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).clone())
    }

    fn binary(
        a: &Tensor,
        b: &Tensor,
        f: impl FnOnce(&mut Tape, Var, Var) -> Result<Var>,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let va = tape.constant(a.clone());
        let vb = tape.constant(b.clone());
        let out = f(&mut tape, va, vb)?;
        Ok(tape.value(out).clone())
    }

    pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vx = tape.constant(x.clone());
        let vw = tape.constant(w.clone());
        let vb = b.map(|b| tape.constant(b.clone()));
        let out = tape.linear(vx, vw, vb)?;
        Ok(tape.value(out).clone())
    }

    pub fn conv1d(x: &Tensor, k: &Tensor, padding: Padding) -> Result<Tensor> {
        binary(x, k, |t, a, b| t.conv1d(a, b, padding))
    }

    pub fn conv2d(x: &Tensor, k: &Tensor, padding: Padding) -> Result<Tensor> {
        binary(x, k, |t, a, b| t.conv2d(a, b, padding))
    }

    pub fn relu(x: &Tensor) -> Result<Tensor> {
        unary(x, |t, v| t.relu(v))
    }

    pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
        unary(x, |t, v| t.softmax_rows(v))
    }

    pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vx = tape.constant(x.clone());
        let g = tape.constant(gain.clone());
        let b = tape.constant(bias.clone());
        let out = tape.layer_norm(vx, g, b)?;
        Ok(tape.value(out).clone())
    }

    pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
        Ok(binary(pred, target, |t, a, b| t.mse(a, b))?.values()[0])
    }
}
