use ndarray::{Array2, Axis};
use rand::Rng;

use crate::error::{shape_err, Result};
use crate::params::{Gradients, ParamBuilder, ParamId, ParameterStore};
use crate::tensor::{Real, TokenSequence};

/// Token-wise affine map `y = x·W + b` (the "channel-wise fully connected"
/// layer). `W` is stored `in × out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn build<T: Real, R: Rng>(
        b: &mut ParamBuilder<'_, T, R>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let mut s = b.scope(name);
        let weight = s.fan_in("weight", &[in_dim, out_dim], in_dim)?;
        let bias = s.constant("bias", &[out_dim], 0.0)?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Real>(&self, store: &ParameterStore<T>, x: &Array2<T>) -> Result<Array2<T>> {
        if x.ncols() != self.in_dim {
            return Err(shape_err!(
                "linear layer expects {} input channels, got {}",
                self.in_dim,
                x.ncols()
            ));
        }
        let mut y = x.dot(&store.matrix(self.weight));
        y += &store.vector(self.bias);
        Ok(y)
    }

    /// `x` is the input seen by `forward`.
    pub fn backward<T: Real>(
        &self,
        store: &ParameterStore<T>,
        x: &Array2<T>,
        dy: &Array2<T>,
        grads: &mut Gradients<T>,
    ) -> Array2<T> {
        let mut gw = grads.matrix_mut(self.weight);
        ndarray::linalg::general_mat_mul(T::one(), &x.t(), dy, T::one(), &mut gw);
        let mut gb = grads.vector_mut(self.bias);
        gb += &dy.sum_axis(Axis(0));
        dy.dot(&store.matrix(self.weight).t())
    }
}

/// Apply a [`Linear`] layer independently to every token.
pub fn channel_fc<T: Real>(
    toks: &TokenSequence<T>,
    store: &ParameterStore<T>,
    layer: &Linear,
    out_dim: usize,
) -> Result<TokenSequence<T>> {
    if layer.out_dim != out_dim {
        return Err(shape_err!(
            "layer maps to {} channels, requested {out_dim}",
            layer.out_dim
        ));
    }
    Ok(TokenSequence::new(layer.forward(store, toks.data())?))
}

/// Add a learned positional table elementwise. The patch grid is preserved.
pub fn add_positional<T: Real>(toks: &TokenSequence<T>, table: &Array2<T>) -> Result<TokenSequence<T>> {
    if toks.data().dim() != table.dim() {
        return Err(shape_err!(
            "positional table {:?} does not match tokens {:?}",
            table.dim(),
            toks.data().dim()
        ));
    }
    let data = toks.data() + table;
    match toks.grid() {
        Some(g) => TokenSequence::with_grid(data, g),
        None => Ok(TokenSequence::new(data)),
    }
}
