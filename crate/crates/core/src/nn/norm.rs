use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{shape_err, Result};
use crate::params::{Gradients, ParamBuilder, ParamId, ParameterStore};
use crate::tensor::Real;

const EPS: f64 = 1e-5;

/// Per-token layer normalization with learned gain and shift.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

pub struct LayerNormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

impl LayerNorm {
    pub fn build<T: Real, R: Rng>(b: &mut ParamBuilder<'_, T, R>, name: &str, dim: usize) -> Result<Self> {
        let mut s = b.scope(name);
        let gamma = s.constant("gamma", &[dim], 1.0)?;
        let beta = s.constant("beta", &[dim], 0.0)?;
        Ok(Self { gamma, beta, dim })
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParameterStore<T>,
        x: &Array2<T>,
    ) -> Result<(Array2<T>, LayerNormCache<T>)> {
        if x.ncols() != self.dim {
            return Err(shape_err!("layer norm width {} got {}", self.dim, x.ncols()));
        }
        let d = T::lit(self.dim as f64);
        let mean = x.sum_axis(Axis(1)) / d;
        let centered = x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| T::one() / (v + T::lit(EPS)).sqrt());
        let xhat = &centered * &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &store.vector(self.gamma) + &store.vector(self.beta);
        Ok((y, LayerNormCache { xhat, inv_std }))
    }

    pub fn backward<T: Real>(
        &self,
        store: &ParameterStore<T>,
        cache: &LayerNormCache<T>,
        dy: &Array2<T>,
        grads: &mut Gradients<T>,
    ) -> Array2<T> {
        {
            let mut gg = grads.vector_mut(self.gamma);
            gg += &(dy * &cache.xhat).sum_axis(Axis(0));
        }
        {
            let mut gb = grads.vector_mut(self.beta);
            gb += &dy.sum_axis(Axis(0));
        }
        let d = T::lit(self.dim as f64);
        let dxhat = dy * &store.vector(self.gamma);
        let sum_dxhat = dxhat.sum_axis(Axis(1));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1));
        let mut dx = dxhat * d;
        dx -= &sum_dxhat.view().insert_axis(Axis(1));
        dx -= &(&cache.xhat * &sum_dxhat_xhat.view().insert_axis(Axis(1)));
        dx * &(cache.inv_std.mapv(|s| s / d)).view().insert_axis(Axis(1))
    }
}
