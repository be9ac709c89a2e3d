use ndarray::{Array, Dimension};
use rand::Rng;

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Per-element multipliers drawn by [`dropout`]: `0` for dropped elements
/// and `1/(1-rate)` for survivors. `None` means the layer was the identity.
#[derive(Clone, Debug)]
pub struct DropoutMask<T, D: Dimension>(Option<Array<T, D>>);

impl<T: Real, D: Dimension> DropoutMask<T, D> {
    pub fn backward(&self, dy: Array<T, D>) -> Array<T, D> {
        match &self.0 {
            Some(m) => dy * m,
            None => dy,
        }
    }

    pub fn kept_fraction(&self) -> Option<f64> {
        self.0.as_ref().map(|m| {
            m.iter().filter(|v| **v != T::zero()).count() as f64 / m.len().max(1) as f64
        })
    }
}

/// Inverted dropout. Eval mode and `rate == 0` are exact identities.
pub fn dropout<T: Real, D: Dimension, R: Rng>(
    x: &Array<T, D>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Array<T, D>, DropoutMask<T, D>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), DropoutMask(None)));
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask = x.map(|_| {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    });
    Ok((x * &mask, DropoutMask(Some(mask))))
}
