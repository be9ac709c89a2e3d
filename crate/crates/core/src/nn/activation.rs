use ndarray::{Array, Dimension};

use crate::tensor::Real;

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let k = T::lit(GELU_K);
    let c = T::lit(GELU_C);
    let half = T::lit(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

/// Derivative of [`gelu`] at `x`.
pub fn gelu_backward<T: Real>(x: T) -> T {
    let k = T::lit(GELU_K);
    let c = T::lit(GELU_C);
    let half = T::lit(0.5);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::lit(3.0) * c * x * x)
}

/// Elementwise GELU over whole arrays; the pre-activation is the cache.
pub struct Gelu;

impl Gelu {
    pub fn forward<T: Real, D: Dimension>(x: &Array<T, D>) -> Array<T, D> {
        x.mapv(gelu)
    }

    pub fn backward<T: Real, D: Dimension>(x: &Array<T, D>, dy: &Array<T, D>) -> Array<T, D> {
        let mut dx = dy.clone();
        dx.zip_mut_with(x, |d, &xv| *d = *d * gelu_backward(xv));
        dx
    }
}
