use ndarray::{Array2, Array3, Axis};
use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::params::{Gradients, ParamBuilder, ParamId, ParameterStore};
use crate::tensor::{ImageTensor, Real};

/// Same-padded, stride-1 2-D convolution over `H × W × C` maps, computed as
/// an im2col matrix product. The kernel is stored as a
/// `(k·k·C_in) × C_out` matrix with rows ordered `(ky, kx, c_in)`.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: usize,
}

pub struct ConvCache<T> {
    cols: Array2<T>,
    height: usize,
    width: usize,
}

impl Conv2d {
    pub fn build<T: Real, R: Rng>(
        b: &mut ParamBuilder<'_, T, R>,
        name: &str,
        in_channels: usize,
        filters: usize,
        kernel: usize,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "same-padded convolution needs an odd kernel, got {kernel}"
            )));
        }
        let fan_in = kernel * kernel * in_channels;
        let mut s = b.scope(name);
        let weight = s.fan_in("weight", &[fan_in, filters], fan_in)?;
        let bias = s.constant("bias", &[filters], 0.0)?;
        Ok(Self {
            weight,
            bias,
            in_channels,
            filters,
            kernel,
        })
    }

    fn im2col<T: Real>(&self, x: &Array3<T>) -> Array2<T> {
        let (h, w, c) = x.dim();
        let k = self.kernel;
        if k == 1 {
            return x
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((h * w, c))
                .expect("contiguous map");
        }
        let pad = (k / 2) as isize;
        let mut cols = Array2::zeros((h * w, k * k * c));
        for y in 0..h {
            for xx in 0..w {
                let mut row = cols.row_mut(y * w + xx);
                for ky in 0..k {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = xx as isize + kx as isize - pad;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let base = (ky * k + kx) * c;
                        let src = x.slice(ndarray::s![sy as usize, sx as usize, ..]);
                        row.slice_mut(ndarray::s![base..base + c]).assign(&src);
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, dcols: &Array2<T>, h: usize, w: usize) -> Array3<T> {
        let c = self.in_channels;
        let k = self.kernel;
        if k == 1 {
            return dcols
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((h, w, c))
                .expect("contiguous gradient");
        }
        let pad = (k / 2) as isize;
        let mut dx = Array3::zeros((h, w, c));
        for y in 0..h {
            for xx in 0..w {
                let row = dcols.row(y * w + xx);
                for ky in 0..k {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = xx as isize + kx as isize - pad;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let base = (ky * k + kx) * c;
                        let mut dst = dx.slice_mut(ndarray::s![sy as usize, sx as usize, ..]);
                        dst += &row.slice(ndarray::s![base..base + c]);
                    }
                }
            }
        }
        dx
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParameterStore<T>,
        x: &Array3<T>,
    ) -> Result<(Array3<T>, ConvCache<T>)> {
        let (h, w, c) = x.dim();
        if c != self.in_channels {
            return Err(shape_err!(
                "convolution expects {} channels, got {c}",
                self.in_channels
            ));
        }
        let cols = self.im2col(x);
        let mut y = cols.dot(&store.matrix(self.weight));
        y += &store.vector(self.bias);
        let y = y
            .into_shape_with_order((h, w, self.filters))
            .map_err(|e| shape_err!("{e}"))?;
        Ok((
            y,
            ConvCache {
                cols,
                height: h,
                width: w,
            },
        ))
    }

    pub fn backward<T: Real>(
        &self,
        store: &ParameterStore<T>,
        cache: &ConvCache<T>,
        dy: &Array3<T>,
        grads: &mut Gradients<T>,
    ) -> Array3<T> {
        let dy2 = dy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((cache.height * cache.width, self.filters))
            .expect("contiguous gradient");
        {
            let mut gw = grads.matrix_mut(self.weight);
            ndarray::linalg::general_mat_mul(T::one(), &cache.cols.t(), &dy2, T::one(), &mut gw);
        }
        {
            let mut gb = grads.vector_mut(self.bias);
            gb += &dy2.sum_axis(Axis(0));
        }
        let dcols = dy2.dot(&store.matrix(self.weight).t());
        self.col2im(&dcols, cache.height, cache.width)
    }
}

/// Convolve an image-shaped map.
pub fn conv2d<T: Real>(
    img: &ImageTensor<T>,
    store: &ParameterStore<T>,
    layer: &Conv2d,
) -> Result<ImageTensor<T>> {
    let (y, _) = layer.forward(store, img.data())?;
    ImageTensor::new(y)
}
