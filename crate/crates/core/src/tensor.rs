//! Image and token containers plus the lossless patch rearrangements that
//! connect them.
//!
//! Images are stored `height × width × channels` with values in `[0, 1]`.
//! Patchification walks patches in row-major order and flattens each patch
//! row-major with the channel index varying fastest, so token `i` of a
//! `rows × cols` grid is the patch at `(i / cols, i % cols)`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array2, Array3, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

use crate::error::{shape_err, Result};

/// Floating point scalar used by every network. Training runs in `f32`,
/// gradient checks in `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `H × W × C` image with pixel intensities in the unit range.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor<T = f32> {
    data: Array3<T>,
}

impl<T: Real> ImageTensor<T> {
    pub fn new(data: Array3<T>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 || c == 0 {
            return Err(shape_err!("image dimensions must be positive, got {h}x{w}x{c}"));
        }
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty image");
        Self {
            data: Array3::from_elem((height, width, channels), value),
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl FnMut((usize, usize, usize)) -> T,
    ) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty image");
        Self {
            data: Array3::from_shape_fn((height, width, channels), f),
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array3<T> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<T> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<T> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[[y, x, c]]
    }

    /// Clamp every value into `[0, 1]`.
    pub fn clamped(mut self) -> Self {
        self.data.mapv_inplace(|v| v.max(T::zero()).min(T::one()));
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ImageTensor<U> {
        ImageTensor {
            data: self.data.mapv(|v| U::from_f64(v.to_f64().unwrap()).unwrap()),
        }
    }

    /// Quantize to 8-bit with `round(255·x)` after clamping to the unit range.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| {
                let v = v.to_f64().unwrap().clamp(0.0, 1.0);
                (v * 255.0).round() as u8
            })
            .collect()
    }

    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != height * width * channels {
            return Err(shape_err!(
                "expected {} bytes for {height}x{width}x{channels}, got {}",
                height * width * channels,
                bytes.len()
            ));
        }
        let data = Array3::from_shape_vec(
            (height, width, channels),
            bytes.iter().map(|&b| T::lit(b as f64 / 255.0)).collect(),
        )
        .map_err(|e| shape_err!("{e}"))?;
        Self::new(data)
    }
}

/// Where a token sequence came from: a `rows × cols` grid of
/// `patch × patch × channels` patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch: usize,
    pub channels: usize,
}

impl PatchGrid {
    pub fn token_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn tokens(&self) -> usize {
        self.rows * self.cols
    }
}

/// `N × D` token matrix, optionally tagged with the grid it was cut from.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence<T = f32> {
    data: Array2<T>,
    grid: Option<PatchGrid>,
}

impl<T: Real> TokenSequence<T> {
    pub fn new(data: Array2<T>) -> Self {
        Self { data, grid: None }
    }

    pub fn with_grid(data: Array2<T>, grid: PatchGrid) -> Result<Self> {
        let (n, d) = data.dim();
        if n != grid.tokens() || d != grid.token_dim() {
            return Err(shape_err!(
                "{n}x{d} tokens do not match grid {:?} ({}x{})",
                grid,
                grid.tokens(),
                grid.token_dim()
            ));
        }
        Ok(Self {
            data,
            grid: Some(grid),
        })
    }

    pub fn tokens(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn grid(&self) -> Option<PatchGrid> {
        self.grid
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn into_data(self) -> Array2<T> {
        self.data
    }
}

/// Cut an image into non-overlapping `patch × patch` tokens.
pub fn patchify<T: Real>(img: &ImageTensor<T>, patch: usize) -> Result<TokenSequence<T>> {
    let (h, w, c) = img.shape();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(shape_err!(
            "image {h}x{w} is not divisible into {patch}x{patch} patches"
        ));
    }
    let grid = PatchGrid {
        rows: h / patch,
        cols: w / patch,
        patch,
        channels: c,
    };
    let src = img.data();
    let mut out = Array2::zeros((grid.tokens(), grid.token_dim()));
    for (t, mut row) in out.outer_iter_mut().enumerate() {
        let (gy, gx) = (t / grid.cols, t % grid.cols);
        let mut k = 0;
        for py in 0..patch {
            for px in 0..patch {
                for ch in 0..c {
                    row[k] = src[[gy * patch + py, gx * patch + px, ch]];
                    k += 1;
                }
            }
        }
    }
    TokenSequence::with_grid(out, grid)
}

/// Exact inverse of [`patchify`].
pub fn unpatchify<T: Real>(toks: &TokenSequence<T>) -> Result<ImageTensor<T>> {
    let grid = toks
        .grid()
        .ok_or_else(|| shape_err!("token sequence carries no patch grid"))?;
    tokens_to_image(toks.data(), grid)
}

/// Reassemble an `N × D` matrix into an image using an explicit grid.
pub fn tokens_to_image<T: Real>(data: &Array2<T>, grid: PatchGrid) -> Result<ImageTensor<T>> {
    let (n, d) = data.dim();
    if n != grid.tokens() || d != grid.token_dim() {
        return Err(shape_err!(
            "{n}x{d} tokens cannot be arranged on grid {:?}",
            grid
        ));
    }
    let p = grid.patch;
    let mut out = Array3::zeros((grid.rows * p, grid.cols * p, grid.channels));
    for (t, row) in data.outer_iter().enumerate() {
        let (gy, gx) = (t / grid.cols, t % grid.cols);
        let mut k = 0;
        for py in 0..p {
            for px in 0..p {
                for ch in 0..grid.channels {
                    out[[gy * p + py, gx * p + px, ch]] = row[k];
                    k += 1;
                }
            }
        }
    }
    ImageTensor::new(out)
}

/// Space-to-depth: `H × W × C` becomes `(H/b) × (W/b) × (b·b·C)` with the
/// same per-cell ordering as [`patchify`].
pub fn space_to_depth<T: Real>(img: &ImageTensor<T>, block: usize) -> Result<ImageTensor<T>> {
    let toks = patchify(img, block)?;
    let grid = toks.grid().unwrap();
    let data = toks
        .into_data()
        .into_shape_with_order((grid.rows, grid.cols, grid.token_dim()))
        .map_err(|e| shape_err!("{e}"))?;
    ImageTensor::new(data)
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space<T: Real>(img: &ImageTensor<T>, block: usize) -> Result<ImageTensor<T>> {
    let (h, w, d) = img.shape();
    if block == 0 || d % (block * block) != 0 {
        return Err(shape_err!("depth {d} is not a multiple of {block}^2"));
    }
    let grid = PatchGrid {
        rows: h,
        cols: w,
        patch: block,
        channels: d / (block * block),
    };
    let flat = img
        .data()
        .to_owned()
        .into_shape_with_order((h * w, d))
        .map_err(|e| shape_err!("{e}"))?;
    tokens_to_image(&flat, grid)
}
