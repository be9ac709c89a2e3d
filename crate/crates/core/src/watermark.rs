//! The binary watermark payload and its text encoding.

use std::fmt;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Real};

/// Square grid of bits, row-major. The default geometry is 8×8 = 64 bits.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WatermarkBits {
    side: usize,
    bits: Vec<bool>,
}

impl WatermarkBits {
    pub fn new(side: usize, bits: Vec<bool>) -> Result<Self> {
        if side == 0 || bits.len() != side * side {
            return Err(Error::Shape(format!(
                "{} bits cannot fill a {side}x{side} watermark",
                bits.len()
            )));
        }
        Ok(Self { side, bits })
    }

    pub fn filled(side: usize, value: bool) -> Self {
        Self {
            side,
            bits: vec![value; side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.side + col]
    }

    pub fn complement(&self) -> Self {
        Self {
            side: self.side,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Bits as a `side × side × 1` image of `{0.0, 1.0}`.
    pub fn to_image<T: Real>(&self) -> ImageTensor<T> {
        ImageTensor::from_fn(self.side, self.side, 1, |(y, x, _)| {
            if self.get(y, x) {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn to_targets<T: Real>(&self) -> Array2<T> {
        Array2::from_shape_fn((self.side, self.side), |(y, x)| {
            if self.get(y, x) {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Threshold real-valued cells at 0.5 (values `>= 0.5` become 1).
    pub fn from_logits<T: Real>(logits: &Array2<T>) -> Result<Self> {
        let (r, c) = logits.dim();
        if r != c {
            return Err(Error::Shape(format!("watermark logits must be square, got {r}x{c}")));
        }
        let half = T::lit(0.5);
        Ok(Self {
            side: r,
            bits: logits.iter().map(|&v| v >= half).collect(),
        })
    }

    /// Parse a real-valued grid that must contain only 0 and 1.
    pub fn from_binary_grid<T: Real>(grid: &Array2<T>) -> Result<Self> {
        let (r, c) = grid.dim();
        if r != c {
            return Err(Error::Shape(format!("watermark must be square, got {r}x{c}")));
        }
        let bits = grid
            .iter()
            .map(|&v| {
                if v == T::one() {
                    Ok(true)
                } else if v == T::zero() {
                    Ok(false)
                } else {
                    Err(Error::Domain(format!("watermark cell {v} is not binary")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { side: r, bits })
    }

    /// Hex text, row-major, most significant bit first, four bits per digit.
    pub fn to_hex(&self) -> String {
        self.bits
            .chunks(4)
            .map(|nib| {
                let v = nib
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << (3 - i)));
                char::from_digit(v as u32, 16).unwrap().to_ascii_uppercase()
            })
            .collect()
    }

    /// Parse the format written by [`to_hex`](Self::to_hex); 64-bit
    /// watermarks take exactly 16 digits.
    pub fn from_hex(side: usize, text: &str) -> Result<Self> {
        let n = side * side;
        let digits = n.div_ceil(4);
        let text = text.trim();
        if text.len() != digits {
            return Err(Error::Domain(format!(
                "expected {digits} hex digits for a {side}x{side} watermark, got {}",
                text.len()
            )));
        }
        let mut bits = Vec::with_capacity(digits * 4);
        for ch in text.chars() {
            let v = ch
                .to_digit(16)
                .ok_or_else(|| Error::Domain(format!("`{ch}` is not a hex digit")))?;
            for i in (0..4).rev() {
                bits.push((v >> i) & 1 == 1);
            }
        }
        bits.truncate(n);
        Self::new(side, bits)
    }
}

impl fmt::Display for WatermarkBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}
