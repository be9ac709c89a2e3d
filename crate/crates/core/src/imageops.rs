//! Pixel-level helpers: resampling and colour conversions.

use crate::tensor::ImageTensor;

/// Bilinear resize with half-pixel centres and edge clamping (no
/// antialiasing).
pub fn resize_bilinear(img: &ImageTensor<f32>, out_h: usize, out_w: usize) -> ImageTensor<f32> {
    let (h, w, c) = img.shape();
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let src = img.data();
    let coord = |d: usize, scale: f64, n: usize| {
        let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    ImageTensor::from_fn(out_h, out_w, c, |(y, x, ch)| {
        let (y0, y1, fy) = coord(y, sy, h);
        let (x0, x1, fx) = coord(x, sx, w);
        let p = |yy: usize, xx: usize| src[[yy, xx, ch]] as f64;
        let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
        let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
        (top * (1.0 - fy) + bot * fy) as f32
    })
}

/// ITU-R BT.601 luma of an RGB triple.
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Single-channel luminance image. Grayscale inputs are returned unchanged.
pub fn luminance(img: &ImageTensor<f32>) -> ImageTensor<f32> {
    let (h, w, c) = img.shape();
    if c < 3 {
        return ImageTensor::from_fn(h, w, 1, |(y, x, _)| img.get(y, x, 0));
    }
    ImageTensor::from_fn(h, w, 1, |(y, x, _)| {
        luma(img.get(y, x, 0) as f64, img.get(y, x, 1) as f64, img.get(y, x, 2) as f64) as f32
    })
}

/// RGB in `[0,1]` to HSV with hue as a fraction of the full circle.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

pub fn rgb_to_ycbcr(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = luma(r, g, b);
    (y, (b - y) * 0.564, (r - y) * 0.713)
}

pub fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> (f64, f64, f64) {
    let r = y + cr / 0.713;
    let b = y + cb / 0.564;
    let g = (y - 0.299 * r - 0.114 * b) / 0.587;
    (r, g, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_identity_and_constant() {
        let img = ImageTensor::<f32>::from_fn(6, 4, 3, |(y, x, c)| (y * 4 + x + c) as f32 / 30.0);
        assert_eq!(resize_bilinear(&img, 6, 4), img);
        let k = ImageTensor::<f32>::filled(10, 10, 3, 0.25);
        let r = resize_bilinear(&k, 3, 7);
        assert!(r.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn hsv_roundtrip() {
        for &(r, g, b) in &[(0.2, 0.5, 0.9), (1.0, 0.0, 0.0), (0.3, 0.3, 0.3), (0.9, 0.8, 0.1)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-12 && (g - g2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
        }
    }

    #[test]
    fn ycbcr_roundtrip() {
        let (y, cb, cr) = rgb_to_ycbcr(0.2, 0.6, 0.4);
        let (r, g, b) = ycbcr_to_rgb(y, cb, cr);
        assert!((r - 0.2).abs() < 1e-12 && (g - 0.6).abs() < 1e-12 && (b - 0.4).abs() < 1e-12);
    }
}
