//! Local contrast normalization.
//!
//! Frames are standardized per pixel by the mean and standard deviation of
//! a square window before any flow or correlation stage sees them. That
//! strips the scene albedo and ambient offset so matching runs on pattern
//! structure alone.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Default window, comparable to the dot spacing.
pub const LCN_WINDOW: usize = 9;
/// Default variance regularizer.
pub const LCN_EPS: f32 = 1e-3;

/// `out = (in - mean_w) / (std_w + eps)` with window statistics computed
/// under edge replication. `window` must be odd and >= 3.
pub fn lcn(image: &Grid<f32>, window: usize, eps: f32) -> Result<Grid<f32>> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidParam(format!(
            "lcn window must be odd and >= 3, got {window}"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParam(format!("lcn eps must be > 0, got {eps}")));
    }
    let (w, h) = (image.width(), image.height());
    let pad = window / 2;
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);

    // Integral images of the replicated-border padding, f64 so long sums
    // stay exact enough for variance differences.
    let mut sum = vec![0.0f64; (pw + 1) * (ph + 1)];
    let mut sumsq = vec![0.0f64; (pw + 1) * (ph + 1)];
    let stride = pw + 1;
    for py in 0..ph {
        let sy = py.saturating_sub(pad).min(h - 1);
        for px in 0..pw {
            let sx = px.saturating_sub(pad).min(w - 1);
            let v = image.get(sx, sy) as f64;
            let idx = (py + 1) * stride + (px + 1);
            sum[idx] = v + sum[idx - 1] + sum[idx - stride] - sum[idx - stride - 1];
            sumsq[idx] = v * v + sumsq[idx - 1] + sumsq[idx - stride] - sumsq[idx - stride - 1];
        }
    }

    let n = (window * window) as f64;
    let mut out = Grid::new(w, h, 0.0f32);
    for y in 0..h {
        let row = out.row_mut(y);
        for (x, o) in row.iter_mut().enumerate() {
            // Window [x, x+window) x [y, y+window) in padded coordinates.
            let x0 = x;
            let y0 = y;
            let x1 = x + window;
            let y1 = y + window;
            let box_sum = sum[y1 * stride + x1] - sum[y0 * stride + x1] - sum[y1 * stride + x0]
                + sum[y0 * stride + x0];
            let box_sq = sumsq[y1 * stride + x1] - sumsq[y0 * stride + x1]
                - sumsq[y1 * stride + x0]
                + sumsq[y0 * stride + x0];
            let mean = box_sum / n;
            let var = (box_sq / n - mean * mean).max(0.0);
            let std = var.sqrt();
            *o = ((image.get(x, y) as f64 - mean) / (std + eps as f64)) as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &Grid<f32>, b: &Grid<f32>) -> f32 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max)
    }

    #[test]
    fn constant_image_maps_to_zero() {
        let img = Grid::new(16, 12, 0.37f32);
        let out = lcn(&img, 5, 1e-3).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_intensity_change_is_nearly_invariant() {
        // Strongly textured image: every window carries real contrast, so
        // the eps regularizer stays negligible against the local sigma.
        let mut img = Grid::new(40, 30, 0.0f32);
        let mut state = 0x2545F4914F6CDD1Du64;
        for y in 0..30 {
            for x in 0..40 {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                img.set(x, y, (state >> 40) as f32 / 16777216.0);
            }
        }
        let mut scaled = img.clone();
        for v in scaled.data_mut() {
            *v = 2.0 * *v + 0.1;
        }
        let eps = 1e-3;
        let a = lcn(&img, 9, eps).unwrap();
        let b = lcn(&scaled, 9, eps).unwrap();
        assert!(max_abs_diff(&a, &b) < 10.0 * eps);
    }

    #[test]
    fn bright_center_sign_pattern() {
        let mut img = Grid::new(3, 3, 0.0f32);
        img.set(1, 1, 1.0);
        let out = lcn(&img, 3, 1e-3).unwrap();
        assert!(out.get(1, 1) > 0.0);
        for &(x, y) in &[(0, 0), (2, 0), (0, 2), (2, 2)] {
            assert!(out.get(x, y) < 0.0, "corner ({x},{y}) = {}", out.get(x, y));
        }
    }

    #[test]
    fn shift_equivariance_in_the_interior() {
        let mut img = Grid::new(32, 24, 0.0f32);
        for y in 0..24 {
            for x in 0..32 {
                img.set(x, y, ((x * 13 + y * 31) % 11) as f32 / 11.0);
            }
        }
        let (dx, dy) = (3usize, 2usize);
        let mut shifted = Grid::new(32, 24, 0.0f32);
        for y in 0..24 {
            for x in 0..32 {
                let sx = (x + 32 - dx) % 32;
                let sy = (y + 24 - dy) % 24;
                shifted.set(x, y, img.get(sx, sy));
            }
        }
        let win = 5;
        let a = lcn(&img, win, 1e-3).unwrap();
        let b = lcn(&shifted, win, 1e-3).unwrap();
        // Compare away from borders and from the wrap seam.
        let m = win; // margin
        for y in m..24 - m {
            for x in m..32 - m {
                let va = a.get((x + 32 - dx) % 32, (y + 24 - dy) % 24);
                let vb = b.get(x, y);
                assert!(
                    (va - vb).abs() < 1e-5,
                    "shift equivariance broken at ({x},{y}): {va} vs {vb}"
                );
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let img = Grid::new(8, 8, 0.0f32);
        assert!(lcn(&img, 4, 1e-3).is_err());
        assert!(lcn(&img, 1, 1e-3).is_err());
        assert!(lcn(&img, 3, 0.0).is_err());
    }
}
