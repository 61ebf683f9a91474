//! Pattern flow: per-pixel horizontal motion of the projected dots between
//! consecutive frames, computed at reduced resolution.
//!
//! Projected dots can only slide along the epipolar line, so the flow has a
//! single horizontal component `u` and equals the per-pixel disparity
//! change between the two frames. A windowed 1D Lucas-Kanade iteration per
//! reduced-resolution pixel is enough; no pyramid or global optimization.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Horizontal flow at reduced resolution. `u` is stored in full-resolution
/// pixel units. The vertical component does not exist by construction.
#[derive(Debug, Clone)]
pub struct FlowMap {
    pub u: Grid<f32>,
    pub valid: Grid<bool>,
}

#[derive(Debug, Clone)]
pub struct FlowParams {
    /// Square window side in reduced-resolution pixels, odd.
    pub window: usize,
    /// Lucas-Kanade iterations per pixel.
    pub iters: usize,
    /// Minimum acceptable gradient energy over the window.
    pub grad_floor: f32,
    /// Maximum |u| in reduced-resolution pixels; larger estimates are
    /// marked invalid rather than chased.
    pub u_max: f32,
    /// Reduction factor between the full frames and the flow grid.
    pub factor: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            window: 7,
            iters: 5,
            grad_floor: 1e-4,
            u_max: 8.0,
            factor: 8,
        }
    }
}

/// Box-filter average over `factor` x `factor` blocks.
pub fn downsample(image: &Grid<f32>, factor: usize) -> Result<Grid<f32>> {
    if factor == 0 {
        return Err(Error::InvalidParam("downsample factor must be >= 1".into()));
    }
    if image.width() % factor != 0 || image.height() % factor != 0 {
        return Err(Error::InvalidParam(format!(
            "factor {factor} must divide {}x{}",
            image.width(),
            image.height()
        )));
    }
    if factor == 1 {
        return Ok(image.clone());
    }
    let (rw, rh) = (image.width() / factor, image.height() / factor);
    let norm = 1.0 / (factor * factor) as f32;
    let mut out = Grid::new(rw, rh, 0.0f32);
    for ry in 0..rh {
        for rx in 0..rw {
            let mut acc = 0.0f32;
            for y in ry * factor..(ry + 1) * factor {
                let row = image.row(y);
                for &v in &row[rx * factor..(rx + 1) * factor] {
                    acc += v;
                }
            }
            out.set(rx, ry, acc * norm);
        }
    }
    Ok(out)
}

/// Separable 5-tap binomial smoothing ([1,4,6,4,1]/16) with replicated
/// borders; the anti-alias filter of one pyramid level.
fn binomial5(image: &Grid<f32>) -> Grid<f32> {
    const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h) = (image.width(), image.height());
    let mut tmp = Grid::new(w, h, 0.0f32);
    for y in 0..h {
        let row = image.row(y);
        let out = tmp.row_mut(y);
        for x in 0..w {
            let mut acc = 0.0f32;
            for (k, coef) in K.iter().enumerate() {
                let sx = (x as isize + k as isize - 2).clamp(0, w as isize - 1) as usize;
                acc += coef * row[sx];
            }
            out[x] = acc;
        }
    }
    let mut out = Grid::new(w, h, 0.0f32);
    for y in 0..h {
        let dst = out.row_mut(y);
        for (k, coef) in K.iter().enumerate() {
            let sy = (y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
            let src = tmp.row(sy);
            for x in 0..w {
                dst[x] += coef * src[x];
            }
        }
    }
    out
}

/// Anti-aliased reduction for flow computation: cascaded blur + 2x
/// decimation (classic pyramid levels), with a final box stage for any
/// odd remainder of the factor. A bare `factor`-wide box keeps too much
/// above-Nyquist dot energy, which decorrelates the two reduced frames
/// and drags the LK estimate toward zero.
fn reduce_for_flow(image: &Grid<f32>, factor: usize) -> Result<Grid<f32>> {
    if factor == 0 {
        return Err(Error::InvalidParam("downsample factor must be >= 1".into()));
    }
    if image.width() % factor != 0 || image.height() % factor != 0 {
        return Err(Error::InvalidParam(format!(
            "factor {factor} must divide {}x{}",
            image.width(),
            image.height()
        )));
    }
    let mut current = image.clone();
    let mut remaining = factor;
    while remaining % 2 == 0 {
        current = downsample(&binomial5(&current), 2)?;
        remaining /= 2;
    }
    if remaining > 1 {
        current = downsample(&binomial5(&current), remaining)?;
    }
    // One more pass at the working scale: the warp resampling inside LK is
    // bilinear, whose fixed point drifts on near-Nyquist content.
    if factor > 1 {
        current = binomial5(&current);
    }
    Ok(current)
}

/// Linear interpolation inside one row, clamped to the row ends.
#[inline]
fn sample_row(row: &[f32], x: f32) -> f32 {
    let xc = x.clamp(0.0, (row.len() - 1) as f32);
    let x0 = xc.floor() as usize;
    let x1 = (x0 + 1).min(row.len() - 1);
    let f = xc - x0 as f32;
    row[x0] * (1.0 - f) + row[x1] * f
}

/// Computes backward pattern flow between two LCN-normalized frames:
/// `I_t(x) ~ I_prev(x - u)`. Both frames must share dimensions divisible
/// by `params.factor`.
pub fn compute_pattern_flow(
    i_t: &Grid<f32>,
    i_prev: &Grid<f32>,
    params: &FlowParams,
) -> Result<FlowMap> {
    if !i_t.same_shape(i_prev) {
        return Err(Error::LengthMismatch(format!(
            "frame dimensions differ: {}x{} vs {}x{}",
            i_t.width(),
            i_t.height(),
            i_prev.width(),
            i_prev.height()
        )));
    }
    if params.window % 2 == 0 || params.window < 3 {
        return Err(Error::InvalidParam(format!(
            "flow window must be odd and >= 3, got {}",
            params.window
        )));
    }
    if params.iters == 0 {
        return Err(Error::InvalidParam("flow iters must be >= 1".into()));
    }

    let cur = reduce_for_flow(i_t, params.factor)?;
    let prev = reduce_for_flow(i_prev, params.factor)?;
    let (rw, rh) = (cur.width(), cur.height());
    let hw = params.window / 2;
    let margin = hw + 1; // extra column for the central difference

    let mut u_grid = Grid::new(rw, rh, 0.0f32);
    let mut valid = Grid::new(rw, rh, false);

    let mut rows: Vec<(usize, &mut [f32], &mut [bool])> = u_grid
        .rows_mut()
        .zip(valid.rows_mut())
        .enumerate()
        .map(|(y, (ur, vr))| (y, ur, vr))
        .collect();

    rows.par_iter_mut().for_each(|(y, ur, vr)| {
        let y = *y;
        if y < hw || y + hw >= rh {
            return;
        }
        let win = 2 * hw + 1;
        let span = 2 * margin + 1;
        let mut warped = vec![0.0f32; span * win];
        for x in margin..rw.saturating_sub(margin) {
            match solve_pixel(&cur, &prev, x, y, hw, margin, span, params, &mut warped) {
                Some(u) => {
                    ur[x] = u * params.factor as f32;
                    vr[x] = true;
                }
                None => {
                    ur[x] = 0.0;
                    vr[x] = false;
                }
            }
        }
    });

    Ok(FlowMap { u: u_grid, valid })
}

/// One-pixel LK solve. Returns the converged `u` in reduced-resolution
/// pixels, or `None` when the pixel fails the gradient floor, the clamp,
/// the bounds check, or the residual test.
#[allow(clippy::too_many_arguments)]
fn solve_pixel(
    cur: &Grid<f32>,
    prev: &Grid<f32>,
    x: usize,
    y: usize,
    hw: usize,
    margin: usize,
    span: usize,
    params: &FlowParams,
    warped: &mut [f32],
) -> Option<f32> {
    let rw = cur.width();
    let mut u = 0.0f32;

    // Fill the warped window of the previous frame at offset `u`.
    let fill = |u: f32, warped: &mut [f32]| {
        for (j, chunk) in warped.chunks_mut(span).enumerate() {
            let row = prev.row(y - hw + j);
            for (i, w) in chunk.iter_mut().enumerate() {
                let xs = (x + i) as f32 - margin as f32 - u;
                *w = sample_row(row, xs);
            }
        }
    };

    let residual = |warped: &[f32]| -> f64 {
        let mut ssd = 0.0f64;
        for (j, chunk) in warped.chunks(span).enumerate() {
            let row = cur.row(y - hw + j);
            for i in 0..2 * hw + 1 {
                let d = (chunk[i + 1] - row[x - hw + i]) as f64;
                ssd += d * d;
            }
        }
        ssd
    };

    fill(0.0, warped);
    let ssd0 = residual(warped);

    for iter in 0..params.iters {
        if iter > 0 {
            fill(u, warped);
        }
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (j, chunk) in warped.chunks(span).enumerate() {
            let row = cur.row(y - hw + j);
            for i in 0..2 * hw + 1 {
                // Central difference on the average of both frames.
                let a_plus = 0.5 * (row[x - hw + i + 1] + chunk[i + 2]);
                let a_minus = 0.5 * (row[x + i - hw - 1] + chunk[i]);
                let ix = 0.5 * (a_plus - a_minus) as f64;
                let diff = (chunk[i + 1] - row[x - hw + i]) as f64;
                num += ix * diff;
                den += ix * ix;
            }
        }
        if den < params.grad_floor as f64 {
            return None;
        }
        u += (num / den) as f32;
        if u.abs() > params.u_max {
            return None;
        }
        // The next warp must stay inside the reduced frame.
        let lo = x as f32 - margin as f32 - u;
        let hi = x as f32 + margin as f32 - u;
        if lo < 0.0 || hi > (rw - 1) as f32 {
            return None;
        }
    }

    fill(u, warped);
    let ssd1 = residual(warped);
    if ssd1 > ssd0 + 1e-9 {
        return None;
    }
    Some(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::DisparityMap;
    use crate::geometry::RigModel;
    use crate::pattern::generate_pattern;
    use crate::preprocess::lcn;
    use crate::simulator::{render_frame, Motion, NoiseModel, Primitive, SceneSpec, Shape};

    #[test]
    fn downsample_factor_one_is_identity() {
        let g = Grid::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(downsample(&g, 1).unwrap().data(), g.data());
    }

    #[test]
    fn downsample_averages_blocks() {
        let g = Grid::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let d = downsample(&g, 2).unwrap();
        assert_eq!(d.width(), 1);
        assert_eq!(d.get(0, 0), 0.5);

        let c = Grid::new(8, 4, 0.7f32);
        let dc = downsample(&c, 4).unwrap();
        assert!(dc.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn downsample_rejects_non_dividing_factor() {
        let g = Grid::new(6, 6, 0.0f32);
        assert!(downsample(&g, 4).is_err());
    }

    fn rig() -> RigModel {
        RigModel::new(600.0, 0.218, 320, 240, 40.0, 200.0, 8).unwrap()
    }

    fn moving_plane_frames(rate: f64) -> (Grid<f32>, Grid<f32>, DisparityMap, DisparityMap) {
        let r = rig();
        let p = generate_pattern(1, 320, 32, 0.2, 1.5, 11).unwrap();
        let scene = SceneSpec {
            primitives: vec![Primitive {
                shape: Shape::Plane { half_extent: None },
                center: [0.0, 0.0, r.fb() / 100.0],
                albedo: 1.0,
                motion: Motion {
                    disparity_rate_px: Some(rate),
                    ..Motion::default()
                },
            }],
            background_depth_m: 2.0,
            n_frames: 2,
        };
        let noise = NoiseModel::noiseless();
        let (f0, g0) = render_frame(&scene, 0, &r, &p, &noise).unwrap();
        let (f1, g1) = render_frame(&scene, 1, &r, &p, &noise).unwrap();
        let l0 = lcn(&f0.intensity, 9, 1e-3).unwrap();
        let l1 = lcn(&f1.intensity, 9, 1e-3).unwrap();
        (l1, l0, g1, g0)
    }

    #[test]
    fn static_frames_give_zero_flow() {
        let (l1, _, _, _) = moving_plane_frames(0.0);
        let flow = compute_pattern_flow(&l1, &l1, &FlowParams::default()).unwrap();
        let mut n = 0usize;
        let mut sum = 0.0f64;
        for (u, v) in flow.u.data().iter().zip(flow.valid.data()) {
            if *v {
                n += 1;
                sum += u.abs() as f64;
            }
        }
        assert!(n > 100, "expected valid pixels, got {n}");
        let mean = sum / n as f64;
        assert!(mean < 0.05, "mean |u| = {mean}");
    }

    #[test]
    fn textureless_input_is_all_invalid() {
        let z = Grid::new(64, 48, 0.0f32);
        let flow = compute_pattern_flow(&z, &z, &FlowParams::default()).unwrap();
        assert!(flow.valid.data().iter().all(|&v| !v));
    }

    #[test]
    fn unit_disparity_rate_recovers_unit_flow() {
        // Oracle: the ground-truth disparity difference is exactly 1 px.
        let (l1, l0, _, _) = moving_plane_frames(1.0);
        let flow = compute_pattern_flow(&l1, &l0, &FlowParams::default()).unwrap();
        let mut n = 0usize;
        let mut sum = 0.0f64;
        for (u, v) in flow.u.data().iter().zip(flow.valid.data()) {
            if *v {
                n += 1;
                sum += *u as f64;
            }
        }
        let mean = sum / n as f64;
        assert!(n > 100);
        assert!((mean - 1.0).abs() < 0.3, "mean u = {mean}");
    }

    #[test]
    fn flow_sign_tracks_depth_change() {
        // Approaching surface: disparity grows, u > 0. Receding: u < 0.
        for (rate, positive) in [(1.0, true), (-1.0, false)] {
            let (l1, l0, _, _) = moving_plane_frames(rate);
            let flow = compute_pattern_flow(&l1, &l0, &FlowParams::default()).unwrap();
            let mut good = 0usize;
            let mut total = 0usize;
            for (u, v) in flow.u.data().iter().zip(flow.valid.data()) {
                if *v {
                    total += 1;
                    if (*u > 0.0) == positive && *u != 0.0 {
                        good += 1;
                    }
                }
            }
            assert!(total > 100);
            let frac = good as f64 / total as f64;
            assert!(frac > 0.95, "rate {rate}: sign fraction {frac}");
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let a = Grid::new(16, 16, 0.0f32);
        let b = Grid::new(16, 8, 0.0f32);
        assert!(compute_pattern_flow(&a, &b, &FlowParams::default()).is_err());
    }
}
