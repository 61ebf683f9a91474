//! The incremental disparity engine.
//!
//! Per frame: warp the previous disparity and confidence forward by the
//! pattern flow (the flow value is both the gather offset and the additive
//! disparity change), then refine the residual with a local ZNCC search
//! against the reference pattern. Because every refinement matches the
//! global reference pattern rather than the previous frame, errors do not
//! accumulate over the sequence. Frame 0 is seeded by a coarse full-range
//! search at reduced resolution.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{compute_pattern_flow, FlowMap, FlowParams};
use crate::geometry::RigModel;
use crate::grid::Grid;
use crate::io::{self, SequenceManifest};
use crate::pattern::Pattern;
use crate::preprocess::{lcn, LCN_EPS, LCN_WINDOW};

/// Confidence decay applied when history is carried to the next frame.
pub const CONFIDENCE_DECAY: f32 = 0.95;

/// Per-pixel disparity with validity and confidence channels. Confidence
/// is the classical stand-in for a recurrent hidden state: it weights how
/// strongly the warped prior pulls on the refined estimate.
#[derive(Debug, Clone)]
pub struct DisparityMap {
    pub d: Grid<f32>,
    pub valid: Grid<bool>,
    pub confidence: Grid<f32>,
}

impl DisparityMap {
    pub fn new_invalid(width: usize, height: usize) -> Self {
        DisparityMap {
            d: Grid::new(width, height, 0.0),
            valid: Grid::new(width, height, false),
            confidence: Grid::new(width, height, 0.0),
        }
    }

    pub fn width(&self) -> usize {
        self.d.width()
    }

    pub fn height(&self) -> usize {
        self.d.height()
    }
}

/// Residual-search parameters for [`refine`] and [`initialize`].
#[derive(Debug, Clone)]
pub struct RefineParams {
    /// ZNCC patch side, odd, >= 5.
    pub patch: usize,
    /// Residual search range +-r (px) around the warped disparity.
    pub search_radius_px: f32,
    /// Candidate spacing for the full-range initialization search; snapped
    /// to an integer >= 1 px.
    pub init_step_px: f32,
    /// Minimum peak ZNCC score for a pixel to stay valid.
    pub zncc_floor: f32,
    /// Peak-to-second-peak ratio above which a match counts as unambiguous.
    pub ratio_floor: f32,
    /// Weight of the warped prior against the fresh measurement in the
    /// confidence-weighted blend.
    pub fuse_weight: f32,
    /// Attempt a full-range search at pixels with no valid prior.
    pub fill_holes: bool,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams {
            patch: 9,
            search_radius_px: 6.0,
            init_step_px: 2.0,
            zncc_floor: 0.3,
            ratio_floor: 1.1,
            fuse_weight: 0.1,
            fill_holes: false,
        }
    }
}

impl RefineParams {
    fn validate(&self, rig: &RigModel) -> Result<()> {
        if self.patch < 5 || self.patch % 2 == 0 {
            return Err(Error::InvalidParam(format!(
                "patch must be odd and >= 5, got {}",
                self.patch
            )));
        }
        if self.patch >= rig.height || self.patch >= rig.width {
            return Err(Error::InvalidParam("patch larger than the image".into()));
        }
        if !(self.search_radius_px > 0.0) {
            return Err(Error::InvalidParam("search_radius_px must be > 0".into()));
        }
        if !(self.init_step_px > 0.0) {
            return Err(Error::InvalidParam("init_step_px must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.zncc_floor) || self.zncc_floor <= 0.0 {
            return Err(Error::InvalidParam("zncc_floor must lie in (0,1)".into()));
        }
        if !(self.ratio_floor > 1.0) {
            return Err(Error::InvalidParam("ratio_floor must be > 1".into()));
        }
        if !(0.0..=1.0).contains(&self.fuse_weight) {
            return Err(Error::InvalidParam("fuse_weight must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Ablation switches mirroring the temporal components: `NoWarp` passes
/// the previous maps through unwarped, `NoConfidence` additionally zeroes
/// the carried confidence so only the raw previous disparity survives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Full,
    NoWarp,
    NoConfidence,
}

impl std::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_warp" => Ok(Ablation::NoWarp),
            "no_confidence" => Ok(Ablation::NoConfidence),
            other => Err(format!(
                "unknown ablation {other:?} (expected full, no_warp or no_confidence)"
            )),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoWarp => "no_warp",
            Ablation::NoConfidence => "no_confidence",
        })
    }
}

/// Wall-clock stage timings for one processed frame, milliseconds.
#[derive(Debug, Clone)]
pub struct FrameTiming {
    pub frame: usize,
    pub ms_flow: f64,
    pub ms_warp: f64,
    pub ms_refine: f64,
    pub ms_total: f64,
}

impl FrameTiming {
    pub fn csv_header() -> &'static str {
        "frame_index,ms_flow,ms_warp,ms_refine,ms_total"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.3},{:.3},{:.3},{:.3}",
            self.frame, self.ms_flow, self.ms_warp, self.ms_refine, self.ms_total
        )
    }
}

/// Bilinear sample of `values` at `(x, y)` requiring every neighbor that
/// carries weight to be valid. Coordinates clamp to the grid.
fn sample_valid(values: &Grid<f32>, valid: &Grid<bool>, x: f32, y: f32) -> Option<f32> {
    if !x.is_finite() || !y.is_finite() {
        return None;
    }
    let (w, h) = (values.width(), values.height());
    let xc = x.clamp(0.0, (w - 1) as f32);
    let yc = y.clamp(0.0, (h - 1) as f32);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f32;
    let fy = yc - y0 as f32;
    let corners = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ];
    let mut acc = 0.0f32;
    for (cx, cy, wgt) in corners {
        if wgt > 1e-6 {
            if !valid.get(cx, cy) {
                return None;
            }
            acc += values.get(cx, cy) * wgt;
        }
    }
    Some(acc)
}

/// Warps the previous disparity and confidence into the current frame.
///
/// For each full-resolution pixel `x` the flow `u` (bilinearly upsampled
/// from the reduced grid) names where that pattern ray sat in the previous
/// frame; the gathered disparity is shifted by the same `u` because
/// pattern flow *is* the disparity change. Confidence is gathered at the
/// same location and decayed.
pub fn warp_history(prev: &DisparityMap, flow: &FlowMap, rig: &RigModel) -> Result<DisparityMap> {
    let (w, h) = (rig.width, rig.height);
    let factor = rig.downsample_factor;
    if prev.width() != w || prev.height() != h {
        return Err(Error::LengthMismatch(format!(
            "prior is {}x{}, rig expects {w}x{h}",
            prev.width(),
            prev.height()
        )));
    }
    if flow.u.width() != w / factor || flow.u.height() != h / factor {
        return Err(Error::LengthMismatch(format!(
            "flow is {}x{}, expected {}x{} (factor {factor})",
            flow.u.width(),
            flow.u.height(),
            w / factor,
            h / factor
        )));
    }

    let mut out = DisparityMap::new_invalid(w, h);
    let offset = 0.5 * (factor as f32 - 1.0);
    let inv_factor = 1.0 / factor as f32;

    let mut rows: Vec<(usize, &mut [f32], &mut [bool], &mut [f32])> = out
        .d
        .rows_mut()
        .zip(out.valid.rows_mut())
        .zip(out.confidence.rows_mut())
        .enumerate()
        .map(|(y, ((dr, vr), cr))| (y, dr, vr, cr))
        .collect();

    rows.par_iter_mut().for_each(|(y, dr, vr, cr)| {
        let yf = *y as f32;
        let yr = (yf - offset) * inv_factor;
        for x in 0..w {
            let xr = (x as f32 - offset) * inv_factor;
            let Some(u) = sample_valid(&flow.u, &flow.valid, xr, yr) else {
                continue;
            };
            let src_x = x as f32 - u;
            if src_x < 0.0 || src_x > (w - 1) as f32 {
                continue;
            }
            let Some(d_src) = sample_valid(&prev.d, &prev.valid, src_x, yf) else {
                continue;
            };
            let Some(c_src) = sample_valid(&prev.confidence, &prev.valid, src_x, yf) else {
                continue;
            };
            let d_new = d_src + u;
            if !rig.disparity_in_range(d_new as f64) {
                continue;
            }
            dr[x] = d_new;
            cr[x] = CONFIDENCE_DECAY * c_src;
            vr[x] = true;
        }
    });

    Ok(out)
}

// ---------------------------------------------------------------------------
// ZNCC scoring machinery shared by refine and initialize.
// ---------------------------------------------------------------------------

/// Patch mean and deviation norm (sqrt of centered energy) per pixel,
/// computed with replicated borders.
fn patch_stats(image: &Grid<f32>, patch: usize) -> (Grid<f32>, Grid<f32>) {
    let (w, h) = (image.width(), image.height());
    let pad = patch / 2;
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let stride = pw + 1;
    let mut sum = vec![0.0f64; (pw + 1) * (ph + 1)];
    let mut sumsq = vec![0.0f64; (pw + 1) * (ph + 1)];
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
    let n = (patch * patch) as f64;
    let mut mu = Grid::new(w, h, 0.0f32);
    let mut s = Grid::new(w, h, 0.0f32);
    for y in 0..h {
        for x in 0..w {
            let (x1, y1) = (x + patch, y + patch);
            let box_sum = sum[y1 * stride + x1] - sum[y * stride + x1] - sum[y1 * stride + x]
                + sum[y * stride + x];
            let box_sq = sumsq[y1 * stride + x1] - sumsq[y * stride + x1]
                - sumsq[y1 * stride + x]
                + sumsq[y * stride + x];
            let m = box_sum / n;
            let e = (box_sq - n * m * m).max(0.0);
            mu.set(x, y, m as f32);
            s.set(x, y, e.sqrt() as f32);
        }
    }
    (mu, s)
}

/// Contrast-normalizes the pattern tile the same way frames are, with the
/// vertical wrap respected: the tile is stacked three periods tall so the
/// window statistics at the seam see the true periodic neighborhood.
fn lcn_tile_wrapped(tile: &Grid<f32>) -> Grid<f32> {
    let (w, period) = (tile.width(), tile.height());
    let mut tall = Grid::new(w, period * 3, 0.0f32);
    for rep in 0..3 {
        for y in 0..period {
            let src = tile.row(y);
            tall.row_mut(rep * period + y).copy_from_slice(src);
        }
    }
    let normalized = lcn(&tall, LCN_WINDOW, LCN_EPS).expect("window/eps constants are valid");
    let mut out = Grid::new(w, period, 0.0f32);
    for y in 0..period {
        out.row_mut(y).copy_from_slice(normalized.row(period + y));
    }
    out
}

/// Frame-independent matching tables for one (pattern, patch, image
/// height) combination: the contrast-normalized tile, per-row-class patch
/// statistics, contiguous pattern patches for the hot correlation loop,
/// and adjacent-patch products for the O(1) half-lag subpixel score.
///
/// The tile is held in contrast-normalized form so both ZNCC operands
/// live in the same domain; at the true disparity the patches then agree
/// up to the per-patch affine freedom ZNCC removes.
pub(crate) struct PatchTable {
    tile: Grid<f32>,
    patch: usize,
    hp: usize,
    n: f32,
    period: usize,
    img_h: usize,
    width: usize,
    /// Tile row indices per row class, `patch` entries each.
    class_rows: Vec<Vec<usize>>,
    /// Pattern patch mean / deviation norm per (class, anchor column).
    class_mu: Vec<Vec<f32>>,
    class_s: Vec<Vec<f32>>,
    /// `sum(g[xp] .* g[xp+1])` per (class, left anchor column).
    class_adj: Vec<Vec<f32>>,
    /// Flattened `patch*patch` pattern patches per (class, anchor column),
    /// filled for interior anchors only.
    patches: Vec<f32>,
}

impl PatchTable {
    pub(crate) fn build(pattern: &Pattern, patch: usize, img_h: usize) -> Self {
        let tile = lcn_tile_wrapped(pattern.tile());
        let period = pattern.period_rows();
        let hp = patch / 2;
        let w = tile.width();
        let n_classes = period + 2 * hp;
        let n_usize = patch * patch;
        let n = n_usize as f64;

        let mut class_rows = Vec::with_capacity(n_classes);
        for class in 0..n_classes {
            let rows: Vec<usize> = (0..patch)
                .map(|j| {
                    let off = j as isize - hp as isize;
                    match class_rep(class, period, hp, img_h) {
                        // Border class: clamp at the image edge, then wrap.
                        Some(y) => {
                            let clamped = (y as isize + off).clamp(0, img_h as isize - 1);
                            clamped.rem_euclid(period as isize) as usize
                        }
                        // Interior class: clamping is a no-op, wrap only.
                        None => (class as isize + off).rem_euclid(period as isize) as usize,
                    }
                })
                .collect();
            class_rows.push(rows);
        }

        // Column profiles per class, then clamped sliding sums per anchor.
        let mut class_mu = Vec::with_capacity(n_classes);
        let mut class_s = Vec::with_capacity(n_classes);
        let mut class_adj = Vec::with_capacity(n_classes);
        let mut patches = vec![0.0f32; n_classes * w * n_usize];
        for (class, rows) in class_rows.iter().enumerate() {
            let mut colsum = vec![0.0f64; w];
            let mut colsq = vec![0.0f64; w];
            let mut colprod = vec![0.0f64; w.saturating_sub(1)];
            for &r in rows {
                let trow = tile.row(r);
                for (c, &v) in trow.iter().enumerate() {
                    let v = v as f64;
                    colsum[c] += v;
                    colsq[c] += v * v;
                    if c + 1 < w {
                        colprod[c] += v * trow[c + 1] as f64;
                    }
                }
            }
            let mut psum = vec![0.0f64; w + 1];
            let mut psq = vec![0.0f64; w + 1];
            let mut pprod = vec![0.0f64; w];
            for c in 0..w {
                psum[c + 1] = psum[c] + colsum[c];
                psq[c + 1] = psq[c] + colsq[c];
                if c + 1 < w {
                    pprod[c + 1] = pprod[c] + colprod[c];
                }
            }
            let mut mus = Vec::with_capacity(w);
            let mut ss = Vec::with_capacity(w);
            let mut adjs = Vec::with_capacity(w.saturating_sub(1));
            for xp in 0..w as isize {
                let lo = xp - hp as isize;
                let hi = xp + hp as isize;
                let left_clip = (-lo).max(0) as f64;
                let right_clip = (hi - (w as isize - 1)).max(0) as f64;
                let lo_c = lo.max(0) as usize;
                let hi_c = hi.min(w as isize - 1) as usize;
                let mid_sum = psum[hi_c + 1] - psum[lo_c];
                let mid_sq = psq[hi_c + 1] - psq[lo_c];
                let total = mid_sum + left_clip * colsum[0] + right_clip * colsum[w - 1];
                let total_sq = mid_sq + left_clip * colsq[0] + right_clip * colsq[w - 1];
                let m = total / n;
                let e = (total_sq - n * m * m).max(0.0);
                mus.push(m as f32);
                ss.push(e.sqrt() as f32);
                // Adjacent-patch product, interior anchors only.
                if xp >= hp as isize && (xp + 1 + hp as isize) < w as isize {
                    let a = (xp - hp as isize) as usize;
                    adjs.push((pprod[a + patch] - pprod[a]) as f32);
                } else if (xp as usize) + 1 < w {
                    adjs.push(f32::NAN);
                }
            }
            // Contiguous interior patches for the hot loop.
            for xp in hp..w - hp {
                let base = (class * w + xp) * n_usize;
                for (j, &r) in rows.iter().enumerate() {
                    let src = &tile.row(r)[xp - hp..xp - hp + patch];
                    patches[base + j * patch..base + (j + 1) * patch].copy_from_slice(src);
                }
            }
            class_mu.push(mus);
            class_s.push(ss);
            class_adj.push(adjs);
        }

        PatchTable {
            tile,
            patch,
            hp,
            n: n_usize as f32,
            period,
            img_h,
            width: w,
            class_rows,
            class_mu,
            class_s,
            class_adj,
            patches,
        }
    }

    #[inline]
    fn class_of(&self, y: usize) -> usize {
        if y < self.hp {
            self.period + y
        } else if y + self.hp >= self.img_h {
            self.period + self.hp + (y + self.hp - self.img_h + 1) - 1
        } else {
            y % self.period
        }
    }

    #[inline]
    fn patch_slice(&self, class: usize, xp: usize) -> &[f32] {
        let n = self.patch * self.patch;
        let base = (class * self.width + xp) * n;
        &self.patches[base..base + n]
    }

    #[inline]
    fn xp_interior(&self, xp: i64) -> bool {
        xp >= self.hp as i64 && xp + (self.hp as i64) < self.width as i64
    }
}

/// Integer-disparity candidate evaluation, keeping the raw terms needed
/// by the half-lag subpixel fit.
#[derive(Clone, Copy, Debug)]
struct CandScore {
    score: f32,
    cross: f32,
    mu_g: f32,
    s_g: f32,
}

const NO_SIGNAL: CandScore = CandScore {
    score: -1.0,
    cross: 0.0,
    mu_g: 0.0,
    s_g: 0.0,
};

/// Scoring state for one frame against a prepared [`PatchTable`].
struct ZnccScorer<'a> {
    frame: &'a Grid<f32>,
    mu_f: Grid<f32>,
    s_f: Grid<f32>,
    table: &'a PatchTable,
}

impl<'a> ZnccScorer<'a> {
    fn new(frame: &'a Grid<f32>, table: &'a PatchTable) -> Self {
        let (mu_f, s_f) = patch_stats(frame, table.patch);
        ZnccScorer {
            frame,
            mu_f,
            s_f,
            table,
        }
    }

    /// Copies the (border-replicated) frame patch around `(x, y)` into
    /// `buf` and returns its mean and deviation norm.
    fn fill_frame_patch(&self, x: usize, y: usize, buf: &mut [f32]) -> (f32, f32) {
        let (w, h) = (self.frame.width(), self.frame.height());
        let patch = self.table.patch;
        let hp = self.table.hp as isize;
        let interior = x as isize >= hp
            && (x as isize + hp) < w as isize
            && y as isize >= hp
            && (y as isize + hp) < h as isize;
        if interior {
            for j in 0..patch {
                let row = self.frame.row(y - self.table.hp + j);
                let src = &row[x - self.table.hp..x - self.table.hp + patch];
                buf[j * patch..(j + 1) * patch].copy_from_slice(src);
            }
        } else {
            for j in 0..patch {
                let sy = (y as isize + j as isize - hp).clamp(0, h as isize - 1) as usize;
                let row = self.frame.row(sy);
                for i in 0..patch {
                    let sx = (x as isize + i as isize - hp).clamp(0, w as isize - 1) as usize;
                    buf[j * patch + i] = row[sx];
                }
            }
        }
        (self.mu_f.get(x, y), self.s_f.get(x, y))
    }

    /// True when the frame patch at `x` needs no horizontal border clamp.
    #[inline]
    fn x_interior(&self, x: usize) -> bool {
        x >= self.table.hp && x + self.table.hp < self.frame.width()
    }

    /// ZNCC between the prepared frame patch and the pattern patch for
    /// integer disparity `d` at pixel column `x`.
    ///
    /// Pattern coordinates follow the frame coordinates sample by sample:
    /// where the frame patch replicates its border, the pattern patch
    /// replicates the matching column, keeping the two domains aligned.
    fn score(&self, buf: &[f32], mu_f: f32, s_f: f32, class: usize, x: usize, d: i64) -> CandScore {
        if s_f < 1e-6 {
            return NO_SIGNAL;
        }
        let t = self.table;
        let w = t.width as i64;
        let xp = x as i64 - d;
        let hp = t.hp as i64;

        if self.x_interior(x) {
            let xp_c = xp.clamp(0, w - 1) as usize;
            let mu_g = t.class_mu[class][xp_c];
            let s_g = t.class_s[class][xp_c];
            if s_g < 1e-6 {
                return NO_SIGNAL;
            }
            let cross = if t.xp_interior(xp) {
                dot(buf, t.patch_slice(class, xp as usize))
            } else {
                // Pattern clamped at the tile edge (projector frustum).
                let rows = &t.class_rows[class];
                let mut acc = 0.0f32;
                for (j, &r) in rows.iter().enumerate() {
                    let trow = t.tile.row(r);
                    let frow = &buf[j * t.patch..(j + 1) * t.patch];
                    for (i, &fv) in frow.iter().enumerate() {
                        let sx = (xp - hp + i as i64).clamp(0, w - 1) as usize;
                        acc += fv * trow[sx];
                    }
                }
                acc
            };
            let score = (cross - t.n * mu_f * mu_g) / (s_f * s_g);
            return CandScore {
                score,
                cross,
                mu_g,
                s_g,
            };
        }

        // Frame border: replicate the pattern exactly where the frame
        // replicates, and derive the pattern stats from the same samples.
        let img_w = self.frame.width() as i64;
        let rows = &t.class_rows[class];
        let mut cross = 0.0f32;
        let mut g_sum = 0.0f32;
        let mut g_sq = 0.0f32;
        for (j, &r) in rows.iter().enumerate() {
            let trow = t.tile.row(r);
            let frow = &buf[j * t.patch..(j + 1) * t.patch];
            for (i, &fv) in frow.iter().enumerate() {
                let fx = (x as i64 + i as i64 - hp).clamp(0, img_w - 1);
                let gx = (fx - d).clamp(0, w - 1) as usize;
                let gv = trow[gx];
                cross += fv * gv;
                g_sum += gv;
                g_sq += gv * gv;
            }
        }
        let mu_g = g_sum / t.n;
        let e_g = (g_sq - t.n * mu_g * mu_g).max(0.0);
        let s_g = e_g.sqrt();
        if s_g < 1e-6 {
            return NO_SIGNAL;
        }
        let score = (cross - t.n * mu_f * mu_g) / (s_f * s_g);
        CandScore {
            score,
            cross,
            mu_g,
            s_g,
        }
    }

    /// ZNCC exactly between two integer candidates: the half-lag pattern
    /// patch is the average of the two adjacent integer patches, so its
    /// score follows from their raw terms plus the adjacent product.
    fn score_half(&self, mu_f: f32, s_f: f32, a: &CandScore, b: &CandScore, adj: f32) -> f32 {
        if s_f < 1e-6 || a.s_g < 1e-6 || b.s_g < 1e-6 || !adj.is_finite() {
            return -1.0;
        }
        let n = self.table.n;
        let cross_h = 0.5 * (a.cross + b.cross);
        let mu_h = 0.5 * (a.mu_g + b.mu_g);
        let sq_a = a.s_g * a.s_g + n * a.mu_g * a.mu_g;
        let sq_b = b.s_g * b.s_g + n * b.mu_g * b.mu_g;
        let sq_h = 0.25 * (sq_a + 2.0 * adj + sq_b);
        let e_h = (sq_h - n * mu_h * mu_h).max(0.0);
        let s_h = e_h.sqrt();
        if s_h < 1e-6 {
            return -1.0;
        }
        (cross_h - n * mu_f * mu_h) / (s_f * s_h)
    }

    /// ZNCC at a fractional disparity, pattern columns linearly
    /// interpolated. Fallback for border pixels and stepped searches.
    fn score_frac(&self, buf: &[f32], mu_f: f32, s_f: f32, class: usize, x: usize, d: f32) -> f32 {
        if s_f < 1e-6 {
            return -1.0;
        }
        let t = self.table;
        let w = t.width;
        let img_w = self.frame.width() as isize;
        let hp = t.hp as isize;
        let rows = &t.class_rows[class];
        let mut cross = 0.0f32;
        let mut g_sum = 0.0f32;
        let mut g_sq = 0.0f32;
        for (j, &r) in rows.iter().enumerate() {
            let trow = t.tile.row(r);
            let frow = &buf[j * t.patch..(j + 1) * t.patch];
            for (i, &fv) in frow.iter().enumerate() {
                let fx = (x as isize + i as isize - hp).clamp(0, img_w - 1);
                let gx = (fx as f32 - d).clamp(0.0, (w - 1) as f32);
                let g0 = gx.floor() as usize;
                let g1 = (g0 + 1).min(w - 1);
                let frac = gx - g0 as f32;
                let gv = trow[g0] * (1.0 - frac) + trow[g1] * frac;
                cross += fv * gv;
                g_sum += gv;
                g_sq += gv * gv;
            }
        }
        let mu_g = g_sum / t.n;
        let e_g = (g_sq - t.n * mu_g * mu_g).max(0.0);
        let s_g = e_g.sqrt();
        if s_g < 1e-6 {
            return -1.0;
        }
        (cross - t.n * mu_f * mu_g) / (s_f * s_g)
    }
}

/// Representative image row for border classes; `None` for interior ones.
fn class_rep(class: usize, period: usize, hp: usize, img_h: usize) -> Option<usize> {
    if class < period {
        None
    } else if class < period + hp {
        Some(class - period)
    } else {
        Some(img_h - hp + (class - period - hp))
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let quads = a.len() / 4;
    let mut acc = [0.0f32; 4];
    for q in 0..quads {
        let i = q * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0f32;
    for i in quads * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Peak search over candidate scores with ties broken toward the prior.
/// Returns (index, score).
fn find_peak(cands: &[CandScore], d_values: impl Fn(usize) -> f32, d_prior: f32) -> (usize, f32) {
    let mut best = 0usize;
    let mut best_score = cands[0].score;
    for (k, c) in cands.iter().enumerate().skip(1) {
        if c.score > best_score {
            best = k;
            best_score = c.score;
        } else if c.score == best_score {
            let cur = (d_values(k) - d_prior).abs();
            let old = (d_values(best) - d_prior).abs();
            if cur < old {
                best = k;
            }
        }
    }
    (best, best_score)
}

/// Vertex of the parabola through (-h, s_m), (0, s0), (h, s_p), clamped
/// to the sampling interval.
fn parabola_vertex(s_m: f32, s0: f32, s_p: f32, h: f32) -> f32 {
    let denom = s_m - 2.0 * s0 + s_p;
    if denom.abs() < 1e-12 {
        return 0.0;
    }
    (0.5 * h * (s_m - s_p) / denom).clamp(-h, h)
}

/// Strongest competitor outside the peak's immediate lobe.
fn second_peak(cands: &[CandScore], k: usize) -> Option<f32> {
    let mut second: Option<f32> = None;
    for (i, c) in cands.iter().enumerate() {
        if i + 2 <= k || i >= k + 2 {
            second = Some(second.map_or(c.score, |cur| cur.max(c.score)));
        }
    }
    second
}

fn ambiguity_gate(peak: f32, second: Option<f32>, ratio_floor: f32) -> f32 {
    let Some(second) = second else {
        return 1.0;
    };
    if second <= 0.0 {
        return 1.0;
    }
    let ratio = peak / second.max(1e-6);
    ((ratio - 1.0) / (ratio_floor - 1.0)).clamp(0.0, 1.0)
}

/// One refinement pass: for every pixel with a valid prior, search integer
/// disparities within the residual radius, localize the ZNCC peak to
/// subpixel by a three-point parabola, and blend with the prior by
/// confidence weighting. Pixels without a valid prior are attempted with a
/// stepped full-range search only when `params.fill_holes` is set.
pub fn refine(
    frame_lcn: &Grid<f32>,
    pattern: &Pattern,
    prior: &DisparityMap,
    rig: &RigModel,
    params: &RefineParams,
) -> Result<DisparityMap> {
    params.validate(rig)?;
    let table = PatchTable::build(pattern, params.patch, rig.height);
    refine_with_table(frame_lcn, &table, prior, rig, params)
}

/// [`refine`] against a prebuilt table; the sequence driver reuses one
/// table across all frames.
pub(crate) fn refine_with_table(
    frame_lcn: &Grid<f32>,
    table: &PatchTable,
    prior: &DisparityMap,
    rig: &RigModel,
    params: &RefineParams,
) -> Result<DisparityMap> {
    if frame_lcn.width() != rig.width || frame_lcn.height() != rig.height {
        return Err(Error::LengthMismatch("frame does not match rig dimensions".into()));
    }
    if prior.width() != rig.width || prior.height() != rig.height {
        return Err(Error::LengthMismatch("prior does not match rig dimensions".into()));
    }

    let scorer = ZnccScorer::new(frame_lcn, table);
    let (w, h) = (rig.width, rig.height);
    let d_lo_all = rig.d_min.ceil() as i64;
    let d_hi_all = rig.d_max.floor() as i64;
    let hole_step = (params.init_step_px.round() as i64).max(1);

    let mut out = DisparityMap::new_invalid(w, h);
    let mut rows: Vec<(usize, &mut [f32], &mut [bool], &mut [f32])> = out
        .d
        .rows_mut()
        .zip(out.valid.rows_mut())
        .zip(out.confidence.rows_mut())
        .enumerate()
        .map(|(y, ((dr, vr), cr))| (y, dr, vr, cr))
        .collect();

    rows.par_iter_mut().for_each(|(y, dr, vr, cr)| {
        let y = *y;
        let class = table.class_of(y);
        let mut buf = vec![0.0f32; params.patch * params.patch];
        let mut cands: Vec<CandScore> = Vec::with_capacity(64);
        for x in 0..w {
            let has_prior = prior.valid.get(x, y);
            if !has_prior && !params.fill_holes {
                continue;
            }
            let (d_hat, c_hat, lo, hi, step) = if has_prior {
                let d_hat = prior.d.get(x, y);
                let lo = ((d_hat - params.search_radius_px).ceil() as i64).max(d_lo_all);
                let hi = ((d_hat + params.search_radius_px).floor() as i64).min(d_hi_all);
                (d_hat, prior.confidence.get(x, y), lo, hi, 1i64)
            } else {
                (0.0, 0.0, d_lo_all, d_hi_all, hole_step)
            };
            if lo > hi {
                continue;
            }

            let (mu_f, s_f) = scorer.fill_frame_patch(x, y, &mut buf);
            cands.clear();
            let mut d = lo;
            while d <= hi {
                cands.push(scorer.score(&buf, mu_f, s_f, class, x, d));
                d += step;
            }

            let (k, peak) = find_peak(&cands, |k| (lo + k as i64 * step) as f32, d_hat);
            if peak < params.zncc_floor {
                continue;
            }
            // Subpixel fit on half-lag scores: the narrower spacing keeps
            // the vertex bias from correlation asymmetry small.
            let d_peak_i = lo + k as i64 * step;
            let d_peak = d_peak_i as f32;
            let delta = if k == 0 || k + 1 >= cands.len() {
                0.0
            } else {
                let h = 0.5 * step as f32;
                let xa = x as i64 - d_peak_i;
                let fast = step == 1
                    && scorer.x_interior(x)
                    && table.xp_interior(xa - 1)
                    && table.xp_interior(xa + 1);
                let (s_m, s_p) = if fast {
                    // d_peak - 0.5 averages the patches of candidates k
                    // and k-1 (anchors xa, xa+1); +0.5 pairs k and k+1.
                    let adj_m = table.class_adj[class][xa as usize];
                    let adj_p = table.class_adj[class][(xa - 1) as usize];
                    (
                        scorer.score_half(mu_f, s_f, &cands[k], &cands[k - 1], adj_m),
                        scorer.score_half(mu_f, s_f, &cands[k + 1], &cands[k], adj_p),
                    )
                } else {
                    (
                        scorer.score_frac(&buf, mu_f, s_f, class, x, d_peak - h),
                        scorer.score_frac(&buf, mu_f, s_f, class, x, d_peak + h),
                    )
                };
                if s_m <= -1.0 || s_p <= -1.0 {
                    0.0
                } else {
                    parabola_vertex(s_m, peak, s_p, h)
                }
            };
            let d_star = (d_peak + delta).clamp(rig.d_min as f32, rig.d_max as f32);
            let gate = ambiguity_gate(peak, second_peak(&cands, k), params.ratio_floor);
            let c_meas = peak.clamp(0.0, 1.0) * gate;

            let prior_weight = if has_prior { params.fuse_weight * c_hat } else { 0.0 };
            let denom = c_meas + prior_weight;
            let fused = if denom > 1e-9 {
                (c_meas * d_star + prior_weight * d_hat) / denom
            } else {
                d_star
            };
            dr[x] = fused.clamp(rig.d_min as f32, rig.d_max as f32);
            cr[x] = c_meas;
            vr[x] = true;
        }
    });

    Ok(out)
}

/// Coarse full-range initialization: integer ZNCC search at one pixel per
/// reduced-resolution cell, no subpixel fit, nearest-neighbor upsampled to
/// full resolution. Confidence is the peak score.
pub fn initialize(
    frame_lcn: &Grid<f32>,
    pattern: &Pattern,
    rig: &RigModel,
    params: &RefineParams,
) -> Result<DisparityMap> {
    params.validate(rig)?;
    let table = PatchTable::build(pattern, params.patch, rig.height);
    initialize_with_table(frame_lcn, &table, rig, params)
}

pub(crate) fn initialize_with_table(
    frame_lcn: &Grid<f32>,
    table: &PatchTable,
    rig: &RigModel,
    params: &RefineParams,
) -> Result<DisparityMap> {
    if frame_lcn.width() != rig.width || frame_lcn.height() != rig.height {
        return Err(Error::LengthMismatch("frame does not match rig dimensions".into()));
    }
    let factor = rig.downsample_factor;
    let (rw, rh) = (rig.width / factor, rig.height / factor);
    let scorer = ZnccScorer::new(frame_lcn, table);
    let step = (params.init_step_px.round() as i64).max(1);
    let d_lo = rig.d_min.ceil() as i64;
    let d_hi = rig.d_max.floor() as i64;

    let mut cell_d = Grid::new(rw, rh, 0.0f32);
    let mut cell_v = Grid::new(rw, rh, false);
    let mut cell_c = Grid::new(rw, rh, 0.0f32);

    let mut rows: Vec<(usize, &mut [f32], &mut [bool], &mut [f32])> = cell_d
        .rows_mut()
        .zip(cell_v.rows_mut())
        .zip(cell_c.rows_mut())
        .enumerate()
        .map(|(ry, ((dr, vr), cr))| (ry, dr, vr, cr))
        .collect();

    rows.par_iter_mut().for_each(|(ry, dr, vr, cr)| {
        let y = (*ry * factor + factor / 2).min(rig.height - 1);
        let class = table.class_of(y);
        let mut buf = vec![0.0f32; params.patch * params.patch];
        let mut cands: Vec<CandScore> = Vec::with_capacity(((d_hi - d_lo) / step + 1) as usize);
        for rx in 0..rw {
            let x = (rx * factor + factor / 2).min(rig.width - 1);
            let (mu_f, s_f) = scorer.fill_frame_patch(x, y, &mut buf);
            cands.clear();
            let mut d = d_lo;
            while d <= d_hi {
                cands.push(scorer.score(&buf, mu_f, s_f, class, x, d));
                d += step;
            }
            let (k, peak) = find_peak(&cands, |k| (d_lo + k as i64 * step) as f32, 0.0);
            if peak < params.zncc_floor {
                continue;
            }
            dr[rx] = (d_lo + k as i64 * step) as f32;
            cr[rx] = peak.clamp(0.0, 1.0);
            vr[rx] = true;
        }
    });

    // Nearest-neighbor upsample: intentionally blocky, the next refine
    // pass sharpens it.
    let mut out = DisparityMap::new_invalid(rig.width, rig.height);
    for y in 0..rig.height {
        let ry = (y / factor).min(rh - 1);
        for x in 0..rig.width {
            let rx = (x / factor).min(rw - 1);
            if cell_v.get(rx, ry) {
                out.d.set(x, y, cell_d.get(rx, ry));
                out.confidence.set(x, y, cell_c.get(rx, ry));
                out.valid.set(x, y, true);
            }
        }
    }
    Ok(out)
}

/// Runs the incremental engine over a rendered sequence: frame 0 through
/// [`initialize`], every later frame through exactly one warp + refine
/// pass (subject to the ablation), returning all maps with per-frame
/// stage timings.
pub fn run_sequence(
    manifest: &SequenceManifest,
    rig: &RigModel,
    pattern: &Pattern,
    flow_params: &FlowParams,
    refine_params: &RefineParams,
    ablation: Ablation,
) -> Result<(Vec<DisparityMap>, Vec<FrameTiming>)> {
    if manifest.n_frames() == 0 {
        return Err(Error::InvalidParam("manifest lists no frames".into()));
    }
    let mut flow_params = flow_params.clone();
    flow_params.factor = rig.downsample_factor;
    let table = PatchTable::build(pattern, refine_params.patch, rig.height);

    let mut maps = Vec::with_capacity(manifest.n_frames());
    let mut timings = Vec::with_capacity(manifest.n_frames());
    let mut prev_lcn: Option<Grid<f32>> = None;

    for t in 0..manifest.n_frames() {
        let total_start = Instant::now();
        let frame = io::read_pgm(&manifest.frame_path(t))?;
        let frame_lcn = lcn(&frame, LCN_WINDOW, LCN_EPS)?;

        let mut timing = FrameTiming {
            frame: t,
            ms_flow: 0.0,
            ms_warp: 0.0,
            ms_refine: 0.0,
            ms_total: 0.0,
        };

        let map = if t == 0 {
            let start = Instant::now();
            let init = initialize_with_table(&frame_lcn, &table, rig, refine_params)?;
            timing.ms_refine = ms_since(start);
            init
        } else {
            let prev_map = maps.last().expect("t > 0");
            let prior = match ablation {
                Ablation::Full => {
                    let start = Instant::now();
                    let flow = compute_pattern_flow(
                        &frame_lcn,
                        prev_lcn.as_ref().expect("t > 0"),
                        &flow_params,
                    )?;
                    timing.ms_flow = ms_since(start);
                    let start = Instant::now();
                    let warped = warp_history(prev_map, &flow, rig)?;
                    timing.ms_warp = ms_since(start);
                    warped
                }
                Ablation::NoWarp => prev_map.clone(),
                Ablation::NoConfidence => {
                    let mut p = prev_map.clone();
                    for c in p.confidence.data_mut() {
                        *c = 0.0;
                    }
                    p
                }
            };
            let start = Instant::now();
            let refined = refine_with_table(&frame_lcn, &table, &prior, rig, refine_params)?;
            timing.ms_refine = ms_since(start);
            refined
        };

        timing.ms_total = ms_since(total_start);
        timings.push(timing);
        maps.push(map);
        prev_lcn = Some(frame_lcn);
    }

    Ok((maps, timings))
}

/// Writes per-frame outputs (disparity PFM, validity PGM, confidence PFM)
/// plus the timing CSV into `out_dir`.
pub fn write_run_outputs(
    out_dir: &Path,
    maps: &[DisparityMap],
    timings: &[FrameTiming],
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    for (t, map) in maps.iter().enumerate() {
        io::write_pfm(&out_dir.join(io::pred_disp_filename(t)), &map.d)?;
        io::write_pgm_mask(&out_dir.join(io::pred_valid_filename(t)), &map.valid)?;
        io::write_pfm(&out_dir.join(io::pred_conf_filename(t)), &map.confidence)?;
    }
    let mut csv = String::from(FrameTiming::csv_header());
    csv.push('\n');
    for t in timings {
        csv.push_str(&t.csv_row());
        csv.push('\n');
    }
    let path = out_dir.join("timing.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(path.display().to_string(), e))
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}
