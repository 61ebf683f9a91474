//! The pseudo-random dot reference pattern.
//!
//! The projector emits one static tile of anti-aliased dots. Horizontal
//! patches inside a row are unique across the row (so a row-local search
//! identifies the pattern column unambiguously) and the tile repeats
//! vertically with a fixed period.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Pattern intensities are quantized to this many levels so the in-memory
/// tile, the uniqueness certificate and the on-disk PGM all agree exactly.
const QUANT_LEVELS: f32 = 255.0;

/// Default number of fresh seeds tried before generation gives up.
pub const DEFAULT_RESEED_ATTEMPTS: u32 = 64;

#[derive(Debug, Clone)]
pub struct Pattern {
    tile: Grid<f32>,
    period_rows: usize,
    dot_density: f64,
    dot_radius_px: f64,
    patch_width: usize,
    seed: u64,
}

/// Outcome of the row-uniqueness check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UniquenessReport {
    pub pass: bool,
    /// First `(row, x1, x2)` pair of identical windows, when any.
    pub first_collision: Option<(usize, usize, usize)>,
}

impl Pattern {
    /// Wraps an existing tile. `tile.height()` is the vertical period.
    pub fn from_tile(
        tile: Grid<f32>,
        patch_width: usize,
        dot_density: f64,
        dot_radius_px: f64,
        seed: u64,
    ) -> Result<Self> {
        if patch_width > tile.width() {
            return Err(Error::InvalidParam(format!(
                "patch_width {} exceeds tile width {}",
                patch_width,
                tile.width()
            )));
        }
        if tile.width() == 0 || tile.height() == 0 {
            return Err(Error::InvalidParam("pattern tile must be non-empty".into()));
        }
        Ok(Pattern {
            period_rows: tile.height(),
            tile,
            dot_density,
            dot_radius_px,
            patch_width,
            seed,
        })
    }

    pub fn width(&self) -> usize {
        self.tile.width()
    }

    pub fn period_rows(&self) -> usize {
        self.period_rows
    }

    pub fn patch_width(&self) -> usize {
        self.patch_width
    }

    pub fn dot_density(&self) -> f64 {
        self.dot_density
    }

    pub fn dot_radius_px(&self) -> f64 {
        self.dot_radius_px
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tile(&self) -> &Grid<f32> {
        &self.tile
    }

    /// Tile row index for an arbitrary image row (vertical periodicity).
    #[inline]
    pub fn wrap_row(&self, y: isize) -> usize {
        y.rem_euclid(self.period_rows as isize) as usize
    }

    /// Exact tile value at integer coordinates, clamped horizontally and
    /// wrapped vertically.
    #[inline]
    pub fn at(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.tile.width() as isize - 1) as usize;
        self.tile.get(xc, self.wrap_row(y))
    }
}

impl Pattern {
    /// Saves the tile as 8-bit PGM plus a plain-text sidecar (same stem,
    /// `.txt` extension) with the generation parameters.
    pub fn save(&self, pgm_path: &std::path::Path) -> Result<()> {
        crate::io::write_pgm8(pgm_path, &self.tile)?;
        let sidecar = pgm_path.with_extension("txt");
        let text = format!(
            "period_rows={}\npatch_width={}\nseed={}\ndot_density={}\ndot_radius_px={}\n",
            self.period_rows, self.patch_width, self.seed, self.dot_density, self.dot_radius_px
        );
        std::fs::write(&sidecar, text)
            .map_err(|e| Error::io(sidecar.display().to_string(), e))
    }

    /// Loads a tile PGM and its sidecar header.
    pub fn load(pgm_path: &std::path::Path) -> Result<Self> {
        let tile = crate::io::read_pgm(pgm_path)?;
        let sidecar = pgm_path.with_extension("txt");
        let text = std::fs::read_to_string(&sidecar)
            .map_err(|e| Error::io(sidecar.display().to_string(), e))?;
        let p = sidecar.display().to_string();
        let mut period_rows = None;
        let mut patch_width = None;
        let mut seed = 0u64;
        let mut dot_density = 0.0f64;
        let mut dot_radius_px = 1.0f64;
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else {
                continue;
            };
            match k.trim() {
                "period_rows" => period_rows = v.trim().parse().ok(),
                "patch_width" => patch_width = v.trim().parse().ok(),
                "seed" => seed = v.trim().parse().map_err(|_| Error::format(&p, "bad seed"))?,
                "dot_density" => {
                    dot_density = v.trim().parse().map_err(|_| Error::format(&p, "bad dot_density"))?
                }
                "dot_radius_px" => {
                    dot_radius_px =
                        v.trim().parse().map_err(|_| Error::format(&p, "bad dot_radius_px"))?
                }
                _ => {}
            }
        }
        let period_rows: usize =
            period_rows.ok_or_else(|| Error::format(&p, "missing period_rows"))?;
        let patch_width: usize =
            patch_width.ok_or_else(|| Error::format(&p, "missing patch_width"))?;
        if period_rows != tile.height() {
            return Err(Error::format(
                &p,
                format!(
                    "period_rows {} does not match tile height {}",
                    period_rows,
                    tile.height()
                ),
            ));
        }
        Pattern::from_tile(tile, patch_width, dot_density, dot_radius_px, seed)
    }
}

/// Bilinear sample of the pattern at a continuous location. Coordinates
/// clamp horizontally (the tile edge is the projector frustum edge) and
/// wrap vertically with the tile period.
pub fn sample_pattern(p: &Pattern, x_p: f32, y: f32) -> f32 {
    let w = p.tile.width();
    let period = p.period_rows as f64;
    let xc = x_p.clamp(0.0, (w - 1) as f32);
    // Wrap in f64 so the fractional row survives large y unharmed.
    let yw = (y as f64).rem_euclid(period);
    let x0 = xc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let fx = xc - x0 as f32;
    let y0 = yw.floor() as usize % p.period_rows;
    let y1 = (y0 + 1) % p.period_rows;
    let fy = (yw - yw.floor()) as f32;
    let top = p.tile.get(x0, y0) * (1.0 - fx) + p.tile.get(x1, y0) * fx;
    let bot = p.tile.get(x0, y1) * (1.0 - fx) + p.tile.get(x1, y1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Checks that all horizontal windows of length `patch_width` within each
/// tile row are pairwise distinct after 8-bit quantization.
pub fn verify_row_uniqueness(p: &Pattern) -> UniquenessReport {
    let w = p.tile.width();
    let pw = p.patch_width;
    for row in 0..p.period_rows {
        let quantized: Vec<u8> = p
            .tile
            .row(row)
            .iter()
            .map(|&v| (v * QUANT_LEVELS).round().clamp(0.0, 255.0) as u8)
            .collect();
        let mut seen: HashMap<&[u8], usize> = HashMap::with_capacity(w);
        for x in 0..=w - pw {
            let window = &quantized[x..x + pw];
            if let Some(&x1) = seen.get(window) {
                return UniquenessReport {
                    pass: false,
                    first_collision: Some((row, x1, x)),
                };
            }
            seen.insert(window, x);
        }
    }
    UniquenessReport {
        pass: true,
        first_collision: None,
    }
}

/// All rows that contain at least one colliding window pair.
fn colliding_rows(p: &Pattern) -> Vec<usize> {
    let w = p.tile.width();
    let pw = p.patch_width;
    let mut rows = Vec::new();
    for row in 0..p.period_rows {
        let quantized: Vec<u8> = p
            .tile
            .row(row)
            .iter()
            .map(|&v| (v * QUANT_LEVELS).round().clamp(0.0, 255.0) as u8)
            .collect();
        let mut seen: HashMap<&[u8], usize> = HashMap::with_capacity(w);
        let mut hit = false;
        for x in 0..=w - pw {
            let window = &quantized[x..x + pw];
            if seen.contains_key(window) {
                hit = true;
                break;
            }
            seen.insert(window, x);
        }
        if hit {
            rows.push(row);
        }
    }
    rows
}

/// Low-amplitude speckle floor rendered beneath the dots. Bare dots leave
/// long all-zero stretches whose windows would collide trivially; the
/// speckle keeps every window distinguishable, the way projector speckle
/// does on real emitters, and gives local matching features everywhere.
const SPECKLE_AMPLITUDE: f32 = 0.12;

/// Generates a seeded dot pattern whose uniqueness certificate passes.
///
/// Dots are anti-aliased discs dropped at uniformly random sub-pixel
/// centers over a weak speckle floor; the dot count is chosen so the lit
/// area fraction approximates `dot_density`. If a draw violates row
/// uniqueness, up to [`DEFAULT_RESEED_ATTEMPTS`] further seeds derived
/// from `seed` are tried, keeping the whole procedure a pure function of
/// its arguments.
pub fn generate_pattern(
    seed: u64,
    width: usize,
    period_rows: usize,
    dot_density: f64,
    dot_radius_px: f64,
    patch_width: usize,
) -> Result<Pattern> {
    generate_pattern_with_attempts(
        seed,
        width,
        period_rows,
        dot_density,
        dot_radius_px,
        patch_width,
        DEFAULT_RESEED_ATTEMPTS,
    )
}

pub fn generate_pattern_with_attempts(
    seed: u64,
    width: usize,
    period_rows: usize,
    dot_density: f64,
    dot_radius_px: f64,
    patch_width: usize,
    max_attempts: u32,
) -> Result<Pattern> {
    if !(0.0..0.6).contains(&dot_density) {
        return Err(Error::InvalidParam(format!(
            "dot_density must lie in [0, 0.6), got {dot_density}"
        )));
    }
    if patch_width < 5 {
        return Err(Error::InvalidParam(format!(
            "patch_width must be >= 5, got {patch_width}"
        )));
    }
    if patch_width > width {
        return Err(Error::InvalidParam(format!(
            "patch_width {patch_width} exceeds pattern width {width}"
        )));
    }
    if !(dot_radius_px > 0.0) {
        return Err(Error::InvalidParam(format!(
            "dot_radius_px must be > 0, got {dot_radius_px}"
        )));
    }
    if max_attempts == 0 {
        return Err(Error::InvalidParam("max_attempts must be >= 1".into()));
    }

    let dot_area = PI * dot_radius_px * dot_radius_px;
    let n_dots = (dot_density * (width * period_rows) as f64 / dot_area).round() as usize;

    let mut last_rows = Vec::new();
    for attempt in 0..max_attempts {
        // Attempt k reseeds deterministically from the caller's seed.
        let attempt_seed = seed.wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let tile = render_tile(attempt_seed, width, period_rows, n_dots, dot_radius_px);
        let candidate = Pattern {
            tile,
            period_rows,
            dot_density,
            dot_radius_px,
            patch_width,
            seed,
        };
        let report = verify_row_uniqueness(&candidate);
        if report.pass {
            return Ok(candidate);
        }
        if attempt + 1 == max_attempts {
            last_rows = colliding_rows(&candidate);
        }
    }
    Err(Error::PatternGeneration {
        attempts: max_attempts,
        rows: last_rows,
    })
}

fn render_tile(
    seed: u64,
    width: usize,
    period_rows: usize,
    n_dots: usize,
    radius: f64,
) -> Grid<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tile = Grid::new(width, period_rows, 0.0f32);
    if n_dots > 0 {
        for v in tile.data_mut() {
            *v = rng.gen_range(0.0..SPECKLE_AMPLITUDE);
        }
    }
    let reach = radius.ceil() as isize + 1;
    for _ in 0..n_dots {
        let cx = rng.gen_range(0.0..width as f64);
        let cy = rng.gen_range(0.0..period_rows as f64);
        let x0 = cx.floor() as isize - reach;
        let y0 = cy.floor() as isize - reach;
        for iy in y0..=y0 + 2 * reach {
            // Vertical wrap keeps the tile seamless across the period.
            let row = iy.rem_euclid(period_rows as isize) as usize;
            for ix in x0..=x0 + 2 * reach {
                if ix < 0 || ix >= width as isize {
                    continue;
                }
                let dx = ix as f64 + 0.5 - cx;
                let dy = iy as f64 + 0.5 - cy;
                let dist = (dx * dx + dy * dy).sqrt();
                let coverage = (radius - dist + 0.5).clamp(0.0, 1.0) as f32;
                if coverage > 0.0 {
                    let x = ix as usize;
                    let v = tile.get(x, row).max(coverage);
                    tile.set(x, row, v);
                }
            }
        }
    }
    // Snap to the 8-bit lattice shared with the PGM form.
    for v in tile.data_mut() {
        *v = (*v * QUANT_LEVELS).round() / QUANT_LEVELS;
    }
    tile
}
