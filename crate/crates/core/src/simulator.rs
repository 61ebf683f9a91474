//! Analytic scene renderer with exact per-pixel ground truth.
//!
//! Scenes are small sets of moving primitives (fronto-parallel planes,
//! tilted planes, spheres) in front of an infinite background plane. Depth
//! is evaluated per pixel ray in closed form, the projected dot pattern is
//! sampled at the corresponding pattern column, and a second intersection
//! test along the projector ray marks shadowed pixels invalid.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::DisparityMap;
use crate::geometry::RigModel;
use crate::grid::Grid;
use crate::io;
use crate::io::SequenceManifest;
use crate::pattern::{sample_pattern, Pattern};

/// One rendered intensity image.
#[derive(Debug, Clone)]
pub struct Frame {
    pub t: usize,
    pub intensity: Grid<f32>,
}

/// Sensor noise applied after the light model: additive Gaussian noise,
/// then clamping to [0,1] and quantization. `seed` keeps reruns
/// bit-identical; each frame draws from its own stream.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub gaussian_sigma: f64,
    pub ambient_level: f64,
    pub quantize_bits: u32,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            gaussian_sigma: 0.01,
            ambient_level: 0.05,
            quantize_bits: 8,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel {
            gaussian_sigma: 0.0,
            ambient_level: 0.0,
            quantize_bits: 8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gaussian_sigma < 0.0 {
            return Err(Error::InvalidParam("gaussian_sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.ambient_level) {
            return Err(Error::InvalidParam("ambient_level must lie in [0,1)".into()));
        }
        if !(1..=16).contains(&self.quantize_bits) {
            return Err(Error::InvalidParam("quantize_bits must lie in 1..=16".into()));
        }
        Ok(())
    }
}

/// Analytic surface shapes, positioned by the owning [`Primitive`].
#[derive(Debug, Clone)]
pub enum Shape {
    /// Fronto-parallel rectangle; `half_extent` is (hx, hy) in meters,
    /// `None` for an unbounded plane.
    Plane { half_extent: Option<[f64; 2]> },
    /// Plane with depth slopes (dZ/dX, dZ/dY) about its center.
    TiltedPlane {
        slope: [f64; 2],
        half_extent: Option<[f64; 2]>,
    },
    Sphere { radius: f64 },
}

/// Rigid motion track: linear translation per frame plus an optional
/// sinusoidal depth oscillation. When `disparity_rate_px` is set the depth
/// coordinate instead follows `d(t) = d(0) + rate * t` exactly, which
/// gives sequences whose ground-truth disparity changes at a constant
/// pixel rate.
#[derive(Debug, Clone, Default)]
pub struct Motion {
    pub velocity: [f64; 3],
    pub osc_amplitude_m: f64,
    pub osc_period_frames: f64,
    pub disparity_rate_px: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Primitive {
    pub shape: Shape,
    /// Reference point at frame 0, meters, camera coordinates.
    pub center: [f64; 3],
    pub albedo: f64,
    pub motion: Motion,
}

impl Primitive {
    pub fn center_at(&self, t: usize, fb: f64) -> [f64; 3] {
        let tf = t as f64;
        let m = &self.motion;
        let x = self.center[0] + m.velocity[0] * tf;
        let y = self.center[1] + m.velocity[1] * tf;
        let z = if let Some(rate) = m.disparity_rate_px {
            let d0 = fb / self.center[2];
            let d = d0 + rate * tf;
            if d > 0.0 {
                fb / d
            } else {
                f64::INFINITY
            }
        } else {
            let mut z = self.center[2] + m.velocity[2] * tf;
            if m.osc_amplitude_m != 0.0 && m.osc_period_frames > 0.0 {
                z += self.osc(tf);
            }
            z
        };
        [x, y, z]
    }

    fn osc(&self, tf: f64) -> f64 {
        let m = &self.motion;
        m.osc_amplitude_m * (2.0 * std::f64::consts::PI * tf / m.osc_period_frames).sin()
    }

    /// Nearest intersection parameter `t` of the ray `o + t*w`, or `None`.
    fn intersect(&self, o: [f64; 3], w: [f64; 3], center: [f64; 3]) -> Option<f64> {
        const EPS_T: f64 = 1e-9;
        match &self.shape {
            Shape::Plane { half_extent } => {
                if w[2].abs() < 1e-12 {
                    return None;
                }
                let t = (center[2] - o[2]) / w[2];
                if t <= EPS_T {
                    return None;
                }
                inside_rect(o, w, t, center, half_extent).then_some(t)
            }
            Shape::TiltedPlane { slope, half_extent } => {
                let [gx, gy] = *slope;
                // F(P) = (Pz - cz) - gx (Px - cx) - gy (Py - cy) = 0.
                let f0 = (o[2] - center[2]) - gx * (o[0] - center[0]) - gy * (o[1] - center[1]);
                let df = w[2] - gx * w[0] - gy * w[1];
                if df.abs() < 1e-12 {
                    return None;
                }
                let t = -f0 / df;
                if t <= EPS_T {
                    return None;
                }
                inside_rect(o, w, t, center, half_extent).then_some(t)
            }
            Shape::Sphere { radius } => {
                let q = [o[0] - center[0], o[1] - center[1], o[2] - center[2]];
                let a = dot(w, w);
                let b = 2.0 * dot(q, w);
                let c = dot(q, q) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t1 = (-b - s) / (2.0 * a);
                let t2 = (-b + s) / (2.0 * a);
                if t1 > EPS_T {
                    Some(t1)
                } else if t2 > EPS_T {
                    Some(t2)
                } else {
                    None
                }
            }
        }
    }

    fn kind_name(&self) -> &'static str {
        match self.shape {
            Shape::Plane { .. } => "plane",
            Shape::TiltedPlane { .. } => "tilted plane",
            Shape::Sphere { .. } => "sphere",
        }
    }
}

fn inside_rect(
    o: [f64; 3],
    w: [f64; 3],
    t: f64,
    center: [f64; 3],
    half_extent: &Option<[f64; 2]>,
) -> bool {
    match half_extent {
        None => true,
        Some([hx, hy]) => {
            let px = o[0] + t * w[0];
            let py = o[1] + t * w[1];
            (px - center[0]).abs() <= *hx && (py - center[1]).abs() <= *hy
        }
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// A dynamic scene: moving primitives over an infinite fronto-parallel
/// background plane.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub background_depth_m: f64,
    pub n_frames: usize,
}

impl SceneSpec {
    pub fn validate(&self, rig: &RigModel) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::InvalidParam("n_frames must be >= 1".into()));
        }
        if !(self.background_depth_m > 0.0) {
            return Err(Error::InvalidParam("background depth must be > 0".into()));
        }
        let d_bg = rig.fb() / self.background_depth_m;
        if !rig.disparity_in_range(d_bg) {
            return Err(Error::InvalidParam(format!(
                "background depth {} m maps to disparity {d_bg:.2} px outside [{}, {}]",
                self.background_depth_m, rig.d_min, rig.d_max
            )));
        }
        for (i, prim) in self.primitives.iter().enumerate() {
            if !(0.0..=1.0).contains(&prim.albedo) {
                return Err(Error::InvalidParam(format!(
                    "primitive[{i}] albedo {} outside [0,1]",
                    prim.albedo
                )));
            }
        }
        Ok(())
    }

    /// Nearest hit along the ray, returning `(t, primitive index)`.
    fn trace(&self, o: [f64; 3], w: [f64; 3], frame: usize, fb: f64) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, prim) in self.primitives.iter().enumerate() {
            let c = prim.center_at(frame, fb);
            if let Some(t) = prim.intersect(o, w, c) {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    /// True when some primitive blocks the open segment from `o` to `p`.
    fn segment_blocked(&self, o: [f64; 3], p: [f64; 3], frame: usize, fb: f64) -> bool {
        let w = [p[0] - o[0], p[1] - o[1], p[2] - o[2]];
        for prim in &self.primitives {
            let c = prim.center_at(frame, fb);
            if let Some(t) = prim.intersect(o, w, c) {
                if t < 1.0 - 1e-6 {
                    return true;
                }
            }
        }
        false
    }
}

fn pixel_ray(x: usize, y: usize, rig: &RigModel) -> [f64; 3] {
    let cx = 0.5 * (rig.width as f64 - 1.0);
    let cy = 0.5 * (rig.height as f64 - 1.0);
    [
        (x as f64 - cx) / rig.focal_px,
        (y as f64 - cy) / rig.focal_px,
        1.0,
    ]
}

/// Depth (m) of the nearest surface along the pixel ray, falling back to
/// the background plane.
pub fn depth_at(scene: &SceneSpec, x: usize, y: usize, t: usize, rig: &RigModel) -> f64 {
    let v = pixel_ray(x, y, rig);
    match scene.trace([0.0; 3], v, t, rig.fb()) {
        Some((tz, _)) => tz, // v_z = 1, so the ray parameter is the depth
        None => scene.background_depth_m,
    }
}

/// Renders one frame and its exact ground-truth disparity map.
///
/// Intensity model per pixel: `albedo * pattern(x - d, y) + ambient`, then
/// Gaussian noise, clamping to [0,1] and quantization. Pixels whose
/// pattern ray is blocked by a nearer surface, or that fall left of the
/// projected field (`x - d < 0`), receive ambient light only and are
/// marked invalid in the ground truth.
pub fn render_frame(
    scene: &SceneSpec,
    t: usize,
    rig: &RigModel,
    pattern: &Pattern,
    noise: &NoiseModel,
) -> Result<(Frame, DisparityMap)> {
    scene.validate(rig)?;
    noise.validate()?;
    let (w, h) = (rig.width, rig.height);
    let fb = rig.fb();
    let baseline = rig.baseline_m;
    let pattern_max_x = (pattern.width() - 1) as f64;

    let mut intensity = Grid::new(w, h, 0.0f32);
    let mut d_gt = Grid::new(w, h, 0.0f32);
    let mut valid = Grid::new(w, h, false);

    let mut rows: Vec<(usize, &mut [f32], &mut [f32], &mut [bool])> = intensity
        .rows_mut()
        .zip(d_gt.rows_mut())
        .zip(valid.rows_mut())
        .enumerate()
        .map(|(y, ((ir, dr), vr))| (y, ir, dr, vr))
        .collect();

    rows.par_iter_mut().try_for_each(|(y, ir, dr, vr)| {
        let y = *y;
        for x in 0..w {
            let v = pixel_ray(x, y, rig);
            let (z, hit) = match scene.trace([0.0; 3], v, t, fb) {
                Some((tz, i)) => (tz, Some(i)),
                None => (scene.background_depth_m, None),
            };
            let d = fb / z;
            if !rig.disparity_in_range(d) {
                let name = match hit {
                    Some(i) => format!("primitive[{i}] ({})", scene.primitives[i].kind_name()),
                    None => "background".to_string(),
                };
                return Err(Error::RenderOutOfRange {
                    frame: t,
                    primitive: name,
                    disparity: d,
                    d_min: rig.d_min,
                    d_max: rig.d_max,
                });
            }
            let albedo = hit.map_or(1.0, |i| scene.primitives[i].albedo);
            let x_p = x as f64 - d;
            let point = [v[0] * z, v[1] * z, z];
            let lit = x_p >= 0.0
                && x_p <= pattern_max_x
                && !scene.segment_blocked([baseline, 0.0, 0.0], point, t, fb);

            let value = if lit {
                albedo * sample_pattern(pattern, x_p as f32, y as f32) as f64
                    + noise.ambient_level
            } else {
                noise.ambient_level
            };
            ir[x] = value as f32;
            dr[x] = d as f32;
            vr[x] = lit;
        }
        Ok(())
    })?;

    // Noise and quantization run sequentially so output bytes are a pure
    // function of (scene, t, noise.seed).
    let levels = ((1u32 << noise.quantize_bits) - 1) as f32;
    if noise.gaussian_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        rng.set_stream(t as u64);
        let normal = Normal::new(0.0, noise.gaussian_sigma).expect("sigma checked");
        for v in intensity.data_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    for v in intensity.data_mut() {
        *v = (v.clamp(0.0, 1.0) * levels).round() / levels;
    }

    let mut confidence = Grid::new(w, h, 0.0f32);
    for (c, &ok) in confidence.data_mut().iter_mut().zip(valid.data()) {
        *c = if ok { 1.0 } else { 0.0 };
    }

    Ok((
        Frame { t, intensity },
        DisparityMap {
            d: d_gt,
            valid,
            confidence,
        },
    ))
}

/// Renders the whole sequence to `out_dir`: frames as PGM, ground-truth
/// disparity as PFM with a validity PGM, the pattern tile with its
/// sidecar, and the manifest tying them together.
pub fn gen_sequence(
    scene: &SceneSpec,
    rig: &RigModel,
    pattern: &Pattern,
    noise: &NoiseModel,
    out_dir: &Path,
) -> Result<SequenceManifest> {
    scene.validate(rig)?;
    noise.validate()?;
    let frames_dir = out_dir.join("frames");
    let gt_dir = out_dir.join("gt");
    for dir in [out_dir, &frames_dir, &gt_dir] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }

    pattern.save(&out_dir.join("pattern.pgm"))?;

    let mut frames = Vec::with_capacity(scene.n_frames);
    let mut gt_disp = Vec::with_capacity(scene.n_frames);
    let mut gt_valid = Vec::with_capacity(scene.n_frames);
    for t in 0..scene.n_frames {
        let (frame, gt) = render_frame(scene, t, rig, pattern, noise)?;
        let frame_rel = Path::new("frames").join(io::frame_filename(t));
        let disp_rel = Path::new("gt").join(io::gt_disp_filename(t));
        let valid_rel = Path::new("gt").join(io::gt_valid_filename(t));
        if noise.quantize_bits > 8 {
            io::write_pgm16(&out_dir.join(&frame_rel), &frame.intensity)?;
        } else {
            io::write_pgm8(&out_dir.join(&frame_rel), &frame.intensity)?;
        }
        io::write_pfm(&out_dir.join(&disp_rel), &gt.d)?;
        io::write_pgm_mask(&out_dir.join(&valid_rel), &gt.valid)?;
        frames.push(frame_rel);
        gt_disp.push(disp_rel);
        gt_valid.push(valid_rel);
    }

    let manifest = SequenceManifest {
        rig: rig.clone(),
        pattern: "pattern.pgm".into(),
        frames,
        gt_disp,
        gt_valid,
        root: out_dir.to_path_buf(),
    };
    manifest.write(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::generate_pattern;

    fn rig() -> RigModel {
        RigModel::new(600.0, 0.218, 160, 120, 40.0, 200.0, 8).unwrap()
    }

    fn test_pattern() -> Pattern {
        generate_pattern(1, 160, 24, 0.2, 1.2, 9).unwrap()
    }

    fn plane_scene(z: f64, n_frames: usize) -> SceneSpec {
        SceneSpec {
            primitives: vec![Primitive {
                shape: Shape::Plane { half_extent: None },
                center: [0.0, 0.0, z],
                albedo: 1.0,
                motion: Motion::default(),
            }],
            background_depth_m: 2.0,
            n_frames,
        }
    }

    #[test]
    fn empty_scene_hits_background_everywhere() {
        let scene = SceneSpec {
            primitives: vec![],
            background_depth_m: 2.0,
            n_frames: 1,
        };
        let r = rig();
        for &(x, y) in &[(0, 0), (80, 60), (159, 119)] {
            assert_eq!(depth_at(&scene, x, y, 0, &r), 2.0);
        }
    }

    #[test]
    fn full_plane_gives_constant_depth() {
        let scene = plane_scene(1.0, 1);
        let r = rig();
        for &(x, y) in &[(0, 0), (80, 60), (159, 119)] {
            assert!((depth_at(&scene, x, y, 0, &r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_on_axis_has_minimum_depth_at_center() {
        let r = rig();
        let scene = SceneSpec {
            primitives: vec![Primitive {
                shape: Shape::Sphere { radius: 0.3 },
                center: [0.0, 0.0, 1.5],
                albedo: 1.0,
                motion: Motion::default(),
            }],
            background_depth_m: 2.0,
            n_frames: 1,
        };
        // Closed form on the optical axis: z = cz - r. The exact image
        // center falls between pixels; sample the four nearest.
        let candidates = [(79, 59), (80, 59), (79, 60), (80, 60)];
        let center_min = candidates
            .iter()
            .map(|&(x, y)| depth_at(&scene, x, y, 0, &r))
            .fold(f64::INFINITY, f64::min);
        assert!((center_min - 1.2).abs() < 1e-3, "center depth {center_min}");
        for &(x, y) in &[(40, 60), (120, 60), (80, 20)] {
            assert!(depth_at(&scene, x, y, 0, &r) > center_min);
        }
    }

    #[test]
    fn noise_free_plane_renders_shifted_tile() {
        let r = rig();
        let p = test_pattern();
        // Z chosen so the disparity is exactly 100 px.
        let z = r.fb() / 100.0;
        let scene = plane_scene(z, 1);
        let (frame, gt) = render_frame(&scene, 0, &r, &p, &NoiseModel::noiseless()).unwrap();
        for y in 0..r.height {
            for x in 0..r.width {
                if x < 100 {
                    assert!(!gt.valid.get(x, y), "({x},{y}) should be unprojected");
                    continue;
                }
                let expected = p.tile().get(x - 100, y % p.period_rows());
                assert_eq!(frame.intensity.get(x, y), expected, "pixel ({x},{y})");
                assert!((gt.d.get(x, y) - 100.0).abs() < 1e-4);
                assert!(gt.valid.get(x, y));
            }
        }
    }

    #[test]
    fn static_scene_renders_identical_frames() {
        let r = rig();
        let p = test_pattern();
        let scene = plane_scene(1.0, 3);
        let (f0, _) = render_frame(&scene, 0, &r, &p, &NoiseModel::noiseless()).unwrap();
        let (f1, _) = render_frame(&scene, 1, &r, &p, &NoiseModel::noiseless()).unwrap();
        assert_eq!(f0.intensity.data(), f1.intensity.data());
    }

    #[test]
    fn approaching_plane_disparity_strictly_increases() {
        let r = rig();
        let p = test_pattern();
        let mut scene = plane_scene(1.5, 5);
        scene.primitives[0].motion.velocity = [0.0, 0.0, -0.02];
        let mut prev = 0.0f32;
        for t in 0..5 {
            let (_, gt) = render_frame(&scene, t, &r, &p, &NoiseModel::noiseless()).unwrap();
            let d = gt.d.get(120, 60);
            assert!(d > prev, "frame {t}: {d} <= {prev}");
            prev = d;
        }
    }

    #[test]
    fn constant_disparity_rate_track_is_exact() {
        let r = rig();
        let fb = r.fb();
        let mut scene = plane_scene(fb / 90.0, 8);
        scene.primitives[0].motion.disparity_rate_px = Some(1.0);
        let p = test_pattern();
        for t in 0..8 {
            let (_, gt) = render_frame(&scene, t, &r, &p, &NoiseModel::noiseless()).unwrap();
            let expected = 90.0 + t as f32;
            assert!(
                (gt.d.get(130, 40) - expected).abs() < 1e-3,
                "frame {t}: {} vs {expected}",
                gt.d.get(130, 40)
            );
        }
    }

    #[test]
    fn projector_shadow_band_matches_closed_form() {
        // Low-disparity rig so the square sits inside the projected field.
        let r = RigModel::new(300.0, 0.1, 160, 120, 10.0, 60.0, 8).unwrap();
        let p = test_pattern();
        // Foreground square at disparity 40, background at 20.
        let z_fg = r.fb() / 40.0;
        let z_bg = r.fb() / 20.0;
        let (hx, hy) = (0.05, 0.04);
        let scene = SceneSpec {
            primitives: vec![Primitive {
                shape: Shape::Plane {
                    half_extent: Some([hx, hy]),
                },
                center: [0.0, 0.0, z_fg],
                albedo: 1.0,
                motion: Motion::default(),
            }],
            background_depth_m: z_bg,
            n_frames: 1,
        };
        let (_, gt) = render_frame(&scene, 0, &r, &p, &NoiseModel::noiseless()).unwrap();

        let cx = 0.5 * (r.width as f64 - 1.0);
        let cy = 0.5 * (r.height as f64 - 1.0);
        let left_edge = cx - r.focal_px * hx / z_fg;
        let right_edge = cx + r.focal_px * hx / z_fg;
        let shadow_lo = left_edge - (40.0 - 20.0);
        let y = cy.round() as usize; // inside the square's row band
        assert!(r.focal_px * hy / z_fg > 2.0);
        for x in 25..r.width {
            let xf = x as f64;
            let expected_shadow = xf > shadow_lo + 1.0 && xf < left_edge - 1.0;
            let expected_lit = (xf < shadow_lo - 1.0)
                || (xf > left_edge + 1.0 && xf < right_edge - 1.0)
                || (xf > right_edge + 1.0);
            if expected_shadow {
                assert!(!gt.valid.get(x, y), "x={x} should be shadowed");
            } else if expected_lit {
                assert!(gt.valid.get(x, y), "x={x} should be lit");
            }
        }
    }

    #[test]
    fn gt_is_consistent_with_rendered_intensity() {
        let r = rig();
        let p = test_pattern();
        let z = r.fb() / 110.0; // integer disparity
        let scene = plane_scene(z, 1);
        let (frame, gt) = render_frame(&scene, 0, &r, &p, &NoiseModel::noiseless()).unwrap();
        for y in (0..r.height).step_by(7) {
            for x in (0..r.width).step_by(5) {
                if !gt.valid.get(x, y) {
                    continue;
                }
                let resampled = sample_pattern(&p, x as f32 - gt.d.get(x, y), y as f32);
                let err = (resampled - frame.intensity.get(x, y)).abs();
                assert!(err < 1e-6, "({x},{y}): {err}");
            }
        }
    }

    #[test]
    fn out_of_range_scene_names_the_primitive() {
        let r = rig();
        let p = test_pattern();
        let scene = plane_scene(r.fb() / 300.0, 1); // disparity 300 > d_max
        let err = render_frame(&scene, 0, &r, &p, &NoiseModel::noiseless()).unwrap_err();
        match err {
            Error::RenderOutOfRange { frame, primitive, .. } => {
                assert_eq!(frame, 0);
                assert!(primitive.contains("plane"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn gen_sequence_writes_expected_tree() {
        let dir = tempfile::tempdir().unwrap();
        let r = rig();
        let p = test_pattern();
        let scene = plane_scene(1.0, 3);
        let m = gen_sequence(&scene, &r, &p, &NoiseModel::noiseless(), dir.path()).unwrap();
        assert_eq!(m.n_frames(), 3);
        for t in 0..3 {
            assert!(m.frame_path(t).exists());
            assert!(m.gt_disp_path(t).exists());
            assert!(m.gt_valid_path(t).exists());
        }
        assert!(dir.path().join("manifest.txt").exists());
        assert!(dir.path().join("pattern.txt").exists());
        let back = SequenceManifest::read(&dir.path().join("manifest.txt")).unwrap();
        assert_eq!(back.rig, r);
    }

    #[test]
    fn gen_sequence_reruns_are_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let r = rig();
        let p = test_pattern();
        let mut scene = plane_scene(1.0, 2);
        scene.primitives[0].motion.velocity = [0.001, 0.0, -0.005];
        let noise = NoiseModel::default(); // sigma > 0 exercises the RNG path
        gen_sequence(&scene, &r, &p, &noise, dir_a.path()).unwrap();
        gen_sequence(&scene, &r, &p, &noise, dir_b.path()).unwrap();
        for rel in [
            "manifest.txt",
            "pattern.pgm",
            "frames/frame_0000.pgm",
            "frames/frame_0001.pgm",
            "gt/disp_0001.pfm",
            "gt/valid_0001.pgm",
        ] {
            let a = std::fs::read(dir_a.path().join(rel)).unwrap();
            let b = std::fs::read(dir_b.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between reruns");
        }
    }
}
