//! Plain-text scene specifications (TOML) describing the rig, the pattern
//! generation parameters, the noise model and the animated primitives.

use std::path::Path;

use serde::Deserialize;

use dotflow_core::geometry::RigModel;
use dotflow_core::simulator::{Motion, NoiseModel, Primitive, SceneSpec, Shape};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub rig: RigSection,
    #[serde(default)]
    pub pattern: PatternSection,
    #[serde(default)]
    pub noise: NoiseSection,
    pub scene: SceneSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigSection {
    pub width: usize,
    pub height: usize,
    pub focal_px: f64,
    pub baseline_m: f64,
    pub d_min: f64,
    pub d_max: f64,
    #[serde(default = "default_downsample")]
    pub downsample_factor: usize,
}

fn default_downsample() -> usize {
    8
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternSection {
    pub seed: u64,
    /// Tile width; 0 means "use the rig width".
    pub width: usize,
    pub period_rows: usize,
    pub dot_density: f64,
    pub dot_radius_px: f64,
    pub patch_width: usize,
}

impl Default for PatternSection {
    fn default() -> Self {
        PatternSection {
            seed: 7,
            width: 0,
            period_rows: 64,
            dot_density: 0.15,
            dot_radius_px: 1.5,
            patch_width: 11,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub gaussian_sigma: f64,
    pub ambient_level: f64,
    pub quantize_bits: u32,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            gaussian_sigma: 0.01,
            ambient_level: 0.05,
            quantize_bits: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub background_depth_m: f64,
    pub n_frames: usize,
    #[serde(default)]
    pub primitives: Vec<PrimitiveSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveSection {
    pub kind: String,
    pub center: [f64; 3],
    #[serde(default = "default_albedo")]
    pub albedo: f64,
    pub half_size: Option<[f64; 2]>,
    pub slope: Option<[f64; 2]>,
    pub radius: Option<f64>,
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub osc_amplitude_m: f64,
    #[serde(default)]
    pub osc_period_frames: f64,
    pub disparity_rate_px: Option<f64>,
}

fn default_albedo() -> f64 {
    1.0
}

impl SceneFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Data(format!("invalid scene file {}: {e}", path.display())))
    }

    pub fn rig(&self) -> Result<RigModel, CliError> {
        RigModel::new(
            self.rig.focal_px,
            self.rig.baseline_m,
            self.rig.width,
            self.rig.height,
            self.rig.d_min,
            self.rig.d_max,
            self.rig.downsample_factor,
        )
        .map_err(CliError::Core)
    }

    pub fn noise(&self, seed_override: Option<u64>) -> NoiseModel {
        NoiseModel {
            gaussian_sigma: self.noise.gaussian_sigma,
            ambient_level: self.noise.ambient_level,
            quantize_bits: self.noise.quantize_bits,
            seed: seed_override.unwrap_or(self.noise.seed),
        }
    }

    pub fn pattern_width(&self) -> usize {
        if self.pattern.width == 0 {
            self.rig.width
        } else {
            self.pattern.width
        }
    }

    pub fn scene(&self, frames_override: Option<usize>) -> Result<SceneSpec, CliError> {
        let mut primitives = Vec::with_capacity(self.scene.primitives.len());
        for (i, p) in self.scene.primitives.iter().enumerate() {
            let shape = match p.kind.as_str() {
                "plane" => Shape::Plane {
                    half_extent: p.half_size,
                },
                "tilted" => Shape::TiltedPlane {
                    slope: p.slope.ok_or_else(|| {
                        CliError::Data(format!("primitive[{i}]: tilted plane needs `slope`"))
                    })?,
                    half_extent: p.half_size,
                },
                "sphere" => Shape::Sphere {
                    radius: p.radius.ok_or_else(|| {
                        CliError::Data(format!("primitive[{i}]: sphere needs `radius`"))
                    })?,
                },
                other => {
                    return Err(CliError::Data(format!(
                        "primitive[{i}]: unknown kind {other:?} (plane, tilted or sphere)"
                    )))
                }
            };
            primitives.push(Primitive {
                shape,
                center: p.center,
                albedo: p.albedo,
                motion: Motion {
                    velocity: p.velocity,
                    osc_amplitude_m: p.osc_amplitude_m,
                    osc_period_frames: p.osc_period_frames,
                    disparity_rate_px: p.disparity_rate_px,
                },
            });
        }
        Ok(SceneSpec {
            primitives,
            background_depth_m: self.scene.background_depth_m,
            n_frames: frames_override.unwrap_or(self.scene.n_frames),
        })
    }
}
