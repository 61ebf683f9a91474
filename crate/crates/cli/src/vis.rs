//! PNG visualizations: signed-flow color maps and error heatmaps.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use dotflow_core::estimator::DisparityMap;
use dotflow_core::flow::FlowMap;

use crate::CliError;

/// Signed horizontal flow as a red/blue map: positive `u` (approaching
/// surfaces) fades white to red, negative fades white to blue, invalid
/// pixels are gray. `scale` is the |u| that saturates the color.
pub fn flow_color_map(flow: &FlowMap, scale: f32) -> RgbImage {
    let (w, h) = (flow.u.width(), flow.u.height());
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = if flow.valid.get(x, y) {
                let u = flow.u.get(x, y);
                let a = (u.abs() / scale).clamp(0.0, 1.0);
                let fade = ((1.0 - a) * 255.0).round() as u8;
                if u >= 0.0 {
                    Rgb([255, fade, fade])
                } else {
                    Rgb([fade, fade, 255])
                }
            } else {
                Rgb([128, 128, 128])
            };
            img.put_pixel(x as u32, y as u32, px);
        }
    }
    img
}

/// |prediction - ground truth| as a grayscale map, scaled so `scale` px of
/// error saturates to white. Pixels outside the ground-truth mask are
/// black; pixels the prediction marks invalid are white.
pub fn error_heatmap(pred: &DisparityMap, gt: &DisparityMap, scale: f32) -> GrayImage {
    let (w, h) = (gt.d.width(), gt.d.height());
    let mut img = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = if !gt.valid.get(x, y) {
                0u8
            } else if !pred.valid.get(x, y) {
                255u8
            } else {
                let err = (pred.d.get(x, y) - gt.d.get(x, y)).abs();
                ((err / scale).clamp(0.0, 1.0) * 255.0).round() as u8
            };
            img.put_pixel(x as u32, y as u32, Luma([v]));
        }
    }
    img
}

pub fn save_png(img: &image::DynamicImage, path: &Path) -> Result<(), CliError> {
    img.save(path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}
