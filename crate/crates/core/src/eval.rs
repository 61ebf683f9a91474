//! Disparity accuracy metrics: bad-pixel ratios o(t) and average L1 error,
//! per frame and aggregated over sequences.

use std::path::Path;

use crate::error::{Error, Result};
use crate::estimator::DisparityMap;
use crate::grid::Grid;
use crate::io::{self, SequenceManifest};

/// How invalid predicted pixels enter the average L1 error. They always
/// count as bad in o(t).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InvalidPolicy {
    /// Skip invalid predictions in the average (default).
    Exclude,
    /// Charge a fixed error for each invalid prediction.
    Penalty(f64),
}

/// One row of the metrics table. `o1`, `o2`, `o5` are the percentages of
/// evaluated pixels with disparity error above 1, 2 and 5 px.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub o1: f64,
    pub o2: f64,
    pub o5: f64,
    pub avg: f64,
    pub n_pixels: usize,
    pub n_frames: usize,
}

impl MetricsRow {
    pub fn csv_header() -> &'static str {
        "sequence,ablation,o1,o2,o5,avg,n_pixels,n_frames"
    }

    pub fn csv_row(&self, sequence: &str, ablation: &str) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
            sequence, ablation, self.o1, self.o2, self.o5, self.avg, self.n_pixels, self.n_frames
        )
    }
}

fn check_shapes(d: &DisparityMap, gt: &DisparityMap, mask: &Grid<bool>) -> Result<()> {
    if !d.d.same_shape(&gt.d) || !d.d.same_shape(mask) {
        return Err(Error::LengthMismatch(
            "prediction, ground truth and mask dimensions differ".into(),
        ));
    }
    for (m, g) in mask.data().iter().zip(gt.valid.data()) {
        if *m && !*g {
            return Err(Error::InvalidParam(
                "mask includes pixels without valid ground truth".into(),
            ));
        }
    }
    Ok(())
}

/// Percentage of masked pixels whose |error| exceeds `t`. Pixels the
/// prediction marks invalid count as errors.
pub fn bad_pixel_ratio(
    d: &DisparityMap,
    gt: &DisparityMap,
    mask: &Grid<bool>,
    t: f64,
) -> Result<f64> {
    check_shapes(d, gt, mask)?;
    let mut total = 0usize;
    let mut bad = 0usize;
    for i in 0..mask.data().len() {
        if !mask.data()[i] {
            continue;
        }
        total += 1;
        if !d.valid.data()[i] {
            bad += 1;
            continue;
        }
        let err = (d.d.data()[i] - gt.d.data()[i]).abs() as f64;
        if err > t {
            bad += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyMask("bad_pixel_ratio over empty mask".into()));
    }
    Ok(100.0 * bad as f64 / total as f64)
}

/// Mean |error| over the mask. Invalid predictions are excluded or charged
/// a penalty according to `policy`.
pub fn avg_l1(
    d: &DisparityMap,
    gt: &DisparityMap,
    mask: &Grid<bool>,
    policy: InvalidPolicy,
) -> Result<f64> {
    check_shapes(d, gt, mask)?;
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for i in 0..mask.data().len() {
        if !mask.data()[i] {
            continue;
        }
        if d.valid.data()[i] {
            sum += (d.d.data()[i] - gt.d.data()[i]).abs() as f64;
            n += 1;
        } else if let InvalidPolicy::Penalty(p) = policy {
            sum += p;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask("avg_l1 over empty or all-invalid mask".into()));
    }
    Ok(sum / n as f64)
}

/// Metrics of a single frame for thresholds `t_list` (exactly three,
/// ascending).
pub fn frame_metrics(
    d: &DisparityMap,
    gt: &DisparityMap,
    mask: &Grid<bool>,
    t_list: &[f64],
    policy: InvalidPolicy,
) -> Result<MetricsRow> {
    validate_thresholds(t_list)?;
    let o1 = bad_pixel_ratio(d, gt, mask, t_list[0])?;
    let o2 = bad_pixel_ratio(d, gt, mask, t_list[1])?;
    let o5 = bad_pixel_ratio(d, gt, mask, t_list[2])?;
    let avg = avg_l1(d, gt, mask, policy)?;
    let n_pixels = mask.data().iter().filter(|&&m| m).count();
    Ok(MetricsRow {
        o1,
        o2,
        o5,
        avg,
        n_pixels,
        n_frames: 1,
    })
}

fn validate_thresholds(t_list: &[f64]) -> Result<()> {
    if t_list.len() != 3 {
        return Err(Error::InvalidParam(format!(
            "expected exactly 3 thresholds, got {}",
            t_list.len()
        )));
    }
    if !(t_list[0] > 0.0 && t_list[0] < t_list[1] && t_list[1] < t_list[2]) {
        return Err(Error::InvalidParam("thresholds must be positive and ascending".into()));
    }
    Ok(())
}

/// Loads one predicted map (disparity PFM + validity PGM) from a run
/// output directory.
pub fn load_prediction(pred_dir: &Path, t: usize) -> Result<DisparityMap> {
    let d = io::read_pfm(&pred_dir.join(io::pred_disp_filename(t)))?;
    let valid = io::read_pgm_mask(&pred_dir.join(io::pred_valid_filename(t)))?;
    if !d.same_shape(&valid) {
        return Err(Error::LengthMismatch(format!(
            "prediction {t}: disparity and validity dimensions differ"
        )));
    }
    let confidence = Grid::new(d.width(), d.height(), 0.0f32);
    Ok(DisparityMap { d, valid, confidence })
}

/// Loads one ground-truth map from the manifest.
pub fn load_ground_truth(manifest: &SequenceManifest, t: usize) -> Result<DisparityMap> {
    let d = io::read_pfm(&manifest.gt_disp_path(t))?;
    let valid = io::read_pgm_mask(&manifest.gt_valid_path(t))?;
    if !d.same_shape(&valid) {
        return Err(Error::LengthMismatch(format!(
            "ground truth {t}: disparity and validity dimensions differ"
        )));
    }
    let mut confidence = Grid::new(d.width(), d.height(), 0.0f32);
    for (c, &ok) in confidence.data_mut().iter_mut().zip(valid.data()) {
        *c = if ok { 1.0 } else { 0.0 };
    }
    Ok(DisparityMap { d, valid, confidence })
}

/// Sequence-level metrics over frames 1..T-1 (the seed frame is excluded).
/// The evaluation mask of each frame is its ground-truth validity.
///
/// `pooled = false` averages per-frame metrics with equal weight;
/// `pooled = true` pools all pixels before computing ratios and means.
pub fn evaluate_sequence(
    pred_dir: &Path,
    manifest: &SequenceManifest,
    t_list: &[f64],
    policy: InvalidPolicy,
    pooled: bool,
) -> Result<MetricsRow> {
    validate_thresholds(t_list)?;
    let n = manifest.n_frames();
    if n < 2 {
        return Err(Error::LengthMismatch(
            "sequence evaluation needs at least 2 frames".into(),
        ));
    }
    for t in 0..n {
        if !pred_dir.join(io::pred_disp_filename(t)).exists() {
            return Err(Error::LengthMismatch(format!(
                "prediction for frame {t} missing in {}",
                pred_dir.display()
            )));
        }
    }

    if pooled {
        let mut bad = [0usize; 3];
        let mut total = 0usize;
        let mut err_sum = 0.0f64;
        let mut err_n = 0usize;
        for t in 1..n {
            let pred = load_prediction(pred_dir, t)?;
            let gt = load_ground_truth(manifest, t)?;
            if !pred.d.same_shape(&gt.d) {
                return Err(Error::LengthMismatch(format!(
                    "frame {t}: prediction and ground truth dimensions differ"
                )));
            }
            for i in 0..gt.valid.data().len() {
                if !gt.valid.data()[i] {
                    continue;
                }
                total += 1;
                if pred.valid.data()[i] {
                    let err = (pred.d.data()[i] - gt.d.data()[i]).abs() as f64;
                    for (b, &th) in bad.iter_mut().zip(t_list) {
                        if err > th {
                            *b += 1;
                        }
                    }
                    err_sum += err;
                    err_n += 1;
                } else {
                    for b in bad.iter_mut() {
                        *b += 1;
                    }
                    if let InvalidPolicy::Penalty(p) = policy {
                        err_sum += p;
                        err_n += 1;
                    }
                }
            }
        }
        if total == 0 || err_n == 0 {
            return Err(Error::EmptyMask("no evaluable pixels in sequence".into()));
        }
        return Ok(MetricsRow {
            o1: 100.0 * bad[0] as f64 / total as f64,
            o2: 100.0 * bad[1] as f64 / total as f64,
            o5: 100.0 * bad[2] as f64 / total as f64,
            avg: err_sum / err_n as f64,
            n_pixels: total,
            n_frames: n - 1,
        });
    }

    let mut acc = MetricsRow {
        o1: 0.0,
        o2: 0.0,
        o5: 0.0,
        avg: 0.0,
        n_pixels: 0,
        n_frames: 0,
    };
    for t in 1..n {
        let pred = load_prediction(pred_dir, t)?;
        let gt = load_ground_truth(manifest, t)?;
        let row = frame_metrics(&pred, &gt, &gt.valid, t_list, policy)?;
        acc.o1 += row.o1;
        acc.o2 += row.o2;
        acc.o5 += row.o5;
        acc.avg += row.avg;
        acc.n_pixels += row.n_pixels;
        acc.n_frames += 1;
    }
    let f = acc.n_frames as f64;
    acc.o1 /= f;
    acc.o2 /= f;
    acc.o5 /= f;
    acc.avg /= f;
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(w: usize, h: usize, d: f32) -> DisparityMap {
        DisparityMap {
            d: Grid::new(w, h, d),
            valid: Grid::new(w, h, true),
            confidence: Grid::new(w, h, 1.0),
        }
    }

    const T: &[f64] = &[1.0, 2.0, 5.0];

    #[test]
    fn exact_prediction_scores_zero() {
        let gt = map(10, 8, 50.0);
        let d = map(10, 8, 50.0);
        let row = frame_metrics(&d, &gt, &gt.valid.clone(), T, InvalidPolicy::Exclude).unwrap();
        assert_eq!(row.o1, 0.0);
        assert_eq!(row.o2, 0.0);
        assert_eq!(row.o5, 0.0);
        assert_eq!(row.avg, 0.0);
        assert_eq!(row.n_pixels, 80);
    }

    #[test]
    fn constant_offset_hits_thresholds_as_expected() {
        let gt = map(10, 8, 50.0);
        let d = map(10, 8, 53.0);
        let mask = gt.valid.clone();
        assert_eq!(bad_pixel_ratio(&d, &gt, &mask, 1.0).unwrap(), 100.0);
        assert_eq!(bad_pixel_ratio(&d, &gt, &mask, 2.0).unwrap(), 100.0);
        assert_eq!(bad_pixel_ratio(&d, &gt, &mask, 5.0).unwrap(), 0.0);
        assert_eq!(avg_l1(&d, &gt, &mask, InvalidPolicy::Exclude).unwrap(), 3.0);

        let d2 = map(10, 8, 52.0);
        assert_eq!(avg_l1(&d2, &gt, &mask, InvalidPolicy::Exclude).unwrap(), 2.0);
    }

    #[test]
    fn half_large_offset_gives_fifty_percent() {
        let gt = map(10, 10, 40.0);
        let mut d = map(10, 10, 40.0);
        for i in 0..50 {
            d.d.data_mut()[i] = 50.0; // off by 10
        }
        let mask = gt.valid.clone();
        assert_eq!(bad_pixel_ratio(&d, &gt, &mask, 5.0).unwrap(), 50.0);
    }

    #[test]
    fn half_one_half_three_averages_to_two() {
        let gt = map(10, 10, 40.0);
        let mut d = map(10, 10, 41.0);
        for i in 0..50 {
            d.d.data_mut()[i] = 43.0;
        }
        let mask = gt.valid.clone();
        assert_eq!(avg_l1(&d, &gt, &mask, InvalidPolicy::Exclude).unwrap(), 2.0);
    }

    #[test]
    fn invalid_predictions_count_bad_but_not_in_avg() {
        let gt = map(4, 2, 40.0);
        let mut d = map(4, 2, 40.0);
        for i in 0..4 {
            d.valid.data_mut()[i] = false;
            d.d.data_mut()[i] = 39.0;
        }
        let mask = gt.valid.clone();
        assert_eq!(bad_pixel_ratio(&d, &gt, &mask, 1.0).unwrap(), 50.0);
        assert_eq!(avg_l1(&d, &gt, &mask, InvalidPolicy::Exclude).unwrap(), 0.0);
        assert_eq!(avg_l1(&d, &gt, &mask, InvalidPolicy::Penalty(8.0)).unwrap(), 4.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let gt = map(4, 2, 40.0);
        let d = map(4, 2, 40.0);
        let mask = Grid::new(4, 2, false);
        assert!(matches!(
            bad_pixel_ratio(&d, &gt, &mask, 1.0),
            Err(Error::EmptyMask(_))
        ));
        assert!(matches!(
            avg_l1(&d, &gt, &mask, InvalidPolicy::Exclude),
            Err(Error::EmptyMask(_))
        ));
    }

    #[test]
    fn mask_outside_gt_validity_is_rejected() {
        let mut gt = map(4, 2, 40.0);
        gt.valid.data_mut()[0] = false;
        let d = map(4, 2, 40.0);
        let mask = Grid::new(4, 2, true);
        assert!(bad_pixel_ratio(&d, &gt, &mask, 1.0).is_err());
    }

    #[test]
    fn shrinking_mask_to_exact_region_zeroes_metrics() {
        let gt = map(10, 10, 40.0);
        let mut d = map(10, 10, 40.0);
        for i in 0..50 {
            d.d.data_mut()[i] = 47.0;
        }
        let mut mask = Grid::new(10, 10, false);
        for i in 50..100 {
            mask.data_mut()[i] = true;
        }
        let row = frame_metrics(&d, &gt, &mask, T, InvalidPolicy::Exclude).unwrap();
        assert_eq!((row.o1, row.o2, row.o5, row.avg), (0.0, 0.0, 0.0, 0.0));
    }

    proptest! {
        #[test]
        fn thresholds_are_monotone(errs in proptest::collection::vec(-12.0f32..12.0, 64)) {
            let gt = map(8, 8, 40.0);
            let mut d = map(8, 8, 40.0);
            for (i, e) in errs.iter().enumerate() {
                d.d.data_mut()[i] = 40.0 + e;
            }
            let mask = gt.valid.clone();
            let row = frame_metrics(&d, &gt, &mask, T, InvalidPolicy::Exclude).unwrap();
            prop_assert!(row.o1 >= row.o2);
            prop_assert!(row.o2 >= row.o5);
        }
    }

    mod sequence {
        use super::*;
        use crate::io;
        use tempfile::tempdir;

        fn write_pair(dir: &Path, t: usize, map: &DisparityMap) {
            io::write_pfm(&dir.join(io::pred_disp_filename(t)), &map.d).unwrap();
            io::write_pgm_mask(&dir.join(io::pred_valid_filename(t)), &map.valid).unwrap();
        }

        fn gt_manifest(dir: &Path, n: usize, gt: &DisparityMap) -> SequenceManifest {
            let rig =
                crate::geometry::RigModel::new(300.0, 0.1, gt.width(), gt.height(), 10.0, 60.0, 2)
                    .unwrap();
            let gt_dir = dir.join("gt");
            std::fs::create_dir_all(&gt_dir).unwrap();
            let mut gt_disp = Vec::new();
            let mut gt_valid = Vec::new();
            let mut frames = Vec::new();
            for t in 0..n {
                let dp = std::path::Path::new("gt").join(io::gt_disp_filename(t));
                let vp = std::path::Path::new("gt").join(io::gt_valid_filename(t));
                io::write_pfm(&dir.join(&dp), &gt.d).unwrap();
                io::write_pgm_mask(&dir.join(&vp), &gt.valid).unwrap();
                gt_disp.push(dp);
                gt_valid.push(vp);
                frames.push(std::path::Path::new("gt").join(io::frame_filename(t)));
            }
            SequenceManifest {
                rig,
                pattern: "pattern.pgm".into(),
                frames,
                gt_disp,
                gt_valid,
                root: dir.to_path_buf(),
            }
        }

        #[test]
        fn first_frame_is_excluded() {
            let dir = tempdir().unwrap();
            let gt = map(6, 4, 30.0);
            let manifest = gt_manifest(dir.path(), 2, &gt);
            let pred_dir = dir.path().join("pred");
            std::fs::create_dir_all(&pred_dir).unwrap();
            write_pair(&pred_dir, 0, &map(6, 4, 55.0)); // frame 0: wildly wrong
            write_pair(&pred_dir, 1, &map(6, 4, 30.0));
            let row =
                evaluate_sequence(&pred_dir, &manifest, T, InvalidPolicy::Exclude, false).unwrap();
            assert_eq!(row.n_frames, 1);
            assert_eq!(row.avg, 0.0);
        }

        #[test]
        fn per_frame_average_of_one_and_three_is_two() {
            let dir = tempdir().unwrap();
            let gt = map(6, 4, 30.0);
            let manifest = gt_manifest(dir.path(), 3, &gt);
            let pred_dir = dir.path().join("pred");
            std::fs::create_dir_all(&pred_dir).unwrap();
            write_pair(&pred_dir, 0, &map(6, 4, 30.0));
            write_pair(&pred_dir, 1, &map(6, 4, 31.0));
            write_pair(&pred_dir, 2, &map(6, 4, 33.0));
            let row =
                evaluate_sequence(&pred_dir, &manifest, T, InvalidPolicy::Exclude, false).unwrap();
            assert_eq!(row.n_frames, 2);
            assert_eq!(row.avg, 2.0);
        }

        #[test]
        fn missing_prediction_is_length_mismatch() {
            let dir = tempdir().unwrap();
            let gt = map(6, 4, 30.0);
            let manifest = gt_manifest(dir.path(), 3, &gt);
            let pred_dir = dir.path().join("pred");
            std::fs::create_dir_all(&pred_dir).unwrap();
            write_pair(&pred_dir, 0, &map(6, 4, 30.0));
            write_pair(&pred_dir, 1, &map(6, 4, 30.0));
            assert!(matches!(
                evaluate_sequence(&pred_dir, &manifest, T, InvalidPolicy::Exclude, false),
                Err(Error::LengthMismatch(_))
            ));
        }
    }
}
