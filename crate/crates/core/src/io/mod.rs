//! On-disk formats: binary PGM frames and masks, PFM float maps, and the
//! plain-text sequence manifest.

mod manifest;
mod pfm;
mod pgm;

pub use manifest::SequenceManifest;
pub use pfm::{read_pfm, write_pfm};
pub use pgm::{read_pgm, read_pgm_mask, write_pgm16, write_pgm8, write_pgm_mask};

/// File name helpers shared by the sequence generator, the estimator run
/// outputs and the evaluator.
pub fn frame_filename(t: usize) -> String {
    format!("frame_{t:04}.pgm")
}

pub fn gt_disp_filename(t: usize) -> String {
    format!("disp_{t:04}.pfm")
}

pub fn gt_valid_filename(t: usize) -> String {
    format!("valid_{t:04}.pgm")
}

pub fn pred_disp_filename(t: usize) -> String {
    format!("disp_{t:04}.pfm")
}

pub fn pred_valid_filename(t: usize) -> String {
    format!("valid_{t:04}.pgm")
}

pub fn pred_conf_filename(t: usize) -> String {
    format!("conf_{t:04}.pfm")
}

pub fn flow_filename(t: usize) -> String {
    format!("flow_{t:04}.pfm")
}
