//! Incremental disparity estimation for mono-camera structured light rigs.
//!
//! A static pseudo-random dot pattern is projected onto a dynamic scene and
//! observed by a single rectified camera. Instead of matching every frame
//! from scratch, the engine tracks the horizontal drift of the projected
//! dots between consecutive frames (the pattern flow, which equals the
//! per-pixel disparity change), warps the previous disparity and confidence
//! forward by that flow, and refines the small residual with a local ZNCC
//! search against the reference pattern.
//!
//! The crate also ships the supporting pieces needed to exercise the engine
//! end to end: an analytic scene renderer with exact ground truth, local
//! contrast normalization, disparity metrics, and PGM/PFM/manifest I/O.

pub mod error;
pub mod estimator;
pub mod eval;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod pattern;
pub mod preprocess;
pub mod simulator;

pub use error::{Error, Result};
pub use estimator::{Ablation, DisparityMap, FrameTiming, RefineParams};
pub use flow::{FlowMap, FlowParams};
pub use geometry::RigModel;
pub use grid::Grid;
pub use pattern::Pattern;
pub use simulator::{Frame, NoiseModel, Primitive, SceneSpec};
