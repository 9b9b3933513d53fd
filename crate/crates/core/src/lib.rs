//! Self-rectification for laterally displaced stereo pairs.
//!
//! A dual-lens rig whose baseline is nearly parallel to the image x-axis can
//! be rectified with a single homography on the slave image, leaving the
//! master image untouched. This crate implements that estimation
//! (`solver`), quality metrics (`metrics`), a deterministic rig simulator
//! for validation (`riggen`), calibrated rectification as a baseline
//! (`baselines`), plus the image warping (`imaging`) and feature matching
//! (`features`) needed to run on real image pairs.

pub mod baselines;
pub mod features;
pub mod geometry;
pub mod imaging;
pub mod metrics;
pub mod riggen;
pub mod rng;
pub mod solver;

pub use geometry::{
    exact_rotation_homography, project, CameraIntrinsics, GeometryError, Homography, Point2H,
    Point3, RigidPose,
};
pub use metrics::{nvd, pap, MetricsError, NvdReport, PapReport, RectificationReport};
pub use solver::{
    compute_shear, compute_shift, dsr, dsr_with_shift_scope, fit_hy_least_squares,
    solve_hy_ransac, CorrespondenceSet, RansacConfig, RansacOutcome, ShiftScope, SolveError,
    SolveResult,
};
