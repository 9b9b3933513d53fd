//! Calibrated rectification from known rig parameters, the reference both
//! the sweeps and the comparison tables are drawn against.
//!
//! Both cameras are virtually rotated into a shared orientation whose
//! x-axis is the baseline direction, keeping the master intrinsics for
//! both: `H = K_new · R_new · R_old⁻¹ · K_old⁻¹` per camera. Noiseless
//! projections of any scene point are then row-aligned by construction.

use crate::geometry::{CameraIntrinsics, GeometryError, Homography, RigidPose};
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("degenerate baseline: {reason}")]
    DegenerateBaseline { reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Placement of the slave camera in the master frame: body orientation plus
/// camera center. Distinct from the world-to-camera map used by projection;
/// see [`CalibratedRig::slave_world_to_camera`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyPose {
    pub rotation: Matrix3<f64>,
    pub center_mm: Vector3<f64>,
}

/// Offline-calibrated dual-lens parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratedRig {
    pub k_master: CameraIntrinsics,
    pub k_slave: CameraIntrinsics,
    pub pose: BodyPose,
}

impl CalibratedRig {
    /// World-to-camera map of the slave for use with `project`.
    pub fn slave_world_to_camera(&self) -> Result<RigidPose, GeometryError> {
        let r_wc = self.pose.rotation.transpose();
        RigidPose::new(r_wc, -(r_wc * self.pose.center_mm))
    }
}

/// Rectifying homographies (master, slave). The new shared frame takes its
/// x-axis from the baseline, its y-axis from old-master-z × new-x, and the
/// master intrinsics for both cameras.
pub fn calibrated_rectify(rig: &CalibratedRig) -> Result<(Homography, Homography), BaselineError> {
    // Validate the stored rotation the same way RigidPose does.
    RigidPose::new(rig.pose.rotation, Vector3::zeros())?;

    let c = rig.pose.center_mm;
    let b = c.norm();
    if b < 1e-9 {
        return Err(BaselineError::DegenerateBaseline {
            reason: "camera centers coincide".into(),
        });
    }
    let x_new = c / b;
    let z_master = Vector3::new(0.0, 0.0, 1.0);
    let y_unnorm = z_master.cross(&x_new);
    let y_len = y_unnorm.norm();
    if y_len < 1e-9 {
        return Err(BaselineError::DegenerateBaseline {
            reason: "baseline parallel to the master optical axis".into(),
        });
    }
    let y_new = y_unnorm / y_len;
    let z_new = x_new.cross(&y_new);
    // Rows of the world-to-camera rotation are the new camera axes.
    let r_new = Matrix3::from_rows(&[x_new.transpose(), y_new.transpose(), z_new.transpose()]);

    let k_new = rig.k_master.k_matrix();
    // Master: old world-to-camera rotation is the identity.
    let h_master = Homography::from_matrix(k_new * r_new * rig.k_master.k_inverse())?;
    // Slave: old world-to-camera rotation is bodyᵀ, so its inverse is body.
    let h_slave =
        Homography::from_matrix(k_new * r_new * rig.pose.rotation * rig.k_slave.k_inverse())?;
    Ok((h_master, h_slave))
}
