//! Homogeneous 2D/3D point arithmetic, homographies, and pinhole projection.
//!
//! Pixel convention: (0, 0) is the center of the top-left pixel, x grows
//! rightward and y downward, so the extreme coordinates of a `w`×`h` image
//! are `w - 1` and `h - 1`. Angles are degrees at every public interface.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Threshold below which a homogeneous weight or determinant is treated as zero.
pub const PROJECTIVE_EPS: f64 = 1e-12;

/// Errors from geometric primitives.
#[derive(Debug, Error)]
pub enum GeometryError {
    /// An input or intermediate coordinate was NaN or infinite.
    #[error("non-finite coordinate in {context}")]
    NonFinite { context: &'static str },
    /// A 3D point sits on or behind the camera plane after the pose transform.
    #[error("point at or behind the camera plane (z = {z})")]
    BehindCamera { z: f64 },
    /// The matrix cannot be inverted.
    #[error("singular matrix (|det| = {det:e})")]
    Singular { det: f64 },
    /// Intrinsics violate fx, fy > 0 or the principal point is outside the image.
    #[error("invalid camera intrinsics: {reason}")]
    InvalidIntrinsics { reason: String },
    /// The rotation block is not orthonormal with determinant +1.
    #[error("rotation is not orthonormal (max deviation {deviation:e})")]
    NotARotation { deviation: f64 },
    /// Text that should contain a 3x3 matrix could not be parsed.
    #[error("malformed homography text: {reason}")]
    MalformedText { reason: String },
}

/// A 2D point in homogeneous coordinates. Two values with proportional
/// components denote the same point; `w == 0` denotes a direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2H {
    pub x: f64,
    pub y: f64,
    pub w: f64,
}

impl Point2H {
    /// A finite point with unit weight.
    pub fn new(x: f64, y: f64) -> Self {
        Point2H { x, y, w: 1.0 }
    }

    pub fn homogeneous(x: f64, y: f64, w: f64) -> Self {
        Point2H { x, y, w }
    }

    pub fn is_direction(&self) -> bool {
        self.w == 0.0
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite()
    }

    /// Divides by the weight. `None` when the point is (numerically) a direction.
    pub fn normalized(&self) -> Option<Point2H> {
        if self.w.abs() <= PROJECTIVE_EPS {
            None
        } else {
            Some(Point2H::new(self.x / self.w, self.y / self.w))
        }
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.w)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Point2H {
            x: v.x,
            y: v.y,
            w: v.z,
        }
    }
}

/// A 3D point in the rig frame, millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// An invertible 3x3 projective transform acting on [`Point2H`].
///
/// Canonical form has the (3,3) entry equal to 1. Construction divides by
/// that entry when it is usably far from zero; otherwise the matrix is
/// scaled by its largest-magnitude entry and flagged non-canonical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
    canonical: bool,
}

impl Homography {
    /// Builds a homography from any nonsingular 3x3 matrix, canonicalizing it.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite {
                context: "homography matrix",
            });
        }
        let h33 = m[(2, 2)];
        let (scaled, canonical) = if h33.abs() > PROJECTIVE_EPS {
            (m / h33, true)
        } else {
            let largest = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if largest <= PROJECTIVE_EPS {
                return Err(GeometryError::Singular { det: 0.0 });
            }
            (m / largest, false)
        };
        let det = scaled.determinant();
        if det.abs() <= PROJECTIVE_EPS {
            return Err(GeometryError::Singular { det });
        }
        Ok(Homography {
            m: scaled,
            canonical,
        })
    }

    pub fn identity() -> Self {
        Homography {
            m: Matrix3::identity(),
            canonical: true,
        }
    }

    /// Pure pixel translation by (tx, ty).
    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
            canonical: true,
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.m[(row, col)]
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self, GeometryError> {
        Homography::from_matrix(self.m * other.m)
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let inv = self.m.try_inverse().ok_or(GeometryError::Singular {
            det: self.m.determinant(),
        })?;
        Homography::from_matrix(inv)
    }

    /// Applies the transform and normalizes. A point whose image has zero
    /// weight comes back as a direction (`w == 0`).
    pub fn apply(&self, p: Point2H) -> Result<Point2H, GeometryError> {
        if !p.is_finite() {
            return Err(GeometryError::NonFinite {
                context: "apply input point",
            });
        }
        let q = self.m * p.to_vector();
        match Point2H::from_vector(q).normalized() {
            Some(n) => Ok(n),
            None => Ok(Point2H::homogeneous(q.x, q.y, 0.0)),
        }
    }

    /// Shared on-disk format: 3 lines of 3 whitespace-separated decimal
    /// fields, row-major, 16 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in 0..3 {
            for c in 0..3 {
                if c > 0 {
                    out.push(' ');
                }
                out.push_str(&format!("{:.15e}", self.m[(r, c)]));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GeometryError> {
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| GeometryError::MalformedText {
                    reason: format!("not a number: {tok:?}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if values.len() != 9 {
            return Err(GeometryError::MalformedText {
                reason: format!("expected 9 fields, found {}", values.len()),
            });
        }
        Homography::from_matrix(Matrix3::from_row_slice(&values))
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics {
                reason: format!("focal lengths must be positive (fx={fx}, fy={fy})"),
            });
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics {
                reason: "zero image dimension".into(),
            });
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics {
                reason: format!("principal point ({cx}, {cy}) outside {width}x{height}"),
            });
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn k_inverse(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// A rotation + translation pair. The projection code treats it as the
/// world-to-camera map `x_cam = R p + t`; rig types that instead store a
/// camera placement say so at their definition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let gram = rotation.transpose() * rotation;
        let mut deviation = 0.0f64;
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                deviation = deviation.max((gram[(r, c)] - want).abs());
            }
        }
        deviation = deviation.max((rotation.determinant() - 1.0).abs());
        if deviation > 1e-9 {
            return Err(GeometryError::NotARotation { deviation });
        }
        Ok(RigidPose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        RigidPose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation-only pose from per-axis angles in degrees, composed Rz·Ry·Rx.
    pub fn from_euler_deg(theta_x: f64, theta_y: f64, theta_z: f64) -> Self {
        RigidPose {
            rotation: rotation_from_euler_deg(theta_x, theta_y, theta_z),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }
}

/// Rz(θz)·Ry(θy)·Rx(θx), angles in degrees.
pub fn rotation_from_euler_deg(theta_x: f64, theta_y: f64, theta_z: f64) -> Matrix3<f64> {
    let (sx, cx) = theta_x.to_radians().sin_cos();
    let (sy, cy) = theta_y.to_radians().sin_cos();
    let (sz, cz) = theta_z.to_radians().sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

/// Projects a rig-frame point through `x_cam = R p + t` and the intrinsics.
/// Errors when the transformed point is not strictly in front of the camera.
pub fn project(
    k: &CameraIntrinsics,
    pose: &RigidPose,
    p: Point3,
) -> Result<Point2H, GeometryError> {
    let cam = pose.rotation * p.to_vector() + pose.translation;
    if cam.z <= PROJECTIVE_EPS {
        return Err(GeometryError::BehindCamera { z: cam.z });
    }
    let x = k.fx * cam.x / cam.z + k.cx;
    let y = k.fy * cam.y / cam.z + k.cy;
    if !(x.is_finite() && y.is_finite()) {
        return Err(GeometryError::NonFinite {
            context: "projected pixel",
        });
    }
    Ok(Point2H::new(x, y))
}

/// Homography mapping pixels of a reference camera to pixels of a co-located
/// camera rotated by `r` (the relative world-to-camera rotation):
/// `K_actual · r · K_perfect⁻¹`, canonicalized. Exact for pure rotation.
pub fn exact_rotation_homography(
    k_perfect: &CameraIntrinsics,
    k_actual: &CameraIntrinsics,
    r: &Matrix3<f64>,
) -> Result<Homography, GeometryError> {
    Homography::from_matrix(k_actual.k_matrix() * r * k_perfect.k_inverse())
}
