//! Deterministic dual-lens rig simulator.
//!
//! Models a laterally displaced stereo pair: a master camera at the rig
//! origin and a slave camera displaced by the baseline plus small
//! fabrication perturbations (per-axis rotations up to 3 degrees,
//! millimeter-scale translations). Produces ground-truth correspondences,
//! procedurally rendered image pairs, and the single-axis parameter sweeps
//! used to probe where the small-drift regime ends.

use crate::baselines::{self, BaselineError, CalibratedRig};
use crate::geometry::{
    project, rotation_from_euler_deg, CameraIntrinsics, GeometryError, Point2H, Point3, RigidPose,
};
use crate::imaging::Image;
use crate::metrics::{self, MetricsError};
use crate::rng::stream_rng;
use crate::solver::{self, CorrespondenceSet, RansacConfig, SolveError};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Sampling ranges for fabrication randomness: rotations in degrees,
/// translations in millimeters.
pub const THETA_RANGE_DEG: f64 = 3.0;
pub const T_XY_RANGE_MM: f64 = 1.0;
pub const T_Z_RANGE_MM: f64 = 2.0;
pub const DEFAULT_BASELINE_MM: f64 = 12.0;

/// Small-drift bounds: vertical and depth drifts below these stay well
/// approximated by a single homography at typical scene depths.
pub const SMALL_DRIFT_T_Y_MM: f64 = 1.0;
pub const SMALL_DRIFT_T_Z_MM: f64 = 2.0;

#[derive(Debug, Error)]
pub enum RigError {
    #[error("invalid scene: {reason}")]
    InvalidScene { reason: String },
    #[error("retry budget exhausted after {attempts} attempts (rig projects too few visible points)")]
    RetryBudgetExhausted { attempts: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("malformed rig text: {reason}")]
    MalformedText { reason: String },
}

/// Deviation of the slave camera from its perfect laterally-displaced pose.
/// The slave body is rotated by Rz(θz)·Ry(θy)·Rx(θx) and its center sits at
/// (baseline + t_x, t_y, t_z) in the master frame, millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigPerturbation {
    pub theta_x_deg: f64,
    pub theta_y_deg: f64,
    pub theta_z_deg: f64,
    pub t_x_mm: f64,
    pub t_y_mm: f64,
    pub t_z_mm: f64,
    pub baseline_mm: f64,
}

impl RigPerturbation {
    /// The perfect rig: no rotation, no drift, stock baseline.
    pub fn zero() -> Self {
        RigPerturbation {
            theta_x_deg: 0.0,
            theta_y_deg: 0.0,
            theta_z_deg: 0.0,
            t_x_mm: 0.0,
            t_y_mm: 0.0,
            t_z_mm: 0.0,
            baseline_mm: DEFAULT_BASELINE_MM,
        }
    }

    pub fn is_small_drift(&self) -> bool {
        self.t_y_mm.abs() <= SMALL_DRIFT_T_Y_MM && self.t_z_mm.abs() <= SMALL_DRIFT_T_Z_MM
    }

    /// Orientation of the slave camera body in the rig frame.
    pub fn body_rotation(&self) -> Matrix3<f64> {
        rotation_from_euler_deg(self.theta_x_deg, self.theta_y_deg, self.theta_z_deg)
    }

    pub fn slave_center_mm(&self) -> Vector3<f64> {
        Vector3::new(self.baseline_mm + self.t_x_mm, self.t_y_mm, self.t_z_mm)
    }
}

/// Uniform independent draws within the fabrication ranges; deterministic
/// in the seed.
pub fn sample_perturbation(seed: u64) -> RigPerturbation {
    let mut rng = stream_rng(seed, 0);
    RigPerturbation {
        theta_x_deg: rng.random_range(-THETA_RANGE_DEG..=THETA_RANGE_DEG),
        theta_y_deg: rng.random_range(-THETA_RANGE_DEG..=THETA_RANGE_DEG),
        theta_z_deg: rng.random_range(-THETA_RANGE_DEG..=THETA_RANGE_DEG),
        t_x_mm: rng.random_range(-T_XY_RANGE_MM..=T_XY_RANGE_MM),
        t_y_mm: rng.random_range(-T_XY_RANGE_MM..=T_XY_RANGE_MM),
        t_z_mm: rng.random_range(-T_Z_RANGE_MM..=T_Z_RANGE_MM),
        baseline_mm: DEFAULT_BASELINE_MM,
    }
}

/// A simulated dual-lens pair: intrinsics of both cameras plus the slave
/// perturbation. Ground truth for every validation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRig {
    pub k_master: CameraIntrinsics,
    pub k_slave: CameraIntrinsics,
    pub perturbation: RigPerturbation,
}

/// Smartphone-like simulation intrinsics: f = 800 px at 960x720 (about a
/// 62 degree horizontal field of view), principal point at the image center.
pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(800.0, 800.0, 479.5, 359.5, 960, 720).expect("static intrinsics")
}

impl CameraRig {
    pub fn from_perturbation(perturbation: RigPerturbation) -> Self {
        CameraRig {
            k_master: default_intrinsics(),
            k_slave: default_intrinsics(),
            perturbation,
        }
    }

    pub fn master_pose(&self) -> RigidPose {
        RigidPose::identity()
    }

    /// World-to-camera map of the slave: x_cam = Rᵀ(p - c).
    pub fn slave_pose(&self) -> RigidPose {
        let r = self.perturbation.body_rotation();
        let c = self.perturbation.slave_center_mm();
        let r_wc = r.transpose();
        RigidPose::new(r_wc, -(r_wc * c)).expect("transpose of a rotation")
    }

    pub fn to_calibrated(&self) -> CalibratedRig {
        CalibratedRig {
            k_master: self.k_master,
            k_slave: self.k_slave,
            pose: baselines::BodyPose {
                rotation: self.perturbation.body_rotation(),
                center_mm: self.perturbation.slave_center_mm(),
            },
        }
    }

    /// Key=value serialization, shared with the calibrated baseline.
    pub fn to_text(&self) -> String {
        let k = |tag: &str, k: &CameraIntrinsics| {
            format!(
                "fx_{tag}={:.15e}\nfy_{tag}={:.15e}\ncx_{tag}={:.15e}\ncy_{tag}={:.15e}\nwidth_{tag}={}\nheight_{tag}={}\n",
                k.fx, k.fy, k.cx, k.cy, k.width, k.height
            )
        };
        let p = &self.perturbation;
        format!(
            "{}{}theta_x_deg={:.15e}\ntheta_y_deg={:.15e}\ntheta_z_deg={:.15e}\nt_x_mm={:.15e}\nt_y_mm={:.15e}\nt_z_mm={:.15e}\nbaseline_mm={:.15e}\n",
            k("master", &self.k_master),
            k("slave", &self.k_slave),
            p.theta_x_deg, p.theta_y_deg, p.theta_z_deg, p.t_x_mm, p.t_y_mm, p.t_z_mm, p.baseline_mm
        )
    }

    pub fn from_text(text: &str) -> Result<Self, RigError> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| RigError::MalformedText {
                reason: format!("expected key=value, got {line:?}"),
            })?;
            fields.insert(key.trim().to_string(), value.trim().to_string());
        }
        let get = |key: &str| -> Result<f64, RigError> {
            fields
                .get(key)
                .ok_or_else(|| RigError::MalformedText {
                    reason: format!("missing field {key}"),
                })?
                .parse()
                .map_err(|_| RigError::MalformedText {
                    reason: format!("field {key} is not a number"),
                })
        };
        let cam = |tag: &str| -> Result<CameraIntrinsics, RigError> {
            Ok(CameraIntrinsics::new(
                get(&format!("fx_{tag}"))?,
                get(&format!("fy_{tag}"))?,
                get(&format!("cx_{tag}"))?,
                get(&format!("cy_{tag}"))?,
                get(&format!("width_{tag}"))? as u32,
                get(&format!("height_{tag}"))? as u32,
            )?)
        };
        Ok(CameraRig {
            k_master: cam("master")?,
            k_slave: cam("slave")?,
            perturbation: RigPerturbation {
                theta_x_deg: get("theta_x_deg")?,
                theta_y_deg: get("theta_y_deg")?,
                theta_z_deg: get("theta_z_deg")?,
                t_x_mm: get("t_x_mm")?,
                t_y_mm: get("t_y_mm")?,
                t_z_mm: get("t_z_mm")?,
                baseline_mm: get("baseline_mm")?,
            },
        })
    }
}

/// Scene and measurement-noise parameters for correspondence generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub n_points: usize,
    pub depth_min_mm: f64,
    pub depth_max_mm: f64,
    pub seed: u64,
    /// Isotropic Gaussian pixel noise on slave points, standing in for
    /// feature localization error.
    pub noise_sigma_px: f64,
    /// Fraction of pairs replaced by gross mismatches, in [0, 0.5).
    pub outlier_fraction: f64,
    /// Minimum vertical displacement of an injected outlier.
    pub outlier_min_offset_px: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            n_points: 500,
            depth_min_mm: 500.0,
            depth_max_mm: 10_000.0,
            seed: 0,
            noise_sigma_px: 0.3,
            outlier_fraction: 0.0,
            outlier_min_offset_px: 10.0,
        }
    }
}

impl SceneSpec {
    fn validate(&self) -> Result<(), RigError> {
        if !(self.depth_min_mm > 0.0 && self.depth_min_mm < self.depth_max_mm) {
            return Err(RigError::InvalidScene {
                reason: format!(
                    "need 0 < depth_min < depth_max, got {}..{}",
                    self.depth_min_mm, self.depth_max_mm
                ),
            });
        }
        if self.noise_sigma_px < 0.0 {
            return Err(RigError::InvalidScene {
                reason: "noise_sigma must be >= 0".into(),
            });
        }
        if !(0.0..0.5).contains(&self.outlier_fraction) {
            return Err(RigError::InvalidScene {
                reason: "outlier_fraction must be in [0, 0.5)".into(),
            });
        }
        if self.n_points == 0 {
            return Err(RigError::InvalidScene {
                reason: "n_points must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Exact per-pair truth recorded alongside generated correspondences.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Noiseless slave projections.
    pub true_slave: Vec<Point2H>,
    /// x_master - x_slave of the noiseless projections.
    pub disparity: Vec<f64>,
    /// False for injected outliers.
    pub is_true_match: Vec<bool>,
}

impl GroundTruth {
    /// On-disk format: header `N`, then `x' y' disparity flag` per pair.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.true_slave.len());
        for i in 0..self.true_slave.len() {
            out.push_str(&format!(
                "{:.15e} {:.15e} {:.15e} {}\n",
                self.true_slave[i].x,
                self.true_slave[i].y,
                self.disparity[i],
                if self.is_true_match[i] { 1 } else { 0 }
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, RigError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let n: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| RigError::MalformedText {
                reason: "missing count header".into(),
            })?;
        let mut gt = GroundTruth {
            true_slave: Vec::with_capacity(n),
            disparity: Vec::with_capacity(n),
            is_true_match: Vec::with_capacity(n),
        };
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(RigError::MalformedText {
                    reason: format!("expected 4 fields, got {}", f.len()),
                });
            }
            let num = |s: &str| -> Result<f64, RigError> {
                s.parse().map_err(|_| RigError::MalformedText {
                    reason: format!("not a number: {s:?}"),
                })
            };
            gt.true_slave.push(Point2H::new(num(f[0])?, num(f[1])?));
            gt.disparity.push(num(f[2])?);
            gt.is_true_match.push(f[3] == "1");
        }
        if gt.true_slave.len() != n {
            return Err(RigError::MalformedText {
                reason: format!("header says {n}, file has {}", gt.true_slave.len()),
            });
        }
        Ok(gt)
    }
}

const POINT_RETRY_BUDGET: usize = 1000;

/// Projects a random scene through both cameras. Master points come from
/// the perfect camera at the origin; slave points from the perturbed pose,
/// with Gaussian pixel noise and, optionally, a fraction of gross outliers.
/// Ground truth records the exact noiseless projections.
pub fn generate_correspondences(
    rig: &CameraRig,
    scene: &SceneSpec,
) -> Result<(CorrespondenceSet, GroundTruth), RigError> {
    scene.validate()?;
    let mut rng = stream_rng(scene.seed, 0);
    let master_pose = rig.master_pose();
    let slave_pose = rig.slave_pose();
    let (w, h) = (rig.k_master.width, rig.k_master.height);
    let (wf, hf) = ((w - 1) as f64, (h - 1) as f64);
    let ln_min = scene.depth_min_mm.ln();
    let ln_max = scene.depth_max_mm.ln();
    let inside = |p: Point2H, k: &CameraIntrinsics| {
        p.x >= 0.0 && p.x <= (k.width - 1) as f64 && p.y >= 0.0 && p.y <= (k.height - 1) as f64
    };

    let mut masters = Vec::with_capacity(scene.n_points);
    let mut true_slaves = Vec::with_capacity(scene.n_points);
    let mut disparity = Vec::with_capacity(scene.n_points);
    while masters.len() < scene.n_points {
        let mut placed = false;
        for _ in 0..POINT_RETRY_BUDGET {
            let u = rng.random_range(0.0..=wf);
            let v = rng.random_range(0.0..=hf);
            let z = (rng.random_range(ln_min..=ln_max)).exp();
            let p3 = Point3::new(
                (u - rig.k_master.cx) * z / rig.k_master.fx,
                (v - rig.k_master.cy) * z / rig.k_master.fy,
                z,
            );
            let m = match project(&rig.k_master, &master_pose, p3) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let s = match project(&rig.k_slave, &slave_pose, p3) {
                Ok(p) => p,
                Err(_) => continue,
            };
            if inside(m, &rig.k_master) && inside(s, &rig.k_slave) {
                disparity.push(m.x - s.x);
                masters.push(m);
                true_slaves.push(s);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(RigError::RetryBudgetExhausted {
                attempts: POINT_RETRY_BUDGET,
            });
        }
    }

    // Measurement noise on the observed slave points only.
    let mut observed: Vec<Point2H> = if scene.noise_sigma_px > 0.0 {
        let normal = Normal::new(0.0, scene.noise_sigma_px).expect("sigma >= 0");
        true_slaves
            .iter()
            .map(|p| Point2H::new(p.x + normal.sample(&mut rng), p.y + normal.sample(&mut rng)))
            .collect()
    } else {
        true_slaves.clone()
    };

    // Replace a deterministic random subset with gross mismatches.
    let n = scene.n_points;
    let n_outliers = (scene.outlier_fraction * n as f64).round() as usize;
    let mut is_true_match = vec![true; n];
    if n_outliers > 0 {
        let chosen = rand::seq::index::sample(&mut rng, n, n_outliers);
        for idx in chosen.iter() {
            let y_true = true_slaves[idx].y;
            let mut attempts = 0;
            let (x, y) = loop {
                let x = rng.random_range(0.0..=wf);
                let y = rng.random_range(0.0..=hf);
                if (y - y_true).abs() >= scene.outlier_min_offset_px {
                    break (x, y);
                }
                attempts += 1;
                if attempts > 10_000 {
                    return Err(RigError::InvalidScene {
                        reason: "cannot place outliers with the requested vertical offset".into(),
                    });
                }
            };
            observed[idx] = Point2H::new(x, y);
            is_true_match[idx] = false;
        }
    }

    let pairs = masters.iter().cloned().zip(observed).collect();
    let corr = CorrespondenceSet::new(pairs, w, h)?;
    Ok((
        corr,
        GroundTruth {
            true_slave: true_slaves,
            disparity,
            is_true_match,
        },
    ))
}

// ---------------------------------------------------------------------------
// Procedural rendering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
enum BlobShape {
    Disc,
    /// Axis half-extent with in-plane rotation (radians).
    Square { angle: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    center: Point3,
    radius_mm: f64,
    shape: BlobShape,
    intensity: f64,
    salt: u64,
}

/// The renderable scene: a fronto-parallel textured background plane plus
/// high-contrast blobs at varied depths. Exposes exact geometry queries so
/// feature matches on rendered pairs can be scored against truth.
#[derive(Debug, Clone)]
pub struct RenderedScene {
    plane_depth_mm: f64,
    blobs: Vec<Blob>,
    texture_seed: u64,
}

const BG_BASE: f64 = 118.0;
const BLOB_TARGET_COUNT: usize = 170;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn lattice(ix: i64, iy: i64, salt: u64) -> f64 {
    let h =
        splitmix((ix as u64).wrapping_mul(0x2545f4914f6cdd1d) ^ (iy as u64).rotate_left(32) ^ salt);
    // Map to [-1, 1].
    (h >> 11) as f64 / (1u64 << 52) as f64 * 2.0 - 1.0
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smooth value noise in [-1, 1] over millimeter coordinates.
fn value_noise(x: f64, y: f64, salt: u64) -> f64 {
    let ix = x.floor();
    let iy = y.floor();
    let fx = smoothstep(x - ix);
    let fy = smoothstep(y - iy);
    let (ix, iy) = (ix as i64, iy as i64);
    let v00 = lattice(ix, iy, salt);
    let v10 = lattice(ix + 1, iy, salt);
    let v01 = lattice(ix, iy + 1, salt);
    let v11 = lattice(ix + 1, iy + 1, salt);
    let top = v00 + (v10 - v00) * fx;
    let bot = v01 + (v11 - v01) * fx;
    top + (bot - top) * fy
}

fn background_intensity(x_mm: f64, y_mm: f64, seed: u64) -> f64 {
    BG_BASE
        + 18.0 * value_noise(x_mm / 60.0, y_mm / 60.0, splitmix(seed ^ 0xb67))
        + 7.0 * value_noise(x_mm / 16.0, y_mm / 16.0, splitmix(seed ^ 0x5eed))
}

impl RenderedScene {
    /// Builds the scene contents for a rig deterministically from the seed.
    /// Blob placement is done in the master view with a margin and minimum
    /// separation so descriptors stay distinctive.
    pub fn build(rig: &CameraRig, texture_seed: u64) -> Self {
        let mut rng = stream_rng(texture_seed, 1);
        let k = &rig.k_master;
        let slave_pose = rig.slave_pose();
        let margin = 40.0;
        let min_sep = 32.0;
        let mut blobs: Vec<Blob> = Vec::new();
        let mut centers_px: Vec<(f64, f64)> = Vec::new();
        let mut attempts = 0usize;
        while blobs.len() < BLOB_TARGET_COUNT && attempts < BLOB_TARGET_COUNT * 60 {
            attempts += 1;
            let u = rng.random_range(margin..(k.width as f64 - 1.0 - margin));
            let v = rng.random_range(margin..(k.height as f64 - 1.0 - margin));
            let z = (rng.random_range(1500.0f64.ln()..8000.0f64.ln())).exp();
            if centers_px
                .iter()
                .any(|&(cx, cy)| (cx - u).hypot(cy - v) < min_sep)
            {
                continue;
            }
            let center = Point3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
            // Keep the blob visible in the slave view too.
            match project(&rig.k_slave, &slave_pose, center) {
                Ok(p)
                    if p.x >= 20.0
                        && p.x <= rig.k_slave.width as f64 - 21.0
                        && p.y >= 20.0
                        && p.y <= rig.k_slave.height as f64 - 21.0 => {}
                _ => continue,
            }
            let radius_px = rng.random_range(4.0..9.0);
            let radius_mm = radius_px * z / k.fx;
            let shape = if rng.random_range(0.0..1.0) < 0.5 {
                BlobShape::Disc
            } else {
                BlobShape::Square {
                    angle: rng.random_range(0.0..std::f64::consts::FRAC_PI_2),
                }
            };
            let intensity = if rng.random_range(0.0..1.0) < 0.5 {
                rng.random_range(15.0..65.0)
            } else {
                rng.random_range(185.0..240.0)
            };
            centers_px.push((u, v));
            blobs.push(Blob {
                center,
                radius_mm,
                shape,
                intensity,
                salt: splitmix(texture_seed ^ (blobs.len() as u64).wrapping_mul(0x9e37)),
            });
        }
        RenderedScene {
            plane_depth_mm: 4000.0,
            blobs,
            texture_seed,
        }
    }

    fn blob_hit(&self, blob: &Blob, x: f64, y: f64) -> bool {
        let dx = x - blob.center.x;
        let dy = y - blob.center.y;
        match blob.shape {
            BlobShape::Disc => dx * dx + dy * dy <= blob.radius_mm * blob.radius_mm,
            BlobShape::Square { angle } => {
                let (s, c) = angle.sin_cos();
                let ax = c * dx + s * dy;
                let ay = -s * dx + c * dy;
                ax.abs() <= blob.radius_mm && ay.abs() <= blob.radius_mm
            }
        }
    }

    /// Nearest surface along a world-space ray from `origin` with direction
    /// `dir` (dz > 0): intersection point and its shade.
    fn trace(
        &self,
        origin: Vector3<f64>,
        dir: Vector3<f64>,
        candidates: &[usize],
    ) -> (Point3, f64) {
        let mut best: Option<(f64, &Blob, f64, f64)> = None;
        for &i in candidates {
            let blob = &self.blobs[i];
            if dir.z.abs() < 1e-12 {
                continue;
            }
            let lambda = (blob.center.z - origin.z) / dir.z;
            if lambda <= 0.0 {
                continue;
            }
            let x = origin.x + lambda * dir.x;
            let y = origin.y + lambda * dir.y;
            if self.blob_hit(blob, x, y) {
                match best {
                    Some((z, ..)) if blob.center.z >= z => {}
                    _ => best = Some((blob.center.z, blob, x, y)),
                }
            }
        }
        if let Some((z, blob, x, y)) = best {
            let shade = blob.intensity + 12.0 * value_noise(x / 9.0, y / 9.0, blob.salt);
            return (Point3::new(x, y, z), shade);
        }
        let lambda = (self.plane_depth_mm - origin.z) / dir.z;
        let x = origin.x + lambda * dir.x;
        let y = origin.y + lambda * dir.y;
        (
            Point3::new(x, y, self.plane_depth_mm),
            background_intensity(x, y, self.texture_seed),
        )
    }

    /// Bucket grid of candidate blob indices for one camera.
    fn candidate_grid(
        &self,
        k: &CameraIntrinsics,
        body_rotation: &Matrix3<f64>,
        center: &Vector3<f64>,
    ) -> CandidateGrid {
        const BUCKET: u32 = 64;
        let nx = k.width.div_ceil(BUCKET) as usize;
        let ny = k.height.div_ceil(BUCKET) as usize;
        let mut grid = vec![Vec::new(); nx * ny];
        let r_wc = body_rotation.transpose();
        for (i, blob) in self.blobs.iter().enumerate() {
            let cam = r_wc * (blob.center.to_vector() - center);
            if cam.z <= 1.0 {
                continue;
            }
            let u = k.fx * cam.x / cam.z + k.cx;
            let v = k.fy * cam.y / cam.z + k.cy;
            // Squares reach radius*sqrt(2); add slack for rotation parallax.
            let reach = k.fx * blob.radius_mm * std::f64::consts::SQRT_2 / cam.z + 4.0;
            if u + reach < 0.0 || v + reach < 0.0 {
                continue;
            }
            let x0 = ((u - reach).floor().max(0.0) as u32 / BUCKET) as usize;
            let y0 = ((v - reach).floor().max(0.0) as u32 / BUCKET) as usize;
            let x1 = (((u + reach).ceil().min((k.width - 1) as f64) as u32) / BUCKET) as usize;
            let y1 = (((v + reach).ceil().min((k.height - 1) as f64) as u32) / BUCKET) as usize;
            for gy in y0..=y1.min(ny - 1) {
                for gx in x0..=x1.min(nx - 1) {
                    grid[gy * nx + gx].push(i);
                }
            }
        }
        CandidateGrid {
            grid,
            nx,
            bucket: BUCKET,
        }
    }

    fn render_camera(
        &self,
        k: &CameraIntrinsics,
        body_rotation: &Matrix3<f64>,
        center: &Vector3<f64>,
    ) -> Image {
        let grid = self.candidate_grid(k, body_rotation, center);
        let mut img = Image::new_gray(k.width, k.height);
        for py in 0..k.height {
            for px in 0..k.width {
                let d_cam =
                    Vector3::new((px as f64 - k.cx) / k.fx, (py as f64 - k.cy) / k.fy, 1.0);
                let dir = body_rotation * d_cam;
                let candidates = grid.at(px, py);
                let (_, shade) = self.trace(*center, dir, candidates);
                img.set(px, py, 0, shade.round().clamp(0.0, 255.0) as u8);
            }
        }
        img
    }

    /// Exact slave pixel for a master pixel: casts the master ray, finds the
    /// nearest surface, and projects it through the slave camera. `None` when
    /// the surface point falls behind or outside the slave image.
    pub fn slave_point_for_master_pixel(
        &self,
        rig: &CameraRig,
        x: f64,
        y: f64,
    ) -> Option<Point2H> {
        let k = &rig.k_master;
        let dir = Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
        let all: Vec<usize> = (0..self.blobs.len()).collect();
        let (p, _) = self.trace(Vector3::zeros(), dir, &all);
        let q = project(&rig.k_slave, &rig.slave_pose(), p).ok()?;
        let inside = q.x >= 0.0
            && q.x <= (rig.k_slave.width - 1) as f64
            && q.y >= 0.0
            && q.y <= (rig.k_slave.height - 1) as f64;
        inside.then_some(q)
    }
}

struct CandidateGrid {
    grid: Vec<Vec<usize>>,
    nx: usize,
    bucket: u32,
}

impl CandidateGrid {
    fn at(&self, px: u32, py: u32) -> &[usize] {
        &self.grid[(py / self.bucket) as usize * self.nx + (px / self.bucket) as usize]
    }
}

/// Renders the master/slave pair for a rig; deterministic in the seed.
pub fn render_pair(rig: &CameraRig, texture_seed: u64) -> (Image, Image) {
    let (master, slave, _) = render_pair_with_scene(rig, texture_seed);
    (master, slave)
}

/// Same as [`render_pair`] but also hands back the scene for ground-truth
/// geometry queries.
pub fn render_pair_with_scene(
    rig: &CameraRig,
    texture_seed: u64,
) -> (Image, Image, RenderedScene) {
    let scene = RenderedScene::build(rig, texture_seed);
    let master = scene.render_camera(&rig.k_master, &Matrix3::identity(), &Vector3::zeros());
    let slave = scene.render_camera(
        &rig.k_slave,
        &rig.perturbation.body_rotation(),
        &rig.perturbation.slave_center_mm(),
    );
    (master, slave, scene)
}

// ---------------------------------------------------------------------------
// Single-axis sweeps
// ---------------------------------------------------------------------------

/// The five perturbation variables that affect vertical alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    ThetaX,
    ThetaY,
    ThetaZ,
    TY,
    TZ,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::ThetaX => "theta_x",
            SweepAxis::ThetaY => "theta_y",
            SweepAxis::ThetaZ => "theta_z",
            SweepAxis::TY => "t_y",
            SweepAxis::TZ => "t_z",
        }
    }

    pub fn parse(name: &str) -> Option<SweepAxis> {
        match name {
            "theta_x" => Some(SweepAxis::ThetaX),
            "theta_y" => Some(SweepAxis::ThetaY),
            "theta_z" => Some(SweepAxis::ThetaZ),
            "t_y" => Some(SweepAxis::TY),
            "t_z" => Some(SweepAxis::TZ),
            _ => None,
        }
    }

    /// Default grid: rotations 0..3 deg, translations 0..4 mm (past the
    /// small-drift bound, to show the knee), both in 0.25 steps.
    pub fn default_grid(&self) -> Vec<f64> {
        let stop = match self {
            SweepAxis::ThetaX | SweepAxis::ThetaY | SweepAxis::ThetaZ => 3.0,
            SweepAxis::TY | SweepAxis::TZ => 4.0,
        };
        let mut grid = Vec::new();
        let mut i = 0;
        loop {
            let v = i as f64 * 0.25;
            if v > stop + 1e-9 {
                break;
            }
            grid.push(v);
            i += 1;
        }
        grid
    }

    fn apply_to(&self, value: f64) -> RigPerturbation {
        let mut p = RigPerturbation::zero();
        match self {
            SweepAxis::ThetaX => p.theta_x_deg = value,
            SweepAxis::ThetaY => p.theta_y_deg = value,
            SweepAxis::ThetaZ => p.theta_z_deg = value,
            SweepAxis::TY => p.t_y_mm = value,
            SweepAxis::TZ => p.t_z_mm = value,
        }
        p
    }
}

/// PAP thresholds a sweep row reports.
pub const SWEEP_EPSILONS: [f64; 3] = [1.0, 2.0, 3.0];

#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub value: f64,
    pub pap: [f64; 3],
    /// Reference accuracy of calibrated rectification with the ground-truth
    /// parameters, when requested.
    pub calrec_pap: Option<[f64; 3]>,
}

/// Varies one perturbation variable at a time against a fixed scene (same
/// seed for every row, so keypoint variation does not pollute the curve) and
/// reports PAP at ε = 1, 2, 3 after a fresh solve per row.
pub fn small_drift_sweep(
    axis: SweepAxis,
    values: &[f64],
    scene: &SceneSpec,
    cfg: &RansacConfig,
    with_calrec_reference: bool,
) -> Result<Vec<SweepRow>, RigError> {
    let identity = crate::geometry::Homography::identity();
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let rig = CameraRig::from_perturbation(axis.apply_to(value));
        let (corr, _) = generate_correspondences(&rig, scene)?;
        let result = solver::dsr(&corr, cfg)?;
        let rep = metrics::pap(&corr, &identity, &result.h_total, &SWEEP_EPSILONS)?;
        let pap = [rep.pap[0], rep.pap[1], rep.pap[2]];
        let calrec_pap = if with_calrec_reference {
            let (h_m, h_s) = baselines::calibrated_rectify(&rig.to_calibrated())?;
            let rep = metrics::pap(&corr, &h_m, &h_s, &SWEEP_EPSILONS)?;
            Some([rep.pap[0], rep.pap[1], rep.pap[2]])
        } else {
            None
        };
        rows.push(SweepRow {
            value,
            pap,
            calrec_pap,
        });
    }
    Ok(rows)
}
