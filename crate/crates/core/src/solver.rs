//! Direct self-rectification: a single homography for the slave image,
//! decomposed as H = Hk · Hs · Hy.
//!
//! Hy aligns the vertical coordinate of corresponding points by robust
//! least-squares regression, Hs is the shearing transform that undoes the
//! geometric distortion Hy introduces, and Hk shifts the slave horizontally
//! so the maximum disparity becomes zero. The master image is never touched.

use crate::geometry::{GeometryError, Homography, Point2H, PROJECTIVE_EPS};
use nalgebra::{DMatrix, DVector, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Minimum number of correspondences: the regression has five unknowns.
pub const MIN_PAIRS: usize = 5;

/// Smallest singular value (after coordinate normalization) below which a
/// sample is rejected as degenerate.
pub const DEGENERACY_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("need at least {required} correspondences, got {actual}")]
    InsufficientData { required: usize, actual: usize },
    #[error("degenerate point configuration (smallest singular value {sigma_min:e})")]
    DegenerateConfiguration { sigma_min: f64 },
    #[error("no usable alignment model after {iterations} iterations")]
    NoModel { iterations: usize },
    #[error("empty inlier set for shift computation")]
    EmptyInlierSet,
    #[error("shearing undefined: midpoint configuration degenerate ({reason})")]
    DistortionUndefined { reason: String },
    #[error("invalid solver configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("malformed correspondence text: {reason}")]
    MalformedText { reason: String },
}

/// Matched point pairs between the master image and the slave image, plus
/// the dimensions of the slave image the homography will be applied to.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pairs: Vec<(Point2H, Point2H)>,
    image_width: u32,
    image_height: u32,
}

impl CorrespondenceSet {
    /// Points are normalized to unit weight; all coordinates must be finite.
    pub fn new(
        pairs: Vec<(Point2H, Point2H)>,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self, SolveError> {
        if image_width == 0 || image_height == 0 {
            return Err(SolveError::InvalidConfig {
                reason: "zero image dimension".into(),
            });
        }
        let mut normalized = Vec::with_capacity(pairs.len());
        for (master, slave) in pairs {
            let m = master
                .normalized()
                .ok_or(GeometryError::NonFinite { context: "master point" })?;
            let s = slave
                .normalized()
                .ok_or(GeometryError::NonFinite { context: "slave point" })?;
            if !(m.is_finite() && s.is_finite()) {
                return Err(SolveError::Geometry(GeometryError::NonFinite {
                    context: "correspondence",
                }));
            }
            normalized.push((m, s));
        }
        Ok(CorrespondenceSet {
            pairs: normalized,
            image_width,
            image_height,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn master(&self, i: usize) -> Point2H {
        self.pairs[i].0
    }

    pub fn slave(&self, i: usize) -> Point2H {
        self.pairs[i].1
    }

    pub fn pairs(&self) -> &[(Point2H, Point2H)] {
        &self.pairs
    }

    pub fn image_width(&self) -> u32 {
        self.image_width
    }

    pub fn image_height(&self) -> u32 {
        self.image_height
    }

    /// Keeps the pairs at indices where `keep` is true.
    pub fn filtered(&self, keep: &[bool]) -> CorrespondenceSet {
        let pairs = self
            .pairs
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(p, _)| *p)
            .collect();
        CorrespondenceSet {
            pairs,
            image_width: self.image_width,
            image_height: self.image_height,
        }
    }

    /// On-disk format: header `N width height`, then `N` lines `x y x' y'`.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {} {}\n",
            self.pairs.len(),
            self.image_width,
            self.image_height
        );
        for (m, s) in &self.pairs {
            out.push_str(&format!(
                "{:.15e} {:.15e} {:.15e} {:.15e}\n",
                m.x, m.y, s.x, s.y
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SolveError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| SolveError::MalformedText {
            reason: "empty file".into(),
        })?;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 3 {
            return Err(SolveError::MalformedText {
                reason: format!("header must be `N width height`, got {header:?}"),
            });
        }
        let n: usize = head[0].parse().map_err(|_| SolveError::MalformedText {
            reason: format!("bad count {:?}", head[0]),
        })?;
        let width: u32 = head[1].parse().map_err(|_| SolveError::MalformedText {
            reason: format!("bad width {:?}", head[1]),
        })?;
        let height: u32 = head[2].parse().map_err(|_| SolveError::MalformedText {
            reason: format!("bad height {:?}", head[2]),
        })?;
        let mut pairs = Vec::with_capacity(n);
        for line in lines {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| SolveError::MalformedText {
                        reason: format!("not a number: {t:?}"),
                    })
                })
                .collect::<Result<_, _>>()?;
            if vals.len() != 4 {
                return Err(SolveError::MalformedText {
                    reason: format!("expected 4 fields per line, got {}", vals.len()),
                });
            }
            pairs.push((Point2H::new(vals[0], vals[1]), Point2H::new(vals[2], vals[3])));
        }
        if pairs.len() != n {
            return Err(SolveError::MalformedText {
                reason: format!("header says {n} pairs, file has {}", pairs.len()),
            });
        }
        CorrespondenceSet::new(pairs, width, height)
    }
}

/// RANSAC parameters for the Hy regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Pairs per random sample (M). Must be at least [`MIN_PAIRS`].
    pub sample_size: usize,
    /// Iteration budget (T).
    pub max_iterations: usize,
    /// Vertical-displacement inlier threshold in pixels (strict `<`).
    pub inlier_threshold: f64,
    pub seed: u64,
    /// Refit once on the consensus set of the best sample. Off by default:
    /// the stock algorithm keeps the best sample fit as-is.
    pub refit_on_inliers: bool,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            sample_size: 20,
            max_iterations: 100,
            inlier_threshold: 1.0,
            seed: 0,
            refit_on_inliers: false,
        }
    }
}

impl RansacConfig {
    fn validate(&self) -> Result<(), SolveError> {
        if self.sample_size < MIN_PAIRS {
            return Err(SolveError::InvalidConfig {
                reason: format!("sample_size must be >= {MIN_PAIRS}"),
            });
        }
        if self.max_iterations == 0 {
            return Err(SolveError::InvalidConfig {
                reason: "max_iterations must be >= 1".into(),
            });
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(SolveError::InvalidConfig {
                reason: "inlier_threshold must be > 0".into(),
            });
        }
        Ok(())
    }
}

/// Which pairs feed the Hk shift maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShiftScope {
    /// Only RANSAC inliers; outliers must not dictate the shift.
    #[default]
    Inliers,
    /// Every pair in the set.
    All,
}

/// Output of [`solve_hy_ransac`].
#[derive(Debug, Clone)]
pub struct RansacOutcome {
    pub h_y: Homography,
    /// Marks exactly the pairs with vertical displacement `< ε` under `h_y`.
    pub inlier_mask: Vec<bool>,
    /// Best inlier ratio seen (count of `inlier_mask` over N).
    pub p_max: f64,
    pub iterations_used: usize,
}

/// Full decomposition result. `h_total = h_k · h_s · h_y` exactly.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub h_y: Homography,
    pub h_s: Homography,
    pub h_k: Homography,
    pub h_total: Homography,
    pub inlier_mask: Vec<bool>,
    pub inlier_ratio: f64,
    pub s_a: f64,
    pub s_b: f64,
    /// Maximum of (transformed slave x − master x) before shifting, as
    /// defined by the shifting step; the (1,3) entry of `h_k` is `-k` so
    /// that the maximum becomes zero after the full transform.
    pub shift_k: f64,
    pub iterations_used: usize,
}

impl SolveResult {
    /// Structured key/value serialization with the four matrices in the
    /// shared 3x3 text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("h_y:\n");
        out.push_str(&self.h_y.to_text());
        out.push_str("h_s:\n");
        out.push_str(&self.h_s.to_text());
        out.push_str("h_k:\n");
        out.push_str(&self.h_k.to_text());
        out.push_str("h_total:\n");
        out.push_str(&self.h_total.to_text());
        let mask: String = self
            .inlier_mask
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect();
        out.push_str(&format!("inlier_mask: {mask}\n"));
        out.push_str(&format!("p_max: {:.15e}\n", self.inlier_ratio));
        out.push_str(&format!("s_a: {:.15e}\n", self.s_a));
        out.push_str(&format!("s_b: {:.15e}\n", self.s_b));
        out.push_str(&format!("k: {:.15e}\n", self.shift_k));
        out.push_str(&format!("iterations_used: {}\n", self.iterations_used));
        out
    }
}

/// Vertical coordinate of a slave point mapped by an Hy-shaped homography,
/// `(h21 x' + h22 y' + h23) / (h31 x' + h32 y' + h33)`. `None` when the
/// denominator vanishes.
fn mapped_y(h: &Homography, slave: Point2H) -> Option<f64> {
    let m = h.matrix();
    let den = m[(2, 0)] * slave.x + m[(2, 1)] * slave.y + m[(2, 2)];
    if den.abs() <= PROJECTIVE_EPS {
        return None;
    }
    let num = m[(1, 0)] * slave.x + m[(1, 1)] * slave.y + m[(1, 2)];
    Some(num / den)
}

/// Least-squares fit of the vertical-alignment homography on the pairs at
/// `idx`. Solved in normalized coordinates (master rows centered and scaled,
/// slave scaled about the origin), which reparametrizes the raw objective
/// exactly: the returned matrix is the minimizer of
/// Σ (h2·p' − (h3·p')·y)² in original pixel coordinates.
fn fit_hy_on(pairs: &[(Point2H, Point2H)], idx: &[usize]) -> Result<Homography, SolveError> {
    let n = idx.len();
    if n < MIN_PAIRS {
        return Err(SolveError::InsufficientData {
            required: MIN_PAIRS,
            actual: n,
        });
    }

    // Master y: center and scale to RMS sqrt(2). Translating the regression
    // target is solution-preserving.
    let c_y = idx.iter().map(|&i| pairs[i].0.y).sum::<f64>() / n as f64;
    let rms_m = (idx
        .iter()
        .map(|&i| (pairs[i].0.y - c_y).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let s_m = if rms_m > 1e-9 { std::f64::consts::SQRT_2 / rms_m } else { 1.0 };

    // Slave: scale about the origin only. A slave-side translation would
    // re-weight the residuals and change the minimizer.
    let rms_s = (idx
        .iter()
        .map(|&i| {
            let s = pairs[i].1;
            s.x * s.x + s.y * s.y
        })
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let s_s = if rms_s > 1e-9 { std::f64::consts::SQRT_2 / rms_s } else { 1.0 };

    let mut a = DMatrix::<f64>::zeros(n, 5);
    let mut b = DVector::<f64>::zeros(n);
    for (row, &i) in idx.iter().enumerate() {
        let (m, s) = pairs[i];
        let xs = s.x * s_s;
        let ys = s.y * s_s;
        let ym = (m.y - c_y) * s_m;
        a[(row, 0)] = xs;
        a[(row, 1)] = ys;
        a[(row, 2)] = 1.0;
        a[(row, 3)] = -xs * ym;
        a[(row, 4)] = -ys * ym;
        b[row] = ym;
    }

    let svd = a.svd(true, true);
    let sigma_min = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(sigma_min > DEGENERACY_THRESHOLD) {
        return Err(SolveError::DegenerateConfiguration { sigma_min });
    }
    let h = svd
        .solve(&b, DEGENERACY_THRESHOLD)
        .map_err(|e| SolveError::InvalidConfig { reason: e.to_string() })?;

    // Undo the normalization; the first row is pinned to (1, 0, 0).
    let h31 = h[3] * s_s;
    let h32 = h[4] * s_s;
    let h21 = s_s * (h[0] / s_m + c_y * h[3]);
    let h22 = s_s * (h[1] / s_m + c_y * h[4]);
    let h23 = h[2] / s_m + c_y;
    let m = Matrix3::new(1.0, 0.0, 0.0, h21, h22, h23, h31, h32, 1.0);
    Homography::from_matrix(m).map_err(|e| match e {
        GeometryError::Singular { det } => SolveError::DegenerateConfiguration { sigma_min: det },
        other => SolveError::Geometry(other),
    })
}

/// Least-squares Hy on every pair of `subset` (no RANSAC).
pub fn fit_hy_least_squares(subset: &CorrespondenceSet) -> Result<Homography, SolveError> {
    let idx: Vec<usize> = (0..subset.len()).collect();
    fit_hy_on(subset.pairs(), &idx)
}

fn inlier_mask(pairs: &[(Point2H, Point2H)], h: &Homography, eps: f64) -> Vec<bool> {
    pairs
        .iter()
        .map(|&(m, s)| match mapped_y(h, s) {
            Some(y) => (m.y - y).abs() < eps,
            None => false,
        })
        .collect()
}

/// Robust Hy estimation: repeated minimal-sample regression keeping the
/// model with the largest inlier percentage. Deterministic in `cfg.seed`;
/// equal inlier counts keep the earlier model. When there are fewer pairs
/// than `cfg.sample_size` the fit runs once on all pairs instead.
pub fn solve_hy_ransac(
    corr: &CorrespondenceSet,
    cfg: &RansacConfig,
) -> Result<RansacOutcome, SolveError> {
    cfg.validate()?;
    let n = corr.len();
    if n < MIN_PAIRS {
        return Err(SolveError::InsufficientData {
            required: MIN_PAIRS,
            actual: n,
        });
    }
    let pairs = corr.pairs();

    if n < cfg.sample_size {
        let h_y = fit_hy_least_squares(corr)?;
        let mask = inlier_mask(pairs, &h_y, cfg.inlier_threshold);
        let count = mask.iter().filter(|&&b| b).count();
        return Ok(RansacOutcome {
            h_y,
            inlier_mask: mask,
            p_max: count as f64 / n as f64,
            iterations_used: 1,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Homography, usize)> = None;
    for _ in 0..cfg.max_iterations {
        let sample = rand::seq::index::sample(&mut rng, n, cfg.sample_size).into_vec();
        let candidate = match fit_hy_on(pairs, &sample) {
            Ok(h) => h,
            Err(_) => continue, // degenerate sample: skip, keep the slot
        };
        let count = inlier_mask(pairs, &candidate, cfg.inlier_threshold)
            .iter()
            .filter(|&&b| b)
            .count();
        let improved = match &best {
            Some((_, best_count)) => count > *best_count,
            None => count > 0,
        };
        if improved {
            best = Some((candidate, count));
        }
    }

    let (mut h_y, _) = best.ok_or(SolveError::NoModel {
        iterations: cfg.max_iterations,
    })?;

    if cfg.refit_on_inliers {
        let mask = inlier_mask(pairs, &h_y, cfg.inlier_threshold);
        let idx: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect();
        if idx.len() >= MIN_PAIRS {
            if let Ok(refined) = fit_hy_on(pairs, &idx) {
                h_y = refined;
            }
        }
    }

    let mask = inlier_mask(pairs, &h_y, cfg.inlier_threshold);
    let count = mask.iter().filter(|&&b| b).count();
    Ok(RansacOutcome {
        h_y,
        inlier_mask: mask,
        p_max: count as f64 / n as f64,
        iterations_used: cfg.max_iterations,
    })
}

/// Shearing transform that restores the perpendicularity and aspect ratio of
/// the slave image's edge-midpoint lines after Hy. Rows 2 and 3 are identity
/// rows, so no y-coordinate changes.
pub fn compute_shear(
    h_y: &Homography,
    width: u32,
    height: u32,
) -> Result<(f64, f64, Homography), SolveError> {
    let w = width as f64;
    let h = height as f64;
    let mids = [
        Point2H::new((w - 1.0) / 2.0, 0.0),       // a: top
        Point2H::new(w - 1.0, (h - 1.0) / 2.0),   // b: right
        Point2H::new((w - 1.0) / 2.0, h - 1.0),   // c: bottom
        Point2H::new(0.0, (h - 1.0) / 2.0),       // d: left
    ];
    let mut mapped = [Point2H::new(0.0, 0.0); 4];
    for (slot, p) in mapped.iter_mut().zip(mids) {
        let q = h_y.apply(p)?;
        if q.is_direction() {
            return Err(SolveError::DistortionUndefined {
                reason: "edge midpoint maps to infinity".into(),
            });
        }
        *slot = q;
    }
    let (a, b, c, d) = (mapped[0], mapped[1], mapped[2], mapped[3]);
    let (ux, uy) = (b.x - d.x, b.y - d.y);
    let (vx, vy) = (a.x - c.x, a.y - c.y);

    let den = h * w * (uy * vx - ux * vy);
    if den.abs() < PROJECTIVE_EPS {
        return Err(SolveError::DistortionUndefined {
            reason: format!("denominator {den:e}"),
        });
    }
    let mut s_a = (h * h * uy * uy + w * w * vy * vy) / den;
    let mut s_b = (h * h * ux * uy + w * w * vx * vy) / (h * w * (ux * vy - uy * vx));
    if s_a < 0.0 {
        // The closed form is determined up to sign; a mirror flip is never
        // wanted for rectification.
        s_a = -s_a;
        s_b = -s_b;
    }
    let m = Matrix3::new(s_a, s_b, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
    let h_s = Homography::from_matrix(m).map_err(|_| SolveError::DistortionUndefined {
        reason: format!("singular shear (s_a = {s_a:e})"),
    })?;
    Ok((s_a, s_b, h_s))
}

/// Shift so the maximum of (transformed slave x − master x) becomes zero.
/// `h_pre` is the transform already applied to slave points (Hs·Hy);
/// `select`, when given, restricts the maximum to the marked pairs.
pub fn compute_shift(
    corr: &CorrespondenceSet,
    h_pre: &Homography,
    select: Option<&[bool]>,
) -> Result<(f64, Homography), SolveError> {
    let mut k = f64::NEG_INFINITY;
    for (i, &(m, s)) in corr.pairs().iter().enumerate() {
        if let Some(mask) = select {
            if !mask[i] {
                continue;
            }
        }
        let q = h_pre.apply(s)?;
        if q.is_direction() || !q.is_finite() {
            continue;
        }
        k = k.max(q.x - m.x);
    }
    if !k.is_finite() {
        return Err(SolveError::EmptyInlierSet);
    }
    let h_k = Homography::translation(-k, 0.0);
    Ok((k, h_k))
}

/// The full pipeline on one correspondence set. The shift maximum runs over
/// RANSAC inliers; see [`dsr_with_shift_scope`] to use every pair instead.
pub fn dsr(corr: &CorrespondenceSet, cfg: &RansacConfig) -> Result<SolveResult, SolveError> {
    dsr_with_shift_scope(corr, cfg, ShiftScope::Inliers)
}

pub fn dsr_with_shift_scope(
    corr: &CorrespondenceSet,
    cfg: &RansacConfig,
    scope: ShiftScope,
) -> Result<SolveResult, SolveError> {
    let outcome = solve_hy_ransac(corr, cfg)?;
    let (s_a, s_b, h_s) = compute_shear(&outcome.h_y, corr.image_width(), corr.image_height())?;
    let h_pre = h_s.compose(&outcome.h_y)?;
    let select = match scope {
        ShiftScope::Inliers => Some(outcome.inlier_mask.as_slice()),
        ShiftScope::All => None,
    };
    let (shift_k, h_k) = compute_shift(corr, &h_pre, select)?;
    let h_total = h_k.compose(&h_pre)?;
    let n = corr.len() as f64;
    let count = outcome.inlier_mask.iter().filter(|&&b| b).count() as f64;
    Ok(SolveResult {
        h_y: outcome.h_y,
        h_s,
        h_k,
        h_total,
        inlier_mask: outcome.inlier_mask,
        inlier_ratio: count / n,
        s_a,
        s_b,
        shift_k,
        iterations_used: outcome.iterations_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        exact_rotation_homography, project, rotation_from_euler_deg, CameraIntrinsics, Point3,
        RigidPose,
    };
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::Rng;

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(800.0, 800.0, 479.5, 359.5, 960, 720).unwrap()
    }

    /// Raw vertical-alignment objective, evaluated exactly as written.
    fn raw_objective(pairs: &[(Point2H, Point2H)], h: &Homography) -> f64 {
        let m = h.matrix();
        pairs
            .iter()
            .map(|&(p, s)| {
                let num = m[(1, 0)] * s.x + m[(1, 1)] * s.y + m[(1, 2)];
                let den = m[(2, 0)] * s.x + m[(2, 1)] * s.y + m[(2, 2)];
                (num - den * p.y).powi(2)
            })
            .sum()
    }

    fn hy_from_params(p: [f64; 5]) -> Homography {
        Homography::from_matrix(Matrix3::new(
            1.0, 0.0, 0.0, p[0], p[1], p[2], p[3], p[4], 1.0,
        ))
        .unwrap()
    }

    /// Correspondences generated by a co-located rotated slave camera; the
    /// exact alignment homography exists by construction.
    fn rotation_rig_pairs(
        n: usize,
        seed: u64,
        theta: (f64, f64, f64),
    ) -> (CorrespondenceSet, Homography) {
        let k = intrinsics();
        let r = rotation_from_euler_deg(theta.0, theta.1, theta.2).transpose();
        let pose_master = RigidPose::identity();
        let pose_slave = RigidPose::new(r, Vector3::zeros()).unwrap();
        let mut rng = crate::rng::stream_rng(seed, 0);
        let mut pairs = Vec::new();
        while pairs.len() < n {
            let p = Point3::new(
                rng.random_range(-3000.0..3000.0),
                rng.random_range(-2000.0..2000.0),
                rng.random_range(800.0..9000.0),
            );
            let m = match project(&k, &pose_master, p) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let s = match project(&k, &pose_slave, p) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let inside = |q: Point2H| q.x >= 0.0 && q.x <= 959.0 && q.y >= 0.0 && q.y <= 719.0;
            if inside(m) && inside(s) {
                pairs.push((m, s));
            }
        }
        let corr = CorrespondenceSet::new(pairs, 960, 720).unwrap();
        let h_exact = exact_rotation_homography(&k, &k, &r).unwrap();
        (corr, h_exact)
    }

    fn max_vertical_residual(corr: &CorrespondenceSet, h: &Homography) -> f64 {
        corr.pairs()
            .iter()
            .map(|&(m, s)| (mapped_y(h, s).unwrap() - m.y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn fit_hy_exact_row_aligned_data_gives_identity() {
        let pts = [
            (10.0, 20.0),
            (800.0, 30.0),
            (400.0, 700.0),
            (120.0, 360.0),
            (900.0, 500.0),
            (333.0, 111.0),
        ];
        let pairs: Vec<_> = pts
            .iter()
            .map(|&(x, y)| (Point2H::new(x, y), Point2H::new(x - 15.0, y)))
            .collect();
        let corr = CorrespondenceSet::new(pairs, 960, 720).unwrap();
        let h = fit_hy_least_squares(&corr).unwrap();
        let expect = Matrix3::identity();
        for r in 0..3 {
            for c in 0..3 {
                assert_relative_eq!(h.entry(r, c), expect[(r, c)], epsilon = 1e-9);
            }
        }
        assert!(raw_objective(corr.pairs(), &h) < 1e-12);
    }

    #[test]
    fn fit_hy_recovers_exact_rotation_alignment() {
        let (corr, _) = rotation_rig_pairs(60, 1, (1.5, -2.0, 2.5));
        let h = fit_hy_least_squares(&corr).unwrap();
        assert!(max_vertical_residual(&corr, &h) < 1e-6);
    }

    #[test]
    fn fit_hy_is_a_local_minimum_of_the_raw_objective() {
        // Noisy instance: closed form must beat 10k random perturbations.
        let (corr, _) = rotation_rig_pairs(20, 2, (0.5, 1.0, -1.5));
        let mut rng = crate::rng::stream_rng(77, 0);
        let noisy: Vec<_> = corr
            .pairs()
            .iter()
            .map(|&(m, s)| {
                (
                    m,
                    Point2H::new(
                        s.x + rng.random_range(-0.5..0.5),
                        s.y + rng.random_range(-0.5..0.5),
                    ),
                )
            })
            .collect();
        let corr = CorrespondenceSet::new(noisy, 960, 720).unwrap();
        let h = fit_hy_least_squares(&corr).unwrap();
        let m = h.matrix();
        let base = [m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)]];
        let f0 = raw_objective(corr.pairs(), &h);
        for _ in 0..10_000 {
            let mut p = base;
            for v in &mut p {
                *v += rng.random_range(-0.01..0.01);
            }
            let f = raw_objective(corr.pairs(), &hy_from_params(p));
            assert!(f + 1e-12 >= f0, "perturbation beat the closed form: {f} < {f0}");
        }
    }

    #[test]
    fn fit_hy_rejects_degenerate_and_small_inputs() {
        // Collinear slave points: rank-deficient design matrix.
        let pairs: Vec<_> = (0..8)
            .map(|i| {
                let t = i as f64 * 50.0;
                (Point2H::new(t, 100.0 + t), Point2H::new(t, t))
            })
            .collect();
        let corr = CorrespondenceSet::new(pairs, 960, 720).unwrap();
        assert!(matches!(
            fit_hy_least_squares(&corr),
            Err(SolveError::DegenerateConfiguration { .. })
        ));

        let few: Vec<_> = (0..4)
            .map(|i| (Point2H::new(i as f64, 1.0), Point2H::new(i as f64, 2.0)))
            .collect();
        let corr = CorrespondenceSet::new(few, 960, 720).unwrap();
        assert!(matches!(
            fit_hy_least_squares(&corr),
            Err(SolveError::InsufficientData { required: 5, actual: 4 })
        ));
    }

    #[test]
    fn ransac_outlier_free_data_is_fully_inlying() {
        let (corr, _) = rotation_rig_pairs(80, 3, (2.0, 1.0, -2.0));
        let cfg = RansacConfig::default();
        let out = solve_hy_ransac(&corr, &cfg).unwrap();
        assert_eq!(out.p_max, 1.0);
        assert!(out.inlier_mask.iter().all(|&b| b));
        let full = fit_hy_least_squares(&corr).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_relative_eq!(out.h_y.entry(r, c), full.entry(r, c), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn ransac_excludes_gross_outliers() {
        let (clean, _) = rotation_rig_pairs(100, 4, (1.0, -1.0, 1.5));
        let mut pairs = clean.pairs().to_vec();
        let mut rng = crate::rng::stream_rng(5, 0);
        let n = pairs.len();
        // 20% outliers, at least 50 px of vertical displacement.
        let outliers: Vec<usize> = rand::seq::index::sample(&mut rng, n, n / 5).into_vec();
        for &i in &outliers {
            let dy = 50.0 + rng.random_range(0.0..200.0);
            let sign = if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
            let s = pairs[i].1;
            pairs[i].1 = Point2H::new(s.x, (s.y + sign * dy).clamp(-400.0, 1100.0));
        }
        let corr = CorrespondenceSet::new(pairs, 960, 720).unwrap();
        let out = solve_hy_ransac(&corr, &RansacConfig::default()).unwrap();
        for &i in &outliers {
            assert!(!out.inlier_mask[i], "outlier {i} marked inlier");
        }
        for (i, &(m, s)) in corr.pairs().iter().enumerate() {
            if !outliers.contains(&i) {
                let res = (mapped_y(&out.h_y, s).unwrap() - m.y).abs();
                assert!(res < 1e-6, "inlier {i} residual {res}");
            }
        }
    }

    #[test]
    fn ransac_falls_back_to_single_full_fit() {
        let (corr, _) = rotation_rig_pairs(10, 6, (0.5, 0.5, 0.5));
        let cfg = RansacConfig::default(); // sample_size 20 > N = 10
        let out = solve_hy_ransac(&corr, &cfg).unwrap();
        assert_eq!(out.iterations_used, 1);
        assert_eq!(out.p_max, 1.0);
    }

    #[test]
    fn ransac_p_max_monotone_in_iteration_budget() {
        let (clean, _) = rotation_rig_pairs(60, 8, (1.0, 2.0, -1.0));
        let mut pairs = clean.pairs().to_vec();
        let mut rng = crate::rng::stream_rng(9, 0);
        for i in 0..18 {
            let s = pairs[i * 3].1;
            pairs[i * 3].1 = Point2H::new(s.x, s.y + rng.random_range(20.0..80.0));
        }
        let corr = CorrespondenceSet::new(pairs, 960, 720).unwrap();
        let mut last = 0.0;
        for t in 1..40 {
            let cfg = RansacConfig {
                max_iterations: t,
                sample_size: 8,
                ..RansacConfig::default()
            };
            // A tiny budget may legitimately find no model yet; that counts
            // as the initial p_max of zero.
            let p = match solve_hy_ransac(&corr, &cfg) {
                Ok(out) => out.p_max,
                Err(SolveError::NoModel { .. }) => 0.0,
                Err(other) => panic!("unexpected error: {other}"),
            };
            assert!(
                p + 1e-15 >= last,
                "p_max decreased from {last} to {p} at T={t}"
            );
            last = p;
        }
    }

    #[test]
    fn shear_identity_case_matches_closed_form() {
        let (s_a, s_b, h_s) = compute_shear(&Homography::identity(), 960, 720).unwrap();
        assert_relative_eq!(s_a, 960.0 * 719.0 / (720.0 * 959.0), epsilon = 1e-12);
        assert_relative_eq!(s_b, 0.0, epsilon = 1e-12);
        assert_eq!(h_s.entry(1, 1), 1.0);
        assert_eq!(h_s.entry(2, 2), 1.0);
    }

    #[test]
    fn shear_satisfies_perpendicularity_and_aspect_residuals() {
        // Substitute the returned (s_a, s_b) back into the constraints.
        let (corr, _) = rotation_rig_pairs(40, 10, (2.5, -2.0, 3.0));
        let h_y = fit_hy_least_squares(&corr).unwrap();
        let (s_a, s_b, _) = compute_shear(&h_y, 960, 720).unwrap();
        let (w, h) = (960.0f64, 720.0f64);
        let mid = |x: f64, y: f64| h_y.apply(Point2H::new(x, y)).unwrap();
        let a = mid((w - 1.0) / 2.0, 0.0);
        let b = mid(w - 1.0, (h - 1.0) / 2.0);
        let c = mid((w - 1.0) / 2.0, h - 1.0);
        let d = mid(0.0, (h - 1.0) / 2.0);
        let u = (b.x - d.x, b.y - d.y);
        let v = (a.x - c.x, a.y - c.y);
        let su = (s_a * u.0 + s_b * u.1, u.1);
        let sv = (s_a * v.0 + s_b * v.1, v.1);
        let norm_u = (u.0 * u.0 + u.1 * u.1).sqrt();
        let norm_v = (v.0 * v.0 + v.1 * v.1).sqrt();
        let dot = su.0 * sv.0 + su.1 * sv.1;
        assert!(dot.abs() < 1e-9 * norm_u * norm_v, "perpendicularity residual {dot:e}");
        let ratio = (su.0 * su.0 + su.1 * su.1) / (sv.0 * sv.0 + sv.1 * sv.1);
        assert_relative_eq!(ratio, (w * w) / (h * h), max_relative = 1e-9);
    }

    #[test]
    fn shear_is_continuous_near_identity() {
        let (ia, ib, _) = compute_shear(&Homography::identity(), 960, 720).unwrap();
        let h_y = Homography::from_matrix(Matrix3::new(
            1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1e-4, 0.0, 1.0,
        ))
        .unwrap();
        let (s_a, s_b, _) = compute_shear(&h_y, 960, 720).unwrap();
        assert!(s_a.is_finite() && s_b.is_finite());
        assert!((s_a - ia).abs() / ia.abs() < 0.1, "s_a {s_a} vs {ia}");
        assert!((s_b - ib).abs() < 0.1, "s_b {s_b} vs {ib}");
    }

    #[test]
    fn shear_degenerate_midpoints_error() {
        // Third row sends the horizontal midline y = 359.5 to infinity, so
        // the right-edge midpoint has no finite image.
        let h_y = Homography::from_matrix(Matrix3::new(
            1.0,
            0.0,
            0.0,
            0.0,
            1.0,
            0.0,
            0.0,
            -1.0 / 359.5,
            1.0,
        ))
        .unwrap();
        assert!(matches!(
            compute_shear(&h_y, 960, 720),
            Err(SolveError::DistortionUndefined { .. })
        ));
    }

    #[test]
    fn shift_takes_the_maximum_difference() {
        // Differences {-10, -5, -7} -> k = -5.
        let pairs = vec![
            (Point2H::new(110.0, 10.0), Point2H::new(100.0, 10.0)),
            (Point2H::new(205.0, 20.0), Point2H::new(200.0, 20.0)),
            (Point2H::new(307.0, 30.0), Point2H::new(300.0, 30.0)),
        ];
        let corr = CorrespondenceSet::new(pairs, 960, 720).unwrap();
        let (k, h_k) = compute_shift(&corr, &Homography::identity(), None).unwrap();
        assert_relative_eq!(k, -5.0, epsilon = 1e-12);
        // After the shift the differences become {-5, 0, -2}.
        let diffs: Vec<f64> = corr
            .pairs()
            .iter()
            .map(|&(m, s)| h_k.apply(s).unwrap().x - m.x)
            .collect();
        assert_relative_eq!(diffs[0], -5.0, epsilon = 1e-12);
        assert_relative_eq!(diffs[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(diffs[2], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn shift_zero_when_max_difference_is_zero() {
        let pairs = vec![
            (Point2H::new(100.0, 10.0), Point2H::new(100.0, 10.0)),
            (Point2H::new(208.0, 20.0), Point2H::new(200.0, 20.0)),
        ];
        let corr = CorrespondenceSet::new(pairs, 960, 720).unwrap();
        let (k, h_k) = compute_shift(&corr, &Homography::identity(), None).unwrap();
        assert_eq!(k, 0.0);
        assert_eq!(h_k.matrix(), Homography::identity().matrix());
    }

    #[test]
    fn shift_errors_on_empty_selection() {
        let pairs = vec![(Point2H::new(1.0, 1.0), Point2H::new(1.0, 1.0))];
        let corr = CorrespondenceSet::new(pairs, 960, 720).unwrap();
        let mask = vec![false];
        assert!(matches!(
            compute_shift(&corr, &Homography::identity(), Some(&mask)),
            Err(SolveError::EmptyInlierSet)
        ));
    }

    #[test]
    fn dsr_on_pure_horizontal_disparity_is_horizontal_only() {
        let mut rng = crate::rng::stream_rng(12, 0);
        let shift = 20.0;
        let pairs: Vec<_> = (0..40)
            .map(|_| {
                let x = rng.random_range(40.0..920.0);
                let y = rng.random_range(20.0..700.0);
                (Point2H::new(x, y), Point2H::new(x - shift, y))
            })
            .collect();
        let corr = CorrespondenceSet::new(pairs, 960, 720).unwrap();
        let res = dsr(&corr, &RansacConfig::default()).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert_relative_eq!(res.h_y.entry(r, c), want, epsilon = 1e-9);
            }
        }
        assert_relative_eq!(res.s_b, 0.0, epsilon = 1e-9);
        // s_a is the aspect-correcting value, so k absorbs a touch of it.
        assert!((res.shift_k + shift).abs() < 0.5, "k = {}", res.shift_k);
        // Rows 2 and 3 of the full transform stay identity: horizontal-only.
        for (r, c, want) in [(1, 0, 0.0), (1, 1, 1.0), (1, 2, 0.0), (2, 0, 0.0), (2, 1, 0.0)] {
            assert_relative_eq!(res.h_total.entry(r, c), want, epsilon = 1e-9);
        }
    }

    #[test]
    fn dsr_composition_is_exact() {
        let (corr, _) = rotation_rig_pairs(50, 13, (1.0, 1.0, 1.0));
        let res = dsr(&corr, &RansacConfig::default()).unwrap();
        let product = res.h_k.matrix() * (res.h_s.matrix() * res.h_y.matrix());
        assert_eq!(&product, res.h_total.matrix());
        let count = res.inlier_mask.iter().filter(|&&b| b).count();
        assert_eq!(res.inlier_ratio, count as f64 / corr.len() as f64);
    }

    #[test]
    fn dsr_is_deterministic_for_a_fixed_seed() {
        let (corr, _) = rotation_rig_pairs(60, 14, (2.0, -1.0, 0.5));
        let cfg = RansacConfig {
            seed: 42,
            ..RansacConfig::default()
        };
        let a = dsr(&corr, &cfg).unwrap();
        let b = dsr(&corr, &cfg).unwrap();
        assert_eq!(a.h_total.matrix(), b.h_total.matrix());
        assert_eq!(a.inlier_mask, b.inlier_mask);
        assert_eq!(a.shift_k.to_bits(), b.shift_k.to_bits());
        assert_eq!(a.s_a.to_bits(), b.s_a.to_bits());
    }

    #[test]
    fn correspondence_text_round_trips() {
        let (corr, _) = rotation_rig_pairs(7, 15, (1.0, 0.0, 0.0));
        let parsed = CorrespondenceSet::from_text(&corr.to_text()).unwrap();
        assert_eq!(parsed.len(), corr.len());
        assert_eq!(parsed.image_width(), 960);
        for i in 0..corr.len() {
            assert_relative_eq!(parsed.master(i).x, corr.master(i).x, epsilon = 1e-12);
            assert_relative_eq!(parsed.slave(i).y, corr.slave(i).y, epsilon = 1e-12);
        }
        assert!(CorrespondenceSet::from_text("").is_err());
        assert!(CorrespondenceSet::from_text("2 960 720\n1 2 3 4\n").is_err());
    }

    #[test]
    fn solve_result_serialization_contains_all_sections() {
        let (corr, _) = rotation_rig_pairs(30, 16, (1.0, 1.0, -1.0));
        let res = dsr(&corr, &RansacConfig::default()).unwrap();
        let text = res.to_text();
        for key in ["h_y:", "h_s:", "h_k:", "h_total:", "inlier_mask:", "p_max:", "s_a:", "s_b:", "k:", "iterations_used:"] {
            assert!(text.contains(key), "missing {key}");
        }
    }
}
