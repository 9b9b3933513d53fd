//! Rectification quality metrics: proportion of aligned points (PAP) and
//! normalized vertex distance (NVD).

use crate::geometry::{GeometryError, Homography, Point2H, PROJECTIVE_EPS};
use crate::solver::CorrespondenceSet;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty correspondence set")]
    EmptyCorrespondenceSet,
    #[error("homography must be canonical (h33 = 1)")]
    NonCanonicalHomography,
    #[error("vertex maps to infinity (|denominator| = {denominator:e})")]
    VertexAtInfinity { denominator: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// PAP at each requested threshold. `pap[i]` is the fraction of pairs whose
/// transformed vertical coordinates differ by strictly less than
/// `thresholds[i]` pixels.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PapReport {
    pub thresholds: Vec<f64>,
    pub pap: Vec<f64>,
    pub n_points: usize,
}

/// NVD of the transforms applied to each image of the pair. A solve that
/// leaves the master untouched has `nvd_master == 0` exactly.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct NvdReport {
    pub nvd_master: f64,
    pub nvd_slave: f64,
}

/// Proportion of aligned points. Master points go through `h_master`, slave
/// points through `h_slave`; a pair is aligned at ε when the two transformed
/// y-coordinates differ by < ε. With an identity `h_master` this is the
/// plain vertical-displacement count against the untouched master image.
pub fn pap(
    corr: &CorrespondenceSet,
    h_master: &Homography,
    h_slave: &Homography,
    epsilons: &[f64],
) -> Result<PapReport, MetricsError> {
    if corr.is_empty() {
        return Err(MetricsError::EmptyCorrespondenceSet);
    }
    if !(h_master.is_canonical() && h_slave.is_canonical()) {
        return Err(MetricsError::NonCanonicalHomography);
    }
    let mut counts = vec![0usize; epsilons.len()];
    for &(m, s) in corr.pairs() {
        let ym = transformed_y(h_master, m);
        let ys = transformed_y(h_slave, s);
        let diff = match (ym, ys) {
            (Some(a), Some(b)) => (a - b).abs(),
            _ => f64::INFINITY,
        };
        for (count, &eps) in counts.iter_mut().zip(epsilons) {
            if diff < eps {
                *count += 1;
            }
        }
    }
    let n = corr.len();
    Ok(PapReport {
        thresholds: epsilons.to_vec(),
        pap: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        n_points: n,
    })
}

fn transformed_y(h: &Homography, p: Point2H) -> Option<f64> {
    let m = h.matrix();
    let den = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
    if den.abs() <= PROJECTIVE_EPS {
        return None;
    }
    Some((m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)]) / den)
}

/// Normalized vertex distance: summed displacement of the four image
/// corners under `h`, divided by the image diagonal.
pub fn nvd(h: &Homography, width: u32, height: u32) -> Result<f64, MetricsError> {
    if !h.is_canonical() {
        return Err(MetricsError::NonCanonicalHomography);
    }
    let w = width as f64;
    let hh = height as f64;
    let vertices = [
        Point2H::new(0.0, 0.0),
        Point2H::new(w - 1.0, 0.0),
        Point2H::new(0.0, hh - 1.0),
        Point2H::new(w - 1.0, hh - 1.0),
    ];
    let mut sum = 0.0;
    for v in vertices {
        let q = h.apply(v)?;
        if q.is_direction() {
            return Err(MetricsError::VertexAtInfinity { denominator: 0.0 });
        }
        sum += (q.x - v.x).hypot(q.y - v.y);
    }
    Ok(sum / (w * w + hh * hh).sqrt())
}

/// Everything a rectification run reports: alignment, distortion, inlier
/// statistics, timing (microseconds).
#[derive(Debug, Clone, Serialize)]
pub struct RectificationReport {
    pub pap_thresholds: Vec<f64>,
    pub pap: Vec<f64>,
    pub n_points: usize,
    pub nvd_master: f64,
    pub nvd_slave: f64,
    pub p_max: f64,
    pub solve_time_us: u64,
    /// Absent when correspondences were supplied instead of matched.
    pub match_time_us: Option<u64>,
}

impl RectificationReport {
    /// Key/value text form; carries the same values as the JSON form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (eps, pap) in self.pap_thresholds.iter().zip(&self.pap) {
            out.push_str(&format!("pap_e{eps}: {pap:.6}\n"));
        }
        out.push_str(&format!("n_points: {}\n", self.n_points));
        out.push_str(&format!("nvd_master: {:.6}\n", self.nvd_master));
        out.push_str(&format!("nvd_slave: {:.6}\n", self.nvd_slave));
        out.push_str(&format!("p_max: {:.6}\n", self.p_max));
        out.push_str(&format!("solve_time_us: {}\n", self.solve_time_us));
        if let Some(us) = self.match_time_us {
            out.push_str(&format!("match_time_us: {us}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{dsr, RansacConfig};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn aligned_corr() -> CorrespondenceSet {
        let mut rng = crate::rng::stream_rng(21, 0);
        let pairs: Vec<_> = (0..30)
            .map(|_| {
                let x = rng.random_range(10.0..950.0);
                let y = rng.random_range(10.0..710.0);
                (Point2H::new(x, y), Point2H::new(x - 12.0, y))
            })
            .collect();
        CorrespondenceSet::new(pairs, 960, 720).unwrap()
    }

    #[test]
    fn pap_counts_strictly_below_threshold() {
        // Master y = (0, 0, 1), slave y = (0.5, 2.5, 1.2): two of three
        // pairs sit within one pixel.
        let pairs = vec![
            (Point2H::new(10.0, 0.0), Point2H::new(10.0, 0.5)),
            (Point2H::new(20.0, 0.0), Point2H::new(20.0, 2.5)),
            (Point2H::new(30.0, 1.0), Point2H::new(30.0, 1.2)),
        ];
        let corr = CorrespondenceSet::new(pairs, 960, 720).unwrap();
        let id = Homography::identity();
        let rep = pap(&corr, &id, &id, &[1.0]).unwrap();
        assert_relative_eq!(rep.pap[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(rep.n_points, 3);
    }

    #[test]
    fn pap_is_one_on_aligned_data_for_any_threshold() {
        let corr = aligned_corr();
        let id = Homography::identity();
        let rep = pap(&corr, &id, &id, &[0.1, 1.0, 2.0, 3.0]).unwrap();
        assert!(rep.pap.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn pap_monotone_in_epsilon() {
        let mut rng = crate::rng::stream_rng(22, 0);
        let pairs: Vec<_> = (0..200)
            .map(|_| {
                let x = rng.random_range(0.0..960.0);
                let y = rng.random_range(0.0..720.0);
                let dy = rng.random_range(-4.0..4.0);
                (Point2H::new(x, y), Point2H::new(x, y + dy))
            })
            .collect();
        let corr = CorrespondenceSet::new(pairs, 960, 720).unwrap();
        let id = Homography::identity();
        let rep = pap(&corr, &id, &id, &[0.5, 1.0, 2.0, 3.0, 5.0]).unwrap();
        for pair in rep.pap.windows(2) {
            assert!(pair[0] <= pair[1]);
        }
    }

    #[test]
    fn pap_errors_on_empty_input() {
        let corr = CorrespondenceSet::new(vec![], 960, 720).unwrap();
        let id = Homography::identity();
        assert!(matches!(
            pap(&corr, &id, &id, &[1.0]),
            Err(MetricsError::EmptyCorrespondenceSet)
        ));
    }

    #[test]
    fn pap_unchanged_by_shear_and_shift_bit_for_bit() {
        let mut rng = crate::rng::stream_rng(23, 0);
        let pairs: Vec<_> = (0..100)
            .map(|_| {
                let x = rng.random_range(20.0..940.0);
                let y = rng.random_range(20.0..700.0);
                (
                    Point2H::new(x, y),
                    Point2H::new(x - rng.random_range(2.0..25.0), y + rng.random_range(-2.0..2.0)),
                )
            })
            .collect();
        let corr = CorrespondenceSet::new(pairs, 960, 720).unwrap();
        let res = dsr(&corr, &RansacConfig::default()).unwrap();
        let id = Homography::identity();
        let eps = [1.0, 2.0, 3.0];
        let before = pap(&corr, &id, &res.h_y, &eps).unwrap();
        let after = pap(&corr, &id, &res.h_total, &eps).unwrap();
        for (a, b) in before.pap.iter().zip(&after.pap) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn nvd_identity_is_zero() {
        assert_eq!(nvd(&Homography::identity(), 960, 720).unwrap(), 0.0);
    }

    #[test]
    fn nvd_translation_closed_form() {
        // Translation by (3, 4) on a 300x400 image: each vertex moves 5,
        // diagonal is 500, so NVD = 20/500.
        let h = Homography::translation(3.0, 4.0);
        assert_relative_eq!(nvd(&h, 300, 400).unwrap(), 0.04, epsilon = 1e-15);
        let hx = Homography::translation(-7.5, 0.0);
        assert_relative_eq!(
            nvd(&hx, 960, 720).unwrap(),
            4.0 * 7.5 / (960.0f64 * 960.0 + 720.0 * 720.0).sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn nvd_errors_when_a_vertex_hits_infinity() {
        let h = Homography::from_matrix(nalgebra::Matrix3::new(
            1.0,
            0.0,
            0.0,
            0.0,
            1.0,
            0.0,
            -1.0 / 959.0,
            0.0,
            1.0,
        ))
        .unwrap();
        assert!(matches!(
            nvd(&h, 960, 720),
            Err(MetricsError::VertexAtInfinity { .. })
        ));
    }

    #[test]
    fn report_text_and_json_carry_identical_values() {
        let report = RectificationReport {
            pap_thresholds: vec![1.0, 2.0, 3.0],
            pap: vec![0.81, 0.94, 0.96],
            n_points: 500,
            nvd_master: 0.0,
            nvd_slave: 0.1652,
            p_max: 0.9,
            solve_time_us: 630,
            match_time_us: Some(428_100),
        };
        let text = report.to_text();
        assert!(text.contains("pap_e1: 0.810000"));
        assert!(text.contains("nvd_master: 0.000000"));
        let json: serde_json::Value = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
        assert_eq!(json["pap"][0], 0.81);
        assert_eq!(json["nvd_slave"], 0.1652);
        assert_eq!(json["solve_time_us"], 630);
    }
}
