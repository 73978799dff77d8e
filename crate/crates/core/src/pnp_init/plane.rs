//! RANSAC plane fitting and in-plane coordinates.

use nalgebra::SymmetricEigen;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlaneError {
    #[error("need at least 3 points for a plane, got {0}")]
    TooFewPoints(usize),
    #[error("points are collinear or coincident")]
    Degenerate,
}

/// Plane `normal · x = offset` with its consensus set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneModel {
    pub normal: Vec3,
    pub offset: f64,
    pub inliers: Vec<usize>,
    /// RMS point-to-plane distance over the inliers.
    pub rms: f64,
}

impl PlaneModel {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

fn mean(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len() as f64
}

fn covariance(points: &[Vec3], center: &Vec3) -> Mat3 {
    points.iter().fold(Mat3::zeros(), |acc, p| {
        let d = p - center;
        acc + d * d.transpose()
    }) / points.len() as f64
}

/// Eigenpairs sorted by ascending eigenvalue.
fn sorted_eigen(m: &Mat3) -> [(f64, Vec3); 3] {
    let eig = SymmetricEigen::new(*m);
    let mut pairs: Vec<(f64, Vec3)> = (0..3)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    [pairs[0], pairs[1], pairs[2]]
}

/// Flips `v` so its largest-magnitude component is positive.
fn orient(v: Vec3) -> Vec3 {
    let i = v.iamax();
    if v[i] < 0.0 {
        -v
    } else {
        v
    }
}

/// Least-squares plane through `points`: normal is the smallest-eigenvalue
/// direction of their covariance.
fn fit_least_squares(points: &[Vec3]) -> (Vec3, f64) {
    let c = mean(points);
    let [(_, n), _, _] = sorted_eigen(&covariance(points, &c));
    let n = orient(n.normalize());
    (n, n.dot(&c))
}

fn rms_distance(points: &[Vec3], idx: &[usize], normal: &Vec3, offset: f64) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let ss: f64 = idx
        .iter()
        .map(|&i| (normal.dot(&points[i]) - offset).powi(2))
        .sum();
    (ss / idx.len() as f64).sqrt()
}

/// Consensus plane over `points`.
///
/// Minimal samples are drawn up front from a seeded generator and scored in
/// parallel; the best model maximizes inlier count, then minimizes inlier
/// RMS, then takes the earliest iteration. The winner is refit to its
/// inliers by least squares.
pub fn ransac_plane(
    points: &[Vec3],
    threshold: f64,
    iterations: usize,
    seed: u64,
) -> Result<PlaneModel, PlaneError> {
    if points.len() < 3 {
        return Err(PlaneError::TooFewPoints(points.len()));
    }
    let center = mean(points);
    let [_, (mid, _), (big, _)] = sorted_eigen(&covariance(points, &center));
    if big <= 0.0 || mid <= 1e-12 * big {
        return Err(PlaneError::Degenerate);
    }
    let scale = big.sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<[usize; 3]> = (0..iterations.max(1))
        .map(|_| {
            let s = sample(&mut rng, points.len(), 3);
            [s.index(0), s.index(1), s.index(2)]
        })
        .collect();

    let best = samples
        .par_iter()
        .enumerate()
        .filter_map(|(iter, [a, b, c])| {
            let n = (points[*b] - points[*a]).cross(&(points[*c] - points[*a]));
            if n.norm() <= 1e-9 * scale * scale {
                return None;
            }
            let n = n.normalize();
            let d = n.dot(&points[*a]);
            let inliers: Vec<usize> = (0..points.len())
                .filter(|&i| (n.dot(&points[i]) - d).abs() <= threshold)
                .collect();
            let rms = rms_distance(points, &inliers, &n, d);
            Some((iter, inliers, rms))
        })
        .reduce_with(|x, y| {
            let better = y.1.len() > x.1.len()
                || (y.1.len() == x.1.len() && (y.2 < x.2 || (y.2 == x.2 && y.0 < x.0)));
            if better {
                y
            } else {
                x
            }
        });

    let (_, inliers, _) = best.ok_or(PlaneError::Degenerate)?;
    let support: Vec<Vec3> = inliers.iter().map(|&i| points[i]).collect();
    let (normal, offset) = fit_least_squares(&support);
    let rms = rms_distance(points, &inliers, &normal, offset);
    Ok(PlaneModel {
        normal,
        offset,
        inliers,
        rms,
    })
}

/// Right-handed frame on a plane: `normal = axis_u × axis_v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFrame {
    pub origin: Vec3,
    pub axis_u: Vec3,
    pub axis_v: Vec3,
    pub normal: Vec3,
}

impl PlaneFrame {
    /// Columns `[axis_u, axis_v, normal]`: plane-frame to sensor-frame rotation.
    pub fn basis(&self) -> Mat3 {
        Mat3::from_columns(&[self.axis_u, self.axis_v, self.normal])
    }

    pub fn to_world(&self, ab: [f64; 2]) -> Vec3 {
        self.origin + self.axis_u * ab[0] + self.axis_v * ab[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneCoordinates {
    pub frame: PlaneFrame,
    pub coords: Vec<[f64; 2]>,
    /// Signed distance of each input point from the plane.
    pub residuals: Vec<f64>,
}

/// Orthogonally projects `points` onto `plane` and expresses them in a frame
/// centred on their projected mean, with `axis_u` along the direction of
/// largest in-plane spread.
pub fn plane_coordinates(plane: &PlaneModel, points: &[Vec3]) -> PlaneCoordinates {
    let n = plane.normal;
    let projected: Vec<Vec3> = points
        .iter()
        .map(|p| p - n * plane.signed_distance(p))
        .collect();
    let origin = if projected.is_empty() {
        n * plane.offset
    } else {
        mean(&projected)
    };

    let cov = if projected.is_empty() {
        Mat3::zeros()
    } else {
        covariance(&projected, &origin)
    };
    let [_, _, (spread, dir)] = sorted_eigen(&cov);
    let mut axis_u = dir - n * n.dot(&dir);
    if spread <= 0.0 || axis_u.norm() < 1e-9 {
        // Any in-plane direction will do.
        let helper = if n.x.abs() < 0.9 {
            Vec3::x()
        } else {
            Vec3::y()
        };
        axis_u = helper - n * n.dot(&helper);
    }
    let axis_u = orient(axis_u.normalize());
    let axis_v = n.cross(&axis_u);

    let frame = PlaneFrame {
        origin,
        axis_u,
        axis_v,
        normal: n,
    };
    let coords = projected
        .iter()
        .map(|q| {
            let d = q - origin;
            [d.dot(&axis_u), d.dot(&axis_v)]
        })
        .collect();
    let residuals = points.iter().map(|p| plane.signed_distance(p)).collect();
    PlaneCoordinates {
        frame,
        coords,
        residuals,
    }
}
