//! Plane-to-image homography (normalized DLT) and its decomposition into
//! two candidate rigid poses.

use nalgebra::{DMatrix, Vector3, SVD};
use thiserror::Error;

use super::plane::PlaneFrame;
use crate::geometry::{Extrinsics, Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HomographyError {
    #[error("need at least 4 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("{plane} plane points but {image} image points")]
    LengthMismatch { plane: usize, image: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
}

/// Similarity moving the centroid to the origin with mean distance √2.
fn normalizing_transform(pts: &[[f64; 2]]) -> Option<Mat3> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean_dist = pts
        .iter()
        .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 1e-12) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Mat3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn apply(t: &Mat3, p: &[f64; 2]) -> [f64; 2] {
    let q = t * Vector3::new(p[0], p[1], 1.0);
    [q.x / q.z, q.y / q.z]
}

fn collinear(a: &[f64; 2], b: &[f64; 2], c: &[f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let scale = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2))
        .max((c[0] - a[0]).powi(2) + (c[1] - a[1]).powi(2));
    cross.abs() <= 1e-10 * scale
}

/// Maps plane coordinates `(a, b)` through `h`.
pub fn apply_homography(h: &Mat3, p: &[f64; 2]) -> [f64; 2] {
    apply(h, p)
}

/// Homography `H` with `image ~ H · [a, b, 1]ᵀ`.
///
/// Both point sets are normalized, the 2n×9 constraint matrix is solved for
/// its smallest right singular vector, and the result is denormalized and
/// scaled to `H[2][2] = 1` when that entry is not zero.
pub fn estimate_homography(
    plane_pts: &[[f64; 2]],
    image_pts: &[[f64; 2]],
) -> Result<Mat3, HomographyError> {
    if plane_pts.len() != image_pts.len() {
        return Err(HomographyError::LengthMismatch {
            plane: plane_pts.len(),
            image: image_pts.len(),
        });
    }
    let n = plane_pts.len();
    if n < 4 {
        return Err(HomographyError::TooFewPoints(n));
    }
    if n == 4 {
        for skip in 0..4 {
            let idx: Vec<usize> = (0..4).filter(|&i| i != skip).collect();
            let [a, b, c] = [idx[0], idx[1], idx[2]];
            if collinear(&plane_pts[a], &plane_pts[b], &plane_pts[c]) {
                return Err(HomographyError::Degenerate("three collinear plane points"));
            }
        }
    }

    let t_src = normalizing_transform(plane_pts)
        .ok_or(HomographyError::Degenerate("coincident plane points"))?;
    let t_dst = normalizing_transform(image_pts)
        .ok_or(HomographyError::Degenerate("coincident image points"))?;

    // Pad to at least 9 rows so the SVD yields a full right basis.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for i in 0..n {
        let [x, y] = apply(&t_src, &plane_pts[i]);
        let [u, v] = apply(&t_dst, &image_pts[i]);
        let r = 2 * i;
        a[(r, 3)] = -x;
        a[(r, 4)] = -y;
        a[(r, 5)] = -1.0;
        a[(r, 6)] = v * x;
        a[(r, 7)] = v * y;
        a[(r, 8)] = v;
        a[(r + 1, 0)] = x;
        a[(r + 1, 1)] = y;
        a[(r + 1, 2)] = 1.0;
        a[(r + 1, 6)] = -u * x;
        a[(r + 1, 7)] = -u * y;
        a[(r + 1, 8)] = -u;
    }

    let svd = SVD::new(a, false, true);
    let v_t = svd.v_t.ok_or(HomographyError::Degenerate("SVD failed"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[order.len() - 1]];
    let second = svd.singular_values[order[1]];
    if !(largest > 0.0) || second <= 1e-10 * largest {
        return Err(HomographyError::Degenerate(
            "rank-deficient constraint system",
        ));
    }
    let h = v_t.row(order[0]);
    let h_norm = Mat3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);

    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or(HomographyError::Degenerate("normalization not invertible"))?;
    let h = t_dst_inv * h_norm * t_src;
    let s = h[(2, 2)];
    Ok(if s.abs() > 1e-15 { h / s } else { h })
}

/// Nearest rotation (Frobenius) to `m`.
fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let d = (u * v_t).determinant().signum();
    u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * v_t
}

/// The two sign solutions of a normalized plane-to-image homography,
/// expressed as sensor-to-camera extrinsics through `frame`.
///
/// `h` maps plane-frame coordinates to normalized camera coordinates.
/// Columns give `r1 = λh1`, `r2 = λh2`, `t = λh3` with
/// `λ = ±2 / (‖h1‖ + ‖h2‖)`; `[r1 r2 r1×r2]` is projected onto SO(3).
pub fn decompose_planar_pose(
    h: &Mat3,
    frame: &PlaneFrame,
) -> Result<[Extrinsics; 2], HomographyError> {
    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let (n1, n2) = (h1.norm(), h2.norm());
    if n1 < 1e-12 || n2 < 1e-12 {
        return Err(HomographyError::Degenerate("vanishing homography column"));
    }
    let lambda = 2.0 / (n1 + n2);
    let basis_t = frame.basis().transpose();
    let candidate = |lambda: f64| {
        let r1 = h1 * lambda;
        let r2 = h2 * lambda;
        let r_plane = nearest_rotation(&Mat3::from_columns(&[r1, r2, r1.cross(&r2)]));
        let t_plane = h3 * lambda;
        // p_cam = R_plane · Bᵀ (p - o) + t_plane
        let r = r_plane * basis_t;
        let t = t_plane - r * frame.origin;
        Extrinsics::from_matrix(&r, &t)
    };
    Ok([candidate(lambda), candidate(-lambda)])
}
