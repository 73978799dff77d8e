//! Initial extrinsics from semantic centroids.
//!
//! Every frame contributes one 3D/2D centroid pair per usable class. The 3D
//! centroids of a driving scene lie close to a plane, so the pose is found
//! as a planar PnP problem: RANSAC plane, in-plane coordinates, homography
//! to normalized image coordinates, and a two-candidate decomposition. The
//! candidate with the most centroids in front of the camera wins, ties
//! broken by the semantic cost.

mod homography;
mod plane;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use homography::{
    apply_homography, decompose_planar_pose, estimate_homography, HomographyError,
};
pub use plane::{
    plane_coordinates, ransac_plane, PlaneCoordinates, PlaneError, PlaneFrame, PlaneModel,
};

use crate::costfield::{CostConfig, CostError, CostModel};
use crate::geometry::{project, transform_point, CameraIntrinsics, Extrinsics, PixelCoord, Vec3};
use crate::scene::{centroid_2d, centroid_3d, Centroid2D, Centroid3D, ClassId, FramePair};

pub const MIN_CENTROID_PAIRS: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InitError {
    #[error("only {found} usable centroid pairs, need at least {MIN_CENTROID_PAIRS}; supply more frames or classes")]
    InsufficientPairs { found: usize },
    #[error(
        "centroids are not planar: inlier rms {rms:.4} m exceeds {limit:.4} m; supply more frames"
    )]
    NonPlanar { rms: f64, limit: f64 },
    #[error("plane fit failed: {0}")]
    Plane(#[from] PlaneError),
    #[error("homography failed: {0}")]
    Homography(#[from] HomographyError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// RANSAC inlier distance (meters).
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
    pub seed: u64,
    /// Maximum inlier rms as a fraction of the centroid-cloud diameter.
    pub planarity_ratio: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            ransac_threshold: 0.2,
            ransac_iterations: 500,
            seed: 0,
            planarity_ratio: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidPair {
    pub frame_id: String,
    pub class: ClassId,
    pub centroid_3d: Centroid3D,
    pub centroid_2d: Centroid2D,
    pub intrinsics: CameraIntrinsics,
}

impl CentroidPair {
    pub fn normalized_image_point(&self) -> [f64; 2] {
        self.intrinsics.normalize(&self.centroid_2d.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidPairSet {
    pairs: Vec<CentroidPair>,
}

impl CentroidPairSet {
    pub fn new(pairs: Vec<CentroidPair>) -> Result<Self, InitError> {
        if pairs.len() < MIN_CENTROID_PAIRS {
            return Err(InitError::InsufficientPairs { found: pairs.len() });
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[CentroidPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// One pair per (frame, class) where both centroids exist.
pub fn collect_centroid_pairs(
    pairs: &[FramePair],
    classes: &BTreeSet<ClassId>,
) -> Result<CentroidPairSet, InitError> {
    let mut out = Vec::new();
    for pair in pairs {
        for &class in classes.iter().filter(|c| !c.is_ignore()) {
            let (Some(c3), Some(c2)) = (
                centroid_3d(&pair.cloud, class),
                centroid_2d(&pair.image, class),
            ) else {
                continue;
            };
            out.push(CentroidPair {
                frame_id: pair.frame_id.clone(),
                class,
                centroid_3d: c3,
                centroid_2d: c2,
                intrinsics: pair.intrinsics,
            });
        }
    }
    CentroidPairSet::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseCandidate {
    pub extrinsics: Extrinsics,
    /// RMS pixel distance between 2D centroids and projected 3D centroids,
    /// over centroids in front of the camera.
    pub reprojection_rms: f64,
    /// Number of 3D centroids with positive depth.
    pub cheirality: usize,
}

/// Reprojection of one centroid pair under a pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidResidual {
    pub frame_id: String,
    pub class: ClassId,
    pub centroid_2d: PixelCoord,
    pub projected: Option<PixelCoord>,
    pub residual: Option<f64>,
}

pub fn centroid_residuals(set: &CentroidPairSet, ext: &Extrinsics) -> Vec<CentroidResidual> {
    set.pairs()
        .iter()
        .map(|p| {
            let cam = transform_point(&p.centroid_3d.position, ext);
            let projected = project(&cam, &p.intrinsics).ok();
            let observed = p.centroid_2d.position;
            CentroidResidual {
                frame_id: p.frame_id.clone(),
                class: p.class,
                centroid_2d: observed,
                projected,
                residual: projected
                    .map(|q| ((q.u - observed.u).powi(2) + (q.v - observed.v).powi(2)).sqrt()),
            }
        })
        .collect()
}

fn score_candidate(set: &CentroidPairSet, ext: Extrinsics) -> PoseCandidate {
    let residuals = centroid_residuals(set, &ext);
    let visible: Vec<f64> = residuals.iter().filter_map(|r| r.residual).collect();
    let reprojection_rms = if visible.is_empty() {
        f64::INFINITY
    } else {
        (visible.iter().map(|r| r * r).sum::<f64>() / visible.len() as f64).sqrt()
    };
    PoseCandidate {
        extrinsics: ext,
        reprojection_rms,
        cheirality: visible.len(),
    }
}

/// Output of the planar PnP stage, before semantic ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarSolution {
    pub plane: PlaneModel,
    pub frame: PlaneFrame,
    pub homography: nalgebra::Matrix3<f64>,
    pub candidates: [PoseCandidate; 2],
}

fn diameter(points: &[Vec3]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            d = d.max((a - b).norm());
        }
    }
    d
}

/// Plane fit, homography and decomposition for a centroid set.
pub fn solve_planar_pnp(
    set: &CentroidPairSet,
    config: &InitConfig,
) -> Result<PlanarSolution, InitError> {
    let points: Vec<Vec3> = set.pairs().iter().map(|p| p.centroid_3d.position).collect();
    let plane = ransac_plane(
        &points,
        config.ransac_threshold,
        config.ransac_iterations,
        config.seed,
    )?;
    let limit = config.planarity_ratio * diameter(&points);
    if plane.rms > limit {
        return Err(InitError::NonPlanar {
            rms: plane.rms,
            limit,
        });
    }
    if plane.inliers.len() < MIN_CENTROID_PAIRS {
        return Err(InitError::InsufficientPairs {
            found: plane.inliers.len(),
        });
    }

    let inlier_points: Vec<Vec3> = plane.inliers.iter().map(|&i| points[i]).collect();
    let image_points: Vec<[f64; 2]> = plane
        .inliers
        .iter()
        .map(|&i| set.pairs()[i].normalized_image_point())
        .collect();
    let coords = plane_coordinates(&plane, &inlier_points);
    let homography = estimate_homography(&coords.coords, &image_points)?;
    let [a, b] = decompose_planar_pose(&homography, &coords.frame)?;
    Ok(PlanarSolution {
        plane,
        frame: coords.frame,
        homography,
        candidates: [score_candidate(set, a), score_candidate(set, b)],
    })
}

/// Index of the preferred candidate: most centroids in front of the camera,
/// then lowest cost (non-finite costs rank last), then the first one.
pub fn rank_candidates(candidates: &[PoseCandidate; 2], costs: &[f64; 2]) -> usize {
    let key = |i: usize| {
        let c = if costs[i].is_finite() {
            costs[i]
        } else {
            f64::INFINITY
        };
        (std::cmp::Reverse(candidates[i].cheirality), c)
    };
    let (ka, kb) = (key(0), key(1));
    if kb.0 < ka.0 || (kb.0 == ka.0 && kb.1 < ka.1) {
        1
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitResult {
    pub extrinsics: Extrinsics,
    pub solution: PlanarSolution,
    pub winner: usize,
    pub candidate_costs: [f64; 2],
    pub centroids: CentroidPairSet,
    /// Reprojection of every centroid pair under the winner.
    pub residuals: Vec<CentroidResidual>,
}

/// Initialization against an already prepared cost model.
pub fn initialize_with_model(
    model: &CostModel,
    config: &InitConfig,
) -> Result<InitResult, InitError> {
    let frames: Vec<FramePair> = model.pairs().iter().map(|p| p.pair().clone()).collect();
    let centroids = collect_centroid_pairs(&frames, model.classes())?;
    let solution = solve_planar_pnp(&centroids, config)?;
    let cost_of = |c: &PoseCandidate| model.total(&c.extrinsics).unwrap_or(f64::INFINITY);
    let candidate_costs = [
        cost_of(&solution.candidates[0]),
        cost_of(&solution.candidates[1]),
    ];
    let winner = rank_candidates(&solution.candidates, &candidate_costs);
    let extrinsics = solution.candidates[winner].extrinsics;
    let residuals = centroid_residuals(&centroids, &extrinsics);
    Ok(InitResult {
        extrinsics,
        solution,
        winner,
        candidate_costs,
        centroids,
        residuals,
    })
}

/// Full initialization pipeline over frame pairs.
pub fn initialize(
    pairs: &[FramePair],
    classes: &BTreeSet<ClassId>,
    config: &InitConfig,
    cost: &CostConfig,
) -> Result<InitResult, InitError> {
    let model = CostModel::new(pairs.to_vec(), classes.clone(), *cost)?;
    initialize_with_model(&model, config)
}
