//! Synthetic labeled scenes with known extrinsics.
//!
//! Objects are axis-aligned boxes placed in the camera frame. The label image
//! is rendered by splatting a dense sampling of each box's camera-facing faces
//! into a depth buffer, then dilating into background pixels. Cloud points
//! are uniform inside each box and kept only where they land on their own
//! class under the ground-truth transform, so a noiseless scene costs exactly
//! zero at ground truth.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    project, transform_point, CameraIntrinsics, Extrinsics, PixelCoord, RotationAngles,
    Translation, Vec3,
};
use crate::scene::{pixel_index, ClassId, FramePair, LabelImage, LabeledPointCloud};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("frame {frame}: no object projects into the image")]
    EmptyScene { frame: usize },
}

/// Generator parameters. Lengths in meters, angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub frames: usize,
    pub objects_per_frame: usize,
    /// Object `i` of every frame gets `classes[i % classes.len()]`.
    pub classes: Vec<u8>,
    /// Edge length range for each box dimension.
    pub size_range: [f64; 2],
    /// Camera-frame z of box centers.
    pub depth_range: [f64; 2],
    /// Camera-frame x of box centers.
    pub lateral_range: [f64; 2],
    /// Camera-frame y of box centers (y points down).
    pub height_range: [f64; 2],
    pub points_per_object: usize,
    pub noise_rate: f64,
    pub dilation_radius: u32,
    /// Cloud points are kept only if every image displacement up to this
    /// many pixels leaves them on their own class under ground truth.
    pub margin_px: f64,
    pub intrinsics: CameraIntrinsics,
    pub gt_rotation_deg: [f64; 3],
    pub gt_translation: [f64; 3],
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            frames: 20,
            objects_per_frame: 10,
            classes: (1..=10).collect(),
            size_range: [0.5, 1.5],
            depth_range: [6.0, 25.0],
            lateral_range: [-6.0, 6.0],
            height_range: [0.0, 1.0],
            points_per_object: 400,
            noise_rate: 0.0,
            dilation_radius: 1,
            margin_px: 0.5,
            intrinsics: kitti_like_intrinsics(),
            // Sensor frame x right, y forward, z up.
            gt_rotation_deg: [91.0, -0.6, 0.8],
            gt_translation: [0.05, -0.08, -0.27],
            seed: 0,
        }
    }
}

/// 1242×375 pinhole close to a KITTI color camera.
pub fn kitti_like_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 721.5377,
        fy: 721.5377,
        cx: 609.5593,
        cy: 172.854,
        width: 1242,
        height: 375,
    }
}

fn ordered(r: &[f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]
}

impl SceneSpec {
    pub fn gt(&self) -> Extrinsics {
        let [x, y, z] = self.gt_rotation_deg;
        let [tx, ty, tz] = self.gt_translation;
        Extrinsics::new(
            RotationAngles::from_degrees(x, y, z),
            Translation::new(tx, ty, tz),
        )
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.frames == 0 || self.objects_per_frame == 0 {
            return bad("frames and objects_per_frame must be at least 1");
        }
        if self.classes.is_empty() || self.classes.contains(&0) {
            return bad("classes must be non-empty and exclude 0");
        }
        for (name, r) in [
            ("size_range", &self.size_range),
            ("depth_range", &self.depth_range),
            ("lateral_range", &self.lateral_range),
            ("height_range", &self.height_range),
        ] {
            if !ordered(r) {
                return Err(SynthError::InvalidSpec(format!(
                    "{name} must be finite and ordered"
                )));
            }
        }
        if !(self.size_range[0] > 0.0) {
            return bad("object sizes must be positive");
        }
        if !(self.depth_range[0] > 0.0) {
            return bad("depth range must be strictly positive");
        }
        if !(self.depth_range[0] - 0.5 * self.size_range[1] > 0.1) {
            return bad("nearest box face must stay at least 0.1 m in front of the camera");
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return bad("noise_rate must lie in [0, 1)");
        }
        if !(self.margin_px >= 0.0 && self.margin_px.is_finite()) {
            return bad("margin_px must be finite and non-negative");
        }
        if self.points_per_object == 0 {
            return bad("points_per_object must be at least 1");
        }
        self.intrinsics
            .validate()
            .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        if !(self
            .gt_rotation_deg
            .iter()
            .chain(&self.gt_translation)
            .all(|v| v.is_finite()))
        {
            return bad("ground truth must be finite");
        }
        Ok(())
    }
}

/// Axis-aligned box in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxObject {
    pub class: ClassId,
    pub center: Vec3,
    pub size: Vec3,
}

impl BoxObject {
    fn half(&self) -> Vec3 {
        self.size * 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub object: BoxObject,
    pub sampled_points: usize,
    /// Points surviving the visibility check, before label noise.
    pub kept_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    pub objects: Vec<ObjectRecord>,
    pub noisy_points: usize,
    pub noisy_pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub pairs: Vec<FramePair>,
    pub gt: Extrinsics,
    pub records: Vec<FrameRecord>,
}

/// Label image of `objects` seen through `k`: nearest face wins, then
/// background pixels within `dilation` (Chebyshev) take the label of the
/// nearest-depth labeled neighbor.
pub fn render_labels(objects: &[BoxObject], k: &CameraIntrinsics, dilation: u32) -> LabelImage {
    let (w, h) = (k.width as usize, k.height as usize);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut labels = vec![ClassId::IGNORE; w * h];
    let f = k.fx.max(k.fy);

    for obj in objects {
        let half = obj.half();
        let z_near = (obj.center.z - half.z).max(1e-3);
        let step = 0.7 * z_near / f;
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut normal = Vec3::zeros();
                normal[axis] = sign;
                let face_center = obj.center + normal * half[axis];
                if normal.dot(&face_center) >= 0.0 {
                    continue;
                }
                let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                let na = (2.0 * half[a] / step).ceil() as usize + 1;
                let nb = (2.0 * half[b] / step).ceil() as usize + 1;
                for i in 0..na {
                    let sa = -half[a] + 2.0 * half[a] * i as f64 / (na - 1) as f64;
                    for j in 0..nb {
                        let sb = -half[b] + 2.0 * half[b] * j as f64 / (nb - 1) as f64;
                        let mut p = face_center;
                        p[a] += sa;
                        p[b] += sb;
                        let Ok(px) = project(&p, k) else { continue };
                        let Some((l, m)) = pixel_index(&px, k.width, k.height) else {
                            continue;
                        };
                        let idx = m as usize * w + l as usize;
                        if p.z < depth[idx] {
                            depth[idx] = p.z;
                            labels[idx] = obj.class;
                        }
                    }
                }
            }
        }
    }

    if dilation > 0 {
        let r = dilation as i64;
        let src = labels.clone();
        for m in 0..h as i64 {
            for l in 0..w as i64 {
                let idx = (m * w as i64 + l) as usize;
                if !src[idx].is_ignore() {
                    continue;
                }
                let mut best = f64::INFINITY;
                for dm in -r..=r {
                    for dl in -r..=r {
                        let (nl, nm) = (l + dl, m + dm);
                        if nl < 0 || nm < 0 || nl >= w as i64 || nm >= h as i64 {
                            continue;
                        }
                        let n = (nm * w as i64 + nl) as usize;
                        if !src[n].is_ignore() && depth[n] < best {
                            best = depth[n];
                            labels[idx] = src[n];
                        }
                    }
                }
            }
        }
    }
    LabelImage::new(k.width, k.height, labels).expect("buffer sized to intrinsics")
}

fn uniform(rng: &mut ChaCha8Rng, r: &[f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn sample_objects(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<BoxObject> {
    (0..spec.objects_per_frame)
        .map(|i| {
            let class = ClassId(spec.classes[i % spec.classes.len()]);
            let size = Vec3::new(
                uniform(rng, &spec.size_range),
                uniform(rng, &spec.size_range),
                uniform(rng, &spec.size_range),
            );
            let center = Vec3::new(
                uniform(rng, &spec.lateral_range),
                uniform(rng, &spec.height_range),
                uniform(rng, &spec.depth_range),
            );
            BoxObject {
                class,
                center,
                size,
            }
        })
        .collect()
}

/// True when every pixel reachable from `px` by a displacement of at most
/// `margin` per axis exists and carries `class`.
fn keeps_class(image: &LabelImage, px: &PixelCoord, margin: f64, class: ClassId) -> bool {
    let lo = PixelCoord::new(px.u - margin, px.v - margin);
    let hi = PixelCoord::new(px.u + margin, px.v + margin);
    let (Some((l0, m0)), Some((l1, m1))) = (
        pixel_index(&lo, image.width(), image.height()),
        pixel_index(&hi, image.width(), image.height()),
    ) else {
        return false;
    };
    (m0..=m1).all(|m| (l0..=l1).all(|l| image.get(l, m) == class))
}

/// Replacement label for a corrupted element: uniform over the other classes.
fn corrupt(original: ClassId, classes: &[ClassId], pick: usize) -> ClassId {
    let others: Vec<ClassId> = classes.iter().copied().filter(|c| *c != original).collect();
    if others.is_empty() {
        original
    } else {
        others[pick % others.len()]
    }
}

fn generate_frame(
    spec: &SceneSpec,
    gt: &Extrinsics,
    frame: usize,
) -> Result<(FramePair, FrameRecord), SynthError> {
    let k = spec.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(2 * frame as u64);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(2 * frame as u64 + 1);

    let objects = sample_objects(spec, &mut rng);
    let mut image = render_labels(&objects, &k, spec.dilation_radius);
    if image.labels().iter().all(|c| c.is_ignore()) {
        return Err(SynthError::EmptyScene { frame });
    }

    let to_sensor = gt.inverse();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut records = Vec::with_capacity(objects.len());
    for obj in &objects {
        let half = obj.half();
        let mut kept = 0;
        for _ in 0..spec.points_per_object {
            let p_cam = obj.center
                + Vec3::new(
                    rng.random_range(-1.0..1.0) * half.x,
                    rng.random_range(-1.0..1.0) * half.y,
                    rng.random_range(-1.0..1.0) * half.z,
                );
            // Stored at f32 precision so on-disk scenes keep the zero-cost property.
            let s = transform_point(&p_cam, &to_sensor);
            let s = Vec3::new(s.x as f32 as f64, s.y as f32 as f64, s.z as f32 as f64);
            let Ok(px) = project(&transform_point(&s, gt), &k) else {
                continue;
            };
            if !keeps_class(&image, &px, spec.margin_px, obj.class) {
                continue;
            }
            points.push(s);
            labels.push(obj.class);
            kept += 1;
        }
        records.push(ObjectRecord {
            object: *obj,
            sampled_points: spec.points_per_object,
            kept_points: kept,
        });
    }

    // Noise draws happen for every element regardless of the rate, so a
    // higher rate corrupts a superset of the elements a lower one does.
    let classes: Vec<ClassId> = spec.classes.iter().map(|&c| ClassId(c)).collect();
    let mut noisy_points = 0;
    for label in labels.iter_mut() {
        let u: f64 = noise_rng.random();
        let pick: usize = noise_rng.random_range(0..classes.len());
        if u < spec.noise_rate {
            *label = corrupt(*label, &classes, pick);
            noisy_points += 1;
        }
    }
    let mut noisy_pixels = 0;
    for m in 0..image.height() {
        for l in 0..image.width() {
            let c = image.get(l, m);
            if c.is_ignore() {
                continue;
            }
            let u: f64 = noise_rng.random();
            let pick: usize = noise_rng.random_range(0..classes.len());
            if u < spec.noise_rate {
                image.set(l, m, corrupt(c, &classes, pick));
                noisy_pixels += 1;
            }
        }
    }

    let frame_id = format!("{frame:06}");
    let cloud = LabeledPointCloud::new(points, labels).expect("finite generated points");
    let pair =
        FramePair::new(frame_id.clone(), cloud, image, k).expect("image sized to intrinsics");
    let record = FrameRecord {
        frame_id,
        objects: records,
        noisy_points,
        noisy_pixels,
    };
    Ok((pair, record))
}

/// Generates `spec.frames` frame pairs and the ground truth they were
/// rendered with. Deterministic given the spec (seed included).
pub fn generate(spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let gt = spec.gt();
    let frames: Vec<(FramePair, FrameRecord)> = (0..spec.frames)
        .into_par_iter()
        .map(|i| generate_frame(spec, &gt, i))
        .collect::<Result<_, _>>()?;
    let (pairs, records) = frames.into_iter().unzip();
    Ok(Scene { pairs, gt, records })
}

/// `ext` plus a per-axis offset of the given magnitude with random sign.
/// `dtheta` in radians, `dt` in meters.
pub fn perturb(ext: &Extrinsics, dtheta: [f64; 3], dt: [f64; 3], seed: u64) -> Extrinsics {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ext.to_params();
    for (i, d) in dtheta.iter().chain(&dt).enumerate() {
        let sign = *[-1.0, 1.0].choose(&mut rng).expect("non-empty");
        p[i] += sign * d;
    }
    Extrinsics::from_params(&p)
}
