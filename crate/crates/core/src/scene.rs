//! Labeled point clouds, label images, frame pairs and semantic centroids.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, PixelCoord, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("cloud has {points} points but {labels} labels")]
    LengthMismatch { points: usize, labels: usize },
    #[error("point {0} has a non-finite coordinate")]
    NonFinitePoint(usize),
    #[error("label image holds {got} cells, expected {width}x{height}")]
    ImageSize { width: u32, height: u32, got: usize },
    #[error("image is {image_w}x{image_h} but intrinsics say {k_w}x{k_h}")]
    IntrinsicsMismatch {
        image_w: u32,
        image_h: u32,
        k_w: u32,
        k_h: u32,
    },
}

/// Semantic class identifier shared by both modalities. Class 0 is ignored.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct ClassId(pub u8);

impl ClassId {
    pub const IGNORE: ClassId = ClassId(0);

    pub fn is_ignore(self) -> bool {
        self == Self::IGNORE
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Integer pixel index containing a real pixel position, if inside the image.
///
/// Pixel `(l, m)` covers `[l - 0.5, l + 0.5) x [m - 0.5, m + 0.5)`.
pub fn pixel_index(p: &PixelCoord, width: u32, height: u32) -> Option<(u32, u32)> {
    let l = (p.u + 0.5).floor();
    let m = (p.v + 0.5).floor();
    if l >= 0.0 && m >= 0.0 && l < f64::from(width) && m < f64::from(height) {
        Some((l as u32, m as u32))
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledPointCloud {
    points: Vec<Vec3>,
    labels: Vec<ClassId>,
}

impl LabeledPointCloud {
    pub fn new(points: Vec<Vec3>, labels: Vec<ClassId>) -> Result<Self, SceneError> {
        if points.len() != labels.len() {
            return Err(SceneError::LengthMismatch {
                points: points.len(),
                labels: labels.len(),
            });
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(SceneError::NonFinitePoint(i));
        }
        Ok(Self { points, labels })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec3, ClassId)> {
        self.points.iter().zip(self.labels.iter().copied())
    }
}

/// Row-major grid of class labels, `width` columns by `height` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelImage {
    width: u32,
    height: u32,
    labels: Vec<ClassId>,
}

impl LabelImage {
    pub fn new(width: u32, height: u32, labels: Vec<ClassId>) -> Result<Self, SceneError> {
        if labels.len() != width as usize * height as usize {
            return Err(SceneError::ImageSize {
                width,
                height,
                got: labels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: u32, height: u32, class: ClassId) -> Self {
        Self {
            width,
            height,
            labels: vec![class; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn get(&self, l: u32, m: u32) -> ClassId {
        self.labels[m as usize * self.width as usize + l as usize]
    }

    pub fn set(&mut self, l: u32, m: u32, class: ClassId) {
        self.labels[m as usize * self.width as usize + l as usize] = class;
    }

    /// Label under a real pixel position, `None` outside the image.
    pub fn label_at(&self, p: &PixelCoord) -> Option<ClassId> {
        pixel_index(p, self.width, self.height).map(|(l, m)| self.get(l, m))
    }

    /// `(l, m, label)` for every pixel in raster order.
    pub fn iter_pixels(&self) -> impl Iterator<Item = (u32, u32, ClassId)> + '_ {
        let w = self.width as usize;
        self.labels
            .iter()
            .enumerate()
            .map(move |(i, &c)| ((i % w) as u32, (i / w) as u32, c))
    }
}

/// One synchronized point cloud and label image.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub frame_id: String,
    pub cloud: LabeledPointCloud,
    pub image: LabelImage,
    pub intrinsics: CameraIntrinsics,
}

impl FramePair {
    pub fn new(
        frame_id: impl Into<String>,
        cloud: LabeledPointCloud,
        image: LabelImage,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self, SceneError> {
        if image.width() != intrinsics.width || image.height() != intrinsics.height {
            return Err(SceneError::IntrinsicsMismatch {
                image_w: image.width(),
                image_h: image.height(),
                k_w: intrinsics.width,
                k_h: intrinsics.height,
            });
        }
        Ok(Self {
            frame_id: frame_id.into(),
            cloud,
            image,
            intrinsics,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centroid3D {
    pub class: ClassId,
    pub position: Vec3,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centroid2D {
    pub class: ClassId,
    pub position: PixelCoord,
    pub support: usize,
}

/// Mean of all points labeled `class`; `None` when the class is absent.
pub fn centroid_3d(cloud: &LabeledPointCloud, class: ClassId) -> Option<Centroid3D> {
    let (sum, n) = cloud
        .iter()
        .filter(|(_, c)| *c == class)
        .fold((Vec3::zeros(), 0usize), |(s, n), (p, _)| (s + p, n + 1));
    (n > 0).then(|| Centroid3D {
        class,
        position: sum / n as f64,
        support: n,
    })
}

/// Mean pixel position (pixel centers at integer coordinates) of `class`.
pub fn centroid_2d(image: &LabelImage, class: ClassId) -> Option<Centroid2D> {
    let mut su = 0.0;
    let mut sv = 0.0;
    let mut n = 0usize;
    for (l, m, c) in image.iter_pixels() {
        if c == class {
            su += f64::from(l);
            sv += f64::from(m);
            n += 1;
        }
    }
    (n > 0).then(|| Centroid2D {
        class,
        position: PixelCoord::new(su / n as f64, sv / n as f64),
        support: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub points: usize,
    pub pixels: usize,
}

/// Per-class point and pixel counts, including the ignore class.
pub fn class_histogram(pair: &FramePair) -> BTreeMap<ClassId, ClassCounts> {
    let mut hist: BTreeMap<ClassId, ClassCounts> = BTreeMap::new();
    for &c in pair.cloud.labels() {
        hist.entry(c).or_default().points += 1;
    }
    for &c in pair.image.labels() {
        hist.entry(c).or_default().pixels += 1;
    }
    hist
}
