//! Exact L1 distance transforms of label images.

use thiserror::Error;

use crate::geometry::PixelCoord;
use crate::scene::{ClassId, LabelImage};

const FAR: u32 = u32::MAX / 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("class {0} has no pixels in the label image")]
pub struct EmptyClass(pub ClassId);

/// Per-pixel Manhattan distance to the nearest pixel labeled `class`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    class: ClassId,
    width: u32,
    height: u32,
    dist: Vec<u32>,
    empty: bool,
}

impl DistanceField {
    /// Two raster sweeps with unit axial steps. On a 4-connected grid the
    /// shortest path length is the L1 distance, so the result is exact.
    pub fn build(image: &LabelImage, class: ClassId) -> Self {
        let w = image.width() as usize;
        let h = image.height() as usize;
        let mut dist: Vec<u32> = image
            .labels()
            .iter()
            .map(|&c| if c == class { 0 } else { FAR })
            .collect();
        let empty = !dist.contains(&0);

        if !empty {
            for m in 0..h {
                let row = m * w;
                for l in 0..w {
                    let i = row + l;
                    let mut d = dist[i];
                    if l > 0 {
                        d = d.min(dist[i - 1] + 1);
                    }
                    if m > 0 {
                        d = d.min(dist[i - w] + 1);
                    }
                    dist[i] = d;
                }
            }
            for m in (0..h).rev() {
                let row = m * w;
                for l in (0..w).rev() {
                    let i = row + l;
                    let mut d = dist[i];
                    if l + 1 < w {
                        d = d.min(dist[i + 1] + 1);
                    }
                    if m + 1 < h {
                        d = d.min(dist[i + w] + 1);
                    }
                    dist[i] = d;
                }
            }
        }

        Self {
            class,
            width: image.width(),
            height: image.height(),
            dist,
            empty,
        }
    }

    pub fn class(&self) -> ClassId {
        self.class
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn is_empty_class(&self) -> bool {
        self.empty
    }

    /// Distance at an in-image pixel. Meaningless for an empty class.
    pub fn get(&self, l: u32, m: u32) -> u32 {
        self.dist[m as usize * self.width as usize + l as usize]
    }

    /// Distance from a real pixel position to the nearest pixel of the class.
    ///
    /// The position is clamped to the pixel-center box `[0, W-1] x [0, H-1]`,
    /// the clamped position is looked up at its nearest pixel, and the clamp
    /// offset is added back. Every in-image pixel lies on the far side of the
    /// clamp plane, so the L1 minimum splits exactly into the two parts.
    pub fn query(&self, p: &PixelCoord) -> Result<f64, EmptyClass> {
        if self.empty {
            return Err(EmptyClass(self.class));
        }
        let uc = p.u.clamp(0.0, f64::from(self.width - 1));
        let vc = p.v.clamp(0.0, f64::from(self.height - 1));
        let l = ((uc + 0.5).floor() as u32).min(self.width - 1);
        let m = ((vc + 0.5).floor() as u32).min(self.height - 1);
        Ok(f64::from(self.get(l, m)) + (p.u - uc).abs() + (p.v - vc).abs())
    }
}
