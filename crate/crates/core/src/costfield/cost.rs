//! Semantic consistency cost over frame pairs.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::field::DistanceField;
use crate::geometry::{project, CameraIntrinsics, Extrinsics, Mat3, Vec3};
use crate::scene::{pixel_index, ClassId, FramePair, LabelImage};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("no labeled points in any requested class")]
    ZeroDenominator,
    #[error("no classes requested")]
    NoClasses,
    #[error("the ignore class 0 cannot be scored")]
    IgnoreClass,
}

/// How label disagreement between a point and its pixel is scored.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Consistency {
    /// 0 for equal labels, 1 otherwise.
    #[default]
    Binary,
    /// `1 - exp(-|a - b| / epsilon)`.
    Smooth { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeWeighting {
    /// Pixel distance times the squared sensor range of the point.
    #[default]
    SquaredRange,
    /// Pixel distance only. Kept for ablations.
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub consistency: Consistency,
    pub weighting: RangeWeighting,
}

pub fn consistency(l_point: ClassId, l_pixel: ClassId, mode: Consistency) -> f64 {
    match mode {
        Consistency::Binary => {
            if l_point == l_pixel {
                0.0
            } else {
                1.0
            }
        }
        Consistency::Smooth { epsilon } => {
            let diff = (f64::from(l_point.0) - f64::from(l_pixel.0)).abs();
            1.0 - (-diff / epsilon).exp()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointOutcome {
    Consistent,
    Inconsistent,
    OutOfImage,
    BehindCamera,
    EmptyClass,
}

/// Cost of a single labeled sensor-frame point.
///
/// `rotation` must be `ext.rotation_matrix()`; it is passed separately so the
/// hot loop does not rebuild it per point.
#[allow(clippy::too_many_arguments)]
fn point_cost_with(
    p: &Vec3,
    class: ClassId,
    rotation: &Mat3,
    translation: &Vec3,
    k: &CameraIntrinsics,
    image: &LabelImage,
    field: &DistanceField,
    config: &CostConfig,
) -> (f64, PointOutcome) {
    let weight = match config.weighting {
        RangeWeighting::SquaredRange => p.norm_squared(),
        RangeWeighting::Unweighted => 1.0,
    };
    let penalty = k.penalty_distance() * weight;
    let p_cam = rotation * p + translation;
    let Ok(px) = project(&p_cam, k) else {
        return (penalty, PointOutcome::BehindCamera);
    };
    if field.is_empty_class() {
        return (penalty, PointOutcome::EmptyClass);
    }
    let (c, outcome) = match pixel_index(&px, image.width(), image.height()) {
        Some((l, m)) => {
            let label = image.get(l, m);
            if label == class {
                return (0.0, PointOutcome::Consistent);
            }
            (
                consistency(class, label, config.consistency),
                PointOutcome::Inconsistent,
            )
        }
        None => (1.0, PointOutcome::OutOfImage),
    };
    // Non-empty field was checked above.
    let d = field.query(&px).unwrap_or(k.penalty_distance());
    (c * d * weight, outcome)
}

/// Cost `C · D` of one point of `class` under `ext`.
pub fn point_cost(
    p: &Vec3,
    class: ClassId,
    ext: &Extrinsics,
    k: &CameraIntrinsics,
    image: &LabelImage,
    field: &DistanceField,
    config: &CostConfig,
) -> (f64, PointOutcome) {
    let (r, t) = ext.to_matrix();
    point_cost_with(p, class, &r, &t, k, image, field, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassTerms {
    pub numerator: f64,
    pub denominator: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCounts {
    pub consistent: usize,
    pub inconsistent: usize,
    pub out_of_image: usize,
    pub behind_camera: usize,
    pub empty_class: usize,
}

impl PointCounts {
    fn record(&mut self, outcome: PointOutcome) {
        match outcome {
            PointOutcome::Consistent => self.consistent += 1,
            PointOutcome::Inconsistent => self.inconsistent += 1,
            PointOutcome::OutOfImage => self.out_of_image += 1,
            PointOutcome::BehindCamera => self.behind_camera += 1,
            PointOutcome::EmptyClass => self.empty_class += 1,
        }
    }

    fn add(&mut self, other: &PointCounts) {
        self.consistent += other.consistent;
        self.inconsistent += other.inconsistent;
        self.out_of_image += other.out_of_image;
        self.behind_camera += other.behind_camera;
        self.empty_class += other.empty_class;
    }
}

/// Cost terms of one frame pair.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PairTerms {
    pub frame_id: String,
    pub numerator: f64,
    pub denominator: usize,
    pub per_class: BTreeMap<ClassId, ClassTerms>,
    pub counts: PointCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub total: f64,
    pub numerator: f64,
    pub denominator: usize,
    pub per_class: BTreeMap<ClassId, ClassTerms>,
    pub per_pair: Vec<PairTerms>,
    pub counts: PointCounts,
}

fn check_classes(classes: &BTreeSet<ClassId>) -> Result<(), CostError> {
    if classes.is_empty() {
        return Err(CostError::NoClasses);
    }
    if classes.contains(&ClassId::IGNORE) {
        return Err(CostError::IgnoreClass);
    }
    Ok(())
}

/// A frame pair with distance fields built for a fixed class set.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pair: FramePair,
    fields: BTreeMap<ClassId, DistanceField>,
}

impl PreparedPair {
    pub fn new(pair: FramePair, classes: &BTreeSet<ClassId>) -> Self {
        let fields = classes
            .par_iter()
            .map(|&c| (c, DistanceField::build(&pair.image, c)))
            .collect::<Vec<_>>()
            .into_iter()
            .collect();
        Self { pair, fields }
    }

    pub fn pair(&self) -> &FramePair {
        &self.pair
    }

    pub fn field(&self, class: ClassId) -> Option<&DistanceField> {
        self.fields.get(&class)
    }

    /// Numerator and denominator terms; classes without a built field are skipped.
    pub fn terms(
        &self,
        ext: &Extrinsics,
        classes: &BTreeSet<ClassId>,
        config: &CostConfig,
    ) -> PairTerms {
        let (r, t) = ext.to_matrix();
        let mut lookup: [Option<&DistanceField>; 256] = [None; 256];
        for c in classes {
            lookup[c.0 as usize] = self.fields.get(c);
        }
        let mut numerators = [0.0f64; 256];
        let mut denominators = [0usize; 256];
        let mut counts = PointCounts::default();
        for (p, class) in self.pair.cloud.iter() {
            let Some(field) = lookup[class.0 as usize] else {
                continue;
            };
            let (cost, outcome) = point_cost_with(
                p,
                class,
                &r,
                &t,
                &self.pair.intrinsics,
                &self.pair.image,
                field,
                config,
            );
            counts.record(outcome);
            numerators[class.0 as usize] += cost;
            denominators[class.0 as usize] += 1;
        }
        let per_class: BTreeMap<ClassId, ClassTerms> = classes
            .iter()
            .filter(|c| denominators[c.0 as usize] > 0)
            .map(|&c| {
                let numerator = numerators[c.0 as usize];
                let denominator = denominators[c.0 as usize];
                (
                    c,
                    ClassTerms {
                        numerator,
                        denominator,
                    },
                )
            })
            .collect();
        PairTerms {
            frame_id: self.pair.frame_id.clone(),
            numerator: per_class.values().map(|c| c.numerator).sum(),
            denominator: per_class.values().map(|c| c.denominator).sum(),
            per_class,
            counts,
        }
    }
}

/// Frame pairs prepared for repeated cost evaluation.
#[derive(Debug, Clone)]
pub struct CostModel {
    pairs: Vec<PreparedPair>,
    classes: BTreeSet<ClassId>,
    config: CostConfig,
}

impl CostModel {
    pub fn new(
        pairs: Vec<FramePair>,
        classes: BTreeSet<ClassId>,
        config: CostConfig,
    ) -> Result<Self, CostError> {
        check_classes(&classes)?;
        let pairs = pairs
            .into_par_iter()
            .map(|p| PreparedPair::new(p, &classes))
            .collect();
        Ok(Self {
            pairs,
            classes,
            config,
        })
    }

    pub fn pairs(&self) -> &[PreparedPair] {
        &self.pairs
    }

    pub fn classes(&self) -> &BTreeSet<ClassId> {
        &self.classes
    }

    pub fn config(&self) -> &CostConfig {
        &self.config
    }

    /// Full breakdown over every prepared class.
    pub fn evaluate(&self, ext: &Extrinsics) -> Result<CostBreakdown, CostError> {
        self.evaluate_classes(ext, &self.classes)
    }

    /// Breakdown restricted to a subset of the prepared classes.
    pub fn evaluate_classes(
        &self,
        ext: &Extrinsics,
        classes: &BTreeSet<ClassId>,
    ) -> Result<CostBreakdown, CostError> {
        check_classes(classes)?;
        // Collect then reduce in pair order so the sum is thread-count independent.
        let per_pair: Vec<PairTerms> = self
            .pairs
            .par_iter()
            .map(|p| p.terms(ext, classes, &self.config))
            .collect();
        let mut per_class: BTreeMap<ClassId, ClassTerms> = BTreeMap::new();
        let mut counts = PointCounts::default();
        let mut numerator = 0.0;
        let mut denominator = 0;
        for terms in &per_pair {
            numerator += terms.numerator;
            denominator += terms.denominator;
            counts.add(&terms.counts);
            for (c, t) in &terms.per_class {
                let e = per_class.entry(*c).or_default();
                e.numerator += t.numerator;
                e.denominator += t.denominator;
            }
        }
        if denominator == 0 {
            return Err(CostError::ZeroDenominator);
        }
        Ok(CostBreakdown {
            total: numerator / denominator as f64,
            numerator,
            denominator,
            per_class,
            per_pair,
            counts,
        })
    }

    /// Scalar objective for the optimizer.
    pub fn total(&self, ext: &Extrinsics) -> Result<f64, CostError> {
        self.evaluate(ext).map(|b| b.total)
    }
}

/// `(numerator, denominator)` of one prepared pair.
pub fn pair_cost(
    pair: &PreparedPair,
    ext: &Extrinsics,
    classes: &BTreeSet<ClassId>,
    config: &CostConfig,
) -> Result<(f64, usize), CostError> {
    check_classes(classes)?;
    let terms = pair.terms(ext, classes, config);
    if terms.denominator == 0 {
        return Err(CostError::ZeroDenominator);
    }
    Ok((terms.numerator, terms.denominator))
}

/// One-shot aggregate cost; builds the distance fields on every call.
pub fn total_cost(
    pairs: &[FramePair],
    ext: &Extrinsics,
    classes: &BTreeSet<ClassId>,
    config: &CostConfig,
) -> Result<CostBreakdown, CostError> {
    CostModel::new(pairs.to_vec(), classes.clone(), *config)?.evaluate(ext)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PixelCoord, RotationAngles, Translation};
    use crate::scene::LabeledPointCloud;

    fn classes(ids: &[u8]) -> BTreeSet<ClassId> {
        ids.iter().map(|&c| ClassId(c)).collect()
    }

    fn k() -> CameraIntrinsics {
        // 20x10 image, unit focal length scaled so that x/z maps 1:1 to pixels.
        CameraIntrinsics::new(10.0, 10.0, 0.0, 0.0, 20, 10).unwrap()
    }

    /// Camera-frame point hitting pixel (u, v) at the given depth.
    fn point_at(u: f64, v: f64, depth: f64) -> Vec3 {
        k().unproject(&PixelCoord::new(u, v), depth)
    }

    fn block_image() -> LabelImage {
        // class 1 on columns 2..=4, rows 2..=4; class 2 on column 15, all rows.
        let mut img = LabelImage::filled(20, 10, ClassId(0));
        for m in 2..=4 {
            for l in 2..=4 {
                img.set(l, m, ClassId(1));
            }
        }
        for m in 0..10 {
            img.set(15, m, ClassId(2));
        }
        img
    }

    fn pair_with(points: Vec<Vec3>, labels: &[u8]) -> FramePair {
        let labels = labels.iter().map(|&c| ClassId(c)).collect();
        FramePair::new(
            "f",
            LabeledPointCloud::new(points, labels).unwrap(),
            block_image(),
            k(),
        )
        .unwrap()
    }

    /// Direct evaluation of the distance term by scanning every pixel.
    fn brute_distance(img: &LabelImage, class: ClassId, px: &PixelCoord) -> f64 {
        let l = (px.u + 0.5).floor();
        let m = (px.v + 0.5).floor();
        let (ul, vl) = if pixel_index(px, img.width(), img.height()).is_some() {
            (l, m)
        } else {
            (px.u, px.v)
        };
        img.iter_pixels()
            .filter(|&(_, _, c)| c == class)
            .map(|(a, b, _)| (ul - a as f64).abs() + (vl - b as f64).abs())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn consistency_examples() {
        assert_eq!(
            consistency(ClassId(1), ClassId(1), Consistency::Binary),
            0.0
        );
        assert_eq!(
            consistency(ClassId(3), ClassId(1), Consistency::Binary),
            1.0
        );
        let c = consistency(
            ClassId(1),
            ClassId(2),
            Consistency::Smooth { epsilon: 1e-2 },
        );
        assert!((c - (1.0 - (-100f64).exp())).abs() < 1e-15);
        assert_eq!(
            consistency(
                ClassId(1),
                ClassId(1),
                Consistency::Smooth { epsilon: 1e-2 }
            ),
            0.0
        );
    }

    #[test]
    fn point_on_same_class_pixel_costs_nothing() {
        let img = block_image();
        let field = DistanceField::build(&img, ClassId(1));
        let p = point_at(3.0, 3.0, 5.0);
        let (c, o) = point_cost(
            &p,
            ClassId(1),
            &Extrinsics::identity(),
            &k(),
            &img,
            &field,
            &CostConfig::default(),
        );
        assert_eq!((c, o), (0.0, PointOutcome::Consistent));
    }

    #[test]
    fn inconsistent_point_cost_is_distance_times_squared_range() {
        let img = block_image();
        let field = DistanceField::build(&img, ClassId(1));
        // Pixel (7, 3) is 3 columns right of the block; ‖p‖² = 25.
        let dir = point_at(7.0, 3.0, 1.0);
        let p = dir / dir.norm() * 5.0;
        let (c, o) = point_cost(
            &p,
            ClassId(1),
            &Extrinsics::identity(),
            &k(),
            &img,
            &field,
            &CostConfig::default(),
        );
        let px = project(&p, &k()).unwrap();
        let oracle = brute_distance(&img, ClassId(1), &px) * p.norm_squared();
        assert_eq!(o, PointOutcome::Inconsistent);
        assert!((c - 75.0).abs() < 1e-9);
        assert!((c - oracle).abs() < 1e-9);
    }

    #[test]
    fn out_of_image_point_uses_offset() {
        let img = block_image();
        let field = DistanceField::build(&img, ClassId(1));
        let p = point_at(-2.5, 3.0, 2.0);
        let (c, o) = point_cost(
            &p,
            ClassId(1),
            &Extrinsics::identity(),
            &k(),
            &img,
            &field,
            &CostConfig::default(),
        );
        assert_eq!(o, PointOutcome::OutOfImage);
        let px = project(&p, &k()).unwrap();
        let oracle = brute_distance(&img, ClassId(1), &px) * p.norm_squared();
        assert!((c - oracle).abs() < 1e-9, "{c} vs {oracle}");
    }

    #[test]
    fn behind_camera_and_empty_class_penalties() {
        let img = block_image();
        let field = DistanceField::build(&img, ClassId(1));
        let p = Vec3::new(1.0, 2.0, -2.0);
        let (c, o) = point_cost(
            &p,
            ClassId(1),
            &Extrinsics::identity(),
            &k(),
            &img,
            &field,
            &CostConfig::default(),
        );
        assert_eq!(o, PointOutcome::BehindCamera);
        assert_eq!(c, 30.0 * 9.0);

        let empty = DistanceField::build(&img, ClassId(3));
        let p = point_at(3.0, 3.0, 2.0);
        let (c, o) = point_cost(
            &p,
            ClassId(3),
            &Extrinsics::identity(),
            &k(),
            &img,
            &empty,
            &CostConfig::default(),
        );
        assert_eq!(o, PointOutcome::EmptyClass);
        assert!((c - 30.0 * p.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn unweighted_and_smooth_variants() {
        let img = block_image();
        let field = DistanceField::build(&img, ClassId(2));
        let p = point_at(3.0, 3.0, 4.0);
        let cfg = CostConfig {
            consistency: Consistency::Smooth { epsilon: 0.5 },
            weighting: RangeWeighting::Unweighted,
        };
        let (c, _) = point_cost(
            &p,
            ClassId(2),
            &Extrinsics::identity(),
            &k(),
            &img,
            &field,
            &cfg,
        );
        // pixel (3,3) has class 1: |2-1| = 1, distance to column 15 is 12.
        assert!((c - (1.0 - (-2f64).exp()) * 12.0).abs() < 1e-12);
    }

    #[test]
    fn pair_cost_counts_only_requested_classes() {
        let pts = vec![point_at(3.0, 3.0, 5.0); 200]
            .into_iter()
            .chain(vec![point_at(15.0, 1.0, 5.0); 7])
            .chain(vec![point_at(1.0, 1.0, 5.0); 3])
            .collect::<Vec<_>>();
        let mut labels = vec![1u8; 200];
        labels.extend([2; 7]);
        labels.extend([0; 3]);
        let prepared = PreparedPair::new(pair_with(pts, &labels), &classes(&[1, 2]));
        let (num, den) = pair_cost(
            &prepared,
            &Extrinsics::identity(),
            &classes(&[1]),
            &CostConfig::default(),
        )
        .unwrap();
        assert_eq!((num, den), (0.0, 200));
        let (_, den) = pair_cost(
            &prepared,
            &Extrinsics::identity(),
            &classes(&[1, 2]),
            &CostConfig::default(),
        )
        .unwrap();
        assert_eq!(den, 207);
    }

    #[test]
    fn single_inconsistent_point_numerator() {
        let p = point_at(9.0, 7.0, 3.0);
        let prepared = PreparedPair::new(pair_with(vec![p], &[1]), &classes(&[1]));
        let (num, den) = pair_cost(
            &prepared,
            &Extrinsics::identity(),
            &classes(&[1]),
            &CostConfig::default(),
        )
        .unwrap();
        let img = block_image();
        let (expected, _) = point_cost(
            &p,
            ClassId(1),
            &Extrinsics::identity(),
            &k(),
            &img,
            &DistanceField::build(&img, ClassId(1)),
            &CostConfig::default(),
        );
        let oracle =
            brute_distance(&img, ClassId(1), &PixelCoord::new(9.0, 7.0)) * p.norm_squared();
        assert_eq!(den, 1);
        assert_eq!(num, expected);
        assert!((num - oracle).abs() < 1e-9);
    }

    #[test]
    fn zero_denominator_errors() {
        let prepared = PreparedPair::new(
            pair_with(vec![point_at(1.0, 1.0, 2.0)], &[0]),
            &classes(&[1]),
        );
        assert_eq!(
            pair_cost(
                &prepared,
                &Extrinsics::identity(),
                &classes(&[1]),
                &CostConfig::default()
            ),
            Err(CostError::ZeroDenominator)
        );
        let pairs = vec![pair_with(vec![point_at(1.0, 1.0, 2.0)], &[2])];
        assert_eq!(
            total_cost(
                &pairs,
                &Extrinsics::identity(),
                &classes(&[1]),
                &CostConfig::default()
            ),
            Err(CostError::ZeroDenominator)
        );
        assert_eq!(
            total_cost(
                &pairs,
                &Extrinsics::identity(),
                &classes(&[0, 1]),
                &CostConfig::default()
            ),
            Err(CostError::IgnoreClass)
        );
    }

    #[test]
    fn total_cost_ratio_arithmetic() {
        // Two pairs: numerators 10 and 30 over 100 points each.
        // A point at pixel (5, 3) is 1 px from the block; ‖p‖² chosen to give the numerator.
        let make = |numerator: f64| {
            let dir = point_at(5.0, 3.0, 1.0);
            let p = dir / dir.norm() * numerator.sqrt();
            let mut pts = vec![point_at(3.0, 3.0, 4.0); 99];
            pts.push(p);
            pair_with(pts, &[1; 100])
        };
        let b = total_cost(
            &[make(10.0), make(30.0)],
            &Extrinsics::identity(),
            &classes(&[1]),
            &CostConfig::default(),
        )
        .unwrap();
        assert!((b.total - 0.2).abs() < 1e-12);
        assert_eq!(b.denominator, 200);
        assert_eq!(b.per_pair.len(), 2);
        assert!((b.per_pair[1].numerator - 30.0).abs() < 1e-9);
        assert_eq!(b.counts.consistent, 198);
        assert_eq!(b.counts.inconsistent, 2);

        let single = total_cost(
            &[make(10.0)],
            &Extrinsics::identity(),
            &classes(&[1]),
            &CostConfig::default(),
        )
        .unwrap();
        assert!((single.total - 0.1).abs() < 1e-12);
        let doubled = total_cost(
            &[make(10.0), make(10.0)],
            &Extrinsics::identity(),
            &classes(&[1]),
            &CostConfig::default(),
        )
        .unwrap();
        assert_eq!(single.total, doubled.total);
    }

    #[test]
    fn moving_point_away_never_lowers_numerator() {
        let img = block_image();
        let mut last = 0.0;
        for u in 4..14 {
            let p = point_at(u as f64, 3.0, 1.0).normalize() * 6.0;
            let ext = Extrinsics::new(RotationAngles::zero(), Translation::zero());
            let prepared = PreparedPair::new(pair_with(vec![p], &[1]), &classes(&[1]));
            let (num, _) =
                pair_cost(&prepared, &ext, &classes(&[1]), &CostConfig::default()).unwrap();
            let d = brute_distance(&img, ClassId(1), &PixelCoord::new(u as f64, 3.0));
            assert!((num - d * p.norm_squared()).abs() < 1e-9);
            assert!(num >= last);
            last = num;
        }
    }
}
