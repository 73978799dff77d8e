//! Report documents. Every float is rounded to 6 significant digits when a
//! report is built, so the TOML text and the in-memory value agree exactly.

use serde::{Deserialize, Serialize};

use semcal_core::costfield::{CostBreakdown, PointCounts};
use semcal_core::optimizer::{OptimizationTrace, Termination};
use semcal_core::pnp_init::{CentroidResidual, InitResult};
use semcal_core::synth::FrameRecord;

use crate::io::ExtrinsicsRecord;

/// Rounds to 6 significant digits. Non-finite values pass through.
pub fn r6(v: f64) -> f64 {
    if v.is_finite() {
        format!("{v:.5e}").parse().expect("formatted float parses")
    } else {
        v
    }
}

/// `v` rounded and printed in its shortest form.
pub fn fmt6(v: f64) -> String {
    format!("{}", r6(v))
}

fn round_value(v: &mut toml::Value) {
    match v {
        toml::Value::Float(f) => *f = r6(*f),
        toml::Value::Array(a) => a.iter_mut().for_each(round_value),
        toml::Value::Table(t) => t.iter_mut().for_each(|(_, v)| round_value(v)),
        _ => {}
    }
}

/// Serializes `value` into a table with all floats rounded.
pub fn rounded_table<T: Serialize>(value: &T) -> toml::Table {
    let mut v = toml::Value::try_from(value).expect("config serializes to a table");
    round_value(&mut v);
    match v {
        toml::Value::Table(t) => t,
        _ => toml::Table::new(),
    }
}

pub fn rounded_extrinsics(e: &semcal_core::geometry::Extrinsics) -> ExtrinsicsRecord {
    ExtrinsicsRecord::from_extrinsics(e).map(r6)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl ToolInfo {
    pub fn current() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCost {
    pub class: u8,
    pub numerator: f64,
    pub points: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub total: f64,
    pub numerator: f64,
    pub points: usize,
    pub counts: PointCounts,
    pub classes: Vec<ClassCost>,
}

fn mean(num: f64, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        r6(num / den as f64)
    }
}

impl CostSummary {
    pub fn new(b: &CostBreakdown) -> Self {
        Self {
            total: r6(b.total),
            numerator: r6(b.numerator),
            points: b.denominator,
            counts: b.counts.clone(),
            classes: b
                .per_class
                .iter()
                .map(|(c, t)| ClassCost {
                    class: c.0,
                    numerator: r6(t.numerator),
                    points: t.denominator,
                    mean: mean(t.numerator, t.denominator),
                })
                .collect(),
        }
    }
}

/// Cost contribution of one frame pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostics {
    pub frame_id: String,
    pub numerator: f64,
    pub points: usize,
    pub mean: f64,
    pub counts: PointCounts,
}

pub fn pair_diagnostics(b: &CostBreakdown) -> Vec<PairDiagnostics> {
    b.per_pair
        .iter()
        .map(|p| PairDiagnostics {
            frame_id: p.frame_id.clone(),
            numerator: r6(p.numerator),
            points: p.denominator,
            mean: mean(p.numerator, p.denominator),
            counts: p.counts.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub termination: Termination,
    pub iterations: usize,
    pub evaluations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
}

impl TraceSummary {
    pub fn new(t: &OptimizationTrace) -> Self {
        let cost =
            |e: Option<&semcal_core::optimizer::TraceEntry>| r6(e.map_or(f64::NAN, |e| e.cost));
        Self {
            termination: t.termination,
            iterations: t.iterations(),
            evaluations: t.evaluations,
            initial_cost: cost(t.entries.first()),
            final_cost: cost(t.entries.last()),
        }
    }
}

/// One row of the centroid reprojection table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidRow {
    pub frame_id: String,
    pub class: u8,
    pub u: f64,
    pub v: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub projected_u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub projected_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub residual_px: Option<f64>,
}

pub fn centroid_rows(residuals: &[CentroidResidual]) -> Vec<CentroidRow> {
    residuals
        .iter()
        .map(|r| CentroidRow {
            frame_id: r.frame_id.clone(),
            class: r.class.0,
            u: r6(r.centroid_2d.u),
            v: r6(r.centroid_2d.v),
            projected_u: r.projected.map(|p| r6(p.u)),
            projected_v: r.projected.map(|p| r6(p.v)),
            residual_px: r.residual.map(r6),
        })
        .collect()
}

pub fn centroid_csv(rows: &[CentroidRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("frame_id,class,u,v,projected_u,projected_v,residual_px\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.frame_id,
            r.class,
            r.u,
            r.v,
            opt(r.projected_u),
            opt(r.projected_v),
            opt(r.residual_px)
        ));
    }
    s
}

/// How the starting point of the refinement was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitSummary {
    /// `semantic_centroids` or `file`.
    pub source: String,
    pub extrinsics: ExtrinsicsRecord,
    pub cost: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub planar: Option<PlanarSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarSummary {
    pub centroid_pairs: usize,
    pub plane_inliers: usize,
    pub plane_rms_m: f64,
    pub winner: usize,
    pub candidate_costs: [f64; 2],
    pub candidate_cheirality: [usize; 2],
    pub reprojection_rms_px: f64,
}

impl PlanarSummary {
    pub fn new(r: &InitResult) -> Self {
        let c = &r.solution.candidates;
        Self {
            centroid_pairs: r.centroids.len(),
            plane_inliers: r.solution.plane.inliers.len(),
            plane_rms_m: r6(r.solution.plane.rms),
            winner: r.winner,
            candidate_costs: r.candidate_costs.map(r6),
            candidate_cheirality: [c[0].cheirality, c[1].cheirality],
            reprojection_rms_px: r6(c[r.winner].reprojection_rms),
        }
    }
}

/// Wall-clock seconds; only present when requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub load_s: f64,
    pub init_s: f64,
    pub optimize_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub tool: ToolInfo,
    pub data: String,
    pub frames: usize,
    pub classes: Vec<u8>,
    pub estimate: ExtrinsicsRecord,
    pub initialization: InitSummary,
    pub cost: CostSummary,
    pub trace: TraceSummary,
    pub pairs: Vec<PairDiagnostics>,
    #[serde(default)]
    pub centroids: Vec<CentroidRow>,
    pub config: toml::Table,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings: Option<Timings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub tool: ToolInfo,
    pub data: String,
    pub frames: usize,
    pub classes: Vec<u8>,
    pub initialization: InitSummary,
    pub centroids: Vec<CentroidRow>,
    pub config: toml::Table,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings: Option<Timings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub frame_id: String,
    pub objects: usize,
    pub sampled_points: usize,
    pub kept_points: usize,
    pub noisy_points: usize,
    pub noisy_pixels: usize,
}

impl FrameSummary {
    pub fn new(r: &FrameRecord) -> Self {
        Self {
            frame_id: r.frame_id.clone(),
            objects: r.objects.len(),
            sampled_points: r.objects.iter().map(|o| o.sampled_points).sum(),
            kept_points: r.objects.iter().map(|o| o.kept_points).sum(),
            noisy_points: r.noisy_points,
            noisy_pixels: r.noisy_pixels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub tool: ToolInfo,
    pub gt: ExtrinsicsRecord,
    pub spec: toml::Table,
    pub frames: Vec<FrameSummary>,
}

/// Signed errors, estimate minus ground truth. Angles wrap to (-180, 180].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub dtheta_x_deg: f64,
    pub dtheta_y_deg: f64,
    pub dtheta_z_deg: f64,
    pub dtx_m: f64,
    pub dty_m: f64,
    pub dtz_m: f64,
}

fn wrap_deg(d: f64) -> f64 {
    let w = d - 360.0 * (d / 360.0).round();
    if w <= -180.0 {
        w + 360.0
    } else {
        w
    }
}

impl ErrorRow {
    pub fn new(estimate: &ExtrinsicsRecord, gt: &ExtrinsicsRecord) -> Self {
        let e = estimate.values();
        let g = gt.values();
        let d: Vec<f64> = (0..6)
            .map(|i| {
                let diff = e[i] - g[i];
                r6(if i < 3 { wrap_deg(diff) } else { diff })
            })
            .collect();
        Self {
            dtheta_x_deg: d[0],
            dtheta_y_deg: d[1],
            dtheta_z_deg: d[2],
            dtx_m: d[3],
            dty_m: d[4],
            dtz_m: d[5],
        }
    }

    pub fn values(&self) -> [f64; 6] {
        [
            self.dtheta_x_deg,
            self.dtheta_y_deg,
            self.dtheta_z_deg,
            self.dtx_m,
            self.dty_m,
            self.dtz_m,
        ]
    }

    /// Fixed-width table in the usual per-parameter error layout.
    pub fn table(&self) -> String {
        let head = [
            "Δθx [deg]",
            "Δθy [deg]",
            "Δθz [deg]",
            "Δtx [m]",
            "Δty [m]",
            "Δtz [m]",
        ];
        let mut s = String::new();
        for h in head {
            s.push_str(&format!("{h:>12}"));
        }
        s.push('\n');
        for v in self.values() {
            s.push_str(&format!("{:>12}", fmt6(v)));
        }
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tool: ToolInfo,
    pub estimate: ExtrinsicsRecord,
    pub gt: ExtrinsicsRecord,
    pub errors: ErrorRow,
}
