//! Subcommand implementations. Each writes its outputs under the output
//! directory and returns only after every file is complete.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use clap::ValueEnum;
use rayon::prelude::*;
use serde::Serialize;

use semcal_core::costfield::CostModel;
use semcal_core::geometry::Extrinsics;
use semcal_core::optimizer::{calibrate_model, OptimizationTrace};
use semcal_core::pnp_init::initialize_with_model;
use semcal_core::scene::ClassId;
use semcal_core::synth::{generate, SceneSpec};

use crate::config::{Config, Overrides};
use crate::io::{self, ExtrinsicsRecord};
use crate::report::{
    centroid_csv, centroid_rows, fmt6, pair_diagnostics, r6, rounded_extrinsics, rounded_table,
    CalibrationReport, CostSummary, ErrorRow, EvalReport, FrameSummary, InitReport, InitSummary,
    PlanarSummary, SynthReport, Timings, ToolInfo, TraceSummary,
};

pub const GT_FILE: &str = "gt.txt";
pub const SYNTH_REPORT: &str = "synth_report.toml";
pub const INIT_REPORT: &str = "init_report.toml";
pub const INIT_FILE: &str = "init.txt";
pub const CENTROIDS_CSV: &str = "centroids.csv";
pub const REPORT: &str = "report.toml";
pub const ESTIMATE_FILE: &str = "estimate.txt";
pub const TRACE_CSV: &str = "trace.csv";
pub const EVAL_REPORT: &str = "eval.toml";

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub overrides: Overrides,
    pub output: Option<PathBuf>,
    pub timings: bool,
}

impl Common {
    fn output_dir(&self) -> Result<PathBuf> {
        let dir = self.output.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    pub fn config(&self) -> Result<Config> {
        Config::load(self.config.as_deref(), &self.overrides)
    }
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).with_context(|| format!("serializing {}", path.display()))?;
    io::write_text(path, &text)
}

/// Generates a synthetic dataset. Returns the ground truth.
pub fn synth(spec_path: Option<&Path>, common: &Common) -> Result<Extrinsics> {
    let mut spec = match spec_path {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading spec {}", p.display()))?;
            toml::from_str::<SceneSpec>(&text)
                .with_context(|| format!("parsing spec {}", p.display()))?
        }
        None => SceneSpec::default(),
    };
    if let Some(seed) = common.overrides.seed {
        spec.seed = seed;
    }
    spec.validate().context("invalid scene spec")?;
    let scene = generate(&spec)?;
    let out = common.output_dir()?;
    io::write_dataset(&out, &scene.pairs)?;
    io::write_extrinsics(&out.join(GT_FILE), &scene.gt)?;
    let report = SynthReport {
        tool: ToolInfo::current(),
        gt: rounded_extrinsics(&scene.gt),
        spec: rounded_table(&spec),
        frames: scene.records.iter().map(FrameSummary::new).collect(),
    };
    write_toml(&out.join(SYNTH_REPORT), &report)?;
    Ok(scene.gt)
}

struct Loaded {
    config: Config,
    model: CostModel,
    frames: usize,
    load_s: f64,
}

fn load(data: &Path, common: &Common) -> Result<Loaded> {
    let start = Instant::now();
    let config = common.config()?;
    let pairs = io::load_dataset(data, &config.cloud_remap()?, &config.image_remap()?)?;
    let classes = config.resolve_classes(&pairs)?;
    let frames = pairs.len();
    let model = CostModel::new(pairs, classes, config.cost)?;
    Ok(Loaded {
        config,
        model,
        frames,
        load_s: start.elapsed().as_secs_f64(),
    })
}

fn class_list(model: &CostModel) -> Vec<u8> {
    model.classes().iter().map(|c| c.0).collect()
}

struct Initial {
    extrinsics: Extrinsics,
    summary: InitSummary,
    centroids: Vec<crate::report::CentroidRow>,
}

fn pnp_initial(l: &Loaded) -> Result<Initial> {
    let r = initialize_with_model(&l.model, &l.config.init)
        .context("initialization from semantic centroids failed")?;
    let cost = l.model.total(&r.extrinsics)?;
    Ok(Initial {
        extrinsics: r.extrinsics,
        summary: InitSummary {
            source: "semantic_centroids".into(),
            extrinsics: rounded_extrinsics(&r.extrinsics),
            cost: r6(cost),
            planar: Some(PlanarSummary::new(&r)),
        },
        centroids: centroid_rows(&r.residuals),
    })
}

/// Centroid-based initialization only.
pub fn init(data: &Path, common: &Common) -> Result<Extrinsics> {
    let start = Instant::now();
    let l = load(data, common)?;
    let t0 = Instant::now();
    let initial = pnp_initial(&l)?;
    let init_s = t0.elapsed().as_secs_f64();
    let out = common.output_dir()?;
    io::write_extrinsics(&out.join(INIT_FILE), &initial.extrinsics)?;
    io::write_text(&out.join(CENTROIDS_CSV), &centroid_csv(&initial.centroids))?;
    let report = InitReport {
        tool: ToolInfo::current(),
        data: data.display().to_string(),
        frames: l.frames,
        classes: class_list(&l.model),
        initialization: initial.summary,
        centroids: initial.centroids,
        config: rounded_table(&l.config),
        timings: common.timings.then(|| Timings {
            load_s: r6(l.load_s),
            init_s: r6(init_s),
            optimize_s: 0.0,
            total_s: r6(start.elapsed().as_secs_f64()),
        }),
    };
    write_toml(&out.join(INIT_REPORT), &report)?;
    Ok(initial.extrinsics)
}

fn trace_csv(trace: &OptimizationTrace) -> String {
    let mut s = String::from("iteration,theta_x_deg,theta_y_deg,theta_z_deg,tx_m,ty_m,tz_m,cost\n");
    for e in &trace.entries {
        let p: [f64; 6] = e.params[..6].try_into().expect("six parameters");
        let rec = ExtrinsicsRecord::from_extrinsics(&Extrinsics::from_params(&p));
        s.push_str(&e.iteration.to_string());
        for v in rec.values().into_iter().chain([e.cost]) {
            s.push(',');
            s.push_str(&fmt6(v));
        }
        s.push('\n');
    }
    s
}

/// Initialization (from `init_file` or centroids) followed by refinement.
pub fn calibrate(
    data: &Path,
    init_file: Option<&Path>,
    write_trace: bool,
    common: &Common,
) -> Result<CalibrationReport> {
    let start = Instant::now();
    let l = load(data, common)?;
    let t0 = Instant::now();
    let initial = match init_file {
        Some(p) => {
            let e = io::read_extrinsics(p)?;
            Initial {
                extrinsics: e,
                summary: InitSummary {
                    source: "file".into(),
                    extrinsics: rounded_extrinsics(&e),
                    cost: r6(l.model.total(&e)?),
                    planar: None,
                },
                centroids: Vec::new(),
            }
        }
        None => pnp_initial(&l)?,
    };
    let init_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let result = calibrate_model(&l.model, &initial.extrinsics, &l.config.optimizer)
        .context("refinement failed")?;
    let optimize_s = t1.elapsed().as_secs_f64();

    let out = common.output_dir()?;
    io::write_extrinsics(&out.join(ESTIMATE_FILE), &result.extrinsics)?;
    if write_trace {
        io::write_text(&out.join(TRACE_CSV), &trace_csv(&result.trace))?;
    }
    let report = CalibrationReport {
        tool: ToolInfo::current(),
        data: data.display().to_string(),
        frames: l.frames,
        classes: class_list(&l.model),
        estimate: rounded_extrinsics(&result.extrinsics),
        initialization: initial.summary,
        cost: CostSummary::new(&result.breakdown),
        trace: TraceSummary::new(&result.trace),
        pairs: pair_diagnostics(&result.breakdown),
        centroids: initial.centroids,
        config: rounded_table(&l.config),
        timings: common.timings.then(|| Timings {
            load_s: r6(l.load_s),
            init_s: r6(init_s),
            optimize_s: r6(optimize_s),
            total_s: r6(start.elapsed().as_secs_f64()),
        }),
    };
    write_toml(&out.join(REPORT), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    #[value(name = "theta_x")]
    ThetaX,
    #[value(name = "theta_y")]
    ThetaY,
    #[value(name = "theta_z")]
    ThetaZ,
    #[value(name = "tx")]
    Tx,
    #[value(name = "ty")]
    Ty,
    #[value(name = "tz")]
    Tz,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_rotation(self) -> bool {
        self.index() < 3
    }

    pub fn name(self) -> &'static str {
        ["theta_x", "theta_y", "theta_z", "tx", "ty", "tz"][self.index()]
    }

    /// Default half-range and step: degrees for rotations, meters otherwise.
    pub fn default_grid(self) -> (f64, f64) {
        if self.is_rotation() {
            (30.0, 0.01)
        } else {
            (2.0, 0.005)
        }
    }
}

pub fn sweep_file(axis: Axis) -> String {
    format!("sweep_{}.csv", axis.name())
}

/// Cost along one parameter around `gt`, on the grid `k · step` for
/// `|k| ≤ round(range / step)`. Returns the CSV path.
pub fn sweep(
    data: &Path,
    gt_file: &Path,
    axis: Axis,
    range: Option<f64>,
    step: Option<f64>,
    common: &Common,
) -> Result<PathBuf> {
    let (dr, ds) = axis.default_grid();
    let (range, step) = (range.unwrap_or(dr), step.unwrap_or(ds));
    ensure!(step > 0.0 && step.is_finite(), "step must be positive");
    ensure!(
        range >= 0.0 && range.is_finite(),
        "range must be non-negative"
    );
    let n = (range / step).round() as i64;
    ensure!(n <= 1_000_000, "grid of {} rows is too large", 2 * n + 1);

    let gt = io::read_extrinsics(gt_file)?;
    let l = load(data, common)?;
    let classes: Vec<ClassId> = l.model.classes().iter().copied().collect();
    let unit = if axis.is_rotation() {
        step.to_radians()
    } else {
        step
    };
    let rows: Vec<String> = (-n..=n)
        .into_par_iter()
        .map(|k| -> Result<String> {
            let mut p = gt.to_params();
            p[axis.index()] += k as f64 * unit;
            let b = l.model.evaluate(&Extrinsics::from_params(&p))?;
            let mut row = format!("{},{}", fmt6(k as f64 * step), fmt6(b.total));
            for c in &classes {
                let v = b
                    .per_class
                    .get(c)
                    .filter(|t| t.denominator > 0)
                    .map(|t| t.numerator / t.denominator as f64);
                row.push(',');
                if let Some(v) = v {
                    row.push_str(&fmt6(v));
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let unit_name = if axis.is_rotation() { "deg" } else { "m" };
    let mut csv = format!("displacement_{unit_name},cost");
    for c in &classes {
        csv.push_str(&format!(",class_{c}"));
    }
    csv.push('\n');
    for r in rows {
        csv.push_str(&r);
        csv.push('\n');
    }
    let path = common.output_dir()?.join(sweep_file(axis));
    io::write_text(&path, &csv)?;
    Ok(path)
}

/// Per-parameter signed errors of `estimate` against `gt`. Writes the
/// report only when an output directory is given.
pub fn eval(estimate: &Path, gt: &Path, common: &Common) -> Result<EvalReport> {
    let est = ExtrinsicsRecord::from_extrinsics(&io::read_extrinsics(estimate)?);
    let gt = ExtrinsicsRecord::from_extrinsics(&io::read_extrinsics(gt)?);
    let report = EvalReport {
        tool: ToolInfo::current(),
        estimate: est.map(r6),
        gt: gt.map(r6),
        errors: ErrorRow::new(&est, &gt),
    };
    if common.output.is_some() {
        write_toml(&common.output_dir()?.join(EVAL_REPORT), &report)?;
    }
    Ok(report)
}
