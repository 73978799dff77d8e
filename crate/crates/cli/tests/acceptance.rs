//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use semcal_cli::commands::{self, Axis, Common};
use semcal_cli::config::Overrides;
use semcal_cli::io;
use semcal_core::costfield::{total_cost, CostConfig, CostModel, DistanceField};
use semcal_core::geometry::{
    canonical_angle, transform_point, CameraIntrinsics, Extrinsics, PixelCoord, RotationAngles,
    Translation, Vec3,
};
use semcal_core::optimizer::{calibrate_model, powell_minimize, OptimizerConfig};
use semcal_core::pnp_init::{initialize, initialize_with_model, InitConfig};
use semcal_core::scene::{ClassId, FramePair, LabelImage, LabeledPointCloud};
use semcal_core::synth::{generate, perturb, SceneSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn out(dir: &Path) -> Common {
    Common {
        output: Some(dir.to_path_buf()),
        ..Common::default()
    }
}

fn write_spec(dir: &Path, spec: &SceneSpec) -> PathBuf {
    let p = dir.join("spec.toml");
    fs::write(&p, toml::to_string(spec).unwrap()).unwrap();
    p
}

fn spec_classes(spec: &SceneSpec) -> BTreeSet<ClassId> {
    spec.classes.iter().map(|&c| ClassId(c)).collect()
}

// 1. Cost zero at ground truth on a noiseless scene.
fn cost_zero_oracle() -> Outcome {
    let spec = SceneSpec {
        frames: 20,
        objects_per_frame: 5,
        ..SceneSpec::default()
    };
    let t = Instant::now();
    let scene = generate(&spec).unwrap();
    let b = total_cost(
        &scene.pairs,
        &scene.gt,
        &spec_classes(&spec),
        &CostConfig::default(),
    )
    .unwrap();
    let secs = t.elapsed().as_secs_f64();

    // the same scene after a write/read cycle
    let tmp = TempDir::new().unwrap();
    io::write_dataset(tmp.path(), &scene.pairs).unwrap();
    let loaded =
        io::load_dataset(tmp.path(), &io::Remap::default(), &io::Remap::default()).unwrap();
    let disk = total_cost(
        &loaded,
        &scene.gt,
        &spec_classes(&spec),
        &CostConfig::default(),
    )
    .unwrap();

    outcome(
        b.total == 0.0 && disk.total == 0.0 && secs < 5.0,
        format!(
            "total {} ({} points), from disk {}, {secs:.2} s (limit 5 s)",
            b.total, b.denominator, disk.total
        ),
    )
}

/// O(W²H²) reference: minimum L1 distance from `(u, v)` to any pixel of `class`.
fn brute_force(image: &LabelImage, class: ClassId, u: f64, v: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for m in 0..image.height() {
        for l in 0..image.width() {
            if image.get(l, m) == class {
                let d = (u - f64::from(l)).abs() + (v - f64::from(m)).abs();
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
    }
    best
}

// 2. Distance fields equal brute force everywhere, including out of range.
fn distance_field_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut cells, mut mismatches, mut queries) = (0usize, 0usize, 0usize);
    for _ in 0..100 {
        let w = rng.random_range(1..=64u32);
        let h = rng.random_range(1..=64u32);
        let n_classes = rng.random_range(1..=4u8);
        let mut labels: Vec<ClassId> = (0..w * h)
            .map(|_| ClassId(rng.random_range(0..=n_classes)))
            .collect();
        // at least one labeled cell so every grid takes queries
        let i = rng.random_range(0..labels.len());
        labels[i] = ClassId(rng.random_range(1..=n_classes));
        let image = LabelImage::new(w, h, labels).unwrap();
        let mut present = Vec::new();
        for c in 1..=n_classes {
            let class = ClassId(c);
            let field = DistanceField::build(&image, class);
            if field.is_empty_class() {
                continue;
            }
            present.push(class);
            for m in 0..h {
                for l in 0..w {
                    cells += 1;
                    let bf = brute_force(&image, class, f64::from(l), f64::from(m)).unwrap();
                    if f64::from(field.get(l, m)) != bf {
                        mismatches += 1;
                    }
                }
            }
        }
        // ten out-of-range queries per grid: dyadic offsets outside, pixel
        // centers on an axis that stays in range
        for _ in 0..10 {
            let class = present[rng.random_range(0..present.len())];
            queries += 1;
            mismatches += usize::from(!query_matches(&mut rng, &image, class, w, h));
        }
    }
    outcome(
        mismatches == 0 && queries == 1000,
        format!("{cells} cells and {queries} out-of-range queries, {mismatches} mismatches"),
    )
}

fn query_matches(rng: &mut ChaCha8Rng, image: &LabelImage, class: ClassId, w: u32, h: u32) -> bool {
    let outside = |rng: &mut ChaCha8Rng, size: u32| {
        let off = f64::from(rng.random_range(1..=400u32)) / 8.0;
        if rng.random_bool(0.5) {
            -off
        } else {
            f64::from(size - 1) + off
        }
    };
    let (u, v) = match rng.random_range(0..3) {
        0 => (outside(rng, w), f64::from(rng.random_range(0..h))),
        1 => (f64::from(rng.random_range(0..w)), outside(rng, h)),
        _ => (outside(rng, w), outside(rng, h)),
    };
    let field = DistanceField::build(image, class);
    let q = field.query(&PixelCoord::new(u, v)).unwrap();
    Some(q) == brute_force(image, class, u, v)
}

/// Means of 20 equal consecutive buckets.
fn bucket_means(costs: &[f64]) -> Vec<f64> {
    let n = costs.len();
    (0..20)
        .map(|b| {
            let (lo, hi) = (b * n / 20, (b + 1) * n / 20);
            costs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

// 3. Sweep curves: minimum at zero, bucket means rising away from it.
fn convexity_sweep() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let gt = data.join(commands::GT_FILE);
    commands::synth(None, &out(&data)).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for axis in [
        Axis::ThetaX,
        Axis::ThetaY,
        Axis::ThetaZ,
        Axis::Tx,
        Axis::Ty,
        Axis::Tz,
    ] {
        let path = commands::sweep(&data, &gt, axis, None, None, &out(tmp.path())).unwrap();
        let text = fs::read_to_string(path).unwrap();
        let rows: Vec<(f64, f64)> = text
            .lines()
            .skip(1)
            .map(|l| {
                let mut f = l.split(',').map(|v| v.parse::<f64>().unwrap());
                (f.next().unwrap(), f.next().unwrap())
            })
            .collect();
        let expected = if axis.is_rotation() { 6001 } else { 801 };
        let mid = rows.len() / 2;
        let costs: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let global = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let near_zero = costs[mid - 1..=mid + 1]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let right = bucket_means(&costs[mid + 1..]);
        let left_rev: Vec<f64> = costs[..mid].iter().rev().copied().collect();
        let left = bucket_means(&left_rev);
        let rising = |b: &[f64]| b.windows(2).all(|w| w[1] >= w[0]);
        let ok = rows.len() == expected
            && rows[mid].0 == 0.0
            && near_zero == global
            && rising(&right)
            && rising(&left);
        pass &= ok;
        parts.push(format!(
            "{} {} rows min {} {}",
            axis.name(),
            rows.len(),
            global,
            if ok { "ok" } else { "BAD" }
        ));
    }
    outcome(pass, parts.join("; "))
}

fn planar_k() -> CameraIntrinsics {
    CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
}

// 4. Zero-noise planar recovery.
fn planar_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let k = planar_k();
    let (mut worst_r, mut worst_t, mut ok) = (0f64, 0f64, 0usize);
    for _ in 0..50 {
        let gt = Extrinsics::new(
            RotationAngles::from_degrees(
                rng.random_range(-180.0..180.0),
                rng.random_range(-75.0..75.0),
                rng.random_range(-180.0..180.0),
            ),
            Translation::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ),
        );
        let n = rng.random_range(8..=30);
        let normal = Vec3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            1.0,
        )
        .normalize();
        let anchor = Vec3::new(0.0, 0.0, rng.random_range(5.0..20.0));
        let inv = gt.inverse();
        let frames: Vec<FramePair> = (0..n)
            .map(|i| {
                let (l, m) = (rng.random_range(5..635u32), rng.random_range(5..475u32));
                let ray = k.unproject(&PixelCoord::new(f64::from(l), f64::from(m)), 1.0);
                let cam = ray * (normal.dot(&anchor) / normal.dot(&ray));
                assert!(cam.z > 0.0);
                let cloud =
                    LabeledPointCloud::new(vec![transform_point(&cam, &inv)], vec![ClassId(1)])
                        .unwrap();
                let mut img = LabelImage::filled(640, 480, ClassId(0));
                img.set(l, m, ClassId(1));
                FramePair::new(format!("{i:03}"), cloud, img, k).unwrap()
            })
            .collect();
        let res = initialize(
            &frames,
            &[ClassId(1)].into(),
            &InitConfig::default(),
            &CostConfig::default(),
        )
        .unwrap();
        let (p, q) = (res.extrinsics.to_params(), gt.to_params());
        let r = (0..3)
            .map(|i| canonical_angle(p[i] - q[i]).abs())
            .fold(0.0, f64::max);
        let t = (3..6).map(|i| (p[i] - q[i]).abs()).fold(0.0, f64::max);
        worst_r = worst_r.max(r);
        worst_t = worst_t.max(t);
        ok += usize::from(r <= 1e-6 && t <= 1e-6);
    }
    outcome(
        ok == 50,
        format!("{ok}/50 within 1e-6; worst {worst_r:.2e} rad, {worst_t:.2e} m"),
    )
}

// 5. Optimizer reference problems.
fn optimizer_references() -> Outcome {
    let rosen = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
    let (x, _, _) = powell_minimize(rosen, &[-1.2, 1.0], &OptimizerConfig::unit_scales(2)).unwrap();
    let rosen_err = (x[0] - 1.0).abs().max((x[1] - 1.0).abs());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0f64;
    for _ in 0..20 {
        let a = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let a = &a * a.transpose() + DMatrix::identity(6, 6) * 0.5;
        let b = DVector::from_fn(6, |_, _| rng.random_range(-2.0..2.0));
        let exact = a.clone().cholesky().unwrap().solve(&b);
        // ½xᵀAx − bᵀx written around its minimizer (equal up to a constant)
        let f = |x: &[f64]| {
            let d = DVector::from_column_slice(x) - &exact;
            0.5 * d.dot(&(&a * &d))
        };
        let cfg = OptimizerConfig {
            ftol: 1e-15,
            line_tol: 1e-10,
            ..OptimizerConfig::unit_scales(6)
        };
        let (x, _, _) = powell_minimize(f, &[0.0; 6], &cfg).unwrap();
        worst = worst.max((DVector::from_vec(x) - exact).amax());
    }
    outcome(
        rosen_err <= 1e-6 && worst <= 1e-8,
        format!("Rosenbrock error {rosen_err:.2e} (limit 1e-6); SPD worst {worst:.2e} over 20 (limit 1e-8)"),
    )
}

// 6. End-to-end from scratch with label noise.
fn end_to_end() -> Outcome {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for frames in [10, 20] {
        let mut ok = 0;
        let mut worst = [0f64; 2];
        for seed in 0..10 {
            let tmp = TempDir::new().unwrap();
            let spec = SceneSpec {
                frames,
                noise_rate: 0.02,
                seed,
                ..SceneSpec::default()
            };
            let data = tmp.path().join("data");
            commands::synth(Some(&write_spec(tmp.path(), &spec)), &out(&data)).unwrap();
            let o = tmp.path().join("o");
            let run = commands::calibrate(&data, None, false, &out(&o));
            let Ok(_) = run else { continue };
            let ev = commands::eval(
                &o.join(commands::ESTIMATE_FILE),
                &data.join(commands::GT_FILE),
                &Common::default(),
            )
            .unwrap();
            let e = ev.errors.values();
            let r = e[..3].iter().map(|v| v.abs()).fold(0.0, f64::max);
            let tr = e[3..].iter().map(|v| v.abs()).fold(0.0, f64::max);
            worst = [worst[0].max(r), worst[1].max(tr)];
            ok += usize::from(r <= 1.0 && tr <= 0.1);
        }
        pass &= ok >= 8;
        parts.push(format!(
            "{frames} pairs {ok}/10 (worst {:.3} deg, {:.4} m)",
            worst[0], worst[1]
        ));
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        pass && secs < 600.0,
        format!("{}; {secs:.0} s (limit 600 s)", parts.join("; ")),
    )
}

// 7. Refinement from the centroid initialization ends where refinement from
// a perturbed ground truth ends.
fn init_robustness() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for seed in 0..5 {
        let spec = SceneSpec {
            seed,
            ..SceneSpec::default()
        };
        let scene = generate(&spec).unwrap();
        let model =
            CostModel::new(scene.pairs, spec_classes(&spec), CostConfig::default()).unwrap();
        let cfg = OptimizerConfig::default();
        let init = initialize_with_model(&model, &InitConfig::default()).unwrap();
        let a = calibrate_model(&model, &init.extrinsics, &cfg).unwrap();
        let start = perturb(&scene.gt, [0.5f64.to_radians(); 3], [0.05; 3], seed);
        let b = calibrate_model(&model, &start, &cfg).unwrap();
        let d = (a.breakdown.total - b.breakdown.total).abs();
        pass &= d <= 1e-9;
        parts.push(format!(
            "seed {seed}: {:.3e} vs {:.3e}",
            a.breakdown.total, b.breakdown.total
        ));
    }
    outcome(pass, parts.join("; "))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

// 8. Byte-identical outputs across repeated runs.
fn determinism() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let spec = SceneSpec {
        frames: 10,
        noise_rate: 0.02,
        seed: 8,
        ..SceneSpec::default()
    };
    let spec_path = write_spec(tmp.path(), &spec);
    let seeded = |dir: PathBuf| Common {
        overrides: Overrides {
            seed: Some(8),
            ..Overrides::default()
        },
        ..out(&dir)
    };
    let mut checked = Vec::new();
    let mut same = true;
    let mut check = |name: &str, run: &dyn Fn(&Path)| {
        let a = tmp.path().join(format!("{name}_a"));
        let b = tmp.path().join(format!("{name}_b"));
        run(&a);
        run(&b);
        let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
        let eq = !fa.is_empty() && fa == fb;
        same &= eq;
        checked.push(format!(
            "{name} {} files {}",
            fa.len(),
            if eq { "identical" } else { "DIFFER" }
        ));
    };
    check("synth", &|d| {
        commands::synth(Some(&spec_path), &seeded(d.to_path_buf())).unwrap();
    });
    let data = tmp.path().join("synth_a");
    let gt = data.join(commands::GT_FILE);
    check("init", &|d| {
        commands::init(&data, &seeded(d.to_path_buf())).unwrap();
    });
    check("calibrate", &|d| {
        commands::calibrate(&data, None, true, &seeded(d.to_path_buf())).unwrap();
    });
    check("sweep", &|d| {
        commands::sweep(
            &data,
            &gt,
            Axis::ThetaZ,
            Some(2.0),
            Some(0.05),
            &seeded(d.to_path_buf()),
        )
        .unwrap();
        commands::sweep(
            &data,
            &gt,
            Axis::Ty,
            Some(0.2),
            Some(0.005),
            &seeded(d.to_path_buf()),
        )
        .unwrap();
    });
    check("eval", &|d| {
        let est = tmp.path().join("calibrate_a").join(commands::ESTIMATE_FILE);
        commands::eval(&est, &gt, &seeded(d.to_path_buf())).unwrap();
    });
    outcome(same, checked.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("cost-zero oracle", cost_zero_oracle),
        ("distance-field exactness", distance_field_exactness),
        ("convexity-sweep shape", convexity_sweep),
        ("planar-pose zero-noise recovery", planar_recovery),
        ("optimizer references", optimizer_references),
        ("end-to-end from scratch", end_to_end),
        ("initialization robustness", init_robustness),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!o.pass);
        println!(
            "{} {}. {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
