//! Derivative-free minimization: Powell's conjugate-direction method with a
//! bracketing Brent line search.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costfield::{CostBreakdown, CostConfig, CostError, CostModel};
use crate::geometry::{rotation_matrix, Extrinsics, RotationAngles, Translation, Vec3};
use crate::scene::{ClassId, FramePair};

const GOLDEN: f64 = 1.618_033_988_749_895;
const CGOLD: f64 = 0.381_966_011_250_105;
const MAX_EXPANSIONS: usize = 60;
const MAX_BRENT_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error("objective returned a non-finite value at {at:?}")]
    NonFiniteCost { at: Vec<f64> },
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Relative decrease per outer iteration below which the search stops.
    pub ftol: f64,
    /// Line-search tolerance in units of the (scaled) search direction.
    pub line_tol: f64,
    /// Initial direction lengths, one per parameter.
    pub step_scales: Vec<f64>,
    /// Optional `(lower, upper)` box per parameter.
    pub bounds: Option<Vec<(f64, f64)>>,
    /// Calibration only: search over the camera-frame position of the
    /// cloud centroid instead of `t`, so rotations pivot about the scene
    /// rather than the sensor origin. Ignored when `bounds` is set.
    pub pivot_on_centroid: bool,
    /// Extra direction-set resets allowed after the coordinate-basis reset
    /// has also stalled; each uses a seeded random rotation of the basis.
    pub stall_restarts: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            ftol: 1e-8,
            line_tol: 1e-6,
            step_scales: vec![0.05, 0.05, 0.05, 0.1, 0.1, 0.1],
            bounds: None,
            pivot_on_centroid: true,
            stall_restarts: 4,
        }
    }
}

impl OptimizerConfig {
    /// Same settings with unit step scales for an `n`-dimensional problem.
    pub fn unit_scales(n: usize) -> Self {
        Self {
            step_scales: vec![1.0; n],
            ..Self::default()
        }
    }

    fn validate(&self, n: usize) -> Result<(), OptimizeError> {
        let bad = |m: &str| Err(OptimizeError::InvalidConfig(m.to_string()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.ftol > 0.0) || !(self.line_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.step_scales.len() != n {
            return bad("step_scales length does not match the parameter count");
        }
        if self
            .step_scales
            .iter()
            .any(|s| !(s.is_finite() && *s != 0.0))
        {
            return bad("step scales must be finite and non-zero");
        }
        if let Some(b) = &self.bounds {
            if b.len() != n || b.iter().any(|(lo, hi)| !(lo <= hi)) {
                return bad("bounds must have one ordered pair per parameter");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub params: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    /// Iteration 0 is the starting point; one entry per outer iteration after.
    pub entries: Vec<TraceEntry>,
    pub termination: Termination,
    pub evaluations: usize,
}

impl OptimizationTrace {
    pub fn iterations(&self) -> usize {
        self.entries.last().map_or(0, |e| e.iteration)
    }
}

/// Objective wrapper: counts calls, applies bounds, rejects non-finite values.
struct Objective<'a, F> {
    f: F,
    bounds: Option<&'a [(f64, f64)]>,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> f64> Objective<'_, F> {
    fn clamp(&self, x: &mut [f64]) {
        if let Some(b) = self.bounds {
            for (v, (lo, hi)) in x.iter_mut().zip(b) {
                *v = v.clamp(*lo, *hi);
            }
        }
    }

    fn eval(&mut self, x: &[f64]) -> Result<f64, OptimizeError> {
        let mut x = x.to_vec();
        self.clamp(&mut x);
        self.evaluations += 1;
        let v = (self.f)(&x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(OptimizeError::NonFiniteCost { at: x })
        }
    }

    fn along(&mut self, x: &[f64], dir: &[f64], s: f64) -> Result<f64, OptimizeError> {
        let p: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + s * d).collect();
        self.eval(&p)
    }
}

/// Brackets a minimum along `dir` starting from unit step, expanding
/// geometrically on the descending side. Returns `(a, b, c, f(b))` with
/// `a < c` and `f(b)` no larger than the values at either end, or
/// `Err(best)` if the function kept decreasing for the whole expansion.
fn bracket<F: FnMut(&[f64]) -> f64>(
    obj: &mut Objective<'_, F>,
    x: &[f64],
    dir: &[f64],
    f0: f64,
) -> Result<Result<(f64, f64, f64, f64), (f64, f64)>, OptimizeError> {
    let f_plus = obj.along(x, dir, 1.0)?;
    let sign = if f_plus < f0 {
        1.0
    } else {
        let f_minus = obj.along(x, dir, -1.0)?;
        if f_minus < f0 {
            -1.0
        } else {
            return Ok(Ok((-1.0, 0.0, 1.0, f0)));
        }
    };
    let (mut a, mut b) = (0.0, sign);
    let mut fb = if sign > 0.0 {
        f_plus
    } else {
        obj.along(x, dir, -1.0)?
    };
    for _ in 0..MAX_EXPANSIONS {
        let c = b + GOLDEN * (b - a);
        let fc = obj.along(x, dir, c)?;
        if fc >= fb {
            let (lo, hi) = if a < c { (a, c) } else { (c, a) };
            return Ok(Ok((lo, b, hi, fb)));
        }
        a = b;
        b = c;
        fb = fc;
    }
    Ok(Err((b, fb)))
}

/// Brent's method on a bracket `a < b < c` with `f(b) = fb` minimal.
fn brent<F: FnMut(&[f64]) -> f64>(
    obj: &mut Objective<'_, F>,
    x0: &[f64],
    dir: &[f64],
    (a, b, c, fb): (f64, f64, f64, f64),
    tol: f64,
) -> Result<(f64, f64), OptimizeError> {
    let (mut a, mut bb) = (a, c);
    let (mut x, mut w, mut v) = (b, b, b);
    let (mut fx, mut fw, mut fv) = (fb, fb, fb);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..MAX_BRENT_ITERATIONS {
        let xm = 0.5 * (a + bb);
        let tol1 = tol * (x.abs() + 1.0);
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (bb - a) {
            break;
        }
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() >= (0.5 * q * etemp).abs() || p <= q * (a - x) || p >= q * (bb - x) {
                e = if x >= xm { a - x } else { bb - x };
                d = CGOLD * e;
            } else {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || bb - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
            }
        } else {
            e = if x >= xm { a - x } else { bb - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = obj.along(x0, dir, u)?;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                bb = x;
            }
            v = w;
            w = x;
            x = u;
            fv = fw;
            fw = fx;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                bb = u;
            }
            if fu <= fw || w == x {
                v = w;
                w = u;
                fv = fw;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok((x, fx))
}

fn line_search<F: FnMut(&[f64]) -> f64>(
    obj: &mut Objective<'_, F>,
    x: &[f64],
    fx: f64,
    dir: &[f64],
    tol: f64,
) -> Result<(f64, f64), OptimizeError> {
    let (step, cost) = match bracket(obj, x, dir, fx)? {
        Ok(br) => brent(obj, x, dir, br, tol)?,
        Err(best) => best,
    };
    if cost < fx {
        Ok((step, cost))
    } else {
        Ok((0.0, fx))
    }
}

/// One-dimensional minimization of `f(x + s·direction)` over `s`.
///
/// Returns the step `s` and the cost there; the cost never exceeds `f(x)`
/// and the step is 0 when no descent is found.
pub fn line_minimize<F: FnMut(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    direction: &[f64],
    tol: f64,
) -> Result<(f64, f64), OptimizeError> {
    if direction.len() != x.len() || direction.iter().all(|d| *d == 0.0) {
        return Err(OptimizeError::InvalidConfig(
            "direction must be non-zero and match x".into(),
        ));
    }
    let mut obj = Objective {
        f,
        bounds: None,
        evaluations: 0,
    };
    let fx = obj.eval(x)?;
    line_search(&mut obj, x, fx, direction, tol)
}

/// Columns of a seeded random orthogonal matrix, scaled per parameter.
fn rotated_basis(scales: &[f64], seed: u64) -> Vec<Vec<f64>> {
    let n = scales.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = m.qr().q();
    (0..n)
        .map(|j| (0..n).map(|i| q[(i, j)] * scales[i]).collect())
        .collect()
}

/// Powell's conjugate-direction minimization.
///
/// Starts from the coordinate directions scaled by `config.step_scales`.
/// After each sweep of line searches the net displacement replaces the
/// direction of largest decrease when the quadratic-extrapolation test
/// accepts it. A sweep with no decrease at all resets the directions to the
/// scaled coordinate basis; if that sweep also fails, up to
/// `config.stall_restarts` randomly rotated bases are tried before the search
/// gives up as stalled.
pub fn powell_minimize<F: FnMut(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    config: &OptimizerConfig,
) -> Result<(Vec<f64>, f64, OptimizationTrace), OptimizeError> {
    let n = x0.len();
    config.validate(n)?;
    let mut obj = Objective {
        f,
        bounds: config.bounds.as_deref(),
        evaluations: 0,
    };
    let basis = || -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let mut d = vec![0.0; n];
                d[i] = config.step_scales[i];
                d
            })
            .collect()
    };

    let mut p = x0.to_vec();
    obj.clamp(&mut p);
    let mut fret = obj.eval(&p)?;
    let mut dirs = basis();
    let mut fresh_reset = true;
    let mut restarts = 0;
    let mut pt = p.clone();
    let mut entries = vec![TraceEntry {
        iteration: 0,
        params: p.clone(),
        cost: fret,
    }];
    let mut termination = Termination::MaxIterations;

    for iteration in 1..=config.max_iterations {
        let fp = fret;
        let mut ibig = 0;
        let mut del = 0.0;
        for (i, dir) in dirs.iter().enumerate() {
            let before = fret;
            let (step, cost) = line_search(&mut obj, &p, fret, dir, config.line_tol)?;
            if step != 0.0 {
                for (v, d) in p.iter_mut().zip(dir) {
                    *v += step * d;
                }
                obj.clamp(&mut p);
                fret = cost;
            }
            if before - fret > del {
                del = before - fret;
                ibig = i;
            }
        }
        entries.push(TraceEntry {
            iteration,
            params: p.clone(),
            cost: fret,
        });

        if fp - fret == 0.0 {
            if fret == 0.0 {
                termination = Termination::Converged;
                break;
            }
            if !fresh_reset {
                dirs = basis();
            } else if restarts < config.stall_restarts {
                dirs = rotated_basis(&config.step_scales, restarts as u64);
                restarts += 1;
            } else {
                termination = Termination::Stalled;
                break;
            }
            fresh_reset = true;
            pt = p.clone();
            continue;
        }
        fresh_reset = false;
        if 2.0 * (fp - fret) <= config.ftol * (fp.abs() + fret.abs()) + 1e-25 {
            termination = Termination::Converged;
            break;
        }

        let xit: Vec<f64> = p.iter().zip(&pt).map(|(a, b)| a - b).collect();
        let mut ptt: Vec<f64> = p.iter().zip(&xit).map(|(a, d)| a + d).collect();
        obj.clamp(&mut ptt);
        pt = p.clone();
        let fptt = obj.eval(&ptt)?;
        if fptt < fp {
            let t = 2.0 * (fp - 2.0 * fret + fptt) * (fp - fret - del).powi(2)
                - del * (fp - fptt).powi(2);
            if t < 0.0 && xit.iter().any(|d| *d != 0.0) {
                let (step, cost) = line_search(&mut obj, &p, fret, &xit, config.line_tol)?;
                let new_dir: Vec<f64> = if step != 0.0 {
                    xit.iter().map(|d| d * step).collect()
                } else {
                    xit.clone()
                };
                if step != 0.0 {
                    for (v, d) in p.iter_mut().zip(&xit) {
                        *v += step * d;
                    }
                    obj.clamp(&mut p);
                    fret = cost;
                    if let Some(last) = entries.last_mut() {
                        last.params = p.clone();
                        last.cost = fret;
                    }
                }
                dirs[ibig] = dirs[n - 1].clone();
                dirs[n - 1] = new_dir;
            }
        }
    }

    let trace = OptimizationTrace {
        entries,
        termination,
        evaluations: obj.evaluations,
    };
    Ok((p, fret, trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub extrinsics: Extrinsics,
    pub breakdown: CostBreakdown,
    pub trace: OptimizationTrace,
}

/// Minimizes the semantic cost of a prepared model from `init`.
pub fn calibrate_model(
    model: &CostModel,
    init: &Extrinsics,
    config: &OptimizerConfig,
) -> Result<CalibrationResult, OptimizeError> {
    // Surfaces ZeroDenominator before any search; the denominator does not
    // depend on the extrinsics.
    model.evaluate(init)?;
    let pivot = if config.pivot_on_centroid && config.bounds.is_none() {
        cloud_centroid(model)
    } else {
        Vec3::zeros()
    };
    // Search variables are (θ, u) with u = t + R(θ)·pivot.
    let to_extrinsics = |x: &[f64]| {
        let rotation = RotationAngles::new(x[0], x[1], x[2]);
        let u = Vec3::new(x[3], x[4], x[5]);
        Extrinsics::new(
            rotation,
            Translation::from_vector(&(u - rotation_matrix(&rotation) * pivot)),
        )
    };
    let (r0, t0) = init.to_matrix();
    let u0 = t0 + r0 * pivot;
    let x0 = [
        init.rotation.theta_x,
        init.rotation.theta_y,
        init.rotation.theta_z,
        u0.x,
        u0.y,
        u0.z,
    ];
    let objective = |x: &[f64]| model.total(&to_extrinsics(x)).unwrap_or(f64::NAN);
    let (x, _, mut trace) = powell_minimize(objective, &x0, config)?;
    for entry in &mut trace.entries {
        entry.params = to_extrinsics(&entry.params).to_params().to_vec();
    }
    let extrinsics = to_extrinsics(&x);
    let breakdown = model.evaluate(&extrinsics)?;
    Ok(CalibrationResult {
        extrinsics,
        breakdown,
        trace,
    })
}

/// Mean of all points whose class takes part in the cost.
fn cloud_centroid(model: &CostModel) -> Vec3 {
    let mut sum = Vec3::zeros();
    let mut n = 0usize;
    for prepared in model.pairs() {
        for (p, c) in prepared.pair().cloud.iter() {
            if model.classes().contains(&c) {
                sum += p;
                n += 1;
            }
        }
    }
    if n == 0 {
        sum
    } else {
        sum / n as f64
    }
}

/// Builds the cost model for `pairs` and minimizes it from `init`.
pub fn calibrate(
    pairs: &[FramePair],
    init: &Extrinsics,
    classes: &BTreeSet<ClassId>,
    cost: &CostConfig,
    config: &OptimizerConfig,
) -> Result<CalibrationResult, OptimizeError> {
    let model = CostModel::new(pairs.to_vec(), classes.clone(), *cost)?;
    calibrate_model(&model, init, config)
}
