//! Experiment engine: input prechecks, Jackson-ratio studies and reports.

use std::f64::consts::PI;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapeError};
use crate::kernels::DEFAULT_NODES_PER_PERIOD;
use crate::periodic::{modulus, InflectionSet, ModulusSearch, PeriodicFunction};
use crate::poly::{
    build_poly, calibrate, calibration_schedule, fallback_whitney, verify_poly_shape, LevelConfig,
    PolyShapeReport,
};
use crate::spline::{build_spline, min_level, verify_spline_shape, SignReport};

/// Result of sampling f″Π on one period.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Precheck {
    pub passed: bool,
    pub samples: usize,
    pub tolerance: f64,
    /// First failing abscissae, at most [`PRECHECK_REPORTED`].
    pub failures: Vec<f64>,
    pub failure_count: usize,
}

pub const PRECHECK_REPORTED: usize = 16;

/// Checks f″Π ≥ −tol at `samples` points of [−π, π).
pub fn precheck_coconvex(f: &PeriodicFunction, y: &InflectionSet, samples: usize) -> Precheck {
    let xs: Vec<f64> = (0..samples.max(1))
        .map(|k| -PI + 2.0 * PI * k as f64 / samples.max(1) as f64)
        .collect();
    let products: Vec<f64> = xs
        .iter()
        .map(|&x| f.second_derivative(x) * y.pi(x))
        .collect();
    let scale = xs
        .iter()
        .map(|&x| f.second_derivative(x).abs())
        .fold(0.0, f64::max);
    // difference quotients of sampled or closure inputs carry O(step²) noise
    let relative = if f.is_sampled() { 1e-4 } else { 1e-8 };
    let tolerance = relative * scale;
    let bad: Vec<f64> = xs
        .iter()
        .zip(&products)
        .filter(|(_, &p)| p < -tolerance)
        .map(|(&x, _)| x)
        .collect();
    Precheck {
        passed: bad.is_empty(),
        samples: xs.len(),
        tolerance,
        failure_count: bad.len(),
        failures: bad.into_iter().take(PRECHECK_REPORTED).collect(),
    }
}

/// Which approximants a study builds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Artifacts {
    Spline,
    Poly,
    #[default]
    Both,
}

impl Artifacts {
    pub fn spline(self) -> bool {
        self != Artifacts::Poly
    }

    pub fn poly(self) -> bool {
        self != Artifacts::Spline
    }
}

/// What to build and check in a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub functions: Vec<String>,
    pub y: Vec<f64>,
    pub ns: Vec<usize>,
    /// Points per period for sup-norms and ω₄.
    pub grid_density: usize,
    /// Fine-grid nodes per period for the step tables.
    pub nodes_per_period: usize,
    pub m1: usize,
    pub m2: usize,
    /// Raise the multipliers until the polynomial shape checks pass.
    pub calibrate: bool,
    /// Largest m₂ tried by calibration.
    pub max_m2: usize,
    pub artifacts: Artifacts,
    /// Use the constant approximant below the level floor instead of failing.
    pub allow_fallback: bool,
    /// Largest ratio spread across n accepted for ‖f−·‖/ω₄.
    pub ratio_spread: f64,
    pub slope_range: (f64, f64),
    /// Record wall-clock times (makes reports non-reproducible).
    pub timings: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            functions: vec!["neg-sin".into()],
            y: vec![0.0, -PI],
            ns: vec![16, 32, 64],
            grid_density: 1 << 14,
            nodes_per_period: DEFAULT_NODES_PER_PERIOD,
            m1: 2,
            m2: 4,
            calibrate: false,
            max_m2: 8,
            artifacts: Artifacts::Both,
            allow_fallback: false,
            ratio_spread: 2.0,
            slope_range: (-4.5, -3.5),
            timings: false,
        }
    }
}

impl ExperimentPlan {
    pub fn inflections(&self) -> Result<InflectionSet> {
        InflectionSet::new(self.y.clone())
    }

    /// Checks function names, n values and tolerances.
    pub fn validate(&self) -> Result<()> {
        if self.functions.is_empty() || self.ns.is_empty() {
            return Err(ShapeError::InvalidArgument(
                "a plan needs at least one function and one n".into(),
            ));
        }
        for name in &self.functions {
            resolve_function(name)?;
        }
        let y = self.inflections()?;
        let floor = min_level(&y);
        if !self.allow_fallback {
            if let Some(&n) = self.ns.iter().find(|&&n| n < floor) {
                return Err(ShapeError::BelowMinimumN { n, required: floor });
            }
        }
        if self.m1 == 0 || self.m2 == 0 || self.grid_density < 64 {
            return Err(ShapeError::InvalidArgument(
                "multipliers must be positive and grid density at least 64".into(),
            ));
        }
        Ok(())
    }

    fn search(&self) -> ModulusSearch {
        ModulusSearch {
            points_per_period: self.grid_density,
            ..ModulusSearch::default()
        }
    }
}

/// Builtin name or `csv:<path>`.
pub fn resolve_function(spec: &str) -> Result<PeriodicFunction> {
    match spec.strip_prefix("csv:") {
        Some(path) => PeriodicFunction::from_csv(std::path::Path::new(path)),
        None => PeriodicFunction::builtin(spec),
    }
}

/// One (f, n) cell of a study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub function: String,
    pub n: usize,
    pub conforming: bool,
    pub omega4: f64,
    pub spline_error: Option<f64>,
    pub spline_ratio: Option<f64>,
    pub spline_shape: Option<SignReport>,
    pub poly_error: Option<f64>,
    pub poly_ratio: Option<f64>,
    pub poly_shape: Option<PolyShapeReport>,
    pub multipliers: Option<(usize, usize)>,
    pub clamps: usize,
    /// Constant approximant used below the level floor.
    pub fallback: bool,
    pub seconds: Option<f64>,
}

/// A pass/fail statement with its tolerance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    /// The inequality being witnessed.
    pub statement: String,
    pub tolerance: f64,
    pub value: f64,
    pub passed: bool,
}

/// Fitted log-log slope of an error column.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub function: String,
    pub artifact: String,
    pub slope: Option<f64>,
    pub ratio_spread: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Passed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub plan: ExperimentPlan,
    pub precheck: Vec<(String, Precheck)>,
    pub cells: Vec<Cell>,
    pub fits: Vec<SlopeFit>,
    pub checks: Vec<Check>,
    pub status: Status,
}

/// Least-squares slope of log(error) against log(n); None with fewer than
/// two positive errors.
pub fn log_log_slope(ns: &[usize], errors: &[f64]) -> Option<f64> {
    let points: Vec<(f64, f64)> = ns
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e > 0.0 && e.is_finite())
        .map(|(&n, &e)| ((n as f64).ln(), e.ln()))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let count = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / count;
    let my = points.iter().map(|p| p.1).sum::<f64>() / count;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// max/min of positive ratios; None when fewer than two.
pub fn spread(ratios: &[f64]) -> Option<f64> {
    let positive: Vec<f64> = ratios
        .iter()
        .copied()
        .filter(|r| *r > 0.0 && r.is_finite())
        .collect();
    if positive.len() < 2 {
        return None;
    }
    let (lo, hi) = positive
        .iter()
        .fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    Some(hi / lo)
}

/// Direction of a fitted inequality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BoundKind {
    /// value ≤ C·weight: smallest such C.
    Upper,
    /// value ≥ c·weight: largest such c.
    Lower,
}

/// A sampled |quantity| and the bound's weight at the same point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundSample {
    pub value: f64,
    pub weight: f64,
}

/// Tightest constant for the chosen inequality on the samples.
pub fn fit_constant(kind: BoundKind, samples: &[BoundSample]) -> f64 {
    let ratios = samples
        .iter()
        .filter(|s| s.weight > 0.0)
        .map(|s| s.value.abs() / s.weight);
    let fitted = match kind {
        BoundKind::Upper => ratios.fold(0.0, f64::max),
        BoundKind::Lower => ratios.fold(f64::INFINITY, f64::min),
    };
    if fitted.is_finite() {
        fitted
    } else {
        0.0
    }
}

/// max |f − g| at `points` + 1 evenly spaced points of [−π, π].
pub fn sup_distance(f: &PeriodicFunction, g: impl Fn(f64) -> f64, points: usize) -> f64 {
    (0..=points)
        .map(|k| -PI + 2.0 * PI * k as f64 / points as f64)
        .map(|x| (f.eval(x) - g(x)).abs())
        .fold(0.0, f64::max)
}

fn ratio(error: f64, omega: f64) -> Option<f64> {
    if omega > 0.0 {
        Some(error / omega)
    } else if error == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

fn run_cell(
    plan: &ExperimentPlan,
    y: &InflectionSet,
    name: &str,
    n: usize,
    conforming: bool,
) -> Result<Cell> {
    let started = Instant::now();
    let f = resolve_function(name)?;
    let search = plan.search();
    let omega4 = modulus(&|x| f.eval(x), 4, PI / n as f64, None, search)?;
    let mut cell = Cell {
        function: name.to_string(),
        n,
        conforming,
        omega4,
        spline_error: None,
        spline_ratio: None,
        spline_shape: None,
        poly_error: None,
        poly_ratio: None,
        poly_shape: None,
        multipliers: None,
        clamps: 0,
        fallback: false,
        seconds: None,
    };
    if n < min_level(y) {
        let fallback = fallback_whitney(&f, search)?;
        let error = fallback.sup_error(&f);
        cell.fallback = true;
        cell.poly_error = Some(error);
        cell.poly_ratio = ratio(error, omega4);
    } else {
        if plan.artifacts.spline() {
            let spline = build_spline(&f, y, n)?;
            let error = sup_distance(&f, |x| spline.value(x), plan.grid_density);
            cell.spline_error = Some(error);
            cell.spline_ratio = ratio(error, omega4);
            cell.spline_shape = Some(verify_spline_shape(&spline));
        }
        if plan.artifacts.poly() {
            let config = LevelConfig {
                n,
                m1: plan.m1,
                m2: plan.m2,
                nodes_per_period: plan.nodes_per_period,
            };
            let model = if plan.calibrate {
                let schedule = calibration_schedule(plan.m1, plan.m2, plan.max_m2.max(plan.m2));
                calibrate(&f, y, config, &schedule)?.0
            } else {
                build_poly(&f, y, config)?
            };
            let error = model.sup_error(&f);
            let shape = verify_poly_shape(&model);
            cell.poly_error = Some(error);
            cell.poly_ratio = ratio(error, omega4);
            cell.clamps = shape.clamps;
            cell.poly_shape = Some(shape);
            cell.multipliers = Some((model.config().m1, model.config().m2));
        }
    }
    if plan.timings {
        cell.seconds = Some(started.elapsed().as_secs_f64());
    }
    Ok(cell)
}

/// Builds every (f, n) cell, runs all checks and fits the convergence slopes.
pub fn run_study(plan: &ExperimentPlan) -> Result<Report> {
    plan.validate()?;
    let y = plan.inflections()?;
    let precheck: Vec<(String, Precheck)> = plan
        .functions
        .iter()
        .map(|name| {
            resolve_function(name)
                .map(|f| (name.clone(), precheck_coconvex(&f, &y, plan.grid_density)))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..plan.functions.len())
        .flat_map(|fi| plan.ns.iter().map(move |&n| (fi, n)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(fi, n)| run_cell(plan, &y, &plan.functions[fi], n, precheck[fi].1.passed))
        .collect::<Result<Vec<Cell>>>()?;

    let mut fits = Vec::new();
    let mut checks = Vec::new();
    for (name, pre) in &precheck {
        let rows: Vec<&Cell> = cells.iter().filter(|c| &c.function == name).collect();
        for (artifact, error_of, ratio_of) in [
            (
                "spline",
                (|c: &Cell| c.spline_error) as fn(&Cell) -> Option<f64>,
                (|c: &Cell| c.spline_ratio) as fn(&Cell) -> Option<f64>,
            ),
            ("poly", |c: &Cell| c.poly_error, |c: &Cell| c.poly_ratio),
        ] {
            let usable: Vec<&&Cell> = rows
                .iter()
                .filter(|c| error_of(c).is_some() && !c.fallback)
                .collect();
            if usable.is_empty() {
                continue;
            }
            let ns: Vec<usize> = usable.iter().map(|c| c.n).collect();
            let errors: Vec<f64> = usable.iter().filter_map(|c| error_of(c)).collect();
            let ratios: Vec<f64> = usable.iter().filter_map(|c| ratio_of(c)).collect();
            let fit = SlopeFit {
                function: name.clone(),
                artifact: artifact.into(),
                slope: log_log_slope(&ns, &errors),
                ratio_spread: spread(&ratios),
            };
            if let Some(s) = fit.ratio_spread {
                checks.push(Check {
                    name: format!("{name}/{artifact}/ratio-spread"),
                    statement: format!("max/min of ‖f−{artifact}‖/ω₄(f,π/n) over n"),
                    tolerance: plan.ratio_spread,
                    value: s,
                    passed: s <= plan.ratio_spread,
                });
            }
            fits.push(fit);
        }
        if !pre.passed {
            continue;
        }
        for cell in &rows {
            if let Some(shape) = &cell.spline_shape {
                checks.push(Check {
                    name: format!("{name}/n={}/spline-shape", cell.n),
                    statement: "S″Π ≥ 0 on H₃ intervals and nonnegative slope jumps".into(),
                    tolerance: shape.tolerance,
                    value: (shape.violations + shape.jump_violations) as f64,
                    passed: shape.violations == 0 && shape.jump_violations == 0,
                });
            }
            if let Some(shape) = &cell.poly_shape {
                checks.push(Check {
                    name: format!("{name}/n={}/poly-shape", cell.n),
                    statement: "P″Π ≥ 0 outside (y_i − π/n, y_i + π/n) and A ≥ 0".into(),
                    tolerance: shape.tolerance,
                    value: (shape.violations + shape.a_violations) as f64,
                    passed: shape.passed(),
                });
            }
        }
    }
    let status = if checks.iter().all(|c| c.passed) {
        Status::Passed
    } else {
        Status::Failed
    };
    Ok(Report {
        plan: plan.clone(),
        precheck,
        cells,
        fits,
        checks,
        status,
    })
}

impl Report {
    /// One row per cell.
    pub fn write_table<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record([
            "function",
            "n",
            "omega4",
            "spline_error",
            "spline_ratio",
            "poly_error",
            "poly_ratio",
            "spline_violations",
            "poly_violations",
            "poly_excluded_violations",
            "fallback",
        ])?;
        for c in &self.cells {
            writer.serialize((
                &c.function,
                c.n,
                c.omega4,
                c.spline_error,
                c.spline_ratio,
                c.poly_error,
                c.poly_ratio,
                c.spline_shape
                    .as_ref()
                    .map(|s| s.violations + s.jump_violations),
                c.poly_shape.as_ref().map(|s| s.violations),
                c.poly_shape.as_ref().map(|s| s.excluded_violations),
                c.fallback,
            ))?;
        }
        writer.flush()?;
        Ok(())
    }
}
