use std::f64::consts::PI;
use std::io::Write;

use serde::Serialize;
use shapeline::kernels::{
    build_tau, CorrectionBasis, FineGrid, KernelParams, NodeFunction, StepBuilder, StepExtras,
};
use shapeline::periodic::{modulus, InflectionSet, ModulusSearch, PeriodicFunction};
use shapeline::poly::{
    build_poly, calibrate, calibration_schedule, fallback_whitney, verify_poly_shape,
    CalibrationStep, LevelConfig, PolyManifest, PolyModel, PolyShapeReport, WhitneyFallback,
};
use shapeline::spline::{build_spline, min_level, verify_spline_shape, SignReport};
use shapeline::verify::{
    precheck_coconvex, resolve_function, run_study, sup_distance, Precheck, Status,
};
use shapeline::ShapeError;

use crate::config::{Config, DumpKind};
use crate::error::CliResult;
use crate::output::{slug, OutDir};

pub const EXIT_PASS: u8 = 0;
pub const EXIT_ASSERTION: u8 = 2;
pub const EXIT_CALIBRATION: u8 = 3;

struct Inputs {
    y: InflectionSet,
    functions: Vec<(String, PeriodicFunction)>,
    out: OutDir,
}

fn inputs(config: &Config) -> CliResult<Inputs> {
    let plan = &config.plan;
    let y = plan.inflections()?;
    if plan.functions.is_empty() || plan.ns.is_empty() {
        return Err(
            ShapeError::InvalidArgument("need at least one function and one n".into()).into(),
        );
    }
    let functions = plan
        .functions
        .iter()
        .map(|name| resolve_function(name).map(|f| (name.clone(), f)))
        .collect::<Result<_, _>>()?;
    Ok(Inputs {
        y,
        functions,
        out: OutDir::create(&config.output.dir)?,
    })
}

fn search(config: &Config) -> ModulusSearch {
    ModulusSearch {
        points_per_period: config.plan.grid_density,
        ..ModulusSearch::default()
    }
}

fn omega4(f: &PeriodicFunction, n: usize, search: ModulusSearch) -> CliResult<f64> {
    Ok(modulus(&|x| f.eval(x), 4, PI / n as f64, None, search)?)
}

#[derive(Serialize)]
struct SplineManifest<'a> {
    function: &'a str,
    y: &'a [f64],
    n: usize,
    shift: f64,
    error: f64,
    omega4: f64,
    precheck: Precheck,
    report: SignReport,
}

pub fn build_spline_cmd(config: &Config) -> CliResult<u8> {
    let Inputs { y, functions, out } = inputs(config)?;
    let search = search(config);
    let mut code = EXIT_PASS;
    for (name, f) in &functions {
        for &n in &config.plan.ns {
            let model = build_spline(f, &y, n)?;
            let report = verify_spline_shape(&model);
            if !report.passed() {
                code = EXIT_ASSERTION;
            }
            let stem = format!("spline_{}_n{n}", slug(name));
            out.write_with(&format!("{stem}.csv"), |file| {
                Ok(model.dump_csv(&mut *file, config.output.samples)?)
            })?;
            out.write_json(
                &format!("{stem}.json"),
                &SplineManifest {
                    function: name,
                    y: y.points(),
                    n,
                    shift: model.shift(),
                    error: sup_distance(f, |x| model.value(x), config.plan.grid_density),
                    omega4: omega4(f, n, search)?,
                    precheck: precheck_coconvex(f, &y, config.plan.grid_density),
                    report,
                },
            )?;
        }
    }
    Ok(code)
}

#[derive(Serialize)]
struct PolySummary<'a> {
    function: &'a str,
    y: &'a [f64],
    n: usize,
    error: f64,
    omega4: f64,
    precheck: Precheck,
    manifest: Option<&'a PolyManifest>,
    report: Option<PolyShapeReport>,
    spline_gap: Option<f64>,
    periodicity_defect: Option<f64>,
    fallback: Option<WhitneyFallback>,
    calibration: Vec<CalibrationStep>,
}

enum Built {
    Model(Box<PolyModel>, Vec<CalibrationStep>),
    Fallback(WhitneyFallback),
}

fn build_one(
    config: &Config,
    f: &PeriodicFunction,
    y: &InflectionSet,
    n: usize,
    calibrating: bool,
) -> CliResult<Built> {
    let plan = &config.plan;
    if n < min_level(y) && plan.allow_fallback {
        return Ok(Built::Fallback(fallback_whitney(f, search(config))?));
    }
    let base = LevelConfig {
        n,
        m1: plan.m1,
        m2: plan.m2,
        nodes_per_period: plan.nodes_per_period,
    };
    if calibrating {
        let schedule = calibration_schedule(plan.m1, plan.m2, plan.max_m2);
        if schedule.is_empty() {
            return Err(ShapeError::InvalidArgument(format!(
                "max-m2 {} is below m2 {}",
                plan.max_m2, plan.m2
            ))
            .into());
        }
        let (model, log) = calibrate(f, y, base, &schedule)?;
        Ok(Built::Model(Box::new(model), log))
    } else {
        Ok(Built::Model(Box::new(build_poly(f, y, base)?), Vec::new()))
    }
}

fn poly_cmd(config: &Config, calibrating: bool) -> CliResult<u8> {
    let Inputs { y, functions, out } = inputs(config)?;
    let search = search(config);
    let mut code = EXIT_PASS;
    for (name, f) in &functions {
        for &n in &config.plan.ns {
            let stem = format!("poly_{}_n{n}", slug(name));
            let mut summary = PolySummary {
                function: name,
                y: y.points(),
                n,
                error: 0.0,
                omega4: omega4(f, n, search)?,
                precheck: precheck_coconvex(f, &y, config.plan.grid_density),
                manifest: None,
                report: None,
                spline_gap: None,
                periodicity_defect: None,
                fallback: None,
                calibration: Vec::new(),
            };
            match build_one(config, f, &y, n, calibrating)? {
                Built::Fallback(fallback) => {
                    summary.error = fallback.sup_error(f);
                    summary.fallback = Some(fallback);
                    out.write_json(&format!("{stem}.json"), &summary)?;
                }
                Built::Model(model, log) => {
                    let report = verify_poly_shape(&model);
                    if calibrating && !report.passed() {
                        code = code.max(EXIT_CALIBRATION);
                    } else if !report.shape_passed() {
                        code = code.max(EXIT_ASSERTION);
                    }
                    out.write_with(&format!("{stem}.csv"), |file| {
                        Ok(model.dump_csv(&mut *file, config.output.stride)?)
                    })?;
                    summary.error = model.sup_error(f);
                    summary.manifest = Some(model.manifest());
                    summary.report = Some(report);
                    summary.spline_gap = Some(model.spline_gap());
                    summary.periodicity_defect = Some(model.periodicity_defect());
                    summary.calibration = log;
                    out.write_json(&format!("{stem}.json"), &summary)?;
                    if calibrating {
                        out.write_json(
                            &format!("calibration_{}_n{n}.json", slug(name)),
                            &summary.calibration,
                        )?;
                    }
                }
            }
        }
    }
    Ok(code)
}

pub fn build_poly_cmd(config: &Config) -> CliResult<u8> {
    poly_cmd(config, config.plan.calibrate)
}

pub fn calibrate_cmd(config: &Config) -> CliResult<u8> {
    poly_cmd(config, true)
}

pub fn study_cmd(config: &Config) -> CliResult<u8> {
    let report = run_study(&config.plan)?;
    let out = OutDir::create(&config.output.dir)?;
    out.write_json("report.json", &report)?;
    out.write_with("tables.csv", |file| Ok(report.write_table(&mut *file)?))?;
    Ok(match report.status {
        Status::Passed => EXIT_PASS,
        Status::Failed => EXIT_ASSERTION,
    })
}

pub fn dump_cmd(config: &Config) -> CliResult<u8> {
    let plan = &config.plan;
    let y = plan.inflections()?;
    let n = *plan
        .ns
        .first()
        .ok_or_else(|| ShapeError::InvalidArgument("dump needs one n".into()))?;
    let out = OutDir::create(&config.output.dir)?;
    let kind = config.dump.kind;
    let j = config.dump.j;
    let corrected = matches!(kind, DumpKind::StepCorrected | DumpKind::RampCorrected);
    let b = config.dump.b.unwrap_or(if corrected {
        LevelConfig::b2(y.s())
    } else {
        LevelConfig::b1(y.s())
    });
    let builder = StepBuilder::new(FineGrid::new(n, n, plan.nodes_per_period)?);
    let name = format!(
        "{}_n{n}_j{j}_b{b}.csv",
        serde_json::to_value(kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    );
    let stride = config.output.stride;
    let write = |table: &dyn NodeFunction| -> CliResult<()> {
        out.write_with(&name, |file| write_table(table, &mut *file, stride))?;
        Ok(())
    };
    match kind {
        DumpKind::Step => {
            let params = KernelParams {
                n,
                b,
                pattern: y.pattern().clone(),
            };
            write(&builder.build(j, &params, StepExtras::default())?)?;
        }
        DumpKind::Ramp => {
            let params = KernelParams {
                n,
                b: b + 3,
                pattern: shapeline::periodic::SignPattern::unit(),
            };
            let extras = StepExtras {
                curvature: false,
                integrals: true,
            };
            let bar = builder.build(0, &params, extras)?;
            write(&build_tau(
                j,
                bar.translated(j + 10),
                bar.translated(j - 10),
            )?)?;
        }
        DumpKind::StepCorrected => {
            let basis = CorrectionBasis::new(&builder, y.pattern(), n, b)?;
            write(&basis.t_tilde(j))?;
        }
        DumpKind::RampCorrected => {
            let basis = CorrectionBasis::new(&builder, y.pattern(), n, b)?;
            write(&basis.tau_tilde(j)?)?;
        }
    }
    Ok(EXIT_PASS)
}

fn write_table(
    table: &dyn NodeFunction,
    out: &mut impl Write,
    stride: usize,
) -> std::io::Result<()> {
    let grid = table.grid();
    writeln!(out, "x,value,derivative")?;
    for node in (grid.first()..=grid.last()).step_by(stride.max(1)) {
        writeln!(
            out,
            "{},{},{}",
            grid.x(node),
            table.value(node),
            table.slope(node)
        )?;
    }
    Ok(())
}
