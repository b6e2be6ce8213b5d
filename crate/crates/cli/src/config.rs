use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use shapeline::verify::{Artifacts, ExperimentPlan};

use crate::error::{CliError, CliResult};

/// Table kinds the `dump` subcommand can write.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DumpKind {
    #[default]
    Step,
    Ramp,
    StepCorrected,
    RampCorrected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Points per period in spline dumps.
    pub samples: usize,
    /// Fine-grid stride in polynomial and table dumps.
    pub stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            samples: 4096,
            stride: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DumpConfig {
    pub kind: DumpKind,
    pub j: i64,
    /// Kernel exponent; defaults to s + 2 for plain tables and 3(s + 1) for corrected ones.
    pub b: Option<u32>,
}

impl Default for DumpConfig {
    fn default() -> Self {
        Self {
            kind: DumpKind::Step,
            j: 0,
            b: None,
        }
    }
}

/// Everything a run needs. Serialized form is the config-file schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub plan: ExperimentPlan,
    pub output: OutputConfig,
    pub dump: DumpConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArtifactsArg {
    Spline,
    Poly,
    Both,
}

impl From<ArtifactsArg> for Artifacts {
    fn from(a: ArtifactsArg) -> Self {
        match a {
            ArtifactsArg::Spline => Artifacts::Spline,
            ArtifactsArg::Poly => Artifacts::Poly,
            ArtifactsArg::Both => Artifacts::Both,
        }
    }
}

/// Flags shared by every subcommand. Each overrides its config-file field.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// JSON config file; flags win on conflict.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Print the merged config as JSON and exit.
    #[arg(long, global = true)]
    pub print_config: bool,

    /// Functions: builtin names or csv:<path> [default: neg-sin].
    #[arg(long = "f", global = true, value_delimiter = ',')]
    pub functions: Option<Vec<String>>,

    /// Inflection points in [-pi, pi), even count [default: 0,-pi].
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub y: Option<Vec<f64>>,

    /// Levels n [default: 16,32,64].
    #[arg(long = "n", alias = "ns", global = true, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,

    /// Points per period for sup-norms and moduli [default: 16384].
    #[arg(long, global = true)]
    pub grid_density: Option<usize>,

    /// Fine-grid nodes per period for step tables [default: 65536].
    #[arg(long, global = true)]
    pub nodes_per_period: Option<usize>,

    /// Multiplier n1 = 2*m1*n [default: 2].
    #[arg(long, global = true)]
    pub m1: Option<usize>,

    /// Multiplier n2 = 2*m2*n1 [default: 4].
    #[arg(long, global = true)]
    pub m2: Option<usize>,

    /// Raise (m1, m2) until the polynomial shape checks pass.
    #[arg(long, global = true)]
    pub calibrate: bool,

    /// Largest m2 tried by calibration [default: 8].
    #[arg(long, global = true)]
    pub max_m2: Option<usize>,

    /// Which approximants to build [default: both].
    #[arg(long, global = true, value_enum)]
    pub artifacts: Option<ArtifactsArg>,

    /// Use the constant approximant below the level floor.
    #[arg(long, global = true)]
    pub allow_fallback: bool,

    /// Largest accepted max/min ratio of error/omega4 across n [default: 2].
    #[arg(long, global = true)]
    pub ratio_spread: Option<f64>,

    /// Record wall-clock times in reports.
    #[arg(long, global = true)]
    pub timings: bool,

    /// Output directory [default: out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Points per period in spline dumps [default: 4096].
    #[arg(long, global = true)]
    pub samples: Option<usize>,

    /// Fine-grid stride in polynomial and table dumps [default: 16].
    #[arg(long, global = true)]
    pub stride: Option<usize>,

    /// Table kind for `dump` [default: step].
    #[arg(long, global = true, value_enum)]
    pub kind: Option<DumpKind>,

    /// Knot index for `dump` [default: 0].
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub j: Option<i64>,

    /// Kernel exponent for `dump` [default: s+2 plain, 3(s+1) corrected].
    #[arg(long, global = true)]
    pub b: Option<u32>,
}

pub fn load(path: &Path) -> CliResult<Config> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl Overrides {
    /// File config (or defaults) with flags applied on top.
    pub fn resolve(&self) -> CliResult<Config> {
        let mut config = match &self.config {
            Some(path) => load(path)?,
            None => Config::default(),
        };
        let plan = &mut config.plan;
        if let Some(v) = &self.functions {
            plan.functions = v.clone();
        }
        if let Some(v) = &self.y {
            plan.y = v.clone();
        }
        if let Some(v) = &self.ns {
            plan.ns = v.clone();
        }
        set(&mut plan.grid_density, self.grid_density);
        set(&mut plan.nodes_per_period, self.nodes_per_period);
        set(&mut plan.m1, self.m1);
        set(&mut plan.m2, self.m2);
        set(&mut plan.max_m2, self.max_m2);
        set(&mut plan.ratio_spread, self.ratio_spread);
        plan.calibrate |= self.calibrate;
        plan.allow_fallback |= self.allow_fallback;
        plan.timings |= self.timings;
        if let Some(a) = self.artifacts {
            plan.artifacts = a.into();
        }
        set(&mut config.output.dir, self.out.clone());
        set(&mut config.output.samples, self.samples);
        set(&mut config.output.stride, self.stride);
        set(&mut config.dump.kind, self.kind);
        set(&mut config.dump.j, self.j);
        if self.b.is_some() {
            config.dump.b = self.b;
        }
        Ok(config)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
