//! Jackson-type kernels and the smoothed steps and ramps built from them.
//!
//! Every function lives on one [`FineGrid`] whose nodes contain the knots of
//! all levels. First-level steps come from exact spectral integration of the
//! kernel (it is a trigonometric polynomial); nested integrals use the
//! Hermite-corrected trapezoid rule.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, ShapeError};
use crate::periodic::{gamma, DyadicGrid, NeighborhoodIndex, SignPattern, TWO_PI};

/// Default number of fine nodes per period.
pub const DEFAULT_NODES_PER_PERIOD: usize = 1 << 16;

/// Minimum number of fine nodes per finest-level step h.
const MIN_REFINEMENT: usize = 16;

const GAUSS_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GAUSS_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// Eight-point Gauss–Legendre rule on [a, b].
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    GAUSS_NODES
        .iter()
        .zip(GAUSS_WEIGHTS)
        .map(|(t, w)| w * f(mid + half * t))
        .sum::<f64>()
        * half
}

/// Uniform nodes k·dx covering [−3π − 2h, 3π + 2h] for the coarsest step h.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FineGrid {
    per_period: i64,
    half_range: i64,
}

impl FineGrid {
    /// Grid fine enough for level `finest`, with at least `nodes_per_period`
    /// nodes per period and range padded by two steps of level `coarsest`.
    pub fn new(coarsest: usize, finest: usize, nodes_per_period: usize) -> Result<Self> {
        if coarsest == 0 || !finest.is_multiple_of(coarsest) {
            return Err(ShapeError::InvalidArgument(format!(
                "finest level {finest} must be a multiple of coarsest level {coarsest}"
            )));
        }
        let refinement = MIN_REFINEMENT.max(nodes_per_period.div_ceil(2 * finest));
        let per_period = (2 * finest * refinement) as i64;
        let coarse_step = per_period / (2 * coarsest as i64);
        Ok(Self {
            per_period,
            half_range: 3 * per_period / 2 + 2 * coarse_step + 8,
        })
    }

    pub fn dx(&self) -> f64 {
        TWO_PI / self.per_period as f64
    }

    /// Nodes per period.
    pub fn period(&self) -> i64 {
        self.per_period
    }

    pub fn x(&self, node: i64) -> f64 {
        node as f64 * self.dx()
    }

    pub fn first(&self) -> i64 {
        -self.half_range
    }

    pub fn last(&self) -> i64 {
        self.half_range
    }

    pub fn len(&self) -> usize {
        (2 * self.half_range + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Array slot of a node.
    pub fn slot(&self, node: i64) -> usize {
        (node + self.half_range) as usize
    }

    pub fn contains(&self, node: i64) -> bool {
        node.abs() <= self.half_range
    }

    /// Node of the level-`n` knot x_j = −jπ/n.
    pub fn knot_node(&self, j: i64, n: usize) -> i64 {
        let per_step = self.per_period / (2 * n as i64);
        debug_assert_eq!(per_step * 2 * n as i64, self.per_period);
        -j * per_step
    }

    /// Nodes per level-`n` step.
    pub fn step_nodes(&self, n: usize) -> i64 {
        self.per_period / (2 * n as i64)
    }

    pub fn nearest(&self, x: f64) -> i64 {
        (x / self.dx()).round() as i64
    }

    /// Node values of `f` on the whole grid.
    pub fn sample<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        (self.first()..=self.last()).map(|k| f(self.x(k))).collect()
    }
}

/// A function with values and first derivatives on fine-grid nodes.
pub trait NodeFunction {
    fn grid(&self) -> FineGrid;
    fn value(&self, node: i64) -> f64;
    fn slope(&self, node: i64) -> f64;

    /// Writes `x,value,derivative` rows for every `stride`-th node.
    fn dump_csv(&self, path: &Path, stride: usize) -> std::io::Result<()> {
        let grid = self.grid();
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "x,value,derivative")?;
        let mut node = grid.first();
        while node <= grid.last() {
            writeln!(
                out,
                "{},{},{}",
                grid.x(node),
                self.value(node),
                self.slope(node)
            )?;
            node += stride.max(1) as i64;
        }
        out.flush()
    }
}

/// Node arrays over the whole fine grid.
#[derive(Clone, Debug)]
pub struct NodeSeries {
    grid: FineGrid,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl NodeSeries {
    pub fn zeros(grid: FineGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            slopes: vec![0.0; grid.len()],
        }
    }

    pub fn from_parts(grid: FineGrid, values: Vec<f64>, slopes: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len());
        assert_eq!(slopes.len(), grid.len());
        Self {
            grid,
            values,
            slopes,
        }
    }

    pub fn from_fn<F: NodeFunction + ?Sized>(f: &F) -> Self {
        let grid = f.grid();
        let values = (grid.first()..=grid.last()).map(|k| f.value(k)).collect();
        let slopes = (grid.first()..=grid.last()).map(|k| f.slope(k)).collect();
        Self {
            grid,
            values,
            slopes,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// self += weight · other, values and slopes.
    pub fn add_scaled<F: NodeFunction + ?Sized>(&mut self, weight: f64, other: &F) {
        if weight == 0.0 {
            return;
        }
        for (slot, node) in (self.grid.first()..=self.grid.last()).enumerate() {
            self.values[slot] += weight * other.value(node);
            self.slopes[slot] += weight * other.slope(node);
        }
    }

    /// ∫ from `base` of this function, using values and slopes.
    pub fn integrate_from(&self, base: i64) -> NodeSeries {
        NodeSeries {
            grid: self.grid,
            values: hermite_cumulative(self.grid, base, &self.values, &self.slopes),
            slopes: self.values.clone(),
        }
    }

    /// Hermite-trapezoid integral between two nodes.
    pub fn window_integral(&self, from: i64, to: i64) -> f64 {
        let dx = self.grid.dx();
        let (lo, hi, sign) = if from <= to {
            (from, to, 1.0)
        } else {
            (to, from, -1.0)
        };
        let mut total = 0.0;
        for node in lo..hi {
            let (a, b) = (self.grid.slot(node), self.grid.slot(node + 1));
            total += 0.5 * dx * (self.values[a] + self.values[b])
                + dx * dx / 12.0 * (self.slopes[a] - self.slopes[b]);
        }
        sign * total
    }
}

impl NodeFunction for NodeSeries {
    fn grid(&self) -> FineGrid {
        self.grid
    }
    fn value(&self, node: i64) -> f64 {
        self.values[self.grid.slot(node)]
    }
    fn slope(&self, node: i64) -> f64 {
        self.slopes[self.grid.slot(node)]
    }
}

/// Cumulative Hermite-corrected trapezoid integral, zero at `base`.
pub fn hermite_cumulative(grid: FineGrid, base: i64, values: &[f64], slopes: &[f64]) -> Vec<f64> {
    let dx = grid.dx();
    let step = |a: usize, b: usize| {
        0.5 * dx * (values[a] + values[b]) + dx * dx / 12.0 * (slopes[a] - slopes[b])
    };
    let mut out = vec![0.0; values.len()];
    let start = grid.slot(base);
    for i in start..values.len() - 1 {
        out[i + 1] = out[i] + step(i, i + 1);
    }
    for i in (1..=start).rev() {
        out[i - 1] = out[i] - step(i - 1, i);
    }
    out
}

/// (sin(nu/2) / (n sin(u/2)))^(2b), the Jackson kernel scaled to peak 1.
pub fn scaled_kernel(n: usize, b: u32, u: f64) -> f64 {
    let nf = n as f64;
    let half = 0.5 * u;
    let ratio = if half.sin().abs() < 1e-7 {
        1.0 - (nf * nf - 1.0) * u * u / 24.0
    } else {
        (nf * half).sin() / (nf * half.sin())
    };
    ratio.powi(2 * b as i32)
}

/// J_j(x): the sum of the two adjacent Jackson kernels centred at x_j and x_{j−1}.
pub fn jackson_kernel(j: i64, n: usize, b: u32, x: f64) -> f64 {
    let grid = DyadicGrid::new(n).expect("n ≥ 1");
    let peak = (n as f64).powi(2 * b as i32);
    peak * (scaled_kernel(n, b, x - grid.knot(j)) + scaled_kernel(n, b, x - grid.knot(j - 1)))
}

/// Level, exponent and sign pattern of a step t_j.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams {
    pub n: usize,
    pub b: u32,
    pub pattern: SignPattern,
}

struct PeriodData {
    values: Vec<f64>,
    slopes: Vec<f64>,
    curvature: Option<Vec<f64>>,
    integrals: Option<Vec<f64>>,
    period_integral: f64,
    scale: f64,
}

/// Spectral builder for step tables on a fixed fine grid.
#[derive(Clone)]
pub struct StepBuilder {
    grid: FineGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StepBuilder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StepBuilder")
            .field("grid", &self.grid)
            .finish()
    }
}

/// Which optional arrays a step table keeps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepExtras {
    pub curvature: bool,
    pub integrals: bool,
}

impl StepBuilder {
    pub fn new(grid: FineGrid) -> Self {
        let mut planner = FftPlanner::new();
        let size = grid.period() as usize;
        Self {
            grid,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    pub fn grid(&self) -> FineGrid {
        self.grid
    }

    /// t_j for level n, exponent b and sign pattern: t_j(x_j − π) = 0, t_j(x_j + π) = 1.
    pub fn build(&self, j: i64, params: &KernelParams, extras: StepExtras) -> Result<StepTable> {
        let grid = self.grid;
        let size = grid.period() as usize;
        let knot = grid.knot_node(j, params.n);
        let neighbor = grid.knot_node(j - 1, params.n);
        let origin = knot - grid.period() / 2;
        let dx = grid.dx();
        let raw: Vec<f64> = (0..size as i64)
            .map(|i| {
                let node = origin + i;
                let u0 = wrapped_offset(node - knot, grid.period()) as f64 * dx;
                let u1 = wrapped_offset(node - neighbor, grid.period()) as f64 * dx;
                let kernel =
                    scaled_kernel(params.n, params.b, u0) + scaled_kernel(params.n, params.b, u1);
                kernel * params.pattern.value(grid.x(node))
            })
            .collect();
        let mut spectrum: Vec<Complex<f64>> = raw.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut spectrum);
        let mean = spectrum[0].re / size as f64;
        let magnitude = raw.iter().map(|v| v.abs()).sum::<f64>() / size as f64;
        if mean.abs() <= 1e-12 * magnitude || mean == 0.0 {
            return Err(ShapeError::DegenerateDenominator {
                index: j,
                value: TWO_PI * mean,
            });
        }
        // normalized so the density integrates to 1 over a period
        let scale = 1.0 / (TWO_PI * mean);
        let norm = scale / size as f64;
        let frequency = |q: usize| {
            if q <= size / 2 {
                q as f64
            } else {
                q as f64 - size as f64
            }
        };
        let transform = |factor: &dyn Fn(f64) -> Complex<f64>| {
            let mut buffer: Vec<Complex<f64>> = spectrum
                .iter()
                .enumerate()
                .map(|(q, c)| {
                    if q == 0 || q == size / 2 {
                        Complex::new(0.0, 0.0)
                    } else {
                        c * norm * factor(frequency(q))
                    }
                })
                .collect();
            self.inverse.process(&mut buffer);
            buffer.into_iter().map(|c| c.re).collect::<Vec<f64>>()
        };
        let periodic = transform(&|k| Complex::new(0.0, -1.0 / k));
        let p0 = periodic[0];
        let values = (0..size)
            .map(|i| i as f64 * dx / TWO_PI + periodic[i] - p0)
            .collect();
        let slopes = raw.iter().map(|v| v * scale).collect();
        let curvature = extras
            .curvature
            .then(|| transform(&|k| Complex::new(0.0, k)));
        let integrals = extras.integrals.then(|| {
            let second = transform(&|k| Complex::new(-1.0 / (k * k), 0.0));
            (0..size)
                .map(|i| {
                    let s = i as f64 * dx;
                    s * s / (2.0 * TWO_PI) + second[i] - second[0] - p0 * s
                })
                .collect()
        });
        Ok(StepTable {
            grid,
            origin,
            knot,
            params: Arc::new(params.clone()),
            data: Arc::new(PeriodData {
                values,
                slopes,
                curvature,
                integrals,
                period_integral: PI - TWO_PI * p0,
                scale,
            }),
        })
    }
}

fn wrapped_offset(offset: i64, period: i64) -> i64 {
    let r = offset.rem_euclid(period);
    if r >= period / 2 {
        r - period
    } else {
        r
    }
}

/// A smoothed step t_j on the whole real line: t(x + 2π) = t(x) + 1.
#[derive(Clone)]
pub struct StepTable {
    grid: FineGrid,
    origin: i64,
    knot: i64,
    params: Arc<KernelParams>,
    data: Arc<PeriodData>,
}

impl std::fmt::Debug for StepTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StepTable")
            .field("knot", &self.knot)
            .field("n", &self.params.n)
            .field("b", &self.params.b)
            .finish()
    }
}

impl StepTable {
    fn locate(&self, node: i64) -> (i64, usize) {
        let rel = node - self.origin;
        let period = self.grid.period();
        (rel.div_euclid(period), rel.rem_euclid(period) as usize)
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Node of x_j.
    pub fn knot(&self) -> i64 {
        self.knot
    }

    /// Node of x_j − π, where the table starts.
    pub fn origin(&self) -> i64 {
        self.origin
    }

    /// The same step for the pattern-free case translated to level index j.
    /// Only valid when the sign pattern is trivial.
    pub fn translated(&self, j: i64) -> StepTable {
        debug_assert!(self.params.pattern.is_unit());
        let knot = self.grid.knot_node(j, self.params.n);
        StepTable {
            grid: self.grid,
            origin: self.origin + (knot - self.knot),
            knot,
            params: Arc::clone(&self.params),
            data: Arc::clone(&self.data),
        }
    }

    pub fn curvature(&self, node: i64) -> f64 {
        let (_, r) = self.locate(node);
        self.data
            .curvature
            .as_ref()
            .expect("step table built without curvature")[r]
    }

    /// ∫ from x_j − π to the node.
    pub fn integral(&self, node: i64) -> f64 {
        let (m, r) = self.locate(node);
        let w = self
            .data
            .integrals
            .as_ref()
            .expect("step table built without integrals")[r];
        let m = m as f64;
        let s = r as f64 * self.grid.dx();
        PI * m * (m - 1.0) + m * self.data.period_integral + m * s + w
    }

    /// Normalized density t_j′ at an arbitrary x.
    pub fn slope_at(&self, x: f64) -> f64 {
        let p = &self.params;
        let knot = self.grid.x(self.knot);
        let step = PI / p.n as f64;
        let kernel = scaled_kernel(p.n, p.b, x - knot) + scaled_kernel(p.n, p.b, x - knot - step);
        kernel * p.pattern.value(x) * self.data.scale
    }

    pub fn value_at(&self, x: f64) -> f64 {
        let node = self.grid.nearest(x);
        let x0 = self.grid.x(node);
        self.value(node) + gauss_legendre(|u| self.slope_at(u), x0, x)
    }

    /// ∫ from x_j − π to x.
    pub fn integral_at(&self, x: f64) -> f64 {
        let node = self.grid.nearest(x);
        let x0 = self.grid.x(node);
        self.integral(node) + gauss_legendre(|u| self.value_at(u), x0, x)
    }
}

impl NodeFunction for StepTable {
    fn grid(&self) -> FineGrid {
        self.grid
    }
    fn value(&self, node: i64) -> f64 {
        let (m, r) = self.locate(node);
        m as f64 + self.data.values[r]
    }
    fn slope(&self, node: i64) -> f64 {
        let (_, r) = self.locate(node);
        self.data.slopes[r]
    }
}

/// Closed-form mixing weight α with α·I₊ + (1−α)·I₋ = target.
pub fn affine_weight(target: f64, plus: f64, minus: f64) -> Option<f64> {
    let denominator = plus - minus;
    (denominator != 0.0 && denominator.is_finite()).then(|| (target - minus) / denominator)
}

/// τ_j = α∫t̄_{j+10} + (1−α)∫t̄_{j−10} from x_j − π, with τ_j(x_j + π) = π.
#[derive(Clone, Debug)]
pub struct Ramp {
    plus: StepTable,
    minus: StepTable,
    alpha: f64,
    origin: i64,
    offset_plus: f64,
    offset_minus: f64,
}

/// Slack allowed on α before the ramp solve is rejected.
pub const ALPHA_SLACK: f64 = 1e-6;

/// Builds τ_j from the steps t_{j+10} and t_{j−10} (both with integrals).
pub fn build_tau(j: i64, plus: StepTable, minus: StepTable) -> Result<Ramp> {
    let grid = plus.grid;
    let n = plus.params.n;
    let knot = grid.knot_node(j, n);
    let origin = knot - grid.period() / 2;
    let end = knot + grid.period() / 2;
    let offset_plus = plus.integral(origin);
    let offset_minus = minus.integral(origin);
    let total_plus = plus.integral(end) - offset_plus;
    let total_minus = minus.integral(end) - offset_minus;
    let alpha =
        affine_weight(PI, total_plus, total_minus).ok_or(ShapeError::DegenerateDenominator {
            index: j,
            value: total_plus - total_minus,
        })?;
    if !(-ALPHA_SLACK..=1.0 + ALPHA_SLACK).contains(&alpha) {
        return Err(ShapeError::AlphaOutOfRange {
            index: j,
            value: alpha,
        });
    }
    Ok(Ramp {
        plus,
        minus,
        alpha,
        origin,
        offset_plus,
        offset_minus,
    })
}

impl Ramp {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Node of x_j − π.
    pub fn origin(&self) -> i64 {
        self.origin
    }

    pub fn value_at(&self, x: f64) -> f64 {
        self.alpha * (self.plus.integral_at(x) - self.offset_plus)
            + (1.0 - self.alpha) * (self.minus.integral_at(x) - self.offset_minus)
    }
}

impl NodeFunction for Ramp {
    fn grid(&self) -> FineGrid {
        self.plus.grid
    }
    fn value(&self, node: i64) -> f64 {
        self.alpha * (self.plus.integral(node) - self.offset_plus)
            + (1.0 - self.alpha) * (self.minus.integral(node) - self.offset_minus)
    }
    fn slope(&self, node: i64) -> f64 {
        self.alpha * self.plus.value(node) + (1.0 - self.alpha) * self.minus.value(node)
    }
}

/// Components of t̂ for one inflection point.
#[derive(Clone, Debug)]
struct HatPart {
    bar_plus: StepTable,
    breve_minus: StepTable,
    shifted: SignPattern,
    anchor_value: f64,
}

impl HatPart {
    fn value_at(&self, x: f64) -> f64 {
        (self.bar_plus.value_at(x) - self.breve_minus.value_at(x)) * self.shifted.value(x)
            / self.anchor_value
    }
}

/// Corrections t̂ for one sign pattern at one level; produces t̃_j and τ̃_j.
#[derive(Debug)]
pub struct CorrectionBasis {
    level: usize,
    bar: StepTable,
    tau_alpha: f64,
    points: Vec<f64>,
    parts: Vec<HatPart>,
    hats: Vec<NodeSeries>,
    divisors: Vec<f64>,
}

/// Floor on |t̂_{j_i}(y_i)|.
pub const DIVISOR_FLOOR: f64 = 1e-12;

impl CorrectionBasis {
    /// Corrections for the points of `pattern` at level `n`, exponent `b`
    /// (the smoothed steps use b + 3).
    pub fn new(builder: &StepBuilder, pattern: &SignPattern, n: usize, b: u32) -> Result<Self> {
        let grid = builder.grid();
        let level = DyadicGrid::new(n)?;
        let b_bar = b + 3;
        let bar_params = KernelParams {
            n,
            b: b_bar,
            pattern: SignPattern::unit(),
        };
        let bar = builder.build(
            0,
            &bar_params,
            StepExtras {
                curvature: false,
                integrals: true,
            },
        )?;
        let tau_alpha = build_tau(0, bar.translated(10), bar.translated(-10))?.alpha();
        let index = NeighborhoodIndex::from_points(pattern.points(), level, 20);
        let mut parts = Vec::with_capacity(pattern.points().len());
        let mut hats = Vec::with_capacity(pattern.points().len());
        let mut divisors = Vec::with_capacity(pattern.points().len());
        for (i, &point) in pattern.points().iter().enumerate() {
            let anchor = index.anchor(i);
            // odd 1-based position: left endpoint of O_{i,20}; even: right endpoint
            let replacement = if i % 2 == 0 {
                level.knot(anchor + 21)
            } else {
                level.knot(anchor - 20)
            };
            let shifted = pattern.with_replaced(i, replacement);
            let breve = SignPattern::new(vec![point, point - PI], 1.0);
            let breve_minus = builder.build(
                anchor - 10,
                &KernelParams {
                    n,
                    b: b_bar,
                    pattern: breve,
                },
                StepExtras::default(),
            )?;
            let part = HatPart {
                bar_plus: bar.translated(anchor + 10),
                anchor_value: shifted.value(grid.x(grid.knot_node(anchor, n))),
                breve_minus,
                shifted,
            };
            let divisor = part.value_at(point);
            if divisor.is_nan() || divisor.abs() < DIVISOR_FLOOR {
                return Err(ShapeError::DivisorTooSmall {
                    point,
                    value: divisor,
                });
            }
            let mut values = Vec::with_capacity(grid.len());
            let mut slopes = Vec::with_capacity(grid.len());
            for node in grid.first()..=grid.last() {
                let x = grid.x(node);
                let diff = part.bar_plus.value(node) - part.breve_minus.value(node);
                let diff_slope = part.bar_plus.slope(node) - part.breve_minus.slope(node);
                let ratio = part.shifted.value(x) / part.anchor_value;
                let ratio_slope = part.shifted.derivative(x) / part.anchor_value;
                values.push(diff * ratio);
                slopes.push(diff_slope * ratio + diff * ratio_slope);
            }
            hats.push(NodeSeries::from_parts(grid, values, slopes));
            parts.push(part);
            divisors.push(divisor);
        }
        Ok(Self {
            level: n,
            bar,
            tau_alpha,
            points: pattern.points().to_vec(),
            parts,
            hats,
            divisors,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn grid(&self) -> FineGrid {
        self.bar.grid
    }

    /// t̂_{j_i}(y_i) for each point.
    pub fn divisors(&self) -> &[f64] {
        &self.divisors
    }

    /// Mixing weight of every τ_j at this level (translation invariant).
    pub fn tau_alpha(&self) -> f64 {
        self.tau_alpha
    }

    /// t̄_j.
    pub fn bar(&self, j: i64) -> StepTable {
        self.bar.translated(j)
    }

    /// t̂_{j_i} at an arbitrary point (0-based i).
    pub fn hat_at(&self, i: usize, x: f64) -> f64 {
        self.parts[i].value_at(x)
    }

    pub fn hat(&self, i: usize) -> &NodeSeries {
        &self.hats[i]
    }

    /// τ_j built from t̄_{j±10}.
    pub fn tau(&self, j: i64) -> Result<Ramp> {
        build_tau(j, self.bar(j + 10), self.bar(j - 10))
    }

    fn knot_x(&self, j: i64) -> f64 {
        let grid = self.grid();
        grid.x(grid.knot_node(j, self.level))
    }

    /// t̃_j = t̄_j + Σ c_i t̂_{j_i} with t̃_j(y_i) = χ_j(y_i).
    pub fn t_tilde(&self, j: i64) -> Corrected<'_, StepTable> {
        let base = self.bar(j);
        let knot = self.knot_x(j);
        let coeffs = self
            .points
            .iter()
            .zip(&self.divisors)
            .map(|(&y, d)| {
                let target = if y > knot { 1.0 } else { 0.0 };
                (target - base.value_at(y)) / d
            })
            .collect();
        Corrected {
            base,
            coeffs,
            basis: self,
        }
    }

    /// τ̃_j = τ_j + Σ e_i t̂_{j_i} with τ̃_j(y_i) = (y_i − x_j)₊.
    pub fn tau_tilde(&self, j: i64) -> Result<Corrected<'_, Ramp>> {
        let base = self.tau(j)?;
        let knot = self.knot_x(j);
        let coeffs = self
            .points
            .iter()
            .zip(&self.divisors)
            .map(|(&y, d)| ((y - knot).max(0.0) - base.value_at(y)) / d)
            .collect();
        Ok(Corrected {
            base,
            coeffs,
            basis: self,
        })
    }
}

/// A base function plus a combination of the t̂ corrections.
#[derive(Debug)]
pub struct Corrected<'a, B> {
    base: B,
    coeffs: Vec<f64>,
    basis: &'a CorrectionBasis,
}

impl<B> Corrected<'_, B> {
    pub fn base(&self) -> &B {
        &self.base
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }
}

impl Corrected<'_, StepTable> {
    pub fn value_at(&self, x: f64) -> f64 {
        self.base.value_at(x)
            + self
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| c * self.basis.hat_at(i, x))
                .sum::<f64>()
    }
}

impl Corrected<'_, Ramp> {
    pub fn value_at(&self, x: f64) -> f64 {
        self.base.value_at(x)
            + self
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| c * self.basis.hat_at(i, x))
                .sum::<f64>()
    }
}

impl<B: NodeFunction> NodeFunction for Corrected<'_, B> {
    fn grid(&self) -> FineGrid {
        self.base.grid()
    }
    fn value(&self, node: i64) -> f64 {
        self.base.value(node)
            + self
                .coeffs
                .iter()
                .zip(&self.basis.hats)
                .map(|(c, hat)| c * hat.value(node))
                .sum::<f64>()
    }
    fn slope(&self, node: i64) -> f64 {
        self.base.slope(node)
            + self
                .coeffs
                .iter()
                .zip(&self.basis.hats)
                .map(|(c, hat)| c * hat.slope(node))
                .sum::<f64>()
    }
}

/// Sign and bound-constant checks on one step.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct BoundReport {
    pub samples: usize,
    pub sign_violations: usize,
    pub worst_margin: f64,
    pub worst_location: f64,
    /// Smallest C with |χ_j − t_j| ≤ C·Γ^(2b−2s−1) on [x_j − π, x_j + π].
    pub step_constant: f64,
    /// Smallest C with |t_j′| ≤ C·Γ^(2b−2s)/h.
    pub slope_upper: f64,
    /// Largest c with |t_j′| ≥ c·Γ^(2b+2s)/h outside O_10.
    pub slope_lower: f64,
}

/// Sign property t_j′ΠΠ(x_j) ≥ 0 and fitted bound constants on `samples`
/// evenly spaced nodes of [x_j − π, x_j + π].
pub fn check_step_bounds(j: i64, table: &StepTable, samples: usize) -> Result<BoundReport> {
    let grid = table.grid;
    let params = table.params();
    let level = DyadicGrid::new(params.n)?;
    let s = params.pattern.points().len() as i32 / 2;
    let b = params.b as i32;
    let h = level.h();
    let pattern = &params.pattern;
    let at_knot = pattern.value(grid.x(table.knot()));
    let neighborhoods = NeighborhoodIndex::from_points(pattern.points(), level, 10);
    let stride = (grid.period() / samples.max(1) as i64).max(1);
    let x_knot = grid.x(table.knot());
    let mut report = BoundReport {
        worst_margin: f64::INFINITY,
        slope_lower: f64::INFINITY,
        ..Default::default()
    };
    let scale = (0..grid.period())
        .step_by(stride as usize)
        .map(|r| table.slope(table.origin() + r).abs())
        .fold(0.0, f64::max);
    let mut node = table.origin();
    while node <= table.origin() + grid.period() {
        let x = grid.x(node);
        let slope = table.slope(node);
        let g = gamma(j, params.n, x);
        let margin = slope * pattern.value(x) * at_knot.signum();
        if margin < report.worst_margin {
            report.worst_margin = margin;
            report.worst_location = x;
        }
        if margin < -1e-9 * scale {
            report.sign_violations += 1;
        }
        let chi = if x > x_knot { 1.0 } else { 0.0 };
        report.step_constant = report
            .step_constant
            .max((chi - table.value(node)).abs() / g.powi(2 * b - 2 * s - 1));
        report.slope_upper = report
            .slope_upper
            .max(slope.abs() * h / g.powi(2 * b - 2 * s));
        if neighborhoods.containing_point(x).is_none() {
            report.slope_lower = report
                .slope_lower
                .min(slope.abs() * h / g.powi(2 * b + 2 * s));
        }
        report.samples += 1;
        node += stride;
    }
    if report.sign_violations > 0 {
        return Err(ShapeError::SignViolation {
            location: report.worst_location,
            margin: report.worst_margin,
        });
    }
    Ok(report)
}
