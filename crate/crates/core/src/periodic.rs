//! Grids, inflection sets, the sign function Π, neighborhood index sets,
//! divided differences, moduli of smoothness and cubic interpolation.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Result, ShapeError};

pub const TWO_PI: f64 = 2.0 * PI;

/// Minimum number of samples per period accepted for sampled functions.
pub const MIN_SAMPLES: usize = 64;

/// Reduces `x` to the representative in `[-π, π)`.
pub fn reduce(x: f64) -> f64 {
    let r = x - TWO_PI * ((x + PI) / TWO_PI).floor();
    if r >= PI {
        r - TWO_PI
    } else {
        r
    }
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Builtin {
    NegSin,
    Sin,
    Const,
    NegSinMix,
    CubicPeriodic,
    Poly4Periodic,
    CoconvexFamily,
}

#[derive(Clone)]
enum Source {
    Builtin(Builtin),
    Closure { f: RealFn, f2: Option<RealFn> },
    Sampled(Arc<Samples>),
}

struct Samples {
    start: f64,
    step: f64,
    values: Vec<f64>,
}

impl Samples {
    fn eval(&self, x: f64) -> f64 {
        let count = self.values.len();
        let u = (x - self.start).rem_euclid(TWO_PI) / self.step;
        let k = (u.floor() as usize).min(count - 1);
        let t = u - k as f64;
        let at = |offset: isize| {
            let idx = (k as isize + offset).rem_euclid(count as isize) as usize;
            self.values[idx]
        };
        let (p0, p1, p2, p3) = (at(-1), at(0), at(1), at(2));
        // four-point Lagrange through nodes -1, 0, 1, 2
        let l0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let l1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let l2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let l3 = (t + 1.0) * t * (t - 1.0) / 6.0;
        p0 * l0 + p1 * l1 + p2 * l2 + p3 * l3
    }
}

/// A continuous 2π-periodic real function.
#[derive(Clone)]
pub struct PeriodicFunction {
    name: String,
    source: Source,
}

impl std::fmt::Debug for PeriodicFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeriodicFunction")
            .field("name", &self.name)
            .finish()
    }
}

impl PeriodicFunction {
    /// Names accepted by [`PeriodicFunction::builtin`].
    pub const BUILTINS: [&'static str; 7] = [
        "neg-sin",
        "sin",
        "const",
        "neg-sin-mix",
        "cubic-periodic",
        "poly4-periodic",
        "coconvex-family",
    ];

    /// Looks up a builtin by name.
    ///
    /// `neg-sin-mix` is −sin x − 0.05 sin 2x; `cubic-periodic` is x³ − π²x and
    /// `poly4-periodic` is (x² − π²)², both on [−π, π) extended periodically;
    /// `coconvex-family` has f″ = Π(x, {0, −π})·(1 + 0.3 cos x).
    pub fn builtin(name: &str) -> Result<Self> {
        let kind = match name {
            "neg-sin" => Builtin::NegSin,
            "sin" => Builtin::Sin,
            "const" => Builtin::Const,
            "neg-sin-mix" => Builtin::NegSinMix,
            "cubic-periodic" => Builtin::CubicPeriodic,
            "poly4-periodic" => Builtin::Poly4Periodic,
            "coconvex-family" => Builtin::CoconvexFamily,
            other => return Err(ShapeError::UnknownFunction(other.to_string())),
        };
        Ok(Self {
            name: name.to_string(),
            source: Source::Builtin(kind),
        })
    }

    /// Wraps a closure; `x` is reduced to `[-π, π)` before the call.
    pub fn from_fn<F>(name: &str, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.to_string(),
            source: Source::Closure {
                f: Arc::new(f),
                f2: None,
            },
        }
    }

    /// Wraps a closure together with its second derivative.
    pub fn from_fn_with_second<F, G>(name: &str, f: F, f2: G) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.to_string(),
            source: Source::Closure {
                f: Arc::new(f),
                f2: Some(Arc::new(f2)),
            },
        }
    }

    /// Uniform samples over one period starting at `start`.
    pub fn from_samples(name: &str, start: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < MIN_SAMPLES {
            return Err(ShapeError::TooFewSamples {
                min: MIN_SAMPLES,
                got: values.len(),
            });
        }
        let step = TWO_PI / values.len() as f64;
        Ok(Self {
            name: name.to_string(),
            source: Source::Sampled(Arc::new(Samples {
                start,
                step,
                values,
            })),
        })
    }

    /// Reads a two-column CSV `(x, f(x))` of uniform samples covering one period.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| ShapeError::SampleInput(e.to_string()))?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| ShapeError::SampleInput(e.to_string()))?;
            if record.len() < 2 {
                return Err(ShapeError::SampleInput(format!(
                    "expected two columns, found {}",
                    record.len()
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| ShapeError::SampleInput(format!("'{s}': {e}")))
            };
            let x = match parse(&record[0]) {
                Ok(v) => v,
                // tolerate a header row
                Err(_) if xs.is_empty() => continue,
                Err(e) => return Err(e),
            };
            xs.push(x);
            ys.push(parse(&record[1])?);
        }
        if ys.len() < MIN_SAMPLES {
            return Err(ShapeError::TooFewSamples {
                min: MIN_SAMPLES,
                got: ys.len(),
            });
        }
        let step = TWO_PI / ys.len() as f64;
        for (k, window) in xs.windows(2).enumerate() {
            if ((window[1] - window[0]) - step).abs() > 1e-6 * step {
                return Err(ShapeError::NonUniformSamples(format!(
                    "spacing {} at row {} differs from 2π/{}",
                    window[1] - window[0],
                    k + 1,
                    ys.len()
                )));
            }
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "samples".to_string());
        Self::from_samples(&name, xs[0], ys)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// True when values come from interpolated samples.
    pub fn is_sampled(&self) -> bool {
        matches!(self.source, Source::Sampled(_))
    }

    pub fn eval(&self, x: f64) -> f64 {
        let r = reduce(x);
        match &self.source {
            Source::Builtin(kind) => match kind {
                Builtin::NegSin => -r.sin(),
                Builtin::Sin => r.sin(),
                Builtin::Const => 1.0,
                Builtin::NegSinMix => -r.sin() - 0.05 * (2.0 * r).sin(),
                Builtin::CubicPeriodic => r * r * r - PI * PI * r,
                Builtin::Poly4Periodic => {
                    let q = r * r - PI * PI;
                    q * q
                }
                Builtin::CoconvexFamily => -0.5 * r.sin() - 0.01875 * (2.0 * r).sin(),
            },
            Source::Closure { f, .. } => f(r),
            Source::Sampled(samples) => samples.eval(r),
        }
    }

    /// Second derivative: closed form for builtins, central differences otherwise.
    pub fn second_derivative(&self, x: f64) -> f64 {
        let r = reduce(x);
        match &self.source {
            Source::Builtin(kind) => match kind {
                Builtin::NegSin => r.sin(),
                Builtin::Sin => -r.sin(),
                Builtin::Const => 0.0,
                Builtin::NegSinMix => r.sin() + 0.2 * (2.0 * r).sin(),
                Builtin::CubicPeriodic => 6.0 * r,
                Builtin::Poly4Periodic => 12.0 * r * r - 4.0 * PI * PI,
                Builtin::CoconvexFamily => 0.5 * r.sin() + 0.075 * (2.0 * r).sin(),
            },
            Source::Closure { f2: Some(f2), .. } => f2(r),
            Source::Closure { f, .. } => {
                let step = 1e-4;
                (f(reduce(x + step)) - 2.0 * f(r) + f(reduce(x - step))) / (step * step)
            }
            Source::Sampled(samples) => {
                let step = samples.step;
                (samples.eval(x + step) - 2.0 * samples.eval(x) + samples.eval(x - step))
                    / (step * step)
            }
        }
    }
}

/// Raw sign function ∏ sin((x − p)/2) over an arbitrary point list, times an
/// orientation of ±1. Points are not reduced, so replacing one point by a
/// nearby value keeps the sign pattern continuous.
#[derive(Clone, Debug, PartialEq)]
pub struct SignPattern {
    points: Vec<f64>,
    orientation: f64,
}

impl SignPattern {
    pub fn new(points: Vec<f64>, orientation: f64) -> Self {
        Self {
            points,
            orientation: orientation.signum(),
        }
    }

    /// The constant pattern Π ≡ 1.
    pub fn unit() -> Self {
        Self::new(Vec::new(), 1.0)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn orientation(&self) -> f64 {
        self.orientation
    }

    pub fn is_unit(&self) -> bool {
        self.points.is_empty()
    }

    pub fn value(&self, x: f64) -> f64 {
        self.points
            .iter()
            .fold(self.orientation, |acc, &p| acc * ((x - p) / 2.0).sin())
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let mut total = 0.0;
        for (i, &p) in self.points.iter().enumerate() {
            let mut term = 0.5 * ((x - p) / 2.0).cos();
            for (k, &q) in self.points.iter().enumerate() {
                if k != i {
                    term *= ((x - q) / 2.0).sin();
                }
            }
            total += term;
        }
        self.orientation * total
    }

    /// Copy with the point at `index` replaced by `point`.
    pub fn with_replaced(&self, index: usize, point: f64) -> Self {
        let mut points = self.points.clone();
        points[index] = point;
        Self::new(points, self.orientation)
    }
}

/// The 2s inflection points y_1 > … > y_2s in [−π, π).
#[derive(Clone, Debug, PartialEq)]
pub struct InflectionSet {
    pattern: SignPattern,
}

impl InflectionSet {
    /// Validates and sorts the points into decreasing order.
    pub fn new(mut points: Vec<f64>) -> Result<Self> {
        if points.is_empty() || !points.len().is_multiple_of(2) {
            return Err(ShapeError::OddInflectionCount(points.len()));
        }
        if let Some(&bad) = points
            .iter()
            .find(|p| !p.is_finite() || **p < -PI || **p >= PI)
        {
            return Err(ShapeError::PointOutOfRange(bad));
        }
        points.sort_by(|a, b| b.total_cmp(a));
        if let Some(w) = points.windows(2).find(|w| w[0] == w[1]) {
            return Err(ShapeError::DuplicatePoint(w[0]));
        }
        Ok(Self {
            pattern: SignPattern::new(points, 1.0),
        })
    }

    /// Parses a comma-separated list such as `"0,-3.14159"`.
    pub fn parse(list: &str) -> Result<Self> {
        let points = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| {
                    ShapeError::InvalidArgument(format!("inflection point '{s}': {e}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }

    pub fn s(&self) -> usize {
        self.pattern.points.len() / 2
    }

    pub fn points(&self) -> &[f64] {
        &self.pattern.points
    }

    pub fn pattern(&self) -> &SignPattern {
        &self.pattern
    }

    /// y_i for any integer i (1-based), using y_i = y_{i+2s} + 2π.
    pub fn point(&self, i: i64) -> f64 {
        let count = self.pattern.points.len() as i64;
        let k = (i - 1).rem_euclid(count);
        let wraps = (i - 1).div_euclid(count);
        self.pattern.points[k as usize] - TWO_PI * wraps as f64
    }

    /// Π(x, Y); positive on (y_1, y_0) for an unrotated set.
    pub fn pi(&self, x: f64) -> f64 {
        self.pattern.value(x)
    }

    pub fn pi_derivative(&self, x: f64) -> f64 {
        self.pattern.derivative(x)
    }

    /// The set seen in coordinates x′ = x − shift, oriented so that the
    /// rotated Π at x′ equals the original Π at x′ + shift.
    pub fn rotated(&self, shift: f64) -> Self {
        let mut flips = 0;
        let mut points: Vec<f64> = self
            .pattern
            .points
            .iter()
            .map(|&p| {
                let raw = p - shift;
                let r = reduce(raw);
                let wraps = ((raw - r) / TWO_PI).round() as i64;
                flips += wraps.unsigned_abs();
                r
            })
            .collect();
        points.sort_by(|a, b| b.total_cmp(a));
        let orientation = self.pattern.orientation * if flips % 2 == 0 { 1.0 } else { -1.0 };
        Self {
            pattern: SignPattern::new(points, orientation),
        }
    }
}

/// Uniform knots x_j = −jπ/n.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DyadicGrid {
    n: usize,
}

impl DyadicGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(ShapeError::InvalidArgument("n must be positive".into()));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        PI / self.n as f64
    }

    pub fn knot(&self, j: i64) -> f64 {
        -PI * (j as f64 / self.n as f64)
    }

    /// I_j = [x_j, x_{j−1}].
    pub fn interval(&self, j: i64) -> (f64, f64) {
        (self.knot(j), self.knot(j - 1))
    }

    /// The index j with y ∈ [x_j, x_{j−1}).
    pub fn index_of(&self, y: f64) -> i64 {
        let v = -y / self.h();
        let nearest = v.round();
        if (v - nearest).abs() < 1e-9 {
            nearest as i64
        } else {
            v.ceil() as i64
        }
    }
}

/// Neighborhoods O_{i,m} = (x_{j_i+m+1}, x_{j_i−m}) and the surviving set H_m.
#[derive(Clone, Debug)]
pub struct NeighborhoodIndex {
    grid: DyadicGrid,
    m: i64,
    points: Vec<f64>,
    anchors: Vec<i64>,
}

impl NeighborhoodIndex {
    /// Neighborhoods of an arbitrary point list (periodic copies included).
    pub fn from_points(points: &[f64], grid: DyadicGrid, m: usize) -> Self {
        let anchors = points.iter().map(|&y| grid.index_of(y)).collect();
        Self {
            grid,
            m: m as i64,
            points: points.to_vec(),
            anchors,
        }
    }

    pub fn grid(&self) -> DyadicGrid {
        self.grid
    }

    pub fn m(&self) -> usize {
        self.m as usize
    }

    /// j_i for the i-th point (0-based).
    pub fn anchor(&self, i: usize) -> i64 {
        self.anchors[i]
    }

    pub fn point(&self, i: usize) -> f64 {
        self.points[i]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Endpoints of O_{i,m} (0-based i).
    pub fn interval(&self, i: usize) -> (f64, f64) {
        let j = self.anchors[i];
        (self.grid.knot(j + self.m + 1), self.grid.knot(j - self.m))
    }

    /// The neighborhood (0-based) whose periodic copy contains knot x_j.
    pub fn containing_index(&self, j: i64) -> Option<usize> {
        let period = 2 * self.grid.n() as i64;
        self.anchors.iter().position(|&a| {
            // x_j inside (x_{a+m+1}, x_{a−m}) ⟺ a − m < j < a + m + 1, modulo 2n
            let lo = a - self.m;
            let shift = (j - lo).rem_euclid(period);
            shift > 0 && shift < 2 * self.m + 1
        })
    }

    /// The neighborhood (0-based) whose periodic copy contains the point x.
    pub fn containing_point(&self, x: f64) -> Option<usize> {
        (0..self.anchors.len()).find(|&i| {
            let (lo, hi) = self.interval(i);
            let shifted = lo + (x - lo).rem_euclid(TWO_PI);
            shifted > lo && shifted < hi
        })
    }

    pub fn in_h(&self, j: i64) -> bool {
        self.containing_index(j).is_none()
    }

    /// H_m restricted to |j| ≤ n, increasing.
    pub fn h_set(&self) -> Vec<i64> {
        let n = self.grid.n() as i64;
        (-n..=n).filter(|&j| self.in_h(j)).collect()
    }
}

/// O and H sets of an inflection set on a grid.
pub fn build_neighborhoods(y: &InflectionSet, grid: DyadicGrid, m: usize) -> NeighborhoodIndex {
    NeighborhoodIndex::from_points(y.points(), grid, m)
}

/// True when the open neighborhoods O_{i,m} of the points are pairwise
/// disjoint over one period at level n.
pub fn neighborhoods_disjoint(points: &[f64], n: usize, m: usize) -> bool {
    let grid = DyadicGrid { n };
    let mut anchors: Vec<i64> = points.iter().map(|&y| grid.index_of(reduce(y))).collect();
    anchors.sort_unstable();
    let gap = 2 * m as i64 + 1;
    let period = 2 * n as i64;
    let inner = anchors.windows(2).all(|w| w[1] - w[0] >= gap);
    let wrap = match (anchors.first(), anchors.last()) {
        (Some(first), Some(last)) => first + period - last >= gap,
        _ => true,
    };
    inner && wrap
}

/// Smallest n for which all O_{i,m} are pairwise disjoint.
pub fn min_n_for_points(points: &[f64], m: usize) -> usize {
    (1..)
        .find(|&n| neighborhoods_disjoint(points, n, m))
        .unwrap_or(usize::MAX)
}

/// Smallest n for which all O_{i,m} of Y are pairwise disjoint.
pub fn min_n_for(y: &InflectionSet, m: usize) -> usize {
    min_n_for_points(y.points(), m)
}

/// Rotation (in units of h) moving the inflection points away from ±π.
///
/// Returns 0 when the current margin already reaches min(31h, best achievable).
pub fn alignment_shift(y: &InflectionSet, grid: DyadicGrid) -> i64 {
    let n = grid.n() as i64;
    let h = grid.h();
    let margin = |k: i64| {
        y.points()
            .iter()
            .map(|&p| PI - reduce(p - k as f64 * h).abs())
            .fold(f64::INFINITY, f64::min)
    };
    let mut best = (0, margin(0));
    for step in 1..=n {
        for k in [step, -step] {
            let value = margin(k);
            if value > best.1 + 1e-12 {
                best = (k, value);
            }
        }
    }
    let wanted = (31.0 * h).min(best.1);
    if margin(0) >= wanted - 1e-12 {
        0
    } else {
        best.0
    }
}

/// Γ_j(x) = min{1, 1/(n|sin((x − x_j − h/2)/2)|)}.
pub fn gamma(j: i64, n: usize, x: f64) -> f64 {
    let h = PI / n as f64;
    let center = -(j as f64) * h + h / 2.0;
    let s = ((x - center) / 2.0).sin().abs() * n as f64;
    if s <= 1.0 {
        1.0
    } else {
        1.0 / s
    }
}

/// χ(x, a): 1 for x > a, 0 otherwise.
pub fn chi(x: f64, a: f64) -> f64 {
    if x > a {
        1.0
    } else {
        0.0
    }
}

/// (x − a)₊^k.
pub fn truncated_power(x: f64, a: f64, k: i32) -> f64 {
    if x > a {
        (x - a).powi(k)
    } else {
        0.0
    }
}

/// Newton divided difference [x_0, …, x_k; f] from the table of values.
pub fn newton_divided_difference(xs: &[f64], ys: &[f64]) -> f64 {
    let mut column = ys.to_vec();
    for level in 1..xs.len() {
        for i in 0..xs.len() - level {
            column[i] = (column[i + 1] - column[i]) / (xs[i + level] - xs[i]);
        }
    }
    column[0]
}

/// Knot values and the divided differences F_j (j = 2−n..n) and Φ_j (j = 3−n..n−1).
#[derive(Clone, Debug)]
pub struct DividedDifferences {
    grid: DyadicGrid,
    values: Vec<f64>,
    second: Vec<f64>,
    fourth: Vec<f64>,
}

impl DividedDifferences {
    pub fn grid(&self) -> DyadicGrid {
        self.grid
    }

    /// f(x_j) for |j| ≤ n.
    pub fn value(&self, j: i64) -> f64 {
        self.values[(j + self.grid.n() as i64) as usize]
    }

    /// F_j = [x_j, x_{j−1}, x_{j−2}; f].
    pub fn second(&self, j: i64) -> f64 {
        self.second[(j - (2 - self.grid.n() as i64)) as usize]
    }

    /// Φ_j = [x_{j+1}, …, x_{j−3}; f].
    pub fn fourth(&self, j: i64) -> f64 {
        self.fourth[(j - (3 - self.grid.n() as i64)) as usize]
    }

    pub fn second_range(&self) -> std::ops::RangeInclusive<i64> {
        let n = self.grid.n() as i64;
        2 - n..=n
    }

    pub fn fourth_range(&self) -> std::ops::RangeInclusive<i64> {
        let n = self.grid.n() as i64;
        3 - n..=n - 1
    }
}

/// Divided differences of f on the knots of `grid`.
pub fn divided_differences<F: Fn(f64) -> f64>(f: F, grid: DyadicGrid) -> DividedDifferences {
    let n = grid.n() as i64;
    let values: Vec<f64> = (-n..=n).map(|j| f(grid.knot(j))).collect();
    let at = |j: i64| values[(j + n) as usize];
    let second = (2 - n..=n)
        .map(|j| {
            let xs = [grid.knot(j), grid.knot(j - 1), grid.knot(j - 2)];
            newton_divided_difference(&xs, &[at(j), at(j - 1), at(j - 2)])
        })
        .collect();
    let fourth = (3 - n..=n - 1)
        .map(|j| {
            let idx = [j + 1, j, j - 1, j - 2, j - 3];
            let xs = idx.map(|k| grid.knot(k));
            let ys = idx.map(at);
            newton_divided_difference(&xs, &ys)
        })
        .collect();
    DividedDifferences {
        grid,
        values,
        second,
        fourth,
    }
}

/// Cubic polynomial in Newton form through four nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicInterpolant {
    nodes: [f64; 4],
    coeffs: [f64; 4],
}

impl CubicInterpolant {
    pub fn through(nodes: [f64; 4], values: [f64; 4]) -> Self {
        let coeffs = [
            values[0],
            newton_divided_difference(&nodes[..2], &values[..2]),
            newton_divided_difference(&nodes[..3], &values[..3]),
            newton_divided_difference(&nodes, &values),
        ];
        Self { nodes, coeffs }
    }

    pub fn nodes(&self) -> [f64; 4] {
        self.nodes
    }

    pub fn coeffs(&self) -> [f64; 4] {
        self.coeffs
    }

    pub fn value(&self, x: f64) -> f64 {
        let [c0, c1, c2, c3] = self.coeffs;
        let [x0, x1, x2, _] = self.nodes;
        c0 + (x - x0) * (c1 + (x - x1) * (c2 + (x - x2) * c3))
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let [_, c1, c2, c3] = self.coeffs;
        let [x0, x1, x2, _] = self.nodes;
        let (u0, u1, u2) = (x - x0, x - x1, x - x2);
        c1 + c2 * (u0 + u1) + c3 * (u0 * u1 + u0 * u2 + u1 * u2)
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        let [_, _, c2, c3] = self.coeffs;
        let [x0, x1, x2, _] = self.nodes;
        2.0 * c2 + 2.0 * c3 * ((x - x0) + (x - x1) + (x - x2))
    }
}

/// L_3 through a, a+(b−a)/3, b−(b−a)/3, b.
pub fn cubic_on<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<CubicInterpolant> {
    if a.is_nan() || b.is_nan() || a >= b {
        return Err(ShapeError::InvalidArgument(format!(
            "interpolation interval [{a}, {b}] is empty"
        )));
    }
    let third = (b - a) / 3.0;
    let nodes = [a, a + third, b - third, b];
    Ok(CubicInterpolant::through(nodes, nodes.map(f)))
}

/// Value at x of the cubic interpolating f at four equispaced nodes of [a, b].
pub fn lagrange_cubic<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, x: f64) -> Result<f64> {
    Ok(cubic_on(f, a, b)?.value(x))
}

/// Search grid for moduli of smoothness.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModulusSearch {
    /// Points per period for the position x.
    pub points_per_period: usize,
    /// Number of step sizes δ in (0, t].
    pub steps: usize,
}

impl Default for ModulusSearch {
    fn default() -> Self {
        Self {
            points_per_period: 1 << 14,
            steps: 64,
        }
    }
}

fn binomials(k: usize) -> Vec<f64> {
    let mut row = vec![1.0; k + 1];
    for m in 1..k {
        row[m] = row[m - 1] * (k - m + 1) as f64 / m as f64;
    }
    row
}

/// k-th forward difference Δ_δ^k f(x).
pub fn forward_difference<F: Fn(f64) -> f64>(f: &F, k: usize, delta: f64, x: f64) -> f64 {
    let coeffs = binomials(k);
    coeffs
        .iter()
        .enumerate()
        .map(|(m, c)| {
            let sign = if (k - m).is_multiple_of(2) { 1.0 } else { -1.0 };
            sign * c * f(x + m as f64 * delta)
        })
        .sum()
}

/// ω_k(f, t) over a full period, or over `interval` when given
/// (then x and x + kδ must both lie in it). Approximate from below.
pub fn modulus<F>(
    f: &F,
    k: usize,
    t: f64,
    interval: Option<(f64, f64)>,
    search: ModulusSearch,
) -> Result<f64>
where
    F: Fn(f64) -> f64 + Sync,
{
    if k == 0 {
        return Err(ShapeError::InvalidArgument(
            "modulus order must be ≥ 1".into(),
        ));
    }
    if t.is_nan() || t < 0.0 {
        return Err(ShapeError::InvalidArgument(format!(
            "modulus step {t} is negative"
        )));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let steps = search.steps.max(1);
    let per_period = search.points_per_period.max(8);
    let best = (1..=steps)
        .into_par_iter()
        .map(|q| {
            let delta = t * q as f64 / steps as f64;
            let (start, len) = match interval {
                None => (-PI, TWO_PI),
                Some((a, b)) => (a, b - a - k as f64 * delta),
            };
            if len < 0.0 {
                return 0.0;
            }
            let count = match interval {
                None => per_period,
                Some(_) => ((per_period as f64 * len / TWO_PI).ceil() as usize).max(2) + 1,
            };
            let spacing = match interval {
                None => TWO_PI / count as f64,
                Some(_) => len / (count - 1) as f64,
            };
            (0..count)
                .map(|i| forward_difference(f, k, delta, start + i as f64 * spacing).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn standard_set() -> InflectionSet {
        InflectionSet::new(vec![0.0, -PI]).unwrap()
    }

    #[test]
    fn pi_collapses_to_half_sine() {
        let y = standard_set();
        assert_relative_eq!(y.pi(PI / 2.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(y.pi(-PI / 2.0), -0.5, epsilon = 1e-15);
        assert_eq!(y.pi(y.points()[0]), 0.0);
        for k in 0..50 {
            let x = -3.0 + 0.13 * k as f64;
            assert_relative_eq!(y.pi(x), x.sin() / 2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn pi_derivative_matches_difference_quotient() {
        let y = InflectionSet::new(vec![2.0, 0.3, -1.0, -2.5]).unwrap();
        for k in 0..20 {
            let x = -3.0 + 0.31 * k as f64;
            let step = 1e-6;
            let numeric = (y.pi(x + step) - y.pi(x - step)) / (2.0 * step);
            assert_relative_eq!(y.pi_derivative(x), numeric, epsilon = 1e-8);
        }
    }

    #[test]
    fn sign_alternates_between_points() {
        let y = InflectionSet::new(vec![2.0, 0.3, -1.0, -2.5]).unwrap();
        let mids = [(2.0 + PI) / 2.0, 1.15, -0.35, -1.75, (-2.5 - PI) / 2.0];
        for (i, x) in mids.iter().enumerate() {
            let expected = if i % 2 == 0 { 1.0 } else { -1.0 };
            assert_eq!(y.pi(*x).signum(), expected, "segment {i}");
        }
    }

    #[test]
    fn rotation_preserves_pi() {
        let y = InflectionSet::new(vec![2.0, 0.3, -1.0, -2.5]).unwrap();
        for shift in [0.7, -2.9, 3.5] {
            let r = y.rotated(shift);
            for k in 0..30 {
                let x = -3.0 + 0.2 * k as f64;
                assert_relative_eq!(r.pi(x), y.pi(x + shift), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn inflection_validation() {
        assert!(matches!(
            InflectionSet::new(vec![0.0]),
            Err(ShapeError::OddInflectionCount(1))
        ));
        assert!(matches!(
            InflectionSet::new(vec![0.0, PI]),
            Err(ShapeError::PointOutOfRange(_))
        ));
        assert!(InflectionSet::new(vec![0.5, 0.5]).is_err());
        let y = InflectionSet::parse("-1, 1").unwrap();
        assert_eq!(y.points(), &[1.0, -1.0]);
        assert_relative_eq!(y.point(3), 1.0 - TWO_PI);
        assert_relative_eq!(y.point(0), -1.0 + TWO_PI);
    }

    #[test]
    fn grid_knots_and_index() {
        let g = DyadicGrid::new(64).unwrap();
        assert_eq!(g.knot(64), -PI);
        assert_eq!(g.knot(-64), PI);
        assert_relative_eq!(g.knot(4) - g.knot(5), g.h(), epsilon = 1e-15);
        assert_eq!(g.index_of(0.0), 0);
        assert_eq!(g.index_of(-PI), 64);
        assert_eq!(g.index_of(0.5 * g.h()), 0);
        assert_eq!(g.index_of(-0.5 * g.h()), 1);
    }

    #[test]
    fn neighborhood_example() {
        let g = DyadicGrid::new(64).unwrap();
        let nb = build_neighborhoods(&standard_set(), g, 3);
        assert_eq!(nb.anchor(0), 0);
        let (lo, hi) = nb.interval(0);
        assert_relative_eq!(lo, -4.0 * g.h(), epsilon = 1e-14);
        assert_relative_eq!(hi, 3.0 * g.h(), epsilon = 1e-14);
        assert!(nb.in_h(-32));
        assert!(!nb.in_h(3));
        assert!(nb.in_h(-3));
        assert!(!nb.in_h(-2));
        // O around −π wraps to π
        assert!(!nb.in_h(-61));
        assert!(nb.in_h(-60));
        assert_eq!(nb.containing_point(PI - 0.5 * g.h()), Some(1));
    }

    #[test]
    fn larger_m_removes_more_indices() {
        let g = DyadicGrid::new(128).unwrap();
        let y = standard_set();
        let mut previous = usize::MAX;
        for m in [1, 2, 3, 10, 20, 30] {
            let count = build_neighborhoods(&y, g, m).h_set().len();
            assert!(count <= previous);
            previous = count;
        }
    }

    #[test]
    fn min_n_brute_force_oracle() {
        let y = standard_set();
        // brute force: pairwise interval intersection over shifted copies
        let disjoint = |n: usize| {
            let g = DyadicGrid::new(n).unwrap();
            let nb = build_neighborhoods(&y, g, 30);
            let (a0, b0) = nb.interval(0);
            let (a1, b1) = nb.interval(1);
            [-TWO_PI, 0.0, TWO_PI]
                .iter()
                .all(|s| b1 + s <= a0 + 1e-9 || a1 + s >= b0 - 1e-9)
        };
        let oracle = (1..).find(|&n| disjoint(n)).unwrap();
        assert_eq!(oracle, 61);
        assert_eq!(min_n_for(&y, 30), 61);
    }

    #[test]
    fn min_n_gap_bound() {
        for points in [vec![1.0, 0.9], vec![2.0, 0.0, -0.4, -2.0], vec![0.1, -0.2]] {
            let y = InflectionSet::new(points.clone()).unwrap();
            let mut sorted = y.points().to_vec();
            sorted.push(sorted[0] - TWO_PI);
            let gap = sorted
                .windows(2)
                .map(|w| w[0] - w[1])
                .fold(f64::INFINITY, f64::min);
            let bound = (62.0 * PI / gap).ceil() as usize;
            assert!(min_n_for(&y, 30) <= bound);
        }
    }

    #[test]
    fn gamma_examples() {
        let n = 16;
        let h = PI / n as f64;
        let j = 3;
        let xj = -(j as f64) * h;
        assert_eq!(gamma(j, n, xj + h / 2.0), 1.0);
        assert_relative_eq!(
            gamma(j, n, xj + h / 2.0 + PI),
            1.0 / n as f64,
            epsilon = 1e-14
        );
    }

    #[test]
    fn chi_and_powers() {
        assert_eq!(chi(0.0, 0.0), 0.0);
        assert_eq!(chi(1e-300, 0.0), 1.0);
        assert_eq!(truncated_power(1.0, 0.0, 3), 1.0);
        assert_eq!(truncated_power(-1.0, 0.0, 3), 0.0);
    }

    #[test]
    fn divided_difference_examples() {
        let g = DyadicGrid::new(16).unwrap();
        let quad = divided_differences(|x| x * x, g);
        for j in quad.second_range() {
            assert_relative_eq!(quad.second(j), 1.0, epsilon = 1e-12);
        }
        let cubic = divided_differences(|x| x * x * x, g);
        let quartic = divided_differences(|x| x.powi(4), g);
        for j in cubic.fourth_range() {
            assert!(cubic.fourth(j).abs() < 1e-9);
            assert_relative_eq!(quartic.fourth(j), 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn fourth_difference_identity() {
        let g = DyadicGrid::new(32).unwrap();
        let f = PeriodicFunction::builtin("neg-sin-mix").unwrap();
        let dd = divided_differences(|x| f.eval(x), g);
        let h = g.h();
        for j in dd.fourth_range() {
            let lhs = dd.fourth(j) * 4.0 * h;
            let rhs = (dd.second(j + 1) - dd.second(j)) / (3.0 * h)
                - (dd.second(j) - dd.second(j - 1)) / (3.0 * h);
            assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1e-3), "j = {j}");
        }
    }

    #[test]
    fn cubic_interpolation_is_exact_on_cubics() {
        let p = |x: f64| 2.0 - x + 0.5 * x * x - 0.25 * x * x * x;
        let c = cubic_on(p, -1.0, 2.0).unwrap();
        for k in 0..20 {
            let x = -1.0 + 0.15 * k as f64;
            assert_relative_eq!(c.value(x), p(x), epsilon = 1e-12);
            assert_relative_eq!(c.derivative(x), -1.0 + x - 0.75 * x * x, epsilon = 1e-12);
            assert_relative_eq!(c.second_derivative(x), 1.0 - 1.5 * x, epsilon = 1e-12);
        }
        assert_eq!(lagrange_cubic(p, -1.0, 2.0, -1.0).unwrap(), p(-1.0));
        assert!(lagrange_cubic(p, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn whitney_bound_for_sine() {
        let (a, b) = (0.0, 1.0);
        let c = cubic_on(f64::sin, a, b).unwrap();
        let err = (0..=2000)
            .map(|k| {
                let x = a + (b - a) * k as f64 / 2000.0;
                (x.sin() - c.value(x)).abs()
            })
            .fold(0.0, f64::max);
        let w = modulus(
            &f64::sin,
            4,
            (b - a) / 4.0,
            Some((a, b)),
            ModulusSearch::default(),
        )
        .unwrap();
        assert!(err <= 1.05 * w, "err {err} vs ω4 {w}");
    }

    #[test]
    fn modulus_of_sine_matches_closed_form() {
        let w = modulus(&f64::sin, 4, PI / 4.0, None, ModulusSearch::default()).unwrap();
        assert_relative_eq!(w, (2.0 * (PI / 8.0).sin()).powi(4), max_relative = 1e-6);
        assert_relative_eq!(w, 0.34315, epsilon = 1e-5);
    }

    #[test]
    fn modulus_edge_cases() {
        assert_eq!(
            modulus(&|_| 3.0, 4, 1.0, None, ModulusSearch::default()).unwrap(),
            0.0
        );
        assert!(modulus(&f64::sin, 4, -1.0, None, ModulusSearch::default()).is_err());
        let cubic = |x: f64| x * x * x - x;
        let w = modulus(&cubic, 4, 0.5, Some((-1.0, 1.0)), ModulusSearch::default()).unwrap();
        assert!(w < 1e-12);
    }

    #[test]
    fn builtins_are_periodic() {
        for name in PeriodicFunction::BUILTINS {
            let f = PeriodicFunction::builtin(name).unwrap();
            for k in 0..40 {
                let x = -7.0 + 0.37 * k as f64;
                assert!(
                    (f.eval(x + TWO_PI) - f.eval(x)).abs() < 1e-9,
                    "{name} at {x}"
                );
            }
        }
        assert!(PeriodicFunction::builtin("nope").is_err());
    }

    #[test]
    fn builtin_second_derivatives_match_differences() {
        for name in PeriodicFunction::BUILTINS {
            let f = PeriodicFunction::builtin(name).unwrap();
            for k in 0..25 {
                let x = -2.9 + 0.23 * k as f64;
                let step = 1e-4;
                let numeric =
                    (f.eval(x + step) - 2.0 * f.eval(x) + f.eval(x - step)) / (step * step);
                assert!(
                    (f.second_derivative(x) - numeric).abs() < 1e-5,
                    "{name} at {x}"
                );
            }
        }
    }

    #[test]
    fn sampled_functions() {
        assert!(matches!(
            PeriodicFunction::from_samples("few", -PI, vec![0.0; 10]),
            Err(ShapeError::TooFewSamples { .. })
        ));
        let count = 256;
        let values = (0..count)
            .map(|k| (-PI + TWO_PI * k as f64 / count as f64).cos())
            .collect();
        let f = PeriodicFunction::from_samples("cos", -PI, values).unwrap();
        assert!(f.is_sampled());
        for k in 0..50 {
            let x = -9.0 + 0.41 * k as f64;
            assert!((f.eval(x) - x.cos()).abs() < 1e-6);
        }
    }

    #[test]
    fn csv_ingestion() {
        use std::io::Write;
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "x,f").unwrap();
        let count = 128;
        for k in 0..count {
            let x = -PI + TWO_PI * k as f64 / count as f64;
            writeln!(file, "{x},{}", x.sin()).unwrap();
        }
        file.flush().unwrap();
        let f = PeriodicFunction::from_csv(file.path()).unwrap();
        assert!((f.eval(1.0) - 1.0f64.sin()).abs() < 1e-5);
    }

    #[test]
    fn alignment_moves_points_off_the_boundary() {
        let g = DyadicGrid::new(16).unwrap();
        let k = alignment_shift(&standard_set(), g);
        assert_eq!(k.abs(), 8);
        let centered = InflectionSet::new(vec![PI / 2.0, -PI / 2.0]).unwrap();
        assert_eq!(alignment_shift(&centered, g), 0);
    }
}
