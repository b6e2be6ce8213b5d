//! The nearly coconvex trigonometric approximant assembled from smoothed
//! spline pieces on two refined levels.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapeError};
use crate::kernels::{
    affine_weight, CorrectionBasis, FineGrid, KernelParams, NodeFunction, NodeSeries, StepBuilder,
    StepExtras, StepTable, DEFAULT_NODES_PER_PERIOD,
};
use crate::periodic::{
    build_neighborhoods, gamma, modulus, DyadicGrid, InflectionSet, ModulusSearch,
    PeriodicFunction, SignPattern,
};
use crate::spline::{build_spline, displaced_pattern, min_level, Anchor, PsiPiece, SplineModel};

/// Refinement of the base level n into n₁ = 2m₁n and n₂ = 2m₂n₁.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    /// Minimum fine-grid nodes per period.
    pub nodes_per_period: usize,
}

impl LevelConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            m1: 2,
            m2: 4,
            nodes_per_period: DEFAULT_NODES_PER_PERIOD,
        }
    }

    pub fn with_multipliers(self, m1: usize, m2: usize) -> Self {
        Self { m1, m2, ..self }
    }

    pub fn n1(&self) -> usize {
        2 * self.m1 * self.n
    }

    pub fn n2(&self) -> usize {
        2 * self.m2 * self.n1()
    }

    pub fn h(&self) -> f64 {
        PI / self.n as f64
    }

    pub fn h1(&self) -> f64 {
        PI / self.n1() as f64
    }

    pub fn h2(&self) -> f64 {
        PI / self.n2() as f64
    }

    /// Exponent of the level-n₁ steps for s pairs of inflection points.
    pub fn b1(s: usize) -> u32 {
        (s + 2) as u32
    }

    /// Exponent of the level-n₂ steps.
    pub fn b2(s: usize) -> u32 {
        (3 * (s + 1)) as u32
    }

    /// Level-n₁ index of the level-n knot x_j.
    pub fn fine_index(&self, j: i64) -> i64 {
        j * (2 * self.m1) as i64
    }

    /// Level-n₂ index of the level-n₁ knot with index k.
    pub fn finest_index(&self, k: i64) -> i64 {
        k * (2 * self.m2) as i64
    }

    fn validate(&self) -> Result<()> {
        if self.m1 == 0 || self.m2 == 0 {
            return Err(ShapeError::InvalidArgument(
                "level multipliers must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Sign pattern used for one index: Y itself or Y with point i displaced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum PatternKey {
    Main,
    Displaced(usize),
}

/// A mixing weight that left [0, 1] and was clamped.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClampEvent {
    pub j: i64,
    pub anchor: Anchor,
    pub parameter: &'static str,
    pub raw: f64,
}

/// Solved parameters and diagnostics for one (j, ν).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PieceRecord {
    pub j: i64,
    pub anchor: Anchor,
    pub pattern: PatternKey,
    /// α for the outer anchors, the bump height κ for the middle one.
    pub weight: f64,
    pub beta: f64,
    pub phi_residual: f64,
    pub psi_residual: f64,
    /// Samples where (ψ″ − Ψ″)Π(x)Π(x_j) has the wrong sign.
    pub comparison_violations: usize,
    /// max |Ψ − ψ| / h³ on one period.
    pub closeness: f64,
    /// max |Ψ − ψ| / (h³Γ⁶) on one period.
    pub weighted_closeness: f64,
}

/// φ, ψ and ψ″ tables for one (j, ν).
#[derive(Clone, Debug)]
pub struct SmoothPiece {
    pub record: PieceRecord,
    pub clamps: Vec<ClampEvent>,
    pub phi: NodeSeries,
    /// ψ with ψ′ as slopes.
    pub psi: NodeSeries,
    pub second: Vec<f64>,
}

/// t′ viewed as a node function (slope given by the stored curvature).
struct Density<'a>(&'a StepTable);

impl NodeFunction for Density<'_> {
    fn grid(&self) -> FineGrid {
        self.0.grid()
    }
    fn value(&self, node: i64) -> f64 {
        self.0.slope(node)
    }
    fn slope(&self, node: i64) -> f64 {
        self.0.curvature(node)
    }
}

pub fn phi_target(anchor: Anchor, h: f64) -> f64 {
    match anchor {
        Anchor::Middle => 3.0 * PI * PI - h * h / 2.0,
        _ => 3.0 * (PI + h) * (PI - h),
    }
}

pub fn psi_target(h: f64) -> f64 {
    (PI + h) * PI * (PI - h)
}

/// ĥ weight of the step terms in ψ.
pub fn psi_step_weight(anchor: Anchor, h: f64) -> f64 {
    match anchor {
        Anchor::Middle => -h * h / 4.0,
        _ => h * h,
    }
}

/// Secular quartic part of ψ_{j,ν} for d = d_j.
pub fn secular_quartic(d: f64, h: f64, x: f64) -> f64 {
    let h2 = h * h;
    x.powi(4) / (8.0 * PI)
        + (PI - d) * x.powi(3) / (2.0 * PI)
        + (3.0 * d * d - 6.0 * PI * d + 2.0 * PI * PI - h2) * x * x / (4.0 * PI)
        + (PI - d) * (d * d - 2.0 * PI * d - h2) * x / (2.0 * PI)
}

/// Shared state for building smoothed pieces at one configuration.
pub struct PolyContext {
    config: LevelConfig,
    level: DyadicGrid,
    grid: FineGrid,
    builder: StepBuilder,
    local: InflectionSet,
    b1: u32,
    b2: u32,
    main: CorrectionBasis,
    displaced: Vec<Option<(SignPattern, CorrectionBasis)>>,
}

impl std::fmt::Debug for PolyContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PolyContext")
            .field("config", &self.config)
            .field("grid", &self.grid)
            .finish()
    }
}

impl PolyContext {
    /// Builds the correction bases for `local` and for the displaced sets
    /// listed in `displaced`.
    pub fn new(config: LevelConfig, local: &InflectionSet, displaced: &[usize]) -> Result<Self> {
        config.validate()?;
        let level = DyadicGrid::new(config.n)?;
        let grid = FineGrid::new(config.n, config.n2(), config.nodes_per_period)?;
        let builder = StepBuilder::new(grid);
        let b1 = LevelConfig::b1(local.s());
        let b2 = LevelConfig::b2(local.s());
        let main = CorrectionBasis::new(&builder, local.pattern(), config.n2(), b2)?;
        let mut bases = Vec::with_capacity(local.points().len());
        for i in 0..local.points().len() {
            if displaced.contains(&i) {
                let pattern = displaced_pattern(local, level, i);
                let basis = CorrectionBasis::new(&builder, &pattern, config.n2(), b2)?;
                bases.push(Some((pattern, basis)));
            } else {
                bases.push(None);
            }
        }
        Ok(Self {
            config,
            level,
            grid,
            builder,
            local: local.clone(),
            b1,
            b2,
            main,
            displaced: bases,
        })
    }

    pub fn config(&self) -> LevelConfig {
        self.config
    }

    pub fn grid(&self) -> FineGrid {
        self.grid
    }

    fn resolve(&self, key: PatternKey) -> Result<(&SignPattern, &CorrectionBasis)> {
        match key {
            PatternKey::Main => Ok((self.local.pattern(), &self.main)),
            PatternKey::Displaced(i) => self
                .displaced
                .get(i)
                .and_then(|e| e.as_ref())
                .map(|(p, b)| (p, b))
                .ok_or_else(|| {
                    ShapeError::InvalidArgument(format!("no basis for displaced point {i}"))
                }),
        }
    }

    fn plain(
        &self,
        pattern: &SignPattern,
        n: usize,
        b: u32,
        j: i64,
        curvature: bool,
    ) -> Result<StepTable> {
        let params = KernelParams {
            n,
            b,
            pattern: pattern.clone(),
        };
        self.builder.build(
            j,
            &params,
            StepExtras {
                curvature,
                integrals: false,
            },
        )
    }

    /// Builds φ_{j,ν} and ψ_{j,ν} with their normalizations solved.
    pub fn piece(&self, j: i64, anchor: Anchor, key: PatternKey) -> Result<SmoothPiece> {
        let cfg = self.config;
        let grid = self.grid;
        let h = cfg.h();
        let (pattern, basis) = self.resolve(key)?;
        let d_node = grid.knot_node(j - 1, cfg.n);
        let (lo, hi) = (d_node - grid.period() / 2, d_node + grid.period() / 2);
        let k = cfg.fine_index(j - anchor.offset());
        let star = cfg.finest_index(k);
        let mut clamps = Vec::new();
        let mut clamp = |parameter: &'static str, raw: f64| {
            if (0.0..=1.0).contains(&raw) {
                raw
            } else {
                clamps.push(ClampEvent {
                    j,
                    anchor,
                    parameter,
                    raw,
                });
                raw.clamp(0.0, 1.0)
            }
        };
        let degenerate = |value: f64| ShapeError::DegenerateDenominator { index: j, value };

        let phi_goal = phi_target(anchor, h) / 6.0;
        let mut integrand = NodeSeries::zeros(grid);
        let weight = match anchor {
            Anchor::Middle => {
                let tau = NodeSeries::from_fn(&basis.tau_tilde(star)?);
                let plus = NodeSeries::from_fn(&basis.t_tilde(cfg.finest_index(k + 1)));
                let minus = NodeSeries::from_fn(&basis.t_tilde(cfg.finest_index(k - 1)));
                let far_plus =
                    self.plain(pattern, cfg.n2(), self.b2, cfg.finest_index(k + 5), true)?;
                let far_minus =
                    self.plain(pattern, cfg.n2(), self.b2, cfg.finest_index(k - 5), true)?;
                let mass = 0.5
                    * (far_plus.value(hi) - far_plus.value(lo) + far_minus.value(hi)
                        - far_minus.value(lo));
                let it = tau.window_integral(lo, hi);
                let bump = plus.window_integral(lo, hi) - minus.window_integral(lo, hi);
                if bump == 0.0 || !bump.is_finite() {
                    return Err(degenerate(bump));
                }
                // compactly supported lever: a bump between the two neighbors
                let kappa = (phi_goal + h * h / 12.0 * mass - it) / bump;
                integrand.add_scaled(1.0, &tau);
                integrand.add_scaled(kappa, &plus);
                integrand.add_scaled(-kappa, &minus);
                integrand.add_scaled(-h * h / 24.0, &Density(&far_plus));
                integrand.add_scaled(-h * h / 24.0, &Density(&far_minus));
                kappa
            }
            _ => {
                let shift = if anchor == Anchor::Left { -h } else { h };
                let tau = NodeSeries::from_fn(&basis.tau_tilde(star)?);
                let plus = NodeSeries::from_fn(&basis.t_tilde(cfg.finest_index(k + 1)));
                let minus = NodeSeries::from_fn(&basis.t_tilde(cfg.finest_index(k - 1)));
                let it = tau.window_integral(lo, hi);
                let (ip, im) = (plus.window_integral(lo, hi), minus.window_integral(lo, hi));
                let alpha = affine_weight((phi_goal - it) / shift, ip, im)
                    .ok_or_else(|| degenerate(ip - im))?;
                let alpha = clamp("alpha", alpha);
                integrand.add_scaled(1.0, &tau);
                integrand.add_scaled(shift * alpha, &plus);
                integrand.add_scaled(shift * (1.0 - alpha), &minus);
                alpha
            }
        };
        let phi = {
            let cumulative = integrand.integrate_from(lo);
            NodeSeries::from_parts(
                grid,
                cumulative.values().iter().map(|v| 6.0 * v).collect(),
                integrand.values().iter().map(|v| 6.0 * v).collect(),
            )
        };
        let phi_residual = phi.value(hi) - phi_target(anchor, h);

        let jump = psi_step_weight(anchor, h);
        let plus = self.plain(pattern, cfg.n2(), self.b2, cfg.finest_index(k + 1), false)?;
        let minus = self.plain(pattern, cfg.n2(), self.b2, cfg.finest_index(k - 1), false)?;
        let middle = self.plain(pattern, cfg.n1(), self.b1, k, false)?;
        let (plus, minus, middle) = (
            NodeSeries::from_fn(&plus),
            NodeSeries::from_fn(&minus),
            NodeSeries::from_fn(&middle),
        );
        let wp = phi.window_integral(lo, hi);
        let (kp, km, k0) = (
            plus.window_integral(lo, hi),
            minus.window_integral(lo, hi),
            middle.window_integral(lo, hi),
        );
        let beta = affine_weight((psi_target(h) - wp) / jump - k0, kp, km)
            .ok_or_else(|| degenerate(kp - km))?;
        let beta = clamp("beta", beta);
        let mut outer = phi.clone();
        outer.add_scaled(jump * beta, &plus);
        outer.add_scaled(jump, &middle);
        outer.add_scaled(jump * (1.0 - beta), &minus);
        let psi = outer.integrate_from(lo);
        let psi_residual = psi.value(hi) - psi_target(h);
        let second = outer.slopes().to_vec();

        let (comparison_violations, closeness, weighted_closeness) =
            self.compare(j, anchor, pattern, &psi, &second);
        Ok(SmoothPiece {
            record: PieceRecord {
                j,
                anchor,
                pattern: key,
                weight,
                beta,
                phi_residual,
                psi_residual,
                comparison_violations,
                closeness,
                weighted_closeness,
            },
            clamps,
            phi,
            psi,
            second,
        })
    }

    fn compare(
        &self,
        j: i64,
        anchor: Anchor,
        pattern: &SignPattern,
        psi: &NodeSeries,
        second: &[f64],
    ) -> (usize, f64, f64) {
        let grid = self.grid;
        let piece = PsiPiece::new(j, anchor, self.level);
        let h3 = self.config.h().powi(3);
        let at_knot = pattern.value(self.level.knot(j));
        let lo = grid.nearest(-PI);
        let hi = grid.nearest(PI);
        let scale = (lo..=hi)
            .map(|node| second[grid.slot(node)].abs())
            .fold(0.0, f64::max);
        let tolerance = 1e-9 * scale;
        let direction = if anchor == Anchor::Middle { -1.0 } else { 1.0 };
        let mut violations = 0;
        let (mut plain, mut weighted) = (0.0f64, 0.0f64);
        for node in lo..=hi {
            let x = grid.x(node);
            let slot = grid.slot(node);
            let gap = second[slot] - piece.second_derivative(x);
            if direction * gap * pattern.value(x) * at_knot < -tolerance {
                violations += 1;
            }
            let diff = (piece.value(x) - psi.values()[slot]).abs();
            plain = plain.max(diff / h3);
            weighted = weighted.max(diff / (h3 * gamma(j, self.config.n, x).powi(6)));
        }
        (violations, plain, weighted)
    }
}

/// Configuration, solved parameters and clamp log of a build.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolyManifest {
    pub config: LevelConfig,
    pub n1: usize,
    pub n2: usize,
    pub b1: u32,
    pub b2: u32,
    pub shift: f64,
    pub pieces: Vec<PieceRecord>,
    pub clamps: Vec<ClampEvent>,
}

/// P_n on the fine grid, in the spline's local coordinates.
#[derive(Clone, Debug)]
pub struct PolyModel {
    spline: SplineModel,
    grid: FineGrid,
    /// P_n with P_n′ as slopes.
    values: NodeSeries,
    second: Vec<f64>,
    /// Σ 4hΦ_jψ_j″ over indices away from the inflection points.
    second_main: Vec<f64>,
    /// The same sum over the remaining indices.
    second_displaced: Vec<f64>,
    manifest: PolyManifest,
}

struct Accumulator {
    values: Vec<f64>,
    slopes: Vec<f64>,
    second: Vec<f64>,
    second_main: Vec<f64>,
    second_displaced: Vec<f64>,
    records: Vec<PieceRecord>,
    clamps: Vec<ClampEvent>,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
            slopes: vec![0.0; len],
            second: vec![0.0; len],
            second_main: vec![0.0; len],
            second_displaced: vec![0.0; len],
            records: Vec::new(),
            clamps: Vec::new(),
        }
    }

    fn add(&mut self, weight: f64, piece: SmoothPiece) {
        let displaced = piece.record.pattern != PatternKey::Main;
        for (slot, v) in piece.psi.values().iter().enumerate() {
            self.values[slot] += weight * v;
            self.slopes[slot] += weight * piece.psi.slopes()[slot];
            let s = weight * piece.second[slot];
            self.second[slot] += s;
            if displaced {
                self.second_displaced[slot] += s;
            } else {
                self.second_main[slot] += s;
            }
        }
        self.records.push(piece.record);
        self.clamps.extend(piece.clamps);
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in [
            (&mut self.values, &other.values),
            (&mut self.slopes, &other.slopes),
            (&mut self.second, &other.second),
            (&mut self.second_main, &other.second_main),
            (&mut self.second_displaced, &other.second_displaced),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.records.extend(other.records);
        self.clamps.extend(other.clamps);
        self
    }
}

/// Builds P_n = L_3 + 4hΣΦ_jψ_j with the spline's selection.
pub fn build_poly(
    f: &PeriodicFunction,
    y: &InflectionSet,
    config: LevelConfig,
) -> Result<PolyModel> {
    let spline = build_spline(f, y, config.n)?;
    let displaced: Vec<usize> = {
        let mut list: Vec<usize> = spline
            .selections()
            .iter()
            .filter_map(|s| s.modified_point)
            .collect();
        list.sort_unstable();
        list.dedup();
        list
    };
    let context = PolyContext::new(config, spline.local_inflections(), &displaced)?;
    build_poly_in(&context, spline)
}

/// Assembles P_n from an existing context and spline at the same level.
pub fn build_poly_in(context: &PolyContext, spline: SplineModel) -> Result<PolyModel> {
    let config = context.config;
    let grid = context.grid;
    let h = config.h();
    let mut tasks = Vec::new();
    for sel in spline.selections() {
        let coefficient = 4.0 * h * spline.table().fourth(sel.j);
        if coefficient == 0.0 {
            continue;
        }
        let key = sel
            .modified_point
            .map_or(PatternKey::Main, PatternKey::Displaced);
        for (piece, w) in spline.pieces(sel.j) {
            tasks.push((sel.j, piece.anchor, key, coefficient * w));
        }
    }
    let acc = tasks
        .par_iter()
        .try_fold(
            || Accumulator::new(grid.len()),
            |mut acc, &(j, anchor, key, weight)| {
                acc.add(weight, context.piece(j, anchor, key)?);
                Ok::<_, ShapeError>(acc)
            },
        )
        .try_reduce(|| Accumulator::new(grid.len()), |a, b| Ok(a.merge(b)))?;
    let mut acc = acc;
    let base = spline.base();
    for (slot, node) in (grid.first()..=grid.last()).enumerate() {
        let x = grid.x(node);
        acc.values[slot] += base.value(x);
        acc.slopes[slot] += base.derivative(x);
        acc.second[slot] += base.second_derivative(x);
    }
    acc.records.sort_by_key(|r| (r.j, r.anchor));
    let manifest = PolyManifest {
        config,
        n1: config.n1(),
        n2: config.n2(),
        b1: context.b1,
        b2: context.b2,
        shift: spline.shift(),
        pieces: acc.records,
        clamps: acc.clamps,
    };
    Ok(PolyModel {
        spline,
        grid,
        values: NodeSeries::from_parts(grid, acc.values, acc.slopes),
        second: acc.second,
        second_main: acc.second_main,
        second_displaced: acc.second_displaced,
        manifest,
    })
}

impl PolyModel {
    pub fn spline(&self) -> &SplineModel {
        &self.spline
    }

    pub fn grid(&self) -> FineGrid {
        self.grid
    }

    pub fn manifest(&self) -> &PolyManifest {
        &self.manifest
    }

    pub fn config(&self) -> LevelConfig {
        self.manifest.config
    }

    /// Fine-grid nodes covering one period [−π, π] in local coordinates.
    pub fn period_nodes(&self) -> std::ops::RangeInclusive<i64> {
        let half = self.grid.period() / 2;
        -half..=half
    }

    pub fn value_node(&self, node: i64) -> f64 {
        self.values.value(node)
    }

    pub fn derivative_node(&self, node: i64) -> f64 {
        self.values.slope(node)
    }

    pub fn second_node(&self, node: i64) -> f64 {
        self.second[self.grid.slot(node)]
    }

    /// P_n at a local coordinate inside the table range (cubic Hermite).
    pub fn value_local(&self, x: f64) -> f64 {
        let dx = self.grid.dx();
        let node = (x / dx).floor() as i64;
        let node = node.clamp(self.grid.first(), self.grid.last() - 1);
        let t = (x - self.grid.x(node)) / dx;
        let (p0, p1) = (self.values.value(node), self.values.value(node + 1));
        let (m0, m1) = (
            self.values.slope(node) * dx,
            self.values.slope(node + 1) * dx,
        );
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * p0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * p1
            + (t3 - t2) * m1
    }

    /// P_n at x on the period containing the original window [−π, π).
    pub fn value(&self, x: f64) -> f64 {
        self.value_local(self.spline.to_local(x))
    }

    /// max |f − P_n| over the period nodes.
    pub fn sup_error(&self, f: &PeriodicFunction) -> f64 {
        let shift = self.spline.shift();
        self.period_nodes()
            .map(|node| {
                let x = self.grid.x(node);
                (f.eval(x + shift) - self.value_node(node)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// max |S − P_n| over the period nodes.
    pub fn spline_gap(&self) -> f64 {
        self.period_nodes()
            .map(|node| {
                let x = self.grid.x(node);
                (self.spline.jet_local(x).value - self.value_node(node)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// max |P_n(x + 2π) − P_n(x)| over the nodes where both lie in the table.
    pub fn periodicity_defect(&self) -> f64 {
        let period = self.grid.period();
        (self.grid.first()..=self.grid.last() - period)
            .step_by(7)
            .map(|node| (self.value_node(node + period) - self.value_node(node)).abs())
            .fold(0.0, f64::max)
    }

    /// A, B and C at a period node: P_n″Π = A + B + C.
    pub fn split_node(&self, node: i64) -> [f64; 3] {
        let spline = &self.spline;
        let x = self.grid.x(node);
        let pi = spline.local_inflections().pi(x);
        let h = spline.grid().h();
        let slot = self.grid.slot(node);
        let (mut main, mut displaced) = (0.0, 0.0);
        for sel in spline.selections() {
            let c = 4.0 * h * spline.table().fourth(sel.j);
            let regular: f64 = spline
                .pieces(sel.j)
                .map(|(p, w)| w * p.second_derivative(x))
                .sum();
            if sel.modified_point.is_some() {
                displaced += c * regular;
            } else {
                main += c * regular;
            }
        }
        [
            (self.second_main[slot] - main) * pi,
            (self.second_displaced[slot] - displaced) * pi,
            spline.jet_local(x).second * pi,
        ]
    }

    /// Dumps `x,p,p2,pi,p2pi` rows over one period in original coordinates.
    pub fn dump_csv<W: std::io::Write>(&self, out: W, stride: usize) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["x", "p", "p2", "pi", "p2pi"])?;
        let local = self.spline.local_inflections();
        for node in self.period_nodes().step_by(stride.max(1)) {
            let x = self.grid.x(node);
            let (p2, pi) = (self.second_node(node), local.pi(x));
            writer.serialize((
                self.spline.to_original(x),
                self.value_node(node),
                p2,
                pi,
                p2 * pi,
            ))?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Outcome of the polynomial sign scan.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PolyShapeReport {
    pub samples: usize,
    pub tolerance: f64,
    /// Violations of P_n″Π ≥ −tol outside the excluded neighborhoods.
    pub violations: usize,
    /// Violations inside them, permitted.
    pub excluded_violations: usize,
    pub worst_margin: f64,
    pub worst_location: f64,
    pub a_violations: usize,
    pub b_violations: usize,
    pub comparison_violations: usize,
    pub clamps: usize,
}

impl PolyShapeReport {
    /// P_n″Π ≥ −tol outside the excluded neighborhoods.
    pub fn shape_passed(&self) -> bool {
        self.violations == 0
    }

    /// The shape claim together with A ≥ −tol.
    pub fn passed(&self) -> bool {
        self.shape_passed() && self.a_violations == 0
    }
}

fn inside_any(x: f64, intervals: &[(f64, f64)]) -> bool {
    intervals.iter().any(|&(a, b)| {
        [-2.0 * PI, 0.0, 2.0 * PI]
            .iter()
            .any(|shift| x > a + shift && x < b + shift)
    })
}

/// Scans P_n″Π on one period and checks the A and B parts.
pub fn verify_poly_shape(model: &PolyModel) -> PolyShapeReport {
    let spline = &model.spline;
    let local = spline.local_inflections();
    let level = spline.grid();
    let h = level.h();
    let excluded: Vec<(f64, f64)> = local.points().iter().map(|&y| (y - h, y + h)).collect();
    let b_excluded: Vec<(f64, f64)> = local
        .points()
        .iter()
        .map(|&y| (level.knot(level.index_of(y) + 5), y))
        .collect();
    let nodes: Vec<i64> = model.period_nodes().collect();
    let splits: Vec<[f64; 3]> = nodes
        .par_iter()
        .map(|&node| model.split_node(node))
        .collect();
    let scale = nodes
        .iter()
        .map(|&node| model.second_node(node).abs())
        .fold(0.0, f64::max);
    let tolerance = 1e-9 * scale.max(f64::MIN_POSITIVE);
    let mut report = PolyShapeReport {
        tolerance,
        worst_margin: f64::INFINITY,
        ..Default::default()
    };
    for (&node, split) in nodes.iter().zip(&splits) {
        let x = model.grid.x(node);
        let margin = model.second_node(node) * local.pi(x);
        report.samples += 1;
        if inside_any(x, &excluded) {
            if margin < -tolerance {
                report.excluded_violations += 1;
            }
        } else {
            if margin < report.worst_margin {
                report.worst_margin = margin;
                report.worst_location = spline.to_original(x);
            }
            if margin < -tolerance {
                report.violations += 1;
            }
        }
        if split[0] < -tolerance {
            report.a_violations += 1;
        }
        if split[1] < -tolerance && !inside_any(x, &b_excluded) {
            report.b_violations += 1;
        }
    }
    report.comparison_violations = model
        .manifest
        .pieces
        .iter()
        .map(|p| p.comparison_violations)
        .sum();
    report.clamps = model.manifest.clamps.len();
    report
}

/// Constant approximant f(0) with the certificate 3ω₄(f, 4π).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WhitneyFallback {
    pub value: f64,
    pub certificate: f64,
}

pub fn fallback_whitney(f: &PeriodicFunction, search: ModulusSearch) -> Result<WhitneyFallback> {
    Ok(WhitneyFallback {
        value: f.eval(0.0),
        certificate: 3.0 * modulus(&|x| f.eval(x), 4, 4.0 * PI, None, search)?,
    })
}

impl WhitneyFallback {
    pub fn sup_error(&self, f: &PeriodicFunction) -> f64 {
        (0..4096)
            .map(|k| -PI + 2.0 * PI * k as f64 / 4096.0)
            .map(|x| (f.eval(x) - self.value).abs())
            .fold(0.0, f64::max)
    }
}

/// Either the full construction or the constant fallback below the level floor.
#[derive(Clone, Debug)]
pub enum Approximant {
    Poly(Box<PolyModel>),
    Whitney(WhitneyFallback),
}

pub fn build_approximant(
    f: &PeriodicFunction,
    y: &InflectionSet,
    config: LevelConfig,
) -> Result<Approximant> {
    if config.n < min_level(y) {
        return Ok(Approximant::Whitney(fallback_whitney(
            f,
            ModulusSearch::default(),
        )?));
    }
    build_poly(f, y, config).map(|m| Approximant::Poly(Box::new(m)))
}

/// Multipliers tried in order by [`calibrate`] from the defaults.
pub const CALIBRATION_SCHEDULE: [(usize, usize); 4] = [(2, 4), (4, 4), (4, 8), (8, 8)];

/// Doubles the smaller multiplier (m₁ on ties) from (m1, m2) while m₂ ≤ `max_m2`.
pub fn calibration_schedule(m1: usize, m2: usize, max_m2: usize) -> Vec<(usize, usize)> {
    let (mut a, mut b) = (m1.max(1), m2.max(1));
    let mut steps = Vec::new();
    while b <= max_m2 {
        steps.push((a, b));
        if a < b {
            a *= 2;
        } else {
            b *= 2;
        }
    }
    steps
}

/// One calibration attempt.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationStep {
    pub m1: usize,
    pub m2: usize,
    pub report: PolyShapeReport,
}

/// Raises (m₁, m₂) along the schedule until the shape checks pass.
/// Returns the last model built and the attempt log.
pub fn calibrate(
    f: &PeriodicFunction,
    y: &InflectionSet,
    base: LevelConfig,
    schedule: &[(usize, usize)],
) -> Result<(PolyModel, Vec<CalibrationStep>)> {
    let mut log = Vec::new();
    let mut last = None;
    for &(m1, m2) in schedule {
        let model = build_poly(f, y, base.with_multipliers(m1, m2))?;
        let report = verify_poly_shape(&model);
        let passed = report.passed();
        log.push(CalibrationStep { m1, m2, report });
        last = Some(model);
        if passed {
            break;
        }
    }
    last.map(|m| (m, log))
        .ok_or_else(|| ShapeError::InvalidArgument("empty calibration schedule".into()))
}

/// Level-n index set H_2 for the local inflection set of a model.
pub fn regular_indices(model: &PolyModel) -> Vec<i64> {
    let spline = &model.spline;
    build_neighborhoods(spline.local_inflections(), spline.grid(), 2).h_set()
}
