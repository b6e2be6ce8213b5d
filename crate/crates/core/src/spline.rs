//! The nearly coconvex cubic spline built from one-sided cubic pieces.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Result, ShapeError};
use crate::periodic::{
    alignment_shift, build_neighborhoods, cubic_on, divided_differences, min_n_for, reduce,
    CubicInterpolant, DividedDifferences, DyadicGrid, InflectionSet, NeighborhoodIndex,
    PeriodicFunction, SignPattern,
};

/// Which of the three anchors x_j, x_{j−1}, x_{j−2} a piece starts at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Anchor {
    Left,
    Middle,
    Right,
}

impl Anchor {
    pub const ALL: [Anchor; 3] = [Anchor::Left, Anchor::Middle, Anchor::Right];

    /// Offset of the anchor from x_j in knot steps.
    pub fn offset(self) -> i64 {
        match self {
            Anchor::Left => 0,
            Anchor::Middle => 1,
            Anchor::Right => 2,
        }
    }

    pub fn slot(self) -> usize {
        self.offset() as usize
    }
}

/// (x − x_j)₊(x − x_{j−1})(x − x_{j−2}) and its first two derivatives.
pub fn truncated_cubic(x: f64, knot: f64, h: f64) -> [f64; 3] {
    if x <= knot {
        return [0.0; 3];
    }
    let u = x - knot - h;
    [u * u * u - h * h * u, 3.0 * u * u - h * h, 6.0 * u]
}

/// One-sided cubic piece (x−a)³₊ + 3h̃(x−a)²₊ + ĥ(x−a)₊ for index j.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiPiece {
    pub j: i64,
    pub anchor: Anchor,
    /// Anchor point a.
    pub start: f64,
    /// Shift h̃ ∈ {−h, 0, h}.
    pub shift: f64,
    /// Jump weight ĥ ∈ {2h², −h², 2h²}.
    pub jump: f64,
}

impl PsiPiece {
    pub fn new(j: i64, anchor: Anchor, grid: DyadicGrid) -> Self {
        let h = grid.h();
        let (shift, jump) = match anchor {
            Anchor::Left => (-h, 2.0 * h * h),
            Anchor::Middle => (0.0, -h * h),
            Anchor::Right => (h, 2.0 * h * h),
        };
        Self {
            j,
            anchor,
            start: grid.knot(j - anchor.offset()),
            shift,
            jump,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        if x <= self.start {
            return 0.0;
        }
        let u = x - self.start;
        u * u * u + 3.0 * self.shift * u * u + self.jump * u
    }

    /// Right derivative.
    pub fn derivative(&self, x: f64) -> f64 {
        if x <= self.start {
            return 0.0;
        }
        let u = x - self.start;
        3.0 * u * u + 6.0 * self.shift * u + self.jump
    }

    /// Second derivative away from the anchor, where the piece has a kink.
    pub fn second_derivative(&self, x: f64) -> f64 {
        if x <= self.start {
            return 0.0;
        }
        6.0 * (x - self.start) + 6.0 * self.shift
    }
}

/// Rule that fixed the piece for one index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum SelectionTag {
    /// Φ_jΠ(x_j) ≤ 0: middle anchor.
    D0,
    /// |F_{j+1}| > |F_j| ≥ |F_{j−1}|: left anchor.
    D1,
    /// |F_{j+1}| ≤ |F_j| < |F_{j−1}|: right anchor.
    D2,
    /// |F_{j+1}| > |F_j| < |F_{j−1}|: α·left + (1−α)·right.
    D3 { alpha: f64 },
    /// Near an inflection point, Φ_jΠ(x_j, Ỹ_i) ≤ 0: middle anchor.
    D4Middle,
    /// Near an inflection point, otherwise: left anchor.
    D4Left,
    /// No rule matched; middle anchor chosen.
    TieBreak,
}

impl SelectionTag {
    /// Weights of the left, middle and right pieces.
    pub fn weights(&self) -> [f64; 3] {
        match *self {
            SelectionTag::D0 | SelectionTag::D4Middle | SelectionTag::TieBreak => [0.0, 1.0, 0.0],
            SelectionTag::D1 | SelectionTag::D4Left => [1.0, 0.0, 0.0],
            SelectionTag::D2 => [0.0, 0.0, 1.0],
            SelectionTag::D3 { alpha } => [alpha, 0.0, 1.0 - alpha],
        }
    }

    /// Smallest and largest anchor used.
    pub fn anchor_span(&self) -> (Anchor, Anchor) {
        let w = self.weights();
        let used: Vec<Anchor> = Anchor::ALL
            .into_iter()
            .filter(|a| w[a.slot()] != 0.0)
            .collect();
        match (used.first(), used.last()) {
            (Some(&lo), Some(&hi)) => (lo, hi),
            _ => (Anchor::Middle, Anchor::Middle),
        }
    }
}

/// Applies the selection rules to one index.
///
/// `sign_at_knot` is Π(x_j) for indices away from the inflection points and
/// Π(x_j, Ỹ_i) otherwise; `near_inflection` marks the latter case.
pub fn select_psi(
    j: i64,
    second: [f64; 3],
    fourth: f64,
    sign_at_knot: f64,
    near_inflection: bool,
) -> SelectionTag {
    let _ = j;
    let product = fourth * sign_at_knot;
    if near_inflection {
        return if product <= 0.0 {
            SelectionTag::D4Middle
        } else {
            SelectionTag::D4Left
        };
    }
    if product <= 0.0 {
        return SelectionTag::D0;
    }
    let [next, here, prev] = second;
    let (a, b, c) = (next.abs(), here.abs(), prev.abs());
    if a > b && b >= c {
        SelectionTag::D1
    } else if a <= b && b < c {
        SelectionTag::D2
    } else if a > b && b < c {
        let denominator = next + prev;
        let alpha = next / denominator;
        if denominator != 0.0 && (0.0..=1.0).contains(&alpha) {
            SelectionTag::D3 { alpha }
        } else {
            SelectionTag::TieBreak
        }
    } else {
        SelectionTag::TieBreak
    }
}

/// Selected piece combination for one index.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Selection {
    pub j: i64,
    pub tag: SelectionTag,
    /// Inflection point (0-based) whose modified set decided the tag.
    pub modified_point: Option<usize>,
}

/// Y with point i replaced by the raw knot x_{j_i+5}.
pub fn displaced_pattern(y: &InflectionSet, grid: DyadicGrid, i: usize) -> SignPattern {
    let anchor = grid.index_of(y.points()[i]);
    y.pattern().with_replaced(i, grid.knot(anchor + 5))
}

/// Maximal runs of H_3 indices and the associated intervals.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Region {
    /// a_μ = x_{j̲}.
    pub lower: f64,
    /// b_μ = x_{j̄}.
    pub upper: f64,
    /// j̲ with x_{j̲} = a_μ.
    pub lower_index: i64,
    /// j̄ with x_{j̄} = b_μ.
    pub upper_index: i64,
}

impl Region {
    /// G_μ = (d_{j̲+1}, d_{j̄}].
    pub fn g_interval(&self, grid: DyadicGrid) -> (f64, f64) {
        (grid.knot(self.lower_index), grid.knot(self.upper_index - 1))
    }

    /// H̄_μ = {j̄+1, …, j̲}.
    pub fn indices(&self) -> std::ops::RangeInclusive<i64> {
        self.upper_index + 1..=self.lower_index
    }

    /// H̿_μ = {j̄+2, …, j̲−1}.
    pub fn inner_indices(&self) -> std::ops::RangeInclusive<i64> {
        self.upper_index + 2..=self.lower_index - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionDecomposition {
    pub regions: Vec<Region>,
}

/// Splits [−π, π] ∩ ⋃_{j∈H_3} I_j into maximal intervals.
pub fn decompose_regions(y: &InflectionSet, grid: DyadicGrid) -> RegionDecomposition {
    let n = grid.n() as i64;
    let index = build_neighborhoods(y, grid, 3);
    let mut regions = Vec::new();
    let mut run: Option<(i64, i64)> = None;
    for j in 1 - n..=n {
        if index.in_h(j) {
            run = Some(match run {
                Some((lo, _)) => (lo, j),
                None => (j, j),
            });
        } else if let Some((lo, hi)) = run.take() {
            regions.push(region_from_run(lo, hi, grid));
        }
    }
    if let Some((lo, hi)) = run {
        regions.push(region_from_run(lo, hi, grid));
    }
    // intervals ordered by decreasing position
    RegionDecomposition { regions }
}

fn region_from_run(lo: i64, hi: i64, grid: DyadicGrid) -> Region {
    Region {
        lower: grid.knot(hi),
        upper: grid.knot(lo - 1),
        lower_index: hi,
        upper_index: lo - 1,
    }
}

/// Options for [`build_spline_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplineOptions {
    /// Move the inflection points away from ±π by a multiple of h.
    pub rotate: bool,
}

impl Default for SplineOptions {
    fn default() -> Self {
        Self { rotate: true }
    }
}

/// Values at x of a function and its first two derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Jet {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// The spline S, built in coordinates shifted by a multiple of h.
#[derive(Clone, Debug)]
pub struct SplineModel {
    grid: DyadicGrid,
    shift: f64,
    original: InflectionSet,
    local: InflectionSet,
    table: DividedDifferences,
    base: CubicInterpolant,
    selections: Vec<Selection>,
}

/// Builds S with default options.
pub fn build_spline(f: &PeriodicFunction, y: &InflectionSet, n: usize) -> Result<SplineModel> {
    build_spline_with(f, y, n, SplineOptions::default())
}

/// Smallest n for which level-n constructions are admissible for Y.
pub fn min_level(y: &InflectionSet) -> usize {
    min_n_for(y, 3).max(4)
}

pub fn build_spline_with(
    f: &PeriodicFunction,
    y: &InflectionSet,
    n: usize,
    options: SplineOptions,
) -> Result<SplineModel> {
    let required = min_level(y);
    if n < required {
        return Err(ShapeError::BelowMinimumN { n, required });
    }
    let grid = DyadicGrid::new(n)?;
    let steps = if options.rotate {
        alignment_shift(y, grid)
    } else {
        0
    };
    let shift = steps as f64 * grid.h();
    let local = y.rotated(shift);
    let table = divided_differences(|x| f.eval(x + shift), grid);
    let nf = n as i64;
    let base = CubicInterpolant::through(
        [
            grid.knot(nf),
            grid.knot(nf - 1),
            grid.knot(nf - 2),
            grid.knot(nf - 3),
        ],
        [
            table.value(nf),
            table.value(nf - 1),
            table.value(nf - 2),
            table.value(nf - 3),
        ],
    );
    let near = build_neighborhoods(&local, grid, 2);
    let selections = (3 - nf..=nf - 1)
        .map(|j| select_index(j, &table, &local, &near, grid))
        .collect();
    Ok(SplineModel {
        grid,
        shift,
        original: y.clone(),
        local,
        table,
        base,
        selections,
    })
}

fn select_index(
    j: i64,
    table: &DividedDifferences,
    local: &InflectionSet,
    near: &NeighborhoodIndex,
    grid: DyadicGrid,
) -> Selection {
    let second = [table.second(j + 1), table.second(j), table.second(j - 1)];
    let x = grid.knot(j);
    match near.containing_index(j) {
        Some(i) => {
            let modified = displaced_pattern(local, grid, i);
            Selection {
                j,
                tag: select_psi(j, second, table.fourth(j), modified.value(x), true),
                modified_point: Some(i),
            }
        }
        None => Selection {
            j,
            tag: select_psi(j, second, table.fourth(j), local.pi(x), false),
            modified_point: None,
        },
    }
}

impl SplineModel {
    pub fn grid(&self) -> DyadicGrid {
        self.grid
    }

    /// Rotation applied: local coordinate = x − shift.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn inflections(&self) -> &InflectionSet {
        &self.original
    }

    /// Inflection set in local coordinates.
    pub fn local_inflections(&self) -> &InflectionSet {
        &self.local
    }

    pub fn table(&self) -> &DividedDifferences {
        &self.table
    }

    /// L_3 on the four leftmost knots, in local coordinates.
    pub fn base(&self) -> &CubicInterpolant {
        &self.base
    }

    pub fn selections(&self) -> &[Selection] {
        &self.selections
    }

    pub fn selection(&self, j: i64) -> &Selection {
        &self.selections[(j - (3 - self.grid.n() as i64)) as usize]
    }

    pub fn to_local(&self, x: f64) -> f64 {
        reduce(x - self.shift)
    }

    pub fn to_original(&self, local: f64) -> f64 {
        local + self.shift
    }

    /// Pieces and weights of Ψ_j.
    pub fn pieces(&self, j: i64) -> impl Iterator<Item = (PsiPiece, f64)> + '_ {
        let weights = self.selection(j).tag.weights();
        Anchor::ALL
            .into_iter()
            .filter(move |a| weights[a.slot()] != 0.0)
            .map(move |a| (PsiPiece::new(j, a, self.grid), weights[a.slot()]))
    }

    /// S and its derivatives at a local coordinate in [−π, π].
    pub fn jet_local(&self, x: f64) -> Jet {
        let h = self.grid.h();
        let mut jet = Jet {
            value: self.base.value(x),
            first: self.base.derivative(x),
            second: self.base.second_derivative(x),
        };
        for sel in &self.selections {
            let weight = 4.0 * h * self.table.fourth(sel.j);
            if weight == 0.0 {
                continue;
            }
            for (piece, w) in self.pieces(sel.j) {
                jet.value += weight * w * piece.value(x);
                jet.first += weight * w * piece.derivative(x);
                jet.second += weight * w * piece.second_derivative(x);
            }
        }
        jet
    }

    /// S at any real x (periodic continuation).
    pub fn value(&self, x: f64) -> f64 {
        self.jet_local(self.to_local(x)).value
    }

    pub fn jet(&self, x: f64) -> Jet {
        self.jet_local(self.to_local(x))
    }

    /// Ψ_j for j in 2−n..=n, with the boundary conventions at both ends.
    fn psi_local(&self, j: i64, x: f64) -> f64 {
        let n = self.grid.n() as i64;
        if j == n {
            truncated_cubic(x, self.grid.knot(n), self.grid.h())[0]
        } else if j == 2 - n {
            0.0
        } else {
            self.pieces(j).map(|(p, w)| w * p.value(x)).sum()
        }
    }

    /// S evaluated through second differences and telescoped pieces.
    pub fn value_telescoped_local(&self, x: f64) -> f64 {
        let n = self.grid.n() as i64;
        let h = self.grid.h();
        let (x_n, x_n1) = (self.grid.knot(n), self.grid.knot(n - 1));
        let (f_n, f_n1) = (self.table.value(n), self.table.value(n - 1));
        let linear = f_n + (f_n1 - f_n) / (x_n1 - x_n) * (x - x_n);
        let f_top = self.table.second(n);
        let mut total = linear
            + f_top
                * ((x - x_n) * (x - x_n1)
                    - (self.psi_local(n, x) - self.psi_local(n - 1, x)) / (3.0 * h));
        for j in 3 - n..=n - 1 {
            let a = (self.psi_local(j + 1, x) - 2.0 * self.psi_local(j, x)
                + self.psi_local(j - 1, x))
                / (3.0 * h);
            total += self.table.second(j) * a;
        }
        total + self.table.second(2 - n) * self.psi_local(3 - n, x) / (3.0 * h)
    }

    /// Total jump of S′ at a local point (sum over pieces anchored there).
    pub fn slope_jump_local(&self, x: f64) -> f64 {
        let h = self.grid.h();
        let mut jump = 0.0;
        for sel in &self.selections {
            for (piece, w) in self.pieces(sel.j) {
                if (piece.start - x).abs() < 1e-12 {
                    jump += 4.0 * h * self.table.fourth(sel.j) * w * piece.jump;
                }
            }
        }
        jump
    }

    pub fn regions(&self) -> RegionDecomposition {
        decompose_regions(&self.local, self.grid)
    }

    /// Writes `x,s,s2,pi,s2pi` rows at `samples` points of one period in
    /// original coordinates.
    pub fn dump_csv<W: std::io::Write>(&self, out: W, samples: usize) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["x", "s", "s2", "pi", "s2pi"])?;
        for k in 0..=samples.max(1) {
            let x = -PI + 2.0 * PI * k as f64 / samples.max(1) as f64;
            let jet = self.jet_local(x);
            let pi = self.local.pi(x);
            writer.serialize((
                self.to_original(x),
                jet.value,
                jet.second,
                pi,
                jet.second * pi,
            ))?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Interpolating spline L_3 + 4hΣΦ_jΨ_3(·, x_j) without shape restrictions.
#[derive(Clone, Debug)]
pub struct TechnicalSpline {
    grid: DyadicGrid,
    table: DividedDifferences,
    base: CubicInterpolant,
}

pub fn build_technical_spline(f: &PeriodicFunction, grid: DyadicGrid) -> TechnicalSpline {
    let table = divided_differences(|x| f.eval(x), grid);
    let n = grid.n() as i64;
    let base = CubicInterpolant::through(
        [
            grid.knot(n),
            grid.knot(n - 1),
            grid.knot(n - 2),
            grid.knot(n - 3),
        ],
        [
            table.value(n),
            table.value(n - 1),
            table.value(n - 2),
            table.value(n - 3),
        ],
    );
    TechnicalSpline { grid, table, base }
}

impl TechnicalSpline {
    pub fn value(&self, x: f64) -> f64 {
        let x = reduce(x);
        let n = self.grid.n() as i64;
        let h = self.grid.h();
        let mut total = self.base.value(x);
        for j in 3 - n..=n - 1 {
            total += 4.0 * h * self.table.fourth(j) * truncated_cubic(x, self.grid.knot(j), h)[0];
        }
        total
    }
}

/// Outcome of a sign scan.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SignReport {
    pub samples: usize,
    pub tolerance: f64,
    pub violations: usize,
    pub worst_margin: f64,
    pub worst_location: f64,
    pub jump_checks: usize,
    pub jump_violations: usize,
    pub case_checks: usize,
    pub case_violations: usize,
    /// Indices resolved by the tie-break.
    pub tie_breaks: Vec<i64>,
}

impl SignReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.jump_violations == 0 && self.case_violations == 0
    }

    fn record(&mut self, location: f64, margin: f64) {
        self.samples += 1;
        if margin < self.worst_margin {
            self.worst_margin = margin;
            self.worst_location = location;
        }
        if margin < -self.tolerance {
            self.violations += 1;
        }
    }
}

/// Samples per knot interval used by the spline sign scan.
pub const SAMPLES_PER_INTERVAL: usize = 64;

/// Checks S″Π ≥ 0 on every I_j with j ∈ H_3, the slope jumps at the
/// anchors inside the regions, and the local case brackets.
pub fn verify_spline_shape(model: &SplineModel) -> SignReport {
    let grid = model.grid;
    let n = grid.n() as i64;
    let local = &model.local;
    let h3 = build_neighborhoods(local, grid, 3);
    let mut scale: f64 = 0.0;
    for k in 0..=(2 * n as usize * SAMPLES_PER_INTERVAL) {
        let x = -PI + k as f64 * grid.h() / SAMPLES_PER_INTERVAL as f64;
        scale = scale.max(model.jet_local(x).second.abs());
    }
    let mut report = SignReport {
        tolerance: 1e-9 * scale.max(f64::MIN_POSITIVE),
        worst_margin: f64::INFINITY,
        ..Default::default()
    };
    for j in 1 - n..=n {
        if !h3.in_h(j) {
            continue;
        }
        let (lo, _) = grid.interval(j);
        for k in 0..=SAMPLES_PER_INTERVAL {
            let x = lo + k as f64 * grid.h() / SAMPLES_PER_INTERVAL as f64;
            let margin = model.jet_local(x).second * local.pi(x);
            report.record(model.to_original(x), margin);
        }
    }
    for region in model.regions().regions {
        for j in region.upper_index..=region.lower_index {
            let x = grid.knot(j);
            let jump = model.slope_jump_local(x);
            report.jump_checks += 1;
            if jump * local.pi(x).signum() < -report.tolerance {
                report.jump_violations += 1;
                if jump * local.pi(x).signum() < report.worst_margin {
                    report.worst_margin = jump * local.pi(x).signum();
                    report.worst_location = model.to_original(x);
                }
            }
        }
        for j in region.indices() {
            if !(3 - n..=n - 1).contains(&j) {
                continue;
            }
            let tag = model.selection(j).tag;
            let (from, to) = match tag {
                SelectionTag::D0 | SelectionTag::D3 { .. } => (Anchor::Left, Anchor::Right),
                SelectionTag::D1 => (Anchor::Left, Anchor::Middle),
                SelectionTag::D2 => (Anchor::Middle, Anchor::Right),
                _ => continue,
            };
            let a = grid.knot(j - from.offset());
            let b = grid.knot(j - to.offset());
            let sign = local.pi(grid.knot(j)).signum();
            for k in 1..=SAMPLES_PER_INTERVAL {
                let x = a + (b - a) * k as f64 / SAMPLES_PER_INTERVAL as f64;
                report.case_checks += 1;
                if model.jet_local(x).second * sign < -report.tolerance {
                    report.case_violations += 1;
                }
            }
        }
    }
    report.tie_breaks = model
        .selections
        .iter()
        .filter(|s| s.tag == SelectionTag::TieBreak)
        .map(|s| s.j)
        .collect();
    report
}

/// max |Ψ_3(·, x_j) − Ψ_{j,ν}| / h³ on [x_j, a_ν] over all ν, sampled.
pub fn piece_gap_constant(grid: DyadicGrid, j: i64) -> f64 {
    let h = grid.h();
    let knot = grid.knot(j);
    let mut worst: f64 = 0.0;
    for anchor in Anchor::ALL {
        let piece = PsiPiece::new(j, anchor, grid);
        for k in 0..=256 {
            let x = knot + (piece.start - knot) * k as f64 / 256.0;
            let gap = (truncated_cubic(x, knot, h)[0] - piece.value(x)).abs();
            worst = worst.max(gap / (h * h * h));
        }
    }
    worst
}

/// Cubic through f on [a, b], re-exported for Whitney-type comparisons.
pub fn local_cubic(f: &PeriodicFunction, a: f64, b: f64) -> Result<CubicInterpolant> {
    cubic_on(|x| f.eval(x), a, b)
}
