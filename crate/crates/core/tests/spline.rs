use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use shapeline::kernels::gauss_legendre;
use shapeline::periodic::DyadicGrid;
use shapeline::periodic::{modulus, InflectionSet, ModulusSearch, PeriodicFunction};
use shapeline::spline::{
    build_spline, build_technical_spline, verify_spline_shape, Anchor, PsiPiece,
};

fn standard_set() -> InflectionSet {
    InflectionSet::new(vec![0.0, -PI]).unwrap()
}

fn sup_error(f: &PeriodicFunction, s: impl Fn(f64) -> f64) -> f64 {
    (0..=8192)
        .map(|k| -PI + 2.0 * PI * k as f64 / 8192.0)
        .map(|x| (f.eval(x) - s(x)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn spline_shape_for_negative_sine() {
    let f = PeriodicFunction::builtin("neg-sin").unwrap();
    for n in [16, 32, 64] {
        let model = build_spline(&f, &standard_set(), n).unwrap();
        let report = verify_spline_shape(&model);
        assert!(report.samples > 0 && report.jump_checks > 0);
        assert!(report.passed(), "n = {n}: {report:?}");
    }
}

#[test]
fn spline_converges_at_fourth_order() {
    let f = PeriodicFunction::builtin("neg-sin").unwrap();
    let ns = [16usize, 32, 64, 128];
    let errors: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let model = build_spline(&f, &standard_set(), n).unwrap();
            sup_error(&f, |x| model.value(x))
        })
        .collect();
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / 4.0;
    let my = ys.iter().sum::<f64>() / 4.0;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!(
        (-4.5..=-3.5).contains(&slope),
        "slope {slope}, errors {errors:?}"
    );
    let search = ModulusSearch::default();
    let ratios: Vec<f64> = ns
        .iter()
        .zip(&errors)
        .map(|(&n, e)| e / modulus(&|x| f.eval(x), 4, PI / n as f64, None, search).unwrap())
        .collect();
    let (lo, hi) = ratios
        .iter()
        .fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(hi / lo <= 2.0, "ratios {ratios:?}");
}

#[test]
fn cubics_are_reproduced() {
    let f = PeriodicFunction::builtin("cubic-periodic").unwrap();
    let y = InflectionSet::new(vec![PI / 2.0, -PI / 2.0]).unwrap();
    for n in [16, 32] {
        let model = build_spline(&f, &y, n).unwrap();
        let scale = PI.powi(3);
        let error = sup_error(&f, |x| model.value(x));
        assert!(error < 1e-10 * scale, "n = {n}: {error}");
        let s = build_technical_spline(&f, DyadicGrid::new(n).unwrap());
        assert!(sup_error(&f, |x| s.value(x)) < 1e-10 * scale);
    }
}

#[test]
fn both_spline_forms_agree() {
    let f = PeriodicFunction::builtin("neg-sin-mix").unwrap();
    let model = build_spline(&f, &standard_set(), 32).unwrap();
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    for _ in 0..1000 {
        let x: f64 = rng.random_range(-PI..PI);
        let a = model.jet_local(x).value;
        let b = model.value_telescoped_local(x);
        assert!((a - b).abs() < 1e-9, "x = {x}: {a} vs {b}");
    }
}

#[test]
fn pieces_match_their_double_integrals() {
    let grid = DyadicGrid::new(16).unwrap();
    let h = grid.h();
    let j = 2;
    let d = grid.knot(j - 1);
    let lower = d - PI;
    // piecewise-polynomial integrals are exact under Gauss–Legendre split at the anchor
    let integrate = |g: &dyn Fn(f64) -> f64, from: f64, to: f64, split: f64| -> f64 {
        let mut total = 0.0;
        let mut cuts = vec![from];
        if split > from && split < to {
            cuts.push(split);
        }
        cuts.push(to);
        for w in cuts.windows(2) {
            total += gauss_legendre(g, w[0], w[1]);
        }
        total
    };
    for anchor in Anchor::ALL {
        let piece = PsiPiece::new(j, anchor, grid);
        let a = piece.start;
        let inner = |t: f64| {
            let chi = if t > a { 1.0 } else { 0.0 };
            let g = |u: f64| 6.0 * ((u - a).max(0.0) + piece.shift * if u > a { 1.0 } else { 0.0 });
            integrate(&g, lower, t, a) + piece.jump * chi
        };
        for k in 0..40 {
            let x = lower + 2.0 * PI * k as f64 / 39.0;
            let outer = integrate(&inner, lower, x, a);
            assert!((outer - piece.value(x)).abs() < 1e-8, "{anchor:?} x = {x}");
        }
        let _ = h;
    }
}
