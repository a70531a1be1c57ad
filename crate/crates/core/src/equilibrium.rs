//! Equilibria of the isolated class-A dc link.
//!
//! At steady state the delivered power is u = x * sat(k_c (x* - x), i_max) - G_c x^2,
//! a piecewise quadratic in the dc voltage x with two pieces meeting at x_m:
//! f1 on the droop branch and f2 on the current-limited branch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Branch, ConverterParams};

/// Which piece of the characteristic an equilibrium sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CharBranch {
    /// droop (unsaturated) piece
    F1,
    /// current-limited piece
    F2,
    /// both pieces meet here: the two equilibria have merged at x_m
    Boundary,
}

/// Shape of the power-voltage characteristic over (0, x~*), by where its
/// maximum sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CharacteristicCase {
    /// peak at the kink x_m; the usual shape
    A,
    /// peak inside the current-limited piece
    B,
    /// peak inside the droop piece
    C,
    /// x~* <= x_m: the droop piece lies beyond the allowable voltage
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumPoint {
    /// V
    pub x: f64,
    pub branch: CharBranch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    /// W
    pub u_bar: f64,
    pub characteristic_case: CharacteristicCase,
    /// W
    pub u_max: f64,
    pub x_at_max: f64,
    /// Every valid equilibrium, highest voltage first.
    pub roots: Vec<EquilibriumPoint>,
    /// Highest equilibrium.
    pub x_bar_1: Option<EquilibriumPoint>,
    /// The next equilibrium below `x_bar_1`; bounds its region of attraction.
    pub x_bar_2: Option<EquilibriumPoint>,
}

impl EquilibriumReport {
    pub fn has_equilibrium(&self) -> bool {
        !self.roots.is_empty()
    }
}

#[inline]
pub(crate) fn f1(x: f64, cp: &ConverterParams) -> f64 {
    -cp.g_c * x * x + cp.k_c * x * (cp.v_dc_star - x)
}

#[inline]
pub(crate) fn f2(x: f64, cp: &ConverterParams) -> f64 {
    -cp.g_c * x * x + x * cp.i_dc_max
}

/// Steady-state converter power that holds the link at `x` volts.
pub fn characteristic_power(x: f64, cp: &ConverterParams) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("dc voltage must be positive, got {x}")));
    }
    Ok(characteristic_unchecked(x, cp))
}

#[inline]
pub(crate) fn characteristic_unchecked(x: f64, cp: &ConverterParams) -> f64 {
    let arg = cp.droop_current(x);
    match Branch::of(arg, cp.i_dc_max) {
        Branch::Linear => f1(x, cp),
        b => -cp.g_c * x * x + x * b.apply(arg, cp.i_dc_max),
    }
}

/// Vertex of f1; equals x~*/2.
fn f1_vertex(cp: &ConverterParams) -> f64 {
    cp.k_c * cp.v_dc_star / (2.0 * (cp.k_c + cp.g_c))
}

/// Vertex of f2; infinite when the link is lossless.
fn f2_vertex(cp: &ConverterParams) -> f64 {
    cp.i_dc_max / (2.0 * cp.g_c)
}

pub fn classify_characteristic(cp: &ConverterParams) -> CharacteristicCase {
    let x_m = cp.x_m();
    if cp.x_tilde_star() <= x_m {
        return CharacteristicCase::D;
    }
    let v1 = f1_vertex(cp);
    let v2 = f2_vertex(cp);
    match (v2 < x_m, v1 > x_m) {
        (false, false) => CharacteristicCase::A,
        (true, false) => CharacteristicCase::B,
        (false, true) => CharacteristicCase::C,
        (true, true) => {
            // two interior humps; the taller one decides
            if f2(v2, cp) >= f1(v1, cp) {
                CharacteristicCase::B
            } else {
                CharacteristicCase::C
            }
        }
    }
}

/// Peak deliverable steady-state power over (0, x~*) and where it occurs.
///
/// In case D with the f2 vertex beyond x~* the supremum sits at the open end
/// x~* and is not attained; that endpoint is returned.
pub fn max_load(cp: &ConverterParams) -> (f64, f64) {
    let x_m = cp.x_m();
    match classify_characteristic(cp) {
        CharacteristicCase::A => (f1(x_m, cp), x_m),
        CharacteristicCase::B => {
            let v2 = f2_vertex(cp);
            (cp.i_dc_max * cp.i_dc_max / (4.0 * cp.g_c), v2)
        }
        CharacteristicCase::C => {
            let v1 = f1_vertex(cp);
            (f1(v1, cp), v1)
        }
        CharacteristicCase::D => {
            let v2 = f2_vertex(cp);
            let xt = cp.x_tilde_star();
            if v2 < xt {
                (cp.i_dc_max * cp.i_dc_max / (4.0 * cp.g_c), v2)
            } else {
                (f2(xt, cp), xt)
            }
        }
    }
}

/// Real roots of a x^2 + b x + c = 0, computed without cancellation.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b == 0.0 { vec![] } else { vec![-c / b] };
    }
    let mut disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        // tangency lost to rounding
        if disc > -1e-12 * b * b {
            disc = 0.0;
        } else {
            return vec![];
        }
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

/// Both equilibria of the dc link carrying `u_bar` watts.
///
/// A load above the characteristic's peak is not an error: the report comes
/// back with no roots.
pub fn solve_equilibria(u_bar: f64, cp: &ConverterParams) -> Result<EquilibriumReport> {
    if !(u_bar > 0.0) || !u_bar.is_finite() {
        return Err(Error::param("u_bar", format!("load power must be positive, got {u_bar}")));
    }
    let x_m = cp.x_m();
    let x_hi = cp.v_dc_star + cp.i_dc_max / cp.k_c;
    let snap = 1e-9 * cp.v_dc_star;

    let mut roots: Vec<EquilibriumPoint> = Vec::with_capacity(4);
    let push = |x: f64, branch: CharBranch, roots: &mut Vec<EquilibriumPoint>| {
        if (x - x_m).abs() <= snap {
            if !roots.iter().any(|r| r.branch == CharBranch::Boundary) {
                roots.push(EquilibriumPoint { x: x_m, branch: CharBranch::Boundary });
            }
        } else {
            roots.push(EquilibriumPoint { x, branch });
        }
    };

    // f1(x) = u  <=>  (G_c + k_c) x^2 - k_c x* x + u = 0 on [x_m, x* + i/k_c]
    for x in quadratic_roots(cp.g_c + cp.k_c, -cp.k_c * cp.v_dc_star, u_bar) {
        if x >= x_m - snap && x <= x_hi {
            push(x, CharBranch::F1, &mut roots);
        }
    }
    // f2(x) = u  <=>  G_c x^2 - i x + u = 0 on (0, x_m)
    for x in quadratic_roots(cp.g_c, -cp.i_dc_max, u_bar) {
        if x > 0.0 && x <= x_m + snap {
            push(x, CharBranch::F2, &mut roots);
        }
    }
    roots.sort_by(|a, b| b.x.total_cmp(&a.x));
    roots.dedup_by(|a, b| a.x == b.x);

    let (u_max, x_at_max) = max_load(cp);
    let x_bar_1 = roots.first().copied();
    let x_bar_2 = match (roots.get(1), x_bar_1) {
        (Some(r), _) => Some(*r),
        (None, Some(r)) if r.branch == CharBranch::Boundary => Some(r),
        _ => None,
    };
    Ok(EquilibriumReport {
        u_bar,
        characteristic_case: classify_characteristic(cp),
        u_max,
        x_at_max,
        roots,
        x_bar_1,
        x_bar_2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent root finder: plain bisection on characteristic - u.
    fn bisect(cp: &ConverterParams, u: f64, mut lo: f64, mut hi: f64) -> f64 {
        let g = |x: f64| characteristic_power(x, cp).unwrap() - u;
        let glo = g(lo);
        assert!(glo * g(hi) <= 0.0, "bracket does not straddle a root");
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (g(mid) > 0.0) == (glo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Dense grid scan for the argmax over (0, x~*).
    fn grid_argmax(cp: &ConverterParams) -> (f64, f64) {
        let xt = cp.x_tilde_star();
        let n = 400_000;
        (1..n)
            .map(|k| xt * k as f64 / n as f64)
            .map(|x| (characteristic_power(x, cp).unwrap(), x))
            .fold((f64::MIN, 0.0), |a, b| if b.0 > a.0 { b } else { a })
    }

    #[test]
    fn characteristic_examples() {
        let cp = ConverterParams::nominal();
        let xs = cp.v_dc_star;
        assert_eq!(characteristic_power(xs, &cp).unwrap(), -cp.g_c * xs * xs);
        let x_m = cp.x_m();
        let (a, b) = (f1(x_m, &cp), f2(x_m, &cp));
        assert!((a - b).abs() <= 1e-9 * a.abs());
        let u = characteristic_power(x_m, &cp).unwrap();
        assert!((u - 178.055e3).abs() < 1.0, "{u}");
        assert!(characteristic_power(0.0, &cp).is_err());
        assert!(characteristic_power(-5.0, &cp).is_err());
    }

    #[test]
    fn nominal_is_case_a() {
        let cp = ConverterParams::nominal();
        assert_eq!(classify_characteristic(&cp), CharacteristicCase::A);
        let (u_max, x_at) = max_load(&cp);
        let (gu, gx) = grid_argmax(&cp);
        assert!((u_max - 178.055e3).abs() < 1.0);
        // grid spacing ~6 mV times the f2 slope ~71 W/V
        assert!(u_max >= gu && u_max - gu < 0.5);
        assert!((x_at - gx).abs() < 0.01);
    }

    #[test]
    fn large_loss_moves_peak_into_limited_piece() {
        let cp = ConverterParams { g_c: 0.02, ..ConverterParams::nominal() };
        assert!(cp.i_dc_max / (2.0 * cp.g_c) < cp.x_m());
        assert_eq!(classify_characteristic(&cp), CharacteristicCase::B);
        let (u_max, x_at) = max_load(&cp);
        let (gu, gx) = grid_argmax(&cp);
        assert!((u_max - cp.i_dc_max.powi(2) / (4.0 * cp.g_c)).abs() < 1e-9 * u_max);
        assert!((u_max - gu) / u_max < 1e-9);
        assert!((x_at - gx).abs() < 0.02);
    }

    #[test]
    fn soft_droop_moves_peak_into_droop_piece() {
        let cp = ConverterParams { k_c: 0.05, ..ConverterParams::nominal() };
        assert_eq!(classify_characteristic(&cp), CharacteristicCase::C);
        let (u_max, x_at) = max_load(&cp);
        let (gu, gx) = grid_argmax(&cp);
        assert!((u_max - gu) / u_max < 1e-9);
        assert!((x_at - gx).abs() < 0.02);
    }

    #[test]
    fn degenerate_when_allowable_voltage_below_knee() {
        // x~* < x_m needs G_c x* > i_max, so sweep k_c on a lossy link and
        // check the flag against a grid scan of the active branch
        let base = ConverterParams { g_c: 0.05, ..ConverterParams::nominal() };
        let mut flagged = 0;
        for k in (0..60).map(|j| 1e-3 * 1.3f64.powi(j)) {
            let cp = ConverterParams { k_c: k, ..base };
            let xt = cp.x_tilde_star();
            let droop_piece_reachable = (1..2000)
                .map(|n| xt * n as f64 / 2000.0)
                .any(|x| cp.droop_current(x) <= cp.i_dc_max);
            let is_d = classify_characteristic(&cp) == CharacteristicCase::D;
            if is_d {
                flagged += 1;
                assert!(!droop_piece_reachable, "k_c = {k}");
            } else {
                assert!(xt > cp.x_m(), "k_c = {k}");
            }
        }
        assert!(flagged > 0);

        let toy = ConverterParams {
            g_c: 1.0,
            k_c: 2.0,
            v_dc_star: 3.0,
            i_dc_max: 1.0,
            ..base
        };
        assert_eq!(toy.x_m(), 2.5);
        assert_eq!(toy.x_tilde_star(), 2.0);
        assert_eq!(classify_characteristic(&toy), CharacteristicCase::D);
        let (u_max, x_at) = max_load(&toy);
        assert_eq!(u_max, 0.25);
        assert_eq!(x_at, 0.5);
    }

    #[test]
    fn degenerate_with_lossy_link() {
        // G_c x* > i_max: x~* = k x*/(k+G) drops below x_m = x* - i/k
        let cp = ConverterParams { g_c: 0.05, k_c: 5.0, ..ConverterParams::nominal() };
        assert!(cp.x_tilde_star() < cp.x_m());
        assert_eq!(classify_characteristic(&cp), CharacteristicCase::D);
    }

    #[test]
    fn equilibria_match_bisection_oracle() {
        let cp = ConverterParams::nominal();
        let x_m = cp.x_m();
        for u in [165e3, 170e3, 175e3, 177e3] {
            let r = solve_equilibria(u, &cp).unwrap();
            assert_eq!(r.roots.len(), 2);
            let x1 = r.x_bar_1.unwrap();
            let x2 = r.x_bar_2.unwrap();
            assert_eq!(x1.branch, CharBranch::F1);
            assert_eq!(x2.branch, CharBranch::F2);
            let o1 = bisect(&cp, u, x_m, cp.x_tilde_star());
            let o2 = bisect(&cp, u, 1.0, x_m);
            assert!((x1.x - o1).abs() < 1e-6, "{u}: {} vs {o1}", x1.x);
            assert!((x2.x - o2).abs() < 1e-6, "{u}: {} vs {o2}", x2.x);
            assert!(0.0 < x2.x && x2.x <= x_m && x_m <= x1.x && x1.x < cp.x_tilde_star());
        }
        let r = solve_equilibria(175e3, &cp).unwrap();
        assert!((r.x_bar_2.unwrap().x - 2396.913).abs() < 1e-3);
        assert!((r.x_bar_1.unwrap().x - 2439.95391).abs() < 1e-5);
        let r = solve_equilibria(177e3, &cp).unwrap();
        assert!((r.x_bar_2.unwrap().x - 2425.083).abs() < 1e-3);
        assert!((r.x_bar_1.unwrap().x - 2439.95340).abs() < 1e-5);
    }

    #[test]
    fn overload_has_no_equilibrium() {
        let cp = ConverterParams::nominal();
        let r = solve_equilibria(179e3, &cp).unwrap();
        assert!(!r.has_equilibrium());
        assert!(r.x_bar_1.is_none() && r.x_bar_2.is_none());
        assert!(solve_equilibria(0.0, &cp).is_err());
        assert!(solve_equilibria(-1.0, &cp).is_err());
    }

    #[test]
    fn peak_load_gives_merged_equilibrium() {
        let cp = ConverterParams::nominal();
        let (u_max, _) = max_load(&cp);
        let r = solve_equilibria(u_max, &cp).unwrap();
        assert_eq!(r.roots.len(), 1);
        assert_eq!(r.x_bar_1.unwrap().branch, CharBranch::Boundary);
        assert_eq!(r.x_bar_1, r.x_bar_2);
    }

    proptest! {
        #[test]
        fn solve_recovers_voltage(frac in 0.01f64..0.9999) {
            let cp = ConverterParams::nominal();
            let x = frac * cp.x_tilde_star();
            prop_assume!((x - cp.x_m()).abs() > 1e-6);
            let u = characteristic_power(x, &cp).unwrap();
            let r = solve_equilibria(u, &cp).unwrap();
            prop_assert!(r.roots.iter().any(|p| (p.x - x).abs() < 1e-6),
                "{x} not among {:?}", r.roots);
        }

        #[test]
        fn equilibria_merge_as_load_rises(a in 0.5f64..0.999, b in 0.5f64..0.999) {
            let cp = ConverterParams::nominal();
            let (u_max, x_at) = max_load(&cp);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-6);
            let gap = |f: f64| {
                let r = solve_equilibria(f * u_max, &cp).unwrap();
                let (x1, x2) = (r.x_bar_1.unwrap().x, r.x_bar_2.unwrap().x);
                prop_assert!(x2 <= x_at && x_at <= x1);
                Ok(x1 - x2)
            };
            prop_assert!(gap(hi)? < gap(lo)?);
        }

        #[test]
        fn characteristic_is_continuous_at_knee(k in 10.0f64..5000.0, i in 1.0f64..500.0) {
            let cp = ConverterParams { k_c: k, i_dc_max: i, ..ConverterParams::nominal() };
            let x_m = cp.x_m();
            prop_assume!(x_m > 0.0);
            let (a, b) = (f1(x_m, &cp), f2(x_m, &cp));
            // x* - x_m = i/k_c loses digits to cancellation; scale by the
            // size of the cancelling terms
            let scale = cp.k_c * x_m * cp.v_dc_star;
            prop_assert!((a - b).abs() <= 1e-14 * scale);
        }
    }
}
