//! Certificates for class-A converters: region of attraction, exponential
//! rate, small-signal L_p gain and the Chetaev instability test, all on the
//! isolated dc link.

use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    characteristic_unchecked, classify_characteristic, solve_equilibria, CharacteristicCase,
    EquilibriumReport,
};
use crate::error::{Error, Result};
use crate::model::ConverterParams;

/// One inequality a certificate depends on, with both sides evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideCondition {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl SideCondition {
    fn greater(name: &str, lhs: f64, rhs: f64) -> Self {
        SideCondition { name: name.to_string(), lhs, rhs, holds: lhs > rhs }
    }
}

fn first_violation(conds: &[SideCondition]) -> Option<String> {
    conds
        .iter()
        .find(|c| !c.holds)
        .map(|c| format!("{} (lhs = {}, rhs = {})", c.name, c.lhs, c.rhs))
}

/// Region of attraction (x_bar_2, x~*) of the high equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoaCert {
    /// V, open
    pub lower: f64,
    /// V, open
    pub upper: f64,
    /// V
    pub equilibrium: f64,
    pub conditions: Vec<SideCondition>,
}

impl RoaCert {
    pub fn contains(&self, x: f64) -> bool {
        self.lower < x && x < self.upper
    }
}

/// Issue the region-of-attraction certificate at load `u_bar` (W).
pub fn roa_certificate(u_bar: f64, cp: &ConverterParams) -> Result<RoaCert> {
    cp.validate()?;
    let case = classify_characteristic(cp);
    if case != CharacteristicCase::A {
        return Err(Error::refused("roa", format!("characteristic is case {case:?}, the certificate needs case A")));
    }
    let rep = solve_equilibria(u_bar, cp)?;
    let (x1, x2) = match (rep.x_bar_1, rep.x_bar_2) {
        (Some(a), Some(b)) if a.x > b.x => (a.x, b.x),
        _ => {
            return Err(Error::refused(
                "roa",
                format!("u_bar < u_max needs two distinct equilibria (u_bar = {u_bar}, u_max = {})", rep.u_max),
            ))
        }
    };
    let x_m = cp.x_m();
    let xt = cp.x_tilde_star();
    let conditions = vec![
        SideCondition::greater("x_bar_1 > x_m", x1, x_m),
        SideCondition::greater("x_m > x~*/2", x_m, xt / 2.0),
        // dV1/dt < 0 needs y > x~* - 2 x_bar_1 on the whole droop piece
        SideCondition::greater("x_m - x_bar_1 > x~* - 2 x_bar_1", x_m - x1, xt - 2.0 * x1),
        SideCondition::greater("i_dc_max/(2 G_c) > x_bar_2", cp.i_dc_max / (2.0 * cp.g_c), x2),
    ];
    if let Some(v) = first_violation(&conditions) {
        return Err(Error::refused("roa", v));
    }
    Ok(RoaCert { lower: x2, upper: xt, equilibrium: x1, conditions })
}

/// Exponential stability of the high equilibrium inside the droop piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpRateCert {
    /// S, negative
    pub m: f64,
    /// C_c/(2|m|) (s)
    pub decay_time_constant: f64,
    /// V
    pub equilibrium: f64,
}

impl ExpRateCert {
    /// |y(t)| envelope from |y(0)|.
    pub fn envelope(&self, y0: f64, t: f64, cp: &ConverterParams) -> f64 {
        y0.abs() * (self.m * t / cp.c_c).exp()
    }
}

pub fn exp_rate(u_bar: f64, cp: &ConverterParams) -> Result<ExpRateCert> {
    cp.validate()?;
    if u_bar < 0.0 || !u_bar.is_finite() {
        return Err(Error::param("u_bar", format!("must be non-negative, got {u_bar}")));
    }
    let x_m = cp.x_m();
    let x1 = if u_bar == 0.0 {
        cp.x_tilde_star()
    } else {
        solve_equilibria(u_bar, cp)?
            .x_bar_1
            .ok_or_else(|| Error::refused("exp_rate", format!("no equilibrium at u_bar = {u_bar} W")))?
            .x
    };
    if x1 < x_m {
        return Err(Error::refused("exp_rate", format!("x_bar_1 = {x1} lies below x_m = {x_m}")));
    }
    let m = -(cp.g_c + cp.k_c) + u_bar / (x1 * x_m);
    if m >= 0.0 {
        return Err(Error::refused("exp_rate", format!("m = {m} must be negative")));
    }
    Ok(ExpRateCert { m, decay_time_constant: cp.c_c / (2.0 * m.abs()), equilibrium: x1 })
}

/// Small-signal finite-gain L_p bound on the dc-voltage deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpBoundCert {
    /// 1/(|m| x_m) (V/W)
    pub gain: f64,
    pub beta: f64,
    /// Norm order; `f64::INFINITY` for the sup norm.
    pub p: f64,
    /// Radius of the initial-state ball (V).
    pub r: f64,
    /// Input domain radius (W).
    pub r_v: f64,
    /// min{r_v, |m| x_m r} (W)
    pub input_bound: f64,
    pub m: f64,
    pub equilibrium: f64,
}

impl LpBoundCert {
    /// Bound on ||y||_p given ||v||_p.
    pub fn output_bound(&self, v_norm: f64) -> f64 {
        self.gain * v_norm + self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LpOptions {
    /// Defaults to the largest ball inside the droop piece.
    pub r: Option<f64>,
    /// Defaults to the converter headroom P_c^max - P_c*.
    pub r_v: Option<f64>,
}

pub fn lp_bound(u_bar: f64, cp: &ConverterParams, p: f64, y0: f64, v_sup: f64, opts: LpOptions) -> Result<LpBoundCert> {
    if !(p >= 1.0) {
        return Err(Error::param("p", format!("must lie in [1, inf], got {p}")));
    }
    let rate = exp_rate(u_bar, cp)?;
    let x1 = rate.equilibrium;
    let m = rate.m;
    let x_m = cp.x_m();
    let below = x1 - x_m;
    let above = cp.x_tilde_star() - x1;
    let r = match opts.r {
        Some(r) => r,
        None if below < above => below,
        None => above * (1.0 - f64::EPSILON),
    };
    if !(r > 0.0 && r <= below && r < above) {
        return Err(Error::refused(
            "lp_bound",
            format!("ball radius r = {r} must satisfy 0 < r <= x_bar_1 - x_m = {below} and r < x~* - x_bar_1 = {above}"),
        ));
    }
    let r_v = opts.r_v.unwrap_or_else(|| cp.p_c_max_dev());
    if !(r_v > 0.0) {
        return Err(Error::param("r_v", format!("must be positive, got {r_v}")));
    }
    if y0.abs() > r {
        return Err(Error::refused("lp_bound", format!("|y0| = {} exceeds r = {r}", y0.abs())));
    }
    let input_bound = r_v.min(m.abs() * x_m * r);
    if v_sup.abs() > input_bound {
        return Err(Error::refused(
            "lp_bound",
            format!("sup|v| = {} W exceeds min{{r_v, |m| x_m r}} = {input_bound} W", v_sup.abs()),
        ));
    }
    let beta = if p.is_infinite() {
        y0.abs()
    } else {
        (cp.c_c / (p * m.abs())).powf(1.0 / p) * y0.abs()
    };
    Ok(LpBoundCert { gain: 1.0 / (m.abs() * x_m), beta, p, r, r_v, input_bound, m, equilibrium: x1 })
}

/// Chetaev instability test at a (possibly former) equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityCert {
    pub holds: bool,
    /// min{x_bar_1, x~* - x_bar_1} (V)
    pub r: f64,
    /// min over y in [-r, 0] of u_bar - f(y + x_bar_1) (W)
    pub worst_margin: f64,
    /// Where the worst margin occurs (V, relative to x_bar_1).
    pub worst_y: f64,
    pub u_bar: f64,
    pub x_bar_1: f64,
}

/// Checks u_bar > f(y + x_bar_1) for every y in [-r, 0). The sup of the
/// piecewise-concave characteristic on the closed interval is located
/// exactly from piece boundaries and parabola vertices, and the endpoint
/// y = 0 is included so an equilibrium never passes.
pub fn chetaev_instability(u_bar: f64, cp: &ConverterParams, x_bar_1: f64) -> Result<InstabilityCert> {
    cp.validate()?;
    let xt = cp.x_tilde_star();
    if !(x_bar_1 > 0.0 && x_bar_1 < xt) {
        return Err(Error::Domain(format!("x_bar_1 = {x_bar_1} must lie in (0, x~* = {xt})")));
    }
    let r = x_bar_1.min(xt - x_bar_1);
    let (a, b) = (x_bar_1 - r, x_bar_1);
    let mut cands = vec![a, b, cp.x_m(), cp.v_dc_star + cp.i_dc_max / cp.k_c];
    cands.push(cp.k_c * cp.v_dc_star / (2.0 * (cp.k_c + cp.g_c)));
    if cp.g_c > 0.0 {
        cands.push(cp.i_dc_max / (2.0 * cp.g_c));
    }
    let (x_worst, f_max) = cands
        .into_iter()
        .filter(|x| (a..=b).contains(x))
        .map(|x| (x, characteristic_unchecked(x, cp)))
        .fold((b, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
    let worst_margin = u_bar - f_max;
    Ok(InstabilityCert {
        holds: worst_margin > 0.0,
        r,
        worst_margin,
        worst_y: x_worst - x_bar_1,
        u_bar,
        x_bar_1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LyapunovFn {
    V1,
    V2,
    V3,
    V4,
}

/// Value and flow derivative of one of the dc-link Lyapunov functions.
///
/// V1 and V4 are centred on the high equilibrium, V2 and V3 on the low one;
/// `equilibrium` is that centre. The derivative is taken along the unforced
/// dc-link flow at load `u_bar`.
pub fn lyapunov_eval(which: LyapunovFn, y: f64, cp: &ConverterParams, u_bar: f64, equilibrium: f64) -> Result<(f64, f64)> {
    let c = cp.c_c;
    let xe = equilibrium;
    let x = y + xe;
    let xt = cp.x_tilde_star();
    let x_m = cp.x_m();
    let (lo, hi, hi_closed) = match which {
        LyapunovFn::V1 => (x_m - xe, xt - xe, false),
        LyapunovFn::V2 | LyapunovFn::V3 => (-xe, x_m - xe, true),
        LyapunovFn::V4 => (-xe, xt - xe, false),
    };
    let lo_closed = which == LyapunovFn::V1;
    let inside = (if lo_closed { y >= lo } else { y > lo }) && (if hi_closed { y <= hi } else { y < hi });
    if !inside {
        return Err(Error::Domain(format!("y = {y} outside the domain of {which:?}")));
    }
    // C_c dx/dt = -G x + sat(k (x* - x), i) - u/x
    let c_xdot = (characteristic_unchecked(x, cp) - u_bar) / x;
    Ok(match which {
        LyapunovFn::V1 => (0.5 * c * y * y, y * c_xdot),
        LyapunovFn::V2 | LyapunovFn::V4 => (0.5 * c * (xe * xe - x * x), -x * c_xdot),
        LyapunovFn::V3 => (0.5 * c * (x * x - xe * xe), x * c_xdot),
    })
}

/// All class-A certificates for one converter of a fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverterCertificates {
    pub index: usize,
    pub u_bar: f64,
    pub equilibria: EquilibriumReport,
    pub roa: Option<RoaCert>,
    pub exp_rate: Option<ExpRateCert>,
    pub instability: InstabilityCert,
    /// Reasons for every refused certificate.
    pub refusals: Vec<String>,
}

/// Certificates for each converter independently. Without an equilibrium the
/// instability test is taken at the peak of the characteristic.
pub fn per_converter_certificates(cps: &[ConverterParams], loads: &[f64]) -> Result<Vec<Result<ConverterCertificates>>> {
    if cps.len() != loads.len() {
        return Err(Error::param(
            "loads",
            format!("{} converters but {} loads", cps.len(), loads.len()),
        ));
    }
    Ok(cps
        .iter()
        .zip(loads)
        .enumerate()
        .map(|(index, (cp, &u))| {
            let equilibria = solve_equilibria(u, cp)?;
            let mut refusals = Vec::new();
            let roa = roa_certificate(u, cp).map_err(|e| refusals.push(e.to_string())).ok();
            let exp = exp_rate(u, cp).map_err(|e| refusals.push(e.to_string())).ok();
            let x_ref = equilibria.x_bar_1.map_or(equilibria.x_at_max, |e| e.x);
            let instability = chetaev_instability(u, cp, x_ref)?;
            Ok(ConverterCertificates { index, u_bar: u, equilibria, roa, exp_rate: exp, instability, refusals })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cp() -> ConverterParams {
        ConverterParams::nominal()
    }

    fn toy() -> ConverterParams {
        ConverterParams { c_c: 1.0, g_c: 0.0, k_c: 1.0, i_dc_max: 1.0, v_dc_star: 2.0, ..cp() }
    }

    #[test]
    fn roa_at_175_kw() {
        let c = roa_certificate(175e3, &cp()).unwrap();
        assert_relative_eq!(c.lower, 2396.9135, max_relative = 1e-7);
        assert_relative_eq!(c.upper, 2439.998734, max_relative = 1e-9);
        assert!(c.conditions.iter().all(|s| s.holds));
        let half = &c.conditions[1];
        assert!(half.lhs > 2439.95 && (half.rhs - 1219.999).abs() < 1e-3);
        let chet = &c.conditions[3];
        assert!((chet.lhs - 75.0 / 0.00166).abs() < 1e-6);
    }

    #[test]
    fn roa_refusals_name_the_inequality() {
        match roa_certificate(179e3, &cp()) {
            Err(Error::CertificateRefused { violated, .. }) => assert!(violated.contains("u_max")),
            other => panic!("{other:?}"),
        }
        let lossy = ConverterParams { g_c: 0.02, ..cp() };
        match roa_certificate(100e3, &lossy) {
            Err(Error::CertificateRefused { violated, .. }) => assert!(violated.contains("case B")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exp_rate_examples() {
        let e = exp_rate(175e3, &cp()).unwrap();
        assert_relative_eq!(e.m, -1599.9714, max_relative = 1e-6);
        assert_relative_eq!(e.decay_time_constant, 2.5e-6, max_relative = 1e-4);
        let z = exp_rate(0.0, &cp()).unwrap();
        assert_eq!(z.m, -(cp().g_c + cp().k_c));
        let u = 0.75;
        let t = exp_rate(u, &toy()).unwrap();
        assert!((t.equilibrium - 1.5).abs() < 1e-12);
        assert!((t.m + 0.5).abs() < 1e-12);
    }

    #[test]
    fn lp_bound_examples() {
        let c = lp_bound(175e3, &cp(), f64::INFINITY, 0.0, 2e3, LpOptions::default()).unwrap();
        assert_relative_eq!(c.gain, 2.5616e-7, max_relative = 1e-4);
        assert!((c.output_bound(2e3) - 5.12e-4).abs() < 1e-6);
        assert_eq!(c.r_v, cp().p_c_max_dev());
        let y0 = 2e-4;
        let inf = lp_bound(175e3, &cp(), f64::INFINITY, y0, 0.0, LpOptions::default()).unwrap();
        assert_eq!(inf.beta, y0);
        let one = lp_bound(175e3, &cp(), 1.0, y0, 0.0, LpOptions::default()).unwrap();
        assert_relative_eq!(one.beta, cp().c_c / one.m.abs() * y0, max_relative = 1e-12);
    }

    #[test]
    fn lp_bound_refuses_large_input() {
        match lp_bound(175e3, &cp(), f64::INFINITY, 0.0, 5e3, LpOptions::default()) {
            Err(Error::CertificateRefused { violated, .. }) => assert!(violated.contains("exceeds min{r_v")),
            other => panic!("{other:?}"),
        }
        assert!(lp_bound(175e3, &cp(), 0.5, 0.0, 1.0, LpOptions::default()).is_err());
        assert!(lp_bound(175e3, &cp(), 2.0, 1.0, 1.0, LpOptions::default()).is_err());
    }

    #[test]
    fn chetaev_examples() {
        let x1 = solve_equilibria(175e3, &cp()).unwrap().x_bar_1.unwrap().x;
        let c = chetaev_instability(179e3, &cp(), x1).unwrap();
        assert!(c.holds);
        assert!((c.worst_margin - (179e3 - 178055.186)).abs() < 0.01, "{}", c.worst_margin);
        assert!(!chetaev_instability(175e3, &cp(), x1).unwrap().holds);
        let x1 = solve_equilibria(177e3, &cp()).unwrap().x_bar_1.unwrap().x;
        let c = chetaev_instability(177e3, &cp(), x1).unwrap();
        assert!(!c.holds && c.worst_margin < 0.0);
    }

    /// Dense-grid oracle for the sup of f over [x1 - r, x1].
    fn grid_sup(cp: &ConverterParams, x1: f64) -> f64 {
        let r = x1.min(cp.x_tilde_star() - x1);
        let n = 200_000;
        (0..=n)
            .map(|k| characteristic_unchecked(x1 - r + r * k as f64 / n as f64, cp))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn chetaev_matches_grid_oracle() {
        for x1 in [2439.9535, 2439.96, 2439.99, 2439.9987] {
            let c = chetaev_instability(0.0, &cp(), x1).unwrap();
            let g = grid_sup(&cp(), x1);
            // the exact sup is never below a sampled value
            assert!(-c.worst_margin >= g - 1e-6);
            assert!(-c.worst_margin - g < 1.0);
        }
    }

    #[test]
    fn lyapunov_at_origin() {
        let rep = solve_equilibria(175e3, &cp()).unwrap();
        let (x1, x2) = (rep.x_bar_1.unwrap().x, rep.x_bar_2.unwrap().x);
        for (f, xe) in [(LyapunovFn::V1, x1), (LyapunovFn::V2, x2), (LyapunovFn::V3, x2), (LyapunovFn::V4, x1)] {
            let (v, _) = lyapunov_eval(f, 0.0, &cp(), 175e3, xe).unwrap();
            assert_eq!(v, 0.0);
        }
        assert!(lyapunov_eval(LyapunovFn::V1, -1.0, &cp(), 175e3, x1).is_err());
        assert!(lyapunov_eval(LyapunovFn::V2, 200.0, &cp(), 175e3, x2).is_err());
    }

    #[test]
    fn lyapunov_derivative_matches_chain_rule() {
        let u = 175e3;
        let x1 = solve_equilibria(u, &cp()).unwrap().x_bar_1.unwrap().x;
        let y = 0.02;
        let (_, vdot) = lyapunov_eval(LyapunovFn::V1, y, &cp(), u, x1).unwrap();
        let xdot = crate::model::dc_link_rate(
            x1 + y,
            u,
            &cp(),
            crate::model::Branch::of(cp().droop_current(x1 + y), cp().i_dc_max),
        );
        assert_relative_eq!(vdot, cp().c_c * y * xdot, max_relative = 1e-9);
    }

    #[test]
    fn fleet_certificates() {
        assert!(per_converter_certificates(&[], &[]).unwrap().is_empty());
        let same = per_converter_certificates(&[cp(); 3], &[175e3; 3]).unwrap();
        let a = same[0].as_ref().unwrap();
        for c in &same {
            let c = c.as_ref().unwrap();
            assert_eq!((c.roa.clone(), c.exp_rate.clone(), c.instability.holds), (a.roa.clone(), a.exp_rate.clone(), a.instability.holds));
        }
        let mixed = per_converter_certificates(&[cp(); 3], &[175e3, 179e3, 170e3]).unwrap();
        let holds: Vec<bool> = mixed.iter().map(|c| c.as_ref().unwrap().instability.holds).collect();
        assert_eq!(holds, vec![false, true, false]);
        assert!(per_converter_certificates(&[cp()], &[]).is_err());
    }

    proptest! {
        #[test]
        fn chetaev_monotone_in_load(u in 150e3f64..200e3, du in 0.0f64..1e4, x1 in 2439.9532f64..2439.9985) {
            let a = chetaev_instability(u, &cp(), x1).unwrap();
            let b = chetaev_instability(u + du, &cp(), x1).unwrap();
            prop_assert!(!a.holds || b.holds);
        }

        #[test]
        fn v1_decreases_on_droop_piece(u in 100e3f64..178e3, s in 0.0f64..1.0) {
            let rep = solve_equilibria(u, &cp()).unwrap();
            let x1 = rep.x_bar_1.unwrap().x;
            let lo = cp().x_m() - x1;
            let hi = cp().x_tilde_star() - x1;
            let y = lo + s * (hi - lo);
            prop_assume!(y != 0.0 && y < hi);
            let (_, vdot) = lyapunov_eval(LyapunovFn::V1, y, &cp(), u, x1).unwrap();
            prop_assert!(vdot < 0.0);
        }

        #[test]
        fn v2_increases_below_low_equilibrium(u in 100e3f64..178e3, s in 0.0f64..1.0) {
            let rep = solve_equilibria(u, &cp()).unwrap();
            let x2 = rep.x_bar_2.unwrap().x;
            let y = -x2 * (1e-6 + s * (1.0 - 2e-6));
            let (v, vdot) = lyapunov_eval(LyapunovFn::V2, y, &cp(), u, x2).unwrap();
            prop_assert!(v > 0.0 && vdot > 0.0);
        }
    }
}
