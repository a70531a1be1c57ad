use rayon::prelude::*;

use crate::equilibrium::solve_equilibria;
use crate::error::{Error, Result};
use crate::model::{ConverterParams, SystemParams};

use super::systems::{class_b_full_equilibrium, ClassBFullModel, DcLinkModel};
use super::{
    classify_outcome, integrate, ClassifyOptions, Outcome, SettleCriterion, SimOptions, Target,
};

/// Interior probes per bisection round. Fixed so the result does not depend
/// on the thread count.
const PROBES: usize = 4;

/// Locate the boundary between converging and collapsing initial voltages by
/// repeated subdivision of `bracket`. `probe` maps an initial voltage to the
/// simulated outcome; probes within a round run concurrently.
pub fn empirical_roa_boundary<F>(probe: F, bracket: (f64, f64), tol_v: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<Outcome> + Sync,
{
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) || !(tol_v > 0.0) {
        return Err(Error::param("bracket", format!("need lo < hi and tol > 0, got ({lo}, {hi}), {tol_v}")));
    }
    let stable = |o: &Outcome| match o {
        Outcome::Converged { .. } => Ok(true),
        Outcome::Collapsed { .. } | Outcome::Diverged { .. } => Ok(false),
        Outcome::Inconclusive { reason } => Err(reason.clone()),
    };
    let (a, b) = rayon::join(|| probe(lo), || probe(hi));
    let (a, b) = (a?, b?);
    let (sa, sb) = match (stable(&a), stable(&b)) {
        (Ok(x), Ok(y)) => (x, y),
        _ => {
            return Err(Error::Bracket {
                lo,
                hi,
                outcome: format!("{} / {}", a.label(), b.label()),
            })
        }
    };
    if sa == sb {
        return Err(Error::Bracket { lo, hi, outcome: a.label().to_string() });
    }
    while hi - lo > tol_v {
        let step = (hi - lo) / (PROBES + 1) as f64;
        let xs: Vec<f64> = (1..=PROBES).map(|k| lo + step * k as f64).collect();
        let outs: Vec<Result<Outcome>> = xs.par_iter().map(|&x| probe(x)).collect();
        let mut flags = Vec::with_capacity(PROBES);
        for (x, o) in xs.iter().zip(outs) {
            let o = o?;
            flags.push(stable(&o).map_err(|r| Error::Domain(format!("inconclusive probe at {x} V: {r}")))?);
        }
        // first probe whose class differs from the low end
        match flags.iter().position(|&f| f != sa) {
            Some(0) => hi = xs[0],
            Some(k) => {
                lo = xs[k - 1];
                hi = xs[k];
            }
            None => lo = xs[PROBES - 1],
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Outcome of the isolated class-A dc link started at `v0` with P_c = `u_bar`.
pub fn class_a_dc_outcome(cp: &ConverterParams, u_bar: f64, v0: f64, t_end: f64, tol: f64) -> Result<Outcome> {
    let rep = solve_equilibria(u_bar, cp)?;
    let x1 = rep.x_bar_1.ok_or_else(|| Error::Domain(format!("no equilibrium at {u_bar} W")))?.x;
    let x2 = rep.x_bar_2.map_or(0.0, |e| e.x);
    let band = 0.5 * (x1 - x2).min(cp.x_tilde_star() - x1);
    let target = Target { name: "x_bar_1".into(), state: vec![x1], band: vec![band] };
    let dwell = 0.5;
    let opts = SimOptions {
        tol,
        output_interval: Some(1e-3),
        settle: Some(SettleCriterion { target: target.clone(), dwell }),
        ..Default::default()
    };
    let mut m = DcLinkModel::new(*cp, u_bar)?;
    let tr = integrate(&mut m, [v0], &[], t_end, &opts)?;
    let co = ClassifyOptions { dwell, v_dc_column: Some(0), v_floor: m.limits.v_floor };
    Ok(classify_outcome(&tr, &[target], &co))
}

/// Empirical ROA boundary of the isolated class-A dc link.
pub fn class_a_roa_boundary(cp: &ConverterParams, u_bar: f64, bracket: (f64, f64), tol_v: f64, tol: f64) -> Result<f64> {
    empirical_roa_boundary(|v0| class_a_dc_outcome(cp, u_bar, v0, 30.0, tol), bracket, tol_v)
}

/// Outcome of the class-B two-bus model started from its equilibrium with
/// the dc voltage replaced by `v0`.
pub fn class_b_full_outcome(sys: &SystemParams, v0: f64, t_end: f64, tol: f64) -> Result<Outcome> {
    let eq = class_b_full_equilibrium(sys)?;
    let target = class_b_target(&eq.to_array());
    let dwell = 0.5;
    let opts = SimOptions {
        tol,
        output_interval: Some(1e-3),
        settle: Some(SettleCriterion { target: target.clone(), dwell }),
        ..Default::default()
    };
    let mut m = ClassBFullModel::new(*sys)?;
    let mut y = eq.to_array();
    y[0] = v0;
    let tr = integrate(&mut m, y, &[], t_end, &opts)?;
    let co = ClassifyOptions { dwell, v_dc_column: Some(0), v_floor: m.limits.v_floor };
    Ok(classify_outcome(&tr, &[target], &co))
}

/// Band around a class-B two-bus equilibrium.
pub fn class_b_target(eq: &[f64; 4]) -> Target {
    Target {
        name: "class_b_equilibrium".into(),
        state: eq.to_vec(),
        band: vec![0.5, 1e-5, 1e-4, 1e-2],
    }
}

/// Empirical ROA boundary probe for the class-B two-bus model. For the
/// nominal parameters every probe converges and a bracket error results.
pub fn class_b_roa_boundary(sys: &SystemParams, bracket: (f64, f64), tol_v: f64, tol: f64) -> Result<f64> {
    empirical_roa_boundary(|v0| class_b_full_outcome(sys, v0, 5.0, tol), bracket, tol_v)
}
