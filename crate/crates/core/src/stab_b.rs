//! Class-B results on the reduced frequency model: global asymptotic
//! stability, input-to-state gains and their center-of-inertia extension.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CoiConverter, CoiParams, MachineParams};
use crate::sim::{LogEntry, Trajectory};

/// Q = diag(H, tau/(2 d_pg)), the weight of V5 = z' Q z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovQ {
    pub q11: f64,
    pub q22: f64,
}

impl LyapunovQ {
    pub fn new(h: f64, tau: f64, d_pg: f64) -> Result<Self> {
        if !(h > 0.0 && tau > 0.0 && d_pg > 0.0) {
            return Err(Error::param("Q", format!("needs H, tau_g, d_pg > 0, got {h}, {tau}, {d_pg}")));
        }
        Ok(LyapunovQ { q11: h, q22: tau / (2.0 * d_pg) })
    }

    pub fn lambda_min(&self) -> f64 {
        self.q11.min(self.q22)
    }

    pub fn lambda_max(&self) -> f64 {
        self.q11.max(self.q22)
    }

    /// sqrt(lambda_max / lambda_min)
    pub fn c(&self) -> f64 {
        (self.lambda_max() / self.lambda_min()).sqrt()
    }

    pub fn value(&self, z: [f64; 2]) -> f64 {
        self.q11 * z[0] * z[0] + self.q22 * z[1] * z[1]
    }
}

/// V5 and its derivative along the reduced model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct V5 {
    pub q: LyapunovQ,
    pub d_pg: f64,
    pub d_pc: f64,
    pub p_max: f64,
}

impl V5 {
    pub fn value(&self, z: [f64; 2]) -> f64 {
        self.q.value(z)
    }

    /// -P^2/d_pg - omega sat(d_pc omega, P_max) + w omega
    pub fn derivative(&self, z: [f64; 2], w: f64) -> f64 {
        let s = (self.d_pc * z[0]).clamp(-self.p_max, self.p_max);
        -z[1] * z[1] / self.d_pg - z[0] * s + w * z[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasCheck {
    pub holds: bool,
    pub v5: Option<V5>,
}

/// Global asymptotic stability holds for every positive pair of droops.
pub fn gas_check(mp: &MachineParams, d_pg: f64, d_pc: f64, p_max: f64) -> GasCheck {
    let holds = d_pg > 0.0 && d_pc > 0.0;
    let v5 = if holds && p_max > 0.0 {
        LyapunovQ::new(mp.h_g, mp.tau_g, d_pg).ok().map(|q| V5 { q, d_pg, d_pc, p_max })
    } else {
        None
    };
    GasCheck { holds, v5 }
}

/// Input-to-state gains. `pairs` are the (P_max, d_pc) choices the gain is
/// built from; a single pair for the two-bus model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssCert {
    pub theta: f64,
    pub pairs: Vec<(f64, f64)>,
    pub d_pg: f64,
    pub n1: usize,
    pub q: LyapunovQ,
    pub c: f64,
    /// Open interval of admissible w.
    pub w_domain: (f64, f64),
}

impl IssCert {
    fn check(&self, w_abs: f64) -> Result<()> {
        if !(w_abs >= 0.0) || w_abs >= self.w_domain.1 {
            return Err(Error::Domain(format!(
                "|w| = {w_abs} outside the certificate domain [0, {})",
                self.w_domain.1
            )));
        }
        Ok(())
    }

    pub fn chi1(&self, w_abs: f64) -> Result<f64> {
        self.check(w_abs)?;
        let n = self.n1 as f64;
        Ok(self
            .pairs
            .iter()
            .map(|&(p, d)| p / d * (w_abs / (self.theta * n * p)).atanh())
            .fold(0.0, f64::max))
    }

    pub fn chi2(&self, w_abs: f64) -> Result<f64> {
        Ok((w_abs * self.d_pg / self.theta * self.chi1(w_abs)?).sqrt())
    }

    pub fn rho(&self, w_abs: f64) -> Result<f64> {
        Ok(self.chi1(w_abs)?.max(self.chi2(w_abs)?))
    }

    pub fn gamma(&self, w_abs: f64) -> Result<f64> {
        Ok(self.c * self.rho(w_abs)?)
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(Error::param("theta", format!("must lie in (0, 1), got {theta}")))
    }
}

/// Gains for the two-bus reduced model.
pub fn iss_gains(theta: f64, mp: &MachineParams, d_pc: f64, p_max: f64) -> Result<IssCert> {
    check_theta(theta)?;
    if !(p_max > 0.0) {
        return Err(Error::param("p_c_max_dev", format!("must be positive, got {p_max}")));
    }
    if !(d_pc > 0.0) {
        return Err(Error::param("d_pc", format!("must be positive, got {d_pc}")));
    }
    let q = LyapunovQ::new(mp.h_g, mp.tau_g, mp.d_pg)?;
    Ok(IssCert {
        theta,
        pairs: vec![(p_max, d_pc)],
        d_pg: mp.d_pg,
        n1: 1,
        q,
        c: q.c(),
        w_domain: (-theta * p_max, theta * p_max),
    })
}

/// Aggregate a fleet into the center-of-inertia model.
pub fn coi_aggregate(machines: &[MachineParams], converters: &[CoiConverter]) -> Result<CoiParams> {
    CoiParams::from_fleet(machines, converters)
}

/// Converter minimizing P tanh(d |omega| / P) at `omega`; ties go to the
/// lower index.
pub fn conservative_converter(converters: &[CoiConverter], omega: f64) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (i, c) in converters.iter().enumerate() {
        let v = c.p_c_max_dev * (c.d_pc * omega.abs() / c.p_c_max_dev).tanh();
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Frequencies on which the minimizing converter is sampled.
pub fn selection_grid(converters: &[CoiConverter]) -> Vec<f64> {
    let knees = converters.iter().map(|c| c.p_c_max_dev / c.d_pc);
    let lo = knees.clone().fold(f64::INFINITY, f64::min) * 1e-6;
    let hi = knees.fold(0.0, f64::max) * 1e6;
    let n = 4000;
    (0..=n).map(|k| lo * (hi / lo).powf(k as f64 / n as f64)).collect()
}

/// Gains for the center-of-inertia model. Every converter that is the
/// minimizer somewhere on the frequency grid (or in the large-deviation
/// limit) contributes, and the largest resulting gain is used.
pub fn coi_iss_gains(theta: f64, coi: &CoiParams) -> Result<IssCert> {
    check_theta(theta)?;
    let convs = &coi.converters;
    if convs.is_empty() {
        return Err(Error::param("converters", "need at least one converter"));
    }
    for c in convs {
        if !(c.p_c_max_dev > 0.0 && c.d_pc > 0.0) {
            return Err(Error::param("converters", "every converter needs positive d_pc and headroom"));
        }
    }
    let mut chosen = vec![false; convs.len()];
    for w in selection_grid(convs) {
        chosen[conservative_converter(convs, w)] = true;
    }
    // as |omega| grows the smallest headroom wins
    let limit = (0..convs.len())
        .min_by(|&a, &b| convs[a].p_c_max_dev.total_cmp(&convs[b].p_c_max_dev))
        .expect("non-empty");
    chosen[limit] = true;
    let pairs: Vec<(f64, f64)> = convs
        .iter()
        .zip(&chosen)
        .filter(|(_, &k)| k)
        .map(|(c, _)| (c.p_c_max_dev, c.d_pc))
        .collect();
    let n1 = convs.len();
    let p_min = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let q = LyapunovQ::new(coi.h_t, coi.tau_g_t, coi.d_pg_t)?;
    let edge = theta * n1 as f64 * p_min;
    Ok(IssCert { theta, pairs, d_pg: coi.d_pg_t, n1, q, c: q.c(), w_domain: (-edge, edge) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeStatus {
    Holds,
    Violated,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssEnvelopeReport {
    pub status: EnvelopeStatus,
    /// gamma(w_sup)
    pub gamma: f64,
    /// max ||z||_inf over the steady window
    pub steady_norm: f64,
    /// gamma - steady_norm
    pub margin: f64,
    /// max ||z||_inf over the whole trajectory
    pub transient_peak: f64,
    /// Start of the window where V5 is monotone (s).
    pub window_start: f64,
    pub note: String,
}

/// Check the ultimate ISS bound on a reduced-model trajectory. The steady
/// window is the longest suffix after the last load event over which V5 is
/// monotone; it must last at least `min_window` seconds.
pub fn iss_envelope_check(traj: &Trajectory, cert: &IssCert, w_sup: f64, min_window: f64) -> Result<IssEnvelopeReport> {
    let gamma = cert.gamma(w_sup.abs())?;
    let iw = traj.column("omega_g_dev");
    let ip = traj.column("P_tau_g");
    let (iw, ip) = match (iw, ip) {
        (Some(a), Some(b)) if traj.columns.len() == 2 => (a, b),
        _ => return Err(Error::Domain("ISS check needs a reduced-model trajectory".into())),
    };
    let norm = |s: &crate::sim::Sample| s.state[iw].abs().max(s.state[ip].abs());
    let transient_peak = traj.samples.iter().map(norm).fold(0.0, f64::max);
    let last_event = traj
        .log
        .iter()
        .filter_map(|e| match e {
            LogEntry::Scheduled { time, .. } => Some(*time),
            _ => None,
        })
        .fold(0.0, f64::max);
    let post: Vec<&crate::sim::Sample> = traj.samples.iter().filter(|s| s.t >= last_event).collect();
    let v: Vec<f64> = post.iter().map(|s| cert.q.value([s.state[iw], s.state[ip]])).collect();
    let vmax = v.iter().cloned().fold(0.0, f64::max);
    let eps = 1e-12 * vmax + f64::MIN_POSITIVE;
    let mut start = post.len().saturating_sub(1);
    let mut dir = 0i8;
    while start > 0 {
        let d = v[start] - v[start - 1];
        let s = if d > eps { 1 } else if d < -eps { -1 } else { 0 };
        if s != 0 {
            if dir == 0 {
                dir = s;
            } else if s != dir {
                break;
            }
        }
        start -= 1;
    }
    let inconclusive = |note: String| IssEnvelopeReport {
        status: EnvelopeStatus::Inconclusive,
        gamma,
        steady_norm: f64::NAN,
        margin: f64::NAN,
        transient_peak,
        window_start: f64::NAN,
        note,
    };
    if post.len() < 2 {
        return Ok(inconclusive("no samples after the last event".into()));
    }
    let window_start = post[start].t;
    let end = post[post.len() - 1].t;
    if end - window_start < min_window {
        return Ok(inconclusive(format!(
            "monotone V5 window lasts {} s, need {min_window} s",
            end - window_start
        )));
    }
    let steady_norm = post[start..].iter().map(|s| norm(s)).fold(0.0, f64::max);
    let margin = gamma - steady_norm;
    Ok(IssEnvelopeReport {
        status: if margin >= 0.0 { EnvelopeStatus::Holds } else { EnvelopeStatus::Violated },
        gamma,
        steady_norm,
        margin,
        transient_peak,
        window_start,
        note: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SystemParams;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sys() -> SystemParams {
        SystemParams::nominal()
    }

    fn cert() -> IssCert {
        let s = sys();
        iss_gains(0.9, &s.machine, s.matching_droop_b(), s.p_c_max_dev_pu()).unwrap()
    }

    #[test]
    fn gas_examples() {
        let mp = MachineParams::nominal();
        let g = gas_check(&mp, 7.0, 10.0, 0.2);
        assert!(g.holds && g.v5.is_some());
        assert!(!gas_check(&mp, 0.0, 10.0, 0.2).holds);
        assert!(!gas_check(&mp, 7.0, 0.0, 0.2).holds);
    }

    #[test]
    fn q_and_c() {
        let c = cert();
        assert_eq!(c.q.q11, 3.7);
        assert_relative_eq!(c.q.q22, 5.0 / 14.0, max_relative = 1e-15);
        assert_relative_eq!(c.c, (3.7f64 / (5.0 / 14.0)).sqrt(), max_relative = 1e-15);
        assert!((c.c - 3.219).abs() < 1e-3);
    }

    #[test]
    fn gains_vanish_at_origin_and_blow_up_at_edge() {
        let c = cert();
        assert_eq!(c.chi1(0.0).unwrap(), 0.0);
        assert_eq!(c.chi2(0.0).unwrap(), 0.0);
        assert_eq!(c.gamma(0.0).unwrap(), 0.0);
        let edge = c.w_domain.1;
        assert!(c.chi1(edge * (1.0 - 1e-12)).unwrap() > 10.0 * c.chi1(edge * 0.5).unwrap());
        assert!(c.chi1(edge).is_err());
        assert!(c.gamma(-0.1).is_err());
    }

    #[test]
    fn gamma_at_fig10_input() {
        let c = cert();
        let s = sys();
        let p = s.p_c_max_dev_pu();
        let d = s.matching_droop_b();
        let chi1 = p / d * (0.08 / (0.9 * p)).atanh();
        let chi2 = (0.08 * 7.0 / 0.9 * chi1).sqrt();
        assert_relative_eq!(c.chi1(0.08).unwrap(), chi1, max_relative = 1e-14);
        assert_relative_eq!(c.gamma(0.08).unwrap(), c.c * chi1.max(chi2), max_relative = 1e-14);
    }

    #[test]
    fn rejects_bad_theta() {
        let mp = MachineParams::nominal();
        assert!(iss_gains(1.0, &mp, 1.0, 1.0).is_err());
        assert!(iss_gains(0.0, &mp, 1.0, 1.0).is_err());
        assert!(iss_gains(0.5, &mp, 1.0, 0.0).is_err());
    }

    #[test]
    fn coi_single_converter_is_two_bus() {
        let s = sys();
        let conv = CoiConverter { d_pc: s.matching_droop_b(), p_c_max_dev: s.p_c_max_dev_pu() };
        let coi = coi_aggregate(&[s.machine], &[conv]).unwrap();
        assert_eq!(coi_iss_gains(0.9, &coi).unwrap(), cert());
    }

    #[test]
    fn coi_domain_widens_with_fleet() {
        let conv = CoiConverter { d_pc: 10.0, p_c_max_dev: 0.2 };
        let mp = MachineParams::nominal();
        let one = coi_iss_gains(0.9, &coi_aggregate(&[mp], &[conv]).unwrap()).unwrap();
        let three = coi_iss_gains(0.9, &coi_aggregate(&[mp; 3], &[conv; 3]).unwrap()).unwrap();
        assert_relative_eq!(three.w_domain.1, 3.0 * one.w_domain.1, max_relative = 1e-15);
    }

    #[test]
    fn aggregation_rejects_mixed_turbines() {
        let a = MachineParams::nominal();
        let b = MachineParams { tau_g: 4.0, ..a };
        assert!(coi_aggregate(&[a, b], &[CoiConverter { d_pc: 1.0, p_c_max_dev: 1.0 }]).is_err());
    }

    #[test]
    fn heterogeneous_gain_dominates_grid_minimizer() {
        let convs = [
            CoiConverter { d_pc: 50.0, p_c_max_dev: 0.3 },
            CoiConverter { d_pc: 5.0, p_c_max_dev: 0.1 },
            CoiConverter { d_pc: 500.0, p_c_max_dev: 0.05 },
        ];
        let mp = MachineParams::nominal();
        let coi = coi_aggregate(&[mp, mp], &convs).unwrap();
        let cert = coi_iss_gains(0.9, &coi).unwrap();
        // oracle: at each omega take the minimizing converter by brute force
        let omegas: Vec<f64> = (0..=600).map(|k| 1e-6 * 10f64.powf(k as f64 / 60.0)).collect();
        for k in 1..100 {
            let w = cert.w_domain.1 * k as f64 / 100.0;
            let mut oracle = 0.0f64;
            for &om in &omegas {
                let i = (0..convs.len())
                    .min_by(|&a, &b| {
                        let f = |c: &CoiConverter| c.p_c_max_dev * (c.d_pc * om / c.p_c_max_dev).tanh();
                        f(&convs[a]).total_cmp(&f(&convs[b]))
                    })
                    .unwrap();
                let c = convs[i];
                let arg = w / (0.9 * 3.0 * c.p_c_max_dev);
                if arg < 1.0 {
                    oracle = oracle.max(c.p_c_max_dev / c.d_pc * arg.atanh());
                }
            }
            assert!(cert.chi1(w).unwrap() >= oracle, "w = {w}");
        }
    }

    proptest! {
        #[test]
        fn v5_sandwich(w in -10.0f64..10.0, p in -10.0f64..10.0) {
            let q = cert().q;
            let n2 = w * w + p * p;
            let v = q.value([w, p]);
            prop_assert!(q.lambda_min() * n2 <= v * (1.0 + 1e-12));
            prop_assert!(v <= q.lambda_max() * n2 * (1.0 + 1e-12));
        }

        #[test]
        fn v5_decreases_unforced(w in -1.0f64..1.0, p in -1.0f64..1.0, d_pg in 0.1f64..20.0, d_pc in 0.1f64..1e5) {
            prop_assume!(w != 0.0 || p != 0.0);
            let mp = MachineParams { d_pg, ..MachineParams::nominal() };
            let v5 = gas_check(&mp, d_pg, d_pc, 0.187).v5.unwrap();
            prop_assert!(v5.derivative([w, p], 0.0) < 0.0);
        }

        #[test]
        fn domain_is_exact(frac in 0.0f64..2.0) {
            let c = cert();
            let w = frac * c.theta * c.pairs[0].0;
            prop_assert_eq!(c.chi1(w).is_ok(), frac < 1.0);
        }
    }
}
