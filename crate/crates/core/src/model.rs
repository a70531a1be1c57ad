//! Parameter and state types, the saturation primitive, and the right-hand
//! sides of every reduced-order model.
//!
//! Units: the dc side is in SI (V, A, W, F, S). The ac side (frequency
//! deviations, turbine power, line susceptance, governor and class-A droop
//! gains) is per-unit on `S_base` and `omega_base = omega_star`. Conversions
//! happen only inside the right-hand-side functions.
//!
//! The dc energy source time constant is neglected, so it has no field.

use serde::{Deserialize, Serialize};

use crate::equilibrium;
use crate::error::{Error, Result};

/// Clamp `value` to `[-limit, limit]`.
pub fn sat(value: f64, limit: f64) -> Result<f64> {
    if !(limit >= 0.0) {
        return Err(Error::param("limit", format!("must be non-negative, got {limit}")));
    }
    Ok(value.clamp(-limit, limit))
}

/// Which piece of a saturation is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    Lower,
    Linear,
    Upper,
}

impl Branch {
    pub fn of(value: f64, limit: f64) -> Branch {
        if value > limit {
            Branch::Upper
        } else if value < -limit {
            Branch::Lower
        } else {
            Branch::Linear
        }
    }

    /// Evaluate the saturation on this branch. Off-region values are
    /// extrapolated along the branch, which is what a branch-locked
    /// integrator step needs.
    #[inline]
    pub fn apply(self, value: f64, limit: f64) -> f64 {
        match self {
            Branch::Lower => -limit,
            Branch::Linear => value,
            Branch::Upper => limit,
        }
    }

    /// Non-negative while `value` stays inside this branch's region.
    #[inline]
    pub fn guard(self, value: f64, limit: f64) -> f64 {
        match self {
            Branch::Lower => -limit - value,
            Branch::Linear => limit - value.abs(),
            Branch::Upper => value - limit,
        }
    }

    pub fn is_saturated(self) -> bool {
        self != Branch::Linear
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterParams {
    /// dc-link capacitance (F)
    pub c_c: f64,
    /// dc-loss conductance (S)
    pub g_c: f64,
    /// dc-voltage droop gain (S)
    pub k_c: f64,
    /// dc-side current limit (A)
    pub i_dc_max: f64,
    /// dc voltage reference (V)
    pub v_dc_star: f64,
    /// converter power reference (W)
    pub p_c_star: f64,
    /// class-A frequency droop (p.u. frequency per p.u. power)
    pub droop_gain_a: f64,
    /// matching gain (rad/s per V)
    pub k_m: f64,
}

impl ConverterParams {
    /// Nominal 150 kW converter. G_c is 0.83 mS, which puts P_c^max at
    /// 178 kW with x_m < x~*. k_m = omega*/v*.
    pub fn nominal() -> Self {
        ConverterParams {
            c_c: 8e-3,
            g_c: 0.83e-3,
            k_c: 1.6e3,
            i_dc_max: 75.0,
            v_dc_star: 2440.0,
            p_c_star: 150e3,
            droop_gain_a: 1e-3,
            k_m: MachineParams::nominal().omega_star / 2440.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("c_c", self.c_c)?;
        non_negative("g_c", self.g_c)?;
        positive("k_c", self.k_c)?;
        positive("i_dc_max", self.i_dc_max)?;
        positive("v_dc_star", self.v_dc_star)?;
        finite("p_c_star", self.p_c_star)?;
        non_negative("droop_gain_a", self.droop_gain_a)?;
        positive("k_m", self.k_m)?;
        Ok(())
    }

    /// x_m: voltage where the current limit engages.
    pub fn x_m(&self) -> f64 {
        self.v_dc_star - self.i_dc_max / self.k_c
    }

    /// x~*: largest allowable dc voltage.
    pub fn x_tilde_star(&self) -> f64 {
        self.k_c * self.v_dc_star / (self.k_c + self.g_c)
    }

    /// Peak deliverable power at the reference voltage (W).
    pub fn p_c_max(&self) -> f64 {
        self.v_dc_star * self.i_dc_max - self.g_c * self.v_dc_star * self.v_dc_star
    }

    /// Headroom above the power reference (W).
    pub fn p_c_max_dev(&self) -> f64 {
        self.p_c_max() - self.p_c_star
    }

    /// Time constant of the unsaturated dc link, C_c / (k_c + G_c).
    pub fn dc_time_constant(&self) -> f64 {
        self.c_c / (self.k_c + self.g_c)
    }

    /// Class-A saturation argument k_c (x* - v).
    #[inline]
    pub fn droop_current(&self, v_dc: f64) -> f64 {
        self.k_c * (self.v_dc_star - v_dc)
    }

    /// Class-B saturation argument including the matching feedforward terms.
    #[inline]
    pub fn matching_current(&self, v_dc: f64) -> f64 {
        self.g_c * v_dc + self.p_c_star / self.v_dc_star + self.k_c * (self.v_dc_star - v_dc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineParams {
    /// inertia constant (s)
    pub h_g: f64,
    /// turbine time constant (s)
    pub tau_g: f64,
    /// inverse governor droop (p.u.)
    pub d_pg: f64,
    /// power reference (W)
    pub p_g_star: f64,
    /// nominal angular frequency (rad/s)
    pub omega_star: f64,
}

impl MachineParams {
    pub fn nominal() -> Self {
        MachineParams {
            h_g: 3.7,
            tau_g: 5.0,
            d_pg: 7.0,
            p_g_star: 150e3,
            omega_star: 314.16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("h_g", self.h_g)?;
        positive("tau_g", self.tau_g)?;
        positive("d_pg", self.d_pg)?;
        finite("p_g_star", self.p_g_star)?;
        positive("omega_star", self.omega_star)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkParams {
    /// line susceptance (p.u.)
    pub b: f64,
    /// load at the machine bus (W)
    pub p_lg: f64,
    /// load at the converter bus (W)
    pub p_lc: f64,
    /// power base (W)
    pub s_base: f64,
}

impl NetworkParams {
    /// Nominal susceptance with loads equal to the two power
    /// references.
    pub fn nominal() -> Self {
        NetworkParams {
            b: 5e3,
            p_lg: 150e3,
            p_lc: 150e3,
            s_base: 150e3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("b", self.b)?;
        positive("s_base", self.s_base)?;
        finite("p_lg", self.p_lg)?;
        finite("p_lc", self.p_lc)?;
        Ok(())
    }

    #[inline]
    pub fn to_pu(&self, watts: f64) -> f64 {
        watts / self.s_base
    }

    #[inline]
    pub fn to_watts(&self, pu: f64) -> f64 {
        pu * self.s_base
    }
}

/// Everything the two-bus models need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub converter: ConverterParams,
    pub machine: MachineParams,
    pub network: NetworkParams,
}

impl SystemParams {
    pub fn nominal() -> Self {
        SystemParams {
            converter: ConverterParams::nominal(),
            machine: MachineParams::nominal(),
            network: NetworkParams::nominal(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.converter.validate()?;
        self.machine.validate()?;
        self.network.validate()?;
        let w = self.converter.k_m * self.converter.v_dc_star;
        if ((w - self.machine.omega_star) / self.machine.omega_star).abs() > 1e-6 {
            return Err(Error::param(
                "k_m",
                format!(
                    "k_m * v_dc_star = {w} must equal omega_star = {}",
                    self.machine.omega_star
                ),
            ));
        }
        Ok(())
    }

    /// Class-B equivalent droop k_c / k_m^2 expressed in p.u. power per p.u.
    /// frequency. Derived, never configured.
    pub fn matching_droop_b(&self) -> f64 {
        let w = self.machine.omega_star;
        self.converter.k_c * (w / self.converter.k_m).powi(2) / self.network.s_base
    }

    /// Converter headroom P_c^max - P_c* in p.u.
    pub fn p_c_max_dev_pu(&self) -> f64 {
        self.network.to_pu(self.converter.p_c_max_dev())
    }

    /// Load disturbance w = -(P_L - P_L*) in p.u., with P_L* = P_c* + P_g*.
    pub fn load_input_pu(&self) -> f64 {
        let p_l = self.network.p_lg + self.network.p_lc;
        let p_l_star = self.converter.p_c_star + self.machine.p_g_star;
        -self.network.to_pu(p_l - p_l_star)
    }

    /// Converter output power P_c = P_Lc + b*phi (W).
    #[inline]
    pub fn converter_power(&self, phi: f64) -> f64 {
        self.network.p_lc + self.network.to_watts(self.network.b * phi)
    }
}

/// Quantities fixed by the converter parameters alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedQuantities {
    pub x_m: f64,
    pub x_tilde_star: f64,
    /// W
    pub p_c_max: f64,
    /// P_c^max - P_c* (W)
    pub p_c_max_dev: f64,
    /// Peak of the power-voltage characteristic over (0, x~*) (W).
    pub u_max: f64,
    pub x_at_max: f64,
}

pub fn derived_quantities(cp: &ConverterParams) -> DerivedQuantities {
    let (u_max, x_at_max) = equilibrium::max_load(cp);
    DerivedQuantities {
        x_m: cp.x_m(),
        x_tilde_star: cp.x_tilde_star(),
        p_c_max: cp.p_c_max(),
        p_c_max_dev: cp.p_c_max_dev(),
        u_max,
        x_at_max,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassAState {
    /// V
    pub v_dc: f64,
    /// theta_c - theta_g (rad)
    pub phi: f64,
    /// p.u.
    pub omega_g_dev: f64,
    /// p.u.
    pub p_tau_g: f64,
}

impl ClassAState {
    pub fn to_array(self) -> [f64; 4] {
        [self.v_dc, self.phi, self.omega_g_dev, self.p_tau_g]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        ClassAState {
            v_dc: a[0],
            phi: a[1],
            omega_g_dev: a[2],
            p_tau_g: a[3],
        }
    }
}

/// Same layout as [`ClassAState`]; the converter frequency follows v_dc.
pub type ClassBFullState = ClassAState;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassBReducedState {
    /// p.u.
    pub omega_g_dev: f64,
    /// P_tau_g - P_g* (p.u.)
    pub p_tau_g_dev: f64,
}

impl ClassBReducedState {
    pub fn to_array(self) -> [f64; 2] {
        [self.omega_g_dev, self.p_tau_g_dev]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        ClassBReducedState {
            omega_g_dev: a[0],
            p_tau_g_dev: a[1],
        }
    }
}

/// One converter in a center-of-inertia fleet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoiConverter {
    /// matching droop (p.u.)
    pub d_pc: f64,
    /// headroom P_ci^max - P_ci* (p.u.)
    pub p_c_max_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoiParams {
    pub h_t: f64,
    pub d_pg_t: f64,
    pub tau_g_t: f64,
    /// W
    pub p_g_t_star: f64,
    pub converters: Vec<CoiConverter>,
}

impl CoiParams {
    /// Aggregate a fleet. All turbine time constants must agree.
    pub fn from_fleet(machines: &[MachineParams], converters: &[CoiConverter]) -> Result<Self> {
        let first = machines
            .first()
            .ok_or_else(|| Error::param("machines", "fleet needs at least one machine"))?;
        if converters.is_empty() {
            return Err(Error::param("converters", "fleet needs at least one converter"));
        }
        for m in machines {
            m.validate()?;
            if ((m.tau_g - first.tau_g) / first.tau_g).abs() > 1e-12 {
                return Err(Error::param(
                    "tau_g",
                    format!(
                        "aggregation needs equal turbine time constants, got {} and {}",
                        first.tau_g, m.tau_g
                    ),
                ));
            }
        }
        for c in converters {
            positive("d_pc", c.d_pc)?;
            positive("p_c_max_dev", c.p_c_max_dev)?;
        }
        Ok(CoiParams {
            h_t: machines.iter().map(|m| m.h_g).sum(),
            d_pg_t: machines.iter().map(|m| m.d_pg).sum(),
            tau_g_t: first.tau_g,
            p_g_t_star: machines.iter().map(|m| m.p_g_star).sum(),
            converters: converters.to_vec(),
        })
    }
}

/// Isolated class-A dc link with prescribed converter power `p_c` (W).
#[inline]
pub fn dc_link_rate(v_dc: f64, p_c: f64, cp: &ConverterParams, branch: Branch) -> f64 {
    let i = branch.apply(cp.droop_current(v_dc), cp.i_dc_max);
    (-cp.g_c * v_dc + i - p_c / v_dc) / cp.c_c
}

/// Right-hand side of the class-A two-bus model.
pub fn class_a_rhs(s: &ClassAState, sys: &SystemParams) -> Result<ClassAState> {
    check_voltage(s.v_dc)?;
    let branch = Branch::of(sys.converter.droop_current(s.v_dc), sys.converter.i_dc_max);
    Ok(class_a_rhs_on(s, sys, branch))
}

/// Class-A right-hand side locked to one saturation branch.
pub fn class_a_rhs_on(s: &ClassAState, sys: &SystemParams, branch: Branch) -> ClassAState {
    let cp = &sys.converter;
    let mp = &sys.machine;
    let np = &sys.network;
    let p_c = sys.converter_power(s.phi);
    let omega_c_dev = -cp.droop_gain_a * np.to_pu(p_c - cp.p_c_star);
    ac_side(s, sys, dc_link_rate(s.v_dc, p_c, cp, branch), omega_c_dev, mp)
}

/// Right-hand side of the class-B two-bus model with matching control.
pub fn class_b_full_rhs(s: &ClassBFullState, sys: &SystemParams) -> Result<ClassBFullState> {
    check_voltage(s.v_dc)?;
    let branch = Branch::of(sys.converter.matching_current(s.v_dc), sys.converter.i_dc_max);
    Ok(class_b_full_rhs_on(s, sys, branch))
}

pub fn class_b_full_rhs_on(s: &ClassBFullState, sys: &SystemParams, branch: Branch) -> ClassBFullState {
    let cp = &sys.converter;
    let p_c = sys.converter_power(s.phi);
    let i = branch.apply(cp.matching_current(s.v_dc), cp.i_dc_max);
    let v_dot = (-cp.g_c * s.v_dc + i - p_c / s.v_dc) / cp.c_c;
    // omega_c = k_m v_dc, expressed as a p.u. deviation from omega*
    let omega_c_dev = cp.k_m * s.v_dc / sys.machine.omega_star - 1.0;
    ac_side(s, sys, v_dot, omega_c_dev, &sys.machine)
}

fn ac_side(
    s: &ClassAState,
    sys: &SystemParams,
    v_dot: f64,
    omega_c_dev: f64,
    mp: &MachineParams,
) -> ClassAState {
    let np = &sys.network;
    let p_lg = np.to_pu(np.p_lg);
    ClassAState {
        v_dc: v_dot,
        phi: mp.omega_star * (omega_c_dev - s.omega_g_dev),
        omega_g_dev: (s.p_tau_g + np.b * s.phi - p_lg) / (2.0 * mp.h_g),
        p_tau_g: (np.to_pu(mp.p_g_star) - mp.d_pg * s.omega_g_dev - s.p_tau_g) / mp.tau_g,
    }
}

/// Reduced class-B model; `w = -P_L` deviation in p.u.
pub fn class_b_reduced_rhs(
    s: &ClassBReducedState,
    matching_droop: f64,
    p_c_max_dev: f64,
    mp: &MachineParams,
    w: f64,
) -> Result<ClassBReducedState> {
    if !(p_c_max_dev > 0.0) {
        return Err(Error::param("p_c_max_dev", "converter headroom must be positive"));
    }
    let branch = Branch::of(matching_droop * s.omega_g_dev, p_c_max_dev);
    Ok(class_b_reduced_rhs_on(s, matching_droop, p_c_max_dev, mp, w, branch))
}

#[inline]
pub fn class_b_reduced_rhs_on(
    s: &ClassBReducedState,
    matching_droop: f64,
    p_c_max_dev: f64,
    mp: &MachineParams,
    w: f64,
    branch: Branch,
) -> ClassBReducedState {
    let conv = branch.apply(matching_droop * s.omega_g_dev, p_c_max_dev);
    ClassBReducedState {
        omega_g_dev: (s.p_tau_g_dev - conv + w) / (2.0 * mp.h_g),
        p_tau_g_dev: (-s.p_tau_g_dev - mp.d_pg * s.omega_g_dev) / mp.tau_g,
    }
}

/// Center-of-inertia model; `w1 = -P_LT` deviation in p.u.
pub fn coi_rhs(s: &ClassBReducedState, coi: &CoiParams, w1: f64) -> ClassBReducedState {
    let conv: f64 = coi
        .converters
        .iter()
        .map(|c| (c.d_pc * s.omega_g_dev).clamp(-c.p_c_max_dev, c.p_c_max_dev))
        .sum();
    coi_rhs_with(s, coi, w1, conv)
}

pub fn coi_rhs_on(s: &ClassBReducedState, coi: &CoiParams, w1: f64, branches: &[Branch]) -> ClassBReducedState {
    let conv: f64 = coi
        .converters
        .iter()
        .zip(branches)
        .map(|(c, b)| b.apply(c.d_pc * s.omega_g_dev, c.p_c_max_dev))
        .sum();
    coi_rhs_with(s, coi, w1, conv)
}

#[inline]
fn coi_rhs_with(s: &ClassBReducedState, coi: &CoiParams, w1: f64, conv: f64) -> ClassBReducedState {
    ClassBReducedState {
        omega_g_dev: (s.p_tau_g_dev - conv + w1) / (2.0 * coi.h_t),
        p_tau_g_dev: (-s.p_tau_g_dev - coi.d_pg_t * s.omega_g_dev) / coi.tau_g_t,
    }
}

fn check_voltage(v_dc: f64) -> Result<()> {
    if v_dc > 0.0 && v_dc.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("dc voltage must be positive, got {v_dc}")))
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive and finite, got {v}")))
    }
}

fn non_negative(name: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be non-negative, got {v}")))
    }
}

fn finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn sat_examples() {
        assert_eq!(sat(80.0, 75.0).unwrap(), 75.0);
        assert_eq!(sat(-80.0, 75.0).unwrap(), -75.0);
        assert_eq!(sat(10.0, 75.0).unwrap(), 10.0);
        assert!(matches!(sat(1.0, -1.0), Err(Error::Parameter { .. })));
    }

    proptest! {
        #[test]
        fn sat_is_odd_idempotent_lipschitz(a in -1e6f64..1e6, b in -1e6f64..1e6, l in 0.0f64..1e5) {
            let sa = sat(a, l).unwrap();
            prop_assert_eq!(sat(-a, l).unwrap(), -sa);
            prop_assert_eq!(sat(sa, l).unwrap(), sa);
            prop_assert!((sa - sat(b, l).unwrap()).abs() <= (a - b).abs());
            prop_assert_eq!(Branch::of(a, l).apply(a, l), sa);
        }

        #[test]
        fn per_unit_round_trip(p in -1e7f64..1e7, exp in 0i32..30) {
            let np = NetworkParams { s_base: 2f64.powi(exp), ..NetworkParams::nominal() };
            prop_assert_eq!(np.to_watts(np.to_pu(p)), p);
        }
    }

    #[test]
    fn nominal_derived_values() {
        let cp = ConverterParams::nominal();
        let d = derived_quantities(&cp);
        assert_eq!(d.x_m, 2439.953125);
        assert_relative_eq!(d.x_tilde_star, 1600.0 * 2440.0 / 1600.00083, max_relative = 1e-15);
        assert!((d.x_tilde_star - 2439.99873).abs() < 1e-5);
        assert!((d.p_c_max - 178.06e3).abs() / 178e3 < 1e-3);
        assert!(d.x_m < d.x_tilde_star);
        assert_eq!(d.x_at_max, d.x_m);
    }

    #[test]
    fn nominal_system_is_consistent() {
        let sys = SystemParams::nominal();
        sys.validate().unwrap();
        let d = sys.matching_droop_b();
        assert_relative_eq!(d, 1600.0 * 2440.0 * 2440.0 / 150e3, max_relative = 1e-12);
        let bad = SystemParams {
            converter: ConverterParams { k_m: 128.75, ..sys.converter },
            ..sys
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn class_a_rhs_hand_evaluations() {
        let cp = ConverterParams::nominal();
        // isolated link at 2420 V delivering 175 kW sits on the saturated branch
        let v = 2420.0;
        let expected = (-cp.g_c * v + 75.0 - 175e3 / v) / cp.c_c;
        let got = dc_link_rate(v, 175e3, &cp, Branch::of(cp.droop_current(v), cp.i_dc_max));
        assert_relative_eq!(got, expected, max_relative = 1e-14);
        assert!((got - 84.7).abs() < 0.2);

        // full model at x* with no load: only the loss term remains
        let sys = SystemParams {
            network: NetworkParams { p_lc: 0.0, p_lg: 0.0, ..NetworkParams::nominal() },
            ..SystemParams::nominal()
        };
        let s = ClassAState { v_dc: cp.v_dc_star, ..Default::default() };
        let d = class_a_rhs(&s, &sys).unwrap();
        assert_relative_eq!(d.v_dc, -cp.g_c * cp.v_dc_star / cp.c_c, max_relative = 1e-14);
    }

    #[test]
    fn rhs_rejects_nonpositive_voltage() {
        let sys = SystemParams::nominal();
        let s = ClassAState { v_dc: 0.0, ..Default::default() };
        assert!(matches!(class_a_rhs(&s, &sys), Err(Error::Domain(_))));
        assert!(matches!(class_b_full_rhs(&s, &sys), Err(Error::Domain(_))));
    }

    #[test]
    fn matching_current_at_reference_is_unsaturated() {
        let cp = ConverterParams::nominal();
        let a = cp.matching_current(cp.v_dc_star);
        assert_relative_eq!(a, cp.g_c * 2440.0 + 150e3 / 2440.0, max_relative = 1e-15);
        assert!((a - 63.5).abs() < 0.05);
        assert_eq!(Branch::of(a, cp.i_dc_max), Branch::Linear);
    }

    #[test]
    fn reduced_rhs_steady_states() {
        let mp = MachineParams::nominal();
        let zero = class_b_reduced_rhs(&ClassBReducedState::default(), 50.0, 0.2, &mp, 0.0).unwrap();
        assert_eq!(zero, ClassBReducedState::default());

        // unsaturated: omega = w / (d_pg + d_pc), P = -d_pg omega
        let (d_pc, pmax, w) = (50.0, 0.2, -0.08);
        let om = w / (mp.d_pg + d_pc);
        let s = ClassBReducedState { omega_g_dev: om, p_tau_g_dev: -mp.d_pg * om };
        let d = class_b_reduced_rhs(&s, d_pc, pmax, &mp, w).unwrap();
        assert!(d.omega_g_dev.abs() < 1e-15 && d.p_tau_g_dev.abs() < 1e-15);

        // saturated: d_pc * omega beyond the limit pins the converter term
        let (d_pc, pmax, w) = (50.0, 0.01, -0.08);
        let om = (w + pmax) / mp.d_pg;
        assert!(d_pc * om < -pmax);
        let s = ClassBReducedState { omega_g_dev: om, p_tau_g_dev: -mp.d_pg * om };
        let d = class_b_reduced_rhs(&s, d_pc, pmax, &mp, w).unwrap();
        assert!(d.omega_g_dev.abs() < 1e-15 && d.p_tau_g_dev.abs() < 1e-15);

        assert!(class_b_reduced_rhs(&s, d_pc, 0.0, &mp, w).is_err());
    }

    #[test]
    fn coi_sum_of_individually_saturated_terms() {
        let coi = CoiParams {
            h_t: 3.7,
            d_pg_t: 7.0,
            tau_g_t: 5.0,
            p_g_t_star: 150e3,
            converters: vec![
                CoiConverter { d_pc: 100.0, p_c_max_dev: 0.05 },
                CoiConverter { d_pc: 40.0, p_c_max_dev: 0.3 },
            ],
        };
        let s = ClassBReducedState { omega_g_dev: -2e-3, p_tau_g_dev: 0.01 };
        // first converter saturates at -0.05, second stays linear at -0.08
        let conv = -0.05 + -0.08;
        let d = coi_rhs(&s, &coi, -0.1);
        assert_relative_eq!(d.omega_g_dev, (0.01 - conv - 0.1) / 7.4, max_relative = 1e-14);
        assert_eq!(coi_rhs(&ClassBReducedState::default(), &coi, 0.0), ClassBReducedState::default());
    }

    #[test]
    fn coi_aggregation_needs_equal_turbine_constants() {
        let m = MachineParams::nominal();
        let c = [CoiConverter { d_pc: 1.0, p_c_max_dev: 0.1 }];
        let agg = CoiParams::from_fleet(&[m, m], &c).unwrap();
        assert_eq!(agg.h_t, 2.0 * m.h_g);
        assert_eq!(agg.d_pg_t, 2.0 * m.d_pg);
        let m4 = MachineParams { tau_g: 4.0, ..m };
        assert!(CoiParams::from_fleet(&[m, m4], &c).is_err());
    }

    #[test]
    fn rhs_is_deterministic() {
        let sys = SystemParams::nominal();
        let s = ClassAState { v_dc: 2400.0, phi: 1e-5, omega_g_dev: -3e-4, p_tau_g: 1.01 };
        let a = class_b_full_rhs(&s, &sys).unwrap().to_array();
        let b = class_b_full_rhs(&s, &sys).unwrap().to_array();
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }
}
