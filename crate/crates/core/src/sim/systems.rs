use crate::equilibrium::solve_equilibria;
use crate::error::{Error, Result};
use crate::model::{
    class_a_rhs_on, class_b_full_rhs_on, class_b_reduced_rhs_on, coi_rhs_on, dc_link_rate, Branch,
    ClassAState, ClassBFullState, ClassBReducedState, CoiParams, ConverterParams, SystemParams,
};

use super::{Bus, EventKind, HybridSystem, ModelKind, TerminalKind};

/// Terminal surfaces: collapse floor at 1% of x*, ceiling at 10x nominal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    /// V
    pub v_floor: f64,
    /// V
    pub v_ceiling: f64,
    /// Ceiling on |p.u. state|.
    pub pu_ceiling: f64,
}

impl Limits {
    pub fn for_converter(cp: &ConverterParams) -> Self {
        Limits {
            v_floor: 0.01 * cp.v_dc_star,
            v_ceiling: 10.0 * cp.v_dc_star,
            pu_ceiling: 10.0,
        }
    }
}

fn nearest(cands: &[(f64, TerminalKind)]) -> (f64, TerminalKind) {
    cands
        .iter()
        .copied()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one terminal surface")
}

fn unknown_bus(model: ModelKind, bus: Bus) -> Error {
    Error::Domain(format!("{} has no {bus:?} load", model.name()))
}

fn reset<const N: usize, S: HybridSystem<N>>(s: &S, y: &mut [f64; N], component: &str, value: f64) -> Result<()> {
    let i = s.component(component)?;
    if !value.is_finite() {
        return Err(Error::Domain(format!("reset value for `{component}` must be finite")));
    }
    y[i] = value;
    Ok(())
}

/// Class-A dc link in isolation with a prescribed converter power.
#[derive(Debug, Clone, PartialEq)]
pub struct DcLinkModel {
    pub cp: ConverterParams,
    /// W
    pub p_c: f64,
    pub limits: Limits,
}

impl DcLinkModel {
    pub fn new(cp: ConverterParams, p_c: f64) -> Result<Self> {
        cp.validate()?;
        Ok(DcLinkModel { limits: Limits::for_converter(&cp), cp, p_c })
    }
}

impl HybridSystem<1> for DcLinkModel {
    fn kind(&self) -> ModelKind {
        ModelKind::ClassADc
    }
    fn columns(&self) -> [&'static str; 1] {
        ["v_dc"]
    }
    fn branches(&self, y: &[f64; 1]) -> Vec<Branch> {
        vec![Branch::of(self.cp.droop_current(y[0]), self.cp.i_dc_max)]
    }
    fn rhs(&self, y: &[f64; 1], br: &[Branch]) -> [f64; 1] {
        [dc_link_rate(y[0], self.p_c, &self.cp, br[0])]
    }
    fn branch_guard(&self, y: &[f64; 1], br: &[Branch]) -> f64 {
        br[0].guard(self.cp.droop_current(y[0]), self.cp.i_dc_max)
    }
    fn terminal(&self, y: &[f64; 1]) -> (f64, TerminalKind) {
        nearest(&[
            (y[0] - self.limits.v_floor, TerminalKind::Collapse),
            (self.cp.x_tilde_star() - y[0], TerminalKind::Protection),
        ])
    }
    fn max_step(&self, br: &[Branch]) -> f64 {
        if br[0].is_saturated() {
            f64::INFINITY
        } else {
            self.cp.dc_time_constant()
        }
    }
    fn error_scale(&self) -> [f64; 1] {
        [1.0]
    }
    fn converter_power(&self, _: &[f64; 1], _: &[Branch]) -> f64 {
        self.p_c
    }
    fn apply_event(&mut self, y: &mut [f64; 1], ev: &EventKind) -> Result<()> {
        match ev {
            EventKind::LoadStep { bus: Bus::Converter, value } => {
                self.p_c = *value;
                Ok(())
            }
            EventKind::LoadStep { bus, .. } => Err(unknown_bus(self.kind(), *bus)),
            EventKind::StateReset { component, value } => reset(self, y, component, *value),
        }
    }
}

const TWO_BUS_COLUMNS: [&str; 4] = ["v_dc", "phi", "omega_g_dev", "P_tau_g"];
const TWO_BUS_SCALE: [f64; 4] = [1.0, 1e-6, 1e-3, 1e-3];

fn two_bus_load(sys: &mut SystemParams, model: ModelKind, bus: Bus, value: f64) -> Result<()> {
    match bus {
        Bus::Converter => sys.network.p_lc = value,
        Bus::Machine => sys.network.p_lg = value,
        Bus::Total => return Err(unknown_bus(model, bus)),
    }
    Ok(())
}

/// Class-A two-bus model.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAModel {
    pub sys: SystemParams,
    pub limits: Limits,
}

impl ClassAModel {
    pub fn new(sys: SystemParams) -> Result<Self> {
        sys.validate()?;
        Ok(ClassAModel { limits: Limits::for_converter(&sys.converter), sys })
    }
}

impl HybridSystem<4> for ClassAModel {
    fn kind(&self) -> ModelKind {
        ModelKind::ClassA
    }
    fn columns(&self) -> [&'static str; 4] {
        TWO_BUS_COLUMNS
    }
    fn branches(&self, y: &[f64; 4]) -> Vec<Branch> {
        let cp = &self.sys.converter;
        vec![Branch::of(cp.droop_current(y[0]), cp.i_dc_max)]
    }
    fn rhs(&self, y: &[f64; 4], br: &[Branch]) -> [f64; 4] {
        class_a_rhs_on(&ClassAState::from_array(*y), &self.sys, br[0]).to_array()
    }
    fn branch_guard(&self, y: &[f64; 4], br: &[Branch]) -> f64 {
        let cp = &self.sys.converter;
        br[0].guard(cp.droop_current(y[0]), cp.i_dc_max)
    }
    fn terminal(&self, y: &[f64; 4]) -> (f64, TerminalKind) {
        let c = self.limits.pu_ceiling;
        nearest(&[
            (y[0] - self.limits.v_floor, TerminalKind::Collapse),
            (self.sys.converter.x_tilde_star() - y[0], TerminalKind::Protection),
            (c - y[2].abs(), TerminalKind::Ceiling),
            (c - y[3].abs(), TerminalKind::Ceiling),
        ])
    }
    fn max_step(&self, br: &[Branch]) -> f64 {
        if br[0].is_saturated() {
            f64::INFINITY
        } else {
            self.sys.converter.dc_time_constant()
        }
    }
    fn error_scale(&self) -> [f64; 4] {
        TWO_BUS_SCALE
    }
    fn converter_power(&self, y: &[f64; 4], _: &[Branch]) -> f64 {
        self.sys.converter_power(y[1])
    }
    fn apply_event(&mut self, y: &mut [f64; 4], ev: &EventKind) -> Result<()> {
        match ev {
            EventKind::LoadStep { bus, value } => {
                let kind = self.kind();
                two_bus_load(&mut self.sys, kind, *bus, *value)
            }
            EventKind::StateReset { component, value } => reset(self, y, component, *value),
        }
    }
}

/// Class-B two-bus model with matching control.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBFullModel {
    pub sys: SystemParams,
    pub limits: Limits,
}

impl ClassBFullModel {
    pub fn new(sys: SystemParams) -> Result<Self> {
        sys.validate()?;
        Ok(ClassBFullModel { limits: Limits::for_converter(&sys.converter), sys })
    }
}

impl HybridSystem<4> for ClassBFullModel {
    fn kind(&self) -> ModelKind {
        ModelKind::ClassBFull
    }
    fn columns(&self) -> [&'static str; 4] {
        TWO_BUS_COLUMNS
    }
    fn branches(&self, y: &[f64; 4]) -> Vec<Branch> {
        let cp = &self.sys.converter;
        vec![Branch::of(cp.matching_current(y[0]), cp.i_dc_max)]
    }
    fn rhs(&self, y: &[f64; 4], br: &[Branch]) -> [f64; 4] {
        class_b_full_rhs_on(&ClassBFullState::from_array(*y), &self.sys, br[0]).to_array()
    }
    fn branch_guard(&self, y: &[f64; 4], br: &[Branch]) -> f64 {
        let cp = &self.sys.converter;
        br[0].guard(cp.matching_current(y[0]), cp.i_dc_max)
    }
    fn terminal(&self, y: &[f64; 4]) -> (f64, TerminalKind) {
        let c = self.limits.pu_ceiling;
        nearest(&[
            (y[0] - self.limits.v_floor, TerminalKind::Collapse),
            (self.limits.v_ceiling - y[0], TerminalKind::Ceiling),
            (c - y[2].abs(), TerminalKind::Ceiling),
            (c - y[3].abs(), TerminalKind::Ceiling),
        ])
    }
    fn max_step(&self, br: &[Branch]) -> f64 {
        if br[0].is_saturated() {
            f64::INFINITY
        } else {
            self.sys.converter.dc_time_constant()
        }
    }
    fn error_scale(&self) -> [f64; 4] {
        TWO_BUS_SCALE
    }
    fn converter_power(&self, y: &[f64; 4], _: &[Branch]) -> f64 {
        self.sys.converter_power(y[1])
    }
    fn apply_event(&mut self, y: &mut [f64; 4], ev: &EventKind) -> Result<()> {
        match ev {
            EventKind::LoadStep { bus, value } => {
                let kind = self.kind();
                two_bus_load(&mut self.sys, kind, *bus, *value)
            }
            EventKind::StateReset { component, value } => reset(self, y, component, *value),
        }
    }
}

/// Reduced class-B model; the input w follows the two bus loads.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBReducedModel {
    pub sys: SystemParams,
    pub limits: Limits,
}

impl ClassBReducedModel {
    pub fn new(sys: SystemParams) -> Result<Self> {
        sys.validate()?;
        Ok(ClassBReducedModel { limits: Limits::for_converter(&sys.converter), sys })
    }

    pub fn w(&self) -> f64 {
        self.sys.load_input_pu()
    }

    fn conv(&self, omega: f64, br: Branch) -> f64 {
        br.apply(self.sys.matching_droop_b() * omega, self.sys.p_c_max_dev_pu())
    }
}

impl HybridSystem<2> for ClassBReducedModel {
    fn kind(&self) -> ModelKind {
        ModelKind::ClassBReduced
    }
    fn columns(&self) -> [&'static str; 2] {
        ["omega_g_dev", "P_tau_g"]
    }
    fn branches(&self, y: &[f64; 2]) -> Vec<Branch> {
        vec![Branch::of(self.sys.matching_droop_b() * y[0], self.sys.p_c_max_dev_pu())]
    }
    fn rhs(&self, y: &[f64; 2], br: &[Branch]) -> [f64; 2] {
        let s = ClassBReducedState::from_array(*y);
        class_b_reduced_rhs_on(
            &s,
            self.sys.matching_droop_b(),
            self.sys.p_c_max_dev_pu(),
            &self.sys.machine,
            self.w(),
            br[0],
        )
        .to_array()
    }
    fn branch_guard(&self, y: &[f64; 2], br: &[Branch]) -> f64 {
        br[0].guard(self.sys.matching_droop_b() * y[0], self.sys.p_c_max_dev_pu())
    }
    fn terminal(&self, y: &[f64; 2]) -> (f64, TerminalKind) {
        let c = self.limits.pu_ceiling;
        nearest(&[(c - y[0].abs(), TerminalKind::Ceiling), (c - y[1].abs(), TerminalKind::Ceiling)])
    }
    fn max_step(&self, br: &[Branch]) -> f64 {
        if br[0].is_saturated() {
            f64::INFINITY
        } else {
            2.0 * self.sys.machine.h_g / self.sys.matching_droop_b()
        }
    }
    fn error_scale(&self) -> [f64; 2] {
        [1e-3, 1e-3]
    }
    fn converter_power(&self, y: &[f64; 2], br: &[Branch]) -> f64 {
        self.sys.converter.p_c_star - self.sys.network.to_watts(self.conv(y[0], br[0]))
    }
    fn apply_event(&mut self, y: &mut [f64; 2], ev: &EventKind) -> Result<()> {
        match ev {
            EventKind::LoadStep { bus, value } => {
                let kind = self.kind();
                two_bus_load(&mut self.sys, kind, *bus, *value)
            }
            EventKind::StateReset { component, value } => reset(self, y, component, *value),
        }
    }
}

/// Center-of-inertia model driven by the aggregate load.
#[derive(Debug, Clone, PartialEq)]
pub struct CoiModel {
    pub coi: CoiParams,
    /// W
    pub s_base: f64,
    /// Aggregate load (W).
    pub p_lt: f64,
    /// Nominal aggregate load (W).
    pub p_lt_star: f64,
    /// Sum of converter power references (W), used for the P_c column.
    pub p_c_t_star: f64,
    pub pu_ceiling: f64,
}

impl CoiModel {
    pub fn w1(&self) -> f64 {
        -(self.p_lt - self.p_lt_star) / self.s_base
    }

    fn conv(&self, omega: f64, br: &[Branch]) -> f64 {
        self.coi
            .converters
            .iter()
            .zip(br)
            .map(|(c, b)| b.apply(c.d_pc * omega, c.p_c_max_dev))
            .sum()
    }
}

impl HybridSystem<2> for CoiModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Coi
    }
    fn columns(&self) -> [&'static str; 2] {
        ["omega_g_dev", "P_tau_g"]
    }
    fn branches(&self, y: &[f64; 2]) -> Vec<Branch> {
        self.coi.converters.iter().map(|c| Branch::of(c.d_pc * y[0], c.p_c_max_dev)).collect()
    }
    fn rhs(&self, y: &[f64; 2], br: &[Branch]) -> [f64; 2] {
        coi_rhs_on(&ClassBReducedState::from_array(*y), &self.coi, self.w1(), br).to_array()
    }
    fn branch_guard(&self, y: &[f64; 2], br: &[Branch]) -> f64 {
        self.coi
            .converters
            .iter()
            .zip(br)
            .map(|(c, b)| b.guard(c.d_pc * y[0], c.p_c_max_dev))
            .fold(f64::INFINITY, f64::min)
    }
    fn terminal(&self, y: &[f64; 2]) -> (f64, TerminalKind) {
        let c = self.pu_ceiling;
        nearest(&[(c - y[0].abs(), TerminalKind::Ceiling), (c - y[1].abs(), TerminalKind::Ceiling)])
    }
    fn max_step(&self, br: &[Branch]) -> f64 {
        let d: f64 = self
            .coi
            .converters
            .iter()
            .zip(br)
            .filter(|(_, b)| !b.is_saturated())
            .map(|(c, _)| c.d_pc)
            .sum();
        if d > 0.0 {
            2.0 * self.coi.h_t / d
        } else {
            f64::INFINITY
        }
    }
    fn error_scale(&self) -> [f64; 2] {
        [1e-3, 1e-3]
    }
    fn converter_power(&self, y: &[f64; 2], br: &[Branch]) -> f64 {
        self.p_c_t_star - self.conv(y[0], br) * self.s_base
    }
    fn apply_event(&mut self, y: &mut [f64; 2], ev: &EventKind) -> Result<()> {
        match ev {
            EventKind::LoadStep { bus: Bus::Total, value } => {
                self.p_lt = *value;
                Ok(())
            }
            EventKind::LoadStep { bus, .. } => Err(unknown_bus(self.kind(), *bus)),
            EventKind::StateReset { component, value } => reset(self, y, component, *value),
        }
    }
}

/// Loads for which the class-A two-bus model settles with P_c = `u_bar`:
/// the machine bus carries P_g* and the converter bus the rest.
pub fn class_a_loads_for(sys: &SystemParams, u_bar: f64) -> SystemParams {
    let mut out = *sys;
    let np = &sys.network;
    let p_dev = np.to_pu(u_bar - sys.converter.p_c_star);
    let dl = p_dev * (1.0 + sys.machine.d_pg * sys.converter.droop_gain_a);
    out.network.p_lg = sys.machine.p_g_star;
    out.network.p_lc = sys.converter.p_c_star + np.to_watts(dl);
    out
}

/// Steady converter power of the class-A two-bus model (W). The ac side
/// settles independently of the dc link.
pub fn class_a_steady_power(sys: &SystemParams) -> f64 {
    let np = &sys.network;
    let dl = np.to_pu(np.p_lg + np.p_lc - sys.converter.p_c_star - sys.machine.p_g_star);
    sys.converter.p_c_star + np.to_watts(dl / (1.0 + sys.machine.d_pg * sys.converter.droop_gain_a))
}

/// Stable (high-voltage) equilibrium of the class-A two-bus model.
pub fn class_a_equilibrium(sys: &SystemParams) -> Result<ClassAState> {
    let cp = &sys.converter;
    let mp = &sys.machine;
    let np = &sys.network;
    let p_c = class_a_steady_power(sys);
    let p_dev = np.to_pu(p_c - cp.p_c_star);
    let omega = -cp.droop_gain_a * p_dev;
    let p_tau = np.to_pu(mp.p_g_star) - mp.d_pg * omega;
    let phi = (np.to_pu(np.p_lg) - p_tau) / np.b;
    if !(p_c > 0.0) {
        return Err(Error::Domain(format!("steady converter power {p_c} W is not positive")));
    }
    let rep = solve_equilibria(p_c, cp)?;
    let x1 = rep
        .x_bar_1
        .ok_or_else(|| Error::Domain(format!("no dc-link equilibrium at P_c = {p_c} W")))?;
    Ok(ClassAState { v_dc: x1.x, phi, omega_g_dev: omega, p_tau_g: p_tau })
}

/// Equilibrium of the class-B two-bus model, found by bisection on the
/// common frequency deviation.
pub fn class_b_full_equilibrium(sys: &SystemParams) -> Result<ClassBFullState> {
    let cp = &sys.converter;
    let mp = &sys.machine;
    let np = &sys.network;
    let state = |omega: f64| {
        let v = mp.omega_star * (1.0 + omega) / cp.k_m;
        let p_tau = np.to_pu(mp.p_g_star) - mp.d_pg * omega;
        let phi = (np.to_pu(np.p_lg) - p_tau) / np.b;
        ClassBFullState { v_dc: v, phi, omega_g_dev: omega, p_tau_g: p_tau }
    };
    let residual = |omega: f64| {
        let s = state(omega);
        let i = cp.matching_current(s.v_dc).clamp(-cp.i_dc_max, cp.i_dc_max);
        s.v_dc * i - cp.g_c * s.v_dc * s.v_dc - sys.converter_power(s.phi)
    };
    let (mut lo, mut hi) = (-0.5, 0.5);
    if !(residual(lo) > 0.0 && residual(hi) < 0.0) {
        return Err(Error::Domain("class-B equilibrium not bracketed in |omega| < 0.5 p.u.".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(state(0.5 * (lo + hi)))
}

/// Steady state of the reduced model under constant `w`.
pub fn reduced_equilibrium(d_pc: f64, p_max: f64, d_pg: f64, w: f64) -> ClassBReducedState {
    let mut omega = w / (d_pg + d_pc);
    if (d_pc * omega).abs() > p_max {
        omega = (w - p_max * omega.signum()) / d_pg;
    }
    ClassBReducedState { omega_g_dev: omega, p_tau_g_dev: -d_pg * omega }
}

/// Steady state of the center-of-inertia model under constant `w1`.
pub fn coi_equilibrium(coi: &CoiParams, w1: f64) -> ClassBReducedState {
    let g = |omega: f64| {
        let conv: f64 = coi
            .converters
            .iter()
            .map(|c| (c.d_pc * omega).clamp(-c.p_c_max_dev, c.p_c_max_dev))
            .sum();
        w1 - coi.d_pg_t * omega - conv
    };
    // g is strictly decreasing; widen until bracketed
    let mut span = 1.0;
    while g(-span) <= 0.0 || g(span) >= 0.0 {
        span *= 2.0;
    }
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let omega = 0.5 * (lo + hi);
    ClassBReducedState { omega_g_dev: omega, p_tau_g_dev: -coi.d_pg_t * omega }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{class_a_rhs, class_b_full_rhs, CoiConverter, MachineParams};

    fn rel(a: f64, scale: f64) -> f64 {
        a.abs() / scale
    }

    #[test]
    fn class_a_equilibrium_is_stationary() {
        let sys = class_a_loads_for(&SystemParams::nominal(), 175e3);
        let s = class_a_equilibrium(&sys).unwrap();
        assert!((sys.converter_power(s.phi) - 175e3).abs() < 1e-6);
        let d = class_a_rhs(&s, &sys).unwrap();
        assert!(rel(d.v_dc, 2440.0) < 1e-9, "{d:?}");
        assert!(d.phi.abs() < 1e-9 && d.omega_g_dev.abs() < 1e-9 && d.p_tau_g.abs() < 1e-9);
    }

    #[test]
    fn class_b_equilibrium_is_stationary() {
        let mut sys = SystemParams::nominal();
        sys.network.p_lc = 160e3;
        let s = class_b_full_equilibrium(&sys).unwrap();
        let d = class_b_full_rhs(&s, &sys).unwrap();
        assert!(rel(d.v_dc, 2440.0) < 1e-9, "{d:?}");
        assert!(d.phi.abs() < 1e-9 && d.omega_g_dev.abs() < 1e-9 && d.p_tau_g.abs() < 1e-9);
        assert!(s.omega_g_dev < 0.0);
    }

    #[test]
    fn class_b_overload_settles_saturated() {
        let mut sys = SystemParams::nominal();
        sys.network.p_lc = 200e3;
        let s = class_b_full_equilibrium(&sys).unwrap();
        let cp = &sys.converter;
        assert!(cp.matching_current(s.v_dc) > cp.i_dc_max);
        let d = class_b_full_rhs(&s, &sys).unwrap();
        assert!(rel(d.v_dc, 2440.0) < 1e-9 && d.omega_g_dev.abs() < 1e-9);
    }

    #[test]
    fn reduced_equilibrium_branches() {
        let s = reduced_equilibrium(10.0, 1.0, 7.0, 0.017);
        assert!((s.omega_g_dev - 0.001).abs() < 1e-15);
        let s = reduced_equilibrium(10.0, 0.05, 7.0, -1.0);
        assert!((s.omega_g_dev - (-1.0 + 0.05) / 7.0).abs() < 1e-15);
        assert_eq!(s.p_tau_g_dev, -7.0 * s.omega_g_dev);
    }

    #[test]
    fn coi_equilibrium_matches_single() {
        let mp = MachineParams::nominal();
        let coi = CoiParams::from_fleet(&[mp], &[CoiConverter { d_pc: 10.0, p_c_max_dev: 0.05 }]).unwrap();
        for w in [-1.0, -0.1, 0.0, 0.2, 3.0] {
            let a = coi_equilibrium(&coi, w);
            let b = reduced_equilibrium(10.0, 0.05, 7.0, w);
            assert!((a.omega_g_dev - b.omega_g_dev).abs() < 1e-14, "{w}");
        }
    }
}
