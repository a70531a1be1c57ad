//! Time-domain integration of the piecewise-smooth models.
//!
//! Steps are taken with the Dormand-Prince 5(4) pair while every saturation is
//! locked to one branch. A step that carries a saturation argument across its
//! limit is bisected down to the crossing (to 1e-12 s), the step is cut there
//! and integration restarts on the new branch. Scheduled events land exactly
//! on their timestamps.

mod compare;
mod roa;
mod systems;

pub use compare::{compare_models, ModelComparison};
pub use roa::{
    class_a_dc_outcome, class_a_roa_boundary, class_b_full_outcome, class_b_roa_boundary,
    class_b_target, empirical_roa_boundary,
};
pub use systems::{
    class_a_equilibrium, class_a_loads_for, class_a_steady_power, class_b_full_equilibrium, coi_equilibrium,
    reduced_equilibrium, ClassAModel, ClassBFullModel, ClassBReducedModel, CoiModel, DcLinkModel,
    Limits,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Branch;

/// Which dynamic model a trajectory came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Isolated class-A dc link with prescribed converter power.
    ClassADc,
    ClassA,
    ClassBFull,
    ClassBReduced,
    Coi,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ClassADc => "class_a_dc",
            ModelKind::ClassA => "class_a",
            ModelKind::ClassBFull => "class_b_full",
            ModelKind::ClassBReduced => "class_b_reduced",
            ModelKind::Coi => "coi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bus {
    Converter,
    Machine,
    /// Aggregate load of a center-of-inertia fleet.
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    /// Set the load at `bus` to `value` watts.
    LoadStep { bus: Bus, value: f64 },
    /// Overwrite one state component.
    StateReset { component: String, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// s
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    /// dc voltage fell through the collapse floor.
    Collapse,
    /// dc voltage reached the protection limit x~*.
    Protection,
    /// A state exceeded the divergence ceiling.
    Ceiling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    /// Stopped early after dwelling inside the settle band.
    Settled,
    Terminal { kind: TerminalKind, time: f64 },
    StepUnderflow { time: f64 },
    TooManySwitches { time: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEntry {
    Scheduled { time: f64, event: EventKind },
    BranchSwitch { time: f64, saturation: usize, from: Branch, to: Branch },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: Vec<f64>,
    /// Converter power (W); for the reduced models the deviation-free
    /// equivalent P_c* - sat(...) expressed in W.
    pub p_c: f64,
    pub sat_active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub model: ModelKind,
    pub columns: Vec<String>,
    pub samples: Vec<Sample>,
    pub log: Vec<LogEntry>,
    pub termination: Termination,
    pub accepted_steps: u64,
    pub rejected_steps: u64,
}

impl Trajectory {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column(name)?;
        Some(self.samples.iter().map(|s| s.state[i]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory always holds the initial sample")
    }

    /// Time of the last scheduled event, or 0.
    pub fn last_event_time(&self) -> f64 {
        self.log
            .iter()
            .filter_map(|e| match e {
                LogEntry::Scheduled { time, .. } => Some(*time),
                _ => None,
            })
            .fold(0.0, f64::max)
    }

    pub fn switch_times(&self) -> Vec<f64> {
        self.log
            .iter()
            .filter_map(|e| match e {
                LogEntry::BranchSwitch { time, .. } => Some(*time),
                _ => None,
            })
            .collect()
    }
}

/// A named equilibrium and the per-component band around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub name: String,
    pub state: Vec<f64>,
    pub band: Vec<f64>,
}

impl Target {
    /// Largest component distance in units of the band; <= 1 means inside.
    pub fn distance(&self, state: &[f64]) -> f64 {
        state
            .iter()
            .zip(&self.state)
            .zip(&self.band)
            .map(|((x, t), b)| (x - t).abs() / b)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettleCriterion {
    pub target: Target,
    /// s
    pub dwell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Error tolerance; component i is held to `tol * error_scale[i]`.
    pub tol: f64,
    /// Keep at most one sample per interval (plus events and switches).
    /// `None` keeps every accepted step.
    pub output_interval: Option<f64>,
    pub settle: Option<SettleCriterion>,
    pub max_switches: usize,
    /// Width to which branch crossings are localized (s).
    pub switch_resolution: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            tol: 1e-9,
            output_interval: Some(1e-3),
            settle: None,
            max_switches: 1_000_000,
            switch_resolution: 1e-12,
        }
    }
}

/// A piecewise-smooth model the integrator can drive.
pub trait HybridSystem<const N: usize> {
    fn kind(&self) -> ModelKind;
    fn columns(&self) -> [&'static str; N];
    /// Branch of every saturation at `y`.
    fn branches(&self, y: &[f64; N]) -> Vec<Branch>;
    /// Right-hand side with every saturation locked to `branches`.
    fn rhs(&self, y: &[f64; N], branches: &[Branch]) -> [f64; N];
    /// Non-negative while `y` stays inside the regions of `branches`.
    fn branch_guard(&self, y: &[f64; N], branches: &[Branch]) -> f64;
    /// Signed margin to the nearest terminal surface (negative = crossed).
    fn terminal(&self, y: &[f64; N]) -> (f64, TerminalKind);
    /// Stiffness guard for the active branches.
    fn max_step(&self, branches: &[Branch]) -> f64;
    /// Nominal magnitude used to weight the local error of each component.
    fn error_scale(&self) -> [f64; N];
    fn converter_power(&self, y: &[f64; N], branches: &[Branch]) -> f64;
    fn apply_event(&mut self, y: &mut [f64; N], event: &EventKind) -> Result<()>;

    fn component(&self, name: &str) -> Result<usize> {
        self.columns()
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Domain(format!("{} has no state `{name}`", self.kind().name())))
    }
}

/// Per-step view handed to observers.
pub struct StepView<'a> {
    pub t: f64,
    pub y: &'a [f64],
    pub p_c: f64,
    pub sat_active: bool,
}

// Dormand-Prince 5(4) tableau
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;


fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] += h * acc;
    }
    out
}

/// One Dormand-Prince step. Returns the 5th-order solution, the embedded
/// error estimate and the derivative at the new point.
pub(crate) fn dopri_step<const N: usize, S: HybridSystem<N> + ?Sized>(
    sys: &S,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
    br: &[Branch],
) -> ([f64; N], [f64; N], [f64; N]) {
    let k2 = sys.rhs(&axpy(y, h, &[(A21, k1)]), br);
    let k3 = sys.rhs(&axpy(y, h, &[(A31, k1), (A32, &k2)]), br);
    let k4 = sys.rhs(&axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]), br);
    let k5 = sys.rhs(&axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]), br);
    let k6 = sys.rhs(
        &axpy(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
        br,
    );
    let y5 = axpy(y, h, &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
    let k7 = sys.rhs(&y5, br);
    let mut err = [0.0; N];
    for i in 0..N {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    (y5, err, k7)
}

/// Fixed-step Dormand-Prince on a smooth system (no branch handling). Used to
/// measure the convergence order.
pub fn integrate_fixed<const N: usize, S: HybridSystem<N>>(
    sys: &S,
    y0: [f64; N],
    t_end: f64,
    steps: usize,
) -> [f64; N] {
    let h = t_end / steps as f64;
    let br = sys.branches(&y0);
    let mut y = y0;
    for _ in 0..steps {
        let k1 = sys.rhs(&y, &br);
        y = dopri_step(sys, &y, &k1, h, &br).0;
    }
    y
}

fn error_norm<const N: usize>(err: &[f64; N], scale: &[f64; N], tol: f64) -> f64 {
    err.iter()
        .zip(scale)
        .map(|(e, s)| (e / (tol * s)).abs())
        .fold(0.0, f64::max)
}

struct Recorder<'o> {
    samples: Vec<Sample>,
    interval: Option<f64>,
    last_t: f64,
    observer: Option<&'o mut dyn FnMut(&StepView)>,
}

impl Recorder<'_> {
    fn push(&mut self, t: f64, y: &[f64], p_c: f64, sat_active: bool, force: bool) {
        if let Some(obs) = self.observer.as_mut() {
            obs(&StepView { t, y, p_c, sat_active });
        }
        let due = match self.interval {
            None => true,
            Some(dt) => t - self.last_t >= dt,
        };
        if !(force || due || self.samples.is_empty()) {
            return;
        }
        let sample = Sample { t, state: y.to_vec(), p_c, sat_active };
        match self.samples.last_mut() {
            // a reset at an already-recorded instant replaces that sample
            Some(last) if last.t == t => *last = sample,
            _ => self.samples.push(sample),
        }
        self.last_t = t;
    }
}

/// Integrate `sys` from `y0` over [0, t_end].
pub fn integrate<const N: usize, S: HybridSystem<N>>(
    sys: &mut S,
    y0: [f64; N],
    events: &[Event],
    t_end: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    integrate_observed(sys, y0, events, t_end, opts, None)
}

/// [`integrate`] with a callback invoked at every accepted step.
pub fn integrate_observed<const N: usize, S: HybridSystem<N>>(
    sys: &mut S,
    y0: [f64; N],
    events: &[Event],
    t_end: f64,
    opts: &SimOptions,
    observer: Option<&mut dyn FnMut(&StepView)>,
) -> Result<Trajectory> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::param("t_end", format!("must be positive, got {t_end}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::param("tol", format!("must be positive, got {}", opts.tol)));
    }
    for e in events {
        if !(0.0..=t_end).contains(&e.time) {
            return Err(Error::param("events", format!("event time {} outside [0, {t_end}]", e.time)));
        }
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("initial state must be finite".into()));
    }
    let mut events: Vec<Event> = events.to_vec();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));

    let scale = sys.error_scale();
    let mut rec = Recorder {
        samples: Vec::new(),
        interval: opts.output_interval,
        last_t: f64::NEG_INFINITY,
        observer,
    };
    let mut log = Vec::new();
    let mut y = y0;
    let mut t = 0.0;
    let mut next_event = 0;
    let mut accepted = 0u64;
    let mut rejected = 0u64;
    let mut switches = 0usize;
    let mut settled_since: Option<f64> = None;

    let apply_due_events = |t: f64, y: &mut [f64; N], sys: &mut S, next: &mut usize, log: &mut Vec<LogEntry>| -> Result<bool> {
        let mut any = false;
        while *next < events.len() && events[*next].time <= t {
            sys.apply_event(y, &events[*next].kind)?;
            log.push(LogEntry::Scheduled { time: events[*next].time, event: events[*next].kind.clone() });
            *next += 1;
            any = true;
        }
        Ok(any)
    };

    apply_due_events(t, &mut y, sys, &mut next_event, &mut log)?;
    let mut br = sys.branches(&y);
    rec.push(t, &y, sys.converter_power(&y, &br), br.iter().any(|b| b.is_saturated()), true);

    let finish = |rec: Recorder, log, termination, accepted, rejected, sys: &S| Trajectory {
        model: sys.kind(),
        columns: sys.columns().iter().map(|c| c.to_string()).collect(),
        samples: rec.samples,
        log,
        termination,
        accepted_steps: accepted,
        rejected_steps: rejected,
    };

    let (margin, kind) = sys.terminal(&y);
    if margin < 0.0 {
        let term = Termination::Terminal { kind, time: t };
        return Ok(finish(rec, log, term, accepted, rejected, sys));
    }

    let mut h = 1e-6f64.min(sys.max_step(&br)).min(t_end);
    let mut k1 = sys.rhs(&y, &br);
    let mut termination = Termination::Completed;

    while t < t_end {
        let t_stop = events.get(next_event).map_or(t_end, |e| e.time.min(t_end));
        let h_cap = sys.max_step(&br);
        let mut h_try = h.min(h_cap);
        let hits_stop = t + h_try >= t_stop;
        if hits_stop {
            h_try = t_stop - t;
        }
        let h_min = 1e-15 * t.abs().max(1.0);
        if h_try < h_min && !hits_stop {
            termination = Termination::StepUnderflow { time: t };
            break;
        }

        let (y_new, err, k7) = dopri_step(sys, &y, &k1, h_try, &br);
        let e = error_norm(&err, &scale, opts.tol);
        if !e.is_finite() || y_new.iter().any(|v| !v.is_finite()) || e > 1.0 {
            rejected += 1;
            let f = if e.is_finite() { (0.9 * e.powf(-0.2)).clamp(0.1, 0.9) } else { 0.25 };
            h = h_try * f;
            if h < h_min {
                termination = Termination::StepUnderflow { time: t };
                break;
            }
            continue;
        }

        // did the step leave the branch region or cross a terminal surface?
        let violated = |s: &S, yy: &[f64; N]| s.branch_guard(yy, &br) < 0.0 || s.terminal(yy).0 < 0.0;
        let (mut y_acc, mut t_acc, mut k_next, mut cut) = (y_new, t + h_try, Some(k7), false);
        if hits_stop && h_try == t_stop - t {
            t_acc = t_stop;
        }
        if violated(sys, &y_new) {
            let (mut lo, mut hi) = (0.0, h_try);
            let mut y_hi = y_new;
            while hi - lo > opts.switch_resolution {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let y_mid = dopri_step(sys, &y, &k1, mid, &br).0;
                if violated(sys, &y_mid) {
                    hi = mid;
                    y_hi = y_mid;
                } else {
                    lo = mid;
                }
            }
            y_acc = y_hi;
            t_acc = t + hi;
            k_next = None;
            cut = true;
        }

        accepted += 1;
        let growth = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
        h = (h_try * growth).max(h_min);
        y = y_acc;
        t = t_acc;

        let (margin, kind) = sys.terminal(&y);
        if margin < 0.0 {
            rec.push(t, &y, sys.converter_power(&y, &br), br.iter().any(|b| b.is_saturated()), true);
            termination = Termination::Terminal { kind, time: t };
            break;
        }

        let mut forced = false;
        if cut {
            let new_br = sys.branches(&y);
            for (i, (a, b)) in br.iter().zip(&new_br).enumerate() {
                if a != b {
                    log.push(LogEntry::BranchSwitch { time: t, saturation: i, from: *a, to: *b });
                }
            }
            br = new_br;
            switches += 1;
            forced = true;
        }
        if t >= t_stop && next_event < events.len() && events[next_event].time <= t {
            // record the pre-event state, then the event replaces it in place
            rec.push(t, &y, sys.converter_power(&y, &br), br.iter().any(|b| b.is_saturated()), true);
            apply_due_events(t, &mut y, sys, &mut next_event, &mut log)?;
            br = sys.branches(&y);
            k_next = None;
            forced = true;
            settled_since = None;
        }
        let p_c = sys.converter_power(&y, &br);
        rec.push(t, &y, p_c, br.iter().any(|b| b.is_saturated()), forced || t >= t_end);
        k1 = match k_next {
            Some(k) => k,
            None => sys.rhs(&y, &br),
        };

        if switches > opts.max_switches {
            termination = Termination::TooManySwitches { time: t };
            break;
        }

        if let Some(settle) = &opts.settle {
            if next_event >= events.len() {
                if settle.target.distance(&y) <= 1.0 {
                    let since = *settled_since.get_or_insert(t);
                    if t - since >= settle.dwell {
                        let last = rec.samples.last().map(|s| s.t);
                        if last != Some(t) {
                            rec.push(t, &y, p_c, br.iter().any(|b| b.is_saturated()), true);
                        }
                        termination = Termination::Settled;
                        break;
                    }
                } else {
                    settled_since = None;
                }
            }
        }
    }

    Ok(finish(rec, log, termination, accepted, rejected, sys))
}

/// Outcome of a simulated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Outcome {
    Converged { target: String, residual: f64 },
    Collapsed { time: f64 },
    Diverged { time: f64, reason: String },
    Inconclusive { reason: String },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Converged { .. } => "converged",
            Outcome::Collapsed { .. } => "collapsed",
            Outcome::Diverged { .. } => "diverged",
            Outcome::Inconclusive { .. } => "inconclusive",
        }
    }

    pub fn is_converged_to(&self, name: &str) -> bool {
        matches!(self, Outcome::Converged { target, .. } if target == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    /// Converged needs the trajectory inside the band for this long (s).
    pub dwell: f64,
    /// Index of the dc voltage column, if the model has one.
    pub v_dc_column: Option<usize>,
    /// Collapse floor (V).
    pub v_floor: f64,
}

/// Classify a finished trajectory against named equilibria.
pub fn classify_outcome(traj: &Trajectory, targets: &[Target], opts: &ClassifyOptions) -> Outcome {
    match &traj.termination {
        Termination::Terminal { kind: TerminalKind::Collapse, time } => {
            return Outcome::Collapsed { time: *time };
        }
        Termination::Terminal { kind, time } => {
            return Outcome::Diverged {
                time: *time,
                reason: match kind {
                    TerminalKind::Protection => "dc voltage reached the protection limit".into(),
                    _ => "state exceeded the divergence ceiling".into(),
                },
            };
        }
        Termination::StepUnderflow { time } => {
            return Outcome::Inconclusive { reason: format!("step size underflow at t = {time}") };
        }
        Termination::TooManySwitches { time } => {
            return Outcome::Inconclusive { reason: format!("branch chattering at t = {time}") };
        }
        Termination::Completed | Termination::Settled => {}
    }
    if let Some(col) = opts.v_dc_column {
        if let Some(s) = traj.samples.iter().find(|s| s.state[col] <= opts.v_floor) {
            return Outcome::Collapsed { time: s.t };
        }
    }
    let end = traj.last().t;
    let window_start = end - opts.dwell;
    if window_start < traj.last_event_time() {
        return Outcome::Inconclusive {
            reason: format!("less than {} s simulated after the last event", opts.dwell),
        };
    }
    let window: Vec<&Sample> = traj.samples.iter().filter(|s| s.t >= window_start).collect();
    for target in targets {
        let worst = window.iter().map(|s| target.distance(&s.state)).fold(0.0, f64::max);
        if worst <= 1.0 {
            return Outcome::Converged {
                target: target.name.clone(),
                residual: target.distance(&traj.last().state),
            };
        }
    }
    Outcome::Inconclusive { reason: "terminal state is not inside any equilibrium band".into() }
}
