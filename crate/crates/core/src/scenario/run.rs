use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::equilibrium::solve_equilibria;
use crate::error::{Error, Result};
use crate::model::{MachineParams, SystemParams};
use crate::sim::{
    class_a_equilibrium, class_a_steady_power, class_b_full_equilibrium, class_b_target, classify_outcome,
    coi_equilibrium, compare_models, integrate, integrate_observed, reduced_equilibrium, ClassAModel,
    ClassBFullModel, ClassBReducedModel, ClassifyOptions, CoiModel, DcLinkModel, EventKind, HybridSystem, Limits,
    ModelComparison, ModelKind, Outcome, SettleCriterion, SimOptions, StepView, Target, Trajectory,
};
use crate::stab_a::{
    chetaev_instability, exp_rate, lp_bound, roa_certificate, ExpRateCert, InstabilityCert, LpBoundCert, LpOptions,
    RoaCert,
};
use crate::stab_b::{
    coi_iss_gains, gas_check, iss_envelope_check, iss_gains, EnvelopeStatus, GasCheck, IssCert, IssEnvelopeReport,
};

use super::config::{Expectation, ScenarioConfig};

/// Interval parameter used for every ISS certificate issued by a scenario.
pub const ISS_THETA: f64 = 0.9;
/// Dwell inside a target band before a run counts as converged (s).
pub const DWELL: f64 = 0.5;

/// What the certificates say the simulation should do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Converge,
    Collapse,
    /// No applicable certificate.
    NoClaim,
}

/// Every certificate computed for a scenario. Refused certificates are
/// listed with their reason.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CertificateSet {
    /// Converter power before the first event (W), class-A models only.
    pub u_initial: Option<f64>,
    /// Converter power after the last event (W), class-A models only.
    pub u_final: Option<f64>,
    pub roa: Option<RoaCert>,
    pub exp_rate: Option<ExpRateCert>,
    pub lp: Option<LpBoundCert>,
    pub instability: Option<InstabilityCert>,
    pub gas: Option<GasCheck>,
    pub iss: Option<IssCert>,
    /// sup |w| over the run (p.u.), class-B models only.
    pub w_sup: Option<f64>,
    pub refusals: Vec<String>,
}

/// Certificates plus the prediction they support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub certificates: CertificateSet,
    pub prediction: Prediction,
    /// Name of the certificate behind the prediction.
    pub basis: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Agree,
    Disagree,
    /// Disagreement covered by a documented open question.
    OpenQuestion,
}

/// One scenario's certificate-versus-simulation comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub id: String,
    pub model: ModelKind,
    pub prediction: Prediction,
    pub basis: String,
    pub outcome: Outcome,
    pub expected: Option<Expectation>,
    /// Bound checks on the trajectory that failed.
    pub violations: Vec<String>,
    pub certificate_agrees: bool,
    pub expectation_agrees: Option<bool>,
    pub open_question: Option<String>,
    pub status: RowStatus,
    pub margins: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl ConsistencyRow {
    /// Recompute the verdict from the prediction, outcome and violations.
    pub fn judge(&mut self) {
        self.certificate_agrees = self.violations.is_empty()
            && match self.prediction {
                Prediction::Converge => matches!(self.outcome, Outcome::Converged { .. }),
                Prediction::Collapse => matches!(self.outcome, Outcome::Collapsed { .. }),
                Prediction::NoClaim => true,
            };
        self.expectation_agrees = self.expected.map(|e| e.label() == self.outcome.label());
        self.status = if self.certificate_agrees && self.expectation_agrees != Some(false) {
            RowStatus::Agree
        } else if self.open_question.is_some() {
            RowStatus::OpenQuestion
        } else {
            RowStatus::Disagree
        };
    }
}

/// Everything produced by one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub config: ScenarioConfig,
    pub trajectory: Trajectory,
    pub outcome: Outcome,
    pub certification: Certification,
    pub iss_envelope: Option<IssEnvelopeReport>,
    pub reduction: Option<ModelComparison>,
    pub row: ConsistencyRow,
}

/// Parameters in force before the first event and after every load step.
fn segments(cfg: &ScenarioConfig) -> Vec<(SystemParams, f64)> {
    let p_lt = cfg.fleet.as_ref().map_or(0.0, |f| f.p_lt);
    let mut cur = (cfg.params, p_lt);
    let mut out = vec![cur];
    for e in &cfg.events {
        if let EventKind::LoadStep { bus, value } = e.kind {
            match bus {
                crate::sim::Bus::Converter => cur.0.network.p_lc = value,
                crate::sim::Bus::Machine => cur.0.network.p_lg = value,
                crate::sim::Bus::Total => cur.1 = value,
            }
            out.push(cur);
        }
    }
    out
}

fn converter_load(model: ModelKind, sys: &SystemParams) -> f64 {
    match model {
        ModelKind::ClassADc => sys.network.p_lc,
        _ => class_a_steady_power(sys),
    }
}

/// Input w of the reduced or center-of-inertia model for one segment.
fn input_w(cfg: &ScenarioConfig, seg: &(SystemParams, f64)) -> f64 {
    match &cfg.fleet {
        Some(f) if cfg.model == ModelKind::Coi => -(seg.1 - f.p_lt_star) / f.s_base,
        _ => seg.0.load_input_pu(),
    }
}

fn dc_band(u: f64, sys: &SystemParams) -> Option<(f64, f64)> {
    let rep = solve_equilibria(u, &sys.converter).ok()?;
    let x1 = rep.x_bar_1?.x;
    let x2 = rep.x_bar_2.map_or(0.0, |e| e.x);
    Some((x1, 0.5 * (x1 - x2).min(sys.converter.x_tilde_star() - x1)))
}

fn x_bar_1(u: f64, sys: &SystemParams) -> Option<f64> {
    solve_equilibria(u, &sys.converter).ok()?.x_bar_1.map(|e| e.x)
}

fn last_v_reset(cfg: &ScenarioConfig) -> Option<f64> {
    cfg.events.iter().rev().find_map(|e| match &e.kind {
        EventKind::StateReset { component, value } if component == "v_dc" => Some(*value),
        _ => None,
    })
}

/// Initial state: the equilibrium of the initial parameters with any
/// configured overrides applied.
pub fn initial_state(cfg: &ScenarioConfig) -> Result<Vec<f64>> {
    let sys = &cfg.params;
    let cols = cfg.columns();
    let need_eq = cols.iter().any(|c| !cfg.initial.contains_key(*c));
    let mut y = if !need_eq {
        vec![0.0; cols.len()]
    } else {
        match cfg.model {
            ModelKind::ClassADc => vec![x_bar_1(sys.network.p_lc, sys).ok_or_else(|| {
                Error::Domain(format!("no dc-link equilibrium at {} W; set initial.v_dc", sys.network.p_lc))
            })?],
            ModelKind::ClassA => class_a_equilibrium(sys)?.to_array().to_vec(),
            ModelKind::ClassBFull => class_b_full_equilibrium(sys)?.to_array().to_vec(),
            ModelKind::ClassBReduced => {
                let w = sys.load_input_pu();
                reduced_equilibrium(sys.matching_droop_b(), sys.p_c_max_dev_pu(), sys.machine.d_pg, w).to_array().to_vec()
            }
            ModelKind::Coi => {
                let f = cfg.fleet.as_ref().expect("validated");
                let w1 = -(f.p_lt - f.p_lt_star) / f.s_base;
                coi_equilibrium(&f.coi()?, w1).to_array().to_vec()
            }
        }
    };
    for (i, c) in cols.iter().enumerate() {
        if let Some(v) = cfg.initial.get(*c) {
            y[i] = *v;
        }
    }
    Ok(y)
}

fn machine_for_coi(cfg: &ScenarioConfig) -> Result<(MachineParams, f64, f64, f64)> {
    let f = cfg.fleet.as_ref().expect("validated");
    let coi = f.coi()?;
    let mp = MachineParams {
        h_g: coi.h_t,
        tau_g: coi.tau_g_t,
        d_pg: coi.d_pg_t,
        p_g_star: coi.p_g_t_star,
        omega_star: f.machines[0].omega_star,
    };
    let d_pc = coi.converters.iter().map(|c| c.d_pc).sum();
    let p_max = coi.converters.iter().map(|c| c.p_c_max_dev).sum();
    Ok((mp, coi.d_pg_t, d_pc, p_max))
}

/// Compute the certificates that apply to a scenario and what they predict.
pub fn certify(cfg: &ScenarioConfig) -> Result<Certification> {
    cfg.validate()?;
    let segs = segments(cfg);
    let mut c = CertificateSet::default();
    let y0 = initial_state(cfg)?;
    let refuse = |c: &mut CertificateSet, e: Error| c.refusals.push(e.to_string());
    match cfg.model {
        ModelKind::ClassADc | ModelKind::ClassA => {
            let sys = &cfg.params;
            let cp = &sys.converter;
            let u0 = converter_load(cfg.model, &segs[0].0);
            let uf = converter_load(cfg.model, &segs[segs.len() - 1].0);
            c.u_initial = Some(u0);
            c.u_final = Some(uf);
            match roa_certificate(uf, cp) {
                Ok(r) => c.roa = Some(r),
                Err(e) => refuse(&mut c, e),
            }
            match exp_rate(uf, cp) {
                Ok(r) => c.exp_rate = Some(r),
                Err(e) => refuse(&mut c, e),
            }
            let x_ref = x_bar_1(u0, sys);
            let rep = solve_equilibria(uf, cp)?;
            let v_sup = segs.iter().map(|s| (converter_load(cfg.model, &s.0) - u0).abs()).fold(0.0, f64::max);
            let reset = last_v_reset(cfg);
            let (prediction, basis) = if !rep.has_equilibrium() {
                match x_ref {
                    Some(x1) => {
                        let inst = chetaev_instability(uf, cp, x1)?;
                        let holds = inst.holds;
                        c.instability = Some(inst);
                        if holds {
                            (Prediction::Collapse, "chetaev_instability")
                        } else {
                            (Prediction::NoClaim, "")
                        }
                    }
                    None => (Prediction::NoClaim, ""),
                }
            } else if v_sup > 0.0 {
                let lp = x_ref.ok_or_else(|| Error::Domain(format!("no dc-link equilibrium at {u0} W")))
                    .and_then(|x1| lp_bound(u0, cp, f64::INFINITY, y0[0] - x1, v_sup, LpOptions::default()));
                match lp {
                    Ok(l) => {
                        c.lp = Some(l);
                        (Prediction::Converge, "lp_bound")
                    }
                    Err(e) => {
                        refuse(&mut c, e);
                        match (&c.roa, x_ref) {
                            (Some(r), Some(x1)) if r.contains(x1) && reset.is_none() => (Prediction::Converge, "roa"),
                            _ => (Prediction::NoClaim, ""),
                        }
                    }
                }
            } else {
                let x = reset.unwrap_or(y0[0]);
                match &c.roa {
                    Some(r) if r.contains(x) => (Prediction::Converge, "roa"),
                    Some(r) if x <= r.lower => (Prediction::Collapse, "roa"),
                    _ => (Prediction::NoClaim, ""),
                }
            };
            Ok(Certification { certificates: c, prediction, basis: basis.into() })
        }
        ModelKind::ClassBFull | ModelKind::ClassBReduced | ModelKind::Coi => {
            let sys = &cfg.params;
            let (mp, d_pg, d_pc, p_max) = if cfg.model == ModelKind::Coi {
                machine_for_coi(cfg)?
            } else {
                (sys.machine, sys.machine.d_pg, sys.matching_droop_b(), sys.p_c_max_dev_pu())
            };
            let gas = gas_check(&mp, d_pg, d_pc, p_max);
            c.gas = Some(gas);
            let w_sup = segs.iter().map(|s| input_w(cfg, s).abs()).fold(0.0, f64::max);
            c.w_sup = Some(w_sup);
            let iss = if cfg.model == ModelKind::Coi {
                coi_iss_gains(ISS_THETA, &cfg.fleet.as_ref().expect("validated").coi()?)
            } else {
                iss_gains(ISS_THETA, &mp, d_pc, p_max)
            };
            let (prediction, basis) = match iss {
                Ok(cert) => {
                    let inside = cert.gamma(w_sup).is_ok();
                    c.iss = Some(cert);
                    if w_sup == 0.0 && gas.holds {
                        (Prediction::Converge, "gas")
                    } else if inside {
                        (Prediction::Converge, "iss")
                    } else {
                        c.refusals.push(format!("iss refused: sup|w| = {w_sup} p.u. lies outside the gain domain"));
                        (Prediction::NoClaim, "")
                    }
                }
                Err(e) => {
                    refuse(&mut c, e);
                    if w_sup == 0.0 && gas.holds {
                        (Prediction::Converge, "gas")
                    } else {
                        (Prediction::NoClaim, "")
                    }
                }
            };
            Ok(Certification { certificates: c, prediction, basis: basis.into() })
        }
    }
}

/// Equilibrium bands the final state is classified against.
fn targets(cfg: &ScenarioConfig) -> Vec<Target> {
    let segs = segments(cfg);
    let last = &segs[segs.len() - 1];
    let sys = &last.0;
    match cfg.model {
        ModelKind::ClassADc => dc_band(sys.network.p_lc, sys)
            .map(|(x1, band)| Target { name: "x_bar_1".into(), state: vec![x1], band: vec![band] })
            .into_iter()
            .collect(),
        ModelKind::ClassA => {
            let band = dc_band(class_a_steady_power(sys), sys);
            match (class_a_equilibrium(sys), band) {
                (Ok(eq), Some((_, b))) => vec![Target {
                    name: "class_a_equilibrium".into(),
                    state: eq.to_array().to_vec(),
                    band: vec![b, 1e-5, 1e-4, 1e-2],
                }],
                _ => vec![],
            }
        }
        ModelKind::ClassBFull => class_b_full_equilibrium(sys).map(|eq| class_b_target(&eq.to_array())).into_iter().collect(),
        ModelKind::ClassBReduced | ModelKind::Coi => {
            let w = input_w(cfg, last);
            let z = if cfg.model == ModelKind::Coi {
                match cfg.fleet.as_ref().expect("validated").coi() {
                    Ok(coi) => coi_equilibrium(&coi, w),
                    Err(_) => return vec![],
                }
            } else {
                reduced_equilibrium(sys.matching_droop_b(), sys.p_c_max_dev_pu(), sys.machine.d_pg, w)
            };
            vec![Target { name: "forced_equilibrium".into(), state: z.to_array().to_vec(), band: vec![1e-4, 1e-2] }]
        }
    }
}

fn run_model<const N: usize, S: HybridSystem<N>>(
    sys: &mut S,
    y0: &[f64],
    cfg: &ScenarioConfig,
    opts: &SimOptions,
    watch: Option<(usize, f64, f64)>,
) -> Result<(Trajectory, f64, f64)> {
    let y: [f64; N] = y0
        .try_into()
        .map_err(|_| Error::Domain(format!("initial state has {} components, model needs {N}", y0.len())))?;
    let (mut worst_y, mut worst_v) = (0.0f64, 0.0f64);
    let tr = match watch {
        Some((col, reference, u0)) => {
            let mut obs = |s: &StepView| {
                worst_y = worst_y.max((s.y[col] - reference).abs());
                worst_v = worst_v.max((s.p_c - u0).abs());
            };
            integrate_observed(sys, y, &cfg.events, cfg.t_end, opts, Some(&mut obs))?
        }
        None => integrate(sys, y, &cfg.events, cfg.t_end, opts)?,
    };
    Ok((tr, worst_y, worst_v))
}

/// Simulate a scenario and compare the result with its certificates.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    let certification = certify(cfg)?;
    let y0 = initial_state(cfg)?;
    let targets = targets(cfg);
    let limits = Limits::for_converter(&cfg.params.converter);
    let opts = SimOptions {
        tol: cfg.tol,
        output_interval: cfg.output_interval,
        settle: targets.first().map(|t| SettleCriterion { target: t.clone(), dwell: DWELL }),
        ..Default::default()
    };
    let certs = &certification.certificates;
    // the L_p bound is checked against every accepted step
    let watch = match (&certs.lp, certs.u_initial) {
        (Some(lp), Some(u0)) => Some((0, lp.equilibrium, u0)),
        _ => None,
    };
    let (trajectory, worst_dev, sup_v) = match cfg.model {
        ModelKind::ClassADc => {
            run_model(&mut DcLinkModel::new(cfg.params.converter, cfg.params.network.p_lc)?, &y0, cfg, &opts, watch)?
        }
        ModelKind::ClassA => run_model(&mut ClassAModel::new(cfg.params)?, &y0, cfg, &opts, watch)?,
        ModelKind::ClassBFull => run_model(&mut ClassBFullModel::new(cfg.params)?, &y0, cfg, &opts, None)?,
        ModelKind::ClassBReduced => run_model(&mut ClassBReducedModel::new(cfg.params)?, &y0, cfg, &opts, None)?,
        ModelKind::Coi => {
            let f = cfg.fleet.as_ref().expect("validated");
            let mut m = CoiModel {
                coi: f.coi()?,
                s_base: f.s_base,
                p_lt: f.p_lt,
                p_lt_star: f.p_lt_star,
                p_c_t_star: f.p_c_t_star,
                pu_ceiling: limits.pu_ceiling,
            };
            run_model(&mut m, &y0, cfg, &opts, None)?
        }
    };
    let has_dc = matches!(cfg.model, ModelKind::ClassADc | ModelKind::ClassA | ModelKind::ClassBFull);
    let co = ClassifyOptions { dwell: DWELL, v_dc_column: has_dc.then_some(0), v_floor: limits.v_floor };
    let outcome = classify_outcome(&trajectory, &targets, &co);

    let mut margins = BTreeMap::new();
    let mut violations = Vec::new();
    let mut notes = Vec::new();
    if let Some(r) = &certs.roa {
        margins.insert("roa_lower_margin".into(), last_v_reset(cfg).unwrap_or(y0[0]) - r.lower);
    }
    if let Some(lp) = &certs.lp {
        let bound = lp.output_bound(sup_v);
        margins.insert("lp_sup_input".into(), sup_v);
        margins.insert("lp_bound".into(), bound);
        margins.insert("lp_max_deviation".into(), worst_dev);
        margins.insert("lp_margin".into(), bound - worst_dev);
        if worst_dev > bound {
            violations.push(format!("|y| reached {worst_dev:e} V, above the L_p bound {bound:e} V"));
        }
    }
    if let Some(inst) = &certs.instability {
        margins.insert("chetaev_margin".into(), inst.worst_margin);
    }
    let mut iss_envelope = None;
    if let (Some(iss), Some(w_sup)) = (&certs.iss, certs.w_sup) {
        if let Ok(g) = iss.gamma(w_sup) {
            margins.insert("iss_gamma".into(), g);
        }
        if matches!(cfg.model, ModelKind::ClassBReduced | ModelKind::Coi) && w_sup > 0.0 {
            match iss_envelope_check(&trajectory, iss, w_sup, DWELL) {
                Ok(rep) => {
                    margins.insert("iss_margin".into(), rep.margin);
                    match rep.status {
                        EnvelopeStatus::Violated => violations.push(format!(
                            "steady |z| = {:e} exceeds gamma = {:e}",
                            rep.steady_norm, rep.gamma
                        )),
                        EnvelopeStatus::Inconclusive => notes.push(format!("ISS envelope not checked: {}", rep.note)),
                        EnvelopeStatus::Holds => {}
                    }
                    iss_envelope = Some(rep);
                }
                Err(e) => notes.push(format!("ISS envelope not checked: {e}")),
            }
        }
    }
    if let (Some(v5), Some(0.0)) = (certs.gas.and_then(|g| g.v5), certs.w_sup) {
        if matches!(cfg.model, ModelKind::ClassBReduced | ModelKind::Coi) {
            let vals: Vec<f64> = trajectory.samples.iter().map(|s| v5.value([s.state[0], s.state[1]])).collect();
            let rise = vals.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
            let tol = 10.0 * cfg.tol * vals.first().copied().unwrap_or(0.0).max(1.0);
            margins.insert("v5_max_rise".into(), rise);
            if rise > tol {
                violations.push(format!("V5 rose by {rise:e} along the trajectory"));
            }
        }
    }
    let mut reduction = None;
    let resets = cfg.events.iter().any(|e| matches!(e.kind, EventKind::StateReset { .. }));
    if cfg.model == ModelKind::ClassBFull && !resets {
        let mut red = ClassBReducedModel::new(cfg.params)?;
        let ropts = SimOptions { settle: None, ..opts.clone() };
        let z0 = reduced_equilibrium(
            cfg.params.matching_droop_b(),
            cfg.params.p_c_max_dev_pu(),
            cfg.params.machine.d_pg,
            cfg.params.load_input_pu(),
        );
        let end = trajectory.last().t;
        let rt = integrate(&mut red, z0.to_array(), &cfg.events, cfg.t_end.min(end.max(1e-9)), &ropts);
        match rt.and_then(|rt| compare_models(&trajectory, &rt, &cfg.params)) {
            Ok(cmp) => {
                margins.insert("reduction_relative_deviation".into(), cmp.relative_machine_deviation);
                margins.insert("max_omega_c_omega_g_gap".into(), cmp.max_converter_machine_gap);
                reduction = Some(cmp);
            }
            Err(e) => notes.push(format!("model comparison skipped: {e}")),
        }
    }
    if let Outcome::Inconclusive { reason } = &outcome {
        notes.push(format!("outcome inconclusive: {reason}"));
    }
    notes.extend(certs.refusals.iter().cloned());
    let mut row = ConsistencyRow {
        id: cfg.id.clone(),
        model: cfg.model,
        prediction: certification.prediction,
        basis: certification.basis.clone(),
        outcome: outcome.clone(),
        expected: cfg.expect,
        violations,
        certificate_agrees: false,
        expectation_agrees: None,
        open_question: cfg.open_question.clone(),
        status: RowStatus::Disagree,
        margins,
        notes,
    };
    row.judge();
    Ok(ScenarioRun { config: cfg.clone(), trajectory, outcome, certification, iss_envelope, reduction, row })
}
