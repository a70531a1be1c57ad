//! Scenario files.
//!
//! A scenario is a TOML document. Quantities are either bare numbers in the
//! base unit of the field (V, A, F, S, W, s, rad/s, p.u.) or strings of the
//! form `"<number> <unit>"`, e.g. `g_c = "0.83 mS"` or `time = "200 ms"`.
//!
//! ```toml
//! id = "example"
//! model = "class_a_dc"          # class_a_dc | class_a | class_b_full | class_b_reduced | coi
//! t_end = "10 s"
//! tol = 1e-9
//! output_interval = "1 ms"      # or "all" to keep every step
//! expect = "converged"          # optional: converged | collapsed | diverged
//! open_question = "..."         # optional: marks a known disagreement
//!
//! [converter]                   # any subset; the rest are nominal values
//! p_c_star = "150 kW"
//!
//! [machine]
//! [network]
//! p_lc = "175 kW"
//!
//! [initial]                     # state overrides; default is the equilibrium
//! v_dc = "2400 V"
//!
//! [[events]]
//! time = "0.2 s"
//! kind = "load_step"            # or state_reset with `component`
//! bus = "converter"             # converter | machine | total
//! value = "177 kW"
//!
//! [fleet]                       # coi only
//! s_base = "150 kW"
//! p_lt_star = "900 kW"
//! p_lt = "900 kW"
//! p_c_t_star = "450 kW"
//! [[fleet.machines]]
//! count = 3                     # optional repeat
//! [[fleet.converters]]
//! d_pc = 63505.0
//! p_c_max_dev = 0.187
//!
//! [output]
//! csv = "out/example.csv"
//! svg = "out/example.svg"
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::model::{CoiConverter, CoiParams, ConverterParams, MachineParams, NetworkParams, SystemParams};
use crate::sim::{Bus, Event, EventKind, ModelKind};

/// Outcome class a scenario is expected to show.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Converged,
    Collapsed,
    Diverged,
}

impl Expectation {
    pub fn label(self) -> &'static str {
        match self {
            Expectation::Converged => "converged",
            Expectation::Collapsed => "collapsed",
            Expectation::Diverged => "diverged",
        }
    }
}

/// Machines and converters of a center-of-inertia fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub machines: Vec<MachineParams>,
    pub converters: Vec<CoiConverter>,
    /// W
    pub s_base: f64,
    /// W
    pub p_lt_star: f64,
    /// W
    pub p_lt: f64,
    /// W
    pub p_c_t_star: f64,
}

impl FleetConfig {
    pub fn coi(&self) -> Result<CoiParams> {
        CoiParams::from_fleet(&self.machines, &self.converters)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputPaths {
    pub csv: Option<String>,
    pub svg: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: String,
    pub description: String,
    pub model: ModelKind,
    pub params: SystemParams,
    pub fleet: Option<FleetConfig>,
    /// Overrides of the equilibrium initial state, by column name.
    pub initial: BTreeMap<String, f64>,
    pub events: Vec<Event>,
    /// s
    pub t_end: f64,
    pub tol: f64,
    /// s; `None` keeps every accepted step.
    pub output_interval: Option<f64>,
    pub expect: Option<Expectation>,
    pub open_question: Option<String>,
    pub output: OutputPaths,
}

impl ScenarioConfig {
    /// Nominal parameters, no events, equilibrium start.
    pub fn new(id: impl Into<String>, model: ModelKind) -> Self {
        ScenarioConfig {
            id: id.into(),
            description: String::new(),
            model,
            params: SystemParams::nominal(),
            fleet: None,
            initial: BTreeMap::new(),
            events: Vec::new(),
            t_end: 10.0,
            tol: 1e-9,
            output_interval: Some(1e-3),
            expect: None,
            open_question: None,
            output: OutputPaths::default(),
        }
    }

    /// State columns of the selected model.
    pub fn columns(&self) -> &'static [&'static str] {
        columns(self.model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::semantic("id", format!("`{}` must be non-empty [A-Za-z0-9_-]", self.id)));
        }
        section("converter", self.params.converter.validate())?;
        section("machine", self.params.machine.validate())?;
        section("network", self.params.network.validate())?;
        if self.model != ModelKind::ClassADc && self.model != ModelKind::Coi {
            section("converter", self.params.validate())?;
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::semantic("t_end", format!("must be positive, got {}", self.t_end)));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::semantic("tol", format!("must lie in (0, 1), got {}", self.tol)));
        }
        if let Some(h) = self.output_interval {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::semantic("output_interval", format!("must be positive, got {h}")));
            }
        }
        match (&self.fleet, self.model) {
            (None, ModelKind::Coi) => return Err(Error::semantic("fleet", "the coi model needs a [fleet] table")),
            (Some(_), m) if m != ModelKind::Coi => {
                return Err(Error::semantic("fleet", format!("only the coi model takes a fleet, not {}", m.name())))
            }
            (Some(f), _) => {
                section("fleet", f.coi().map(|_| ()))?;
                if !(f.s_base > 0.0) {
                    return Err(Error::semantic("fleet.s_base", "must be positive"));
                }
                for (k, v) in [("p_lt_star", f.p_lt_star), ("p_lt", f.p_lt), ("p_c_t_star", f.p_c_t_star)] {
                    if !v.is_finite() {
                        return Err(Error::semantic(format!("fleet.{k}"), "must be finite"));
                    }
                }
            }
            (None, _) => {}
        }
        let cols = self.columns();
        for (k, v) in &self.initial {
            if !cols.contains(&k.as_str()) {
                return Err(Error::semantic(
                    format!("initial.{k}"),
                    format!("{} has no state `{k}` (states: {})", self.model.name(), cols.join(", ")),
                ));
            }
            if !v.is_finite() {
                return Err(Error::semantic(format!("initial.{k}"), "must be finite"));
            }
        }
        let mut last = 0.0;
        for (i, ev) in self.events.iter().enumerate() {
            let key = format!("events[{i}]");
            if !(ev.time >= last && ev.time <= self.t_end) {
                return Err(Error::semantic(
                    key,
                    format!("time {} must be sorted and lie in [0, t_end = {}]", ev.time, self.t_end),
                ));
            }
            last = ev.time;
            match &ev.kind {
                EventKind::LoadStep { bus, value } => {
                    let ok = match self.model {
                        ModelKind::ClassADc => *bus == Bus::Converter,
                        ModelKind::Coi => *bus == Bus::Total,
                        _ => *bus != Bus::Total,
                    };
                    if !ok {
                        return Err(Error::semantic(
                            format!("{key}.bus"),
                            format!("{} has no {} load", self.model.name(), bus_name(*bus)),
                        ));
                    }
                    if !value.is_finite() {
                        return Err(Error::semantic(format!("{key}.value"), "must be finite"));
                    }
                }
                EventKind::StateReset { component, value } => {
                    if !cols.contains(&component.as_str()) {
                        return Err(Error::semantic(
                            format!("{key}.component"),
                            format!("{} has no state `{component}`", self.model.name()),
                        ));
                    }
                    if !value.is_finite() {
                        return Err(Error::semantic(format!("{key}.value"), "must be finite"));
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn columns(model: ModelKind) -> &'static [&'static str] {
    match model {
        ModelKind::ClassADc => &["v_dc"],
        ModelKind::ClassA | ModelKind::ClassBFull => &["v_dc", "phi", "omega_g_dev", "P_tau_g"],
        ModelKind::ClassBReduced | ModelKind::Coi => &["omega_g_dev", "P_tau_g"],
    }
}

fn section(name: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Parameter { name: field, reason } => Error::semantic(format!("{name}.{field}"), reason),
        other => Error::semantic(name, other.to_string()),
    })
}

fn bus_name(b: Bus) -> &'static str {
    match b {
        Bus::Converter => "converter",
        Bus::Machine => "machine",
        Bus::Total => "total",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dim {
    Voltage,
    Current,
    Capacitance,
    Conductance,
    Power,
    Time,
    AngularRate,
    Gain,
    Angle,
    PerUnit,
}

impl Dim {
    fn base(self) -> &'static str {
        match self {
            Dim::Voltage => "V",
            Dim::Current => "A",
            Dim::Capacitance => "F",
            Dim::Conductance => "S",
            Dim::Power => "W",
            Dim::Time => "s",
            Dim::AngularRate => "rad/s",
            Dim::Gain => "rad/s/V",
            Dim::Angle => "rad",
            Dim::PerUnit => "pu",
        }
    }

    fn scale(self, unit: &str) -> Option<f64> {
        let s = match (self, unit) {
            (Dim::Voltage, "V") | (Dim::Current, "A") | (Dim::Capacitance, "F") => 1.0,
            (Dim::Conductance, "S") | (Dim::Power, "W") | (Dim::Time, "s") => 1.0,
            (Dim::AngularRate, "rad/s") | (Dim::Gain, "rad/s/V") | (Dim::Angle, "rad") => 1.0,
            (Dim::PerUnit, "pu" | "p.u.") => 1.0,
            (Dim::Voltage, "kV") | (Dim::Current, "kA") | (Dim::Power, "kW") => 1e3,
            (Dim::Voltage, "mV") | (Dim::Current, "mA") | (Dim::Capacitance, "mF") => 1e-3,
            (Dim::Conductance, "mS") | (Dim::Time, "ms") => 1e-3,
            (Dim::Capacitance, "uF" | "µF") | (Dim::Conductance, "uS" | "µS") | (Dim::Time, "us" | "µs") => 1e-6,
            (Dim::Power, "MW") => 1e6,
            (Dim::Angle, "deg") => std::f64::consts::PI / 180.0,
            _ => return None,
        };
        Some(s)
    }
}

fn state_dim(component: &str) -> Dim {
    match component {
        "v_dc" => Dim::Voltage,
        "phi" => Dim::Angle,
        _ => Dim::PerUnit,
    }
}

fn quantity(key: &str, v: &Value, dim: Dim) -> Result<f64> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        Value::String(s) => {
            let s = s.trim();
            let (num, unit) = match s.split_once(char::is_whitespace) {
                Some((n, u)) => (n, u.trim()),
                None => (s, ""),
            };
            let x: f64 = num
                .parse()
                .map_err(|_| Error::semantic(key, format!("`{s}` is not `<number> <unit>`")))?;
            if unit.is_empty() {
                return Ok(x);
            }
            let k = dim.scale(unit).ok_or_else(|| {
                Error::semantic(key, format!("unit `{unit}` does not fit this field (base unit {})", dim.base()))
            })?;
            Ok(x * k)
        }
        other => Err(Error::semantic(key, format!("expected a quantity, got {}", other.type_str()))),
    }
}

fn string(key: &str, v: &Value) -> Result<String> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::semantic(key, format!("expected a string, got {}", v.type_str())))
}

fn table<'a>(key: &str, v: &'a Value) -> Result<&'a Table> {
    v.as_table()
        .ok_or_else(|| Error::semantic(key, format!("expected a table, got {}", v.type_str())))
}

fn unknown(key: &str) -> Error {
    if key.rsplit('.').next() == Some("tau_c") {
        Error::semantic(key, "the dc source time constant is neglected per model assumptions")
    } else {
        Error::semantic(key, "unknown key")
    }
}

const CONVERTER_KEYS: [(&str, Dim); 8] = [
    ("c_c", Dim::Capacitance),
    ("g_c", Dim::Conductance),
    ("k_c", Dim::Conductance),
    ("i_dc_max", Dim::Current),
    ("v_dc_star", Dim::Voltage),
    ("p_c_star", Dim::Power),
    ("droop_gain_a", Dim::PerUnit),
    ("k_m", Dim::Gain),
];
const MACHINE_KEYS: [(&str, Dim); 5] = [
    ("h_g", Dim::Time),
    ("tau_g", Dim::Time),
    ("d_pg", Dim::PerUnit),
    ("p_g_star", Dim::Power),
    ("omega_star", Dim::AngularRate),
];
const NETWORK_KEYS: [(&str, Dim); 4] =
    [("b", Dim::PerUnit), ("p_lg", Dim::Power), ("p_lc", Dim::Power), ("s_base", Dim::Power)];
const FLEET_KEYS: [(&str, Dim); 4] =
    [("s_base", Dim::Power), ("p_lt_star", Dim::Power), ("p_lt", Dim::Power), ("p_c_t_star", Dim::Power)];

/// Read the fields of `t` listed in `keys` into `slots`, rejecting any other key
/// except those in `extra`.
fn fill(prefix: &str, t: &Table, keys: &[(&str, Dim)], slots: &mut [&mut f64], extra: &[&str]) -> Result<()> {
    for (k, v) in t {
        let path = format!("{prefix}.{k}");
        match keys.iter().position(|(name, _)| name == k) {
            Some(i) => *slots[i] = quantity(&path, v, keys[i].1)?,
            None if extra.contains(&k.as_str()) => {}
            None => return Err(unknown(&path)),
        }
    }
    Ok(())
}

fn converter(prefix: &str, t: &Table, mut c: ConverterParams) -> Result<ConverterParams> {
    let mut s: [&mut f64; 8] =
        [&mut c.c_c, &mut c.g_c, &mut c.k_c, &mut c.i_dc_max, &mut c.v_dc_star, &mut c.p_c_star, &mut c.droop_gain_a, &mut c.k_m];
    fill(prefix, t, &CONVERTER_KEYS, &mut s, &[])?;
    Ok(c)
}

fn machine(prefix: &str, t: &Table, extra: &[&str]) -> Result<MachineParams> {
    let mut m = MachineParams::nominal();
    let mut s: [&mut f64; 5] = [&mut m.h_g, &mut m.tau_g, &mut m.d_pg, &mut m.p_g_star, &mut m.omega_star];
    fill(prefix, t, &MACHINE_KEYS, &mut s, extra)?;
    Ok(m)
}

fn network(t: &Table) -> Result<NetworkParams> {
    let mut n = NetworkParams::nominal();
    let mut s: [&mut f64; 4] = [&mut n.b, &mut n.p_lg, &mut n.p_lc, &mut n.s_base];
    fill("network", t, &NETWORK_KEYS, &mut s, &[])?;
    Ok(n)
}

fn count(prefix: &str, t: &Table) -> Result<usize> {
    match t.get("count") {
        None => Ok(1),
        Some(Value::Integer(n)) if *n >= 1 => Ok(*n as usize),
        Some(v) => Err(Error::semantic(format!("{prefix}.count"), format!("must be a positive integer, got {v}"))),
    }
}

fn array<'a>(key: &str, v: &'a Value) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| Error::semantic(key, format!("expected an array of tables, got {}", v.type_str())))
}

fn fleet(t: &Table, sys: &SystemParams) -> Result<FleetConfig> {
    let mut f = FleetConfig {
        machines: Vec::new(),
        converters: Vec::new(),
        s_base: sys.network.s_base,
        p_lt_star: 0.0,
        p_lt: f64::NAN,
        p_c_t_star: 0.0,
    };
    for (k, v) in t {
        match k.as_str() {
            "machines" => {
                for (i, m) in array("fleet.machines", v)?.iter().enumerate() {
                    let p = format!("fleet.machines[{i}]");
                    let mt = table(&p, m)?;
                    let mp = machine(&p, mt, &["count"])?;
                    f.machines.extend(std::iter::repeat_n(mp, count(&p, mt)?));
                }
            }
            "converters" => {
                for (i, c) in array("fleet.converters", v)?.iter().enumerate() {
                    let p = format!("fleet.converters[{i}]");
                    let ct = table(&p, c)?;
                    let mut cc = CoiConverter { d_pc: sys.matching_droop_b(), p_c_max_dev: sys.p_c_max_dev_pu() };
                    let mut s: [&mut f64; 2] = [&mut cc.d_pc, &mut cc.p_c_max_dev];
                    fill(&p, ct, &[("d_pc", Dim::PerUnit), ("p_c_max_dev", Dim::PerUnit)], &mut s, &["count"])?;
                    f.converters.extend(std::iter::repeat_n(cc, count(&p, ct)?));
                }
            }
            _ => {
                let mut s: [&mut f64; 4] = [&mut f.s_base, &mut f.p_lt_star, &mut f.p_lt, &mut f.p_c_t_star];
                let one = Table::from_iter([(k.clone(), v.clone())]);
                fill("fleet", &one, &FLEET_KEYS, &mut s, &[])?;
            }
        }
    }
    if f.p_lt.is_nan() {
        f.p_lt = f.p_lt_star;
    }
    Ok(f)
}

fn event(i: usize, v: &Value) -> Result<Event> {
    let key = format!("events[{i}]");
    let t = table(&key, v)?;
    let get = |k: &str| t.get(k).ok_or_else(|| Error::semantic(format!("{key}.{k}"), "missing"));
    let kind = string(&format!("{key}.kind"), get("kind")?)?;
    let time = quantity(&format!("{key}.time"), get("time")?, Dim::Time)?;
    let allowed: &[&str] = match kind.as_str() {
        "load_step" => &["time", "kind", "bus", "value"],
        "state_reset" => &["time", "kind", "component", "value"],
        other => {
            return Err(Error::semantic(
                format!("{key}.kind"),
                format!("`{other}` is not load_step or state_reset"),
            ))
        }
    };
    if let Some(k) = t.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(unknown(&format!("{key}.{k}")));
    }
    let kind = if kind == "load_step" {
        let bus = match string(&format!("{key}.bus"), get("bus")?)?.as_str() {
            "converter" => Bus::Converter,
            "machine" => Bus::Machine,
            "total" => Bus::Total,
            other => {
                return Err(Error::semantic(
                    format!("{key}.bus"),
                    format!("`{other}` is not converter, machine or total"),
                ))
            }
        };
        EventKind::LoadStep { bus, value: quantity(&format!("{key}.value"), get("value")?, Dim::Power)? }
    } else {
        let component = string(&format!("{key}.component"), get("component")?)?;
        let value = quantity(&format!("{key}.value"), get("value")?, state_dim(&component))?;
        EventKind::StateReset { component, value }
    };
    Ok(Event { time, kind })
}

fn model_kind(s: &str) -> Result<ModelKind> {
    [ModelKind::ClassADc, ModelKind::ClassA, ModelKind::ClassBFull, ModelKind::ClassBReduced, ModelKind::Coi]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| {
            Error::semantic("model", format!("`{s}` is not class_a_dc, class_a, class_b_full, class_b_reduced or coi"))
        })
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Parse and validate a scenario.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        Error::ConfigSyntax { line, column, message: e.message().trim().to_string() }
    })?;
    let model = model_kind(&string("model", doc.get("model").ok_or_else(|| Error::semantic("model", "missing"))?)?)?;
    let mut cfg = ScenarioConfig::new("", model);
    let mut fleet_table = None;
    for (k, v) in &doc {
        match k.as_str() {
            "model" => {}
            "id" => cfg.id = string(k, v)?,
            "description" => cfg.description = string(k, v)?,
            "t_end" => cfg.t_end = quantity(k, v, Dim::Time)?,
            "tol" => cfg.tol = quantity(k, v, Dim::PerUnit)?,
            "output_interval" => {
                cfg.output_interval = match v.as_str() {
                    Some("all") => None,
                    _ => Some(quantity(k, v, Dim::Time)?),
                }
            }
            "expect" => {
                cfg.expect = Some(match string(k, v)?.as_str() {
                    "converged" => Expectation::Converged,
                    "collapsed" => Expectation::Collapsed,
                    "diverged" => Expectation::Diverged,
                    other => {
                        return Err(Error::semantic(k, format!("`{other}` is not converged, collapsed or diverged")))
                    }
                })
            }
            "open_question" => cfg.open_question = Some(string(k, v)?),
            "converter" => cfg.params.converter = converter("converter", table(k, v)?, cfg.params.converter)?,
            "machine" => cfg.params.machine = machine("machine", table(k, v)?, &[])?,
            "network" => cfg.params.network = network(table(k, v)?)?,
            "fleet" => fleet_table = Some(table(k, v)?),
            "initial" => {
                for (c, x) in table(k, v)? {
                    cfg.initial.insert(c.clone(), quantity(&format!("initial.{c}"), x, state_dim(c))?);
                }
            }
            "events" => {
                for (i, e) in array(k, v)?.iter().enumerate() {
                    cfg.events.push(event(i, e)?);
                }
            }
            "output" => {
                for (o, p) in table(k, v)? {
                    let path = format!("output.{o}");
                    match o.as_str() {
                        "csv" => cfg.output.csv = Some(string(&path, p)?),
                        "svg" => cfg.output.svg = Some(string(&path, p)?),
                        _ => return Err(unknown(&path)),
                    }
                }
            }
            _ => return Err(unknown(k)),
        }
    }
    if cfg.id.is_empty() {
        return Err(Error::semantic("id", "missing"));
    }
    if let Some(t) = fleet_table {
        cfg.fleet = Some(fleet(t, &cfg.params)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn num(x: f64) -> String {
    // Debug formatting is the shortest representation that reads back exactly
    let s = format!("{x:?}");
    if x.is_finite() {
        s
    } else {
        format!("\"{s}\"")
    }
}

fn qty(x: f64, dim: Dim) -> String {
    match dim {
        Dim::PerUnit => num(x),
        _ => format!("\"{x:?} {}\"", dim.base()),
    }
}

fn quote(s: &str) -> String {
    Value::String(s.to_string()).to_string()
}

/// Canonical TOML form. Every field is written, so the result does not
/// depend on the nominal defaults.
pub fn emit_config(cfg: &ScenarioConfig) -> String {
    let mut o = String::new();
    let w = &mut o;
    let _ = writeln!(w, "id = {}", quote(&cfg.id));
    if !cfg.description.is_empty() {
        let _ = writeln!(w, "description = {}", quote(&cfg.description));
    }
    let _ = writeln!(w, "model = \"{}\"", cfg.model.name());
    let _ = writeln!(w, "t_end = {}", qty(cfg.t_end, Dim::Time));
    let _ = writeln!(w, "tol = {}", num(cfg.tol));
    match cfg.output_interval {
        Some(h) => {
            let _ = writeln!(w, "output_interval = {}", qty(h, Dim::Time));
        }
        None => {
            let _ = writeln!(w, "output_interval = \"all\"");
        }
    }
    if let Some(e) = cfg.expect {
        let _ = writeln!(w, "expect = \"{}\"", e.label());
    }
    if let Some(q) = &cfg.open_question {
        let _ = writeln!(w, "open_question = {}", quote(q));
    }
    let c = &cfg.params.converter;
    let _ = writeln!(w, "\n[converter]");
    for ((k, d), x) in CONVERTER_KEYS
        .iter()
        .zip([c.c_c, c.g_c, c.k_c, c.i_dc_max, c.v_dc_star, c.p_c_star, c.droop_gain_a, c.k_m])
    {
        if *k == "g_c" && x == ConverterParams::nominal().g_c {
            let _ = writeln!(w, "# G_c = 0.83 mS");
        }
        let _ = writeln!(w, "{k} = {}", qty(x, *d));
    }
    let _ = writeln!(w, "\n[machine]");
    write_machine(w, &cfg.params.machine);
    let n = &cfg.params.network;
    let _ = writeln!(w, "\n[network]");
    for ((k, d), x) in NETWORK_KEYS.iter().zip([n.b, n.p_lg, n.p_lc, n.s_base]) {
        let _ = writeln!(w, "{k} = {}", qty(x, *d));
    }
    if !cfg.initial.is_empty() {
        let _ = writeln!(w, "\n[initial]");
        for (k, x) in &cfg.initial {
            let _ = writeln!(w, "{k} = {}", qty(*x, state_dim(k)));
        }
    }
    if let Some(f) = &cfg.fleet {
        let _ = writeln!(w, "\n[fleet]");
        for ((k, d), x) in FLEET_KEYS.iter().zip([f.s_base, f.p_lt_star, f.p_lt, f.p_c_t_star]) {
            let _ = writeln!(w, "{k} = {}", qty(x, *d));
        }
        for m in &f.machines {
            let _ = writeln!(w, "\n[[fleet.machines]]");
            write_machine(w, m);
        }
        for c in &f.converters {
            let _ = writeln!(w, "\n[[fleet.converters]]");
            let _ = writeln!(w, "d_pc = {}\np_c_max_dev = {}", num(c.d_pc), num(c.p_c_max_dev));
        }
    }
    for e in &cfg.events {
        let _ = writeln!(w, "\n[[events]]\ntime = {}", qty(e.time, Dim::Time));
        match &e.kind {
            EventKind::LoadStep { bus, value } => {
                let _ = writeln!(
                    w,
                    "kind = \"load_step\"\nbus = \"{}\"\nvalue = {}",
                    bus_name(*bus),
                    qty(*value, Dim::Power)
                );
            }
            EventKind::StateReset { component, value } => {
                let _ = writeln!(
                    w,
                    "kind = \"state_reset\"\ncomponent = {}\nvalue = {}",
                    quote(component),
                    qty(*value, state_dim(component))
                );
            }
        }
    }
    if cfg.output.csv.is_some() || cfg.output.svg.is_some() {
        let _ = writeln!(w, "\n[output]");
        if let Some(p) = &cfg.output.csv {
            let _ = writeln!(w, "csv = {}", quote(p));
        }
        if let Some(p) = &cfg.output.svg {
            let _ = writeln!(w, "svg = {}", quote(p));
        }
    }
    o
}

fn write_machine(w: &mut String, m: &MachineParams) {
    for ((k, d), x) in MACHINE_KEYS.iter().zip([m.h_g, m.tau_g, m.d_pg, m.p_g_star, m.omega_star]) {
        let _ = writeln!(w, "{k} = {}", qty(x, *d));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = "id = \"m\"\nmodel = \"class_a_dc\"\n";

    #[test]
    fn minimal_config_gets_nominal_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.params, SystemParams::nominal());
        assert_eq!(cfg.t_end, 10.0);
        assert!(cfg.events.is_empty() && cfg.initial.is_empty());
    }

    #[test]
    fn units_are_resolved() {
        let text = format!(
            "{MINIMAL}t_end = \"500 ms\"\n[converter]\ng_c = \"0.83 mS\"\nc_c = \"8000 uF\"\n\
             [network]\np_lc = \"175 kW\"\n[[events]]\ntime = \"200 ms\"\nkind = \"load_step\"\n\
             bus = \"converter\"\nvalue = \"0.177 MW\"\n"
        );
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.t_end, 0.5);
        assert!((cfg.params.converter.g_c - 0.83e-3).abs() < 1e-18);
        assert!((cfg.params.converter.c_c - 8e-3).abs() < 1e-15);
        assert_eq!(cfg.params.network.p_lc, 175e3);
        assert_eq!(cfg.events[0].time, 0.2);
        assert_eq!(cfg.events[0].kind, EventKind::LoadStep { bus: Bus::Converter, value: 177e3 });
    }

    #[test]
    fn tau_c_is_rejected() {
        let err = parse_config(&format!("{MINIMAL}[converter]\ntau_c = 0.01\n")).unwrap_err();
        match err {
            Error::ConfigSemantic { key, message } => {
                assert_eq!(key, "converter.tau_c");
                assert!(message.contains("neglected per model assumptions"));
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn negative_current_limit_names_the_key() {
        let err = parse_config(&format!("{MINIMAL}[converter]\ni_dc_max = -1\n")).unwrap_err();
        assert!(matches!(err, Error::ConfigSemantic { ref key, .. } if key == "converter.i_dc_max"), "{err:?}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_config("id = \"x\"\nmodel = \"class_a\"\nt_end = = 3\n").unwrap_err();
        match err {
            Error::ConfigSyntax { line, column, .. } => assert_eq!((line, column), (3, 9)),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn semantic_errors() {
        let cases = [
            ("id = \"x\"\nmodel = \"class_c\"\n", "model"),
            (&format!("{MINIMAL}colour = 1\n") as &str, "colour"),
            (&format!("{MINIMAL}t_end = \"3 kW\"\n"), "t_end"),
            (&format!("{MINIMAL}[initial]\nphi = 0.1\n"), "initial.phi"),
            (&format!("{MINIMAL}[[events]]\ntime = 1\nkind = \"load_step\"\nbus = \"machine\"\nvalue = 1\n"), "events[0].bus"),
            (&format!("{MINIMAL}[[events]]\ntime = 11\nkind = \"load_step\"\nbus = \"converter\"\nvalue = 1\n"), "events[0]"),
            (&format!("{MINIMAL}[fleet]\np_lt = 1\n"), "fleet"),
            ("id = \"x\"\nmodel = \"coi\"\n", "fleet"),
            ("model = \"class_a\"\n", "id"),
        ];
        for (text, want) in cases {
            match parse_config(text) {
                Err(Error::ConfigSemantic { key, .. }) => assert_eq!(key, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn fleet_counts_expand() {
        let text = "id = \"f\"\nmodel = \"coi\"\n[fleet]\np_lt_star = \"900 kW\"\n\
                    [[fleet.machines]]\ncount = 3\n[[fleet.converters]]\ncount = 2\n\
                    [[fleet.converters]]\np_c_max_dev = 0.1\n";
        let cfg = parse_config(text).unwrap();
        let f = cfg.fleet.as_ref().unwrap();
        assert_eq!(f.machines.len(), 3);
        assert_eq!(f.converters.len(), 3);
        assert_eq!(f.converters[2].p_c_max_dev, 0.1);
        assert_eq!(f.p_lt, 900e3);
        assert_eq!(parse_config(&emit_config(&cfg)).unwrap(), cfg);
    }

    fn arb_config() -> impl Strategy<Value = ScenarioConfig> {
        let model = prop_oneof![
            Just(ModelKind::ClassADc),
            Just(ModelKind::ClassA),
            Just(ModelKind::ClassBFull),
            Just(ModelKind::ClassBReduced),
        ];
        (
            model,
            1e-3f64..1e3,
            1e-12f64..1e-3,
            prop::option::of(1e-6f64..1.0),
            1e-4f64..1e-1,
            100e3f64..200e3,
            prop::collection::vec((0.0f64..1.0, 1e3f64..3e5), 0..4),
            any::<bool>(),
            "[a-z0-9_]{1,12}",
            ".{0,20}",
        )
            .prop_map(|(model, t_end, tol, h, c_c, p_lc, steps, init, id, desc)| {
                let mut cfg = ScenarioConfig::new(id, model);
                cfg.description = desc;
                cfg.t_end = t_end;
                cfg.tol = tol;
                cfg.output_interval = h;
                cfg.params.converter.c_c = c_c;
                cfg.params.network.p_lc = p_lc;
                let mut times: Vec<f64> = steps.iter().map(|s| s.0 * t_end).collect();
                times.sort_by(f64::total_cmp);
                for (t, (_, v)) in times.into_iter().zip(steps) {
                    cfg.events.push(Event { time: t, kind: EventKind::LoadStep { bus: Bus::Converter, value: v } });
                }
                if init {
                    cfg.initial.insert(columns(model)[0].into(), 2400.0 + c_c);
                    cfg.expect = Some(Expectation::Collapsed);
                    cfg.open_question = Some("why \"quoted\"".into());
                    cfg.output.csv = Some("out/a b.csv".into());
                }
                cfg
            })
    }

    proptest! {
        #[test]
        fn emit_then_parse_is_identity(cfg in arb_config()) {
            cfg.validate().unwrap();
            let text = emit_config(&cfg);
            prop_assert_eq!(parse_config(&text).unwrap(), cfg);
        }
    }
}
