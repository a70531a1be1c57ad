//! `gfcstab`: equilibria, certificates, simulation, ROA probing and batch
//! consistency runs from the command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gfc_stability::equilibrium::{solve_equilibria, EquilibriumReport};
use gfc_stability::model::SystemParams;
use gfc_stability::scenario::{
    catalog, catalog_entry, certify, emit_config, emit_report, parse_config, run_batch, run_scenario, write_csv,
    write_svg, ConsistencyReport, RowStatus, ScenarioConfig, ScenarioRun,
};
use gfc_stability::sim::{class_a_roa_boundary, class_a_steady_power, class_b_roa_boundary, ModelKind};
use gfc_stability::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_CONSISTENCY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gfcstab", version, about = "Stability certificates and simulation for grid-forming converter grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Equilibria of the dc-link characteristic.
    Equilibria(EquilibriaArgs),
    /// Certificates for a scenario, without simulating.
    Certify(ScenarioArgs),
    /// Run one scenario and write its trajectory.
    Simulate(SimulateArgs),
    /// Empirical region-of-attraction boundary by bisection on the initial dc voltage.
    Roa(RoaArgs),
    /// Run the catalog (or the given scenario files) and print the consistency report.
    Batch(BatchArgs),
    /// Write the built-in catalog as scenario files.
    Catalog(CatalogArgs),
}

#[derive(Debug, Args)]
struct Source {
    /// Scenario file.
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Catalog scenario id.
    #[arg(long)]
    scenario: Option<String>,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    #[command(flatten)]
    source: Source,
    /// Override the integrator tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Svg,
    Both,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Output directory; files are named after the scenario id.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Print the full run summary as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct EquilibriaArgs {
    /// Scenario file whose converter parameters are used. Defaults to the nominal values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Converter load in kW. May be repeated.
    #[arg(long = "load-kw", default_values_t = [165.0, 170.0, 175.0, 177.0])]
    load_kw: Vec<f64>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct RoaArgs {
    #[command(flatten)]
    source: Source,
    /// Bracket on the initial dc voltage (V).
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    bracket: Option<Vec<f64>>,
    /// Width of the final bracket (V).
    #[arg(long, default_value_t = 0.01)]
    tol_v: f64,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Debug, Args)]
struct BatchArgs {
    /// Scenario files or directories of `*.toml` files. Defaults to the built-in catalog.
    paths: Vec<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
    /// Single scenario file; same as a positional path.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    /// Write the machine-readable report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CatalogArgs {
    #[arg(long)]
    out: PathBuf,
}

/// Run the command line `args` (including the program name). Returns the
/// process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_VALIDATION
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Error> {
    match cmd {
        Command::Equilibria(a) => equilibria(a, out),
        Command::Certify(a) => {
            let cfg = load(&a.source, a.tol)?;
            let c = certify(&cfg)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&c).expect("serializable"))?;
            Ok(EXIT_OK)
        }
        Command::Simulate(a) => simulate(a, out),
        Command::Roa(a) => roa(a, out),
        Command::Batch(a) => batch(a, out, err),
        Command::Catalog(a) => {
            std::fs::create_dir_all(&a.out)?;
            for cfg in catalog() {
                let p = a.out.join(format!("{}.toml", cfg.id));
                std::fs::write(&p, emit_config(&cfg))?;
                writeln!(out, "{}", p.display())?;
            }
            Ok(EXIT_OK)
        }
    }
}

fn read_config(path: &Path) -> Result<ScenarioConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn load(src: &Source, tol: Option<f64>) -> Result<ScenarioConfig, Error> {
    let mut cfg = match (&src.config, &src.scenario) {
        (Some(p), _) => read_config(p)?,
        (None, Some(id)) => catalog_entry(id).ok_or_else(|| {
            let ids: Vec<String> = catalog().into_iter().map(|c| c.id).collect();
            Error::Domain(format!("no catalog scenario `{id}` (available: {})", ids.join(", ")))
        })?,
        (None, None) => return Err(Error::Domain("give --config <path> or --scenario <id>".into())),
    };
    if let Some(t) = tol {
        cfg.tol = t;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn equilibria(a: EquilibriaArgs, out: &mut dyn Write) -> Result<i32, Error> {
    let params = match &a.config {
        Some(p) => read_config(p)?.params,
        None => SystemParams::nominal(),
    };
    let reports: Vec<EquilibriumReport> =
        a.load_kw.iter().map(|&u| solve_equilibria(u * 1e3, &params.converter)).collect::<Result<_, _>>()?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&reports).expect("serializable"))?;
        return Ok(EXIT_OK);
    }
    let cp = &params.converter;
    writeln!(out, "x_m = {:.6} V, x_tilde* = {:.8} V", cp.x_m(), cp.x_tilde_star())?;
    writeln!(out, "{:>10} {:>14} {:>14} {:>14}  case", "u [kW]", "x_bar_1 [V]", "x_bar_2 [V]", "u_max [kW]")?;
    for r in &reports {
        let f = |p: &Option<gfc_stability::equilibrium::EquilibriumPoint>| p.map_or("-".to_string(), |e| format!("{:.6}", e.x));
        writeln!(
            out,
            "{:>10.3} {:>14} {:>14} {:>14.4}  {:?}",
            r.u_bar / 1e3,
            f(&r.x_bar_1),
            f(&r.x_bar_2),
            r.u_max / 1e3,
            r.characteristic_case
        )?;
    }
    Ok(EXIT_OK)
}

fn write_outputs(run: &ScenarioRun, o: &OutputArgs, out: &mut dyn Write) -> Result<(), Error> {
    let cfg = &run.config;
    let (csv, svg) = match &o.out {
        Some(dir) => {
            let csv = matches!(o.format, Format::Csv | Format::Both).then(|| dir.join(format!("{}.csv", cfg.id)));
            let svg = matches!(o.format, Format::Svg | Format::Both).then(|| dir.join(format!("{}.svg", cfg.id)));
            (csv, svg)
        }
        None => (cfg.output.csv.as_ref().map(PathBuf::from), cfg.output.svg.as_ref().map(PathBuf::from)),
    };
    if let Some(p) = csv {
        write_csv(&run.trajectory, &p)?;
        writeln!(out, "wrote {}", p.display())?;
    }
    if let Some(p) = svg {
        let title = if cfg.description.is_empty() { cfg.id.clone() } else { format!("{}: {}", cfg.id, cfg.description) };
        write_svg(&run.trajectory, &title, &p)?;
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<i32, Error> {
    let cfg = load(&a.scenario.source, a.scenario.tol)?;
    let run = run_scenario(&cfg)?;
    write_outputs(&run, &a.output, out)?;
    let r = &run.row;
    if a.json {
        let v = serde_json::json!({
            "row": r,
            "certification": run.certification,
            "termination": run.trajectory.termination,
            "accepted_steps": run.trajectory.accepted_steps,
            "rejected_steps": run.trajectory.rejected_steps,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("serializable"))?;
    } else {
        writeln!(out, "scenario:  {}", r.id)?;
        writeln!(out, "outcome:   {:?}", r.outcome)?;
        writeln!(out, "predicted: {:?} ({})", r.prediction, if r.basis.is_empty() { "-" } else { &r.basis })?;
        writeln!(out, "status:    {:?}", r.status)?;
        for (k, v) in &r.margins {
            writeln!(out, "  {k} = {v:e}")?;
        }
        for v in &r.violations {
            writeln!(out, "  violation: {v}")?;
        }
        for n in &r.notes {
            writeln!(out, "  note: {n}")?;
        }
    }
    Ok(if r.status == RowStatus::Disagree { EXIT_CONSISTENCY } else { EXIT_OK })
}

fn roa(a: RoaArgs, out: &mut dyn Write) -> Result<i32, Error> {
    let cfg = load(&a.source, None)?;
    let sys = cfg.params;
    let (lo, hi) = match a.bracket.as_deref() {
        Some([lo, hi]) => (*lo, *hi),
        _ => (0.9 * sys.converter.v_dc_star, sys.converter.x_m()),
    };
    let res = match cfg.model {
        ModelKind::ClassADc | ModelKind::ClassA => {
            let u = if cfg.model == ModelKind::ClassADc { sys.network.p_lc } else { class_a_steady_power(&sys) };
            writeln!(out, "class-A dc link at P_c = {:.3} kW", u / 1e3)?;
            class_a_roa_boundary(&sys.converter, u, (lo, hi), a.tol_v, a.tol)
        }
        ModelKind::ClassBFull => {
            writeln!(out, "class-B two-bus model")?;
            class_b_roa_boundary(&sys, (lo, hi), a.tol_v, a.tol)
        }
        m => return Err(Error::Domain(format!("roa needs a model with a dc voltage state, not {}", m.name()))),
    };
    match res {
        Ok(b) => writeln!(out, "boundary = {b:.6} V (bracket [{lo}, {hi}], width {})", a.tol_v)?,
        Err(Error::Bracket { outcome, .. }) => {
            writeln!(out, "no boundary in [{lo}, {hi}]: both ends {outcome}")?;
        }
        Err(e) => return Err(e),
    }
    Ok(EXIT_OK)
}

fn collect_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Error> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|q| q.extension().is_some_and(|x| x == "toml"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn batch(a: BatchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Error> {
    let mut paths = a.paths.clone();
    paths.extend(a.config.clone());
    let mut configs = if paths.is_empty() {
        catalog()
    } else {
        collect_paths(&paths)?.iter().map(|p| read_config(p)).collect::<Result<Vec<_>, _>>()?
    };
    if configs.is_empty() {
        return Err(Error::Domain("no scenario files found".into()));
    }
    if let Some(t) = a.tol {
        for c in &mut configs {
            c.tol = t;
            c.validate()?;
        }
    }
    let (runs, report): (Vec<ScenarioRun>, ConsistencyReport) = run_batch(&configs)?;
    if a.output.out.is_some() {
        for r in &runs {
            write_outputs(r, &a.output, out)?;
        }
    }
    let (text, json, code) = emit_report(&report);
    write!(out, "{text}")?;
    if let Some(p) = &a.json {
        std::fs::write(p, &json)?;
    }
    if let Some(dir) = &a.output.out {
        std::fs::write(dir.join("report.json"), &json)?;
    }
    if code != EXIT_OK {
        writeln!(err, "consistency check failed")?;
    }
    Ok(code)
}
