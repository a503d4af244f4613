//! `eqcausal` command-line front end.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eqcausal::catalog;
use eqcausal::dynamics::{probe_stability, probe_stability_wrt, FamilySettings, ProbeSettings};
use eqcausal::pipeline::{verify_batch, DiagramSettings};
use eqcausal::scm::{projection, ScmError, ScmSettings, StructuralSettings};
use eqcausal::{
    apply_hard_intervention, apply_soft_intervention, derive_lee, detect_equilibrium, induce_scm, integrate,
    intervene_lee, intervene_scm, parse_model, solve_lee, solve_scm, IntegrationSettings, InterventionSpec, Mode, Model,
    SolveSettings,
};
use serde_json::{json, Value};

const SCHEMA_VERSION: &str = "1";

#[derive(Parser)]
#[command(name = "eqcausal", version, about = "Equilibrium causal models derived from ODE systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Args)]
struct Opts {
    /// Model file, or the name of a bundled model.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Intervention such as `X2=2` or `X2=(1.7,0)`. `verify` accepts several.
    #[arg(long = "do", global = true, value_name = "CLAUSE")]
    clauses: Vec<String>,
    /// Soft intervention strength; without it interventions are hard.
    #[arg(long, global = true)]
    kappa: Option<f64>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long, global = true)]
    t_max: Option<f64>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Newton starts for the algebraic solvers.
    #[arg(long, global = true)]
    starts: Option<usize>,
    /// Initial states per stability probe.
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write the output here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the (intervened) model and print its trajectory.
    Simulate,
    /// Integrate from the initial state and classify the end state.
    Equilibrium,
    /// Print the intervened model in model-file syntax.
    Intervene,
    /// Print the labeled equilibrium equations.
    Lee,
    /// Print the induced structural causal model.
    Scm {
        /// Report which components are constant at equilibrium and can be dropped.
        #[arg(long)]
        project: bool,
    },
    /// Solve the equilibrium equations by multi-start Newton.
    Solve {
        /// Solve through the structural causal model instead.
        #[arg(long)]
        scm: bool,
    },
    /// Probe stability from sampled initial states.
    Probe {
        /// Target set for stability with respect to interventions, as
        /// comma-separated atom names. Repeat for a family; `""` is the empty set.
        #[arg(long)]
        family: Vec<String>,
    },
    /// Check that intervention and derivation commute.
    Verify,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Equilibrium => "equilibrium",
            Command::Intervene => "intervene",
            Command::Lee => "lee",
            Command::Scm { .. } => "scm",
            Command::Solve { .. } => "solve",
            Command::Probe { .. } => "probe",
            Command::Verify => "verify",
        }
    }
}

/// Failure with its exit code: 1 for a negative verification outcome, 2 for
/// usage, input or evaluation errors.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

/// Output text plus whether the run counts as a verification failure.
struct Output {
    text: String,
    failed: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            if let Err(e) = emit(&cli.opts, &out.text) {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            ExitCode::from(if out.failed { 1 } else { 0 })
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn emit(opts: &Opts, text: &str) -> std::io::Result<()> {
    match &opts.out {
        Some(path) => std::fs::write(path, text),
        None => std::io::stdout().write_all(text.as_bytes()),
    }
}

/// Finds a model by path, then in the `EQCAUSAL_MODELS` directories, then
/// among the bundled models by file stem.
fn load_model(spec: &str) -> Result<(Model, String), Failure> {
    let path = Path::new(spec);
    let mut candidates = vec![path.to_path_buf()];
    if let Some(dirs) = std::env::var_os("EQCAUSAL_MODELS") {
        for dir in std::env::split_paths(&dirs) {
            candidates.push(dir.join(path));
            if let Some(file) = path.file_name() {
                candidates.push(dir.join(file));
                candidates.push(dir.join(file).with_extension("mdl"));
            }
        }
    }
    for c in candidates {
        if c.is_file() {
            let text = std::fs::read_to_string(&c).map_err(|e| usage(format!("{}: {e}", c.display())))?;
            let m = parse_model(&text).map_err(|e| usage(format!("{}: {e}", c.display())))?;
            return Ok((m, c.display().to_string()));
        }
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec);
    match catalog::load(stem) {
        Ok(m) => Ok((m, format!("bundled:{stem}"))),
        Err(catalog::CatalogError::Unknown(_)) => Err(usage(format!("model `{spec}` not found"))),
        Err(e) => Err(usage(e.to_string())),
    }
}

fn integration(opts: &Opts) -> IntegrationSettings {
    let d = IntegrationSettings::default();
    IntegrationSettings { dt: opts.dt.unwrap_or(d.dt), t_max: opts.t_max.unwrap_or(d.t_max), tol: opts.tol.unwrap_or(d.tol), ..d }
}

fn solve_settings(opts: &Opts) -> SolveSettings {
    let d = SolveSettings::default();
    SolveSettings { n_starts: opts.starts.unwrap_or(d.n_starts), seed: opts.seed, tol: opts.tol.unwrap_or(d.tol), ..d }
}

fn probe_settings(opts: &Opts) -> ProbeSettings {
    let d = ProbeSettings::default();
    ProbeSettings { n_samples: opts.samples.unwrap_or(d.n_samples), seed: opts.seed, integration: integration(opts), ..d }
}

fn scm_settings(opts: &Opts) -> ScmSettings {
    let d = ScmSettings::default();
    ScmSettings { structural: StructuralSettings { solve: solve_settings(opts), ..d.structural }, ..d }
}

fn parse_spec(clause: &str, m: &Model, kappa: Option<f64>) -> Result<InterventionSpec, Failure> {
    InterventionSpec::parse(clause, m.layout(), kappa).map_err(|e| usage(format!("--do `{clause}`: {e}")))
}

/// The single intervention of a command; the empty one when `--do` is absent.
fn single_spec(opts: &Opts, m: &Model) -> Result<InterventionSpec, Failure> {
    match opts.clauses.as_slice() {
        [] => Ok(InterventionSpec::empty()),
        [one] => parse_spec(one, m, opts.kappa),
        _ => Err(usage("only `verify` accepts more than one --do")),
    }
}

fn hard_spec(opts: &Opts, m: &Model, what: &str) -> Result<InterventionSpec, Failure> {
    let spec = single_spec(opts, m)?;
    if matches!(spec.mode, Mode::Soft { .. }) {
        return Err(usage(format!("{what} supports hard interventions only; drop --kappa")));
    }
    Ok(spec)
}

/// The model with the command's intervention applied.
fn intervened(opts: &Opts, m: &Model) -> Result<(Model, InterventionSpec), Failure> {
    let spec = single_spec(opts, m)?;
    let d = match spec.mode {
        Mode::Hard => apply_hard_intervention(m, &spec),
        Mode::Soft { .. } => apply_soft_intervention(m, &spec),
    }
    .map_err(|e| usage(e.to_string()))?;
    Ok((d, spec))
}

fn settings_echo(command: &Command, opts: &Opts) -> Value {
    let i = integration(opts);
    let s = solve_settings(opts);
    let samples = match command {
        Command::Verify => opts.samples.unwrap_or(DiagramSettings::default().premise_samples),
        _ => probe_settings(opts).n_samples,
    };
    json!({
        "dt": i.dt,
        "t_max": i.t_max,
        "tol": i.tol,
        "kappa": opts.kappa,
        "starts": s.n_starts,
        "samples": samples,
        "seed": opts.seed,
    })
}

fn envelope(cli: &Cli, source: &str, m: &Model, intervention: Value, report: Value) -> String {
    let v = json!({
        "schema_version": SCHEMA_VERSION,
        "command": cli.command.name(),
        "model": m.name(),
        "source": source,
        "intervention": intervention,
        "settings": settings_echo(&cli.command, &cli.opts),
        "report": report,
    });
    let mut text = serde_json::to_string_pretty(&v).expect("reports serialize");
    text.push('\n');
    text
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("reports serialize")
}

fn run(cli: &Cli) -> Result<Output, Failure> {
    let opts = &cli.opts;
    let model_arg = opts.model.as_deref().ok_or_else(|| usage("--model is required"))?;
    let (m, source) = load_model(model_arg)?;
    let format = opts.format.unwrap_or(if matches!(cli.command, Command::Simulate) { Format::Csv } else { Format::Json });
    if format == Format::Csv && !matches!(cli.command, Command::Simulate) {
        return Err(usage(format!("`{}` only emits JSON", cli.command.name())));
    }
    let ok = |text| Ok(Output { text, failed: false });
    match &cli.command {
        Command::Simulate => {
            let (d, spec) = intervened(opts, &m)?;
            let traj = integrate(&d, &integration(opts)).map_err(|e| usage(e.to_string()))?;
            if format == Format::Json {
                return ok(envelope(cli, &source, &m, json!(spec.to_string()), to_value(&traj)));
            }
            let mut text = String::from("t");
            for v in d.vars() {
                text.push(',');
                text.push_str(&v.name);
            }
            text.push('\n');
            for (t, x) in traj.times.iter().zip(&traj.states) {
                write!(text, "{t}").unwrap();
                for xi in x {
                    write!(text, ",{xi}").unwrap();
                }
                text.push('\n');
            }
            ok(text)
        }
        Command::Equilibrium => {
            let (d, spec) = intervened(opts, &m)?;
            let s = integration(opts);
            let traj = integrate(&d, &s).map_err(|e| usage(e.to_string()))?;
            let report = detect_equilibrium(&traj, &d, s.tol);
            ok(envelope(cli, &source, &m, json!(spec.to_string()), to_value(&report)))
        }
        Command::Intervene => {
            if opts.clauses.is_empty() {
                return Err(usage("`intervene` needs --do"));
            }
            let (d, _) = intervened(opts, &m)?;
            ok(d.to_string())
        }
        Command::Lee => {
            let spec = hard_spec(opts, &m, "`lee`")?;
            let e = intervene_lee(&derive_lee(&m), &spec).map_err(|e| usage(e.to_string()))?;
            ok(envelope(cli, &source, &m, json!(spec.to_string()), to_value(&e)))
        }
        Command::Scm { project } => {
            let spec = hard_spec(opts, &m, "`scm`")?;
            let scm = match induce_scm(&derive_lee(&m), &scm_settings(opts)) {
                Ok(scm) => scm,
                Err(ScmError::NotStructurallySolvable { atom, witness, report }) => {
                    eprintln!("error: not structurally solvable at atom `{atom}` (witness {witness})");
                    let body = json!({ "solvable": false, "structural": to_value(&report) });
                    return Ok(Output { text: envelope(cli, &source, &m, json!(spec.to_string()), body), failed: true });
                }
                Err(e) => return Err(usage(e.to_string())),
            };
            let scm = intervene_scm(&scm, &spec).map_err(|e| usage(e.to_string()))?;
            let mut body = to_value(&scm);
            if *project {
                body["projection"] = to_value(&projection(&scm));
            }
            ok(envelope(cli, &source, &m, json!(spec.to_string()), body))
        }
        Command::Solve { scm } => {
            let spec = hard_spec(opts, &m, "`solve`")?;
            let settings = solve_settings(opts);
            let e = intervene_lee(&derive_lee(&m), &spec).map_err(|e| usage(e.to_string()))?;
            let report = if *scm {
                let induced = induce_scm(&e, &scm_settings(opts)).map_err(|e| Failure { code: 1, message: e.to_string() })?;
                solve_scm(&induced, &settings).map_err(|e| usage(e.to_string()))?
            } else {
                solve_lee(&e, &settings).map_err(|e| usage(e.to_string()))?
            };
            ok(envelope(cli, &source, &m, json!(spec.to_string()), to_value(&report)))
        }
        Command::Probe { family } => {
            let (d, spec) = intervened(opts, &m)?;
            let report = if family.is_empty() {
                to_value(&probe_stability(&d, &probe_settings(opts)).map_err(|e| usage(e.to_string()))?)
            } else {
                let sets: Vec<Vec<String>> = family
                    .iter()
                    .map(|f| f.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
                    .collect();
                let s = FamilySettings { probe: probe_settings(opts), ..Default::default() };
                to_value(&probe_stability_wrt(&d, &sets, &s).map_err(|e| usage(e.to_string()))?)
            };
            ok(envelope(cli, &source, &m, json!(spec.to_string()), report))
        }
        Command::Verify => {
            let specs: Vec<InterventionSpec> = if opts.clauses.is_empty() {
                vec![InterventionSpec::empty()]
            } else {
                opts.clauses.iter().map(|c| parse_spec(c, &m, opts.kappa)).collect::<Result<_, _>>()?
            };
            let d = DiagramSettings::default();
            let settings = DiagramSettings {
                solve: solve_settings(opts),
                integration: integration(opts),
                premise_samples: opts.samples.unwrap_or(d.premise_samples),
                ..d
            };
            let mut reports = Vec::with_capacity(specs.len());
            for r in verify_batch(&m, &specs, &settings) {
                reports.push(r.map_err(|e| usage(e.to_string()))?);
            }
            let failed = reports.iter().any(|r| !r.passed());
            let (intervention, body) = match reports.as_slice() {
                [one] => (json!(specs[0].to_string()), to_value(one)),
                _ => (to_value(&specs.iter().map(ToString::to_string).collect::<Vec<_>>()), to_value(&reports)),
            };
            Ok(Output { text: envelope(cli, &source, &m, intervention, body), failed })
        }
    }
}
