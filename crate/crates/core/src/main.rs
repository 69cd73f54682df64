use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use evopf::acpf::verify_opf;
use evopf::error::{Error, Result};
use evopf::grid::{parse_network, Network};
use evopf::recovery::{LoadModel, OpfSolution};
use evopf::scenario::{load_scenario, scale_penetration, LoadedScenario};
use evopf::socp::{build_program, EvModel};
use evopf::study::{emit_csv, emit_plots, run_study, PlotSelection, PriceCase, StudySpec};
use evopf::{bundled, fixed_current};

#[derive(Parser, Debug)]
#[command(name = "evopf", version, about = "Multi-period OPF for radial feeders with solar and EV fleets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one (model, penetration, tariff) cell.
    Solve(SolveArgs),
    /// Run every combination of models, penetration levels and tariffs.
    Sweep(SweepArgs),
    /// Replay a saved solution through the Newton-Raphson power flow.
    Verify(VerifyArgs),
    /// Write the conic program of one cell in text form.
    DumpProgram(DumpArgs),
}

#[derive(Args, Debug, Clone)]
struct Inputs {
    /// Network TOML; the bundled 33-bus feeder when omitted.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Scenario TOML; the bundled day when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    FixedPower,
    FixedCurrent,
    Both,
}

impl ModelArg {
    fn models(self) -> Vec<LoadModel> {
        match self {
            ModelArg::FixedPower => vec![LoadModel::FixedPower],
            ModelArg::FixedCurrent => vec![LoadModel::FixedCurrent],
            ModelArg::Both => vec![LoadModel::FixedPower, LoadModel::FixedCurrent],
        }
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, value_enum, default_value = "fixed-power")]
    model: ModelArg,
    #[arg(long, default_value_t = 0.5)]
    penetration: f64,
    /// Tariff 1-4, `file` for the scenario's own prices, or a path to a
    /// file of hourly prices.
    #[arg(long, default_value = "file")]
    tou_scenario: String,
    /// Fixed-current voltage convergence tolerance, p.u.
    #[arg(long, default_value_t = fixed_current::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    plots: bool,
    #[arg(long)]
    verify: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    selection: SelectionArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Network TOML; the bundled 33-bus feeder when omitted.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Scenario TOML, repeatable; each gets its own output subdirectory.
    #[arg(long)]
    scenario: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "fixed-power")]
    model: ModelArg,
    /// Comma-separated penetration levels.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5])]
    penetration: Vec<f64>,
    /// Comma-separated tariffs: 1-4, `file`, or a price file path.
    #[arg(long, value_delimiter = ',', default_value = "file")]
    tou_scenario: Vec<String>,
    #[arg(long, default_value_t = fixed_current::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    plots: bool,
    #[arg(long)]
    verify: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    selection: SelectionArgs,
}

#[derive(Args, Debug)]
struct SelectionArgs {
    /// Buses plotted against hour.
    #[arg(long, value_delimiter = ',', default_values_t = [17usize, 33])]
    plot_buses: Vec<usize>,
    /// Hours (1-based) plotted against bus.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize])]
    plot_hours: Vec<usize>,
}

impl SelectionArgs {
    fn selection(&self) -> PlotSelection {
        PlotSelection {
            buses: self.plot_buses.clone(),
            hours: self.plot_hours.clone(),
        }
    }
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// `solution.json` written by `solve`.
    #[arg(long)]
    solution: PathBuf,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, value_enum, default_value = "fixed-power")]
    model: ModelArg,
    #[arg(long, default_value_t = 0.5)]
    penetration: f64,
    #[arg(long, default_value = "file")]
    tou_scenario: String,
    /// Program path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_network(path: Option<&Path>) -> Result<Network> {
    match path {
        Some(p) => parse_network(&read(p)?),
        None => Ok(bundled::ieee33()),
    }
}

fn load_inputs(network: Option<&Path>, scenario: Option<&Path>) -> Result<(Network, LoadedScenario)> {
    let net = load_network(network)?;
    let text = match scenario {
        Some(p) => read(p)?,
        None => bundled::CAISO_DAY_TOML.to_string(),
    };
    let loaded = load_scenario(&text, &net)?;
    Ok((net, loaded))
}

/// Parses a price file: numbers separated by commas, whitespace or newlines.
fn read_prices(path: &Path) -> Result<Vec<f64>> {
    read(path)?
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>().map_err(|e| Error::Parse {
                what: "price file",
                msg: format!("{s:?}: {e}"),
            })
        })
        .collect()
}

/// Resolves tariff arguments. An external price file replaces the
/// scenario's own series and is reported as `file`.
fn resolve_prices(args: &[String], loaded: &mut LoadedScenario) -> Result<Vec<PriceCase>> {
    let mut cases = Vec::new();
    for arg in args {
        let case = match arg.as_str() {
            "file" => PriceCase::Scenario,
            s => match s.parse::<u8>() {
                Ok(id) if (1..=4).contains(&id) => PriceCase::Tariff(id),
                Ok(id) => return Err(Error::Scenario {
                    field: "tou_scenario".into(),
                    msg: format!("unknown tariff {id}, expected 1-4"),
                }),
                Err(_) => {
                    let prices = read_prices(Path::new(s))?;
                    loaded.scenario = loaded.scenario.with_prices(&prices)?;
                    PriceCase::Scenario
                }
            },
        };
        if !cases.contains(&case) {
            cases.push(case);
        }
    }
    Ok(cases)
}

fn single_model(model: ModelArg) -> Result<LoadModel> {
    match model {
        ModelArg::Both => Err(Error::Scenario {
            field: "model".into(),
            msg: "`both` is only valid for sweep".into(),
        }),
        m => Ok(m.models()[0]),
    }
}

/// Runs a study and writes its outputs; returns whether every cell passed.
fn run_and_emit(spec: &StudySpec, out: &Path, plots: bool, selection: &PlotSelection) -> Result<bool> {
    let result = run_study(spec)?;
    emit_csv(&result, out)?;
    if plots {
        emit_plots(&result, out, selection)?;
    }
    for cell in &result.cells {
        log::info!(
            "{} penetration {} tou {}: {}",
            cell.cell.model.as_str(),
            cell.cell.penetration,
            cell.cell.price.label(),
            cell.status()
        );
        if cell.failed() {
            eprintln!(
                "cell {} / {} / tou {}: {}",
                cell.cell.model.as_str(),
                cell.cell.penetration,
                cell.cell.price.label(),
                cell.status()
            );
        }
    }
    if let [only] = result.cells.as_slice() {
        if let Ok(output) = &only.outcome {
            let json = serde_json::to_string_pretty(&output.solution).expect("solution serializes");
            write(&out.join("solution.json"), &json)?;
            if let Some(report) = &output.verification {
                write(&out.join("verification.json"), &report.to_json())?;
            }
        }
    }
    Ok(!result.any_failed())
}

fn solve(args: SolveArgs) -> Result<bool> {
    let (net, mut loaded) = load_inputs(args.inputs.network.as_deref(), args.inputs.scenario.as_deref())?;
    let prices = resolve_prices(std::slice::from_ref(&args.tou_scenario), &mut loaded)?;
    let mut spec = StudySpec::new(net, loaded.scenario, loaded.fleets);
    spec.models = vec![single_model(args.model)?];
    spec.penetration_levels = vec![args.penetration];
    spec.prices = prices;
    spec.verify = args.verify;
    spec.fc_tol = args.tol;
    spec.workers = args.workers;
    spec.validate()?;
    run_and_emit(&spec, &args.out, args.plots, &args.selection.selection())
}

fn sweep(args: SweepArgs) -> Result<bool> {
    let net = load_network(args.network.as_deref())?;
    let scenarios: Vec<Option<PathBuf>> = if args.scenario.is_empty() {
        vec![None]
    } else {
        args.scenario.iter().cloned().map(Some).collect()
    };
    let nested = scenarios.len() > 1;
    let mut specs = Vec::new();
    for path in &scenarios {
        let text = match path {
            Some(p) => read(p)?,
            None => bundled::CAISO_DAY_TOML.to_string(),
        };
        let mut loaded = load_scenario(&text, &net)?;
        let prices = resolve_prices(&args.tou_scenario, &mut loaded)?;
        let mut spec = StudySpec::new(net.clone(), loaded.scenario, loaded.fleets);
        spec.models = args.model.models();
        spec.penetration_levels = args.penetration.clone();
        spec.prices = prices;
        spec.verify = args.verify;
        spec.fc_tol = args.tol;
        spec.workers = args.workers;
        spec.validate()?;
        let out = match path {
            Some(p) if nested => args.out.join(p.file_stem().unwrap_or(p.as_os_str())),
            _ => args.out.clone(),
        };
        specs.push((spec, out));
    }
    let mut ok = true;
    for (spec, out) in &specs {
        ok &= run_and_emit(spec, out, args.plots, &args.selection.selection())?;
    }
    Ok(ok)
}

fn verify(args: VerifyArgs) -> Result<bool> {
    let (net, loaded) = load_inputs(args.inputs.network.as_deref(), args.inputs.scenario.as_deref())?;
    let solution: OpfSolution = serde_json::from_str(&read(&args.solution)?).map_err(|e| Error::Parse {
        what: "solution",
        msg: e.to_string(),
    })?;
    if solution.horizon() != loaded.scenario.horizon {
        return Err(Error::LengthMismatch {
            field: "solution hours".into(),
            got: solution.horizon(),
            expected: loaded.scenario.horizon,
        });
    }
    let report = verify_opf(&net, &solution, &loaded.scenario)?;
    match &args.out {
        Some(p) => write(p, &report.to_json())?,
        None => println!("{}", report.to_json()),
    }
    for h in report.hours.iter().filter(|h| !h.pass) {
        eprintln!(
            "hour {}: max |dV| {:.3e} at bus {}, flagged {:?}",
            h.hour, h.max_v_dev, h.worst_bus, h.flagged_buses
        );
    }
    Ok(report.pass)
}

fn dump_program(args: DumpArgs) -> Result<bool> {
    let (net, mut loaded) = load_inputs(args.inputs.network.as_deref(), args.inputs.scenario.as_deref())?;
    let model = single_model(args.model)?;
    let case = resolve_prices(std::slice::from_ref(&args.tou_scenario), &mut loaded)?[0];
    let scenario = match case {
        PriceCase::Tariff(id) => {
            let tariff = evopf::scenario::tou_tariff(id, evopf::scenario::DEFAULT_MEAN_PRICE).expect("validated id");
            loaded.scenario.overlay(&tariff)?
        }
        PriceCase::Scenario => loaded.scenario,
    };
    let fleets = scale_penetration(&loaded.fleets, args.penetration)?;
    let ev_model = match model {
        LoadModel::FixedPower => EvModel::FixedPower,
        LoadModel::FixedCurrent => EvModel::FixedCurrent {
            v_hat: vec![vec![1.0; net.n_buses()]; scenario.horizon],
        },
    };
    let program = build_program(&net, &scenario, &fleets, &ev_model)?;
    match &args.out {
        Some(p) => write(p, &program.dump())?,
        None => print!("{}", program.dump()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Verify(a) => verify(a),
        Command::DumpProgram(a) => dump_program(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input() { 2 } else { 1 })
        }
    }
}
