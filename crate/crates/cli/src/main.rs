//! `camme`: simulate, discover, audit, evaluate and plot from the command line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use camme::eval::{evaluate, evaluate_graph, EvalReport};
use camme::factor::identifiability_thresholds;
use camme::fixtures::fixture;
use camme::graph::io::{read_graph_json, sem_to_dot, GraphJson};
use camme::graph::{check_assumptions, Applicable, AssumptionReport, CammeModel};
use camme::oica::OicaConfig;
use camme::pipelines::{
    auto_leaf_count, fa_dpc, fa_equvar, oica_rgd, oica_rgd_oracle, CovInput, DiscoveryResult, PipelineConfig,
};
use camme::recursive::RgdConfig;
use camme::simulate::{content_hash, emit_demo_data, sample_camme, Dataset, DemoKind};
use camme::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "camme", version, about = "Causal discovery under random measurement error")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a dataset from a fixture or model JSON.
    Simulate(SimulateArgs),
    /// Run a discovery pipeline on data or on an exact model.
    Discover(DiscoverArgs),
    /// Audit the assumptions of a model and list the results that apply.
    Assumptions(AssumptionsArgs),
    /// Compare a result with the true graph.
    Eval(EvalArgs),
    /// Analytic curves as CSV.
    Curves(CurvesArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct ModelSource {
    /// Built-in fixture, e.g. `ga` or `ge-nongaussian`.
    #[arg(long, conflicts_with = "model")]
    fixture: Option<String>,
    /// Model JSON with edges, noise and measurement-error variances.
    #[arg(long)]
    model: Option<PathBuf>,
}

impl ModelSource {
    fn is_set(&self) -> bool {
        self.fixture.is_some() || self.model.is_some()
    }

    fn load(&self, inputs: &mut Inputs) -> Result<CammeModel> {
        match (&self.fixture, &self.model) {
            (Some(name), _) => fixture(name),
            (None, Some(path)) => {
                inputs.add(path)?;
                read_graph_json(path)?.to_model()
            }
            (None, None) => Err(Error::Config("give --fixture or --model".into())),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    source: ModelSource,
    #[arg(long, default_value_t = 10_000)]
    n_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for data.csv, model.json, meta.json and the manifest.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Method {
    FaEquvar,
    FaDpc,
    OicaRgd,
}

#[derive(Args, Debug, Clone, Serialize)]
struct DiscoverArgs {
    #[arg(long, value_enum)]
    method: Method,
    /// Observations as CSV with a header row.
    #[arg(long, conflicts_with_all = ["oracle", "population"])]
    data: Option<PathBuf>,
    /// Use the exact shared-part covariance (or mixing matrix) of the model.
    #[arg(long, conflicts_with = "population")]
    oracle: bool,
    /// Use the exact observed covariance of the model; factor analysis still runs.
    #[arg(long)]
    population: bool,
    #[command(flatten)]
    source: ModelSource,
    /// Number of leaf nodes; defaults to the model's count for exact input.
    #[arg(long, conflicts_with = "auto_leaf")]
    leaf_count: Option<usize>,
    /// Choose the leaf count by BIC over factor models.
    #[arg(long)]
    auto_leaf: bool,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// Relative gap under which two error variances count as tied.
    #[arg(long, default_value_t = 0.02)]
    tol_equvar: f64,
    /// Relative residual accepted when reconstructing leaf rows.
    #[arg(long)]
    tol_recon: Option<f64>,
    /// Also label as leaves the nodes whose error variance exceeds the smallest (oica-rgd).
    #[arg(long)]
    equal_variance: Option<f64>,
    #[arg(long, default_value_t = 10)]
    oica_starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for result.json, result.dot and the manifest.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct AssumptionsArgs {
    #[command(flatten)]
    source: ModelSource,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct EvalArgs {
    /// True model JSON.
    #[arg(long, conflicts_with = "truth_fixture")]
    truth: Option<PathBuf>,
    #[arg(long)]
    truth_fixture: Option<String>,
    /// A discovery result or a graph JSON.
    #[arg(long)]
    result: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CurveKind {
    Fig2,
    Fig3,
    Fig5,
}

#[derive(Args, Debug, Clone, Serialize)]
struct CurvesArgs {
    #[arg(value_enum)]
    kind: CurveKind,
    #[arg(long, default_value_t = 0.5)]
    rho_tilde: f64,
    #[arg(long, default_value_t = 5.0)]
    gamma_max: f64,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Measurement-error ratio of the scatter data.
    #[arg(long, default_value_t = 1.4)]
    gamma: f64,
    #[arg(long, default_value_t = 1000)]
    n_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    n_min: usize,
    #[arg(long, default_value_t = 100)]
    n_max: usize,
    /// Write `<kind>.csv` and a manifest here instead of printing.
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ReplayArgs {
    manifest: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

/// Hashes of every file read by a run.
#[derive(Default)]
struct Inputs(BTreeMap<String, String>);

impl Inputs {
    fn add(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        self.0.insert(path.display().to_string(), content_hash(&bytes));
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    command: String,
    /// Arguments without `--out`, enough to replay the run.
    args: Vec<String>,
    version: String,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct AssumptionsOutput {
    report: AssumptionReport,
    applicable: Vec<Applicable>,
}

#[derive(Serialize)]
struct ErrorReport {
    exit_code: i32,
    kind: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    candidates: Vec<usize>,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Structural(_) => "structural",
        Error::Config(_) => "config",
        Error::Ambiguity { .. } => "ambiguity",
        Error::Inconsistency(_) => "inconsistency",
        Error::DegeneratePredictor(_) => "degenerate-predictor",
        Error::NotConverged { .. } => "not-converged",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

fn strip_out(args: &[String]) -> Vec<String> {
    let mut kept = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
        } else if !a.starts_with("--out=") {
            kept.push(a.clone());
        }
    }
    kept
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

struct Run<'a> {
    args: &'a [String],
    inputs: Inputs,
}

impl Run<'_> {
    fn manifest<C: Serialize>(self, dir: &Path, command: &str, seed: Option<u64>, config: &C) -> Result<()> {
        let m = Manifest {
            command: command.into(),
            args: strip_out(self.args),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: self.inputs.0,
        };
        write_json(&dir.join("manifest.json"), &m)
    }
}

fn simulate(a: &SimulateArgs, mut run: Run) -> Result<()> {
    let model = a.source.load(&mut run.inputs)?;
    let data = sample_camme(&model, a.n_samples, a.seed)?;
    fs::create_dir_all(&a.out)?;
    data.write_csv(fs::File::create(a.out.join("data.csv"))?)?;
    write_json(&a.out.join("model.json"), &GraphJson::from_model(&model))?;
    write_json(&a.out.join("meta.json"), &data.meta)?;
    run.manifest(&a.out, "simulate", Some(a.seed), a)
}

fn leaves_for(a: &DiscoverArgs, model: Option<&CammeModel>, data: Option<&Dataset>) -> Result<usize> {
    if let Some(l) = a.leaf_count {
        return Ok(l);
    }
    match (a.auto_leaf, model, data) {
        (true, _, Some(d)) => Ok(auto_leaf_count(&d.covariance(), d.n_samples())?.0),
        (true, _, None) => Err(Error::Config("--auto-leaf needs --data".into())),
        (false, Some(m), _) => Ok(m.dag().leaf_nodes().len()),
        (false, None, _) => Err(Error::Config("give --leaf-count or --auto-leaf".into())),
    }
}

fn discover(a: &DiscoverArgs, mut run: Run) -> Result<()> {
    let cfg = PipelineConfig { alpha: a.alpha, equvar_tol: a.tol_equvar, recon_tol: a.tol_recon, fa: None };
    let oica_cfg = OicaConfig { starts: a.oica_starts, seed: a.seed, ..OicaConfig::default() };
    let exact = a.oracle || a.population;
    let (model, data) = if exact {
        if !a.source.is_set() {
            return Err(Error::Config("exact input needs --fixture or --model".into()));
        }
        (Some(a.source.load(&mut run.inputs)?), None)
    } else {
        let Some(path) = &a.data else {
            return Err(Error::Config("give --data, --oracle or --population".into()));
        };
        run.inputs.add(path)?;
        (None, Some(Dataset::read_csv(fs::File::open(path)?)?))
    };
    let leaves = leaves_for(a, model.as_ref(), data.as_ref())?;
    let input = match (&model, &data) {
        (Some(m), _) if a.oracle => Some(CovInput::oracle(m)?),
        (Some(m), _) => Some(CovInput::population(m)?),
        (None, Some(d)) => Some(CovInput::from_dataset(d)),
        (None, None) => None,
    };
    let result: DiscoveryResult = match (a.method, &model, &data) {
        (Method::FaEquvar, _, _) => fa_equvar(input.as_ref().expect("input"), leaves, &cfg)?,
        (Method::FaDpc, _, _) => fa_dpc(input.as_ref().expect("input"), leaves, &cfg)?,
        (Method::OicaRgd, Some(m), _) if a.oracle => oica_rgd_oracle(m, a.equal_variance)?,
        (Method::OicaRgd, Some(_), _) => return Err(Error::Config("oica-rgd takes --data or --oracle".into())),
        (Method::OicaRgd, None, Some(d)) => oica_rgd(d, leaves, &oica_cfg, &RgdConfig::estimated(), a.equal_variance)?,
        (Method::OicaRgd, None, None) => unreachable!("input checked above"),
    };
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("result.json"), &result)?;
    let dot = match &result.graph {
        Some(g) => sem_to_dot(&g.to_sem()?),
        None => result.cpdag.to_dot(),
    };
    fs::write(a.out.join("result.dot"), dot)?;
    for w in &result.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    run.manifest(&a.out, "discover", Some(a.seed), a)
}

fn assumptions(a: &AssumptionsArgs, mut run: Run) -> Result<()> {
    let model = a.source.load(&mut run.inputs)?;
    let report = check_assumptions(&model)?;
    let out = AssumptionsOutput { applicable: report.applicable(), report };
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_json(&dir.join("assumptions.json"), &out)?;
            run.manifest(dir, "assumptions", None, a)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
    }
}

fn eval(a: &EvalArgs, mut run: Run) -> Result<()> {
    let truth = match (&a.truth, &a.truth_fixture) {
        (Some(p), _) => {
            run.inputs.add(p)?;
            read_graph_json(p)?.to_sem()?
        }
        (None, Some(name)) => fixture(name)?.sem,
        (None, None) => return Err(Error::Config("give --truth or --truth-fixture".into())),
    };
    run.inputs.add(&a.result)?;
    let value: serde_json::Value = serde_json::from_slice(&fs::read(&a.result)?)?;
    let report: EvalReport = if value.get("cpdag").is_some() {
        evaluate(&truth, &serde_json::from_value::<DiscoveryResult>(value)?)?
    } else {
        evaluate_graph(&truth, &serde_json::from_value::<GraphJson>(value)?.to_sem()?)?
    };
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_json(&dir.join("eval.json"), &report)?;
            run.manifest(dir, "eval", None, a)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

fn fig5_csv(n_min: usize, n_max: usize) -> Result<String> {
    if n_min < 1 || n_max < n_min {
        return Err(Error::Config(format!("bad range [{n_min}, {n_max}]")));
    }
    let mut s = String::from("n,phi,c\n");
    for n in n_min..=n_max {
        let (phi, c) = identifiability_thresholds(n);
        s.push_str(&format!("{n},{phi},{c}\n"));
    }
    Ok(s)
}

fn curves(a: &CurvesArgs, run: Run) -> Result<()> {
    let csv = match a.kind {
        CurveKind::Fig2 => {
            emit_demo_data(DemoKind::Fig2 { rho_tilde: a.rho_tilde, gamma_max: a.gamma_max, steps: a.steps })?.to_csv()?
        }
        CurveKind::Fig3 => emit_demo_data(DemoKind::Fig3 {
            rho_tilde: a.rho_tilde,
            gamma: a.gamma,
            n_samples: a.n_samples,
            seed: a.seed,
        })?
        .to_csv()?,
        CurveKind::Fig5 => fig5_csv(a.n_min, a.n_max)?,
    };
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let name = format!("{}.csv", a.kind.to_possible_value().expect("named").get_name());
            fs::write(dir.join(name), csv)?;
            run.manifest(dir, "curves", Some(a.seed), a)
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let m: Manifest = serde_json::from_slice(&fs::read(&a.manifest)?)?;
    let mut argv = vec!["camme".to_string()];
    argv.extend(m.args);
    argv.push("--out".into());
    argv.push(a.out.display().to_string());
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::Config(format!("manifest arguments: {e}")))?;
    execute(&cli, &argv[1..])
}

fn execute(cli: &Cli, args: &[String]) -> Result<()> {
    let run = Run { args, inputs: Inputs::default() };
    match &cli.command {
        Command::Simulate(a) => simulate(a, run),
        Command::Discover(a) => discover(a, run),
        Command::Assumptions(a) => assumptions(a, run),
        Command::Eval(a) => eval(a, run),
        Command::Curves(a) => curves(a, run),
        Command::Replay(a) => replay(a),
    }
}

fn out_dir(cli: &Cli) -> Option<&Path> {
    match &cli.command {
        Command::Simulate(a) => Some(&a.out),
        Command::Discover(a) => Some(&a.out),
        Command::Assumptions(a) => a.out.as_deref(),
        Command::Eval(a) => a.out.as_deref(),
        Command::Curves(a) => a.out.as_deref(),
        Command::Replay(a) => Some(&a.out),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            if let Some(dir) = out_dir(&cli) {
                let candidates = match &e {
                    Error::Ambiguity { candidates, .. } => candidates.clone(),
                    _ => Vec::new(),
                };
                let report = ErrorReport { exit_code: code, kind: error_kind(&e), message: e.to_string(), candidates };
                if fs::create_dir_all(dir).is_ok() {
                    let _ = write_json(&dir.join("error.json"), &report);
                }
            }
            ExitCode::from(code as u8)
        }
    }
}
