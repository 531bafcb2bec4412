//! `ann-calc`: build, evaluate, certify and sweep flow networks for the built-in transport
//! problems.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ann_calculus::approx::{
    check_membership, CertReport, FunctionFamily, GrowthBudget, IndexGrid, NetworkFamilyBuilder, SamplePlan,
    WeightKappa,
};
use ann_calculus::flow::{
    build_family, relu_flow_exponents, sweep, weighted_sup_error, FlowBuildConfig, FlowBuildReport, SweepTable,
    DEFAULT_N_CAP,
};
use ann_calculus::io;
use ann_calculus::ode::{flow_operator_eval, verify_euler_convergence, ConvergenceReport};
use ann_calculus::problems::{Drift, FlowFamily, Terminal};
use ann_calculus::{Activation, Error};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_CERT_FAILED: i32 = 2;

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "ANN_CALC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ann-calc", version, about = "Flow networks for transport problems without the curse of dimensionality")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the flow network for one problem instance and measure its weighted error.
    Build(BuildArgs),
    /// Realize a saved network at a point.
    Eval(EvalArgs),
    /// Certify a saved network against the flow oracle, or a problem's builder against a
    /// growth budget.
    Certify(CertifyArgs),
    /// Build over a grid of dimensions and accuracies and write a CSV table.
    Sweep(SweepArgs),
    /// Measure the Euler error of the drift against its reference flow.
    EulerCheck(EulerArgs),
}

#[derive(Debug, Args, Clone)]
pub struct ProblemArgs {
    /// Drift: decay or rotation.
    #[arg(long, value_parser = parse_drift)]
    pub problem: Drift,
    /// Terminal functional: relu-sum-g or coord-g. Defaults to the drift's canonical pairing.
    #[arg(long = "g", value_parser = parse_terminal)]
    pub terminal: Option<Terminal>,
    #[arg(long = "T", default_value_t = 1.0)]
    pub horizon: f64,
}

#[derive(Debug, Args, Clone)]
pub struct SampleArgs {
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 10.0)]
    pub radius: f64,
    /// Random points drawn from the ball, on top of the axis and diagonal probes.
    #[arg(long, default_value_t = 512)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tolerance of the reference integrator.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Lower bound for the shared Lipschitz and growth constant.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub eps: f64,
    #[command(flatten)]
    pub sample: SampleArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub net: PathBuf,
    /// Comma-separated coordinates, e.g. `1,-0.5`.
    #[arg(long, allow_hyphen_values = true)]
    pub point: String,
    /// Overrides the activation hint stored in the file (`relu` or `leaky_relu:<slope>`).
    #[arg(long)]
    pub activation: Option<String>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Network to certify. Without it the problem's flow builder is certified instead.
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub d: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub eps: Vec<f64>,
    #[command(flatten)]
    pub sample: SampleArgs,
    /// Budget constant. Only used without `--net`.
    #[arg(long = "K", default_value_t = 1000.0)]
    pub k: f64,
    /// Accuracy exponent of the budget. Defaults to the flow family's declared exponent.
    #[arg(long)]
    pub r0: Option<f64>,
    /// Dimension exponent of the budget. Defaults to the flow family's declared exponent.
    #[arg(long)]
    pub r1: Option<f64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub d: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub eps: Vec<f64>,
    #[command(flatten)]
    pub sample: SampleArgs,
    #[arg(long)]
    pub csv: PathBuf,
}

#[derive(Debug, Args)]
pub struct EulerArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub d: usize,
    #[arg(long = "n", value_delimiter = ',', default_value = "8,16,32,64,128")]
    pub n_list: Vec<usize>,
    #[arg(long, default_value_t = 5.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 32)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long)]
    pub csv: PathBuf,
}

fn parse_drift(s: &str) -> Result<Drift, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_terminal(s: &str) -> Result<Terminal, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `1,-0.5,2e-3`; whitespace is rejected.
pub fn parse_point(s: &str) -> anyhow::Result<Vec<f64>> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        bail!("point `{s}` must be comma-separated decimals without whitespace");
    }
    s.split(',')
        .map(|t| t.parse::<f64>().with_context(|| format!("bad coordinate `{t}` in point `{s}`")))
        .collect()
}

/// Configuration as resolved from the command line, embedded in every output.
#[derive(Debug, Clone, Serialize)]
struct ResolvedProblem {
    problem: Drift,
    g: Terminal,
    horizon: f64,
}

#[derive(Debug, Clone, Serialize)]
struct ResolvedConfig<'a> {
    command: &'a str,
    #[serde(flatten)]
    problem: ResolvedProblem,
    d: Vec<usize>,
    eps: Vec<f64>,
    kappa: f64,
    c: f64,
    radius: f64,
    samples: usize,
    seed: u64,
    tol: f64,
    budget_split: (f64, f64),
    n_cap: usize,
}

impl ProblemArgs {
    fn resolve(&self) -> anyhow::Result<(FlowFamily, ResolvedProblem)> {
        let g = self.terminal.unwrap_or(self.problem.default_terminal());
        let family = FlowFamily::new(self.problem, g, self.horizon)?;
        Ok((
            family,
            ResolvedProblem {
                problem: self.problem,
                g,
                horizon: self.horizon,
            },
        ))
    }
}

impl SampleArgs {
    fn flow_config(&self, eps: f64) -> anyhow::Result<FlowBuildConfig> {
        let cfg = FlowBuildConfig {
            eps,
            kappa: WeightKappa::new(self.kappa)?,
            c: self.c,
            sample_plan: self.plan(),
            reference_tol: self.tol,
            ..FlowBuildConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn plan(&self) -> SamplePlan {
        SamplePlan {
            radius: self.radius,
            random_points: self.samples,
            seed: self.seed,
            ..SamplePlan::default()
        }
    }

    fn resolved<'a>(&self, command: &'a str, problem: ResolvedProblem, d: Vec<usize>, eps: Vec<f64>) -> ResolvedConfig<'a> {
        let defaults = FlowBuildConfig::default();
        ResolvedConfig {
            command,
            problem,
            d,
            eps,
            kappa: self.kappa,
            c: self.c,
            radius: self.radius,
            samples: self.samples,
            seed: self.seed,
            tol: self.tol,
            budget_split: defaults.budget_split,
            n_cap: DEFAULT_N_CAP,
        }
    }
}

#[derive(Serialize)]
struct BuildOutput<'a> {
    config: ResolvedConfig<'a>,
    network_path: String,
    #[serde(flatten)]
    report: &'a FlowBuildReport,
}

#[derive(Serialize)]
struct NetCertRow {
    d: usize,
    eps: f64,
    weighted_error: f64,
    argmax: Vec<f64>,
    pass: bool,
}

#[derive(Serialize)]
struct NetCertOutput<'a> {
    config: ResolvedConfig<'a>,
    network_path: String,
    pass: bool,
    rows: Vec<NetCertRow>,
}

#[derive(Serialize)]
struct MembershipOutput<'a> {
    config: ResolvedConfig<'a>,
    budget: GrowthBudget,
    #[serde(flatten)]
    report: CertReport,
}

#[derive(Serialize)]
struct SweepMeta<'a> {
    config: ResolvedConfig<'a>,
    csv_header: &'static str,
    rows: usize,
    all_pass: bool,
}

#[derive(Serialize)]
struct EulerMeta {
    config: EulerConfig,
    slope: Option<f64>,
    r_squared: Option<f64>,
    bound_violated: bool,
}

#[derive(Serialize)]
struct EulerConfig {
    command: &'static str,
    #[serde(flatten)]
    problem: ResolvedProblem,
    d: usize,
    n: Vec<usize>,
    radius: f64,
    samples: usize,
    seed: u64,
    tol: f64,
}

enum Outcome {
    Passed,
    Failed,
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text.as_bytes())
}

fn sidecar(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("file not found or unreadable: {}", path.display()))
}

fn outcome(pass: bool) -> Outcome {
    if pass {
        Outcome::Passed
    } else {
        Outcome::Failed
    }
}

fn validate_lists(d: &[usize], eps: &[f64]) -> anyhow::Result<()> {
    if d.contains(&0) {
        bail!("dimensions must be ≥ 1");
    }
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
        bail!("accuracies must lie in (0, 1], got {e}");
    }
    Ok(())
}

fn cmd_build(a: &BuildArgs) -> anyhow::Result<Outcome> {
    validate_lists(&[a.d], &[a.eps])?;
    let (family, problem) = a.problem.resolve()?;
    let cfg = a.sample.flow_config(a.eps)?;
    let report = build_family(&family, a.d, &cfg)?;
    let net = report.network.as_ref().expect("builds carry their network");
    write(&a.out, &io::save(net, Activation::Rectifier.hint().as_deref()))?;
    if let Some(path) = &a.report {
        let out = BuildOutput {
            config: a.sample.resolved("build", problem, vec![a.d], vec![a.eps]),
            network_path: a.out.display().to_string(),
            report: &report,
        };
        write_json(path, &out)?;
    }
    println!(
        "d={} eps={} n={} params={} weighted_error={:e} pass={}",
        report.dim, report.eps, report.n_chosen, report.params, report.measured_weighted_error, report.pass
    );
    Ok(outcome(report.pass))
}

fn cmd_eval(a: &EvalArgs) -> anyhow::Result<Outcome> {
    let loaded = io::load(&read(&a.net)?)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w:?}");
    }
    let act = match a.activation.as_deref().or(loaded.activation_hint.as_deref()) {
        Some(h) => Activation::from_hint(h)?,
        None => Activation::Rectifier,
    };
    let x = parse_point(&a.point)?;
    let y = loaded.ann.realize(&act, &x)?;
    let text: Vec<String> = y.iter().map(f64::to_string).collect();
    println!("{}", text.join(","));
    Ok(Outcome::Passed)
}

fn cmd_certify(a: &CertifyArgs) -> anyhow::Result<Outcome> {
    validate_lists(&a.d, &a.eps)?;
    let (family, problem) = a.problem.resolve()?;
    let config = a.sample.resolved("certify", problem, a.d.clone(), a.eps.clone());
    let wk = WeightKappa::new(a.sample.kappa)?;
    match &a.net {
        Some(path) => {
            let loaded = io::load(&read(path)?)?;
            if !loaded.ann.is_finite() {
                return Err(Error::NonFiniteParameters.into());
            }
            let act = match loaded.activation_hint.as_deref() {
                Some(h) => Activation::from_hint(h)?,
                None => Activation::Rectifier,
            };
            let d = loaded.ann.input_dim();
            if a.d != [d] {
                bail!("network input dimension is {d}, expected --d {d}");
            }
            let flow = family.problem(d)?;
            let tol = a.sample.tol;
            let oracle = |x: &[f64]| flow_operator_eval(&flow, x, tol);
            let sup = weighted_sup_error(&loaded.ann, &act, &oracle, wk, &a.sample.plan())?;
            let rows: Vec<NetCertRow> = a
                .eps
                .iter()
                .map(|&eps| NetCertRow {
                    d,
                    eps,
                    weighted_error: sup.value,
                    argmax: sup.argmax.clone(),
                    pass: sup.value <= eps,
                })
                .collect();
            let pass = rows.iter().all(|r| r.pass);
            println!("weighted_error={:e} pass={pass}", sup.value);
            if let Some(out) = &a.report {
                write_json(
                    out,
                    &NetCertOutput {
                        config,
                        network_path: path.display().to_string(),
                        pass,
                        rows,
                    },
                )?;
            }
            Ok(outcome(pass))
        }
        None => {
            let (r0_default, r1_default) = relu_flow_exponents(&family.constants(), a.sample.kappa);
            let budget = GrowthBudget {
                k: a.k,
                r0: a.r0.unwrap_or(r0_default),
                r: vec![a.r1.unwrap_or(r1_default)],
            };
            let sample = a.sample.clone();
            let builder = NetworkFamilyBuilder::new(Activation::Rectifier, move |i, eps| {
                let cfg = sample
                    .flow_config(eps)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let report = build_family(&family, i[0], &cfg)?;
                Ok(report.network.expect("builds carry their network"))
            });
            let exact = FunctionFamily::new(move |_, x| vec![family.exact_solution(x)]);
            let grid = IndexGrid::dimensions(&a.d, |d| (d, 1))?;
            let report = check_membership(&builder, &exact, &budget, wk, &grid, &a.eps, &a.sample.plan())?;
            println!(
                "fitted_K={} worst_error={:e} pass={}",
                report.fitted_k, report.worst_error, report.pass
            );
            let pass = report.pass;
            if let Some(out) = &a.report {
                write_json(out, &MembershipOutput { config, budget, report })?;
            }
            Ok(outcome(pass))
        }
    }
}

fn cmd_sweep(a: &SweepArgs) -> anyhow::Result<Outcome> {
    validate_lists(&a.d, &a.eps)?;
    let (family, problem) = a.problem.resolve()?;
    let cfg = a.sample.flow_config(a.eps[0])?;
    let table: SweepTable = sweep(&family, &a.d, &a.eps, &cfg)?;
    write(&a.csv, table.to_csv().as_bytes())?;
    let meta = SweepMeta {
        config: a.sample.resolved("sweep", problem, a.d.clone(), a.eps.clone()),
        csv_header: SweepTable::CSV_HEADER,
        rows: table.rows.len(),
        all_pass: table.all_pass(),
    };
    write_json(&sidecar(&a.csv), &meta)?;
    let passed = table.rows.iter().filter(|r| r.pass).count();
    println!("{passed}/{} cells pass", table.rows.len());
    Ok(outcome(table.all_pass()))
}

fn cmd_euler(a: &EulerArgs) -> anyhow::Result<Outcome> {
    validate_lists(&[a.d], &[])?;
    let (family, problem) = a.problem.resolve()?;
    let field = family.drift.field(a.d)?;
    let plan = SamplePlan {
        radius: a.radius,
        radial_steps: 0,
        random_points: a.samples,
        seed: a.seed,
    };
    let points = plan.points(a.d);
    let config = EulerConfig {
        command: "euler-check",
        problem,
        d: a.d,
        n: a.n_list.clone(),
        radius: a.radius,
        samples: a.samples,
        seed: a.seed,
        tol: a.tol,
    };
    let (report, violated) = match verify_euler_convergence(&field, &points, a.problem.horizon, &a.n_list, a.tol) {
        Ok(r) => (r, false),
        Err(Error::BoundViolated { x_id, n, measured, bound }) => {
            eprintln!("bound violated at point {x_id}, n = {n}: {measured:e} > {bound:e}");
            (
                ConvergenceReport {
                    horizon: a.problem.horizon,
                    rows: Vec::new(),
                    slope: None,
                    r_squared: None,
                },
                true,
            )
        }
        Err(e) => return Err(e.into()),
    };
    write(&a.csv, report.to_csv().as_bytes())?;
    let meta = EulerMeta {
        config,
        slope: report.slope,
        r_squared: report.r_squared,
        bound_violated: violated,
    };
    write_json(&sidecar(&a.csv), &meta)?;
    match report.slope {
        Some(s) => println!("slope={s:.4} bound_violated={violated}"),
        None => println!("slope=none bound_violated={violated}"),
    }
    Ok(outcome(!violated))
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got `{raw}`"))?;
    // A pool may already exist when `run` is called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::EulerCheck(a) => cmd_euler(a),
    });
    match result {
        Ok(Outcome::Passed) => EXIT_OK,
        Ok(Outcome::Failed) => EXIT_CERT_FAILED,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INVALID
        }
    }
}
