use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use spge_core::analysis::{analyze, AnalysisError, AnalysisReport};
use spge_core::density::{elbo_grad_fd, QuadratureConfig, FD_STEP};
use spge_core::estimate::{Estimator, McSummary, SviConfig, INTERCHANGE_ASSUMPTION};
use spge_core::interp::DEFAULT_BUDGET;
use spge_core::lemmas::{run_suite, CheckOutcome};
use spge_core::reparam::{PlanFile, ReparamPlan};
use spge_core::select::{select_variables, SelectConfig, SelectError, SelectionReport, SelectionResult};
use spge_core::syntax::ProgramFile;
use spge_core::{parse_program_file, Program, Property, ThetaValuation, Universe};

#[derive(Parser)]
#[command(name = "spge", version, about = "Smoothness analysis and selective reparameterisation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Step budget per program run.
    #[arg(long, global = true, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    /// Indices per name string.
    #[arg(long, global = true, default_value_t = spge_core::interp::DEFAULT_NAME_BOUND)]
    name_bound: usize,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Write output here instead of stdout.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct Pair {
    model: PathBuf,
    /// Guide; parameters come from its `#params:` header.
    guide: PathBuf,
}

#[derive(Args)]
struct PlanArg {
    /// `select`, `full`, `empty`, or a plan JSON file.
    #[arg(long, default_value = "select")]
    plan: String,
    #[arg(long, default_value = "diff")]
    prop: Property,
}

#[derive(Subcommand)]
enum Cmd {
    /// Smoothness and dependency analysis of one program.
    Analyze {
        program: PathBuf,
        #[arg(long, default_value = "diff")]
        prop: Property,
    },
    /// Choose which sample commands of the guide to reparameterise.
    Select {
        #[command(flatten)]
        pair: Pair,
        #[arg(long, default_value = "diff")]
        prop: Property,
    },
    /// Monte Carlo gradient estimate at a fixed θ.
    Estimate {
        #[command(flatten)]
        pair: Pair,
        #[command(flatten)]
        plan: PlanArg,
        /// Comma-separated parameter values.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        theta: Vec<f64>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Also compute the quadrature gradient (at most two sampled names).
        #[arg(long)]
        oracle: bool,
    },
    /// Stochastic gradient ascent on the ELBO; writes a CSV trajectory.
    Train {
        #[command(flatten)]
        pair: Pair,
        #[command(flatten)]
        plan: PlanArg,
        /// Initial parameter values (default: zeros).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        theta: Vec<f64>,
        #[arg(long, default_value_t = 0.05)]
        eta: f64,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 16)]
        samples: usize,
    },
    /// Run the invariant suite on a model/guide pair.
    Check {
        #[command(flatten)]
        pair: Pair,
        #[command(flatten)]
        plan: PlanArg,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        theta: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
}

#[derive(Debug)]
enum Failure {
    /// Unreadable or unparsable input.
    Input(anyhow::Error),
    /// An internal invariant or a checked property failed.
    Invariant(anyhow::Error),
    Infeasible(String),
    /// Estimation or training failed at run time.
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Invariant(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Input(e) | Failure::Invariant(e) | Failure::Runtime(e) => write!(f, "{e:#}"),
            Failure::Infeasible(r) => write!(f, "no sound plan: {r}"),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn input(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Input(e.into())
}

fn read_program(path: &Path) -> Result<ProgramFile> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(input)?;
    parse_program_file(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(input)
}

fn analysis_failure(e: AnalysisError) -> Failure {
    match e {
        AnalysisError::IllFormed { .. } => Failure::Invariant(e.into()),
        other => Failure::Input(other.into()),
    }
}

fn select_failure(e: SelectError) -> Failure {
    match e {
        SelectError::Analysis(a) => analysis_failure(a),
        SelectError::NotReconfirmed(_) => Failure::Invariant(e.into()),
        SelectError::Compile(_) => Failure::Input(e.into()),
        SelectError::Exec { .. } | SelectError::DoubleSample(_) => Failure::Runtime(e.into()),
    }
}

/// Model and guide compiled against one universe.
struct Loaded {
    model: Program,
    guide: Program,
    params: Vec<Arc<str>>,
    universe: Arc<Universe>,
}

fn load(pair: &Pair, common: &Common) -> Result<Loaded> {
    let m = read_program(&pair.model)?;
    let g = read_program(&pair.guide)?;
    let params = g.params.clone();
    let u = Arc::new(Universe::for_programs(&[&m.body, &g.body], &params, common.name_bound));
    let model = Program::new(m.body, u.clone()).map_err(input)?.with_budget(common.budget);
    let guide = Program::new(g.body, u.clone()).map_err(input)?.with_budget(common.budget);
    Ok(Loaded {
        model,
        guide,
        params,
        universe: u,
    })
}

fn theta(l: &Loaded, values: &[f64]) -> Result<ThetaValuation> {
    let values = if values.is_empty() {
        vec![0.0; l.params.len()]
    } else {
        values.to_vec()
    };
    ThetaValuation::new(&l.universe, &l.params, &values).map_err(input)
}

fn select_config(common: &Common) -> SelectConfig {
    SelectConfig {
        name_bound: common.name_bound,
        seed: common.seed,
        ..SelectConfig::default()
    }
}

fn resolve_plan(arg: &PlanArg, l: &Loaded, common: &Common) -> Result<ReparamPlan> {
    match arg.plan.as_str() {
        "full" => Ok(ReparamPlan::default_plan()),
        "empty" => Ok(ReparamPlan::empty()),
        "select" => {
            let r = select_variables(
                l.model.source(),
                l.guide.source(),
                &l.params,
                &ReparamPlan::default_plan(),
                arg.prop,
                &select_config(common),
            )
            .map_err(select_failure)?;
            match r {
                SelectionResult::Plan { plan, .. } => Ok(plan),
                SelectionResult::Infeasible { reason, .. } => Err(Failure::Infeasible(reason)),
            }
        }
        path => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading plan {path}"))
                .map_err(input)?;
            PlanFile::parse(&text).map_err(input)
        }
    }
}

fn emit(common: &Common, text: &str) -> Result<()> {
    match &common.output {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::Runtime),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Failure::Runtime(e.into()))
        }
    }
}

fn json(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialise");
    s.push('\n');
    s
}

fn cmd_analyze(program: &Path, prop: Property, common: &Common) -> Result<()> {
    let f = read_program(program)?;
    let u = Universe::for_programs(&[&f.body], &f.params, common.name_bound);
    let st = analyze(&u, &f.body, prop).map_err(analysis_failure)?;
    let theta: Vec<usize> = f.params.iter().filter_map(|p| u.pvar_id(p)).collect();
    emit(common, &json(&AnalysisReport::new(&u, &st, prop, &theta)))
}

#[derive(Serialize)]
struct SelectOutput<'a> {
    plan: Option<PlanFile>,
    infeasible: Option<&'a str>,
    report: &'a SelectionReport,
}

fn cmd_select(pair: &Pair, prop: Property, common: &Common) -> Result<()> {
    let l = load(pair, common)?;
    let r = select_variables(
        l.model.source(),
        l.guide.source(),
        &l.params,
        &ReparamPlan::default_plan(),
        prop,
        &select_config(common),
    )
    .map_err(select_failure)?;
    let out = SelectOutput {
        plan: r.plan().map(|p| p.to_file(l.universe.strings())),
        infeasible: match &r {
            SelectionResult::Infeasible { reason, .. } => Some(reason),
            SelectionResult::Plan { .. } => None,
        },
        report: r.report(),
    };
    emit(common, &json(&out))?;
    match r {
        SelectionResult::Infeasible { reason, .. } => Err(Failure::Infeasible(reason)),
        SelectionResult::Plan { .. } => Ok(()),
    }
}

#[derive(Serialize)]
struct Oracle {
    gradient: Vec<f64>,
    /// `|MC mean − oracle| / SE` per coordinate.
    z: Vec<f64>,
}

#[derive(Serialize)]
struct EstimateOutput {
    params: Vec<String>,
    theta: Vec<f64>,
    plan: PlanFile,
    seed: u64,
    estimate: McSummary,
    oracle: Option<Oracle>,
    assumption: &'static str,
}

fn cmd_estimate(
    pair: &Pair,
    plan: &PlanArg,
    theta_values: &[f64],
    samples: usize,
    oracle: bool,
    common: &Common,
) -> Result<()> {
    let l = load(pair, common)?;
    let theta = theta(&l, theta_values)?;
    let plan = resolve_plan(plan, &l, common)?;
    let file = plan.to_file(l.universe.strings());
    let est = Estimator::new(l.model.clone(), l.guide.clone(), plan).map_err(input)?;
    let summary = est
        .estimate(&theta, samples.max(1), common.seed)
        .map_err(|e| Failure::Runtime(e.into()))?;
    let oracle = if oracle {
        let g = elbo_grad_fd(&l.model, &l.guide, &theta, &QuadratureConfig::default(), FD_STEP)
            .map_err(|e| Failure::Runtime(e.into()))?;
        Some(Oracle {
            z: summary.z_scores(&g),
            gradient: g,
        })
    } else {
        None
    };
    eprintln!("{INTERCHANGE_ASSUMPTION}");
    emit(
        common,
        &json(&EstimateOutput {
            params: l.params.iter().map(|p| p.to_string()).collect(),
            theta: theta.values.clone(),
            plan: file,
            seed: common.seed,
            estimate: summary,
            oracle,
            assumption: INTERCHANGE_ASSUMPTION,
        }),
    )
}

fn cmd_train(
    pair: &Pair,
    plan: &PlanArg,
    theta0: &[f64],
    cfg: SviConfig,
    common: &Common,
) -> Result<()> {
    if cfg.eta < 0.0 || cfg.samples == 0 {
        return Err(input(anyhow!("--eta must be non-negative and --samples positive")));
    }
    let l = load(pair, common)?;
    let theta = theta(&l, theta0)?;
    let plan = resolve_plan(plan, &l, common)?;
    let est = Estimator::new(l.model.clone(), l.guide.clone(), plan).map_err(input)?;
    let traj = est.svi(&theta, &cfg).map_err(|e| Failure::Runtime(e.into()))?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_string()];
    header.extend(traj.params.iter().map(|p| p.to_string()));
    header.extend(["grad_norm".to_string(), "seed".to_string()]);
    let csv_err = |e: csv::Error| Failure::Runtime(e.into());
    w.write_record(&header).map_err(csv_err)?;
    for s in &traj.steps {
        let mut row = vec![s.step.to_string()];
        row.extend(s.theta.iter().map(f64::to_string));
        row.push(s.grad_norm.map(|g| g.to_string()).unwrap_or_default());
        row.push(traj.seed.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Runtime(anyhow!("{e}")))?;
    eprintln!("final θ = {:?}; {INTERCHANGE_ASSUMPTION}", traj.final_theta());
    emit(common, &String::from_utf8(bytes).expect("csv is UTF-8"))
}

#[derive(Serialize)]
struct CheckOutput {
    passed: bool,
    checks: Vec<CheckOutcome>,
}

fn cmd_check(pair: &Pair, plan: &PlanArg, theta_values: &[f64], trials: usize, common: &Common) -> Result<()> {
    let l = load(pair, common)?;
    let theta = theta(&l, theta_values)?;
    let resolved = resolve_plan(plan, &l, common)?;
    let checks = run_suite(&l.model, &l.guide, &resolved, &theta, plan.prop, trials, common.seed);
    let passed = checks.iter().all(|c| c.violation.is_none());
    emit(common, &json(&CheckOutput { passed, checks }))?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Invariant(anyhow!("some invariants were violated")))
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    if let Some(jobs) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    match &cli.cmd {
        Cmd::Analyze { program, prop } => cmd_analyze(program, *prop, common),
        Cmd::Select { pair, prop } => cmd_select(pair, *prop, common),
        Cmd::Estimate {
            pair,
            plan,
            theta,
            samples,
            oracle,
        } => cmd_estimate(pair, plan, theta, *samples, *oracle, common),
        Cmd::Train {
            pair,
            plan,
            theta,
            eta,
            steps,
            samples,
        } => cmd_train(
            pair,
            plan,
            theta,
            SviConfig {
                eta: *eta,
                steps: *steps,
                samples: *samples,
                seed: common.seed,
            },
            common,
        ),
        Cmd::Check {
            pair,
            plan,
            theta,
            trials,
        } => cmd_check(pair, plan, theta, *trials, common),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
