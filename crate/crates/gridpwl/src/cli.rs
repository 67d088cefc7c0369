//! Command-line front end.
//!
//! ```text
//! gridpwl sample --case case14 --count 10000 --seed 1 --out data.json
//! gridpwl train  --data data.json --q 25 --epochs 20000 --seed 1 --out model.json
//! gridpwl eval   --model model.json --data data.json --out stats.csv
//! gridpwl milp solve --lp problem.lp
//! gridpwl ots    --case case14 --model model.json --alpha 1 --scenarios 100 --seed 7 --out results/
//! ```
//!
//! `--case` takes a MATPOWER file or the name of a bundled case. Datasets
//! and models record the case name; commands reading them fall back to the
//! bundled case of that name when `--case` is not given.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gridpwl_core::milp::{solve_milp, MilpLimits, SolveStatus};
use gridpwl_core::network::Network;
use gridpwl_core::ots::Method;
use gridpwl_core::pwlnet::{train, train_direct, TrainConfig, TrainLog};
use gridpwl_core::sampler::{generate, split};

use crate::case::{bundled, parse_case};
use crate::compare::{format_table, run_comparison, write_scenarios_csv, write_summary_csv, write_timing_csv, ComparisonConfig};
use crate::formats::{load_dataset, load_model, save_dataset, save_model, Model};
use crate::lpfile::parse_lp;
use crate::stats::eval_pf_error;

#[cfg(debug_assertions)]
const LONG_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (debug build)");
#[cfg(not(debug_assertions))]
const LONG_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (release build)");

#[derive(Debug, Parser)]
#[command(name = "gridpwl", version, long_version = LONG_VERSION, about = "PWL power-flow models and transmission switching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample operating points and their exact flows.
    Sample(SampleArgs),
    /// Train a generative (or direct) PWL model on a dataset.
    Train(TrainArgs),
    /// Flow and injection error statistics on the test split.
    Eval(EvalArgs),
    /// Standalone MILP solver.
    Milp {
        #[command(subcommand)]
        command: MilpCommand,
    },
    /// Transmission switching over demand scenarios.
    Ots(OtsArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub case: String,
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Case override; defaults to the bundled case named in the dataset.
    #[arg(long)]
    pub case: Option<String>,
    /// Hidden width.
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mini-batch size; full batch when omitted on small cases.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Train the direct flow model instead.
    #[arg(long)]
    pub direct: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV; defaults to `<out stem>_loss.csv` beside the model.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub case: Option<String>,
    /// Box-plot summary CSV.
    #[arg(long, default_value = "stats.csv")]
    pub out: PathBuf,
    /// Optional per-sample error CSV.
    #[arg(long)]
    pub samples_out: Option<PathBuf>,
    /// Evaluate on every sample rather than the held-out split.
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Subcommand)]
pub enum MilpCommand {
    /// Solve a problem in LP text format.
    Solve {
        #[arg(long)]
        lp: PathBuf,
        #[arg(long)]
        max_nodes: Option<usize>,
        /// Wall-clock budget in seconds.
        #[arg(long)]
        time_limit: Option<f64>,
        /// Write the solution as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Pwl,
    Dc,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Pwl => Method::Pwl,
            MethodArg::Dc => Method::Dc,
        }
    }
}

#[derive(Debug, Args)]
pub struct OtsArgs {
    #[arg(long)]
    pub case: String,
    /// Trained generative model; required for the PWL method.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Switching budget.
    #[arg(long, default_value_t = 1)]
    pub alpha: usize,
    #[arg(long, default_value_t = 100)]
    pub scenarios: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Methods to run (repeat or comma-separate); both by default.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub method: Vec<MethodArg>,
    /// Also run the exhaustive AC baseline (alpha at most 1).
    #[arg(long)]
    pub baseline: bool,
    /// Worker threads; overrides `GRIDPWL_THREADS`.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure kinds mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or missing input file (exit 2).
    Usage(String),
    /// Anything failing after the inputs were accepted (exit 1).
    Failed(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failed(e)
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} file not found: {}", path.display())))
    }
}

/// Network and case name from a path or bundled name.
fn load_case(spec: &str) -> Result<(String, Network), CliError> {
    let text = if let Some(text) = bundled(spec) {
        text.to_string()
    } else {
        let path = Path::new(spec);
        require_file(path, "case")?;
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
    };
    let parsed = parse_case(&text).with_context(|| format!("parsing case {spec}"))?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    Ok((parsed.name, parsed.network))
}

/// Case named in a model or dataset file, unless overridden.
fn case_for(file: &Path, over: Option<&str>) -> Result<Network, CliError> {
    if let Some(spec) = over {
        return Ok(load_case(spec)?.1);
    }
    #[derive(serde::Deserialize)]
    struct Header {
        case_id: String,
    }
    let h: Header = crate::formats::read_json(file)?;
    if bundled(&h.case_id).is_none() {
        return Err(CliError::Usage(format!(
            "{} refers to case `{}`, which is not bundled; pass --case",
            file.display(),
            h.case_id
        )));
    }
    Ok(load_case(&h.case_id)?.1)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_loss_csv(path: &Path, log: &TrainLog) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["epoch", "loss"])?;
    for (e, l) in log.losses.iter().enumerate() {
        w.write_record([e.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn default_loss_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}_loss.csv"))
}

fn cmd_sample(a: &SampleArgs) -> Result<(), CliError> {
    let (name, net) = load_case(&a.case)?;
    let set = generate(&net, a.count, a.seed);
    save_dataset(&a.out, &name, &set)?;
    println!("wrote {} samples of {name} to {}", set.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    require_file(&a.data, "dataset")?;
    let net = case_for(&a.data, a.case.as_deref())?;
    let (case_id, data) = load_dataset(&a.data, &net)?;
    let (train_set, _) = split(&data, data.split);
    let mut cfg = TrainConfig::for_network(&net);
    cfg.seed = a.seed;
    if let Some(q) = a.q {
        cfg.hidden = q;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if a.batch.is_some() {
        cfg.batch_size = a.batch;
    }
    let (model, log) = if a.direct {
        let (m, log) = train_direct(&net, &train_set, &cfg).context("training")?;
        (Model::Direct(m), log)
    } else {
        let (m, log) = train(&net, &train_set, &cfg).context("training")?;
        (Model::Generative(m), log)
    };
    save_model(&a.out, &case_id, &model)?;
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| default_loss_path(&a.out));
    write_loss_csv(&loss_path, &log)?;
    println!(
        "trained on {} samples: loss {:.6e} -> {:.6e}; model {}, losses {}",
        train_set.len(),
        log.initial_loss,
        log.final_loss,
        a.out.display(),
        loss_path.display()
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    require_file(&a.model, "model")?;
    require_file(&a.data, "dataset")?;
    let net = case_for(&a.model, a.case.as_deref())?;
    let model = load_model(&a.model, &net)?;
    let (_, data) = load_dataset(&a.data, &net)?;
    let test = if a.all { data } else { split(&data, data.split).1 };
    let st = match &model {
        Model::Generative(m) => eval_pf_error(&net, m, &test),
        Model::Direct(m) => eval_pf_error(&net, m, &test),
    }
    .context("evaluating")?;
    st.write_summary_csv(create(&a.out)?)?;
    if let Some(p) = &a.samples_out {
        st.write_samples_csv(create(p)?)?;
    }
    println!(
        "{} test samples: mean average flow error {:.4}%; statistics in {}",
        st.len(),
        st.mean_avg_flow(),
        a.out.display()
    );
    Ok(())
}

fn cmd_milp(c: &MilpCommand) -> Result<(), CliError> {
    let MilpCommand::Solve { lp, max_nodes, time_limit, out } = c;
    require_file(lp, "LP")?;
    let text = fs::read_to_string(lp).with_context(|| format!("reading {}", lp.display()))?;
    let p = parse_lp(&text).with_context(|| format!("parsing {}", lp.display()))?;
    let limits = MilpLimits {
        max_nodes: *max_nodes,
        time_budget: *time_limit,
        ..MilpLimits::default()
    };
    let sol = solve_milp(&p, &limits).context("solving")?;
    println!("status {:?}", sol.status);
    if sol.has_point() {
        println!("objective {}", sol.objective);
        println!("gap {}", sol.gap);
        println!("nodes {}", sol.nodes_explored);
        for (v, x) in p.variables.iter().zip(&sol.values) {
            println!("{} = {}", v.name, x);
        }
    }
    if let Some(path) = out {
        crate::formats::write_json(path, &sol)?;
    }
    match sol.status {
        SolveStatus::Optimal | SolveStatus::BudgetExceeded => Ok(()),
        s => Err(CliError::Failed(anyhow::anyhow!("problem is {s:?}"))),
    }
}

fn cmd_ots(a: &OtsArgs) -> Result<(), CliError> {
    let (_, net) = load_case(&a.case)?;
    let methods: Vec<Method> = if a.method.is_empty() {
        vec![Method::Pwl, Method::Dc]
    } else {
        a.method.iter().map(|&m| m.into()).collect()
    };
    let model = match (&a.model, methods.contains(&Method::Pwl)) {
        (Some(path), true) => {
            require_file(path, "model")?;
            match load_model(path, &net)? {
                Model::Generative(m) => Some(m),
                Model::Direct(_) => return Err(CliError::Usage("the PWL method needs a generative model".into())),
            }
        }
        (None, true) => return Err(CliError::Usage("--model is required for the pwl method".into())),
        _ => None,
    };
    let mut cfg = ComparisonConfig::new(&net, a.alpha, a.scenarios, a.seed);
    cfg.methods = methods;
    cfg.baseline = a.baseline;
    if let Some(t) = a.threads {
        cfg.threads = t.max(1);
    }
    let c = run_comparison(&net, model.as_ref(), &cfg).context("running OTS")?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_scenarios_csv(&c, create(&a.out.join("scenarios.csv"))?)?;
    write_summary_csv(&c, create(&a.out.join("summary.csv"))?)?;
    write_timing_csv(&c, create(&a.out.join("timing.csv"))?)?;
    fs::write(a.out.join("table.txt"), format_table(&c, false)).context("writing table")?;
    print!("{}", format_table(&c, true));
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Sample(a) => cmd_sample(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Milp { command } => cmd_milp(command),
        Command::Ots(a) => cmd_ots(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 on success, 2 on usage errors, 1 otherwise.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            eprintln!("{}", <Cli as clap::CommandFactory>::command().render_usage());
            2
        }
        Err(CliError::Failed(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        <Cli as clap::CommandFactory>::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with_args(["gridpwl", "frobnicate"]), 2);
        assert_eq!(main_with_args(["gridpwl", "sample", "--case", "case14", "--bogus"]), 2);
        assert_eq!(main_with_args(["gridpwl", "milp", "solve", "--lp", "/nonexistent/x.lp"]), 2);
        assert_eq!(main_with_args(["gridpwl", "sample", "--case", "/nonexistent/c.m", "--out", "x.json"]), 2);
    }

    #[test]
    fn loss_path_sits_beside_model() {
        assert_eq!(default_loss_path(Path::new("out/m.json")), Path::new("out/m_loss.csv"));
    }
}
