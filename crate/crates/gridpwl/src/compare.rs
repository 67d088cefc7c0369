//! PWL-OTS against DC-OTS (and, when requested, the exhaustive AC
//! baseline) over a batch of demand scenarios.
//!
//! Every solution is re-checked with an AC power flow. Per method the
//! summary reports the share of AC-infeasible solutions, the share of
//! violated limits among the infeasible ones, and the mean realized cost
//! over the scenarios where every compared method is AC-feasible. Costs
//! are normalized to the baseline when it is run. Scenarios are solved on
//! worker threads; results are collected by scenario index, so every
//! output except the timings is independent of the thread count.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::Result;
use gridpwl_core::milp::SolveStatus;
use gridpwl_core::network::Network;
use gridpwl_core::ots::{
    build_dc_ots, build_pwl_ots, check_ac_feasibility, exhaustive_baseline, generate_scenarios, pwl_bounds, solve_ots, FeasibilityReport,
    Method, OtsConfig, OtsError, PwlBounds, Scenario, SCENARIO_RANGE,
};
use gridpwl_core::pwlnet::PwlModel;
use serde::Serialize;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "GRIDPWL_THREADS";

/// Thread count from [`THREADS_ENV`], else the available parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Clone, Debug)]
pub struct ComparisonConfig {
    pub ots: OtsConfig,
    pub scenarios: usize,
    pub seed: u64,
    /// Range of the per-bus demand multipliers.
    pub range: (f64, f64),
    pub methods: Vec<Method>,
    /// Also run the exhaustive AC baseline (budget at most 1).
    pub baseline: bool,
    pub threads: usize,
}

impl ComparisonConfig {
    pub fn new(net: &Network, alpha: usize, scenarios: usize, seed: u64) -> Self {
        Self {
            ots: OtsConfig::new(net, alpha),
            scenarios,
            seed,
            range: SCENARIO_RANGE,
            methods: vec![Method::Pwl, Method::Dc],
            baseline: false,
            threads: thread_count(),
        }
    }
}

/// One method on one scenario.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub scenario: usize,
    pub method: &'static str,
    /// Solver status (`optimal`, `infeasible`, ...); for the baseline
    /// `optimal` when some topology is AC-feasible.
    pub status: String,
    /// Optimization objective; `NaN` without a solution.
    pub objective: f64,
    /// Generation cost after the AC re-check (slack output from the
    /// power flow); `None` when the power flow failed or nothing was solved.
    pub realized_cost: Option<f64>,
    pub ac_feasible: bool,
    pub converged: bool,
    pub violation_rate: f64,
    pub max_voltage_violation: f64,
    pub max_angle_violation: f64,
    pub max_line_overload: f64,
    pub opened: Vec<usize>,
    pub statuses: Vec<bool>,
    pub nodes: usize,
    pub seconds: f64,
}

impl ScenarioResult {
    fn unsolved(scenario: usize, method: &'static str, status: String, seconds: f64) -> Self {
        Self {
            scenario,
            method,
            status,
            objective: f64::NAN,
            realized_cost: None,
            ac_feasible: false,
            converged: false,
            violation_rate: 0.0,
            max_voltage_violation: 0.0,
            max_angle_violation: 0.0,
            max_line_overload: 0.0,
            opened: Vec::new(),
            statuses: Vec::new(),
            nodes: 0,
            seconds,
        }
    }

    fn with_report(mut self, r: &FeasibilityReport) -> Self {
        self.realized_cost = r.cost;
        self.ac_feasible = !r.infeasible;
        self.converged = r.converged;
        self.violation_rate = r.violation_rate();
        self.max_voltage_violation = r.max_voltage_violation;
        self.max_angle_violation = r.max_angle_violation;
        self.max_line_overload = r.max_line_overload;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: &'static str,
    pub scenarios: usize,
    /// Scenarios where the optimization returned a point.
    pub solved: usize,
    /// Percent of scenarios without an AC-feasible solution.
    pub infeasible_pct: f64,
    /// Percent of checked limits violated, averaged over the infeasible
    /// solutions whose power flow converged.
    pub violation_pct: f64,
    /// Mean realized cost over the commonly feasible scenarios.
    pub mean_cost: f64,
    /// `mean_cost` as a percentage of the baseline's, when run.
    pub normalized_cost_pct: Option<f64>,
    pub mean_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub results: Vec<ScenarioResult>,
    pub summaries: Vec<MethodSummary>,
    /// Scenarios where every compared method is AC-feasible.
    pub common_feasible: Vec<usize>,
    pub bounds_seconds: f64,
}

impl Comparison {
    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn results_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a ScenarioResult> + 'a {
        self.results.iter().filter(move |r| r.method == method)
    }
}

fn status_name(s: SolveStatus) -> String {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::Unbounded => "unbounded",
        SolveStatus::BudgetExceeded => "budget_exceeded",
    }
    .into()
}

fn solve_method(net: &Network, model: Option<(&PwlModel, &PwlBounds)>, cfg: &OtsConfig, method: Method, sc: &Scenario) -> Result<ScenarioResult, OtsError> {
    let t = Instant::now();
    let prob = match (method, model) {
        (Method::Pwl, Some((m, b))) => build_pwl_ots(net, m, b, cfg, sc)?,
        (Method::Pwl, None) => return Err(OtsError::Config("PWL method needs a trained model".into())),
        (Method::Dc, _) => build_dc_ots(net, cfg, sc)?,
    };
    let sol = solve_ots(&prob)?;
    let seconds = t.elapsed().as_secs_f64();
    let mut r = ScenarioResult::unsolved(sc.index, method.name(), status_name(sol.status), seconds);
    if !sol.has_point() {
        return Ok(r);
    }
    r.objective = sol.objective;
    r.opened = sol.opened();
    r.statuses = sol.statuses.clone();
    r.nodes = sol.nodes;
    let report = check_ac_feasibility(&sc.apply(net), &sol.statuses, &sol.dispatch(), cfg);
    Ok(r.with_report(&report))
}

fn solve_baseline(net: &Network, cfg: &OtsConfig, sc: &Scenario) -> Result<ScenarioResult, OtsError> {
    let t = Instant::now();
    let base = exhaustive_baseline(net, cfg, sc)?;
    let seconds = t.elapsed().as_secs_f64();
    let Some(best) = base.best else {
        return Ok(ScenarioResult::unsolved(sc.index, "baseline", "infeasible".into(), seconds));
    };
    let mut r = ScenarioResult::unsolved(sc.index, "baseline", "optimal".into(), seconds);
    r.objective = best.cost;
    r.opened = best.statuses.iter().enumerate().filter(|(_, on)| !**on).map(|(k, _)| k).collect();
    r.statuses = best.statuses.clone();
    r.nodes = base.topologies;
    Ok(r.with_report(&best.report))
}

/// Runs every configured method on every scenario.
pub fn run_comparison(net: &Network, model: Option<&PwlModel>, cfg: &ComparisonConfig) -> Result<Comparison, OtsError> {
    cfg.ots.validate(net)?;
    let t = Instant::now();
    let bounds = match (model, cfg.methods.contains(&Method::Pwl)) {
        (Some(m), true) => Some(pwl_bounds(net, m, &cfg.ots)?),
        (None, true) => return Err(OtsError::Config("PWL method needs a trained model".into())),
        _ => None,
    };
    let bounds_seconds = t.elapsed().as_secs_f64();
    let scenarios = generate_scenarios(net, cfg.scenarios, cfg.seed, cfg.range.0, cfg.range.1);
    let mut names: Vec<&'static str> = cfg.methods.iter().map(|m| m.name()).collect();
    if cfg.baseline {
        names.push("baseline");
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<Vec<ScenarioResult>, OtsError>>>> = Mutex::new(vec![None; scenarios.len()]);
    let pair = model.zip(bounds.as_ref());
    std::thread::scope(|s| {
        for _ in 0..cfg.threads.clamp(1, scenarios.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(sc) = scenarios.get(i) else { break };
                let mut out = Vec::new();
                let mut run = || -> Result<(), OtsError> {
                    for &m in &cfg.methods {
                        out.push(solve_method(net, pair, &cfg.ots, m, sc)?);
                    }
                    if cfg.baseline {
                        out.push(solve_baseline(net, &cfg.ots, sc)?);
                    }
                    Ok(())
                };
                let res = run().map(|_| out);
                slots.lock().unwrap()[i] = Some(res);
            });
        }
    });
    let mut results = Vec::new();
    for slot in slots.into_inner().unwrap() {
        results.extend(slot.expect("every scenario is processed")?);
    }

    let common_feasible: Vec<usize> = scenarios
        .iter()
        .map(|s| s.index)
        .filter(|&i| results.iter().filter(|r| r.scenario == i).all(|r| r.ac_feasible))
        .collect();
    let mut summaries: Vec<MethodSummary> = names.iter().map(|&m| summarize(m, &results, &common_feasible)).collect();
    if cfg.baseline {
        let base = summaries.last().unwrap().mean_cost;
        for s in &mut summaries {
            s.normalized_cost_pct = (base > 0.0 && s.mean_cost.is_finite()).then(|| 100.0 * s.mean_cost / base);
        }
    }
    Ok(Comparison {
        results,
        summaries,
        common_feasible,
        bounds_seconds,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn summarize(method: &'static str, results: &[ScenarioResult], common: &[usize]) -> MethodSummary {
    let rs: Vec<&ScenarioResult> = results.iter().filter(|r| r.method == method).collect();
    let n = rs.len();
    let infeasible = rs.iter().filter(|r| !r.ac_feasible).count();
    MethodSummary {
        method,
        scenarios: n,
        solved: rs.iter().filter(|r| !r.statuses.is_empty()).count(),
        infeasible_pct: 100.0 * infeasible as f64 / n.max(1) as f64,
        violation_pct: {
            let v = mean(rs.iter().filter(|r| !r.ac_feasible && r.converged).map(|r| 100.0 * r.violation_rate));
            if v.is_nan() {
                0.0
            } else {
                v
            }
        },
        mean_cost: mean(rs.iter().filter(|r| common.contains(&r.scenario)).filter_map(|r| r.realized_cost)),
        normalized_cost_pct: None,
        mean_seconds: mean(rs.iter().map(|r| r.seconds)),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Per-scenario CSV without timings.
pub fn write_scenarios_csv<W: Write>(c: &Comparison, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario",
        "method",
        "status",
        "objective",
        "realized_cost",
        "ac_feasible",
        "converged",
        "violation_rate",
        "max_voltage_violation",
        "max_angle_violation",
        "max_line_overload",
        "opened",
        "statuses",
        "nodes",
    ])?;
    for r in &c.results {
        let opened: Vec<String> = r.opened.iter().map(|k| k.to_string()).collect();
        let statuses: String = r.statuses.iter().map(|&on| if on { '1' } else { '0' }).collect();
        w.write_record([
            r.scenario.to_string(),
            r.method.to_string(),
            r.status.clone(),
            r.objective.to_string(),
            fmt_opt(r.realized_cost),
            r.ac_feasible.to_string(),
            r.converged.to_string(),
            r.violation_rate.to_string(),
            r.max_voltage_violation.to_string(),
            r.max_angle_violation.to_string(),
            r.max_line_overload.to_string(),
            opened.join(";"),
            statuses,
            r.nodes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary CSV without timings.
pub fn write_summary_csv<W: Write>(c: &Comparison, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "scenarios",
        "solved",
        "infeasible_pct",
        "violation_pct",
        "mean_cost",
        "normalized_cost_pct",
        "common_feasible",
    ])?;
    for s in &c.summaries {
        w.write_record([
            s.method.to_string(),
            s.scenarios.to_string(),
            s.solved.to_string(),
            s.infeasible_pct.to_string(),
            s.violation_pct.to_string(),
            s.mean_cost.to_string(),
            fmt_opt(s.normalized_cost_pct),
            c.common_feasible.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Wall-clock times per scenario and method.
pub fn write_timing_csv<W: Write>(c: &Comparison, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "method", "seconds"])?;
    w.write_record(["", "pwl_bounds", &c.bounds_seconds.to_string()])?;
    for r in &c.results {
        w.write_record([r.scenario.to_string(), r.method.to_string(), r.seconds.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Table with one column per method and the rows of the comparison.
pub fn format_table(c: &Comparison, with_time: bool) -> String {
    let mut rows: Vec<(String, Vec<String>)> = vec![
        (
            "Normalized cost (%)".into(),
            c.summaries.iter().map(|s| s.normalized_cost_pct.map_or("-".into(), |v| format!("{v:.2}"))).collect(),
        ),
        ("Mean cost ($/h)".into(), c.summaries.iter().map(|s| format!("{:.2}", s.mean_cost)).collect()),
        ("Infeasible solutions (%)".into(), c.summaries.iter().map(|s| format!("{:.2}", s.infeasible_pct)).collect()),
        ("Violated constraints (%)".into(), c.summaries.iter().map(|s| format!("{:.2}", s.violation_pct)).collect()),
    ];
    if with_time {
        rows.push(("Mean solve time (s)".into(), c.summaries.iter().map(|s| format!("{:.3}", s.mean_seconds)).collect()));
    }
    let mut out = format!("{:<28}", "");
    for s in &c.summaries {
        out.push_str(&format!("{:>12}", s.method));
    }
    out.push('\n');
    for (name, vals) in rows {
        out.push_str(&format!("{name:<28}"));
        for v in vals {
            out.push_str(&format!("{v:>12}"));
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "{} scenarios, {} feasible for every method\n",
        c.summaries.first().map_or(0, |s| s.scenarios),
        c.common_feasible.len()
    ));
    out
}
