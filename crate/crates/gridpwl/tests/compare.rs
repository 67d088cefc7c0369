use gridpwl::case::{parse_case, CASE14};
use gridpwl::compare::{format_table, run_comparison, write_scenarios_csv, write_summary_csv, ComparisonConfig};
use gridpwl::core::network::Network;
use gridpwl::core::ots::Method;
use gridpwl::core::pwlnet::PwlModel;

fn case14() -> Network {
    parse_case(CASE14).unwrap().network
}

#[test]
fn one_scenario_without_budget_keeps_every_line() {
    let net = case14();
    let model = PwlModel::first_order(&net, 3);
    let mut cfg = ComparisonConfig::new(&net, 0, 1, 3);
    cfg.threads = 1;
    let c = run_comparison(&net, Some(&model), &cfg).unwrap();
    assert_eq!(c.results.len(), 2);
    for r in &c.results {
        assert_eq!(r.status, "optimal", "{}", r.method);
        assert!(r.objective.is_finite() && r.objective > 0.0);
        assert!(r.opened.is_empty());
        assert!(r.statuses.iter().all(|&on| on));
    }
    let table = format_table(&c, true);
    assert!(table.contains("Infeasible solutions (%)"));
    assert!(table.contains("pwl") && table.contains("dc"));
}

#[test]
fn dc_cost_grows_with_demand() {
    let net = case14();
    let cost_at = |k: f64| {
        let mut cfg = ComparisonConfig::new(&net, 1, 2, 5);
        cfg.methods = vec![Method::Dc];
        cfg.range = (k, k);
        let c = run_comparison(&net, None, &cfg).unwrap();
        let objs: Vec<f64> = c.results.iter().map(|r| r.objective).collect();
        // identical multipliers give identical scenarios
        assert!((objs[0] - objs[1]).abs() < 1e-9);
        objs[0]
    };
    let (lo, mid, hi) = (cost_at(0.5), cost_at(1.0), cost_at(2.0));
    assert!(lo <= mid && mid <= hi, "{lo} {mid} {hi}");
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let net = case14();
    let render = |threads: usize| {
        let mut cfg = ComparisonConfig::new(&net, 1, 6, 11);
        cfg.methods = vec![Method::Dc];
        cfg.baseline = true;
        cfg.threads = threads;
        let c = run_comparison(&net, None, &cfg).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_scenarios_csv(&c, &mut a).unwrap();
        write_summary_csv(&c, &mut b).unwrap();
        (a, b, c)
    };
    let (a1, b1, c) = render(1);
    let (a3, b3, _) = render(3);
    assert_eq!(a1, a3);
    assert_eq!(b1, b3);
    let base = c.summary("baseline").unwrap();
    assert_eq!(base.normalized_cost_pct, Some(100.0));
    // a rate is a percentage
    for s in &c.summaries {
        assert!((0.0..=100.0).contains(&s.infeasible_pct));
    }
    for i in &c.common_feasible {
        let dc = c.results_for("dc").find(|r| r.scenario == *i).unwrap();
        assert!(dc.ac_feasible);
    }
}

#[test]
fn pwl_without_model_is_rejected() {
    let net = case14();
    let cfg = ComparisonConfig::new(&net, 1, 1, 0);
    assert!(run_comparison(&net, None, &cfg).is_err());
}
