use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Parser;
use ttslat_core::planner::{self, greedy_search, grid_search, pareto_frontier, ScenarioObjective};
use ttslat_core::simulator::{self, SummaryRow};
use ttslat_core::{
    curve_fit, evaluate_config, load_anchors_csv, load_scenario, simulate, simulate_trace, ConcurrencyConfig,
    ConfigEvaluation, FitBounds, Scenario,
};

use crate::output::{OutputDir, RunManifest};
use crate::{Cli, CliError, Command, FitArgs, GridArgs, ParetoArgs, PlanArgs, ReplayArgs, SimulateArgs};

type Params = BTreeMap<String, String>;

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Plan(a) => plan(a),
        Command::Grid(a) => grid(a),
        Command::Pareto(a) => pareto(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Fit(a) => fit(a),
        Command::Replay(a) => replay(a),
    }
}

fn ensure(ok: bool, message: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Internal(message()))
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn params<const N: usize>(pairs: [(&str, String); N]) -> Params {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn manifest(command: &str, scenario: &Path, parameters: Params, seed: u64) -> RunManifest {
    RunManifest {
        command: command.into(),
        scenario_path: scenario.display().to_string(),
        parameters,
        output_paths: Vec::new(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed,
    }
}

fn check_accuracies(rows: &[ConfigEvaluation]) -> Result<(), CliError> {
    for e in rows {
        ensure((0.0..=1.0).contains(&e.predicted_accuracy), || {
            format!("accuracy {} out of range for {:?}", e.predicted_accuracy, e.config)
        })?;
    }
    Ok(())
}

fn describe(e: &ConfigEvaluation) -> String {
    format!(
        "B={} gamma={} accuracy={} tokens_per_branch={:.1} latency={:.3}s bound={}",
        e.config.branches, e.config.draft_len, e.predicted_accuracy, e.tokens_per_branch, e.wall_latency, e.bound
    )
}

fn load(path: &Path) -> Result<Scenario, CliError> {
    Ok(load_scenario(path)?)
}

fn plan(a: PlanArgs) -> Result<(), CliError> {
    let scenario = load(&a.common.scenario)?;
    let budget = a.budget.unwrap_or(scenario.budget);
    let result = greedy_search(&ScenarioObjective::new(&scenario, budget), a.b_max, a.gamma_max)?;
    check_accuracies(&result.trace)?;
    let limit = a.b_max.trailing_zeros() as usize + 1 + a.gamma_max as usize;
    ensure(result.evaluations_used <= limit, || {
        format!("greedy used {} evaluations, bound is {limit}", result.evaluations_used)
    })?;

    let mut out = OutputDir::create(&a.common.out)?;
    let path = out.write("plan.csv", |buf| planner::write_trace_csv(buf, &result.trace))?;
    out.finish(manifest(
        "plan",
        &a.common.scenario,
        params([
            ("T", budget.to_string()),
            ("b-max", a.b_max.to_string()),
            ("gamma-max", a.gamma_max.to_string()),
        ]),
        0,
    ))?;

    let grid_cells = (a.b_max.trailing_zeros() + 1) * (a.gamma_max + 1);
    println!("best: {}", describe(&result.best));
    println!("evaluations: {} (grid: {grid_cells})", result.evaluations_used);
    println!("wrote {}", path.display());
    Ok(())
}

fn grid(a: GridArgs) -> Result<(), CliError> {
    let scenario = load(&a.common.scenario)?;
    let budget = a.budget.unwrap_or(scenario.budget);
    let result = grid_search(&ScenarioObjective::new(&scenario, budget), &a.b_set, &a.gamma_set)?;
    check_accuracies(&result.trace)?;
    let mut cells = a
        .b_set
        .iter()
        .flat_map(|&b| a.gamma_set.iter().map(move |&g| (b, g)))
        .collect::<Vec<_>>();
    cells.sort_unstable();
    cells.dedup();
    ensure(result.trace.len() == cells.len(), || {
        format!("grid produced {} rows for {} cells", result.trace.len(), cells.len())
    })?;

    let mut out = OutputDir::create(&a.common.out)?;
    let path = out.write("grid.csv", |buf| planner::write_trace_csv(buf, &result.trace))?;
    out.finish(manifest(
        "grid",
        &a.common.scenario,
        params([
            ("T", budget.to_string()),
            ("b-set", join(&a.b_set)),
            ("gamma-set", join(&a.gamma_set)),
        ]),
        0,
    ))?;

    println!("best: {}", describe(&result.best));
    println!("evaluations: {}", result.evaluations_used);
    println!("wrote {}", path.display());
    Ok(())
}

fn pareto(a: ParetoArgs) -> Result<(), CliError> {
    let scenario = load(&a.common.scenario)?;
    let frontier = pareto_frontier(&scenario, &a.budgets, &a.b_set, &a.gamma_set)?;
    let mut budgets = a.budgets.clone();
    budgets.sort_by(f64::total_cmp);
    budgets.dedup();
    let sequential = budgets
        .iter()
        .map(|&t| Ok((t, evaluate_config(&scenario, &ConcurrencyConfig::new(1, 0), t)?)))
        .collect::<ttslat_core::Result<Vec<_>>>()?;
    let parallel = planner::sweep(&scenario, &budgets, &a.b_set, &[0])?;

    let points: Vec<_> = frontier.iter().map(|(_, e)| *e).collect();
    check_accuracies(&points)?;
    ensure(
        frontier
            .windows(2)
            .all(|w| w[0].1.predicted_accuracy <= w[1].1.predicted_accuracy),
        || "frontier accuracy decreases".into(),
    )?;
    let covers_companions = a.b_set.contains(&1) && a.gamma_set.contains(&0);
    for (t, e) in &frontier {
        let seq = sequential
            .iter()
            .find(|(s, _)| s == t)
            .map(|(_, s)| s.predicted_accuracy);
        let par = parallel.iter().find(|(s, _)| s == t).map(|(_, p)| p.predicted_accuracy);
        if covers_companions {
            ensure(seq.is_some_and(|s| e.predicted_accuracy >= s), || {
                format!("frontier below sequential at T={t}")
            })?;
        }
        if a.gamma_set.contains(&0) {
            ensure(par.is_some_and(|p| e.predicted_accuracy >= p), || {
                format!("frontier below parallel at T={t}")
            })?;
        }
    }

    let mut out = OutputDir::create(&a.common.out)?;
    let path = out.write("pareto.csv", |buf| planner::write_frontier_csv(buf, &frontier))?;
    out.write("sequential.csv", |buf| planner::write_frontier_csv(buf, &sequential))?;
    out.write("parallel.csv", |buf| planner::write_frontier_csv(buf, &parallel))?;
    out.finish(manifest(
        "pareto",
        &a.common.scenario,
        params([
            ("T", join(&a.budgets)),
            ("b-set", join(&a.b_set)),
            ("gamma-set", join(&a.gamma_set)),
        ]),
        0,
    ))?;

    for (t, e) in &frontier {
        println!("T={t}: {}", describe(e));
    }
    println!("wrote {} (+ sequential.csv, parallel.csv)", path.display());
    Ok(())
}

fn simulate_cmd(a: SimulateArgs) -> Result<(), CliError> {
    let scenario = load(&a.common.scenario)?;
    let budget = a.budget.unwrap_or(scenario.budget);
    let fallback = scenario.default_config;
    let pick = |flag: Option<u32>, from_default: fn(&ConcurrencyConfig) -> u32, name: &str| {
        flag.or(fallback.as_ref().map(from_default))
            .ok_or_else(|| CliError::Input(format!("--{name} not given and the scenario has no `default_config`")))
    };
    let branches = pick(a.branches, |c| c.branches, "branches")?;
    let gamma = pick(a.gamma, |c| c.draft_len, "gamma")?;
    let config = ConcurrencyConfig::new(branches, gamma);
    let summary = simulate(&scenario, &config, budget, a.trials, a.seed)?;
    let predicted = evaluate_config(&scenario, &config, budget)?.predicted_accuracy;
    ensure((0.0..=1.0).contains(&summary.accuracy_estimate), || {
        format!("simulated accuracy {} out of range", summary.accuracy_estimate)
    })?;
    let row = SummaryRow {
        config,
        budget,
        summary,
        predicted_accuracy: predicted,
    };

    let mut out = OutputDir::create(&a.common.out)?;
    let path = out.write("sim.csv", |buf| simulator::write_summary_csv(buf, &[row]))?;
    if a.trace {
        let events = simulate_trace(&scenario, &config, budget, a.seed)?;
        out.write("trace.csv", |buf| simulator::write_trace_csv(buf, &events))?;
    }
    out.finish(manifest(
        "simulate",
        &a.common.scenario,
        params([
            ("T", budget.to_string()),
            ("branches", branches.to_string()),
            ("gamma", gamma.to_string()),
            ("trials", a.trials.to_string()),
            ("seed", a.seed.to_string()),
            ("trace", a.trace.to_string()),
        ]),
        a.seed,
    ))?;

    println!(
        "B={branches} gamma={gamma} T={budget}: accuracy {} +- {} (planner {predicted}), mean tokens {:.1}, mean cycles {:.1}",
        summary.accuracy_estimate, summary.std_error, summary.mean_tokens, summary.mean_cycles
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn parse_range(text: &str) -> Option<(f64, f64)> {
    let (lo, hi) = text.split_once(':')?;
    Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?))
}

fn parse_bounds(items: &[String]) -> Result<Option<FitBounds>, CliError> {
    if items.is_empty() {
        return Ok(None);
    }
    let mut bounds = FitBounds::default();
    for item in items {
        let bad = || CliError::Input(format!("bad --bound `{item}`, expected NAME=LO:HI"));
        let (name, range) = item.split_once('=').ok_or_else(bad)?;
        let range = parse_range(range).ok_or_else(bad)?;
        match name.trim() {
            "a_min" => bounds.a_min = range,
            "a_max" => bounds.a_max = range,
            "midpoint" => bounds.midpoint = Some(range),
            "slope" => bounds.slope = range,
            other => {
                return Err(CliError::Input(format!(
                    "unknown --bound parameter `{other}` (expected a_min, a_max, midpoint or slope)"
                )))
            }
        }
    }
    Ok(Some(bounds))
}

fn fit(a: FitArgs) -> Result<(), CliError> {
    let anchors = load_anchors_csv(&a.anchors)?;
    let bounds = parse_bounds(&a.bounds)?;
    let fit = curve_fit(&anchors, bounds)?;
    ensure(fit.rms_residual.is_finite(), || "fit residual is not finite".into())?;
    let doc = serde_json::json!({
        "curve": fit.curve,
        "rms_residual": fit.rms_residual,
        "degenerate": fit.degenerate,
        "anchors": anchors.len(),
    });

    let mut out = OutputDir::create(&a.out)?;
    let path = out.write("curve.json", |buf| {
        serde_json::to_writer_pretty(&mut *buf, &doc).expect("curve document serializes");
        Ok(())
    })?;
    let mut m = manifest(
        "fit",
        Path::new(""),
        params([
            ("anchors", a.anchors.display().to_string()),
            ("bound", a.bounds.join(",")),
        ]),
        0,
    );
    m.scenario_path.clear();
    out.finish(m)?;

    let c = fit.curve;
    println!(
        "a_min={} a_max={} midpoint={} slope={} rms_residual={:.3e}{}",
        c.a_min,
        c.a_max,
        c.midpoint,
        c.slope,
        fit.rms_residual,
        if fit.degenerate {
            " (degenerate: slope not identifiable)"
        } else {
            ""
        }
    );
    println!("wrote {}", path.display());
    Ok(())
}

/// Argument vector that reproduces a recorded run into `out`.
fn replay_argv(m: &RunManifest, out: &Path) -> Result<Vec<String>, CliError> {
    if m.command == "replay" {
        return Err(CliError::Input("manifest records a replay; nothing to rerun".into()));
    }
    let mut argv = vec!["ttslat".to_string(), m.command.clone()];
    if !m.scenario_path.is_empty() {
        argv.extend(["--scenario".into(), m.scenario_path.clone()]);
    }
    for (key, value) in &m.parameters {
        match key.as_str() {
            "trace" => {
                if value == "true" {
                    argv.push("--trace".into());
                }
            }
            "bound" if value.is_empty() => {}
            _ => argv.extend([format!("--{key}"), value.clone()]),
        }
    }
    argv.extend(["--out".into(), out.display().to_string()]);
    Ok(argv)
}

fn replay(a: ReplayArgs) -> Result<(), CliError> {
    let recorded = RunManifest::load(&a.manifest)?;
    let out = a.out.unwrap_or_else(|| {
        a.manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    let argv = replay_argv(&recorded, &out)?;
    log::info!("replaying: {}", argv.join(" "));
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::Input(format!("manifest arguments rejected: {e}")))?;
    if recorded.tool_version != env!("CARGO_PKG_VERSION") {
        log::warn!(
            "manifest written by version {}, replaying with {}",
            recorded.tool_version,
            env!("CARGO_PKG_VERSION")
        );
    }
    run(cli.command)
}
