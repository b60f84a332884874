//! Subcommand bodies.

use std::path::Path;

use fundspan::funds::FundSet;
use fundspan::hjb::export::{
    write_fund_binary, write_policy_binary, write_policy_csv, write_value_binary, write_value_csv,
};
use fundspan::hjb::{
    build_grid, convergence_study, extract_fund_policy, solve_bellman, Grid, GridConfig, PolicyGrid, ValueGrid,
    MAX_STATE_DIM,
};
use fundspan::market::{simulate_paths, validate_spec, Violation};
use fundspan::policy_eval::{epsilon_optimality_report, evaluate as mc_evaluate, merton_oracle, McParams, Strategy};
use fundspan::scenario::{preset, violation_line, Format, PRESETS};
use serde::Serialize;

use crate::run::{manifest_now, start_time, write_manifest, Failure, Outcome, Run};
use crate::StrategyArg;

/// Sampled points used by `validate`.
const VALIDATION_SAMPLES: usize = 256;
/// `solve` fails when the fund representation misses by more than this.
const SPAN_RESIDUAL_LIMIT: f64 = 1e-6;
/// Paths written by `simulate` unless `--paths` is given.
const DEFAULT_SIMULATE_PATHS: usize = 1000;

fn block_of(v: &Violation) -> Option<&'static str> {
    match v {
        Violation::NegativeRate { .. } => Some("short_rate"),
        Violation::SingularVolatility { .. } => Some("volatility"),
        Violation::Ellipticity { .. } => Some("eta_aux_loading"),
        Violation::NonFinite { .. } => None,
    }
}

fn dimension_warning(run: &Run) -> Option<String> {
    let dim = 1 + run.spec.m() + run.spec.big_m();
    (dim >= MAX_STATE_DIM).then(|| {
        format!("warning: state dimension {dim} uses the full grid budget (max {MAX_STATE_DIM}); solves are slow")
    })
}

pub fn validate(run: &mut Run) -> Outcome {
    let report = validate_spec(&run.spec, VALIDATION_SAMPLES, run.file.mc.seed)?;
    let mut text = report.to_string();
    text.push('\n');
    for v in &report.violations {
        if let Some(block) = block_of(v) {
            match violation_line(&run.text, block) {
                Some(line) => text.push_str(&format!("block [market.{block}] at line {line}: {v}\n")),
                None => text.push_str(&format!("block [market.{block}]: {v}\n")),
            }
        }
    }
    if let Some(w) = dimension_warning(run) {
        text.push_str(&w);
        text.push('\n');
    }
    print!("{text}");
    run.write_json("validation.json", &report)?;
    run.write_text("validation.txt", &text)?;
    if report.is_valid() {
        Ok(())
    } else {
        Err(Failure::Check(format!("{} assumption violation(s)", report.violations.len())))
    }
}

fn grid_config(run: &Run) -> GridConfig {
    run.file.grid.clone()
}

fn solve_grid(run: &Run) -> Result<(Grid, ValueGrid, PolicyGrid), Failure> {
    if let Some(w) = dimension_warning(run) {
        eprintln!("{w}");
    }
    let grid = build_grid(&run.spec, &run.file.utility, &grid_config(run))?;
    let (value, policy) = solve_bellman(&run.spec, &run.file.utility, &grid)?;
    Ok((grid, value, policy))
}

#[derive(Serialize)]
struct OracleSummary {
    value_at_x0: f64,
    fraction: Vec<f64>,
    /// Max relative gap of the grid control at `t = 0` over interior nodes.
    max_policy_relative_error: f64,
}

#[derive(Serialize)]
struct SolveSummary {
    grid: String,
    nodes: usize,
    t_steps: usize,
    h: f64,
    dt: f64,
    value_at_x0: f64,
    mu: usize,
    zero_policy: bool,
    fund_report: fundspan::hjb::FundPolicyReport,
    oracle: Option<OracleSummary>,
}

fn initial_state(run: &Run) -> Vec<f64> {
    let mut c = vec![run.spec.coord0()];
    c.extend_from_slice(run.spec.eta0());
    c.extend_from_slice(run.spec.zeta0());
    c
}

/// Distinct factor states of the grid, for the fund-direction dump.
fn factor_points(grid: &Grid, m: usize) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
    let per_x = grid.node_count() / grid.axes[0].nodes;
    (0..per_x)
        .map(|node| {
            let c = grid.coords(node);
            (c[1..1 + m].to_vec(), c[1 + m..].to_vec(), 0.0)
        })
        .collect()
}

pub fn solve(run: &mut Run) -> Outcome {
    let (grid, value, policy) = solve_grid(run)?;
    let funds = FundSet::new(&run.spec);
    let fund_report = extract_fund_policy(&value, &policy, &funds, &grid)?;
    let stride = run.file.output.slice_stride;
    if run.wants(Format::Csv) {
        run.write("value.csv", |w| Ok(write_value_csv(&value, stride, w)?))?;
        run.write("policy.csv", |w| Ok(write_policy_csv(&policy, stride, w)?))?;
        let points = factor_points(&grid, run.spec.m());
        run.write("funds.csv", |w| Ok(funds.write_csv(&points, w)?))?;
    }
    if run.wants(Format::Binary) {
        run.write("value.bin", |w| Ok(write_value_binary(&value, w)?))?;
        run.write("policy.bin", |w| Ok(write_policy_binary(&policy, w)?))?;
        run.write("funds.bin", |w| Ok(write_fund_binary(&policy, w)?))?;
    }
    let oracle = merton_oracle(&run.spec, &run.file.utility).ok().map(|o| {
        let target = o.fraction_at(0.0);
        let scale = target.norm().max(f64::MIN_POSITIVE);
        let mut err: f64 = 0.0;
        for node in (0..grid.node_count()).filter(|n| grid.is_interior(*n)) {
            let gap = policy
                .u_at(node, 0)
                .iter()
                .zip(target.iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            err = err.max(gap / scale);
        }
        OracleSummary {
            value_at_x0: o.value(run.spec.x0(), 0.0),
            fraction: target.iter().copied().collect(),
            max_policy_relative_error: err,
        }
    });
    let summary = SolveSummary {
        grid: grid.descriptor(),
        nodes: grid.node_count(),
        t_steps: grid.t_steps,
        h: grid.axes[0].h(),
        dt: grid.dt(),
        value_at_x0: value.interpolate(&initial_state(run), 0),
        mu: fund_report.mu,
        zero_policy: policy.u.iter().all(|v| *v == 0.0),
        fund_report,
        oracle,
    };
    let r = &summary.fund_report;
    println!("grid                      {}", summary.grid);
    println!("J at initial state        {:.10}", summary.value_at_x0);
    println!("funds used (mu)           {}", summary.mu);
    println!("max span residual         {:.3e}", r.max_span_residual_nondegenerate);
    println!("  incl. degenerate nodes  {:.3e} ({} of {})", r.max_span_residual, r.degenerate_nodes, r.checked_nodes);
    if summary.zero_policy {
        println!("policy                    identically zero");
    }
    if let Some(o) = &summary.oracle {
        println!("closed-form value at X0   {:.10}", o.value_at_x0);
        println!("closed-form fraction      {:?}", o.fraction);
        println!("max policy rel. error     {:.3e}", o.max_policy_relative_error);
    }
    let residual = r.max_span_residual_nondegenerate;
    run.write_json("solve.json", &summary)?;
    if residual > SPAN_RESIDUAL_LIMIT {
        return Err(Failure::Check(format!(
            "span residual {residual:.3e} exceeds {SPAN_RESIDUAL_LIMIT:e}"
        )));
    }
    Ok(())
}

fn needs_grid(s: StrategyArg) -> bool {
    matches!(s, StrategyArg::Fund | StrategyArg::Policy)
}

fn strategy<'a>(run: &Run, kind: StrategyArg, policy: Option<&'a PolicyGrid>) -> Result<Strategy<'a>, Failure> {
    Ok(match (kind, policy) {
        (StrategyArg::Fund, Some(p)) => Strategy::fund_rule(&run.spec, p),
        (StrategyArg::Policy, Some(p)) => Strategy::grid_policy(&run.spec, p),
        (StrategyArg::Oracle, _) => {
            let o = merton_oracle(&run.spec, &run.file.utility)?;
            Strategy::constant_fraction(&run.spec, o.fraction, "oracle")
        }
        (StrategyArg::Zero, _) => Strategy::zero(&run.spec),
        _ => unreachable!("grid strategies get a solved policy"),
    })
}

#[derive(Serialize)]
struct SimulateSummary {
    strategy: String,
    paths: usize,
    steps: usize,
    seed: u64,
    excluded_paths: usize,
    mean_terminal_wealth: f64,
}

pub fn simulate(run: &mut Run) -> Outcome {
    let kind = run.args.strategy;
    let solved = if needs_grid(kind) { Some(solve_grid(run)?) } else { None };
    let s = strategy(run, kind, solved.as_ref().map(|x| &x.2))?;
    let paths = run.args.paths.unwrap_or(DEFAULT_SIMULATE_PATHS);
    let steps = run.file.mc.steps;
    let seed = run.file.mc.seed;
    let bundle = simulate_paths(&run.spec, &s, steps, paths, seed)?;
    let finite: Vec<f64> = (0..paths)
        .filter(|p| bundle.paths[*p].finite)
        .map(|p| bundle.wealth(p, steps))
        .collect();
    let summary = SimulateSummary {
        strategy: s.label.clone(),
        paths,
        steps,
        seed,
        excluded_paths: bundle.excluded,
        mean_terminal_wealth: fundspan::policy_eval::pairwise_sum(&finite) / finite.len().max(1) as f64,
    };
    run.write("paths.csv", |w| Ok(bundle.write_csv(w)?))?;
    println!(
        "{} paths x {} steps, strategy {}, mean terminal wealth {:.8}, excluded {}",
        paths, steps, summary.strategy, summary.mean_terminal_wealth, summary.excluded_paths
    );
    run.write_json("simulate.json", &summary)
}

#[derive(Serialize)]
struct EvaluateSummary {
    strategy: String,
    steps: usize,
    #[serde(flatten)]
    result: fundspan::policy_eval::EvalResult,
}

pub fn evaluate(run: &mut Run) -> Outcome {
    let kind = run.args.strategy;
    let solved = if needs_grid(kind) { Some(solve_grid(run)?) } else { None };
    let s = strategy(run, kind, solved.as_ref().map(|x| &x.2))?;
    let mc = run.file.mc;
    let result = mc_evaluate(&run.spec, &s, &run.file.utility, mc.steps, mc.paths, mc.seed)?;
    println!(
        "strategy {}: E U(X_T) = {:.10} +/- {:.3e} ({} paths, {} excluded{})",
        s.label,
        result.mean_utility,
        result.std_error,
        result.path_count,
        result.excluded_paths,
        if result.flagged { ", FLAGGED" } else { "" }
    );
    let summary = EvaluateSummary {
        strategy: s.label.clone(),
        steps: mc.steps,
        result,
    };
    run.write_json("evaluation.json", &summary)
}

/// Refinement ladder for the discretization constant: `nx`, `2nx - 1`,
/// `4nx - 3`, sharing the coarse nodes.
fn refinements(base: &GridConfig) -> Vec<GridConfig> {
    [base.nx, 2 * base.nx - 1, 4 * base.nx - 3]
        .into_iter()
        .map(|nx| {
            let mut g = base.clone();
            g.nx = nx;
            g.t_steps = 0;
            g
        })
        .collect()
}

pub fn report(run: &mut Run) -> Outcome {
    let utility = run.file.utility;
    let c_disc = match merton_oracle(&run.spec, &utility) {
        Ok(_) => {
            let study = convergence_study(&run.spec, &utility, &refinements(&grid_config(run)))?;
            run.write_json("convergence.json", &study)?;
            study.c_disc
        }
        Err(_) => 0.0,
    };
    let (grid, _, policy) = solve_grid(run)?;
    let mc = McParams {
        paths: run.file.mc.paths,
        steps: run.file.mc.steps,
        seed: run.file.mc.seed,
    };
    let r = epsilon_optimality_report(&run.spec, &utility, &grid, &policy, &mc, c_disc)?;
    let text = r.to_string();
    println!("{text}");
    run.write("report.csv", |w| Ok(r.write_csv(w)?))?;
    run.write_text("report.txt", &format!("{text}\n"))?;
    run.write_json("report.json", &r)?;
    if r.passed() {
        Ok(())
    } else {
        Err(Failure::Check("epsilon-optimality comparison failed".into()))
    }
}

pub fn presets(out: Option<&Path>) -> Outcome {
    let started = start_time();
    let mut outputs = Vec::new();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    for name in PRESETS {
        let s = preset(name)?;
        let spec = s.spec()?;
        println!(
            "{name:<18} n={} m={} M={} domain={:?} utility={:?}",
            spec.n(),
            spec.m(),
            spec.big_m(),
            spec.domain(),
            s.utility
        );
        if let Some(dir) = out {
            let file = format!("{name}.toml");
            std::fs::write(dir.join(&file), s.to_toml())?;
            outputs.push(file);
        }
    }
    if let Some(dir) = out {
        write_manifest(dir, manifest_now("presets", outputs, started))?;
    }
    Ok(())
}
