//! One function per subcommand. Each writes its artifacts into the run
//! directory and returns the process exit code.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use mfg_core::fixedpoint::{check_value_function, matching_residual, solve_mfg};
use mfg_core::lq_oracle::{lq_cost, solve_lq_riccati, RiccatiSolution};
use mfg_core::model::check_lq_assumptions;
use mfg_core::nplayer::{chaos_experiment, deviation_sweep, Deviation};
use mfg_core::rng::{derive_seed, streams};
use mfg_core::wasserstein::empirical_rate_experiment;
use mfg_core::{DecouplingField, Error, LqSpec, MeasureFlow, MfgModel, MfgSolution, PathEnsemble, TimeGrid};
use serde_json::json;

use crate::config::RunConfig;
use crate::exec::RayonExecutor;
use crate::rundir::{num, sha256_hex, Manifest, RunDir, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    LqOracle,
    NashGap,
    Chaos,
    WassersteinRate,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::LqOracle => "lq-oracle",
            Command::NashGap => "nash-gap",
            Command::Chaos => "chaos",
            Command::WassersteinRate => "wasserstein-rate",
            Command::Validate => "validate",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub config: PathBuf,
    /// Run directory; defaults to `runs/<command>`.
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub quiet: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub run_dir: Option<PathBuf>,
    pub summary: Vec<String>,
}

/// Errors that mean "the input is wrong" rather than "the computation failed".
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Invalid(String);

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn exit_code_for(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<Invalid>().is_some() || err.downcast_ref::<serde_json::Error>().is_some() {
        return EXIT_INVALID;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::AssumptionViolation(_)) => {
            EXIT_INVALID
        }
        Some(_) => EXIT_FAILURE,
        None => EXIT_FAILURE,
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    dir: RunDir,
    summary: Vec<String>,
    seeds: Vec<(String, u64)>,
    quiet: bool,
}

impl Ctx<'_> {
    fn say(&mut self, line: String) {
        if !self.quiet {
            eprintln!("{line}");
        }
        self.summary.push(line);
    }
}

pub fn run(command: Command, opts: &RunOptions) -> RunOutcome {
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let (cfg, raw) = match RunConfig::from_path(&opts.config) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e:#}");
            return RunOutcome {
                exit_code: EXIT_INVALID,
                run_dir: None,
                summary: vec![format!("error: {e:#}")],
            };
        }
    };
    let requested = opts
        .out
        .clone()
        .unwrap_or_else(|| Path::new("runs").join(command.name()));
    let dir = match RunDir::create(&requested) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e:#}");
            return RunOutcome {
                exit_code: EXIT_FAILURE,
                run_dir: None,
                summary: vec![format!("error: {e:#}")],
            };
        }
    };
    let seed = opts.seed.unwrap_or(cfg.seed);
    let pool = match opts.threads {
        Some(0) | None => rayon::ThreadPoolBuilder::new().build(),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            return RunOutcome {
                exit_code: EXIT_FAILURE,
                run_dir: Some(dir.path().to_path_buf()),
                summary: vec![format!("error: thread pool: {e}")],
            }
        }
    };
    let threads = pool.current_num_threads();
    let mut ctx = Ctx {
        cfg: &cfg,
        seed,
        dir,
        summary: Vec::new(),
        seeds: Vec::new(),
        quiet: opts.quiet,
    };
    ctx.say(format!("mfg {} {}", env!("CARGO_PKG_VERSION"), command.name()));
    ctx.say(format!("master seed {seed}"));
    let result = ctx
        .dir
        .write_bytes("config.json", &raw)
        .and_then(|_| pool.install(|| execute(command, &mut ctx)));
    let exit_code = match result {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code_for(&e);
            ctx.say(format!("error: {e:#}"));
            code
        }
    };
    ctx.say(format!("exit code {exit_code}"));
    let mut outputs: Vec<String> = ctx.dir.written().to_vec();
    outputs.push("summary.txt".into());
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        tool: "mfg",
        version: env!("CARGO_PKG_VERSION"),
        command: command.name().into(),
        config_path: opts.config.display().to_string(),
        config_sha256: sha256_hex(&raw),
        config: serde_json::to_value(&cfg).unwrap_or(serde_json::Value::Null),
        master_seed: seed,
        seed_overridden: opts.seed.is_some(),
        derived_seeds: ctx.seeds.clone(),
        threads,
        started_unix_seconds: started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        exit_code,
        outputs,
    };
    let summary = ctx.summary.clone();
    let write = ctx
        .dir
        .write_lines("summary.txt", &summary)
        .and_then(|_| ctx.dir.write_json("manifest.json", &manifest));
    if let Err(e) = write {
        eprintln!("error: {e:#}");
        return RunOutcome {
            exit_code: EXIT_FAILURE,
            run_dir: Some(ctx.dir.path().to_path_buf()),
            summary,
        };
    }
    RunOutcome {
        exit_code,
        run_dir: Some(ctx.dir.path().to_path_buf()),
        summary,
    }
}

fn execute(command: Command, ctx: &mut Ctx<'_>) -> anyhow::Result<i32> {
    match command {
        Command::Validate => validate(ctx),
        Command::LqOracle => lq_oracle(ctx),
        Command::Solve => Ok(solve(ctx)?.1),
        Command::NashGap => {
            let (solved, code) = solve(ctx)?;
            if code != EXIT_OK {
                return Ok(code);
            }
            nash(ctx, &solved)?;
            Ok(EXIT_OK)
        }
        Command::Chaos => {
            let (solved, code) = solve(ctx)?;
            if code != EXIT_OK {
                return Ok(code);
            }
            chaos(ctx, &solved)?;
            Ok(EXIT_OK)
        }
        Command::WassersteinRate => rate(ctx),
    }
}

fn validate(ctx: &mut Ctx<'_>) -> anyhow::Result<i32> {
    let cfg = ctx.cfg;
    let mut code = EXIT_OK;
    if let Some(spec) = cfg.lq() {
        let report = check_lq_assumptions(&spec);
        for c in &report.conditions {
            let verdict = match (c.passed, c.blocking) {
                (true, _) => "ok",
                (false, true) => "VIOLATED (blocking)",
                (false, false) => "VIOLATED (advisory)",
            };
            ctx.say(format!("{verdict}: {} [{}]", c.name, c.detail));
        }
        match report.gamma {
            Some(g) => ctx.say(format!("strong convexity in x: gamma = {}", num(g))),
            None => ctx.say("strong convexity in x: not detected".into()),
        }
        ctx.dir.write_json("assumptions.json", &report)?;
        if report.blocking_failure() {
            return Ok(EXIT_INVALID);
        }
        if !report.all_passed() {
            ctx.say("advisory conditions failed; solvers still run".into());
        }
    }
    let model = cfg.build_model()?;
    let checks_seed = derive_seed(ctx.seed, streams::CHECKS, &[]);
    ctx.seeds.push(("checks".into(), checks_seed));
    let checks = model.sampled_checks(checks_seed, 1000);
    ctx.say(format!(
        "sampled checks: gradient error {}, convexity violation {}, bound excess {}",
        num(checks.gradient_error),
        num(checks.convexity_violation),
        num(checks.bound_excess)
    ));
    ctx.dir.write_json("checks.json", &checks)?;
    if checks.convexity_violation > 0.0 {
        ctx.say("sampled strict convexity in the control fails".into());
        code = EXIT_INVALID;
    } else if !checks.passed(1e-4) {
        ctx.say("sampled checks flag the supplied derivatives or bounds (advisory)".into());
    }
    cfg.fixed_point(&model, ctx.seed)?;
    cfg.grid(&model)?;
    ctx.say(format!(
        "config valid; model depends on the measure through {:?}",
        model.dependence()
    ));
    Ok(code)
}

fn riccati_table(sol: &RiccatiSolution) -> Table {
    let d = sol.xbar[0].len();
    let mut header = vec!["t".to_string()];
    for a in 0..d {
        for b in 0..d {
            header.push(format!("eta_{a}{b}"));
        }
    }
    header.extend((0..d).map(|a| format!("chi_{a}")));
    header.extend((0..d).map(|a| format!("xbar_{a}")));
    for a in 0..d {
        for b in 0..d {
            header.push(format!("cov_{a}{b}"));
        }
    }
    let mut table = Table::new(&header);
    for (j, t) in sol.grid.times().enumerate() {
        let mut row = vec![num(t)];
        row.extend(sol.eta[j].as_slice().iter().map(|&v| num(v)));
        row.extend(sol.chi[j].iter().map(|&v| num(v)));
        row.extend(sol.xbar[j].iter().map(|&v| num(v)));
        row.extend(sol.covariance[j].as_slice().iter().map(|&v| num(v)));
        table.push(row);
    }
    table
}

fn lq_oracle(ctx: &mut Ctx<'_>) -> anyhow::Result<i32> {
    let spec = ctx
        .cfg
        .lq()
        .ok_or_else(|| invalid("lq-oracle needs an LQ model (`lq_spec` or an LQ builtin)"))?;
    let report = check_lq_assumptions(&spec);
    for c in report.conditions.iter().filter(|c| !c.passed) {
        ctx.say(format!("warning: {} fails [{}]", c.name, c.detail));
    }
    if report.blocking_failure() {
        return Err(Error::AssumptionViolation(report).into());
    }
    let n_steps = ctx.cfg.grid.map_or(100, |g| g.n_steps);
    let grid = TimeGrid::new(spec.horizon, n_steps)?;
    let started = Instant::now();
    let sol = solve_lq_riccati(&spec, grid)?;
    let cost = lq_cost(&sol, &spec)?;
    let elapsed = started.elapsed().as_secs_f64();
    ctx.dir.write_csv("riccati.csv", &riccati_table(&sol))?;
    let n = grid.n_steps();
    ctx.dir.write_json(
        "oracle.json",
        &json!({
            "cost": cost,
            "boundary_residual": sol.boundary_residual,
            "eta_0": sol.eta[0].to_rows(),
            "chi_0": sol.chi[0],
            "xbar_T": sol.xbar[n],
            "covariance_T": sol.covariance[n].to_rows(),
            "assumptions": report,
        }),
    )?;
    ctx.say(format!("cost J = {}", num(cost)));
    ctx.say(format!("eta_0 = {:?}", sol.eta[0].as_slice()));
    ctx.say(format!("xbar_T = {:?}", sol.xbar[n]));
    ctx.say(format!("boundary residual {}", num(sol.boundary_residual)));
    ctx.say(format!("solved in {elapsed:.3} s"));
    Ok(EXIT_OK)
}

pub(crate) struct Solved {
    pub model: MfgModel,
    pub solution: MfgSolution,
    pub oracle: Option<(LqSpec, RiccatiSolution)>,
}

/// Points of a display grid around `x0`, inside the lattice.
fn display_points(model: &MfgModel, field: &DecouplingField) -> Vec<Vec<f64>> {
    let d = model.state_dim();
    let spread = (4.0 * model.sigma().op_norm() * model.horizon().sqrt()).max(2.0);
    let per_axis = if d == 1 { 81 } else { 21 };
    let axis = |a: usize| -> Vec<f64> {
        let lo = (model.x0()[a] - spread).max(field.lattice.lower[a]);
        let hi = (model.x0()[a] + spread).min(field.lattice.upper(a));
        (0..per_axis)
            .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
            .collect()
    };
    let axes: Vec<Vec<f64>> = (0..d).map(axis).collect();
    let mut pts = vec![Vec::new()];
    for ax in &axes {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                ax.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    pts
}

/// Largest `|u - (η x + χ)|` over the box `|x|_∞ <= 2`.
pub fn lattice_error_on_box(field: &DecouplingField, sol: &RiccatiSolution) -> f64 {
    let d = field.dim();
    let per_axis = if d == 1 { 401 } else { 41 };
    let axis: Vec<f64> = (0..per_axis)
        .map(|i| -2.0 + 4.0 * i as f64 / (per_axis - 1) as f64)
        .collect();
    let mut pts: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..d {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    let mut u = vec![0.0; d];
    let mut worst = 0.0f64;
    for j in 0..field.grid.n_nodes() {
        for x in &pts {
            field.eval(j, x, &mut u);
            let exact = sol.field_value(j, x);
            for c in 0..d {
                worst = worst.max((u[c] - exact[c]).abs());
            }
        }
    }
    worst
}

const FIELD_FORMAT: &str = "u(t_j, x) on a rectangular lattice. field.grid: T and n_steps, t_j = j T / n_steps. \
field.lattice: point i has coordinates lower[a] + spacing * i_a, flattened row-major with the last axis fastest. \
field.values[(j * n_points + i) * dim + c] is component c at time node j and lattice point i. \
Outside the lattice u continues linearly with the boundary-cell slope; field.growth_slope[j * 2 * dim + 2 * a + side] \
is the largest one-sided boundary slope (side 0 = lower face).";

#[derive(serde::Serialize)]
struct FieldArtifact<'a> {
    format: &'static str,
    field: &'a DecouplingField,
}

/// One row per atom: `t, atom, x_0.., weight`.
fn flow_atoms(flow: &MeasureFlow) -> Table {
    let d = flow.dim();
    let mut header = vec!["t".to_string(), "atom".to_string()];
    header.extend((0..d).map(|c| format!("x_{c}")));
    header.push("weight".into());
    let mut table = Table::new(&header);
    for (j, t) in flow.grid().times().enumerate() {
        for (i, (x, w)) in flow.at(j).atoms().enumerate() {
            let mut row = vec![num(t), i.to_string()];
            row.extend(x.iter().map(|&v| num(v)));
            row.push(num(w));
            table.push(row);
        }
    }
    table
}

fn flow_moments(flow: &MeasureFlow) -> Table {
    let d = flow.dim();
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|c| format!("mean_{c}")));
    header.extend((0..d).map(|c| format!("var_{c}")));
    let mut table = Table::new(&header);
    for (j, t) in flow.grid().times().enumerate() {
        let mu = flow.at(j);
        let mean = mu.mean();
        let mut row = vec![num(t)];
        row.extend(mean.iter().map(|&m| num(m)));
        for c in 0..d {
            let var: f64 = mu.atoms().map(|(x, w)| w * (x[c] - mean[c]).powi(2)).sum();
            row.push(num(var));
        }
        table.push(row);
    }
    table
}

/// Per time node: state mean with its standard error and variance, mean
/// control on the following step (empty at `T`) and mean adjoint.
fn path_summary(paths: &PathEnsemble) -> Table {
    let d = paths.dim;
    let k = paths.control_dim;
    let mut header = vec!["t".to_string()];
    for c in 0..d {
        header.extend([format!("mean_{c}"), format!("stderr_{c}"), format!("var_{c}")]);
    }
    header.extend((0..k).map(|c| format!("control_mean_{c}")));
    header.extend((0..d).map(|c| format!("adjoint_mean_{c}")));
    let var = paths.variance_path();
    let n = paths.n_particles as f64;
    let steps = paths.grid.n_steps();
    let mut table = Table::new(&header);
    for (j, t) in paths.grid.times().enumerate() {
        let mut row = vec![num(t)];
        for (c, &v) in var[j].iter().enumerate() {
            let est = paths.mean_estimate(j, c);
            row.extend([num(est.mean), num(est.stderr), num(v)]);
        }
        for c in 0..k {
            row.push(if j < steps {
                num((0..paths.n_particles).map(|p| paths.control(p, j)[c]).sum::<f64>() / n)
            } else {
                String::new()
            });
        }
        for c in 0..d {
            let sum: Option<f64> = (0..paths.n_particles).map(|p| paths.adjoint(p, j).map(|y| y[c])).sum();
            row.push(sum.map_or(String::new(), |s| num(s / n)));
        }
        table.push(row);
    }
    table
}

fn solve(ctx: &mut Ctx<'_>) -> anyhow::Result<(Solved, i32)> {
    let cfg = ctx.cfg;
    let model = cfg.build_model()?;
    let fp = cfg.fixed_point(&model, ctx.seed)?;
    ctx.seeds.push(("fixedpoint_crn".into(), fp.crn_seed()));
    ctx.seeds
        .push(("thin".into(), derive_seed(ctx.seed, streams::THIN, &[])));
    let started = Instant::now();
    let sol = solve_mfg(&model, &fp, &RayonExecutor)?;
    ctx.say(format!(
        "fixed point: {} after {} iterations, final residual {}",
        if sol.converged {
            "converged"
        } else if sol.diverged {
            "diverged"
        } else {
            "not converged"
        },
        sol.iterations(),
        sol.final_residual().map_or("n/a".into(), num)
    ));
    ctx.say(format!("solved in {:.2} s", started.elapsed().as_secs_f64()));

    let mut residuals = Table::new(&["iteration", "residual"]);
    for (k, r) in sol.residual_history.iter().enumerate() {
        residuals.push(vec![(k + 1).to_string(), num(*r)]);
    }
    ctx.dir.write_csv("residuals.csv", &residuals)?;

    let d = model.state_dim();
    ctx.dir.write_csv("flow.csv", &flow_atoms(&sol.flow))?;
    ctx.dir.write_csv("flow_moments.csv", &flow_moments(&sol.flow))?;
    ctx.dir.write_json_compact(
        "field.json",
        &FieldArtifact {
            format: FIELD_FORMAT,
            field: &sol.field,
        },
    )?;

    let pts = display_points(&model, &sol.field);
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|c| format!("x_{c}")));
    header.extend((0..d).map(|c| format!("u_{c}")));
    let mut field_table = Table::new(&header);
    let mut u = vec![0.0; d];
    for (j, t) in sol.field.grid.times().enumerate() {
        for x in &pts {
            sol.field.eval(j, x, &mut u);
            let mut row = vec![num(t)];
            row.extend(x.iter().map(|&v| num(v)));
            row.extend(u.iter().map(|&v| num(v)));
            field_table.push(row);
        }
    }
    ctx.dir.write_csv("field.csv", &field_table)?;

    let regularity = check_value_function(&sol.field, cfg.experiment.regularity_cap);
    let matching_seed = derive_seed(ctx.seed, streams::MATCHING, &[]);
    ctx.seeds.push(("matching".into(), matching_seed));
    let check = matching_residual(&model, &sol, fp.n_particles, matching_seed, fp.support, &RayonExecutor)?;
    let matching = check.residual;
    ctx.dir.write_csv("paths.csv", &path_summary(&check.paths))?;
    ctx.say(format!(
        "value function: Lipschitz {}, growth {}{}",
        num(regularity.lipschitz),
        num(regularity.growth),
        if regularity.exceeds_cap { " (exceeds cap)" } else { "" }
    ));
    ctx.say(format!("matching residual (fresh noise) {}", num(matching)));
    ctx.say(format!(
        "representative cost {} ± {}",
        num(sol.cost.mean),
        num(sol.cost.stderr)
    ));
    if sol.field.extrapolation_warnings > 0 {
        ctx.say(format!(
            "warning: {} quadrature points beyond the extrapolation margin",
            sol.field.extrapolation_warnings
        ));
    }

    let mut oracle_json = serde_json::Value::Null;
    let oracle = match cfg.lq() {
        Some(spec) => {
            let ric = solve_lq_riccati(&spec, *sol.flow.grid())?;
            let j_exact = lq_cost(&ric, &spec)?;
            let mean_error = sol
                .flow
                .mean_path()
                .iter()
                .zip(&ric.xbar)
                .flat_map(|(m, x)| m.iter().zip(x).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            let lattice_error = lattice_error_on_box(&sol.field, &ric);
            let eta_max = ric.eta.iter().map(|e| e.op_norm()).fold(0.0, f64::max);
            ctx.say(format!("oracle: sup_t |mean - xbar| = {}", num(mean_error)));
            ctx.say(format!(
                "oracle: max |u - (eta x + chi)| on |x| <= 2 = {}",
                num(lattice_error)
            ));
            ctx.say(format!(
                "oracle: J = {}, Monte Carlo J = {} ± {}",
                num(j_exact),
                num(sol.cost.mean),
                num(sol.cost.stderr)
            ));
            ctx.dir.write_csv("riccati.csv", &riccati_table(&ric))?;
            oracle_json = json!({
                "cost": j_exact,
                "mean_error": mean_error,
                "lattice_error": lattice_error,
                "eta_max": eta_max,
                "boundary_residual": ric.boundary_residual,
            });
            Some((spec, ric))
        }
        None => None,
    };

    ctx.dir.write_json(
        "solution.json",
        &json!({
            "converged": sol.converged,
            "diverged": sol.diverged,
            "iterations": sol.iterations(),
            "final_residual": sol.final_residual(),
            "residual_history": sol.residual_history,
            "cost": sol.cost,
            "matching_residual": matching,
            "regularity": regularity,
            "extrapolation_warnings": sol.field.extrapolation_warnings,
            "lattice": {
                "lower": sol.field.lattice.lower,
                "spacing": sol.field.lattice.spacing,
                "counts": sol.field.lattice.counts,
            },
            "oracle": oracle_json,
        }),
    )?;
    let code = if sol.converged { EXIT_OK } else { EXIT_NOT_CONVERGED };
    Ok((
        Solved {
            model,
            solution: sol,
            oracle,
        },
        code,
    ))
}

fn limit_cost(ctx: &mut Ctx<'_>, solved: &Solved) -> anyhow::Result<f64> {
    Ok(match &solved.oracle {
        Some((spec, ric)) => {
            let j = lq_cost(ric, spec)?;
            ctx.say(format!("limit cost J = {} (Riccati)", num(j)));
            j
        }
        None => {
            ctx.say(format!(
                "limit cost J = {} (Monte Carlo)",
                num(solved.solution.cost.mean)
            ));
            solved.solution.cost.mean
        }
    })
}

fn nash(ctx: &mut Ctx<'_>, solved: &Solved) -> anyhow::Result<()> {
    let section = &ctx.cfg.experiment.nash;
    if section.deviations.is_empty() {
        return Err(invalid("experiment.nash.deviations is empty"));
    }
    let limit = limit_cost(ctx, solved)?;
    let devs: Vec<Deviation> = section.deviations.iter().map(Deviation::from).collect();
    let sweep = ctx.cfg.sweep(ctx.seed);
    let ns = section.ns.clone();
    let sol = &solved.solution;
    let report = deviation_sweep(
        &solved.model,
        &sol.field,
        &sol.flow,
        limit,
        &ns,
        &devs,
        &sweep,
        &RayonExecutor,
    )?;

    let mut rows = Table::new(&[
        "N",
        "player_one_mean",
        "player_one_stderr",
        "pooled_mean",
        "pooled_stderr",
        "gap_mean",
        "gap_stderr",
        "epsilon",
        "player_one_gap",
    ]);
    let mut players = Table::new(&["N", "player", "mean", "stderr"]);
    for r in &report.rows {
        rows.push(vec![
            r.n.to_string(),
            num(r.player_one.mean),
            num(r.player_one.stderr),
            num(r.pooled.mean),
            num(r.pooled.stderr),
            num(r.gap.mean),
            num(r.gap.stderr),
            num(r.epsilon),
            num(r.player_one_gap),
        ]);
        for (i, e) in r.per_player.iter().enumerate() {
            players.push(vec![r.n.to_string(), (i + 1).to_string(), num(e.mean), num(e.stderr)]);
        }
        ctx.say(format!(
            "N = {}: J^(N,1) = {} ± {}, eps_N = {} ± {}",
            r.n,
            num(r.player_one.mean),
            num(r.player_one.stderr),
            num(r.epsilon),
            num(r.gap.stderr)
        ));
    }
    let mut dev_table = Table::new(&["deviation", "N", "improvement", "stderr", "allowance", "within"]);
    for r in &report.deviations {
        dev_table.push(vec![
            r.deviation.clone(),
            r.n.to_string(),
            num(r.improvement.mean),
            num(r.improvement.stderr),
            num(r.allowance),
            r.within.to_string(),
        ]);
        if !r.within {
            ctx.say(format!(
                "deviation {} at N = {} improves beyond the allowance",
                r.deviation, r.n
            ));
        }
    }
    ctx.dir.write_csv("nash.csv", &rows)?;
    ctx.dir.write_csv("nash_players.csv", &players)?;
    ctx.dir.write_csv("deviations.csv", &dev_table)?;
    ctx.dir.write_json(
        "nash.json",
        &json!({
            "report": report,
            "note": "A finite deviation sweep can falsify the approximate Nash property; it cannot certify it for all admissible deviations.",
        }),
    )?;
    ctx.say(format!(
        "all deviations within allowance: {}; eps_N decreasing: {}; gap slope {}",
        report.all_within,
        report.epsilon_decreasing,
        report.gap_slope.map_or("n/a".into(), num)
    ));
    Ok(())
}

fn chaos(ctx: &mut Ctx<'_>, solved: &Solved) -> anyhow::Result<()> {
    let section = ctx.cfg.experiment.chaos.clone();
    let limit = limit_cost(ctx, solved)?;
    let sol = &solved.solution;
    let table = chaos_experiment(
        &solved.model,
        &sol.field,
        &sol.flow,
        limit,
        &section.ns,
        section.replications,
        ctx.seed,
        &RayonExecutor,
    )?;
    let mut rows = Table::new(&[
        "N",
        "coupling_max",
        "coupling_max_stderr",
        "coupling_pooled",
        "coupling_pooled_stderr",
        "w2sq_sup",
        "w2sq_sup_stderr",
        "cost_gap",
        "cost_gap_stderr",
        "player_one_gap",
        "bound_C_Npow",
    ]);
    for r in &table.rows {
        rows.push(vec![
            r.n.to_string(),
            num(r.coupling_max.mean),
            num(r.coupling_max.stderr),
            num(r.coupling_pooled.mean),
            num(r.coupling_pooled.stderr),
            num(r.w2sq_sup.mean),
            num(r.w2sq_sup.stderr),
            num(r.cost_gap.mean),
            num(r.cost_gap.stderr),
            num(r.player_one_gap),
            num(r.bound_c_npow),
        ]);
        ctx.say(format!(
            "N = {}: coupling {} ± {}, sup_t E W2^2 {} ± {}",
            r.n,
            num(r.coupling_max.mean),
            num(r.coupling_max.stderr),
            num(r.w2sq_sup.mean),
            num(r.w2sq_sup.stderr)
        ));
    }
    ctx.dir.write_csv("chaos.csv", &rows)?;
    ctx.dir.write_json("chaos.json", &table)?;
    ctx.say(format!(
        "coupling bound C N^{} holds: {}",
        num(table.exponent),
        table.bound_holds
    ));
    Ok(())
}

fn rate(ctx: &mut Ctx<'_>) -> anyhow::Result<i32> {
    let section = ctx.cfg.experiment.rate.clone();
    let cfg = ctx.cfg.rate(ctx.seed);
    let table = empirical_rate_experiment(&section.law, &cfg, &RayonExecutor)?;
    let mut rows = Table::new(&["N", "mean_w2sq", "stderr", "bound_C_Npow"]);
    for r in &table.rows {
        rows.push(vec![
            r.n.to_string(),
            num(r.mean_w2sq),
            num(r.stderr),
            num(r.bound_c_npow),
        ]);
    }
    ctx.dir.write_csv("rate.csv", &rows)?;
    ctx.dir.write_json("rate.json", &table)?;
    ctx.say(format!(
        "law {:?}: slope {}, bound C N^{} holds: {}, reference bias {}",
        section.law,
        table.slope.map_or("n/a".into(), num),
        num(table.exponent),
        table.bound_holds,
        num(table.reference_bias)
    ));
    if !table.reference_bias_ok {
        ctx.say("warning: reference discretization bias exceeds 5% of the smallest estimate".into());
    }
    Ok(EXIT_OK)
}
