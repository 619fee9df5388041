use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tadp::adp::{tadp_solve, AdpConfig, KernelBasis, TadpResult};
use tadp::bench::{bench, BenchConfig, Solver, StartSpec};
use tadp::exact::{
    extract_policy, topological_value_iteration, value_iteration, BoundaryConvention, SoftPolicy, SolveOptions,
    ValueTable,
};
use tadp::export::{
    convergence_csv, json_string, mode_heatmap_csv, theta_json, values_csv, write_file,
};
use tadp::grid::Cell;
use tadp::product::PState;
use tadp::sim::{rng_stream, sample_trajectory, simulate_policy, ProductSimulator};
use tadp::{build_product, decompose, GridWorld, GridWorldSpec, LabeledMdp, ProductMdp, TaskDfa};

#[derive(Parser)]
#[command(name = "tadp", version, about = "Plan in labeled MDPs under co-safe automaton tasks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print meta-modes, level sets and dropped modes as JSON.
    Decompose {
        #[command(flatten)]
        problem: Problem,
        /// Also write a Graphviz rendering of the meta-mode graph.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Gauss-Seidel value iteration over the whole product.
    SolveVi(ExactCmd),
    /// Value iteration level by level in topological order.
    SolveTvi(ExactCmd),
    /// Model-free level-ordered ADP with kernel value functions.
    SolveTadp {
        #[command(flatten)]
        problem: Problem,
        #[command(flatten)]
        tadp: TadpArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out a solver's policy and report success statistics.
    Simulate {
        #[command(flatten)]
        problem: Problem,
        #[arg(long, value_enum)]
        solver: SolverArg,
        #[command(flatten)]
        exact: ExactArgs,
        #[command(flatten)]
        tadp: TadpArgs,
        #[command(flatten)]
        rollout: RolloutArgs,
        /// Dump one sampled trajectory (stream 0) as CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Compare solvers: wall time, backups, epochs, success rate.
    Bench {
        #[command(flatten)]
        problem: Problem,
        /// Comma-separated subset of vi, tvi, tadp.
        #[arg(long, value_delimiter = ',', default_value = "vi,tvi")]
        solvers: Vec<SolverArg>,
        #[command(flatten)]
        exact: ExactArgs,
        #[command(flatten)]
        tadp: TadpArgs,
        #[command(flatten)]
        rollout: RolloutArgs,
        /// Repeats per solver; the minimum wall time is kept.
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Problem {
    /// Grid-world description (TOML).
    #[arg(long, conflicts_with = "mdp", required_unless_present = "mdp")]
    world: Option<PathBuf>,
    /// Labeled MDP in the sparse text format.
    #[arg(long)]
    mdp: Option<PathBuf>,
    /// Task automaton.
    #[arg(long)]
    dfa: PathBuf,
}

#[derive(Args)]
struct ExactCmd {
    #[command(flatten)]
    problem: Problem,
    #[command(flatten)]
    exact: ExactArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExactArgs {
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, default_value_t = 60.0)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = BoundaryArg::Entry)]
    boundary: BoundaryArg,
}

#[derive(Args)]
struct TadpArgs {
    /// Solver settings (TOML); defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// States to trace per epoch, as `x,y,mode` (grid) or `state,mode`.
    #[arg(long = "trace")]
    trace: Vec<String>,
}

#[derive(Args)]
struct RolloutArgs {
    /// Start state as `x,y,mode` (grid) or `state,mode`; defaults to the initial state.
    #[arg(long)]
    start: Option<String>,
    #[arg(long, default_value_t = 500)]
    runs: usize,
    #[arg(long, default_value_t = 500)]
    cap: usize,
    #[arg(long = "rollout-seed", default_value_t = 0)]
    rollout_seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Vi,
    Tvi,
    Tadp,
}

impl From<SolverArg> for Solver {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Vi => Solver::Vi,
            SolverArg::Tvi => Solver::Tvi,
            SolverArg::Tadp => Solver::Tadp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    /// Reward on entering an accepting mode.
    Entry,
    /// Accepting values pinned to alpha.
    Pinned,
}

impl From<BoundaryArg> for BoundaryConvention {
    fn from(b: BoundaryArg) -> Self {
        match b {
            BoundaryArg::Entry => BoundaryConvention::RewardOnEntry,
            BoundaryArg::Pinned => BoundaryConvention::PinnedAccepting,
        }
    }
}

struct Loaded {
    world: Option<GridWorld>,
    mdp: LabeledMdp,
    dfa: TaskDfa,
}

impl Loaded {
    fn mdp(&self) -> &LabeledMdp {
        self.world.as_ref().map(|w| w.mdp()).unwrap_or(&self.mdp)
    }

    /// MDP state from `x,y` (grid) or a state index/name.
    fn parse_state(&self, parts: &[&str]) -> Result<usize> {
        match (&self.world, parts) {
            (Some(w), [x, y]) => {
                let (x, y): (usize, usize) = (x.trim().parse()?, y.trim().parse()?);
                if x >= w.width() || y >= w.height() {
                    bail!("cell ({x},{y}) is outside the grid");
                }
                Ok(w.state_of(Cell::new(x, y)))
            }
            (None, [s]) => {
                let s = s.trim();
                s.parse()
                    .ok()
                    .or_else(|| self.mdp().state_names().iter().position(|n| n == s))
                    .ok_or_else(|| anyhow!("unknown state '{s}'"))
            }
            _ => bail!("expected {}", if self.world.is_some() { "x,y,mode" } else { "state,mode" }),
        }
    }

    /// `x,y,mode` or `state,mode`; a bare number `k` also matches mode `qk`.
    fn parse_start(&self, text: &str) -> Result<StartSpec> {
        let parts: Vec<&str> = text.split(',').collect();
        let (mode, rest) = parts.split_last().ok_or_else(|| anyhow!("empty state"))?;
        let mode = mode.trim();
        let names = self.dfa.mode_names();
        let mode = if names.iter().any(|n| n == mode) {
            mode.to_string()
        } else if names.iter().any(|n| *n == format!("q{mode}")) {
            format!("q{mode}")
        } else {
            bail!("unknown mode '{mode}'");
        };
        Ok(StartSpec { state: self.parse_state(rest)?, mode })
    }

    fn product_state(&self, p: &ProductMdp, text: &str) -> Result<PState> {
        let s = self.parse_start(text)?;
        let q = p.mode_names().iter().position(|n| *n == s.mode).expect("mode checked");
        p.index_of(s.state, q).ok_or_else(|| anyhow!("{text} is not a product state"))
    }

    /// `(x,y,mode)` on grids, the product's own name otherwise.
    fn state_label(&self, p: &ProductMdp, i: PState) -> String {
        match &self.world {
            Some(w) => {
                let c = w.cell_of(p.mdp_state_of(i));
                format!("({},{},{})", c.x, c.y, p.mode_name(p.mode_of(i)))
            }
            None => p.state_name(i).to_string(),
        }
    }

    fn basis(&self, cfg: &AdpConfig) -> KernelBasis {
        match &self.world {
            Some(w) => KernelBasis::grid(w, cfg.center_interval, cfg.sigma),
            None => {
                let n = self.mdp.n_states();
                let centers = (0..n).step_by(cfg.center_interval).collect();
                KernelBasis::new(&self.mdp, &vec![false; n], centers, cfg.sigma)
            }
        }
    }
}

fn load(problem: &Problem) -> Result<Loaded> {
    let dfa = TaskDfa::load(&problem.dfa).with_context(|| format!("loading {}", problem.dfa.display()))?;
    let (world, mdp) = match (&problem.world, &problem.mdp) {
        (Some(path), _) => {
            let spec = GridWorldSpec::load(path).with_context(|| format!("loading {}", path.display()))?;
            let w = tadp::build_grid_world(&spec)?;
            let m = w.mdp().clone();
            (Some(w), m)
        }
        (None, Some(path)) => (None, LabeledMdp::load(path).with_context(|| format!("loading {}", path.display()))?),
        (None, None) => bail!("one of --world or --mdp is required"),
    };
    Ok(Loaded { world, mdp, dfa })
}

fn solve_options(a: &ExactArgs) -> SolveOptions {
    SolveOptions {
        epsilon: a.epsilon,
        alpha: a.alpha,
        boundary: a.boundary.into(),
        ..SolveOptions::default()
    }
}

fn tadp_config(a: &TadpArgs, l: &Loaded) -> Result<AdpConfig> {
    let mut cfg = match &a.config {
        Some(path) => AdpConfig::load(path)?,
        None => AdpConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if !a.trace.is_empty() {
        // product indices depend on γ and τ only through pruning, which is off
        let p = build_product(l.mdp(), &l.dfa, cfg.gamma, cfg.tau)?;
        cfg.trace_states = a.trace.iter().map(|t| l.product_state(&p, t)).collect::<Result<_>>()?;
    }
    Ok(cfg)
}

fn write_values(out: &Path, l: &Loaded, p: &ProductMdp, values: &[f64], alpha: f64) -> Result<()> {
    write_file(out.join("values.csv"), &values_csv(p, values, alpha))?;
    if let Some(w) = &l.world {
        for q in 0..p.n_modes() {
            let name = p.mode_name(q);
            write_file(out.join(format!("heatmap_{name}.csv")), &mode_heatmap_csv(w, p, values, q))?;
        }
    }
    Ok(())
}

fn write_timing(out: &Path, wall_time_s: f64) -> Result<()> {
    write_file(out.join("timing.json"), &json_string(&json!({ "wall_time_s": wall_time_s })))?;
    Ok(())
}

fn run_exact(cmd: &ExactCmd, topological: bool) -> Result<()> {
    let l = load(&cmd.problem)?;
    let e = &cmd.exact;
    let p = build_product(l.mdp(), &l.dfa, e.gamma, e.tau)?;
    let opts = solve_options(e);
    let t = Instant::now();
    let vt: ValueTable = if topological {
        let d = decompose(l.mdp(), &l.dfa)?;
        topological_value_iteration(&p, &d, &opts)?
    } else {
        value_iteration(&p, &opts)?
    };
    let wall = t.elapsed().as_secs_f64();
    write_values(&cmd.out, &l, &p, &vt.values, e.alpha)?;
    let summary = json!({
        "solver": if topological { "TVI" } else { "VI" },
        "backup_count": vt.backup_count,
        "sweeps": vt.sweeps,
        "residual": vt.residual,
        "stage_backups": vt.stage_backups,
        "initial_value": vt.values[p.initial()],
    });
    write_file(cmd.out.join("summary.json"), &json_string(&summary))?;
    write_timing(&cmd.out, wall)?;
    let mut shown = summary;
    shown["wall_time_s"] = json!(wall);
    println!("{}", serde_json::to_string_pretty(&shown)?);
    Ok(())
}

fn run_tadp(l: &Loaded, p: &ProductMdp, cfg: &AdpConfig) -> Result<(TadpResult, f64)> {
    let d = decompose(l.mdp(), &l.dfa)?;
    let basis = l.basis(cfg);
    let sim = ProductSimulator::new(p);
    let t = Instant::now();
    let r = tadp_solve(&sim, &d, &basis, cfg)?;
    Ok((r, t.elapsed().as_secs_f64()))
}

fn solve_tadp(problem: &Problem, a: &TadpArgs, out: &Path) -> Result<()> {
    let l = load(problem)?;
    let cfg = tadp_config(a, &l)?;
    let p = build_product(l.mdp(), &l.dfa, cfg.gamma, cfg.tau)?;
    let (r, wall) = run_tadp(&l, &p, &cfg)?;
    write_values(out, &l, &p, &r.values, cfg.alpha)?;
    write_file(out.join("theta.json"), &json_string(&theta_json(&r.approx, p.mode_names())))?;
    write_file(out.join("convergence.csv"), &convergence_csv(&r.trace, |i| l.state_label(&p, i)))?;
    let summary = json!({
        "solver": "TADP",
        "epochs": r.epochs,
        "simulator_steps": r.simulator_steps,
        "levels": r.levels,
        "initial_value": r.values[p.initial()],
    });
    write_file(out.join("summary.json"), &json_string(&summary))?;
    write_timing(out, wall)?;
    let mut shown = summary;
    shown["wall_time_s"] = json!(wall);
    println!("{}", serde_json::to_string_pretty(&shown)?);
    Ok(())
}

fn solver_policy(
    solver: SolverArg,
    l: &Loaded,
    exact: &ExactArgs,
    tadp: &TadpArgs,
) -> Result<(ProductMdp, SoftPolicy)> {
    match solver {
        SolverArg::Vi | SolverArg::Tvi => {
            let p = build_product(l.mdp(), &l.dfa, exact.gamma, exact.tau)?;
            let opts = solve_options(exact);
            let vt = match solver {
                SolverArg::Vi => value_iteration(&p, &opts)?,
                _ => topological_value_iteration(&p, &decompose(l.mdp(), &l.dfa)?, &opts)?,
            };
            let pol = extract_policy(&p, &vt.values, &opts);
            Ok((p, pol))
        }
        SolverArg::Tadp => {
            let cfg = tadp_config(tadp, l)?;
            let p = build_product(l.mdp(), &l.dfa, cfg.gamma, cfg.tau)?;
            let (r, _) = run_tadp(l, &p, &cfg)?;
            Ok((p, r.policy))
        }
    }
}

fn simulate(
    problem: &Problem,
    solver: SolverArg,
    exact: &ExactArgs,
    tadp: &TadpArgs,
    ro: &RolloutArgs,
    trajectory: Option<&Path>,
) -> Result<()> {
    let l = load(problem)?;
    let (p, policy) = solver_policy(solver, &l, exact, tadp)?;
    let start = match &ro.start {
        Some(s) => l.product_state(&p, s)?,
        None => p.initial(),
    };
    let sim = ProductSimulator::new(&p);
    let stats = simulate_policy(&sim, &policy, start, ro.runs, ro.cap, ro.rollout_seed);
    if let Some(path) = trajectory {
        let mut rng = rng_stream(ro.rollout_seed, 0);
        let t = sample_trajectory(&sim, &policy, start, ro.cap, &mut rng);
        write_file(path, &t.to_csv())?;
    }
    let report = json!({
        "solver": Solver::from(solver).name(),
        "start": l.state_label(&p, start),
        "n_runs": stats.n_runs,
        "successes": stats.successes,
        "failures_sink": stats.failures_sink,
        "failures_timeout": stats.failures_timeout,
        "success_rate": stats.success_rate,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_bench(
    problem: &Problem,
    solvers: &[SolverArg],
    exact: &ExactArgs,
    tadp: &TadpArgs,
    ro: &RolloutArgs,
    repeats: usize,
    json_out: Option<&Path>,
    csv_out: Option<&Path>,
) -> Result<()> {
    let l = load(problem)?;
    let tadp_cfg = tadp_config(tadp, &l)?;
    let basis = solvers.iter().any(|s| matches!(s, SolverArg::Tadp)).then(|| l.basis(&tadp_cfg));
    let cfg = BenchConfig {
        gamma: exact.gamma,
        tau: exact.tau,
        epsilon: exact.epsilon,
        alpha: exact.alpha,
        boundary: exact.boundary.into(),
        repeats,
        n_runs: ro.runs,
        step_cap: ro.cap,
        rollout_seed: ro.rollout_seed,
        start: ro.start.as_deref().map(|s| l.parse_start(s)).transpose()?,
        tadp: tadp_cfg,
    };
    let solvers: Vec<Solver> = solvers.iter().map(|&s| s.into()).collect();
    let report = bench(l.mdp(), &l.dfa, basis.as_ref(), &solvers, &cfg).map_err(|e| anyhow!(e))?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(path) = json_out {
        write_file(path, &format!("{text}\n"))?;
    }
    if let Some(path) = csv_out {
        write_file(path, &report.to_csv())?;
    }
    println!("{text}");
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Decompose { problem, dot } => {
            let l = load(problem)?;
            let d = decompose(l.mdp(), &l.dfa)?;
            if let Some(path) = dot {
                write_file(path, &d.to_dot())?;
            }
            println!("{}", serde_json::to_string_pretty(&d.to_json())?);
        }
        Cmd::SolveVi(cmd) => run_exact(cmd, false)?,
        Cmd::SolveTvi(cmd) => run_exact(cmd, true)?,
        Cmd::SolveTadp { problem, tadp, out } => solve_tadp(problem, tadp, out)?,
        Cmd::Simulate { problem, solver, exact, tadp, rollout, trajectory } => {
            simulate(problem, *solver, exact, tadp, rollout, trajectory.as_deref())?
        }
        Cmd::Bench { problem, solvers, exact, tadp, rollout, repeats, json, csv } => {
            run_bench(problem, solvers, exact, tadp, rollout, *repeats, json.as_deref(), csv.as_deref())?
        }
    }
    Ok(())
}
