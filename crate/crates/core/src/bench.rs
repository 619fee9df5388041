//! Side-by-side runs of the exact and approximate solvers: wall time, backup
//! counts, epochs and rollout success rates.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::adp::{tadp_solve, AdpConfig, KernelBasis};
use crate::automaton::TaskDfa;
use crate::decomposition::{decompose, Decomposition};
use crate::exact::{
    extract_policy, topological_value_iteration, value_iteration, BoundaryConvention, SoftPolicy, SolveOptions,
};
use crate::mdp::{LabeledMdp, State};
use crate::product::{build_product, PState, ProductMdp};
use crate::sim::{simulate_policy, ProductSimulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Solver {
    #[serde(rename = "VI")]
    Vi,
    #[serde(rename = "TVI")]
    Tvi,
    #[serde(rename = "TADP")]
    Tadp,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Vi => "VI",
            Solver::Tvi => "TVI",
            Solver::Tadp => "TADP",
        }
    }
}

impl FromStr for Solver {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "vi" => Ok(Solver::Vi),
            "tvi" => Ok(Solver::Tvi),
            "tadp" => Ok(Solver::Tadp),
            other => Err(format!("unknown solver '{other}' (expected vi, tvi or tadp)")),
        }
    }
}

/// Where rollouts start: an MDP state and a mode name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StartSpec {
    pub state: State,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub gamma: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub alpha: f64,
    /// Boundary convention for the exact solvers.
    pub boundary: BoundaryConvention,
    /// Each solver runs this many times; the minimum wall time is reported.
    pub repeats: usize,
    /// Rollouts per solver; 0 skips them.
    pub n_runs: usize,
    pub step_cap: usize,
    pub rollout_seed: u64,
    /// Defaults to the product's initial state.
    pub start: Option<StartSpec>,
    pub tadp: AdpConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            tau: 2.0,
            epsilon: 1e-3,
            alpha: 60.0,
            boundary: BoundaryConvention::RewardOnEntry,
            repeats: 1,
            n_runs: 0,
            step_cap: 500,
            rollout_seed: 0,
            start: None,
            tadp: AdpConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            epsilon: self.epsilon,
            alpha: self.alpha,
            boundary: self.boundary,
            ..SolveOptions::default()
        }
    }
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub solver: Solver,
    pub wall_time_s: f64,
    pub backups: Option<u64>,
    pub epochs: Option<usize>,
    pub success_rate: Option<f64>,
    pub n_runs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub product_states: usize,
    /// Meta-mode decomposition time, not included in any solver's wall time.
    pub decomposition_time_s: f64,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, s: Solver) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.solver == s)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let mut out = String::from("solver,wall_time_s,backups,epochs,success_rate,n_runs,error\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.6},{},{},{},{},{}",
                r.solver.name(),
                r.wall_time_s,
                opt(r.backups.map(|b| b.to_string())),
                opt(r.epochs.map(|e| e.to_string())),
                opt(r.success_rate.map(|s| format!("{s:.4}"))),
                r.n_runs,
                opt(r.error.as_ref().map(|e| format!("\"{}\"", e.replace('"', "'")))),
            )
            .unwrap();
        }
        out
    }
}

/// Runs `f` `repeats` times (at least once), returning the last result and
/// the minimum elapsed time.
fn timed<T>(repeats: usize, mut f: impl FnMut() -> T) -> (T, f64) {
    let mut best = f64::INFINITY;
    let mut out = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let r = f();
        best = best.min(t.elapsed().as_secs_f64());
        out = Some(r);
    }
    (out.expect("at least one run"), best)
}

fn start_state(p: &ProductMdp, start: &Option<StartSpec>) -> Result<PState, String> {
    let Some(s) = start else { return Ok(p.initial()) };
    let q = p
        .mode_names()
        .iter()
        .position(|n| *n == s.mode)
        .ok_or_else(|| format!("unknown mode '{}'", s.mode))?;
    p.index_of(s.state, q)
        .ok_or_else(|| format!("no product state for MDP state {} in mode {}", s.state, s.mode))
}

/// Runs each solver in `solvers` on the product of `m` and `dfa`. A failing
/// solver gets an error row; the others still run. `basis` is needed only
/// for TADP.
pub fn bench(
    m: &LabeledMdp,
    dfa: &TaskDfa,
    basis: Option<&KernelBasis>,
    solvers: &[Solver],
    cfg: &BenchConfig,
) -> Result<BenchReport, String> {
    let p = build_product(m, dfa, cfg.gamma, cfg.tau).map_err(|e| e.to_string())?;
    let (d, decomposition_time_s) = timed(cfg.repeats, || decompose(m, dfa));
    let d = d.map_err(|e| e.to_string())?;
    let start = start_state(&p, &cfg.start)?;
    let sim = ProductSimulator::new(&p);
    let opts = cfg.solve_options();

    let mut rows = Vec::with_capacity(solvers.len());
    for &solver in solvers {
        let run = run_solver(solver, &p, &d, &sim, basis, cfg, &opts);
        let row = match run {
            Ok((policy, wall_time_s, backups, epochs)) => {
                let success_rate = (cfg.n_runs > 0).then(|| {
                    simulate_policy(&sim, &policy, start, cfg.n_runs, cfg.step_cap, cfg.rollout_seed).success_rate
                });
                BenchRow { solver, wall_time_s, backups, epochs, success_rate, n_runs: cfg.n_runs, error: None }
            }
            Err(e) => BenchRow {
                solver,
                wall_time_s: 0.0,
                backups: None,
                epochs: None,
                success_rate: None,
                n_runs: 0,
                error: Some(e),
            },
        };
        rows.push(row);
    }
    Ok(BenchReport { product_states: p.n_states(), decomposition_time_s, rows })
}

type SolverRun = (SoftPolicy, f64, Option<u64>, Option<usize>);

fn run_solver(
    solver: Solver,
    p: &ProductMdp,
    d: &Decomposition,
    sim: &ProductSimulator,
    basis: Option<&KernelBasis>,
    cfg: &BenchConfig,
    opts: &SolveOptions,
) -> Result<SolverRun, String> {
    match solver {
        Solver::Vi | Solver::Tvi => {
            let (vt, t) = timed(cfg.repeats, || match solver {
                Solver::Vi => value_iteration(p, opts),
                _ => topological_value_iteration(p, d, opts),
            });
            let vt = vt.map_err(|e| e.to_string())?;
            Ok((extract_policy(p, &vt.values, opts), t, Some(vt.backup_count), None))
        }
        Solver::Tadp => {
            let basis = basis.ok_or("TADP needs a kernel basis")?;
            let (r, t) = timed(cfg.repeats, || tadp_solve(sim, d, basis, &cfg.tadp));
            let r = r.map_err(|e| e.to_string())?;
            Ok((r.policy, t, None, Some(r.epochs)))
        }
    }
}
