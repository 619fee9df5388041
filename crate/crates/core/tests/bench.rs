mod common;

use tadp::adp::KernelBasis;
use tadp::bench::{bench, BenchConfig, Solver, StartSpec};
use tadp::grid::Cell;

use common::*;

#[test]
fn topological_order_saves_backups_on_both_grid_sizes() {
    let task = dfa("case_study.dfa");
    for (name, cells) in [("case_study_10x10.toml", 100), ("case_study_20x20.toml", 400)] {
        let w = world(name);
        let r = bench(w.mdp(), &task, None, &[Solver::Vi, Solver::Tvi], &BenchConfig::default()).unwrap();
        assert_eq!(r.product_states, cells * task.n_modes());
        let (vi, tvi) = (r.row(Solver::Vi).unwrap(), r.row(Solver::Tvi).unwrap());
        assert!(vi.error.is_none() && tvi.error.is_none());
        assert!(tvi.backups.unwrap() < vi.backups.unwrap(), "{name}: TVI {:?} vs VI {:?}", tvi.backups, vi.backups);
        assert!(vi.wall_time_s > 0.0 && tvi.wall_time_s > 0.0);
        assert!(r.decomposition_time_s >= 0.0);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().starts_with("TVI,"));
    }
}

#[test]
fn learned_policy_is_close_to_the_exact_one() {
    let (w, task) = small_task();
    let cfg = BenchConfig { n_runs: 300, step_cap: 200, rollout_seed: 3, ..BenchConfig::default() };
    let basis = KernelBasis::grid(&w, cfg.tadp.center_interval, cfg.tadp.sigma);
    let r = bench(w.mdp(), &task, Some(&basis), &[Solver::Tvi, Solver::Tadp], &cfg).unwrap();
    let (tvi, tadp) = (r.row(Solver::Tvi).unwrap(), r.row(Solver::Tadp).unwrap());
    assert!(tadp.error.is_none(), "{:?}", tadp.error);
    assert!(tadp.epochs.unwrap() <= 2000);
    let (a, b) = (tvi.success_rate.unwrap(), tadp.success_rate.unwrap());
    assert!(a > 0.5, "TVI success {a}");
    assert!((a - b).abs() <= 0.1, "TVI {a} vs TADP {b}");
}

#[test]
fn start_state_is_resolved_by_mode_name() {
    let (w, task) = small_task();
    let s = w.state_of(Cell::new(4, 3));
    let ok = BenchConfig { n_runs: 50, start: Some(StartSpec { state: s, mode: "q1".into() }), ..BenchConfig::default() };
    let r = bench(w.mdp(), &task, None, &[Solver::Vi], &ok).unwrap();
    // one step from the goal with the first subgoal done
    assert!(r.row(Solver::Vi).unwrap().success_rate.unwrap() > 0.9);
    let bad = BenchConfig { start: Some(StartSpec { state: s, mode: "q9".into() }), ..BenchConfig::default() };
    assert!(bench(w.mdp(), &task, None, &[Solver::Vi], &bad).is_err());
}
