mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tadp::adp::*;
use tadp::exact::*;
use tadp::grid::Cell;
use tadp::product::ProductMdp;
use tadp::sim::{ProductSimulator, Simulator};
use tadp::{build_grid_world, build_product, decompose, parse_dfa, GridWorld, GridWorldSpec, TaskDfa};

use common::*;

/// Deterministic 4×4 world with `a` at (0,3) and `goal` at (3,3).
fn still_world() -> GridWorld {
    let mut spec = GridWorldSpec::open(4, 4, 0.0);
    spec.regions.insert("a".into(), vec![Cell::new(0, 3)]);
    spec.regions.insert("goal".into(), vec![Cell::new(3, 3)]);
    build_grid_world(&spec).unwrap()
}

fn zero_approx(sim: &dyn Simulator, basis: KernelBasis, accepting: &[bool]) -> ValueApprox {
    let modes = (0..sim.n_modes())
        .map(|q| if accepting[q] { ModeValue::Constant(60.0) } else { ModeValue::Learned(vec![0.0; basis.n_features()]) })
        .collect();
    ValueApprox::new(basis, modes, 60.0, BoundaryConvention::PinnedAccepting)
}

fn accepting_modes(dfa: &TaskDfa) -> Vec<bool> {
    (0..dfa.n_modes()).map(|q| dfa.is_accepting(q)).collect()
}

/// `τ ln Σ exp(Q/τ) − V` evaluated straight from the transition rows.
fn direct_residual(p: &ProductMdp, v: &[f64], x: usize) -> f64 {
    let tau = p.tau();
    let q: Vec<f64> = p
        .available_actions(x)
        .map(|a| p.gamma() * p.transition(x, a).unwrap().iter().map(|&(y, pr)| pr * v[y]).sum::<f64>())
        .collect();
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + tau * q.iter().map(|qa| ((qa - m) / tau).exp()).sum::<f64>().ln() - v[x]
}

fn exact_pinned(p: &ProductMdp) -> (ValueTable, Vec<usize>) {
    let opts = SolveOptions { epsilon: 1e-10, alpha: 60.0, boundary: BoundaryConvention::PinnedAccepting, ..SolveOptions::default() };
    let v = value_iteration(p, &opts).unwrap();
    let eval = (0..p.n_states()).filter(|&i| !opts.is_pinned(p, i)).collect();
    (v, eval)
}

fn range_error(exact: &[f64], approx: &[f64], eval: &[usize]) -> f64 {
    let lo = eval.iter().map(|&i| exact[i]).fold(f64::INFINITY, f64::min);
    let hi = eval.iter().map(|&i| exact[i]).fold(f64::NEG_INFINITY, f64::max);
    let worst = eval.iter().map(|&i| (exact[i] - approx[i]).abs()).fold(0.0, f64::max);
    worst / (hi - lo).max(1e-12)
}

#[test]
fn zero_weights_give_two_ln_four() {
    let (w, task) = small_task();
    let p = build_product(w.mdp(), &task, 0.9, 2.0).unwrap();
    let sim = ProductSimulator::new(&p);
    let va = zero_approx(&sim, KernelBasis::grid(&w, 1, 1.0), &accepting_modes(&task));
    let mut sampler = SuccessorSampler::fresh(20);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = p.index_of(w.state_of(Cell::new(1, 1)), 0).unwrap();
    assert_eq!(p.available_actions(x).count(), 4);
    let g = constraint_residual(&sim, &va, x, &mut sampler, &mut rng);
    assert!((g - 2.0 * 4f64.ln()).abs() < 1e-12, "g = {g}");
}

#[test]
fn pinned_states_have_no_residual() {
    let (w, task) = small_task();
    let p = build_product(w.mdp(), &task, 0.9, 2.0).unwrap();
    let sim = ProductSimulator::new(&p);
    let va = zero_approx(&sim, KernelBasis::grid(&w, 1, 1.0), &accepting_modes(&task));
    let mut sampler = SuccessorSampler::fresh(5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for x in 0..p.n_states() {
        if p.is_accepting(x) || p.is_sink(x) {
            assert_eq!(constraint_residual(&sim, &va, x, &mut sampler, &mut rng), 0.0);
        }
    }
}

#[test]
fn residual_matches_direct_evaluation_on_deterministic_world() {
    let w = still_world();
    let task = dfa("sequence.dfa");
    let p = build_product(w.mdp(), &task, 0.9, 2.0).unwrap();
    let sim = ProductSimulator::new(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let mut va = zero_approx(&sim, KernelBasis::grid(&w, 1, 1.0), &accepting_modes(&task));
        for q in 0..task.n_modes() {
            if let Some(t) = va.theta_mut(q) {
                t.iter_mut().for_each(|x| *x = rng.gen_range(-20.0..20.0));
            }
        }
        let v = va.values(&sim);
        let mut sampler = SuccessorSampler::fresh(3);
        for x in 0..p.n_states() {
            if p.is_accepting(x) || p.is_sink(x) {
                continue;
            }
            let g = constraint_residual(&sim, &va, x, &mut sampler, &mut rng);
            let want = direct_residual(&p, &v, x);
            assert!((g - want).abs() < 1e-9 * want.abs().max(1.0), "state {x}: {g} vs {want}");
        }
    }
}

#[test]
fn path_objective_examples() {
    let w = still_world();
    let task = dfa("sequence.dfa");
    let p = build_product(w.mdp(), &task, 0.9, 2.0).unwrap();
    let sim = ProductSimulator::new(&p);
    let mut va = zero_approx(&sim, KernelBasis::grid(&w, 1, 1.0), &accepting_modes(&task));
    let layout = LevelLayout::new(vec![0, 1], task.n_modes(), va.basis().n_features());
    let ls = LagrangianState::new(1.0, 2.0, 1.5, 100.0);
    assert_eq!(path_objective(&sim, &va, &layout, &ls, &PathSample::default()), 0.0);

    let mut sampler = SuccessorSampler::cached(4, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let step = |x: usize, sampler: &mut SuccessorSampler, rng: &mut ChaCha8Rng| {
        let actions = sim.available_actions(x).to_vec();
        PathStep { state: x, successors: sampler.successors(&sim, x, rng), actions, taken: 0 }
    };

    // a large constant value makes every residual negative, so f(x) = V(x)
    for t in [0, 1] {
        va.theta_mut(t).unwrap().iter_mut().for_each(|x| *x = 0.0);
    }
    let x = p.index_of(w.state_of(Cell::new(1, 1)), 0).unwrap();
    let s = w.state_of(Cell::new(1, 1));
    let idx = va.basis().centers().iter().position(|&c| c == s).unwrap();
    va.theta_mut(0).unwrap()[idx] = 500.0;
    let h = PathSample { steps: vec![step(x, &mut sampler, &mut rng)] };
    let v = va.value(&sim, x);
    assert!(direct_residual(&p, &va.values(&sim), x) <= 0.0);
    assert!((path_objective(&sim, &va, &layout, &ls, &h) - v).abs() < 1e-9);

    // three states with hand-set weights, checked term by term
    for q in [0, 1] {
        va.theta_mut(q).unwrap().iter_mut().enumerate().for_each(|(i, t)| *t = (i as f64 * 0.7 + q as f64).sin() * 10.0);
    }
    let cells = [Cell::new(0, 0), Cell::new(1, 0), Cell::new(2, 1)];
    let xs: Vec<usize> = cells.iter().zip([0, 0, 1]).map(|(&c, q)| p.index_of(w.state_of(c), q).unwrap()).collect();
    let h = PathSample { steps: xs.iter().map(|&x| step(x, &mut sampler, &mut rng)).collect() };
    let v = va.values(&sim);
    let want: f64 = xs
        .iter()
        .map(|&x| {
            let b = direct_residual(&p, &v, x).max(0.0);
            v[x] + 1.0 * b + 0.5 * 2.0 * b * b
        })
        .sum();
    let got = path_objective(&sim, &va, &layout, &ls, &h);
    assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{got} vs {want}");
}

#[test]
fn accepting_only_task_needs_no_optimisation() {
    let (w, _) = small_task();
    let task = parse_dfa("props: a\nstates: done\ninitial: done\naccepting: done\ndone --[true]--> done\n").unwrap();
    let p = build_product(w.mdp(), &task, 0.9, 2.0).unwrap();
    let d = decompose(w.mdp(), &task).unwrap();
    let sim = ProductSimulator::new(&p);
    let cfg = AdpConfig::default();
    let r = tadp_solve(&sim, &d, &KernelBasis::grid(&w, 1, 1.0), &cfg).unwrap();
    assert_eq!(r.epochs, 0);
    assert!(r.values.iter().all(|&v| v == cfg.alpha));
}

fn corridor_problem() -> (ProductMdp, tadp::Decomposition, KernelBasis) {
    let (m, task) = corridor();
    let p = build_product(&m, &task, 0.9, 2.0).unwrap();
    let d = decompose(&m, &task).unwrap();
    let basis = KernelBasis::new(&m, &[false; 3], vec![0, 1, 2], 1.0);
    (p, d, basis)
}

#[test]
fn corridor_values_track_exact_solution() {
    let (p, d, basis) = corridor_problem();
    let sim = ProductSimulator::new(&p);
    let (exact, eval) = exact_pinned(&p);
    for seed in 0..3 {
        let cfg = AdpConfig { seed, ..AdpConfig::default() };
        let r = tadp_solve(&sim, &d, &basis, &cfg).unwrap();
        let err = range_error(&exact.values, &r.values, &eval);
        assert!(err <= 0.1, "seed {seed}: error {:.1}% of range", 100.0 * err);
    }
}

#[test]
fn small_grid_values_track_exact_solution() {
    let (w, task) = small_task();
    let p = build_product(w.mdp(), &task, 0.9, 2.0).unwrap();
    let d = decompose(w.mdp(), &task).unwrap();
    let sim = ProductSimulator::new(&p);
    let (exact, eval) = exact_pinned(&p);
    let r = tadp_solve(&sim, &d, &KernelBasis::grid(&w, 1, 1.0), &AdpConfig { seed: 5, ..AdpConfig::default() }).unwrap();
    let err = range_error(&exact.values, &r.values, &eval);
    assert!(err <= 0.1, "error {:.1}% of range", 100.0 * err);
}

#[test]
fn feasible_solutions_sit_above_the_exact_values() {
    // on deterministic products the sampled residual is the exact one
    let mut checked = 0;
    let toys: Vec<(ProductMdp, tadp::Decomposition, KernelBasis)> = {
        let w = still_world();
        let task = dfa("sequence.dfa");
        let p = build_product(w.mdp(), &task, 0.9, 2.0).unwrap();
        let d = decompose(w.mdp(), &task).unwrap();
        vec![corridor_problem(), (p, d, KernelBasis::grid(&w, 1, 1.0))]
    };
    for (p, d, basis) in &toys {
        let sim = ProductSimulator::new(p);
        let (exact, _) = exact_pinned(p);
        for seed in 0..3 {
            let cfg = AdpConfig { seed, ..AdpConfig::default() };
            let r = tadp_solve(&sim, d, basis, &cfg).unwrap();
            let states: Vec<usize> = (0..d.n_levels()).flat_map(|l| level_constraint_states(&sim, d, l)).collect();
            let worst = states.iter().map(|&x| direct_residual(p, &r.values, x).max(0.0)).fold(0.0, f64::max);
            if worst > 1e-3 {
                continue;
            }
            checked += 1;
            for &x in &states {
                assert!(r.values[x] >= exact.values[x] - 1e-2 * cfg.alpha, "state {x}: {} < {}", r.values[x], exact.values[x]);
            }
        }
    }
    assert!(checked > 0, "no run reached a feasible point");
}

#[test]
fn lower_levels_never_touch_later_parameters() {
    let (w, task) = small_task();
    let p = build_product(w.mdp(), &task, 0.9, 2.0).unwrap();
    let d = decompose(w.mdp(), &task).unwrap();
    let sim = ProductSimulator::new(&p);
    let learned: Vec<usize> = (0..task.n_modes()).filter(|&q| !task.is_accepting(q)).collect();
    let traced: Vec<usize> = learned.iter().map(|&q| p.index_of(w.state_of(Cell::new(1, 3)), q).unwrap()).collect();
    let cfg = AdpConfig { trace_states: traced.clone(), ..AdpConfig::default() };
    let r = tadp_solve(&sim, &d, &KernelBasis::grid(&w, 1, 1.0), &cfg).unwrap();
    assert!(r.trace.level.windows(2).all(|w| w[0] <= w[1]), "levels are solved in order");
    for (k, &x) in traced.iter().enumerate() {
        let own = d.level_of_mode(p.mode_of(x)).unwrap();
        for (e, &l) in r.trace.level.iter().enumerate() {
            if l < own {
                assert_eq!(r.trace.values[e][k], 0.0, "mode {} moved while solving level {l}", p.mode_of(x));
            }
        }
    }
}

#[test]
fn policy_rows_are_distributions() {
    let (w, task) = small_task();
    let p = build_product(w.mdp(), &task, 0.9, 2.0).unwrap();
    let d = decompose(w.mdp(), &task).unwrap();
    let sim = ProductSimulator::new(&p);
    let r = tadp_solve(&sim, &d, &KernelBasis::grid(&w, 1, 1.0), &AdpConfig::default()).unwrap();
    assert_eq!(r.policy.n_states(), p.n_states());
    for x in 0..p.n_states() {
        let row = r.policy.action_probs(x);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(row.iter().all(|&pr| (0.0..=1.0).contains(&pr)));
    }
}

#[test]
fn seeded_runs_repeat_exactly() {
    let (p, d, basis) = corridor_problem();
    let sim = ProductSimulator::new(&p);
    let run = |seed| tadp_solve(&sim, &d, &basis, &AdpConfig { seed, ..AdpConfig::default() }).unwrap();
    let (a, b, c) = (run(4), run(4), run(5));
    assert_eq!(a.values, b.values);
    assert_eq!(a.levels, b.levels);
    assert_ne!(a.values, c.values);
}

#[test]
fn config_validation() {
    let ok = AdpConfig::default();
    assert!(ok.validate().is_ok());
    let bad = [
        AdpConfig { momentum: 1.0, ..ok.clone() },
        AdpConfig { momentum: -0.1, ..ok.clone() },
        AdpConfig { grad_clip: 0.0, ..ok.clone() },
        AdpConfig { gamma: 1.0, ..ok.clone() },
        AdpConfig { tau: 0.0, ..ok.clone() },
        AdpConfig { b: 0.5, ..ok.clone() },
        AdpConfig { nu0: 30.0, ..ok.clone() },
        AdpConfig { n_trajectories: 0, ..ok.clone() },
        AdpConfig { max_inner: 0, ..ok.clone() },
        AdpConfig { sigma: 0.0, ..ok.clone() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    assert!(AdpConfig::from_toml("etta = 1.0").is_err());
    assert_eq!(AdpConfig::from_toml("seed = 3").unwrap(), AdpConfig { seed: 3, ..ok.clone() });
    assert_eq!(AdpConfig::load(data("tadp.toml")).unwrap(), ok);
}

#[test]
fn discount_mismatch_is_rejected() {
    let (p, d, basis) = corridor_problem();
    let sim = ProductSimulator::new(&p);
    let cfg = AdpConfig { gamma: 0.8, ..AdpConfig::default() };
    assert!(tadp_solve(&sim, &d, &basis, &cfg).is_err());
}

#[test]
fn solver_never_reads_the_model() {
    let (p, d, basis) = corridor_problem();
    let sim = ProductSimulator::new(&p);
    p.reset_model_reads();
    tadp_solve(&sim, &d, &basis, &AdpConfig::default()).unwrap();
    assert_eq!(p.model_reads(), 0);
}
