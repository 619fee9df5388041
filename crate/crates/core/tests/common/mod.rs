#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use tadp::automaton::PropSet;
use tadp::mdp::Distribution;
use tadp::{build_grid_world, decompose, parse_dfa, GridWorld, GridWorldSpec, LabeledMdp, TaskDfa};

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn world(name: &str) -> GridWorld {
    build_grid_world(&GridWorldSpec::load(data(name)).unwrap()).unwrap()
}

pub fn dfa(name: &str) -> TaskDfa {
    TaskDfa::load(data(name)).unwrap()
}

pub fn case_study() -> (GridWorld, TaskDfa) {
    (world("case_study_10x10.toml"), dfa("case_study.dfa"))
}

pub fn small_task() -> (GridWorld, TaskDfa) {
    (world("small_5x5.toml"), dfa("sequence.dfa"))
}

/// Random labeled MDP over props `a`, `b` with `n` states and `k` actions;
/// every action is available everywhere.
pub fn random_mdp(rng: &mut impl Rng, n: usize, k: usize) -> LabeledMdp {
    let rows = (0..n)
        .map(|_| {
            (0..k)
                .map(|_| {
                    let fanout = rng.gen_range(1..=n.min(3));
                    let mut w: Vec<(usize, f64)> =
                        (0..fanout).map(|_| (rng.gen_range(0..n), rng.gen_range(0.1..1.0))).collect();
                    let total: f64 = w.iter().map(|e| e.1).sum();
                    w.iter_mut().for_each(|e| e.1 /= total);
                    Some(Distribution::new(w))
                })
                .collect()
        })
        .collect();
    let props: PropSet = ["a", "b"].into_iter().collect();
    let labels = (0..n)
        .map(|_| {
            let mut l = PropSet::new();
            if rng.gen_bool(0.3) {
                l.insert("a");
            }
            if rng.gen_bool(0.3) {
                l.insert("b");
            }
            l
        })
        .collect();
    LabeledMdp::new(
        (0..n).map(|s| format!("s{s}")).collect(),
        (0..k).map(|a| format!("a{a}")).collect(),
        0,
        rows,
        props,
        labels,
    )
    .unwrap()
}

/// Random total automaton over `a`, `b` with `m` modes; the last is accepting
/// and absorbing.
pub fn random_dfa(rng: &mut impl Rng, m: usize) -> TaskDfa {
    let delta = (0..m)
        .map(|q| (0..4).map(|_| if q + 1 == m { q } else { rng.gen_range(0..m) }).collect())
        .collect();
    TaskDfa::from_table(
        vec!["a".into(), "b".into()],
        (0..m).map(|q| format!("q{q}")).collect(),
        delta,
        0,
        vec![m - 1],
    )
    .unwrap()
}

/// A random satisfiable problem whose product has at most `max_product` states.
pub fn random_problem(rng: &mut impl Rng, max_product: usize) -> (LabeledMdp, TaskDfa) {
    loop {
        let m = rng.gen_range(2..=5);
        let n = rng.gen_range(2..=(max_product / m).max(2));
        let k = rng.gen_range(1..=3);
        let mdp = random_mdp(rng, n, k);
        let d = random_dfa(rng, m);
        if decompose(&mdp, &d).is_ok() {
            return (mdp, d);
        }
    }
}

/// Deterministic corridor `s0 → s1 → s2` (plus a `stay` action) with the
/// goal at `s2`: a one-mode-plus-accepting task.
pub fn corridor() -> (LabeledMdp, TaskDfa) {
    let m = tadp::mdp::parse_mdp(
        "states: s0 s1 s2\nactions: go stay\ninitial: s0\nprops: goal\nlabel: s2 goal\n\
         s0 go: s1=1\ns0 stay: s0=1\ns1 go: s2=1\ns1 stay: s1=1\ns2 go: s2=1\ns2 stay: s2=1\n",
    )
    .unwrap();
    let d = parse_dfa("props: goal\nstates: q0 q1\ninitial: q0\naccepting: q1\nq0 --[goal]--> q1\nq0 --[!goal]--> q0\nq1 --[true]--> q1\n")
        .unwrap();
    (m, d)
}

/// One-action MDP with a state for every label combination of `d`'s props
/// and uniform transitions, so every automaton edge is realizable.
pub fn every_label_world(d: &TaskDfa) -> LabeledMdp {
    let k = d.props().len();
    let n = 1 << k;
    let mut text = format!("states: {}\nactions: go\ninitial: s0\nprops: {}\n", (0..n).map(|s| format!("s{s}")).collect::<Vec<_>>().join(" "), d.props().join(" "));
    for s in 0..n {
        let props: Vec<&str> = (0..k).filter(|b| s >> b & 1 == 1).map(|b| d.props()[b].as_str()).collect();
        if !props.is_empty() {
            text += &format!("label: s{s} {}\n", props.join(" "));
        }
        let row: Vec<String> = (0..n).map(|t| format!("s{t}={}", 1.0 / n as f64)).collect();
        text += &format!("s{s} go: {}\n", row.join(" "));
    }
    tadp::mdp::parse_mdp(&text).unwrap()
}
