//! Stochastic grid worlds with walls, sink obstacles and labeled regions.
//!
//! Cells are addressed `(x, y)` with `0 ≤ x < width`, `0 ≤ y < height`; the
//! MDP state of a cell is `y * width + x`. Actions are `U` (y+1), `D` (y−1),
//! `L` (x−1) and `R` (x+1).
//!
//! Noise model: let `T(s)` be the set of distinct cells reachable in one move
//! from `s` over all four directions, where a blocked direction (wall or grid
//! edge) yields `s` itself. For action `a` with intended cell `t_a`, every
//! cell of `N = T(s) \ {t_a}` receives `noise` and `t_a` receives
//! `1 − noise·|N|`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::automaton::PropSet;
use crate::mdp::{Distribution, LabeledMdp, MdpError, State};

pub const ACTIONS: [&str; 4] = ["U", "D", "L", "R"];
const MOVES: [(i64, i64); 4] = [(0, 1), (0, -1), (-1, 0), (1, 0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

impl From<[usize; 2]> for Cell {
    fn from(v: [usize; 2]) -> Self {
        Cell::new(v[0], v[1])
    }
}

impl From<Cell> for [usize; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.y]
    }
}

fn default_obstacle_prop() -> String {
    "O".to_string()
}

/// Configuration of a grid world, typically read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWorldSpec {
    pub width: usize,
    pub height: usize,
    pub noise: f64,
    pub initial_cell: Cell,
    #[serde(default)]
    pub regions: BTreeMap<String, Vec<Cell>>,
    #[serde(default)]
    pub obstacles: Vec<Cell>,
    /// Each wall blocks movement between two 4-adjacent cells.
    #[serde(default)]
    pub walls: Vec<[Cell; 2]>,
    #[serde(default = "default_obstacle_prop")]
    pub obstacle_prop: String,
}

impl GridWorldSpec {
    /// An empty `width × height` world with the initial cell at the origin.
    pub fn open(width: usize, height: usize, noise: f64) -> Self {
        Self {
            width,
            height,
            noise,
            initial_cell: Cell::new(0, 0),
            regions: BTreeMap::new(),
            obstacles: Vec::new(),
            walls: Vec::new(),
            obstacle_prop: default_obstacle_prop(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, MdpError> {
        toml::from_str(text).map_err(|e| MdpError::Parse {
            line: 0,
            msg: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MdpError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MdpError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    fn in_grid(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn validate(&self) -> Result<(), MdpError> {
        let bad = |m: String| Err(MdpError::InvalidGrid(m));
        if self.width == 0 || self.height == 0 {
            return bad("width and height must be positive".into());
        }
        // at most three wrong cells per move
        if !(0.0..=1.0 / 3.0).contains(&self.noise) {
            return bad(format!("noise {} must lie in [0, 1/3]", self.noise));
        }
        if !self.in_grid(self.initial_cell) {
            return bad("initial cell outside the grid".into());
        }
        if self.obstacles.contains(&self.initial_cell) {
            return bad("initial cell is an obstacle".into());
        }
        for c in &self.obstacles {
            if !self.in_grid(*c) {
                return bad(format!("obstacle {c:?} outside the grid"));
            }
        }
        for (name, cells) in &self.regions {
            if name == &self.obstacle_prop {
                return bad(format!("region {name:?} clashes with the obstacle proposition"));
            }
            for c in cells {
                if !self.in_grid(*c) {
                    return bad(format!("region {name} cell {c:?} outside the grid"));
                }
            }
        }
        for [a, b] in &self.walls {
            let adjacent = a.x.abs_diff(b.x) + a.y.abs_diff(b.y) == 1;
            if !self.in_grid(*a) || !self.in_grid(*b) || !adjacent {
                return bad(format!("wall {a:?}-{b:?} is not between adjacent cells"));
            }
        }
        Ok(())
    }
}

/// A built grid world: its spec plus the labeled MDP.
#[derive(Debug, Clone)]
pub struct GridWorld {
    spec: GridWorldSpec,
    mdp: LabeledMdp,
}

impl GridWorld {
    pub fn spec(&self) -> &GridWorldSpec {
        &self.spec
    }

    pub fn mdp(&self) -> &LabeledMdp {
        &self.mdp
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn state_of(&self, c: Cell) -> State {
        c.y * self.spec.width + c.x
    }

    pub fn cell_of(&self, s: State) -> Cell {
        Cell::new(s % self.spec.width, s / self.spec.width)
    }

    pub fn is_obstacle(&self, s: State) -> bool {
        self.spec.obstacles.contains(&self.cell_of(s))
    }
}

/// Builds the labeled MDP of a grid world.
pub fn build_grid_world(spec: &GridWorldSpec) -> Result<GridWorld, MdpError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let walls: BTreeSet<(Cell, Cell)> = spec
        .walls
        .iter()
        .flat_map(|[a, b]| [(*a, *b), (*b, *a)])
        .collect();
    let obstacles: BTreeSet<Cell> = spec.obstacles.iter().copied().collect();
    let index = |c: Cell| c.y * w + c.x;

    let mut names = Vec::with_capacity(w * h);
    let mut rows = Vec::with_capacity(w * h);
    let mut labels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let here = Cell::new(x, y);
            let s = index(here);
            names.push(format!("({x},{y})"));

            let mut label = PropSet::new();
            for (prop, cells) in &spec.regions {
                if cells.contains(&here) {
                    label.insert(prop.clone());
                }
            }
            if obstacles.contains(&here) {
                label.insert(spec.obstacle_prop.clone());
                rows.push(vec![Some(Distribution::point(s)); ACTIONS.len()]);
                labels.push(label);
                continue;
            }
            labels.push(label);

            let targets: Vec<State> = MOVES
                .iter()
                .map(|&(dx, dy)| {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        return s;
                    }
                    let next = Cell::new(nx as usize, ny as usize);
                    if walls.contains(&(here, next)) {
                        s
                    } else {
                        index(next)
                    }
                })
                .collect();
            let distinct: BTreeSet<State> = targets.iter().copied().collect();
            let row = targets
                .iter()
                .map(|&intended| {
                    let wrong: Vec<State> =
                        distinct.iter().copied().filter(|&t| t != intended).collect();
                    let stay = 1.0 - spec.noise * wrong.len() as f64;
                    Some(Distribution::new(
                        std::iter::once((intended, stay)).chain(wrong.into_iter().map(|t| (t, spec.noise))),
                    ))
                })
                .collect();
            rows.push(row);
        }
    }
    let mut props: PropSet = spec.regions.keys().cloned().collect();
    props.insert(spec.obstacle_prop.clone());
    let mdp = LabeledMdp::new(
        names,
        ACTIONS.iter().map(|a| a.to_string()).collect(),
        index(spec.initial_cell),
        rows,
        props,
        labels,
    )?;
    Ok(GridWorld {
        spec: spec.clone(),
        mdp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const U: usize = 0;
    const L: usize = 2;
    const R: usize = 3;

    #[test]
    fn one_by_one_is_fully_walled() {
        let g = build_grid_world(&GridWorldSpec::open(1, 1, 0.03)).unwrap();
        assert_eq!(g.mdp().n_states(), 1);
        for a in 0..4 {
            assert_eq!(g.mdp().transition(0, a).unwrap().entries(), &[(0, 1.0)]);
        }
    }

    #[test]
    fn two_by_one_bounce() {
        let g = build_grid_world(&GridWorldSpec::open(2, 1, 0.1)).unwrap();
        // from (0,0): R reaches (1,0) w.p. 0.9, the blocked directions bounce 0.1 back
        let d = g.mdp().transition(0, R).unwrap();
        assert!((d.prob(1) - 0.9).abs() < 1e-12);
        assert!((d.prob(0) - 0.1).abs() < 1e-12);
        // L is blocked: stays w.p. 0.9, slips right w.p. 0.1
        let d = g.mdp().transition(0, L).unwrap();
        assert!((d.prob(0) - 0.9).abs() < 1e-12);
        assert!((d.prob(1) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn interior_cell_noise() {
        let g = build_grid_world(&GridWorldSpec::open(10, 10, 0.03)).unwrap();
        let s = g.state_of(Cell::new(4, 4));
        let d = g.mdp().transition(s, U).unwrap();
        assert_eq!(d.entries().len(), 4);
        assert!((d.prob(g.state_of(Cell::new(4, 5))) - 0.91).abs() < 1e-12);
        for c in [Cell::new(4, 3), Cell::new(3, 4), Cell::new(5, 4)] {
            assert!((d.prob(g.state_of(c)) - 0.03).abs() < 1e-12);
        }
    }

    #[test]
    fn walls_block_and_fold_into_stay() {
        let mut spec = GridWorldSpec::open(3, 1, 0.1);
        spec.walls.push([Cell::new(0, 0), Cell::new(1, 0)]);
        let g = build_grid_world(&spec).unwrap();
        assert_eq!(g.mdp().transition(0, R).unwrap().entries(), &[(0, 1.0)]);
        let d = g.mdp().transition(1, L).unwrap();
        assert!((d.prob(1) - 0.9).abs() < 1e-12);
        assert!((d.prob(2) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn obstacles_absorb_and_are_labeled() {
        let mut spec = GridWorldSpec::open(3, 3, 0.03);
        spec.obstacles.push(Cell::new(1, 1));
        spec.regions.insert("goal".into(), vec![Cell::new(2, 2)]);
        let g = build_grid_world(&spec).unwrap();
        let s = g.state_of(Cell::new(1, 1));
        for a in 0..4 {
            assert_eq!(g.mdp().transition(s, a).unwrap().entries(), &[(s, 1.0)]);
        }
        assert!(g.mdp().label(s).contains("O"));
        assert!(g.mdp().label(8).contains("goal"));
        assert!(g.mdp().validate().is_empty());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = GridWorldSpec::open(3, 3, 0.5);
        assert!(build_grid_world(&spec).is_err());
        spec.noise = 0.03;
        spec.obstacles.push(Cell::new(0, 0));
        assert!(build_grid_world(&spec).is_err());
        spec.obstacles.clear();
        spec.walls.push([Cell::new(0, 0), Cell::new(2, 0)]);
        assert!(build_grid_world(&spec).is_err());
        spec.walls.clear();
        spec.regions.insert("a".into(), vec![Cell::new(5, 0)]);
        assert!(build_grid_world(&spec).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            width = 4
            height = 3
            noise = 0.03
            initial_cell = [0, 1]
            obstacles = [[2, 2]]
            walls = [[[0, 0], [1, 0]]]
            [regions]
            goal = [[3, 2]]
        "#;
        let spec = GridWorldSpec::from_toml(text).unwrap();
        assert_eq!(spec.initial_cell, Cell::new(0, 1));
        assert_eq!(spec.obstacle_prop, "O");
        let again = GridWorldSpec::from_toml(&toml::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, again);
    }
}
