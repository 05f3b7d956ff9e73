//! Deterministic tabular gridworld with value iteration and policy helpers.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The canonical 13x13 four-rooms map.
pub const FOUR_ROOMS_MAP: &str = include_str!("../../../maps/four_rooms.txt");

pub const FOUR_ROOMS_STATES: usize = 104;
pub const FOUR_ROOMS_HALLWAYS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Wall,
    Floor,
    Hallway,
}

/// Primitive actions. The discriminant is the wire encoding and the
/// tie-breaking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a as u8
    }
}

impl TryFrom<u8> for Action {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        Action::from_index(v as usize).ok_or_else(|| format!("invalid action code {v}"))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    state_of_cell: Vec<Option<usize>>,
    coords: Vec<(usize, usize)>,
    next: Vec<[usize; 4]>,
}

impl GridWorld {
    /// Parses an ASCII map: `#` wall, `.` floor, `=` hallway. The border must
    /// be all walls. States are numbered row-major over non-wall cells.
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        if rows.is_empty() {
            return Err(Error::MapParse {
                line: 0,
                msg: "empty map".into(),
            });
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        let mut cells = Vec::with_capacity(width * height);
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::MapParse {
                    line: r + 1,
                    msg: format!("expected {width} columns, found {}", row.chars().count()),
                });
            }
            for (c, ch) in row.chars().enumerate() {
                let cell = match ch {
                    '#' => Cell::Wall,
                    '.' => Cell::Floor,
                    '=' => Cell::Hallway,
                    other => {
                        return Err(Error::MapParse {
                            line: r + 1,
                            msg: format!("unknown character {other:?} at column {}", c + 1),
                        })
                    }
                };
                let border = r == 0 || c == 0 || r + 1 == height || c + 1 == width;
                if border && cell != Cell::Wall {
                    return Err(Error::MapParse {
                        line: r + 1,
                        msg: format!("border cell at column {} is not a wall", c + 1),
                    });
                }
                cells.push(cell);
            }
        }

        let mut state_of_cell = vec![None; cells.len()];
        let mut coords = Vec::new();
        for (i, cell) in cells.iter().enumerate() {
            if *cell != Cell::Wall {
                state_of_cell[i] = Some(coords.len());
                coords.push((i / width, i % width));
            }
        }
        if coords.is_empty() {
            return Err(Error::MapParse {
                line: 0,
                msg: "map has no floor cells".into(),
            });
        }

        let next = coords
            .iter()
            .enumerate()
            .map(|(s, &(r, c))| {
                let mut row = [s; 4];
                for a in Action::ALL {
                    let (dr, dc) = a.delta();
                    // the border is solid so neighbors of non-wall cells are in range
                    let nr = (r as isize + dr) as usize;
                    let nc = (c as isize + dc) as usize;
                    if let Some(t) = state_of_cell[nr * width + nc] {
                        row[a.index()] = t;
                    }
                }
                row
            })
            .collect();

        Ok(Self {
            width,
            height,
            cells,
            state_of_cell,
            coords,
            next,
        })
    }

    /// Parses a map and checks the four-rooms structure: 104 states, 4
    /// hallways, removing the hallways leaves four rooms, and each hallway
    /// joins exactly two of them.
    pub fn parse_four_rooms(text: &str) -> Result<Self> {
        let gw = Self::parse(text)?;
        gw.check_four_rooms()?;
        Ok(gw)
    }

    /// The shipped four-rooms map.
    pub fn four_rooms() -> Self {
        Self::parse_four_rooms(FOUR_ROOMS_MAP).expect("shipped map is valid")
    }

    pub fn check_four_rooms(&self) -> Result<()> {
        if self.n_states() != FOUR_ROOMS_STATES {
            return Err(Error::NotFourRooms(format!(
                "expected {FOUR_ROOMS_STATES} non-wall cells, found {}",
                self.n_states()
            )));
        }
        let hallways = self.hallways();
        if hallways.len() != FOUR_ROOMS_HALLWAYS {
            return Err(Error::NotFourRooms(format!(
                "expected {FOUR_ROOMS_HALLWAYS} hallways, found {}",
                hallways.len()
            )));
        }
        let rooms = self.rooms();
        if rooms.len() != 4 {
            return Err(Error::NotFourRooms(format!("hallways separate {} rooms, expected 4", rooms.len())));
        }
        let room_of = |s: usize| rooms.iter().position(|r| r.binary_search(&s).is_ok());
        for &h in &hallways {
            let mut joined: Vec<usize> = self.neighbors(h).into_iter().filter_map(room_of).collect();
            joined.sort_unstable();
            joined.dedup();
            if joined.len() != 2 {
                return Err(Error::NotFourRooms(format!(
                    "hallway {:?} joins {} rooms, expected 2",
                    self.coords(h),
                    joined.len()
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_states(&self) -> usize {
        self.coords.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    /// `(row, col)` of a state.
    pub fn coords(&self, s: usize) -> (usize, usize) {
        self.coords[s]
    }

    pub fn state_at(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.height || col >= self.width {
            return None;
        }
        self.state_of_cell[row * self.width + col]
    }

    pub fn is_hallway(&self, s: usize) -> bool {
        let (r, c) = self.coords[s];
        self.cell(r, c) == Cell::Hallway
    }

    pub fn hallways(&self) -> Vec<usize> {
        (0..self.n_states()).filter(|&s| self.is_hallway(s)).collect()
    }

    /// Deterministic successor; moving into a wall leaves the state unchanged.
    #[inline]
    pub fn step(&self, s: usize, a: Action) -> usize {
        self.next[s][a.index()]
    }

    #[inline]
    pub fn successors(&self, s: usize) -> &[usize; 4] {
        &self.next[s]
    }

    /// Distinct non-wall 4-neighbors of `s`.
    pub fn neighbors(&self, s: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.next[s].iter().copied().filter(|&t| t != s).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn manhattan(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.coords[a];
        let (rb, cb) = self.coords[b];
        ra.abs_diff(rb) + ca.abs_diff(cb)
    }

    /// Shortest-path step counts to `target` (`usize::MAX` if unreachable).
    pub fn bfs_distances(&self, target: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n_states()];
        let mut queue = VecDeque::from([target]);
        dist[target] = 0;
        // moves are symmetric, so distances from the target equal distances to it
        while let Some(s) = queue.pop_front() {
            for &t in &self.next[s] {
                if dist[t] == usize::MAX {
                    dist[t] = dist[s] + 1;
                    queue.push_back(t);
                }
            }
        }
        dist
    }

    /// Connected components of the floor graph after deleting `removed`.
    pub fn components_without(&self, removed: &[usize]) -> Vec<Vec<usize>> {
        let n = self.n_states();
        let mut label = vec![usize::MAX; n];
        for &r in removed {
            label[r] = usize::MAX - 1;
        }
        let mut comps = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut comp = vec![start];
            label[start] = id;
            let mut i = 0;
            while i < comp.len() {
                let s = comp[i];
                i += 1;
                for &t in &self.next[s] {
                    if label[t] == usize::MAX {
                        label[t] = id;
                        comp.push(t);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    /// Rooms: components of the floor once every hallway is removed.
    pub fn rooms(&self) -> Vec<Vec<usize>> {
        self.components_without(&self.hallways())
    }

    /// A hallway cell plus its non-wall neighbors.
    pub fn hallway_zone(&self, hallway: usize) -> Vec<usize> {
        let mut zone = self.neighbors(hallway);
        zone.push(hallway);
        zone.sort_unstable();
        zone
    }

    /// Union of every hallway zone.
    pub fn hallway_zone_states(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self
            .hallways()
            .into_iter()
            .flat_map(|h| self.hallway_zone(h))
            .collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

/// Reward keyed on the successor state: `R(s, a, s') = per_state[s']`.
/// Entering a terminal state ends the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardFunction {
    per_state: Vec<f64>,
    terminal: Option<usize>,
}

impl RewardFunction {
    pub const GOAL_REWARD: f64 = 10.0;
    pub const STEP_REWARD: f64 = -1.0;

    /// +10 on entering `goal`, -1 for every other transition; `goal` absorbs.
    pub fn goal(gw: &GridWorld, goal: usize) -> Self {
        let mut per_state = vec![Self::STEP_REWARD; gw.n_states()];
        per_state[goal] = Self::GOAL_REWARD;
        Self {
            per_state,
            terminal: Some(goal),
        }
    }

    /// Non-episodic reward from per-state values.
    pub fn from_state_rewards(per_state: Vec<f64>) -> Self {
        Self {
            per_state,
            terminal: None,
        }
    }

    #[inline]
    pub fn reward(&self, _s: usize, _a: Action, next: usize) -> f64 {
        self.per_state[next]
    }

    #[inline]
    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal == Some(s)
    }

    pub fn terminal(&self) -> Option<usize> {
        self.terminal
    }

    pub fn state_rewards(&self) -> &[f64] {
        &self.per_state
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    values: Vec<[f64; 4]>,
    discount: f64,
}

impl QTable {
    pub fn zeros(n_states: usize, discount: f64) -> Self {
        Self {
            values: vec![[0.0; 4]; n_states],
            discount,
        }
    }

    pub fn from_rows(values: Vec<[f64; 4]>, discount: f64) -> Self {
        Self { values, discount }
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    #[inline]
    pub fn get(&self, s: usize, a: Action) -> f64 {
        self.values[s][a.index()]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: Action, v: f64) {
        self.values[s][a.index()] = v;
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64; 4] {
        &self.values[s]
    }

    pub fn rows(&self) -> &[[f64; 4]] {
        &self.values
    }

    pub fn max_value(&self, s: usize) -> f64 {
        self.values[s].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Argmax with ties broken by `Action` order.
    pub fn greedy_action(&self, s: usize) -> Action {
        argmax_action(&self.values[s])
    }

    pub fn greedy_policy(&self) -> Vec<Action> {
        (0..self.n_states()).map(|s| self.greedy_action(s)).collect()
    }

    /// Actions within `eps` of the row maximum.
    pub fn optimal_actions(&self, s: usize, eps: f64) -> Vec<Action> {
        let best = self.max_value(s);
        Action::ALL
            .into_iter()
            .filter(|a| self.get(s, *a) >= best - eps)
            .collect()
    }

    pub fn boltzmann_policy(&self, tau: f64) -> StochasticPolicy {
        StochasticPolicy {
            probs: self.values.iter().map(|row| softmax(row, tau)).collect(),
        }
    }

    /// Per-state log action probabilities under the Boltzmann policy.
    pub fn boltzmann_log_policy(&self, tau: f64) -> Vec<[f64; 4]> {
        self.values.iter().map(|row| log_softmax(row, tau)).collect()
    }

    /// `max |T Q - Q|` over all state-action pairs.
    pub fn bellman_residual(&self, gw: &GridWorld, reward: &RewardFunction) -> f64 {
        let mut worst = 0.0_f64;
        for s in 0..self.n_states() {
            for a in Action::ALL {
                let target = bellman_target(gw, reward, self, s, a);
                worst = worst.max((target - self.get(s, a)).abs());
            }
        }
        worst
    }
}

pub(crate) fn argmax_action(row: &[f64; 4]) -> Action {
    let mut best = 0;
    for a in 1..4 {
        if row[a] > row[best] {
            best = a;
        }
    }
    Action::ALL[best]
}

fn log_softmax(row: &[f64; 4], tau: f64) -> [f64; 4] {
    let scaled = row.map(|q| tau * q);
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scaled.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    scaled.map(|x| x - lse)
}

fn softmax(row: &[f64; 4], tau: f64) -> [f64; 4] {
    let scaled = row.map(|q| tau * q);
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = scaled.map(|x| (x - m).exp());
    let z: f64 = e.iter().sum();
    e.map(|x| x / z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    pub probs: Vec<[f64; 4]>,
}

impl StochasticPolicy {
    pub fn prob(&self, s: usize, a: Action) -> f64 {
        self.probs[s][a.index()]
    }
}

#[inline]
fn bellman_target(gw: &GridWorld, reward: &RewardFunction, q: &QTable, s: usize, a: Action) -> f64 {
    if reward.is_terminal(s) {
        return 0.0;
    }
    let next = gw.step(s, a);
    let r = reward.reward(s, a, next);
    if reward.is_terminal(next) {
        r
    } else {
        r + q.discount * q.max_value(next)
    }
}

/// Synchronous value iteration on action-values until the largest change in
/// a sweep is at most `tol`.
///
/// Sweeps are capped at `10 * ceil(ln(tol) / ln(discount))`.
pub fn value_iteration(
    gw: &GridWorld,
    reward: &RewardFunction,
    discount: f64,
    tol: f64,
) -> Result<QTable> {
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::InvalidParameter(format!(
            "discount must be in [0, 1), got {discount}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be > 0, got {tol}")));
    }
    let cap = if discount > 0.0 {
        (10.0 * (tol.ln() / discount.ln()).ceil()).max(10.0) as usize
    } else {
        10
    };

    let n = gw.n_states();
    let mut q = QTable::zeros(n, discount);
    let mut next = q.values.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..cap {
        residual = 0.0;
        for s in 0..n {
            for a in Action::ALL {
                let t = bellman_target(gw, reward, &q, s, a);
                residual = residual.max((t - q.values[s][a.index()]).abs());
                next[s][a.index()] = t;
            }
        }
        std::mem::swap(&mut q.values, &mut next);
        if residual <= tol {
            return Ok(q);
        }
    }
    Err(Error::NoConvergence {
        iterations: cap,
        residual,
    })
}
