//! Box-stacking environment: exact state and action enumeration, rule
//! enforcement, noisy rendering and the ground-truth transition graph.
//!
//! Boxes live in `columns` stacks of at most `max_height` boxes. A move picks
//! the top box of one stack and drops it on top of another, non-full stack.
//! Cells are addressed 1-based as `(column, level)` with level 1 at the floor.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error("invalid action {action}: {reason}")]
    InvalidAction { action: GridAction, reason: InvalidReason },
    #[error("state is not a valid arrangement: {0}")]
    InvalidState(String),
}

/// Why an action cannot be applied in a given state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvalidReason {
    EmptyPick,
    NotTop,
    FullDestination,
    WrongLevel,
    SameColumn,
    OutOfGrid,
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InvalidReason::EmptyPick => "empty-pick",
            InvalidReason::NotTop => "not-top",
            InvalidReason::FullDestination => "full-destination",
            InvalidReason::WrongLevel => "wrong-level",
            InvalidReason::SameColumn => "same-column",
            InvalidReason::OutOfGrid => "out-of-grid",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub columns: usize,
    pub max_height: usize,
    pub n_boxes: usize,
    pub image_side: usize,
    /// Maximum jitter of a box centre, as a fraction of the cell size.
    pub position_noise: f32,
    pub brightness_range: [f32; 2],
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            columns: 3,
            max_height: 3,
            n_boxes: 4,
            image_side: 32,
            position_noise: 0.17,
            brightness_range: [0.6, 1.0],
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.columns == 0 {
            return Err(SimError::Config("columns must be >= 1".into()));
        }
        if self.max_height == 0 {
            return Err(SimError::Config("max_height must be >= 1".into()));
        }
        if self.n_boxes > self.columns * self.max_height {
            return Err(SimError::Config(format!(
                "{} boxes do not fit in {}x{} cells",
                self.n_boxes, self.columns, self.max_height
            )));
        }
        if self.n_boxes > PALETTE.len() {
            return Err(SimError::Config(format!(
                "at most {} boxes have distinct colours",
                PALETTE.len()
            )));
        }
        if !(0.0..0.5).contains(&self.position_noise) {
            return Err(SimError::Config("position_noise must lie in [0, 0.5)".into()));
        }
        let [lo, hi] = self.brightness_range;
        if !(lo <= hi) || lo < 0.0 {
            return Err(SimError::Config("brightness_range must satisfy 0 <= low <= high".into()));
        }
        if self.image_side < self.columns.max(self.max_height) {
            return Err(SimError::Config("image too small for the grid".into()));
        }
        Ok(())
    }

    pub fn pixels_per_image(&self) -> usize {
        self.image_side * self.image_side * 3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub column: u8,
    pub level: u8,
}

impl Cell {
    pub fn new(column: u8, level: u8) -> Self {
        Cell { column, level }
    }
}

/// A pick-and-place move between two grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridAction {
    pub pick: Cell,
    pub place: Cell,
}

impl GridAction {
    pub fn new(pick: (u8, u8), place: (u8, u8)) -> Self {
        GridAction { pick: Cell::new(pick.0, pick.1), place: Cell::new(place.0, place.1) }
    }

    /// The move that undoes this one: the box now sits on `place` and the
    /// source column's first free level is `pick`.
    pub fn reverse(&self) -> GridAction {
        GridAction { pick: self.place, place: self.pick }
    }

    /// Pick and place coordinates as `[pick_col, pick_level, place_col, place_level]`.
    pub fn coords(&self) -> [f32; 4] {
        [
            self.pick.column as f32,
            self.pick.level as f32,
            self.place.column as f32,
            self.place.level as f32,
        ]
    }
}

impl fmt::Display for GridAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{})->({},{})",
            self.pick.column, self.pick.level, self.place.column, self.place.level
        )
    }
}

/// Ground-truth arrangement: one bottom-to-top list of box ids per column.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnderlyingState {
    pub stacks: Vec<Vec<u8>>,
}

impl UnderlyingState {
    pub fn new(stacks: Vec<Vec<u8>>) -> Self {
        UnderlyingState { stacks }
    }

    pub fn heights(&self) -> Vec<usize> {
        self.stacks.iter().map(Vec::len).collect()
    }

    pub fn n_boxes(&self) -> usize {
        self.stacks.iter().map(Vec::len).sum()
    }
}

impl fmt::Display for UnderlyingState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols: Vec<String> = self
            .stacks
            .iter()
            .map(|s| s.iter().map(|b| (b'A' + b) as char).collect())
            .collect();
        write!(f, "[{}]", cols.join("|"))
    }
}

/// A rendered image, HWC layout, values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub side: usize,
    pub pixels: Vec<f32>,
    /// Index of the underlying state in the enumeration. Only evaluation code
    /// reads this.
    pub meta_label: Option<u32>,
}

impl Observation {
    pub fn new(side: usize, pixels: Vec<f32>, meta_label: Option<u32>) -> Self {
        debug_assert_eq!(pixels.len(), side * side * 3);
        Observation { side, pixels, meta_label }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.side + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

const PALETTE: [[f32; 3]; 9] = [
    [0.95, 0.15, 0.15],
    [0.15, 0.85, 0.2],
    [0.2, 0.3, 0.95],
    [0.95, 0.9, 0.15],
    [0.9, 0.2, 0.9],
    [0.15, 0.9, 0.9],
    [0.95, 0.55, 0.1],
    [0.55, 0.25, 0.8],
    [0.95, 0.95, 0.95],
];
const BACKGROUND: f32 = 0.2;
/// Box edge length relative to the cell size.
const BOX_FRACTION: f32 = 0.6;

/// Fixed ordering of every action realizable in at least one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTable {
    actions: Vec<GridAction>,
    #[serde(skip)]
    index: HashMap<GridAction, usize>,
}

impl ActionTable {
    pub fn new(actions: Vec<GridAction>) -> Self {
        let index = actions.iter().enumerate().map(|(i, a)| (*a, i)).collect();
        ActionTable { actions, index }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn index_of(&self, action: &GridAction) -> Option<usize> {
        if self.index.len() != self.actions.len() {
            // deserialized without the lookup map
            return self.actions.iter().position(|a| a == action);
        }
        self.index.get(action).copied()
    }

    pub fn get(&self, i: usize) -> Option<&GridAction> {
        self.actions.get(i)
    }

    pub fn actions(&self) -> &[GridAction] {
        &self.actions
    }

    pub fn rebuild_index(&mut self) {
        self.index = self.actions.iter().enumerate().map(|(i, a)| (*a, i)).collect();
    }

    /// Nearest table entry to continuous `[pick_col, pick_level, place_col, place_level]`
    /// coordinates (L1, ties to the lower index).
    pub fn snap(&self, coords: &[f32; 4]) -> Option<GridAction> {
        self.actions
            .iter()
            .map(|a| {
                let c = a.coords();
                let d: f32 = c.iter().zip(coords).map(|(x, y)| (x - y).abs()).sum();
                (d, a)
            })
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .map(|(_, a)| *a)
    }
}

/// The environment definition plus its exhaustive enumeration.
#[derive(Debug, Clone)]
pub struct BoxWorld {
    cfg: SimConfig,
    states: Vec<UnderlyingState>,
    index: HashMap<UnderlyingState, usize>,
    actions: ActionTable,
}

impl BoxWorld {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let states = enumerate_states(&cfg)?;
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let actions = ActionTable::new(enumerate_actions(&cfg)?);
        Ok(BoxWorld { cfg, states, index, actions })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn states(&self) -> &[UnderlyingState] {
        &self.states
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, id: usize) -> &UnderlyingState {
        &self.states[id]
    }

    pub fn state_id(&self, state: &UnderlyingState) -> Option<usize> {
        self.index.get(state).copied()
    }

    pub fn action_table(&self) -> &ActionTable {
        &self.actions
    }

    pub fn valid_actions(&self, state: &UnderlyingState) -> BTreeSet<GridAction> {
        valid_actions(state, self.cfg.max_height)
    }

    pub fn apply(&self, state: &UnderlyingState, action: &GridAction) -> Result<UnderlyingState, SimError> {
        apply_action(state, action, self.cfg.max_height)
    }

    /// Successor state id, or `None` when the action is invalid in `from`.
    pub fn transition(&self, from: usize, action: &GridAction) -> Option<usize> {
        let next = self.apply(&self.states[from], action).ok()?;
        self.state_id(&next)
    }

    pub fn render(&self, state: &UnderlyingState, seed: u64) -> Observation {
        let mut obs = render(state, &self.cfg, seed);
        obs.meta_label = self.state_id(state).map(|i| i as u32);
        obs
    }

    pub fn render_id(&self, id: usize, seed: u64) -> Observation {
        let mut obs = render(&self.states[id], &self.cfg, seed);
        obs.meta_label = Some(id as u32);
        obs
    }

    pub fn ground_truth_graph(&self) -> TransitionGraph {
        let edges = self
            .states
            .iter()
            .map(|s| {
                self.valid_actions(s)
                    .into_iter()
                    .map(|a| {
                        let next = self.apply(s, &a).expect("valid action applies");
                        (a, self.index[&next])
                    })
                    .collect()
            })
            .collect();
        TransitionGraph { edges }
    }
}

/// All arrangements of `n_boxes` distinct boxes, sorted lexicographically over
/// the stacks.
pub fn enumerate_states(cfg: &SimConfig) -> Result<Vec<UnderlyingState>, SimError> {
    cfg.validate()?;
    let mut profiles = Vec::new();
    height_profiles(cfg.columns, cfg.max_height, cfg.n_boxes, &mut Vec::new(), &mut profiles);
    let boxes: Vec<u8> = (0..cfg.n_boxes as u8).collect();
    let mut states = Vec::new();
    for perm in boxes.iter().copied().permutations(cfg.n_boxes) {
        for heights in &profiles {
            let mut it = perm.iter().copied();
            let stacks = heights.iter().map(|&h| it.by_ref().take(h).collect()).collect();
            states.push(UnderlyingState { stacks });
        }
    }
    states.sort();
    states.dedup();
    Ok(states)
}

fn height_profiles(
    columns: usize,
    max_height: usize,
    remaining: usize,
    prefix: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if prefix.len() == columns {
        if remaining == 0 {
            out.push(prefix.clone());
        }
        return;
    }
    for h in 0..=remaining.min(max_height) {
        prefix.push(h);
        height_profiles(columns, max_height, remaining - h, prefix, out);
        prefix.pop();
    }
}

/// Every (pick, place) cell pair that is valid in at least one state, in
/// sorted order.
pub fn enumerate_actions(cfg: &SimConfig) -> Result<Vec<GridAction>, SimError> {
    cfg.validate()?;
    let mut profiles = Vec::new();
    height_profiles(cfg.columns, cfg.max_height, cfg.n_boxes, &mut Vec::new(), &mut profiles);
    let mut set = BTreeSet::new();
    // validity only depends on the stack heights
    for heights in profiles {
        set.extend(actions_for_heights(&heights, cfg.max_height));
    }
    Ok(set.into_iter().collect())
}

fn actions_for_heights(heights: &[usize], max_height: usize) -> Vec<GridAction> {
    let mut out = Vec::new();
    for (from, &hf) in heights.iter().enumerate() {
        if hf == 0 {
            continue;
        }
        for (to, &ht) in heights.iter().enumerate() {
            if to == from || ht >= max_height {
                continue;
            }
            out.push(GridAction::new(
                (from as u8 + 1, hf as u8),
                (to as u8 + 1, ht as u8 + 1),
            ));
        }
    }
    out
}

pub fn valid_actions(state: &UnderlyingState, max_height: usize) -> BTreeSet<GridAction> {
    actions_for_heights(&state.heights(), max_height).into_iter().collect()
}

pub fn apply_action(
    state: &UnderlyingState,
    action: &GridAction,
    max_height: usize,
) -> Result<UnderlyingState, SimError> {
    let fail = |reason| Err(SimError::InvalidAction { action: *action, reason });
    let ncols = state.stacks.len();
    let (pc, pl) = (action.pick.column as usize, action.pick.level as usize);
    let (qc, ql) = (action.place.column as usize, action.place.level as usize);
    if pc == 0 || qc == 0 || pc > ncols || qc > ncols || pl == 0 || ql == 0 || pl > max_height || ql > max_height {
        return fail(InvalidReason::OutOfGrid);
    }
    if pc == qc {
        return fail(InvalidReason::SameColumn);
    }
    let src = &state.stacks[pc - 1];
    if src.is_empty() || pl > src.len() {
        return fail(InvalidReason::EmptyPick);
    }
    if pl < src.len() {
        return fail(InvalidReason::NotTop);
    }
    let dst = &state.stacks[qc - 1];
    if dst.len() >= max_height {
        return fail(InvalidReason::FullDestination);
    }
    if ql != dst.len() + 1 {
        return fail(InvalidReason::WrongLevel);
    }
    let mut next = state.clone();
    let b = next.stacks[pc - 1].pop().expect("non-empty source");
    next.stacks[qc - 1].push(b);
    Ok(next)
}

/// Render a state with seeded lighting and positional jitter. Box pixels are
/// anti-aliased by exact area coverage so the jitter is continuous.
pub fn render(state: &UnderlyingState, cfg: &SimConfig, seed: u64) -> Observation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = cfg.brightness_range;
    let brightness = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let side = cfg.image_side;
    let sidef = side as f32;
    let cell_w = sidef / cfg.columns as f32;
    let cell_h = sidef / cfg.max_height as f32;
    let half_w = 0.5 * BOX_FRACTION * cell_w;
    let half_h = 0.5 * BOX_FRACTION * cell_h;
    let mut rgb = vec![BACKGROUND; side * side * 3];
    for (c, stack) in state.stacks.iter().enumerate() {
        for (level, &b) in stack.iter().enumerate() {
            let (jx, jy) = if cfg.position_noise > 0.0 {
                let n = cfg.position_noise;
                (rng.random_range(-n..=n) * cell_w, rng.random_range(-n..=n) * cell_h)
            } else {
                (0.0, 0.0)
            };
            let cx = (c as f32 + 0.5) * cell_w + jx;
            // level 0 sits on the bottom row of the image
            let cy = sidef - (level as f32 + 0.5) * cell_h + jy;
            let (x0, x1) = (cx - half_w, cx + half_w);
            let (y0, y1) = (cy - half_h, cy + half_h);
            let color = PALETTE[b as usize];
            let r0 = y0.floor().max(0.0) as usize;
            let r1 = (y1.ceil() as usize).min(side);
            let c0 = x0.floor().max(0.0) as usize;
            let c1 = (x1.ceil() as usize).min(side);
            for row in r0..r1 {
                let oy = (y1.min(row as f32 + 1.0) - y0.max(row as f32)).max(0.0);
                for col in c0..c1 {
                    let ox = (x1.min(col as f32 + 1.0) - x0.max(col as f32)).max(0.0);
                    let cov = ox * oy;
                    if cov <= 0.0 {
                        continue;
                    }
                    let i = (row * side + col) * 3;
                    for ch in 0..3 {
                        rgb[i + ch] = rgb[i + ch] * (1.0 - cov) + color[ch] * cov;
                    }
                }
            }
        }
    }
    for v in rgb.iter_mut() {
        *v = (*v * brightness).clamp(0.0, 1.0);
    }
    Observation { side, pixels: rgb, meta_label: None }
}

/// Directed graph over enumerated states with one edge per valid action.
#[derive(Debug, Clone)]
pub struct TransitionGraph {
    edges: Vec<Vec<(GridAction, usize)>>,
}

impl TransitionGraph {
    pub fn n_nodes(&self) -> usize {
        self.edges.len()
    }

    pub fn out_edges(&self, node: usize) -> &[(GridAction, usize)] {
        &self.edges[node]
    }

    pub fn successor(&self, node: usize, action: &GridAction) -> Option<usize> {
        self.edges[node].iter().find(|(a, _)| a == action).map(|(_, t)| *t)
    }

    pub fn is_valid_transition(&self, from: usize, action: &GridAction, to: usize) -> bool {
        from < self.edges.len() && self.successor(from, action) == Some(to)
    }

    /// Hop distances from `source`; unreachable nodes are `None`.
    pub fn bfs(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.edges.len()];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(n) = queue.pop_front() {
            let d = dist[n].unwrap();
            for &(_, t) in &self.edges[n] {
                if dist[t].is_none() {
                    dist[t] = Some(d + 1);
                    queue.push_back(t);
                }
            }
        }
        dist
    }

    pub fn is_strongly_connected(&self) -> bool {
        (0..self.edges.len()).all(|s| self.bfs(s).iter().all(Option::is_some))
    }

    /// Exact long-run validity rate of the uniform random explorer that resets
    /// to a uniform random state after every invalid attempt.
    pub fn random_explorer_validity(&self, n_actions: usize) -> f64 {
        let n = self.edges.len();
        if n == 0 || n_actions == 0 {
            return 0.0;
        }
        let a = n_actions as f64;
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..10_000 {
            let mut next = vec![0.0; n];
            let mut reset_mass = 0.0;
            for s in 0..n {
                let valid = self.edges[s].len() as f64;
                for &(_, t) in &self.edges[s] {
                    next[t] += pi[s] / a;
                }
                reset_mass += pi[s] * (a - valid) / a;
            }
            for v in next.iter_mut() {
                *v += reset_mass / n as f64;
            }
            let delta: f64 = next.iter().zip(&pi).map(|(x, y)| (x - y).abs()).sum();
            pi = next;
            if delta < 1e-14 {
                break;
            }
        }
        (0..n).map(|s| pi[s] * self.edges[s].len() as f64 / a).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(stacks: &[&[u8]]) -> UnderlyingState {
        UnderlyingState::new(stacks.iter().map(|s| s.to_vec()).collect())
    }

    #[test]
    fn default_counts() {
        let w = BoxWorld::new(SimConfig::default()).unwrap();
        assert_eq!(w.n_states(), 288);
        assert_eq!(w.action_table().len(), 48);
    }

    #[test]
    fn degenerate_configs() {
        let cfg = SimConfig { n_boxes: 0, ..SimConfig::default() };
        let states = enumerate_states(&cfg).unwrap();
        assert_eq!(states, vec![st(&[&[], &[], &[]])]);
        assert!(valid_actions(&states[0], 3).is_empty());

        let cfg = SimConfig { n_boxes: 1, ..SimConfig::default() };
        assert_eq!(enumerate_states(&cfg).unwrap().len(), 3);
        assert_eq!(enumerate_actions(&cfg).unwrap().len(), 6);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SimConfig { n_boxes: 10, ..SimConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = SimConfig { position_noise: 0.5, ..SimConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = SimConfig { brightness_range: [1.0, 0.5], ..SimConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = SimConfig { columns: 0, ..SimConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn three_high_to_three_high_is_never_an_action() {
        let actions = enumerate_actions(&SimConfig::default()).unwrap();
        assert!(actions.iter().all(|a| !(a.pick.level == 3 && a.place.level == 3)));
    }

    #[test]
    fn apply_examples() {
        let s = st(&[&[0, 1], &[2], &[3]]);
        let next = apply_action(&s, &GridAction::new((1, 2), (2, 2)), 3).unwrap();
        assert_eq!(next, st(&[&[0], &[2, 1], &[3]]));
        assert_eq!(s, st(&[&[0, 1], &[2], &[3]]));

        let err = apply_action(&s, &GridAction::new((1, 1), (3, 2)), 3).unwrap_err();
        assert!(matches!(err, SimError::InvalidAction { reason: InvalidReason::NotTop, .. }));

        let s = st(&[&[0, 1, 2], &[3], &[]]);
        let err = apply_action(&s, &GridAction::new((1, 3), (1, 2)), 3).unwrap_err();
        assert!(matches!(err, SimError::InvalidAction { reason: InvalidReason::SameColumn, .. }));
        let err = apply_action(&s, &GridAction::new((2, 1), (1, 4)), 3).unwrap_err();
        assert!(matches!(err, SimError::InvalidAction { reason: InvalidReason::OutOfGrid, .. }));
        let err = apply_action(&s, &GridAction::new((2, 1), (1, 3)), 3).unwrap_err();
        assert!(matches!(err, SimError::InvalidAction { reason: InvalidReason::FullDestination, .. }));
        let err = apply_action(&s, &GridAction::new((2, 1), (3, 2)), 3).unwrap_err();
        assert!(matches!(err, SimError::InvalidAction { reason: InvalidReason::WrongLevel, .. }));
        let err = apply_action(&s, &GridAction::new((3, 1), (2, 2)), 3).unwrap_err();
        assert!(matches!(err, SimError::InvalidAction { reason: InvalidReason::EmptyPick, .. }));
    }

    #[test]
    fn reverse_undoes() {
        let w = BoxWorld::new(SimConfig::default()).unwrap();
        for s in w.states() {
            for a in w.valid_actions(s) {
                let next = w.apply(s, &a).unwrap();
                assert_eq!(w.apply(&next, &a.reverse()).unwrap(), *s);
            }
        }
    }

    #[test]
    fn render_is_deterministic_and_bounded() {
        let w = BoxWorld::new(SimConfig::default()).unwrap();
        let a = w.render_id(17, 99);
        let b = w.render_id(17, 99);
        assert_eq!(a, b);
        assert_eq!(a.meta_label, Some(17));
        assert!(a.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a.pixels, w.render_id(17, 100).pixels);
    }

    #[test]
    fn snap_prefers_nearest() {
        let w = BoxWorld::new(SimConfig::default()).unwrap();
        let t = w.action_table();
        let a = t.get(5).unwrap();
        assert_eq!(t.snap(&a.coords()), Some(*a));
    }

    #[test]
    fn random_explorer_rate_is_a_probability() {
        let w = BoxWorld::new(SimConfig::default()).unwrap();
        let p = w.ground_truth_graph().random_explorer_validity(48);
        assert!(p > 0.0 && p < 1.0);
    }
}
