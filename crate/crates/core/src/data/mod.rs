//! Training data: generation, subsampling, the suggestion-module pair
//! rearrangement, holdout queries and on-disk persistence.

pub mod pack;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::sim::{BoxWorld, GridAction, Observation};

pub use pack::{FormatError, Pack, TensorEntry};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("rearrangement produced no pairs")]
    EmptyResult,
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Render-seed streams. The top byte of every render seed names its stream so
/// training, holdout and exploration renders can never share a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum SeedStream {
    Train = 0,
    Holdout = 1,
    Validation = 2,
    Explore = 3,
}

pub fn render_seed(rng: &mut impl RngCore, stream: SeedStream) -> u64 {
    (rng.next_u64() & 0x00ff_ffff_ffff_ffff) | ((stream as u64) << 56)
}

/// One `(O1, O2, ρ)` tuple. Observations are indices into the owning
/// dataset's store; `action` is `Some(u)` exactly for action pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingTuple {
    pub obs_a: usize,
    pub obs_b: usize,
    pub action: Option<GridAction>,
}

impl TrainingTuple {
    pub fn similar(obs_a: usize, obs_b: usize) -> Self {
        TrainingTuple { obs_a, obs_b, action: None }
    }

    pub fn action(obs_a: usize, obs_b: usize, u: GridAction) -> Self {
        TrainingTuple { obs_a, obs_b, action: Some(u) }
    }

    pub fn is_action_pair(&self) -> bool {
        self.action.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceStep {
    pub stage: String,
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub steps: Vec<ProvenanceStep>,
}

impl Provenance {
    pub fn record(&mut self, stage: &str, params: serde_json::Value) {
        self.steps.push(ProvenanceStep { stage: stage.to_string(), params });
    }

    pub fn stages(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.stage.as_str()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    pub tuples: Vec<TrainingTuple>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn push_observation(&mut self, obs: Observation) -> usize {
        self.observations.push(obs);
        self.observations.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// `(n_action_pairs, n_similar_pairs)`.
    pub fn counts(&self) -> (usize, usize) {
        let n_action = self.tuples.iter().filter(|t| t.is_action_pair()).count();
        (n_action, self.tuples.len() - n_action)
    }

    pub fn action_pairs(&self) -> impl Iterator<Item = &TrainingTuple> {
        self.tuples.iter().filter(|t| t.is_action_pair())
    }

    pub fn similar_pairs(&self) -> impl Iterator<Item = &TrainingTuple> {
        self.tuples.iter().filter(|t| !t.is_action_pair())
    }

    /// Observation ids in tuple order, two per tuple. This is the multiset of
    /// covered states before encoding.
    pub fn occurrences(&self) -> Vec<usize> {
        self.tuples.iter().flat_map(|t| [t.obs_a, t.obs_b]).collect()
    }

    /// Outgoing actions per observation that starts at least one action pair.
    pub fn outgoing_actions(&self) -> BTreeMap<usize, BTreeSet<GridAction>> {
        let mut out: BTreeMap<usize, BTreeSet<GridAction>> = BTreeMap::new();
        for t in &self.tuples {
            if let Some(u) = t.action {
                out.entry(t.obs_a).or_default().insert(u);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.observations.len();
        for (i, t) in self.tuples.iter().enumerate() {
            if t.obs_a >= n || t.obs_b >= n {
                return Err(DataError::InvalidArgument(format!("tuple {i} references a missing observation")));
            }
        }
        Ok(())
    }

    /// Copy with only the given tuples, observation store compacted to the
    /// referenced observations (original relative order kept).
    fn select(&self, keep: &[usize]) -> Dataset {
        let mut used: Vec<usize> = keep.iter().flat_map(|&i| [self.tuples[i].obs_a, self.tuples[i].obs_b]).collect();
        used.sort_unstable();
        used.dedup();
        let remap: BTreeMap<usize, usize> = used.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        Dataset {
            observations: used.iter().map(|&i| self.observations[i].clone()).collect(),
            tuples: keep
                .iter()
                .map(|&i| {
                    let t = self.tuples[i];
                    TrainingTuple { obs_a: remap[&t.obs_a], obs_b: remap[&t.obs_b], action: t.action }
                })
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// One JSON object per tuple, without pixels.
    pub fn export_jsonl<W: Write>(&self, mut w: W) -> Result<(), DataError> {
        for (i, t) in self.tuples.iter().enumerate() {
            let line = json!({
                "index": i,
                "obs_a": t.obs_a,
                "obs_b": t.obs_b,
                "a": u8::from(t.is_action_pair()),
                "u": t.action,
                "label_a": self.observations[t.obs_a].meta_label,
                "label_b": self.observations[t.obs_b].meta_label,
            });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Sample `n_pairs` tuples: action pairs render a random state before and
/// after a random valid action; similar pairs render one state twice.
pub fn generate_dataset(
    world: &BoxWorld,
    n_pairs: usize,
    similar_fraction: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if n_pairs == 0 {
        return Err(DataError::InvalidArgument("n_pairs must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&similar_fraction) {
        return Err(DataError::InvalidArgument("similar_fraction must lie in [0, 1)".into()));
    }
    let movable: Vec<usize> = (0..world.n_states()).filter(|&s| !world.valid_actions(world.state(s)).is_empty()).collect();
    if movable.is_empty() {
        return Err(DataError::InvalidArgument("no state admits an action".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_similar = (n_pairs as f64 * similar_fraction).round() as usize;
    let mut kinds: Vec<bool> = (0..n_pairs).map(|i| i < n_similar).collect();
    kinds.shuffle(&mut rng);

    let mut ds = Dataset::default();
    for similar in kinds {
        if similar {
            let s = rng.random_range(0..world.n_states());
            let a = ds.push_observation(world.render_id(s, render_seed(&mut rng, SeedStream::Train)));
            let b = ds.push_observation(world.render_id(s, render_seed(&mut rng, SeedStream::Train)));
            ds.tuples.push(TrainingTuple::similar(a, b));
        } else {
            let s = *movable.choose(&mut rng).unwrap();
            let valid: Vec<GridAction> = world.valid_actions(world.state(s)).into_iter().collect();
            let u = *valid.choose(&mut rng).unwrap();
            let next = world.transition(s, &u).expect("valid action");
            let a = ds.push_observation(world.render_id(s, render_seed(&mut rng, SeedStream::Train)));
            let b = ds.push_observation(world.render_id(next, render_seed(&mut rng, SeedStream::Train)));
            ds.tuples.push(TrainingTuple::action(a, b, u));
        }
    }
    ds.provenance.record(
        "generate",
        json!({
            "sim": world.config(),
            "n_pairs": n_pairs,
            "similar_fraction": similar_fraction,
            "seed": seed,
        }),
    );
    Ok(ds)
}

/// Uniform subset without replacement of `round(fraction · |ds|)` tuples,
/// original order kept.
pub fn subsample(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::InvalidArgument("fraction must lie in (0, 1]".into()));
    }
    let n = ds.tuples.len();
    let k = ((n as f64) * fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = rand::seq::index::sample(&mut rng, n, k.min(n)).into_vec();
    keep.sort_unstable();
    let mut out = ds.select(&keep);
    out.provenance.record(
        "subsample",
        json!({ "fraction": fraction, "seed": seed, "parent_tuples": n, "kept": k }),
    );
    Ok(out)
}

/// Pair for the suggestion module: `similar` means some identical action was
/// applied from both observations. `justification` holds the two actions that
/// produced the signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmTuple {
    pub obs_a: usize,
    pub obs_b: usize,
    pub similar: bool,
    pub justification: (GridAction, GridAction),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmDatasetConfig {
    pub max_positive: usize,
    pub max_negative: usize,
    pub seed: u64,
}

impl Default for SmDatasetConfig {
    fn default() -> Self {
        SmDatasetConfig { max_positive: 4, max_negative: 4, seed: 0 }
    }
}

/// Rearrange the action pairs of `ds` into similar/dissimilar pairs of start
/// observations, at most `max_positive` and `max_negative` partners sampled
/// per anchor. Each unordered pair appears at most once per signal.
pub fn build_sm_dataset(ds: &Dataset, cfg: &SmDatasetConfig) -> Result<Vec<SmTuple>, DataError> {
    let outgoing = ds.outgoing_actions();
    if outgoing.is_empty() {
        return Err(DataError::EmptyResult);
    }
    let anchors: Vec<usize> = outgoing.keys().copied().collect();
    let mut by_action: BTreeMap<GridAction, Vec<usize>> = BTreeMap::new();
    for (&o, acts) in &outgoing {
        for u in acts {
            by_action.entry(*u).or_default().push(o);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seen: HashSet<(usize, usize, bool)> = HashSet::new();
    let mut out = Vec::new();
    let mut emit = |a: usize, b: usize, similar: bool, just: (GridAction, GridAction), out: &mut Vec<SmTuple>| {
        let key = (a.min(b), a.max(b), similar);
        if seen.insert(key) {
            out.push(SmTuple { obs_a: a, obs_b: b, similar, justification: just });
        }
    };
    for &i in &anchors {
        let acts_i = &outgoing[&i];
        let positives: Vec<usize> = acts_i
            .iter()
            .flat_map(|u| by_action[u].iter().copied())
            .filter(|&j| j != i)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for &j in positives.choose_multiple(&mut rng, cfg.max_positive) {
            let shared = acts_i.intersection(&outgoing[&j]).next().copied().expect("shares an action");
            emit(i, j, true, (shared, shared), &mut out);
        }
        let negatives: Vec<usize> = anchors
            .iter()
            .copied()
            .filter(|&j| j != i && differing_pair(acts_i, &outgoing[&j]).is_some())
            .collect();
        for &j in negatives.choose_multiple(&mut rng, cfg.max_negative) {
            let just = differing_pair(acts_i, &outgoing[&j]).unwrap();
            emit(i, j, false, just, &mut out);
        }
    }
    if out.is_empty() {
        return Err(DataError::EmptyResult);
    }
    Ok(out)
}

/// First `(u1, u2)` with `u1 ∈ a`, `u2 ∈ b`, `u1 ≠ u2`.
fn differing_pair(a: &BTreeSet<GridAction>, b: &BTreeSet<GridAction>) -> Option<(GridAction, GridAction)> {
    a.iter().find_map(|u1| b.iter().find(|u2| *u2 != u1).map(|u2| (*u1, *u2)))
}

/// Start/goal queries drawn from freshly rendered holdout observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    pub observations: Vec<Observation>,
    pub pairs: Vec<(usize, usize)>,
}

impl QuerySet {
    pub fn start(&self, q: usize) -> &Observation {
        &self.observations[self.pairs[q].0]
    }

    pub fn goal(&self, q: usize) -> &Observation {
        &self.observations[self.pairs[q].1]
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn make_queries(
    world: &BoxWorld,
    n_queries: usize,
    holdout_size: usize,
    seed: u64,
    stream: SeedStream,
) -> Result<QuerySet, DataError> {
    if holdout_size == 0 || n_queries > holdout_size.saturating_mul(holdout_size) {
        return Err(DataError::InvalidArgument("n_queries must not exceed holdout_size^2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let observations: Vec<Observation> = (0..holdout_size)
        .map(|_| {
            let s = rng.random_range(0..world.n_states());
            world.render_id(s, render_seed(&mut rng, stream))
        })
        .collect();
    let pairs = (0..n_queries)
        .map(|_| (rng.random_range(0..holdout_size), rng.random_range(0..holdout_size)))
        .collect();
    Ok(QuerySet { observations, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimConfig;

    fn world() -> BoxWorld {
        BoxWorld::new(SimConfig::default()).unwrap()
    }

    fn blank(label: u32) -> Observation {
        Observation::new(1, vec![label as f32 / 10.0; 3], Some(label))
    }

    #[test]
    fn generation_counts_and_determinism() {
        let w = world();
        let ds = generate_dataset(&w, 200, 0.2, 5).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.counts(), (160, 40));
        assert_eq!(ds, generate_dataset(&w, 200, 0.2, 5).unwrap());
        let all_action = generate_dataset(&w, 50, 0.0, 5).unwrap();
        assert!(all_action.tuples.iter().all(TrainingTuple::is_action_pair));
        for t in ds.action_pairs() {
            let (a, b) = (ds.observations[t.obs_a].meta_label.unwrap(), ds.observations[t.obs_b].meta_label.unwrap());
            assert_eq!(w.transition(a as usize, &t.action.unwrap()), Some(b as usize));
        }
        for t in ds.similar_pairs() {
            assert_eq!(ds.observations[t.obs_a].meta_label, ds.observations[t.obs_b].meta_label);
            assert_ne!(ds.observations[t.obs_a].pixels, ds.observations[t.obs_b].pixels);
        }
        assert!(generate_dataset(&w, 0, 0.2, 5).is_err());
        assert!(generate_dataset(&w, 5, 1.0, 5).is_err());
    }

    #[test]
    fn subsample_sizes_and_subset() {
        let w = world();
        let ds = generate_dataset(&w, 100, 0.2, 1).unwrap();
        let half = subsample(&ds, 0.5, 3).unwrap();
        assert_eq!(half.len(), 50);
        let full = subsample(&ds, 1.0, 3).unwrap();
        assert_eq!(full.tuples, ds.tuples);
        assert_eq!(full.observations, ds.observations);
        for t in &half.tuples {
            let pa = &half.observations[t.obs_a];
            assert!(ds.tuples.iter().any(|o| ds.observations[o.obs_a] == *pa
                && ds.observations[o.obs_b] == half.observations[t.obs_b]
                && o.action == t.action));
        }
        assert!(subsample(&ds, 0.0, 3).is_err());
        assert_eq!(half.provenance.stages(), vec!["generate", "subsample"]);
    }

    #[test]
    fn sm_rearrangement_definitions() {
        let x = GridAction::new((1, 1), (2, 1));
        let y = GridAction::new((1, 1), (3, 1));
        let mut ds = Dataset::default();
        for l in 0..4 {
            ds.push_observation(blank(l));
        }
        ds.tuples.push(TrainingTuple::action(0, 3, x));
        ds.tuples.push(TrainingTuple::action(1, 3, x));
        let sm = build_sm_dataset(&ds, &SmDatasetConfig::default()).unwrap();
        assert_eq!(sm.len(), 1);
        assert!(sm[0].similar && sm[0].justification == (x, x));

        let mut ds2 = ds.clone();
        ds2.tuples[1].action = Some(y);
        let sm = build_sm_dataset(&ds2, &SmDatasetConfig::default()).unwrap();
        assert_eq!(sm.len(), 1);
        assert!(!sm[0].similar);

        // Oa has x and y, Ob has x: one similar (x, x) and one dissimilar (y, x)
        let mut ds3 = Dataset::default();
        for l in 0..3 {
            ds3.push_observation(blank(l));
        }
        ds3.tuples.push(TrainingTuple::action(0, 2, x));
        ds3.tuples.push(TrainingTuple::action(0, 2, y));
        ds3.tuples.push(TrainingTuple::action(1, 2, x));
        let sm = build_sm_dataset(&ds3, &SmDatasetConfig::default()).unwrap();
        assert_eq!(sm.len(), 2);
        let pos: Vec<_> = sm.iter().filter(|t| t.similar).collect();
        let neg: Vec<_> = sm.iter().filter(|t| !t.similar).collect();
        assert_eq!(pos.len(), 1);
        assert_eq!(neg.len(), 1);
        assert_eq!(pos[0].justification, (x, x));
        assert_eq!(neg[0].justification, (y, x));
    }

    #[test]
    fn sm_requires_action_pairs() {
        let mut ds = Dataset::default();
        ds.push_observation(blank(0));
        ds.push_observation(blank(0));
        ds.tuples.push(TrainingTuple::similar(0, 1));
        assert!(matches!(build_sm_dataset(&ds, &SmDatasetConfig::default()), Err(DataError::EmptyResult)));
    }

    #[test]
    fn sm_caps_partners() {
        let w = world();
        let ds = generate_dataset(&w, 400, 0.0, 2).unwrap();
        let cfg = SmDatasetConfig::default();
        let sm = build_sm_dataset(&ds, &cfg).unwrap();
        let anchors = ds.outgoing_actions().len();
        assert!(sm.len() <= anchors * (cfg.max_positive + cfg.max_negative));
        let mut keys = HashSet::new();
        for t in &sm {
            assert!(keys.insert((t.obs_a.min(t.obs_b), t.obs_a.max(t.obs_b), t.similar)));
        }
    }

    #[test]
    fn queries_shape() {
        let w = world();
        let q = make_queries(&w, 20, 30, 4, SeedStream::Holdout).unwrap();
        assert_eq!(q.len(), 20);
        assert_eq!(q.observations.len(), 30);
        assert!(make_queries(&w, 10, 3, 4, SeedStream::Holdout).is_err());
        let single = make_queries(&w, 1, 1, 4, SeedStream::Holdout).unwrap();
        assert_eq!(single.pairs, vec![(0, 0)]);
    }

    #[test]
    fn jsonl_export_has_one_line_per_tuple() {
        let w = world();
        let ds = generate_dataset(&w, 10, 0.3, 1).unwrap();
        let mut buf = Vec::new();
        ds.export_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 10);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(first.get("label_a").is_some());
    }
}
