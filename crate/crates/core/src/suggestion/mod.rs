//! Suggestion module: a Siamese embedding that groups observations admitting
//! the same actions, density clusters labelled with action sets, and the
//! nearest-member query returning the suggested actions.

mod bins;
mod hdbscan;

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use bins::{bin_actions, ActionBin, ActionBinTable, BinKey, ContinuousAction};
pub use hdbscan::{hdbscan, ClusterConfig};

use crate::data::pack::{meta_field, pack_mlp, unpack_mlp, FormatError, Pack, Persist};
use crate::data::{Dataset, SmTuple};
use crate::embed::{pixel_matrix, Embedder};
use crate::learn::{attract, hinge_repel, train, Activation, Gradients, LearnError, Mlp, Real, TrainConfig};
use crate::sim::{BoxWorld, GridAction, Observation};

#[derive(Debug, Error)]
pub enum SuggestError {
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("training pairs contain only one class")]
    DegenerateDataset,
    #[error("suggestion index is empty")]
    EmptyIndex,
    #[error("observation carries no ground-truth label")]
    MissingLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmConfig {
    pub hidden: Vec<usize>,
    pub sm_dim: usize,
    pub margin: f64,
    pub train: TrainConfig,
}

impl Default for SmConfig {
    fn default() -> Self {
        SmConfig {
            hidden: vec![64],
            sm_dim: 12,
            margin: 4.0,
            train: TrainConfig { epochs: 100, batch_size: 64, learning_rate: 1e-3, ..Default::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmParams {
    pub net: Mlp<f32>,
    pub margin: f64,
    pub image_side: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedSm {
    pub params: SmParams,
    pub trace: Vec<f64>,
}

impl SmParams {
    pub fn new(image_side: usize, cfg: &SmConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![image_side * image_side * 3];
        sizes.extend(&cfg.hidden);
        sizes.push(cfg.sm_dim);
        SmParams {
            net: Mlp::new(&sizes, Activation::LeakyRelu, Activation::Identity, &mut rng),
            margin: cfg.margin,
            image_side,
        }
    }

    pub fn sm_dim(&self) -> usize {
        self.net.output_width()
    }
}

impl Embedder for SmParams {
    fn dim(&self) -> usize {
        self.sm_dim()
    }

    fn embed_batch(&self, obs: &[&Observation]) -> Result<Array2<f32>, LearnError> {
        let x = pixel_matrix(obs, self.net.input_width())?;
        self.net.predict(x.view())
    }
}

/// Mean contrastive loss over a batch of pairs with its gradient: `d²` for
/// similar pairs, `max(0, margin − d)²` otherwise, `d` the L1 embedding
/// distance. `x` stacks the first images of the `b` pairs, then the second.
pub fn contrastive_loss<F: Real>(
    net: &Mlp<F>,
    x: ArrayView2<F>,
    similar: &[bool],
    margin: f64,
) -> Result<(f64, Gradients<F>), LearnError> {
    let b = similar.len();
    if x.nrows() != 2 * b {
        return Err(LearnError::Shape("pair batch layout does not match label count".into()));
    }
    let nb = F::from_usize(b.max(1)).unwrap();
    let m = F::from_f(margin);
    let cache = net.forward_batch(x)?;
    let e = &cache.output;
    let mut up = Array2::zeros(e.raw_dim());
    let mut loss = F::zero();
    for (k, &s) in similar.iter().enumerate() {
        let d = e.row(k).iter().zip(e.row(b + k).iter()).fold(F::zero(), |a, (&p, &q)| a + (p - q).abs());
        let (val, dval) = if s { attract(d) } else { hinge_repel(d, m) };
        loss = loss + val / nb;
        let g = dval / nb;
        for j in 0..e.ncols() {
            let diff = e[[k, j]] - e[[b + k, j]];
            let sgn = if diff > F::zero() {
                F::one()
            } else if diff < F::zero() {
                -F::one()
            } else {
                F::zero()
            };
            up[[k, j]] = g * sgn;
            up[[b + k, j]] = -g * sgn;
        }
    }
    let (grads, _) = net.backward(&cache, up.view())?;
    Ok((loss.to_f64().unwrap(), grads))
}

/// Trains the Siamese embedding from scratch on `pairs`, which index into
/// `observations`.
pub fn train_sm(observations: &[Observation], pairs: &[SmTuple], cfg: &SmConfig) -> Result<TrainedSm, SuggestError> {
    let has_pos = pairs.iter().any(|p| p.similar);
    let has_neg = pairs.iter().any(|p| !p.similar);
    if !(has_pos && has_neg) {
        return Err(SuggestError::DegenerateDataset);
    }
    let side = observations.first().map(|o| o.side).ok_or(SuggestError::DegenerateDataset)?;
    let init = SmParams::new(side, cfg, cfg.train.seed);
    let px = init.net.input_width();
    let refs: Vec<&Observation> = observations.iter().collect();
    let all = pixel_matrix(&refs, px)?;
    let margin = cfg.margin;
    let mut objective = |models: &[Mlp<f32>], batch: &[usize], _: &mut ChaCha8Rng| {
        let b = batch.len();
        let mut x = Array2::zeros((2 * b, px));
        let mut flags = Vec::with_capacity(b);
        for (k, &i) in batch.iter().enumerate() {
            x.row_mut(k).assign(&all.row(pairs[i].obs_a));
            x.row_mut(b + k).assign(&all.row(pairs[i].obs_b));
            flags.push(pairs[i].similar);
        }
        let (l, g) = contrastive_loss(&models[0], x.view(), &flags, margin)?;
        Ok((l, vec![g]))
    };
    let out = train(&[init.net.clone()], pairs.len(), &cfg.train, &mut objective)?;
    let params = SmParams { net: out.models.into_iter().next().unwrap(), ..init };
    Ok(TrainedSm { params, trace: out.trace })
}

/// Embedded action-pair start observations with their cluster labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SuggestionIndex {
    pub embeddings: Array2<f32>,
    /// Observation id of each member.
    pub members: Vec<usize>,
    pub member_actions: Vec<BTreeSet<GridAction>>,
    /// Cluster of each member; noise members own singleton clusters.
    pub cluster_of: Vec<usize>,
    pub cluster_actions: Vec<BTreeSet<GridAction>>,
    pub config: ClusterConfig,
}

/// Clusters the start observations of the action pairs in `ds`.
pub fn build_index(embedder: &dyn Embedder, ds: &Dataset, cfg: &ClusterConfig) -> Result<SuggestionIndex, SuggestError> {
    let outgoing = ds.outgoing_actions();
    let members: Vec<usize> = outgoing.keys().copied().collect();
    let member_actions: Vec<BTreeSet<GridAction>> = outgoing.into_values().collect();
    let obs: Vec<&Observation> = members.iter().map(|&o| &ds.observations[o]).collect();
    let mut embeddings = Array2::zeros((0, embedder.dim()));
    for chunk in obs.chunks(256) {
        let rows = embedder.embed_batch(chunk)?;
        embeddings.append(ndarray::Axis(0), rows.view()).map_err(|e| LearnError::Shape(e.to_string()))?;
    }
    Ok(index_from_embeddings(embeddings, members, member_actions, cfg))
}

pub fn index_from_embeddings(
    embeddings: Array2<f32>,
    members: Vec<usize>,
    member_actions: Vec<BTreeSet<GridAction>>,
    cfg: &ClusterConfig,
) -> SuggestionIndex {
    let labels = hdbscan(&embeddings.view(), cfg);
    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut cluster_actions = vec![BTreeSet::new(); n_clusters];
    let mut cluster_of = Vec::with_capacity(labels.len());
    for (i, l) in labels.iter().enumerate() {
        let c = match l {
            Some(c) => *c,
            None => {
                cluster_actions.push(BTreeSet::new());
                cluster_actions.len() - 1
            }
        };
        cluster_actions[c].extend(member_actions[i].iter().copied());
        cluster_of.push(c);
    }
    SuggestionIndex { embeddings, members, member_actions, cluster_of, cluster_actions, config: *cfg }
}

impl SuggestionIndex {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_actions.len()
    }

    /// Nearest member (L1) of an embedded query.
    pub fn nearest_member(&self, e: &[f32]) -> Result<usize, SuggestError> {
        let mut best: Option<(usize, f32)> = None;
        for (i, row) in self.embeddings.rows().into_iter().enumerate() {
            let d: f32 = row.iter().zip(e).map(|(a, b)| (a - b).abs()).sum();
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i).ok_or(SuggestError::EmptyIndex)
    }

    /// Action set of the cluster of the nearest member.
    pub fn suggest_embedded(&self, e: &[f32]) -> Result<&BTreeSet<GridAction>, SuggestError> {
        let m = self.nearest_member(e)?;
        Ok(&self.cluster_actions[self.cluster_of[m]])
    }

    /// η: embeds `obs` and returns its suggested actions.
    pub fn suggest(&self, embedder: &dyn Embedder, obs: &Observation) -> Result<BTreeSet<GridAction>, SuggestError> {
        if self.is_empty() {
            return Err(SuggestError::EmptyIndex);
        }
        let e = embedder.embed(obs)?;
        Ok(self.suggest_embedded(&e)?.clone())
    }
}

/// Suggested action sets for observations (η).
pub trait Suggester {
    fn suggest(&self, obs: &Observation) -> Result<BTreeSet<GridAction>, SuggestError>;

    fn suggest_all(&self, obs: &[Observation]) -> Result<Vec<BTreeSet<GridAction>>, SuggestError> {
        obs.iter().map(|o| self.suggest(o)).collect()
    }
}

/// A trained embedding together with its cluster index.
#[derive(Debug, Clone)]
pub struct Suggestion<E> {
    pub embedder: E,
    pub index: SuggestionIndex,
}

impl<E: Embedder> Suggester for Suggestion<E> {
    fn suggest(&self, obs: &Observation) -> Result<BTreeSet<GridAction>, SuggestError> {
        self.index.suggest(&self.embedder, obs)
    }

    fn suggest_all(&self, obs: &[Observation]) -> Result<Vec<BTreeSet<GridAction>>, SuggestError> {
        if self.index.is_empty() {
            return Err(SuggestError::EmptyIndex);
        }
        let e = self.embedder.embed_all(obs)?;
        e.rows()
            .into_iter()
            .map(|r| Ok(self.index.suggest_embedded(r.as_slice().unwrap())?.clone()))
            .collect()
    }
}

/// Ground-truth suggestions from the labelled state.
#[derive(Debug, Clone)]
pub struct OracleSuggester<'a> {
    pub world: &'a BoxWorld,
}

impl Suggester for OracleSuggester<'_> {
    fn suggest(&self, obs: &Observation) -> Result<BTreeSet<GridAction>, SuggestError> {
        crate::embed::oracle_suggestions(self.world, obs).ok_or(SuggestError::MissingLabel)
    }
}

impl Persist for SmParams {
    const KIND: &'static str = "suggestion-net";

    fn to_pack(&self) -> Pack {
        let mut pack = Pack::new(Self::KIND, json!({}));
        let arch = pack_mlp(&mut pack, "net", &self.net);
        pack.meta = json!({ "net": arch, "margin": self.margin, "image_side": self.image_side });
        pack
    }

    fn from_pack(pack: &Pack) -> Result<Self, FormatError> {
        pack.expect_kind(Self::KIND)?;
        Ok(SmParams {
            net: unpack_mlp(pack, "net", &meta_field(&pack.meta, "net")?)?,
            margin: meta_field(&pack.meta, "margin")?,
            image_side: meta_field(&pack.meta, "image_side")?,
        })
    }
}

impl Persist for SuggestionIndex {
    const KIND: &'static str = "suggestion-index";

    fn to_pack(&self) -> Pack {
        let mut pack = Pack::new(
            Self::KIND,
            json!({
                "members": self.members,
                "member_actions": self.member_actions,
                "cluster_of": self.cluster_of,
                "cluster_actions": self.cluster_actions,
                "config": self.config,
            }),
        );
        pack.add_tensor("embeddings", vec![self.embeddings.nrows(), self.embeddings.ncols()], self.embeddings.iter().copied().collect());
        pack
    }

    fn from_pack(pack: &Pack) -> Result<Self, FormatError> {
        pack.expect_kind(Self::KIND)?;
        let members: Vec<usize> = meta_field(&pack.meta, "members")?;
        let (shape, data) = pack.tensor("embeddings")?;
        if shape.len() != 2 || shape[0] != members.len() {
            return Err(FormatError::header("embedding tensor does not match member count"));
        }
        let embeddings = Array2::from_shape_vec((shape[0], shape[1]), data.to_vec())
            .map_err(|e| FormatError::header(e.to_string()))?;
        let idx = SuggestionIndex {
            embeddings,
            members,
            member_actions: meta_field(&pack.meta, "member_actions")?,
            cluster_of: meta_field(&pack.meta, "cluster_of")?,
            cluster_actions: meta_field(&pack.meta, "cluster_actions")?,
            config: meta_field(&pack.meta, "config")?,
        };
        if idx.cluster_of.len() != idx.len() || idx.cluster_of.iter().any(|&c| c >= idx.cluster_actions.len()) {
            return Err(FormatError::header("cluster assignment out of range"));
        }
        Ok(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_sm_dataset, generate_dataset, SmDatasetConfig, TrainingTuple};
    use crate::embed::OracleEmbedder;
    use crate::sim::SimConfig;
    use ndarray::array;

    fn acts(list: &[GridAction]) -> BTreeSet<GridAction> {
        list.iter().copied().collect()
    }

    #[test]
    fn coincident_points_union_their_actions() {
        let x = GridAction::new((0, 0), (1, 0));
        let y = GridAction::new((1, 0), (2, 0));
        let idx = index_from_embeddings(array![[0.0, 0.0], [0.0, 0.0]], vec![0, 1], vec![acts(&[x]), acts(&[y])], &ClusterConfig::default());
        assert_eq!(idx.cluster_of[0], idx.cluster_of[1]);
        assert_eq!(idx.cluster_actions[idx.cluster_of[0]], acts(&[x, y]));
    }

    #[test]
    fn isolated_points_are_singletons() {
        let x = GridAction::new((0, 0), (1, 0));
        let y = GridAction::new((1, 0), (2, 0));
        let idx = index_from_embeddings(array![[0.0], [100.0]], vec![0, 1], vec![acts(&[x]), acts(&[y])], &ClusterConfig::default());
        assert_ne!(idx.cluster_of[0], idx.cluster_of[1]);
        assert_eq!(idx.suggest_embedded(&[1.0]).unwrap(), &acts(&[x]));
        assert_eq!(idx.suggest_embedded(&[90.0]).unwrap(), &acts(&[y]));
    }

    #[test]
    fn empty_index_errors() {
        let idx = index_from_embeddings(Array2::zeros((0, 3)), vec![], vec![], &ClusterConfig::default());
        assert!(matches!(idx.suggest_embedded(&[0.0; 3]), Err(SuggestError::EmptyIndex)));
    }

    #[test]
    fn oracle_embedding_recovers_valid_action_sets() {
        let world = BoxWorld::new(SimConfig { position_noise: 0.0, brightness_range: [1.0, 1.0], ..Default::default() }).unwrap();
        // every state and every valid action appears once
        let mut ds = Dataset::default();
        for s in 0..world.n_states() {
            for u in world.valid_actions(world.state(s)) {
                let a = ds.push_observation(world.render_id(s, 0));
                let b = ds.push_observation(world.render_id(world.transition(s, &u).unwrap(), 0));
                ds.tuples.push(TrainingTuple::action(a, b, u));
            }
        }
        let emb = OracleEmbedder::new(world.n_states(), 10.0);
        let idx = build_index(&emb, &ds, &ClusterConfig::default()).unwrap();
        let sugg = Suggestion { embedder: emb, index: idx };
        for s in 0..world.n_states() {
            let got = sugg.suggest(&world.render_id(s, 9)).unwrap();
            assert_eq!(got, world.valid_actions(world.state(s)));
        }
    }

    #[test]
    fn one_class_is_degenerate() {
        let world = BoxWorld::new(SimConfig::default()).unwrap();
        let ds = generate_dataset(&world, 40, 0.0, 1).unwrap();
        let mut pairs = build_sm_dataset(&ds, &SmDatasetConfig::default()).unwrap();
        pairs.retain(|p| !p.similar);
        assert!(matches!(train_sm(&ds.observations, &pairs, &SmConfig::default()), Err(SuggestError::DegenerateDataset)));
    }

    #[test]
    fn zero_margin_training_runs() {
        let world = BoxWorld::new(SimConfig { image_side: 8, ..Default::default() }).unwrap();
        let ds = generate_dataset(&world, 60, 0.0, 1).unwrap();
        let pairs = build_sm_dataset(&ds, &SmDatasetConfig::default()).unwrap();
        let cfg = SmConfig { margin: 0.0, train: TrainConfig { epochs: 2, ..Default::default() }, ..Default::default() };
        let sm = train_sm(&ds.observations, &pairs, &cfg).unwrap();
        assert_eq!(sm.trace.len(), 2);
        let back = SmParams::from_pack(&Pack::from_bytes(&sm.params.to_pack().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, sm.params);
    }
}
