//! Augment, connect and explore, the baselines they are compared with, and
//! the pipeline chaining them into a roadmap.

use std::collections::{BTreeSet, HashMap, HashSet};

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::data::{build_sm_dataset, render_seed, DataError, Dataset, SeedStream, SmDatasetConfig, TrainingTuple};
use crate::embed::{Embedder, Generator};
use crate::learn::LearnError;
use crate::lpm::{predict_reliable, train_lpm, LatentDynamics, LpmConfig, LpmError, LpmParams};
use crate::mapping::{epsilon, latent_stats_from, train_mm, MappingError, MmConfig, MmParams};
use crate::roadmap::{build_lsr_from_latents, CoveredSpace, Roadmap, RoadmapError};
use crate::sim::{ActionTable, BoxWorld, GridAction, Observation};
use crate::suggestion::{build_index, train_sm, ClusterConfig, SmConfig, SmParams, SuggestError, Suggester, Suggestion};

#[derive(Debug, Error)]
pub enum AceError {
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Lpm(#[from] LpmError),
    #[error(transparent)]
    Suggest(#[from] SuggestError),
    #[error(transparent)]
    Roadmap(#[from] RoadmapError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("no candidate actions after removing the reverse of the last action")]
    NoCandidateActions,
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// The four model roles the procedures consult.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub mm: &'a dyn Embedder,
    pub generator: &'a dyn Generator,
    pub lpm: &'a dyn LatentDynamics,
    pub sm: &'a dyn Suggester,
    /// Fixes the order of tie-breaks among actions.
    pub actions: &'a ActionTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SortOrder {
    /// Farthest candidate first.
    #[default]
    Descending,
    Ascending,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AceConfig {
    /// Augmentation search radius; `None` uses μ₀ of the current mapping.
    pub radius: Option<f32>,
    /// ε = μ₀ + w·σ₀ of the mapping in use at each stage.
    pub w_eps: f32,
    pub n_explore: usize,
    pub sort_order: SortOrder,
    pub rho_gate: f32,
    pub augment: bool,
    pub connect: bool,
    pub seed: u64,
}

impl Default for AceConfig {
    fn default() -> Self {
        AceConfig {
            radius: None,
            w_eps: -0.35,
            n_explore: 500,
            sort_order: SortOrder::Descending,
            rho_gate: 1.0,
            augment: true,
            connect: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutcome {
    pub dataset: Dataset,
    /// Observation ids of the appended similar pairs, in emission order.
    pub new_pairs: Vec<(usize, usize)>,
}

fn unordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn covered_ids(ds: &Dataset) -> Vec<usize> {
    let mut ids = ds.occurrences();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Similar-pair discovery: two observations close in latent space whose
/// suggested actions coincide and whose reliable predictions land on the same
/// covered observations are appended as a similar pair. The search for an
/// observation ends at its first matching partner, even one that is already
/// paired, so each observation adds at most one pair. Original tuples are kept
/// verbatim.
pub fn augment(ds: &Dataset, models: &Models, radius: f32, eps: f32, order: SortOrder, rho_gate: f32) -> Result<AugmentOutcome, AceError> {
    let latents = models.mm.embed_all(&ds.observations)?;
    let covered = CoveredSpace::from_latents(&latents.view(), ds, eps);
    let ids = covered_ids(ds);
    let obs: Vec<Observation> = ids.iter().map(|&i| ds.observations[i].clone()).collect();
    let sugg: HashMap<usize, BTreeSet<GridAction>> = ids.iter().copied().zip(models.sm.suggest_all(&obs)?).collect();

    let mut existing: HashSet<(usize, usize)> = ds.similar_pairs().map(|t| unordered(t.obs_a, t.obs_b)).collect();
    // nearest covered observation of each reliable prediction
    let mut landing: HashMap<(usize, GridAction), Option<usize>> = HashMap::new();
    let mut land = |o: usize, u: GridAction| -> Result<Option<usize>, AceError> {
        if let Some(v) = landing.get(&(o, u)) {
            return Ok(*v);
        }
        let z = latents.row(o).to_vec();
        let v = match predict_reliable(models.lpm, &z, &u, &covered, rho_gate)? {
            Some(p) => covered.nearest(&p).map(|(row, _)| covered.obs_ids[row]),
            None => None,
        };
        landing.insert((o, u), v);
        Ok(v)
    };

    let mut out = ds.clone();
    let mut new_pairs = Vec::new();
    for &i in &ids {
        let zi = latents.row(i);
        let mut cands: Vec<(usize, f32)> = ids
            .iter()
            .filter(|&&j| j != i)
            .filter_map(|&j| {
                let d: f32 = zi.iter().zip(latents.row(j).iter()).map(|(a, b)| (a - b).abs()).sum();
                (d <= radius).then_some((j, d))
            })
            .collect();
        match order {
            SortOrder::Descending => cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))),
            SortOrder::Ascending => cands.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))),
        }
        let ui = &sugg[&i];
        for (j, _) in cands {
            if sugg[&j] != *ui {
                continue;
            }
            let mut ni = Vec::new();
            let mut nj = Vec::new();
            let mut consistent = true;
            for &u in ui {
                match (land(i, u)?, land(j, u)?) {
                    (Some(a), Some(b)) => {
                        ni.push(a);
                        nj.push(b);
                    }
                    (None, None) => {}
                    _ => {
                        consistent = false;
                        break;
                    }
                }
            }
            ni.sort_unstable();
            nj.sort_unstable();
            if consistent && !ni.is_empty() && ni == nj {
                // a pair already in the dataset also ends the search
                if existing.insert(unordered(i, j)) {
                    out.tuples.push(TrainingTuple::similar(i, j));
                    new_pairs.push((i, j));
                }
                break;
            }
        }
    }
    out.provenance.record(
        "augment",
        json!({ "radius": radius, "eps": eps, "order": order, "rho_gate": rho_gate, "new_pairs": new_pairs.len() }),
    );
    Ok(AugmentOutcome { dataset: out, new_pairs })
}

/// Baseline augmentation: each covered observation is paired with its nearest
/// other observation within `radius`, without any model checks.
pub fn augment_baseline(ds: &Dataset, mm: &dyn Embedder, radius: f32) -> Result<AugmentOutcome, AceError> {
    let mut out = ds.clone();
    let mut new_pairs = Vec::new();
    let ids = covered_ids(ds);
    if ids.is_empty() {
        return Ok(AugmentOutcome { dataset: out, new_pairs });
    }
    let latents = mm.embed_all(&ds.observations)?;
    let mut existing: HashSet<(usize, usize)> = ds.similar_pairs().map(|t| unordered(t.obs_a, t.obs_b)).collect();
    for &i in &ids {
        let zi = latents.row(i);
        let mut best: Option<(usize, f32)> = None;
        for &j in &ids {
            if j == i {
                continue;
            }
            let d: f32 = zi.iter().zip(latents.row(j).iter()).map(|(a, b)| (a - b).abs()).sum();
            if d <= radius && best.is_none_or(|(_, b)| d < b) {
                best = Some((j, d));
            }
        }
        if let Some((j, _)) = best {
            if existing.insert(unordered(i, j)) {
                out.tuples.push(TrainingTuple::similar(i, j));
                new_pairs.push((i, j));
            }
        }
    }
    out.provenance.record("augment_baseline", json!({ "radius": radius, "new_pairs": new_pairs.len() }));
    Ok(AugmentOutcome { dataset: out, new_pairs })
}

/// Shortcut construction: from every node, each suggested action is predicted
/// forward and linked to the nearest other node within `eps·rho_gate`.
/// Returns the new roadmap and the added `(from, to)` edges.
pub fn connect(rm: &Roadmap, models: &Models, rho_gate: f32) -> Result<(Roadmap, Vec<(usize, usize)>), AceError> {
    let mut out = rm.clone();
    let mut added = Vec::new();
    let decoded: Vec<Observation> = rm
        .nodes
        .iter()
        .map(|n| models.generator.generate(&n.representative))
        .collect::<Result<_, _>>()?;
    let suggestions = models.sm.suggest_all(&decoded)?;
    let radius = rm.eps * rho_gate;
    for (node, us) in rm.nodes.iter().zip(suggestions) {
        for u in us {
            let zn = models.lpm.predict(&node.representative, &u)?;
            let mut best: Option<(usize, f32)> = None;
            for other in &rm.nodes {
                if other.id == node.id {
                    continue;
                }
                let d: f32 = other.representative.iter().zip(&zn).map(|(a, b)| (a - b).abs()).sum();
                if d < radius && best.is_none_or(|(_, b)| d < b) {
                    best = Some((other.id, d));
                }
            }
            if let Some((j, _)) = best {
                if out.insert_shortcut(node.id, j, u)? {
                    added.push((node.id, j));
                }
            }
        }
    }
    Ok((out, added))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepOutcome {
    Valid,
    Invalid { reason: String },
    /// Nothing to try; the environment was reset without acting.
    NoCandidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreRecord {
    /// Ground-truth state before the step, when the environment exposes it.
    pub state: Option<u32>,
    pub suggested: Vec<GridAction>,
    pub candidates: Vec<(GridAction, f32)>,
    pub chosen: Option<GridAction>,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExploreLog {
    pub steps: Vec<ExploreRecord>,
}

impl ExploreLog {
    /// Percentage of executed actions that were valid; steps without a
    /// candidate executed nothing and are not counted.
    pub fn validity(&self) -> f64 {
        let executed = self.steps.iter().filter(|s| s.chosen.is_some()).count();
        let valid = self.steps.iter().filter(|s| s.outcome == StepOutcome::Valid).count();
        if executed == 0 {
            0.0
        } else {
            100.0 * valid as f64 / executed as f64
        }
    }

    pub fn n_valid(&self) -> usize {
        self.steps.iter().filter(|s| s.outcome == StepOutcome::Valid).count()
    }
}

/// A system that can be observed, acted on and reset.
pub trait Environment {
    fn observe(&self) -> &Observation;
    /// Executes `u`; on failure the state is unchanged and the reason returned.
    fn execute(&mut self, u: &GridAction) -> Result<(), String>;
    fn reset(&mut self);
}

/// The box-stacking simulator as an environment. Each observation is a fresh
/// noisy render; resets draw a uniformly random state.
pub struct BoxStackEnv<'a> {
    world: &'a BoxWorld,
    state: usize,
    obs: Observation,
    rng: ChaCha8Rng,
}

impl<'a> BoxStackEnv<'a> {
    pub fn new(world: &'a BoxWorld, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = rng.random_range(0..world.n_states());
        let obs = world.render_id(state, render_seed(&mut rng, SeedStream::Explore));
        BoxStackEnv { world, state, obs, rng }
    }

    pub fn state(&self) -> usize {
        self.state
    }
}

impl Environment for BoxStackEnv<'_> {
    fn observe(&self) -> &Observation {
        &self.obs
    }

    fn execute(&mut self, u: &GridAction) -> Result<(), String> {
        match self.world.apply(self.world.state(self.state), u) {
            Ok(next) => {
                self.state = self.world.state_id(&next).expect("enumerated state");
                self.obs = self.world.render_id(self.state, render_seed(&mut self.rng, SeedStream::Explore));
                Ok(())
            }
            Err(crate::sim::SimError::InvalidAction { reason, .. }) => Err(reason.to_string()),
            Err(e) => Err(e.to_string()),
        }
    }

    fn reset(&mut self) {
        self.state = self.rng.random_range(0..self.world.n_states());
        self.obs = self.world.render_id(self.state, render_seed(&mut self.rng, SeedStream::Explore));
    }
}

/// One targeted exploration decision: among the suggested actions (minus the
/// reverse of `last`), the one whose predicted outcome lies farthest from the
/// covered states. Ties go to the lowest action-table index.
pub fn explore_step(
    models: &Models,
    covered: &CoveredSpace,
    obs: &Observation,
    last: Option<GridAction>,
) -> Result<(GridAction, Vec<(GridAction, f32)>, Vec<GridAction>), AceError> {
    let z = models.mm.embed(obs)?;
    let suggested: Vec<GridAction> = models.sm.suggest(obs)?.into_iter().collect();
    let banned = last.map(|u| u.reverse());
    let mut cands: Vec<GridAction> = suggested.iter().copied().filter(|u| Some(*u) != banned).collect();
    cands.sort_by_key(|u| models.actions.index_of(u).unwrap_or(usize::MAX));
    let mut scored = Vec::with_capacity(cands.len());
    let mut best: Option<(GridAction, f32)> = None;
    for u in cands {
        let zn = models.lpm.predict(&z, &u)?;
        let d = covered.nearest(&zn).map_or(f32::INFINITY, |(_, d)| d);
        scored.push((u, d));
        if best.is_none_or(|(_, b)| d > b) {
            best = Some((u, d));
        }
    }
    let (u, _) = best.ok_or(AceError::NoCandidateActions)?;
    Ok((u, scored, suggested))
}

#[derive(Debug, Clone)]
pub struct ExploreOutcome {
    pub dataset: Dataset,
    pub log: ExploreLog,
}

/// Runs `n_e` targeted exploration steps, appending every valid transition as
/// an action pair. Invalid actions reset the environment.
pub fn run_exploration(env: &mut dyn Environment, ds: &Dataset, models: &Models, n_e: usize) -> Result<ExploreOutcome, AceError> {
    let mut out = ds.clone();
    let mut log = ExploreLog::default();
    if n_e == 0 {
        return Ok(ExploreOutcome { dataset: out, log });
    }
    let latents = models.mm.embed_all(&ds.observations)?;
    let mut covered = CoveredSpace::from_latents(&latents.view(), ds, 1.0);
    let mut last: Option<GridAction> = None;
    // id of the current observation once it is stored in the dataset
    let mut current: Option<usize> = None;
    for _ in 0..n_e {
        let obs = env.observe().clone();
        let state = obs.meta_label;
        let step = explore_step(models, &covered, &obs, last);
        let (u, candidates, suggested) = match step {
            Ok(s) => s,
            Err(AceError::NoCandidateActions) => {
                let suggested = models.sm.suggest(&obs)?.into_iter().collect();
                log.steps.push(ExploreRecord { state, suggested, candidates: vec![], chosen: None, outcome: StepOutcome::NoCandidates });
                env.reset();
                last = None;
                current = None;
                continue;
            }
            Err(e) => return Err(e),
        };
        let outcome = match env.execute(&u) {
            Ok(()) => {
                let a = match current {
                    Some(id) => id,
                    None => {
                        let id = out.push_observation(obs.clone());
                        covered.push(&models.mm.embed(&obs)?, id);
                        id
                    }
                };
                let next = env.observe().clone();
                let zb = models.mm.embed(&next)?;
                let b = out.push_observation(next);
                if current.is_some() {
                    // the start is already covered from the previous step
                    covered.push(&covered.points.row(covered.len() - 1).to_vec(), a);
                }
                covered.push(&zb, b);
                out.tuples.push(TrainingTuple::action(a, b, u));
                last = Some(u);
                current = Some(b);
                StepOutcome::Valid
            }
            Err(reason) => {
                env.reset();
                last = None;
                current = None;
                StepOutcome::Invalid { reason }
            }
        };
        log.steps.push(ExploreRecord { state, suggested, candidates, chosen: Some(u), outcome });
    }
    out.provenance.record("explore", json!({ "n_e": n_e, "valid": log.n_valid() }));
    Ok(ExploreOutcome { dataset: out, log })
}

/// Baseline exploration: uniformly random actions from the full table.
pub fn explore_baseline(env: &mut dyn Environment, ds: &Dataset, actions: &ActionTable, n_e: usize, seed: u64) -> ExploreOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ds.clone();
    let mut log = ExploreLog::default();
    let mut current: Option<usize> = None;
    for _ in 0..n_e {
        let obs = env.observe().clone();
        let u = *actions.actions().choose(&mut rng).expect("nonempty action table");
        let outcome = match env.execute(&u) {
            Ok(()) => {
                let a = current.unwrap_or_else(|| out.push_observation(obs.clone()));
                let b = out.push_observation(env.observe().clone());
                out.tuples.push(TrainingTuple::action(a, b, u));
                current = Some(b);
                StepOutcome::Valid
            }
            Err(reason) => {
                env.reset();
                current = None;
                StepOutcome::Invalid { reason }
            }
        };
        log.steps.push(ExploreRecord {
            state: obs.meta_label,
            suggested: vec![],
            candidates: vec![],
            chosen: Some(u),
            outcome,
        });
    }
    if n_e > 0 {
        out.provenance.record("explore_baseline", json!({ "n_e": n_e, "seed": seed, "valid": log.n_valid() }));
    }
    ExploreOutcome { dataset: out, log }
}

/// Configurations of the three learned models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfigs {
    pub mm: MmConfig,
    pub lpm: LpmConfig,
    pub sm: SmConfig,
    pub sm_data: SmDatasetConfig,
    pub cluster: ClusterConfig,
}

impl Default for ModelConfigs {
    fn default() -> Self {
        ModelConfigs {
            mm: MmConfig::default(),
            lpm: LpmConfig::default(),
            sm: SmConfig::default(),
            sm_data: SmDatasetConfig::default(),
            // smoother core distances keep small embedding gaps from splitting clusters
            cluster: ClusterConfig { min_cluster_size: 2, min_samples: Some(8) },
        }
    }
}

impl ModelConfigs {
    /// Same configuration with every training seed replaced by `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.mm.train.seed = seed;
        c.lpm.train.seed = seed;
        c.sm.train.seed = seed;
        c.sm_data.seed = seed;
        c
    }
}

/// The three trained models plus what the pipeline derives from the mapping.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub mm: MmParams,
    pub lpm: LpmParams,
    pub sm: Suggestion<SmParams>,
    /// Per-observation posterior means of the training dataset.
    pub latents: Array2<f32>,
    pub stats: crate::mapping::LatentStats,
}

impl TrainedModels {
    pub fn view<'a>(&'a self, actions: &'a ActionTable) -> Models<'a> {
        Models { mm: &self.mm, generator: &self.mm, lpm: &self.lpm, sm: &self.sm, actions }
    }

    pub fn eps(&self, w: f32) -> f32 {
        epsilon(&self.stats, w)
    }
}

/// Trains mapping, prediction and suggestion models from scratch on `ds`.
pub fn build_models(ds: &Dataset, actions: &ActionTable, cfg: &ModelConfigs) -> Result<TrainedModels, AceError> {
    let mm = train_mm(ds, &cfg.mm)?.params;
    let latents = mm.embed_all(&ds.observations)?;
    let stats = latent_stats_from(&latents.view(), ds)?;
    let lpm = train_lpm(ds, &mm, actions, &cfg.lpm)?.params;
    let pairs = build_sm_dataset(ds, &cfg.sm_data)?;
    let net = train_sm(&ds.observations, &pairs, &cfg.sm)?.params;
    let index = build_index(&net, ds, &cfg.cluster)?;
    Ok(TrainedModels { mm, lpm, sm: Suggestion { embedder: net, index }, latents, stats })
}

/// Everything the integration produces before the roadmap is built.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub models: TrainedModels,
    pub dataset: Dataset,
    pub augment: Option<AugmentOutcome>,
    pub explore: ExploreOutcome,
    pub radius: f32,
}

#[derive(Debug, Clone)]
pub struct IntegrateOutcome {
    pub roadmap: Roadmap,
    pub prepared: Prepared,
    pub shortcuts: Vec<(usize, usize)>,
}

/// Integration stages up to and including exploration, starting from models
/// already trained on `ds`.
pub fn prepare(
    ds: &Dataset,
    initial: TrainedModels,
    env: &mut dyn Environment,
    cfg: &AceConfig,
    model_cfg: &ModelConfigs,
    actions: &ActionTable,
) -> Result<Prepared, AceError> {
    let mut dataset = ds.clone();
    dataset.provenance.record("build_models", serde_json::to_value(model_cfg).unwrap_or_default());
    let radius = cfg.radius.unwrap_or(initial.stats.mu0);
    if !(radius > 0.0) && cfg.augment {
        return Err(AceError::Config(format!("search radius must be positive, got {radius}")));
    }
    let (models, augment) = if cfg.augment {
        let eps = initial.eps(cfg.w_eps);
        let aug = augment(&dataset, &initial.view(actions), radius, eps, cfg.sort_order, cfg.rho_gate)?;
        dataset = aug.dataset.clone();
        let updated = build_models(&dataset, actions, model_cfg)?;
        dataset.provenance.record("update_models", json!({ "retrained": true }));
        (updated, Some(aug))
    } else {
        (initial, None)
    };
    let explore = run_exploration(env, &dataset, &models.view(actions), cfg.n_explore)?;
    dataset = explore.dataset.clone();
    Ok(Prepared { models, dataset, augment, explore, radius })
}

/// Final stages: roadmap on the extended dataset with ε from `w_eps`, then
/// shortcuts when enabled.
pub fn finish(prepared: &Prepared, w_eps: f32, connect_enabled: bool, rho_gate: f32, actions: &ActionTable) -> Result<(Roadmap, Vec<(usize, usize)>), AceError> {
    let eps = prepared.models.eps(w_eps);
    let latents = prepared.models.mm.embed_all(&prepared.dataset.observations)?;
    let rm = build_lsr_from_latents(&latents.view(), &prepared.dataset, eps, actions)?;
    if connect_enabled {
        Ok(connect(&rm, &prepared.models.view(actions), rho_gate)?)
    } else {
        Ok((rm, Vec::new()))
    }
}

/// The full integration: train, augment, retrain, explore, build, connect.
pub fn integrate(
    ds: &Dataset,
    env: &mut dyn Environment,
    cfg: &AceConfig,
    model_cfg: &ModelConfigs,
    actions: &ActionTable,
) -> Result<IntegrateOutcome, AceError> {
    let initial = build_models(ds, actions, model_cfg)?;
    let mut prepared = prepare(ds, initial, env, cfg, model_cfg, actions)?;
    let eps = prepared.models.eps(cfg.w_eps);
    prepared.dataset.provenance.record("build_lsr", json!({ "w_eps": cfg.w_eps, "eps": eps }));
    let (roadmap, shortcuts) = finish(&prepared, cfg.w_eps, cfg.connect, cfg.rho_gate, actions)?;
    if cfg.connect {
        prepared.dataset.provenance.record("connect", json!({ "rho_gate": cfg.rho_gate, "added": shortcuts.len() }));
    }
    Ok(IntegrateOutcome { roadmap, prepared, shortcuts })
}
