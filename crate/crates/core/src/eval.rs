//! Ground-truth metrics and the experiment harness comparing roadmap
//! variants across dataset sizes and seeds.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ace::{
    augment, augment_baseline, build_models, connect, explore_baseline, finish, prepare, run_exploration, AceConfig,
    AceError, BoxStackEnv, ExploreLog, ModelConfigs, TrainedModels,
};
use crate::data::{generate_dataset, make_queries, subsample, DataError, Dataset, QuerySet, SeedStream};
use crate::embed::Embedder;
use crate::learn::LearnError;
use crate::mapping::{epsilon, latent_stats_from, train_mm, w_grid, MappingError};
use crate::roadmap::{build_lsr_from_latents, EdgeSource, Roadmap, RoadmapError};
use crate::sim::{BoxWorld, SimConfig, SimError, TransitionGraph};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("roadmap node {0} has no ground-truth label")]
    MissingLabels(usize),
    #[error("observation without ground-truth label")]
    UnlabeledObservation,
    #[error(transparent)]
    Ace(#[from] AceError),
    #[error(transparent)]
    Roadmap(#[from] RoadmapError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid experiment config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanMetrics {
    pub pct_trans: f64,
    pub pct_all: f64,
    pub pct_any: f64,
    pub n_queries: usize,
    pub n_no_path: usize,
}

/// Scores the plans for every query. A plan is correct when its start node
/// carries the start label, every transition is valid in the ground-truth
/// graph under the edge action, and it ends at the goal label. Transition
/// accuracy pools all transitions of all proposed plans.
pub fn eval_plans(
    rm: &Roadmap,
    embedder: &dyn Embedder,
    queries: &QuerySet,
    graph: &TransitionGraph,
    max_paths: usize,
) -> Result<PlanMetrics, EvalError> {
    let latents = embedder.embed_all(&queries.observations)?;
    eval_plans_latent(rm, &latents.view(), queries, graph, max_paths)
}

/// As [`eval_plans`] with the query observations already encoded.
pub fn eval_plans_latent(
    rm: &Roadmap,
    latents: &ArrayView2<f32>,
    queries: &QuerySet,
    graph: &TransitionGraph,
    max_paths: usize,
) -> Result<PlanMetrics, EvalError> {
    let labels: Vec<u32> = rm
        .nodes
        .iter()
        .map(|n| n.label.ok_or(EvalError::MissingLabels(n.id)))
        .collect::<Result<_, _>>()?;
    // snap each holdout observation once
    let snapped: Vec<usize> = latents
        .rows()
        .into_iter()
        .map(|z| rm.nearest_node(z.as_slice().unwrap()).map(|(n, _)| n).ok_or(RoadmapError::Empty))
        .collect::<Result<_, _>>()?;
    let mut trans_ok = 0usize;
    let mut trans_total = 0usize;
    let mut all = 0usize;
    let mut any = 0usize;
    let mut no_path = 0usize;
    for &(s, g) in &queries.pairs {
        let ls = queries.observations[s].meta_label.ok_or(EvalError::UnlabeledObservation)?;
        let lg = queries.observations[g].meta_label.ok_or(EvalError::UnlabeledObservation)?;
        let paths = match rm.shortest_paths(snapped[s], snapped[g], max_paths) {
            Ok(p) => p,
            Err(RoadmapError::NoPath { .. }) => {
                no_path += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let mut n_correct = 0;
        for p in &paths {
            let mut ok = labels[p[0]] == ls && labels[*p.last().unwrap()] == lg;
            for w in p.windows(2) {
                let e = &rm.edges[&(w[0], w[1])];
                let valid = graph.is_valid_transition(labels[w[0]] as usize, &e.action, labels[w[1]] as usize);
                trans_total += 1;
                if valid {
                    trans_ok += 1;
                } else {
                    ok = false;
                }
            }
            if ok {
                n_correct += 1;
            }
        }
        if n_correct > 0 {
            any += 1;
        }
        if n_correct == paths.len() && !paths.is_empty() {
            all += 1;
        }
    }
    let n = queries.pairs.len().max(1) as f64;
    Ok(PlanMetrics {
        pct_trans: if trans_total == 0 { 100.0 } else { 100.0 * trans_ok as f64 / trans_total as f64 },
        pct_all: 100.0 * all as f64 / n,
        pct_any: 100.0 * any as f64 / n,
        n_queries: queries.pairs.len(),
        n_no_path: no_path,
    })
}

/// Count of emitted pairs and the percentage sharing a ground-truth label.
/// With no pairs the precision is `None`.
pub fn eval_augment(new_pairs: &[(usize, usize)], ds: &Dataset) -> Result<(usize, Option<f64>), EvalError> {
    let mut correct = 0;
    for &(a, b) in new_pairs {
        let la = ds.observations[a].meta_label.ok_or(EvalError::UnlabeledObservation)?;
        let lb = ds.observations[b].meta_label.ok_or(EvalError::UnlabeledObservation)?;
        if la == lb {
            correct += 1;
        }
    }
    let pct = (!new_pairs.is_empty()).then(|| 100.0 * correct as f64 / new_pairs.len() as f64);
    Ok((new_pairs.len(), pct))
}

/// Count of shortcut edges and the percentage the ground truth permits.
pub fn eval_edges(rm: &Roadmap, graph: &TransitionGraph) -> Result<(usize, Option<f64>), EvalError> {
    let mut n = 0;
    let mut ok = 0;
    for e in rm.edges.values().filter(|e| e.source == EdgeSource::Shortcut) {
        let lf = rm.nodes[e.from].label.ok_or(EvalError::MissingLabels(e.from))?;
        let lt = rm.nodes[e.to].label.ok_or(EvalError::MissingLabels(e.to))?;
        n += 1;
        if graph.is_valid_transition(lf as usize, &e.action, lt as usize) {
            ok += 1;
        }
    }
    Ok((n, (n > 0).then(|| 100.0 * ok as f64 / n as f64)))
}

pub fn eval_explore(log: &ExploreLog) -> f64 {
    log.validity()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Framework {
    #[serde(rename = "eps-LSR")]
    EpsLsr,
    #[serde(rename = "Ab-LSR")]
    AugmentBaseline,
    #[serde(rename = "A-LSR")]
    Augment,
    #[serde(rename = "C-LSR")]
    Connect,
    #[serde(rename = "Eb-LSR")]
    ExploreBaseline,
    #[serde(rename = "E-LSR")]
    Explore,
    #[serde(rename = "ACE-LSR")]
    Ace,
}

impl Framework {
    pub const ALL: [Framework; 7] = [
        Framework::EpsLsr,
        Framework::AugmentBaseline,
        Framework::Augment,
        Framework::Connect,
        Framework::ExploreBaseline,
        Framework::Explore,
        Framework::Ace,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Framework::EpsLsr => "eps-LSR",
            Framework::AugmentBaseline => "Ab-LSR",
            Framework::Augment => "A-LSR",
            Framework::Connect => "C-LSR",
            Framework::ExploreBaseline => "Eb-LSR",
            Framework::Explore => "E-LSR",
            Framework::Ace => "ACE-LSR",
        }
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Framework {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Framework::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown framework {s}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub n_pairs: usize,
    pub similar_fraction: f64,
    pub data_seed: u64,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub frameworks: Vec<Framework>,
    pub n_queries: usize,
    pub holdout_size: usize,
    pub n_validation: usize,
    pub w_grid: Vec<f32>,
    pub max_paths: usize,
    pub models: ModelConfigs,
    pub ace: AceConfig,
    /// Worker threads for independent (fraction, seed) groups; 0 = all cores.
    pub threads: usize,
    /// Also score each component on the initial models of every group.
    pub diagnostics: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sim: SimConfig::default(),
            n_pairs: 2500,
            similar_fraction: 0.2,
            data_seed: 1,
            fractions: vec![0.3, 0.4, 0.5, 0.6, 0.75, 0.8, 1.0],
            seeds: vec![1, 2, 3],
            frameworks: vec![Framework::EpsLsr, Framework::Ace],
            n_queries: 1000,
            holdout_size: 2500,
            n_validation: 200,
            w_grid: w_grid(),
            max_paths: 10,
            models: ModelConfigs::default(),
            ace: AceConfig::default(),
            threads: 0,
            diagnostics: true,
        }
    }
}

impl ExperimentConfig {
    /// Hex SHA-256 of the canonical JSON of the config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(EvalError::Config("fractions must lie in (0, 1]".into()));
        }
        if self.seeds.is_empty() || self.frameworks.is_empty() || self.w_grid.is_empty() {
            return Err(EvalError::Config("seeds, frameworks and w_grid must be nonempty".into()));
        }
        if self.max_paths == 0 {
            return Err(EvalError::Config("max_paths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of one (fraction, framework, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub fraction: f64,
    pub framework: Framework,
    pub seed: u64,
    pub w_eps: Option<f32>,
    pub eps: Option<f32>,
    pub n_nodes: Option<usize>,
    pub plan: Option<PlanMetrics>,
    pub n_pairs: Option<usize>,
    pub pct_pairs: Option<f64>,
    pub n_edges: Option<usize>,
    pub pct_edges: Option<f64>,
    pub pct_explore: Option<f64>,
    pub runtime_s: f64,
    pub error: Option<String>,
}

impl CellResult {
    fn new(fraction: f64, framework: Framework, seed: u64) -> Self {
        CellResult {
            fraction,
            framework,
            seed,
            w_eps: None,
            eps: None,
            n_nodes: None,
            plan: None,
            n_pairs: None,
            pct_pairs: None,
            n_edges: None,
            pct_edges: None,
            pct_explore: None,
            runtime_s: 0.0,
            error: None,
        }
    }

    /// `(metric, value)` rows in a fixed order.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        if let Some(p) = &self.plan {
            out.extend([("pct_trans", p.pct_trans), ("pct_all", p.pct_all), ("pct_any", p.pct_any)]);
        }
        let opt = [
            ("n_pairs", self.n_pairs.map(|v| v as f64)),
            ("pct_pairs", self.pct_pairs),
            ("n_edges", self.n_edges.map(|v| v as f64)),
            ("pct_edges", self.pct_edges),
            ("pct_explore", self.pct_explore),
            ("w_eps", self.w_eps.map(f64::from)),
            ("n_nodes", self.n_nodes.map(|v| v as f64)),
        ];
        out.extend(opt.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub fraction: f64,
    pub framework: Framework,
    pub metric: String,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub cells: Vec<CellResult>,
    #[serde(default)]
    pub diagnostics: Vec<GroupDiagnostics>,
    pub aggregates: Vec<Aggregate>,
    pub runtime_s: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Mean and standard deviation per (fraction, framework, metric).
pub fn aggregate(cells: &[CellResult]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(u64, Framework, &'static str), Vec<f64>> = BTreeMap::new();
    for c in cells {
        for (k, v) in c.metrics() {
            groups.entry((c.fraction.to_bits(), c.framework, k)).or_default().push(v);
        }
    }
    groups
        .into_iter()
        .map(|((f, fw, k), vals)| {
            let (mean, std) = mean_std(&vals);
            Aggregate { fraction: f64::from_bits(f), framework: fw, metric: k.to_string(), mean, std, n: vals.len() }
        })
        .collect()
}

impl ExperimentReport {
    pub fn aggregate_of(&self, fraction: f64, framework: Framework, metric: &str) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| (a.fraction - fraction).abs() < 1e-12 && a.framework == framework && a.metric == metric)
    }

    /// One row per (fraction, framework, seed, metric).
    pub fn write_csv(&self, w: impl std::io::Write) -> Result<(), EvalError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["fraction", "framework", "seed", "metric", "value", "config_hash"])?;
        for c in &self.cells {
            for (k, v) in c.metrics() {
                wr.write_record([
                    c.fraction.to_string(),
                    c.framework.to_string(),
                    c.seed.to_string(),
                    k.to_string(),
                    v.to_string(),
                    self.config_hash.clone(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// `% any` per fraction and framework, mean and std over seeds.
    pub fn write_series(&self, w: impl std::io::Write) -> Result<(), EvalError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["fraction", "framework", "pct_any_mean", "pct_any_std", "n_seeds"])?;
        for a in self.aggregates.iter().filter(|a| a.metric == "pct_any") {
            wr.write_record([
                a.fraction.to_string(),
                a.framework.to_string(),
                a.mean.to_string(),
                a.std.to_string(),
                a.n.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Writes `report.json`, `results.csv`, `series.csv` and `components.csv` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(self)?)?;
        self.write_csv(std::fs::File::create(dir.join("results.csv"))?)?;
        self.write_series(std::fs::File::create(dir.join("series.csv"))?)?;
        let mut wr = csv::Writer::from_path(dir.join("components.csv"))?;
        for d in &self.diagnostics {
            wr.serialize(d)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Shared ground truth and query splits.
pub struct EvalContext {
    pub world: BoxWorld,
    pub graph: TransitionGraph,
    pub test: QuerySet,
    pub validation: QuerySet,
}

impl EvalContext {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, EvalError> {
        let world = BoxWorld::new(cfg.sim.clone())?;
        let graph = world.ground_truth_graph();
        let test = make_queries(&world, cfg.n_queries, cfg.holdout_size, cfg.data_seed, SeedStream::Holdout)?;
        let validation = make_queries(&world, cfg.n_validation, cfg.holdout_size.min(2 * cfg.n_validation.max(1)), cfg.data_seed, SeedStream::Validation)?;
        Ok(EvalContext { world, graph, test, validation })
    }
}

/// Query latents under one mapping.
struct Encoded {
    test: Array2<f32>,
    validation: Array2<f32>,
}

impl Encoded {
    fn new(mm: &dyn Embedder, ctx: &EvalContext) -> Result<Self, EvalError> {
        Ok(Encoded { test: mm.embed_all(&ctx.test.observations)?, validation: mm.embed_all(&ctx.validation.observations)? })
    }
}

/// Roadmap variant evaluated across the w grid: builds one roadmap per w,
/// picks the w with the best validation `% any` (first on ties) and scores the
/// test queries with it.
fn select_and_score(
    ctx: &EvalContext,
    cfg: &ExperimentConfig,
    enc: &Encoded,
    mut build: impl FnMut(f32) -> Result<Roadmap, EvalError>,
    cell: &mut CellResult,
) -> Result<Roadmap, EvalError> {
    let mut best: Option<(f64, f32, Roadmap)> = None;
    for &w in &cfg.w_grid {
        let rm = build(w)?;
        let m = eval_plans_latent(&rm, &enc.validation.view(), &ctx.validation, &ctx.graph, cfg.max_paths)?;
        if best.as_ref().is_none_or(|(b, _, _)| m.pct_any > *b) {
            best = Some((m.pct_any, w, rm));
        }
    }
    let (_, w, rm) = best.expect("nonempty grid");
    cell.plan = Some(eval_plans_latent(&rm, &enc.test.view(), &ctx.test, &ctx.graph, cfg.max_paths)?);
    cell.w_eps = Some(w);
    cell.eps = Some(rm.eps);
    cell.n_nodes = Some(rm.n_nodes());
    Ok(rm)
}

fn plain_builder<'a>(
    latents: &'a Array2<f32>,
    ds: &'a Dataset,
    stats: crate::mapping::LatentStats,
    ctx: &'a EvalContext,
) -> impl FnMut(f32) -> Result<Roadmap, EvalError> + 'a {
    move |w| Ok(build_lsr_from_latents(&latents.view(), ds, epsilon(&stats, w), ctx.world.action_table())?)
}

/// Component scores on the initial models of one (fraction, seed) group,
/// independent of any roadmap evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDiagnostics {
    pub fraction: f64,
    pub seed: u64,
    pub n_pairs: usize,
    pub pct_pairs: Option<f64>,
    pub n_pairs_baseline: usize,
    pub pct_pairs_baseline: Option<f64>,
    pub pct_explore: f64,
    pub pct_explore_baseline: f64,
    pub n_edges: usize,
    pub pct_edges: Option<f64>,
    pub error: Option<String>,
}

fn diagnose(
    ctx: &EvalContext,
    cfg: &ExperimentConfig,
    ds: &Dataset,
    m0: &TrainedModels,
    fraction: f64,
    seed: u64,
) -> Result<GroupDiagnostics, EvalError> {
    let table = ctx.world.action_table();
    let models = m0.view(table);
    let r = cfg.ace.radius.unwrap_or(m0.stats.mu0);
    let eps = m0.eps(cfg.ace.w_eps);
    let aug = augment(ds, &models, r, eps, cfg.ace.sort_order, cfg.ace.rho_gate)?;
    let (n_pairs, pct_pairs) = eval_augment(&aug.new_pairs, &aug.dataset)?;
    let base = augment_baseline(ds, &m0.mm, r)?;
    let (n_pairs_baseline, pct_pairs_baseline) = eval_augment(&base.new_pairs, &base.dataset)?;
    let env_seed = seed ^ 0x5eed_0000;
    let mut env = BoxStackEnv::new(&ctx.world, env_seed);
    let pct_explore = eval_explore(&run_exploration(&mut env, ds, &models, cfg.ace.n_explore)?.log);
    let mut env = BoxStackEnv::new(&ctx.world, env_seed);
    let pct_explore_baseline = eval_explore(&explore_baseline(&mut env, ds, table, cfg.ace.n_explore, env_seed).log);
    let rm = build_lsr_from_latents(&m0.latents.view(), ds, eps, table)?;
    let (rm, _) = connect(&rm, &models, cfg.ace.rho_gate)?;
    let (n_edges, pct_edges) = eval_edges(&rm, &ctx.graph)?;
    Ok(GroupDiagnostics {
        fraction,
        seed,
        n_pairs,
        pct_pairs,
        n_pairs_baseline,
        pct_pairs_baseline,
        pct_explore,
        pct_explore_baseline,
        n_edges,
        pct_edges,
        error: None,
    })
}

/// Runs every requested framework for one (fraction, seed) group, sharing the
/// initially trained models between them.
pub fn run_group(
    ctx: &EvalContext,
    cfg: &ExperimentConfig,
    full: &Dataset,
    fraction: f64,
    seed: u64,
) -> (Vec<CellResult>, Option<GroupDiagnostics>) {
    let t0 = Instant::now();
    let ds = match subsample(full, fraction, cfg.data_seed) {
        Ok(d) => d,
        Err(e) => {
            let cells = cfg
                .frameworks
                .iter()
                .map(|&fw| CellResult { error: Some(e.to_string()), ..CellResult::new(fraction, fw, seed) })
                .collect();
            return (cells, None);
        }
    };
    let mcfg = cfg.models.with_seed(seed);
    let table = ctx.world.action_table();
    let initial = build_models(&ds, table, &mcfg);
    let base_time = t0.elapsed().as_secs_f64();
    let mut out = Vec::new();
    for &fw in &cfg.frameworks {
        let t = Instant::now();
        let mut cell = CellResult::new(fraction, fw, seed);
        let res = match &initial {
            Ok(m0) => run_framework(ctx, cfg, &mcfg, &ds, m0, fw, seed, &mut cell),
            Err(e) => Err(EvalError::Config(format!("initial models: {e}"))),
        };
        if let Err(e) = res {
            cell.error = Some(e.to_string());
        }
        cell.runtime_s = t.elapsed().as_secs_f64() + base_time;
        out.push(cell);
    }
    let diag = match (&initial, cfg.diagnostics) {
        (Ok(m0), true) => Some(diagnose(ctx, cfg, &ds, m0, fraction, seed).unwrap_or_else(|e| GroupDiagnostics {
            fraction,
            seed,
            n_pairs: 0,
            pct_pairs: None,
            n_pairs_baseline: 0,
            pct_pairs_baseline: None,
            pct_explore: 0.0,
            pct_explore_baseline: 0.0,
            n_edges: 0,
            pct_edges: None,
            error: Some(e.to_string()),
        })),
        _ => None,
    };
    (out, diag)
}

#[allow(clippy::too_many_arguments)]
fn run_framework(
    ctx: &EvalContext,
    cfg: &ExperimentConfig,
    mcfg: &ModelConfigs,
    ds: &Dataset,
    m0: &TrainedModels,
    fw: Framework,
    seed: u64,
    cell: &mut CellResult,
) -> Result<(), EvalError> {
    let table = ctx.world.action_table();
    let enc0 = Encoded::new(&m0.mm, ctx)?;
    let env_seed = seed ^ 0x5eed_0000;
    match fw {
        Framework::EpsLsr => {
            select_and_score(ctx, cfg, &enc0, plain_builder(&m0.latents, ds, m0.stats, ctx), cell)?;
        }
        Framework::Connect => {
            let models = m0.view(table);
            let (rm, _) = select_and_score(
                ctx,
                cfg,
                &enc0,
                |w| {
                    let rm = build_lsr_from_latents(&m0.latents.view(), ds, m0.eps(w), table)?;
                    Ok(connect(&rm, &models, cfg.ace.rho_gate)?.0)
                },
                cell,
            )
            .map(|rm| (rm, ()))?;
            let (n, pct) = eval_edges(&rm, &ctx.graph)?;
            cell.n_edges = Some(n);
            cell.pct_edges = pct;
        }
        Framework::Explore | Framework::ExploreBaseline => {
            let mut env = BoxStackEnv::new(&ctx.world, env_seed);
            let ex = if fw == Framework::Explore {
                run_exploration(&mut env, ds, &m0.view(table), cfg.ace.n_explore)?
            } else {
                explore_baseline(&mut env, ds, table, cfg.ace.n_explore, env_seed)
            };
            cell.pct_explore = Some(eval_explore(&ex.log));
            let lat = m0.mm.embed_all(&ex.dataset.observations)?;
            select_and_score(ctx, cfg, &enc0, plain_builder(&lat, &ex.dataset, m0.stats, ctx), cell)?;
        }
        Framework::Augment | Framework::AugmentBaseline => {
            let r = cfg.ace.radius.unwrap_or(m0.stats.mu0);
            let aug = if fw == Framework::Augment {
                augment(ds, &m0.view(table), r, m0.eps(cfg.ace.w_eps), cfg.ace.sort_order, cfg.ace.rho_gate)?
            } else {
                augment_baseline(ds, &m0.mm, r)?
            };
            let (n, pct) = eval_augment(&aug.new_pairs, &aug.dataset)?;
            cell.n_pairs = Some(n);
            cell.pct_pairs = pct;
            let mm1 = train_mm(&aug.dataset, &mcfg.mm)?.params;
            let lat = mm1.embed_all(&aug.dataset.observations)?;
            let stats = latent_stats_from(&lat.view(), &aug.dataset)?;
            let enc1 = Encoded::new(&mm1, ctx)?;
            select_and_score(ctx, cfg, &enc1, plain_builder(&lat, &aug.dataset, stats, ctx), cell)?;
        }
        Framework::Ace => {
            let mut env = BoxStackEnv::new(&ctx.world, env_seed);
            let prepared = prepare(ds, m0.clone(), &mut env, &cfg.ace, mcfg, table)?;
            if let Some(aug) = &prepared.augment {
                let (n, pct) = eval_augment(&aug.new_pairs, &aug.dataset)?;
                cell.n_pairs = Some(n);
                cell.pct_pairs = pct;
            }
            cell.pct_explore = Some(eval_explore(&prepared.explore.log));
            let enc1 = Encoded::new(&prepared.models.mm, ctx)?;
            let rm = select_and_score(
                ctx,
                cfg,
                &enc1,
                |w| Ok(finish(&prepared, w, cfg.ace.connect, cfg.ace.rho_gate, table)?.0),
                cell,
            )?;
            let (n, pct) = eval_edges(&rm, &ctx.graph)?;
            cell.n_edges = Some(n);
            cell.pct_edges = pct;
        }
    }
    Ok(())
}

/// Runs the configured grid. Groups run on up to `cfg.threads` workers;
/// results are sorted by (fraction, framework, seed) so output is
/// independent of scheduling. Cell failures are recorded, not raised.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, EvalError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let ctx = EvalContext::new(cfg)?;
    let full = generate_dataset(&ctx.world, cfg.n_pairs, cfg.similar_fraction, cfg.data_seed)?;
    let jobs: Vec<(f64, u64)> = cfg.fractions.iter().flat_map(|&f| cfg.seeds.iter().map(move |&s| (f, s))).collect();
    let threads = if cfg.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        cfg.threads
    }
    .min(jobs.len())
    .max(1);
    let queue = Mutex::new(jobs.into_iter());
    let results = Mutex::new(Vec::new());
    let diagnostics = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let job = queue.lock().unwrap().next();
                let Some((f, seed)) = job else { break };
                let (cells, diag) = run_group(&ctx, cfg, &full, f, seed);
                results.lock().unwrap().extend(cells);
                diagnostics.lock().unwrap().extend(diag);
            });
        }
    });
    let mut cells = results.into_inner().unwrap();
    cells.sort_by(|a, b| {
        a.fraction.total_cmp(&b.fraction).then(a.framework.cmp(&b.framework)).then(a.seed.cmp(&b.seed))
    });
    let mut diagnostics = diagnostics.into_inner().unwrap();
    diagnostics.sort_by(|a, b| a.fraction.total_cmp(&b.fraction).then(a.seed.cmp(&b.seed)));
    let aggregates = aggregate(&cells);
    Ok(ExperimentReport {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        cells,
        diagnostics,
        aggregates,
        runtime_s: t0.elapsed().as_secs_f64(),
    })
}

/// Report summary as JSON for the command line.
pub fn summary(report: &ExperimentReport) -> serde_json::Value {
    json!({
        "config_hash": report.config_hash,
        "runtime_s": report.runtime_s,
        "errors": report.cells.iter().filter(|c| c.error.is_some()).count(),
        "series": report.aggregates.iter().filter(|a| a.metric == "pct_any").map(|a| json!({
            "fraction": a.fraction, "framework": a.framework, "mean": a.mean, "std": a.std,
        })).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::OracleEmbedder;

    fn oracle_full_roadmap(world: &BoxWorld) -> (Roadmap, OracleEmbedder) {
        let mut ds = Dataset::default();
        for s in 0..world.n_states() {
            for u in world.valid_actions(world.state(s)) {
                let a = ds.push_observation(world.render_id(s, 0));
                let b = ds.push_observation(world.render_id(world.transition(s, &u).unwrap(), 0));
                ds.tuples.push(crate::data::TrainingTuple::action(a, b, u));
            }
        }
        let emb = OracleEmbedder::new(world.n_states(), 10.0);
        let rm = crate::roadmap::build_lsr(&emb, &ds, 1.0, world.action_table()).unwrap();
        (rm, emb)
    }

    #[test]
    fn oracle_roadmap_scores_perfectly() {
        let world = BoxWorld::new(SimConfig::default()).unwrap();
        let (rm, emb) = oracle_full_roadmap(&world);
        let q = make_queries(&world, 100, 200, 4, SeedStream::Holdout).unwrap();
        let m = eval_plans(&rm, &emb, &q, &world.ground_truth_graph(), 10).unwrap();
        assert_eq!((m.pct_trans, m.pct_all, m.pct_any), (100.0, 100.0, 100.0));
    }

    #[test]
    fn corrupted_edges_fail_the_query() {
        let world = BoxWorld::new(SimConfig::default()).unwrap();
        let (mut rm, emb) = oracle_full_roadmap(&world);
        let graph = world.ground_truth_graph();
        // a one-hop query whose only shortest path uses a corrupted edge
        let s = 0usize;
        let (u, t) = graph.out_edges(s)[0];
        let (from, to) = (
            rm.nodes.iter().find(|n| n.label == Some(s as u32)).unwrap().id,
            rm.nodes.iter().find(|n| n.label == Some(t as u32)).unwrap().id,
        );
        let wrong = *world.action_table().actions().iter().find(|a| **a != u).unwrap();
        rm.edges.get_mut(&(from, to)).unwrap().action = wrong;
        let q = QuerySet { observations: vec![world.render_id(s, 1), world.render_id(t, 2)], pairs: vec![(0, 1)] };
        let m = eval_plans(&rm, &emb, &q, &graph, 10).unwrap();
        assert_eq!(m.pct_any, 0.0);
        assert_eq!(m.pct_trans, 0.0);
    }

    #[test]
    fn pair_and_edge_precision() {
        let world = BoxWorld::new(SimConfig::default()).unwrap();
        let mut ds = Dataset::default();
        let a = ds.push_observation(world.render_id(3, 1));
        let b = ds.push_observation(world.render_id(3, 2));
        let c = ds.push_observation(world.render_id(4, 2));
        assert_eq!(eval_augment(&[(a, b)], &ds).unwrap(), (1, Some(100.0)));
        assert_eq!(eval_augment(&[(a, b), (a, c)], &ds).unwrap(), (2, Some(50.0)));
        assert_eq!(eval_augment(&[], &ds).unwrap(), (0, None));

        let (rm, _) = oracle_full_roadmap(&world);
        let same: Vec<_> = rm.nodes.iter().filter(|n| n.label.is_some()).take(2).map(|n| n.id).collect();
        // two nodes with distinct labels; relabel the second to force identical labels
        let mut rm2 = rm.clone();
        rm2.nodes[same[1]].label = rm2.nodes[same[0]].label;
        rm2.edges.clear();
        rm2.insert_shortcut(same[0], same[1], world.action_table().actions()[0]).unwrap();
        assert_eq!(eval_edges(&rm2, &world.ground_truth_graph()).unwrap(), (1, Some(0.0)));
    }

    #[test]
    fn aggregation_and_csv() {
        let mut cells = Vec::new();
        for (seed, any) in [(1, 40.0), (2, 60.0)] {
            let mut c = CellResult::new(0.5, Framework::EpsLsr, seed);
            c.plan = Some(PlanMetrics { pct_trans: 90.0, pct_all: any - 10.0, pct_any: any, n_queries: 10, n_no_path: 0 });
            cells.push(c);
        }
        let aggs = aggregate(&cells);
        let any = aggs.iter().find(|a| a.metric == "pct_any").unwrap();
        assert_eq!((any.mean, any.std, any.n), (50.0, 10.0, 2));
        let cfg = ExperimentConfig::default();
        let report =
            ExperimentReport { config_hash: cfg.hash(), config: cfg, cells, diagnostics: vec![], aggregates: aggs, runtime_s: 0.0 };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("fraction,framework,seed,metric,value,config_hash\n"));
        assert!(text.contains("0.5,eps-LSR,2,pct_any,60,"));
    }

    #[test]
    fn framework_names_round_trip() {
        for f in Framework::ALL {
            assert_eq!(f.name().parse::<Framework>().unwrap(), f);
            assert_eq!(serde_json::to_value(f).unwrap(), json!(f.name()));
        }
    }
}
