use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;

use acelsr::ace::{
    augment, augment_baseline, connect, explore_baseline, integrate, run_exploration, AceError, BoxStackEnv, Models,
};
use acelsr::data::pack::Persist;
use acelsr::data::{build_sm_dataset, generate_dataset, subsample, DataError, Dataset};
use acelsr::embed::Embedder;
use acelsr::eval::{eval_augment, eval_edges, eval_explore, eval_plans, run_experiment, summary, EvalContext, EvalError, ExperimentConfig, ExperimentReport};
use acelsr::lpm::{train_lpm, LpmError, LpmParams};
use acelsr::mapping::{epsilon, latent_stats, train_mm, MappingError, MmParams};
use acelsr::roadmap::{build_lsr, Roadmap, RoadmapError};
use acelsr::sim::SimError;
use acelsr::suggestion::{build_index, train_sm, SmParams, SuggestError, Suggestion, SuggestionIndex};
use acelsr::BoxWorld;

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Lpm(#[from] LpmError),
    #[error(transparent)]
    Suggest(#[from] SuggestError),
    #[error(transparent)]
    Roadmap(#[from] RoadmapError),
    #[error(transparent)]
    Ace(#[from] AceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Data(_) => "data",
            CliError::Sim(_) => "sim",
            CliError::Mapping(_) => "mapping",
            CliError::Lpm(_) => "lpm",
            CliError::Suggest(_) => "suggestion",
            CliError::Roadmap(_) => "roadmap",
            CliError::Ace(_) => "ace",
            CliError::Eval(_) => "eval",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
            CliError::Config(_) => "config",
        }
    }
}

#[derive(Parser)]
#[command(name = "acelsr", version, about = "Latent space roadmaps with augmentation, connection and exploration")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Directory for all outputs.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// JSON config file; keys mirror the experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override `dotted.key=value` (value parsed as JSON, else string). Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a training dataset from the simulator.
    GenData {
        #[arg(long)]
        n_pairs: Option<usize>,
        #[arg(long)]
        similar_fraction: Option<f64>,
    },
    /// Draw a uniform subset of a dataset.
    Subsample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fraction: f64,
    },
    /// Train one of the models.
    Train {
        #[command(subcommand)]
        model: TrainCmd,
    },
    /// Build a roadmap from a dataset and a mapping model.
    BuildLsr {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        mm: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        w_eps: Option<f32>,
    },
    /// Run one of the roadmap extension stages.
    Ace {
        #[command(subcommand)]
        stage: AceCmd,
    },
    /// Score a roadmap on held-out ground-truth queries.
    Eval {
        #[arg(long)]
        roadmap: PathBuf,
        #[arg(long)]
        mm: PathBuf,
    },
    /// Run the full comparison grid.
    Experiment,
    /// Rewrite CSV tables from a saved report.
    Report {
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Subcommand)]
enum TrainCmd {
    Mm {
        #[arg(long)]
        data: PathBuf,
    },
    Lpm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        mm: PathBuf,
    },
    Sm {
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Args)]
struct ModelPaths {
    #[arg(long)]
    mm: PathBuf,
    #[arg(long)]
    lpm: PathBuf,
    #[arg(long)]
    sm: PathBuf,
    #[arg(long)]
    sm_index: PathBuf,
}

#[derive(Subcommand)]
enum AceCmd {
    /// Find new similar pairs via latent dynamics.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        models: ModelPaths,
        /// Use the plain radius baseline instead.
        #[arg(long)]
        baseline: bool,
    },
    /// Add predicted shortcut edges to a roadmap.
    Connect {
        #[arg(long)]
        roadmap: PathBuf,
        #[command(flatten)]
        models: ModelPaths,
    },
    /// Collect new transitions with suggested actions.
    Explore {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        models: ModelPaths,
        /// Use the uniformly random explorer instead.
        #[arg(long)]
        baseline: bool,
    },
    /// Train all models and run every stage end to end.
    Integrate {
        #[arg(long)]
        data: PathBuf,
    },
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        cur = cur.get_mut(*p).ok_or_else(|| CliError::Config(format!("unknown key {key}")))?;
    }
    let last = parts[parts.len() - 1];
    let obj = cur.as_object_mut().ok_or_else(|| CliError::Config(format!("unknown key {key}")))?;
    if !obj.contains_key(last) {
        return Err(CliError::Config(format!("unknown key {key}")));
    }
    obj.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k).or_insert(Value::Null), v);
            }
        }
        (a, b) => *a = b,
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig, CliError> {
    let mut v = serde_json::to_value(ExperimentConfig::default())?;
    if let Some(path) = &c.config {
        merge(&mut v, serde_json::from_slice(&std::fs::read(path)?)?);
    }
    for o in &c.overrides {
        let (k, raw) = o.split_once('=').ok_or_else(|| CliError::Config(format!("expected KEY=VALUE, got {o}")))?;
        let val = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut v, k, val)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(v).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(dir: &Path, name: &str, v: &Value) -> Result<PathBuf, CliError> {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(v)?)?;
    Ok(p)
}

struct LoadedModels {
    mm: MmParams,
    lpm: LpmParams,
    sm: Suggestion<SmParams>,
}

impl LoadedModels {
    fn load(p: &ModelPaths) -> Result<Self, CliError> {
        Ok(LoadedModels {
            mm: MmParams::load(&p.mm)?,
            lpm: LpmParams::load(&p.lpm)?,
            sm: Suggestion { embedder: SmParams::load(&p.sm)?, index: SuggestionIndex::load(&p.sm_index)? },
        })
    }

    fn view<'a>(&'a self, world: &'a BoxWorld) -> Models<'a> {
        Models { mm: &self.mm, generator: &self.mm, lpm: &self.lpm, sm: &self.sm, actions: world.action_table() }
    }
}

fn run(cli: Cli) -> Result<Value, CliError> {
    let mut cfg = load_config(&cli.common)?;
    let seed = cli.common.seed;
    let models_cfg = cfg.models.with_seed(seed);
    let out = cli.common.out_dir.clone();
    std::fs::create_dir_all(&out)?;
    let world = BoxWorld::new(cfg.sim.clone())?;
    let table = world.action_table();
    let path = |name: &str| out.join(name);

    match cli.cmd {
        Command::GenData { n_pairs, similar_fraction } => {
            let n = n_pairs.unwrap_or(cfg.n_pairs);
            let f = similar_fraction.unwrap_or(cfg.similar_fraction);
            let ds = generate_dataset(&world, n, f, seed)?;
            ds.save(path("dataset.acepack"))?;
            ds.export_jsonl(std::fs::File::create(path("dataset.jsonl"))?)?;
            let (n_action, n_similar) = ds.counts();
            Ok(json!({ "dataset": path("dataset.acepack"), "observations": ds.observations.len(), "action_pairs": n_action, "similar_pairs": n_similar }))
        }
        Command::Subsample { data, fraction } => {
            let ds = subsample(&Dataset::load(&data)?, fraction, seed)?;
            ds.save(path("subsample.acepack"))?;
            Ok(json!({ "dataset": path("subsample.acepack"), "tuples": ds.tuples.len() }))
        }
        Command::Train { model } => match model {
            TrainCmd::Mm { data } => {
                let ds = Dataset::load(&data)?;
                let trained = train_mm(&ds, &models_cfg.mm)?;
                let stats = latent_stats(&trained.params, &ds)?;
                trained.params.save(path("mm.acepack"))?;
                write_json(&out, "mm_trace.json", &json!({ "loss": trained.trace, "stats": stats }))?;
                Ok(json!({ "mm": path("mm.acepack"), "mu0": stats.mu0, "sigma0": stats.sigma0, "final_loss": trained.trace.last() }))
            }
            TrainCmd::Lpm { data, mm } => {
                let ds = Dataset::load(&data)?;
                let mm = MmParams::load(&mm)?;
                let trained = train_lpm(&ds, &mm, table, &models_cfg.lpm)?;
                trained.params.save(path("lpm.acepack"))?;
                Ok(json!({ "lpm": path("lpm.acepack"), "final_loss": trained.trace.last() }))
            }
            TrainCmd::Sm { data } => {
                let ds = Dataset::load(&data)?;
                let tuples = build_sm_dataset(&ds, &models_cfg.sm_data)?;
                let trained = train_sm(&ds.observations, &tuples, &models_cfg.sm)?;
                let index = build_index(&trained.params, &ds, &models_cfg.cluster)?;
                trained.params.save(path("sm.acepack"))?;
                index.save(path("sm_index.acepack"))?;
                Ok(json!({ "sm": path("sm.acepack"), "sm_index": path("sm_index.acepack"), "final_loss": trained.trace.last() }))
            }
        },
        Command::BuildLsr { data, mm, w_eps } => {
            let ds = Dataset::load(&data)?;
            let mm = MmParams::load(&mm)?;
            let stats = latent_stats(&mm, &ds)?;
            let w = w_eps.unwrap_or(cfg.ace.w_eps);
            let eps = epsilon(&stats, w);
            let rm = build_lsr(&mm, &ds, eps, table)?;
            rm.save(path("roadmap.acepack"))?;
            write_json(&out, "roadmap.json", &rm.to_json())?;
            Ok(json!({ "roadmap": path("roadmap.acepack"), "w_eps": w, "eps": eps, "nodes": rm.n_nodes(), "edges": rm.n_edges() }))
        }
        Command::Ace { stage } => match stage {
            AceCmd::Augment { data, models, baseline } => {
                let ds = Dataset::load(&data)?;
                let m = LoadedModels::load(&models)?;
                let stats = latent_stats(&m.mm, &ds)?;
                let radius = cfg.ace.radius.unwrap_or(stats.mu0);
                let res = if baseline {
                    augment_baseline(&ds, &m.mm, radius)?
                } else {
                    let eps = epsilon(&stats, cfg.ace.w_eps);
                    augment(&ds, &m.view(&world), radius, eps, cfg.ace.sort_order, cfg.ace.rho_gate)?
                };
                res.dataset.save(path("augmented.acepack"))?;
                let (n, pct) = eval_augment(&res.new_pairs, &res.dataset)?;
                write_json(&out, "new_pairs.json", &json!(res.new_pairs))?;
                Ok(json!({ "dataset": path("augmented.acepack"), "n_pairs": n, "pct_pairs": pct }))
            }
            AceCmd::Connect { roadmap, models } => {
                let rm = Roadmap::load(&roadmap)?;
                let m = LoadedModels::load(&models)?;
                let (rm2, added) = connect(&rm, &m.view(&world), cfg.ace.rho_gate)?;
                rm2.save(path("roadmap_connected.acepack"))?;
                write_json(&out, "roadmap_connected.json", &rm2.to_json())?;
                let (n, pct) = eval_edges(&rm2, &world.ground_truth_graph())?;
                Ok(json!({ "roadmap": path("roadmap_connected.acepack"), "added": added.len(), "n_edges": n, "pct_edges": pct }))
            }
            AceCmd::Explore { data, models, baseline } => {
                let ds = Dataset::load(&data)?;
                let mut env = BoxStackEnv::new(&world, seed);
                let res = if baseline {
                    explore_baseline(&mut env, &ds, table, cfg.ace.n_explore, seed)
                } else {
                    let m = LoadedModels::load(&models)?;
                    run_exploration(&mut env, &ds, &m.view(&world), cfg.ace.n_explore)?
                };
                res.dataset.save(path("explored.acepack"))?;
                write_json(&out, "explore_log.json", &serde_json::to_value(&res.log)?)?;
                Ok(json!({ "dataset": path("explored.acepack"), "steps": res.log.steps.len(), "pct_explore": eval_explore(&res.log) }))
            }
            AceCmd::Integrate { data } => {
                let ds = Dataset::load(&data)?;
                let mut env = BoxStackEnv::new(&world, seed);
                cfg.ace.seed = seed;
                let res = integrate(&ds, &mut env, &cfg.ace, &models_cfg, table)?;
                let p = &res.prepared;
                res.roadmap.save(path("roadmap.acepack"))?;
                write_json(&out, "roadmap.json", &res.roadmap.to_json())?;
                p.dataset.save(path("dataset_ace.acepack"))?;
                p.models.mm.save(path("mm.acepack"))?;
                p.models.lpm.save(path("lpm.acepack"))?;
                p.models.sm.embedder.save(path("sm.acepack"))?;
                p.models.sm.index.save(path("sm_index.acepack"))?;
                Ok(json!({
                    "roadmap": path("roadmap.acepack"),
                    "nodes": res.roadmap.n_nodes(),
                    "edges": res.roadmap.n_edges(),
                    "shortcuts": res.shortcuts.len(),
                    "new_pairs": p.augment.as_ref().map(|a| a.new_pairs.len()),
                    "pct_explore": eval_explore(&p.explore.log),
                    "provenance": p.dataset.provenance.stages(),
                }))
            }
        },
        Command::Eval { roadmap, mm } => {
            let rm = Roadmap::load(&roadmap)?;
            let mm = MmParams::load(&mm)?;
            let ctx = EvalContext::new(&cfg)?;
            let m = eval_plans(&rm, &mm as &dyn Embedder, &ctx.test, &ctx.graph, cfg.max_paths)?;
            let (n, pct) = eval_edges(&rm, &ctx.graph)?;
            let v = json!({ "plans": m, "n_edges": n, "pct_edges": pct });
            write_json(&out, "metrics.json", &v)?;
            Ok(v)
        }
        Command::Experiment => {
            let report = run_experiment(&cfg)?;
            report.write_all(&out)?;
            Ok(summary(&report))
        }
        Command::Report { report } => {
            let r: ExperimentReport = serde_json::from_slice(&std::fs::read(&report)?)?;
            r.write_csv(std::fs::File::create(path("results.csv"))?)?;
            r.write_series(std::fs::File::create(path("series.csv"))?)?;
            Ok(summary(&r))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
