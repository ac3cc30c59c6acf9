//! Acceptance run: one PASS/FAIL line per criterion. Runs the full
//! two-framework experiment, so expect tens of minutes in release-optimized
//! test builds. Exits nonzero on any FAIL only when `ACCEPTANCE_STRICT=1`.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use acelsr::ace::{augment, connect, ModelConfigs, Models, SortOrder};
use acelsr::data::pack::Persist;
use acelsr::data::{generate_dataset, subsample, Dataset, Pack, TrainingTuple};
use acelsr::embed::{OracleEmbedder, OracleGenerator};
use acelsr::eval::{run_experiment, ExperimentConfig, ExperimentReport, Framework};
use acelsr::lpm::{train_lpm, LpmParams, OracleDynamics};
use acelsr::mapping::{train_mm, MmConfig, MmParams};
use acelsr::roadmap::{build_lsr, build_lsr_from_latents, Roadmap};
use acelsr::sim::{enumerate_actions, enumerate_states};
use acelsr::suggestion::{build_index, train_sm, OracleSuggester, SmParams, SuggestionIndex};
use acelsr::ace::{explore_baseline, BoxStackEnv};
use acelsr::data::build_sm_dataset;
use acelsr::{BoxWorld, SimConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SEEDS: [u64; 3] = [1, 2, 3];
const FRACTIONS: [f64; 3] = [0.3, 0.5, 0.75];
const SCARCE: f64 = 0.5;

struct Line {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn line(id: u32, name: &'static str, pass: bool, detail: String) -> Line {
    eprintln!("[{id}] {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Line { id, name, pass, detail }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn c1_enumeration() -> Line {
    let t = Instant::now();
    let cfg = SimConfig::default();
    let states = enumerate_states(&cfg).unwrap().len();
    let actions = enumerate_actions(&cfg).unwrap().len();
    let world = BoxWorld::new(cfg).unwrap();
    let connected = world.ground_truth_graph().is_strongly_connected();
    let secs = t.elapsed().as_secs_f64();
    let pass = states == 288 && actions == 48 && connected && secs < 1.0;
    line(1, "enumeration", pass, format!("states={states} actions={actions} strongly_connected={connected} time={secs:.3}s (<1s)"))
}

fn c2_oracle_planning() -> Line {
    let t = Instant::now();
    let world = BoxWorld::new(SimConfig::default()).unwrap();
    let graph = world.ground_truth_graph();
    let mut ds = Dataset::default();
    for s in 0..world.n_states() {
        for &(u, to) in graph.out_edges(s) {
            let a = ds.push_observation(world.render_id(s, 0));
            let b = ds.push_observation(world.render_id(to, 0));
            ds.tuples.push(TrainingTuple::action(a, b, u));
        }
    }
    let emb = OracleEmbedder::new(world.n_states(), 10.0);
    let rm = build_lsr(&emb, &ds, 1.0, world.action_table()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (s, g) = (rng.random_range(0..world.n_states()), rng.random_range(0..world.n_states()));
        let hops = graph.bfs(s)[g];
        let start = world.render_id(s, rng.random());
        let goal = world.render_id(g, rng.random());
        let planned = rm.plan(&emb, &start, &goal, 1, None).ok().and_then(|p| p.first().map(|p| p.actions.len()));
        if planned != hops {
            mismatches += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    line(2, "oracle planning equals BFS", mismatches == 0 && secs < 30.0, format!("mismatches={mismatches}/1000 time={secs:.1}s (<30s)"))
}

fn c3_random_explorer() -> Line {
    let world = BoxWorld::new(SimConfig::default()).unwrap();
    let exact = 100.0 * world.ground_truth_graph().random_explorer_validity(world.action_table().len());
    let ds = Dataset::default();
    let runs: Vec<f64> = SEEDS
        .iter()
        .map(|&s| {
            let mut env = BoxStackEnv::new(&world, s);
            explore_baseline(&mut env, &ds, world.action_table(), 500, s).log.validity()
        })
        .collect();
    let m = mean(&runs);
    let pass = runs.iter().all(|v| (4.0..=12.0).contains(v)) && (m - exact).abs() <= 2.0;
    line(3, "random explorer validity", pass, format!("runs={runs:.1?} mean={m:.2}% exact={exact:.2}% (each in [4,12], |mean-exact|<=2)"))
}

fn c8_learning_kernel() -> Line {
    let checks = [
        ("mlp_mse", common::mlp_with_mse_gradients()),
        ("mlp_input", common::input_gradients_of_mlp()),
        ("kl", common::kl_gradients()),
        ("mapping_loss", common::mapping_loss_gradients()),
        ("contrastive", common::contrastive_loss_gradients()),
    ];
    let grads_ok = checks.iter().all(|(_, e)| *e <= common::TOL);

    // bitwise reproducibility of every trainer on a small dataset
    let world = BoxWorld::new(SimConfig { image_side: 16, ..SimConfig::default() }).unwrap();
    let ds = generate_dataset(&world, 60, 0.2, 5).unwrap();
    let cfg = ModelConfigs::default().with_seed(11);
    let mm_cfg = MmConfig { train: acelsr::learn::TrainConfig { epochs: 2, ..cfg.mm.train.clone() }, ..cfg.mm.clone() };
    let mm_bytes = || train_mm(&ds, &mm_cfg).unwrap().params.to_pack().to_bytes();
    let mm = train_mm(&ds, &mm_cfg).unwrap().params;
    let mut lpm_cfg = cfg.lpm.clone();
    lpm_cfg.train.epochs = 3;
    let lpm_bytes = || train_lpm(&ds, &mm, world.action_table(), &lpm_cfg).unwrap().params.to_pack().to_bytes();
    let mut sm_cfg = cfg.sm.clone();
    sm_cfg.train.epochs = 3;
    let pairs = build_sm_dataset(&ds, &cfg.sm_data).unwrap();
    let sm_bytes = || train_sm(&ds.observations, &pairs, &sm_cfg).unwrap().params.to_pack().to_bytes();
    let repro = mm_bytes() == mm_bytes() && lpm_bytes() == lpm_bytes() && sm_bytes() == sm_bytes();
    let worst: Vec<String> = checks.iter().map(|(n, e)| format!("{n}={e:.1e}")).collect();
    line(
        8,
        "learning kernel",
        grads_ok && repro,
        format!("{} instances each, max rel err [{}] (<=1e-4); bitwise reproducible={repro}", common::INSTANCES, worst.join(" ")),
    )
}

fn c9_structure(report: Option<&ExperimentReport>) -> Line {
    let mut problems = Vec::new();
    if let Some(r) = report {
        for c in &r.cells {
            if let Some(p) = &c.plan {
                if p.pct_all > p.pct_any {
                    problems.push(format!("pct_all>pct_any in {} {} {}", c.fraction, c.framework, c.seed));
                }
            }
        }
    }
    let world = BoxWorld::new(SimConfig::default()).unwrap();
    let full = generate_dataset(&world, 2500, 0.2, 1).unwrap();
    let ds = subsample(&full, SCARCE, 1).unwrap();

    // clustering partitions the covered states
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let occ = ds.observations.len();
    let latents = Array2::from_shape_fn((occ, 4), |_| rng.sample::<f32, _>(StandardNormal));
    let rm = build_lsr_from_latents(&latents.view(), &ds, 0.8, world.action_table()).unwrap();
    let mut seen = vec![0usize; rm.occurrence_obs.len()];
    for n in &rm.nodes {
        for &m in &n.members {
            seen[m] += 1;
        }
    }
    if seen.iter().any(|&k| k != 1) {
        problems.push("roadmap nodes do not partition covered states".into());
    }

    // augmentation and connection only append
    let emb = OracleEmbedder::new(world.n_states(), 10.0);
    let gen = OracleGenerator { world: &world, embedder: emb.clone() };
    let dynamics = OracleDynamics { world: &world, scale: 10.0 };
    let sugg = OracleSuggester { world: &world };
    let models = Models { mm: &emb, generator: &gen, lpm: &dynamics, sm: &sugg, actions: world.action_table() };
    let aug = augment(&ds, &models, 0.5, 1.0, SortOrder::Descending, 1.0).unwrap();
    if aug.dataset.tuples[..ds.tuples.len()] != ds.tuples[..] || aug.dataset.observations != ds.observations {
        problems.push("augmentation altered existing tuples".into());
    }
    let lsr = build_lsr(&emb, &ds, 1.0, world.action_table()).unwrap();
    let (connected, _) = connect(&lsr, &models, 1.0).unwrap();
    if lsr.edges.iter().any(|(k, e)| connected.edges.get(k) != Some(e)) || connected.nodes != lsr.nodes {
        problems.push("connection altered existing edges".into());
    }

    // serialization round trips
    let bytes_equal = |p: Pack| Pack::from_bytes(&p.to_bytes()).map(|q| q.to_bytes() == p.to_bytes()).unwrap_or(false);
    let cfg = ModelConfigs::default();
    let mm = MmParams::new(32, &cfg.mm, 1);
    let lpm = LpmParams::new(cfg.mm.latent_dim, world.action_table().clone(), &cfg.lpm, 1);
    let sm = SmParams::new(32, &cfg.sm, 1);
    let index = build_index(&sm, &ds, &cfg.cluster).unwrap();
    let exact = Dataset::from_pack(&Pack::from_bytes(&ds.to_pack().to_bytes()).unwrap()).unwrap() == ds
        && Roadmap::from_pack(&Pack::from_bytes(&connected.to_pack().to_bytes()).unwrap()).unwrap() == connected
        && MmParams::from_pack(&Pack::from_bytes(&mm.to_pack().to_bytes()).unwrap()).unwrap() == mm
        && LpmParams::from_pack(&Pack::from_bytes(&lpm.to_pack().to_bytes()).unwrap()).unwrap() == lpm
        && SmParams::from_pack(&Pack::from_bytes(&sm.to_pack().to_bytes()).unwrap()).unwrap() == sm
        && SuggestionIndex::from_pack(&Pack::from_bytes(&index.to_pack().to_bytes()).unwrap()).unwrap() == index
        && bytes_equal(connected.to_pack());
    if !exact {
        problems.push("serialization round trip not exact".into());
    }
    let detail = if problems.is_empty() {
        format!(
            "pct_all<=pct_any on {} rows; clustering partitions; append-only; round trips exact",
            report.map_or(0, |r| r.cells.len())
        )
    } else {
        problems.join("; ")
    };
    line(9, "structural properties", problems.is_empty(), detail)
}

fn diag_means(r: &ExperimentReport, f: impl Fn(&acelsr::eval::GroupDiagnostics) -> Option<f64>) -> (f64, Vec<f64>) {
    let vals: Vec<f64> = r
        .diagnostics
        .iter()
        .filter(|d| (d.fraction - SCARCE).abs() < 1e-12 && d.error.is_none())
        .filter_map(f)
        .collect();
    (mean(&vals), vals)
}

fn any_mean(r: &ExperimentReport, fraction: f64, fw: Framework) -> Option<f64> {
    r.aggregate_of(fraction, fw, "pct_any").map(|a| a.mean)
}

fn out_dir() -> PathBuf {
    std::env::var_os("ACCEPTANCE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

fn main() {
    let mut lines = vec![c1_enumeration(), c2_oracle_planning(), c3_random_explorer(), c8_learning_kernel()];

    let cfg = ExperimentConfig {
        fractions: FRACTIONS.to_vec(),
        seeds: SEEDS.to_vec(),
        frameworks: vec![Framework::EpsLsr, Framework::Ace],
        ..ExperimentConfig::default()
    };
    eprintln!("running experiment: {} fractions x {} seeds x 2 frameworks", FRACTIONS.len(), SEEDS.len());
    let t = Instant::now();
    let report = run_experiment(&cfg).expect("experiment config is valid");
    let minutes = t.elapsed().as_secs_f64() / 60.0;
    let dir = out_dir();
    if let Err(e) = report.write_all(&dir) {
        eprintln!("could not write report to {}: {e}", dir.display());
    }
    let errors: Vec<&str> = report.cells.iter().filter_map(|c| c.error.as_deref()).collect();
    for e in &errors {
        eprintln!("cell error: {e}");
    }

    let (explore, runs) = diag_means(&report, |d| Some(d.pct_explore));
    lines.push(line(
        4,
        "targeted exploration validity",
        runs.len() == SEEDS.len() && explore >= 85.0,
        format!("per-seed={runs:.1?} mean={explore:.1}% (>=85 to pass, target 90)"),
    ));

    let (pairs, pair_runs) = diag_means(&report, |d| Some(d.n_pairs as f64));
    let (prec, _) = diag_means(&report, |d| d.pct_pairs);
    let (base, _) = diag_means(&report, |d| Some(d.n_pairs_baseline as f64));
    let ratio = base / pairs.max(1e-9);
    lines.push(line(
        5,
        "augmentation precision",
        pair_runs.len() == SEEDS.len() && pairs <= 100.0 && prec >= 95.0 && ratio >= 10.0,
        format!("pairs per seed={pair_runs:?} mean={pairs:.1} (<=100) precision={prec:.1}% (>=95) baseline={base:.0} ratio={ratio:.1}x (>=10)"),
    ));

    let (edges, edge_runs) = diag_means(&report, |d| d.pct_edges);
    lines.push(line(
        6,
        "connection precision",
        edge_runs.len() == SEEDS.len() && edges >= 90.0,
        format!("per-seed={edge_runs:.1?} mean={edges:.1}% (>=90)"),
    ));

    let mut dominance = Vec::new();
    let mut dominates = true;
    for f in FRACTIONS {
        let (a, e) = (any_mean(&report, f, Framework::Ace), any_mean(&report, f, Framework::EpsLsr));
        match (a, e) {
            (Some(a), Some(e)) => {
                dominates &= a >= e;
                dominance.push(format!("{f}: ACE {a:.1} vs eps {e:.1}"));
            }
            _ => {
                dominates = false;
                dominance.push(format!("{f}: missing"));
            }
        }
    }
    let gap = match (any_mean(&report, SCARCE, Framework::Ace), any_mean(&report, SCARCE, Framework::EpsLsr)) {
        (Some(a), Some(e)) => a - e,
        _ => f64::NAN,
    };
    lines.push(line(
        7,
        "scarcity trend",
        gap >= 15.0 && dominates && errors.is_empty(),
        format!("gap at {SCARCE}={gap:.1} pts (>=15); {}", dominance.join(", ")),
    ));

    lines.push(c9_structure(Some(&report)));

    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    lines.push(line(
        10,
        "resource bound",
        minutes <= 60.0 && errors.is_empty(),
        format!("experiment took {minutes:.1} min on {cores} core(s) (<=60); report in {}", dir.display()),
    ));

    lines.sort_by_key(|l| l.id);
    println!();
    for l in &lines {
        println!("{} [{}] {}: {}", if l.pass { "PASS" } else { "FAIL" }, l.id, l.name, l.detail);
    }
    let passed = lines.iter().filter(|l| l.pass).count();
    println!("{passed}/{} criteria passed", lines.len());
    if passed < lines.len() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
