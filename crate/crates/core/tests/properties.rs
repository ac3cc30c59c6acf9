use std::collections::BTreeSet;

use acelsr::ace::{augment, connect, Models, SortOrder};
use acelsr::data::pack::Persist;
use acelsr::data::{generate_dataset, make_queries, subsample, Dataset, Pack, SeedStream};
use acelsr::embed::{OracleEmbedder, OracleGenerator};
use acelsr::eval::eval_plans;
use acelsr::lpm::OracleDynamics;
use acelsr::roadmap::{build_lsr, epsilon_components, EdgeSource, Roadmap};
use acelsr::suggestion::{bin_actions, ContinuousAction, OracleSuggester};
use acelsr::{BoxWorld, SimConfig};
use ndarray::Array2;
use proptest::prelude::*;

const SCALE: f32 = 10.0;

fn world() -> BoxWorld {
    BoxWorld::new(SimConfig { image_side: 16, ..SimConfig::default() }).unwrap()
}

fn oracle_models<'a>(
    w: &'a BoxWorld,
    emb: &'a OracleEmbedder,
    gen: &'a OracleGenerator<'a>,
    dynamics: &'a OracleDynamics<'a>,
    sugg: &'a OracleSuggester<'a>,
) -> Models<'a> {
    Models { mm: emb, generator: gen, lpm: dynamics, sm: sugg, actions: w.action_table() }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, .. ProptestConfig::default() })]

    #[test]
    fn dataset_pack_round_trip(n in 1usize..40, frac in 0.0f64..0.9, seed in any::<u64>()) {
        let w = world();
        let ds = generate_dataset(&w, n, frac, seed).unwrap();
        let bytes = ds.to_pack().to_bytes();
        let back = Dataset::from_pack(&Pack::from_bytes(&bytes).unwrap()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn subsample_size_and_membership(n in 1usize..60, fraction in 0.01f64..=1.0, seed in any::<u64>()) {
        let w = world();
        let ds = generate_dataset(&w, n, 0.2, 3).unwrap();
        let sub = subsample(&ds, fraction, seed).unwrap();
        prop_assert_eq!(sub.tuples.len(), ((n as f64) * fraction).round() as usize);
        sub.validate().unwrap();
    }

    #[test]
    fn epsilon_clustering_partitions(points in proptest::collection::vec(proptest::collection::vec(-3.0f32..3.0, 3), 1..40), eps in 0.0f32..2.0) {
        let n = points.len();
        let arr = Array2::from_shape_vec((n, 3), points.concat()).unwrap();
        let labels = epsilon_components(&arr.view(), eps);
        prop_assert_eq!(labels.len(), n);
        // labels are dense 0..k
        let distinct: BTreeSet<usize> = labels.iter().copied().collect();
        prop_assert_eq!(distinct.len(), distinct.iter().max().unwrap() + 1);
        // points within eps always share a cluster
        for i in 0..n {
            for j in 0..n {
                let d: f32 = arr.row(i).iter().zip(arr.row(j).iter()).map(|(a, b)| (a - b).abs()).sum();
                if d <= eps {
                    prop_assert_eq!(labels[i], labels[j]);
                }
            }
        }
    }

    #[test]
    fn action_bins_partition_inputs(raw in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..200), frac in 0.05f64..=1.0, pick_only in any::<bool>()) {
        let actions: Vec<ContinuousAction> = raw.iter().map(|&(a, b, c, d)| ContinuousAction { pick: [a, b], place: [c, d] }).collect();
        let table = bin_actions(&actions, frac, pick_only);
        prop_assert_eq!(table.assignment.len(), actions.len());
        prop_assert_eq!(table.bins.iter().map(|b| b.count).sum::<usize>(), actions.len());
        let per_axis = (1.0 / frac).ceil() as usize;
        let cap = if pick_only { per_axis.pow(2) } else { per_axis.pow(4) };
        prop_assert!(table.bins.len() <= cap);
    }

    #[test]
    fn oracle_augmentation_is_append_only_and_correct(n in 20usize..80, seed in any::<u64>()) {
        let w = world();
        let ds = generate_dataset(&w, n, 0.1, seed).unwrap();
        let emb = OracleEmbedder::new(w.n_states(), SCALE);
        let gen = OracleGenerator { world: &w, embedder: emb.clone() };
        let dynamics = OracleDynamics { world: &w, scale: SCALE };
        let sugg = OracleSuggester { world: &w };
        let models = oracle_models(&w, &emb, &gen, &dynamics, &sugg);
        let out = augment(&ds, &models, 0.5, 1.0, SortOrder::Descending, 1.0).unwrap();
        prop_assert_eq!(&out.dataset.tuples[..ds.tuples.len()], &ds.tuples[..]);
        prop_assert_eq!(&out.dataset.observations, &ds.observations);
        prop_assert_eq!(out.dataset.tuples.len(), ds.tuples.len() + out.new_pairs.len());
        for &(a, b) in &out.new_pairs {
            prop_assert_eq!(ds.observations[a].meta_label, ds.observations[b].meta_label);
        }
    }

    #[test]
    fn oracle_connection_is_append_only_and_valid(n in 20usize..80, seed in any::<u64>()) {
        let w = world();
        let ds = generate_dataset(&w, n, 0.1, seed).unwrap();
        let emb = OracleEmbedder::new(w.n_states(), SCALE);
        let gen = OracleGenerator { world: &w, embedder: emb.clone() };
        let dynamics = OracleDynamics { world: &w, scale: SCALE };
        let sugg = OracleSuggester { world: &w };
        let models = oracle_models(&w, &emb, &gen, &dynamics, &sugg);
        let rm = build_lsr(&emb, &ds, 1.0, w.action_table()).unwrap();
        let (next, added) = connect(&rm, &models, 1.0).unwrap();
        prop_assert_eq!(next.nodes.len(), rm.nodes.len());
        for (k, e) in &rm.edges {
            prop_assert_eq!(&next.edges[k], e);
        }
        prop_assert_eq!(next.edges.len(), rm.edges.len() + added.len());
        let graph = w.ground_truth_graph();
        for e in next.edges.values().filter(|e| e.source == EdgeSource::Shortcut) {
            let (a, b) = (next.nodes[e.from].label.unwrap(), next.nodes[e.to].label.unwrap());
            prop_assert!(graph.is_valid_transition(a as usize, &e.action, b as usize));
        }
        let back = Roadmap::from_pack(&Pack::from_bytes(&next.to_pack().to_bytes()).unwrap()).unwrap();
        prop_assert_eq!(back, next);
    }

    #[test]
    fn all_never_exceeds_any(n in 30usize..120, seed in any::<u64>(), max_paths in 1usize..5) {
        let w = world();
        let ds = generate_dataset(&w, n, 0.2, seed).unwrap();
        let emb = OracleEmbedder::new(w.n_states(), SCALE);
        let mut rm = build_lsr(&emb, &ds, 1.0, w.action_table()).unwrap();
        // corrupt a few edge actions so plans can disagree
        let actions = w.action_table().actions().to_vec();
        for (i, e) in rm.edges.values_mut().enumerate() {
            if (i as u64 + seed) % 3 == 0 {
                e.action = actions[(i + seed as usize) % actions.len()];
            }
        }
        let q = make_queries(&w, 40, 80, seed, SeedStream::Holdout).unwrap();
        let m = eval_plans(&rm, &emb, &q, &w.ground_truth_graph(), max_paths).unwrap();
        prop_assert!(m.pct_all <= m.pct_any);
        if max_paths == 1 {
            prop_assert_eq!(m.pct_all, m.pct_any);
        }
    }
}
