//! Browser bindings for a small interactive demo of the box-stacking world:
//! noisy renders, multi-path planning over the ground-truth roadmap and
//! continuous action binning.

use acelsr::data::{Dataset, TrainingTuple};
use acelsr::embed::OracleEmbedder;
use acelsr::roadmap::{build_lsr, Roadmap};
use acelsr::suggestion::{bin_actions, ContinuousAction};
use acelsr::{BoxWorld, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct Demo {
    world: BoxWorld,
    roadmap: Roadmap,
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    /// Builds the world and a roadmap with one node per state and one edge
    /// per valid transition.
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<Demo, JsError> {
        let world = BoxWorld::new(SimConfig::default()).map_err(js_err)?;
        let graph = world.ground_truth_graph();
        let mut ds = Dataset::default();
        let firsts: Vec<usize> = (0..world.n_states()).map(|s| ds.push_observation(world.render_id(s, 0))).collect();
        for (s, &a) in firsts.iter().enumerate() {
            for &(u, t) in graph.out_edges(s) {
                ds.tuples.push(TrainingTuple::action(a, firsts[t], u));
            }
        }
        let emb = OracleEmbedder::new(world.n_states(), 1.0);
        let roadmap = build_lsr(&emb, &ds, 0.5, world.action_table()).map_err(js_err)?;
        Ok(Demo { world, roadmap })
    }

    #[wasm_bindgen(js_name = nStates)]
    pub fn n_states(&self) -> usize {
        self.world.n_states()
    }

    #[wasm_bindgen(js_name = imageSide)]
    pub fn image_side(&self) -> usize {
        self.world.config().image_side
    }

    /// Text form of a state, columns left to right, boxes bottom to top.
    pub fn describe(&self, state: usize) -> Result<String, JsError> {
        self.check(state)?;
        Ok(self.world.state(state).to_string())
    }

    /// RGBA bytes of a noisy render (`side × side × 4`).
    pub fn render(&self, state: usize, seed: u32) -> Result<Vec<u8>, JsError> {
        self.check(state)?;
        let obs = self.world.render_id(state, seed as u64);
        Ok(obs
            .pixels
            .chunks(3)
            .flat_map(|p| {
                let c = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                [c(p[0]), c(p[1]), c(p[2]), 255]
            })
            .collect())
    }

    /// Valid actions from a state as display strings.
    #[wasm_bindgen(js_name = validActions)]
    pub fn valid_actions(&self, state: usize) -> Result<Vec<String>, JsError> {
        self.check(state)?;
        Ok(self.world.valid_actions(self.world.state(state)).iter().map(|u| u.to_string()).collect())
    }

    /// Up to `max_paths` shortest plans as JSON
    /// `[{states: [..], labels: [..], actions: [..]}]`.
    pub fn plan(&self, start: usize, goal: usize, max_paths: usize) -> Result<String, JsError> {
        self.check(start)?;
        self.check(goal)?;
        let node = |s: usize| self.roadmap.nodes.iter().position(|n| n.label == Some(s as u32));
        let (a, b) = (node(start).ok_or_else(|| js_err("state missing"))?, node(goal).ok_or_else(|| js_err("state missing"))?);
        let paths = self.roadmap.shortest_paths(a, b, max_paths.max(1)).map_err(js_err)?;
        let out: Vec<_> = paths
            .iter()
            .map(|p| {
                let states: Vec<u32> = p.iter().map(|&n| self.roadmap.nodes[n].label.unwrap_or(0)).collect();
                let labels: Vec<String> = states.iter().map(|&s| self.world.state(s as usize).to_string()).collect();
                let actions: Vec<String> = p.windows(2).map(|w| self.roadmap.edges[&(w[0], w[1])].action.to_string()).collect();
                json!({ "states": states, "labels": labels, "actions": actions })
            })
            .collect();
        Ok(serde_json::Value::Array(out).to_string())
    }

    /// Bins `n` uniformly random pick/place actions in the unit square and
    /// reports the occupied bins as JSON.
    #[wasm_bindgen(js_name = binActions)]
    pub fn bin_random_actions(&self, n: usize, bin_fraction: f64, pick_only: bool, seed: u32) -> Result<String, JsError> {
        if !(bin_fraction > 0.0 && bin_fraction <= 1.0) {
            return Err(js_err("bin fraction must lie in (0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let actions: Vec<ContinuousAction> = (0..n)
            .map(|_| ContinuousAction { pick: [rng.random(), rng.random()], place: [rng.random(), rng.random()] })
            .collect();
        let table = bin_actions(&actions, bin_fraction, pick_only);
        let per_axis = (1.0 / bin_fraction).ceil() as usize;
        let largest = table.bins.iter().map(|b| b.count).max().unwrap_or(0);
        Ok(json!({
            "actions": n,
            "bins": table.bins.len(),
            "capacity": if pick_only { per_axis.pow(2) } else { per_axis.pow(4) },
            "largest_bin": largest,
            "means": table.bins.iter().take(200).map(|b| json!({ "pick": b.mean.pick, "place": b.mean.place, "count": b.count })).collect::<Vec<_>>(),
        })
        .to_string())
    }
}

impl Demo {
    fn check(&self, state: usize) -> Result<(), JsError> {
        if state < self.world.n_states() {
            Ok(())
        } else {
            Err(js_err(format!("state {state} out of range 0..{}", self.world.n_states())))
        }
    }
}
