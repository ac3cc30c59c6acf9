//! Latent space roadmap: the covered subspace, ε-clustering into nodes,
//! action-averaged edges and minimum-hop planning.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::data::pack::{meta_field, FormatError, Pack, Persist};
use crate::data::Dataset;
use crate::embed::{Embedder, Generator};
use crate::learn::LearnError;
use crate::sim::{ActionTable, GridAction, Observation};

#[derive(Debug, Error)]
pub enum RoadmapError {
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("roadmap has no nodes")]
    Empty,
    #[error("no path from node {from} to node {to}")]
    NoPath { from: usize, to: usize },
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("self-edges are not allowed (node {0})")]
    SelfEdge(usize),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f32),
}

pub fn l1(a: ArrayView1<f32>, b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Encoded training observations, one row per occurrence, with ε-ball
/// membership and L1 nearest-neighbour queries (exhaustive scan).
#[derive(Debug, Clone, PartialEq)]
pub struct CoveredSpace {
    pub points: Array2<f32>,
    /// Observation id of each row.
    pub obs_ids: Vec<usize>,
    pub eps: f32,
}

impl CoveredSpace {
    pub fn new(points: Array2<f32>, obs_ids: Vec<usize>, eps: f32) -> Self {
        assert_eq!(points.nrows(), obs_ids.len(), "one observation id per covered point");
        CoveredSpace { points, obs_ids, eps }
    }

    /// Covered space of `ds` from per-observation latents.
    pub fn from_latents(latents: &ArrayView2<f32>, ds: &Dataset, eps: f32) -> Self {
        let occ = ds.occurrences();
        let points = latents.select(ndarray::Axis(0), &occ);
        CoveredSpace::new(points, occ, eps)
    }

    pub fn len(&self) -> usize {
        self.obs_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs_ids.is_empty()
    }

    /// Closest covered row and its L1 distance; the first row wins ties.
    pub fn nearest(&self, z: &[f32]) -> Option<(usize, f32)> {
        let mut best: Option<(usize, f32)> = None;
        for (i, row) in self.points.rows().into_iter().enumerate() {
            let d = l1(row, z);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        best
    }

    pub fn contains(&self, z: &[f32]) -> bool {
        self.nearest(z).is_some_and(|(_, d)| d <= self.eps)
    }

    /// Rows within L1 distance `r`, with distances.
    pub fn within(&self, z: &[f32], r: f32) -> Vec<(usize, f32)> {
        self.points
            .rows()
            .into_iter()
            .enumerate()
            .filter_map(|(i, row)| {
                let d = l1(row, z);
                (d <= r).then_some((i, d))
            })
            .collect()
    }

    pub fn push(&mut self, z: &[f32], obs_id: usize) {
        self.points
            .push_row(ArrayView1::from(z))
            .expect("latent width matches covered space");
        self.obs_ids.push(obs_id);
    }
}

/// Encodes every occurrence in `ds`.
pub fn build_covered(embedder: &dyn Embedder, ds: &Dataset, eps: f32) -> Result<CoveredSpace, RoadmapError> {
    if !(eps > 0.0) {
        return Err(RoadmapError::BadEpsilon(eps));
    }
    let latents = embedder.embed_all(&ds.observations)?;
    Ok(CoveredSpace::from_latents(&latents.view(), ds, eps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeSource {
    Dataset,
    Shortcut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    /// Nearest enumerated action to `coords`.
    pub action: GridAction,
    /// Component-wise mean of the contributing actions' pick/place cells.
    pub coords: [f32; 4],
    pub count: usize,
    pub source: EdgeSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub representative: Vec<f32>,
    /// Covered-space rows (occurrences) in this node.
    pub members: Vec<usize>,
    /// Majority ground-truth label of the members, when observations carry one.
    pub label: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roadmap {
    pub nodes: Vec<Node>,
    pub edges: BTreeMap<(usize, usize), Edge>,
    pub eps: f32,
    /// Observation id of each covered row.
    pub occurrence_obs: Vec<usize>,
    /// Bumped by every shortcut insertion.
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub nodes: Vec<usize>,
    pub actions: Vec<GridAction>,
    pub latents: Vec<Vec<f32>>,
    pub observations: Option<Vec<Observation>>,
    /// L1 distance from the encoded start to its node representative.
    pub start_snap: f32,
    pub goal_snap: f32,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so labels follow the lowest index
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Density clustering with radius `eps` and a single-point core threshold:
/// the connected components of the graph joining points within L1 `eps`.
/// Labels are numbered by first appearance.
pub fn epsilon_components(points: &ArrayView2<f32>, eps: f32) -> Vec<usize> {
    let n = points.nrows();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        let zi = points.row(i);
        for j in (i + 1)..n {
            let mut d = 0.0;
            for (a, b) in zi.iter().zip(points.row(j).iter()) {
                d += (a - b).abs();
                if d > eps {
                    break;
                }
            }
            if d <= eps {
                uf.union(i, j);
            }
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let r = uf.find(i);
        if label[r] == usize::MAX {
            label[r] = next;
            next += 1;
        }
        out.push(label[r]);
    }
    out
}

/// Builds the roadmap of `ds` under `embedder`.
pub fn build_lsr(embedder: &dyn Embedder, ds: &Dataset, eps: f32, table: &ActionTable) -> Result<Roadmap, RoadmapError> {
    let latents = embedder.embed_all(&ds.observations)?;
    build_lsr_from_latents(&latents.view(), ds, eps, table)
}

/// As [`build_lsr`] with precomputed per-observation latents.
pub fn build_lsr_from_latents(
    latents: &ArrayView2<f32>,
    ds: &Dataset,
    eps: f32,
    table: &ActionTable,
) -> Result<Roadmap, RoadmapError> {
    if !(eps > 0.0) {
        return Err(RoadmapError::BadEpsilon(eps));
    }
    let occ = ds.occurrences();
    if occ.is_empty() {
        return Err(RoadmapError::Empty);
    }
    // identical observations always share a cluster, so cluster unique ids
    let mut unique: Vec<usize> = occ.clone();
    unique.sort_unstable();
    unique.dedup();
    let pts = latents.select(ndarray::Axis(0), &unique);
    let comp = epsilon_components(&pts.view(), eps);
    let comp_of: BTreeMap<usize, usize> = unique.iter().copied().zip(comp.iter().copied()).collect();

    // node ids follow the first covered row of each cluster
    let mut node_of_comp: BTreeMap<usize, usize> = BTreeMap::new();
    let mut nodes: Vec<Node> = Vec::new();
    for (row, &o) in occ.iter().enumerate() {
        let c = comp_of[&o];
        let id = *node_of_comp.entry(c).or_insert_with(|| {
            nodes.push(Node { id: nodes.len(), representative: Vec::new(), members: Vec::new(), label: None });
            nodes.len() - 1
        });
        nodes[id].members.push(row);
    }
    let dim = latents.ncols();
    for node in &mut nodes {
        let mut mean = vec![0.0f64; dim];
        let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
        let mut all_labeled = true;
        for &row in &node.members {
            let o = occ[row];
            for (m, v) in mean.iter_mut().zip(latents.row(o).iter()) {
                *m += *v as f64;
            }
            match ds.observations[o].meta_label {
                Some(l) => *votes.entry(l).or_default() += 1,
                None => all_labeled = false,
            }
        }
        let k = node.members.len() as f64;
        node.representative = mean.into_iter().map(|m| (m / k) as f32).collect();
        if all_labeled {
            // highest count, smallest label on ties
            node.label = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(l, _)| *l);
        }
    }

    let node_of_obs = |o: usize| node_of_comp[&comp_of[&o]];
    let mut sums: BTreeMap<(usize, usize), ([f64; 4], usize)> = BTreeMap::new();
    for t in ds.action_pairs() {
        let (from, to) = (node_of_obs(t.obs_a), node_of_obs(t.obs_b));
        if from == to {
            continue;
        }
        let e = sums.entry((from, to)).or_insert(([0.0; 4], 0));
        for (s, c) in e.0.iter_mut().zip(t.action.unwrap().coords()) {
            *s += c as f64;
        }
        e.1 += 1;
    }
    let mut edges = BTreeMap::new();
    for ((from, to), (s, n)) in sums {
        let coords = s.map(|v| (v / n as f64) as f32);
        let action = table.snap(&coords).ok_or(RoadmapError::Empty)?;
        edges.insert((from, to), Edge { from, to, action, coords, count: n, source: EdgeSource::Dataset });
    }
    Ok(Roadmap { nodes, edges, eps, occurrence_obs: occ, version: 0 })
}

impl Roadmap {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn successors(&self, node: usize) -> impl Iterator<Item = &Edge> {
        self.edges.range((node, 0)..(node, usize::MAX)).map(|(_, e)| e)
    }

    /// Closest node representative (L1) and its distance.
    pub fn nearest_node(&self, z: &[f32]) -> Option<(usize, f32)> {
        let mut best: Option<(usize, f32)> = None;
        for n in &self.nodes {
            let d: f32 = n.representative.iter().zip(z).map(|(a, b)| (a - b).abs()).sum();
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((n.id, d));
            }
        }
        best
    }

    /// Node of covered row `row`.
    pub fn node_of_row(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.occurrence_obs.len()];
        for n in &self.nodes {
            for &m in &n.members {
                out[m] = n.id;
            }
        }
        out
    }

    /// Inserts a shortcut in place. Returns `false` when the edge already
    /// existed, which leaves its payload untouched.
    pub fn insert_shortcut(&mut self, from: usize, to: usize, u: GridAction) -> Result<bool, RoadmapError> {
        for n in [from, to] {
            if n >= self.nodes.len() {
                return Err(RoadmapError::UnknownNode(n));
            }
        }
        if from == to {
            return Err(RoadmapError::SelfEdge(from));
        }
        if self.edges.contains_key(&(from, to)) {
            return Ok(false);
        }
        self.edges.insert(
            (from, to),
            Edge { from, to, action: u, coords: u.coords(), count: 0, source: EdgeSource::Shortcut },
        );
        self.version += 1;
        Ok(true)
    }

    /// New roadmap version with the shortcut added.
    pub fn add_shortcut(&self, from: usize, to: usize, u: GridAction) -> Result<Roadmap, RoadmapError> {
        let mut next = self.clone();
        next.insert_shortcut(from, to, u)?;
        Ok(next)
    }

    /// Hop distance from every node to `goal` (reverse BFS).
    fn distances_to(&self, goal: usize) -> Vec<Option<usize>> {
        let mut pred: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in self.edges.keys() {
            pred[b].push(a);
        }
        let mut dist = vec![None; self.nodes.len()];
        dist[goal] = Some(0);
        let mut q = VecDeque::from([goal]);
        while let Some(n) = q.pop_front() {
            let d = dist[n].unwrap();
            for &p in &pred[n] {
                if dist[p].is_none() {
                    dist[p] = Some(d + 1);
                    q.push_back(p);
                }
            }
        }
        dist
    }

    /// Every minimum-hop node path from `start` to `goal`, at most
    /// `max_paths`, in lexicographic node-id order.
    pub fn shortest_paths(&self, start: usize, goal: usize, max_paths: usize) -> Result<Vec<Vec<usize>>, RoadmapError> {
        for n in [start, goal] {
            if n >= self.nodes.len() {
                return Err(RoadmapError::UnknownNode(n));
            }
        }
        let dist = self.distances_to(goal);
        if dist[start].is_none() {
            return Err(RoadmapError::NoPath { from: start, to: goal });
        }
        let mut out = Vec::new();
        let mut path = vec![start];
        self.extend_paths(&dist, goal, max_paths, &mut path, &mut out);
        Ok(out)
    }

    fn extend_paths(
        &self,
        dist: &[Option<usize>],
        goal: usize,
        max_paths: usize,
        path: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if out.len() >= max_paths {
            return;
        }
        let here = *path.last().unwrap();
        if here == goal {
            out.push(path.clone());
            return;
        }
        let want = dist[here].unwrap() - 1;
        let next: BTreeSet<usize> = self.successors(here).map(|e| e.to).filter(|&m| dist[m] == Some(want)).collect();
        for m in next {
            path.push(m);
            self.extend_paths(dist, goal, max_paths, path, out);
            path.pop();
            if out.len() >= max_paths {
                return;
            }
        }
    }

    /// Plans between two observations: both are encoded and snapped to their
    /// nearest nodes, then every minimum-hop path is returned (up to
    /// `max_paths`). Images are decoded when `generator` is given.
    pub fn plan(
        &self,
        embedder: &dyn Embedder,
        start: &Observation,
        goal: &Observation,
        max_paths: usize,
        generator: Option<&dyn Generator>,
    ) -> Result<Vec<Plan>, RoadmapError> {
        let zs = embedder.embed(start)?;
        let zg = embedder.embed(goal)?;
        self.plan_latent(&zs, &zg, max_paths, generator)
    }

    pub fn plan_latent(
        &self,
        zs: &[f32],
        zg: &[f32],
        max_paths: usize,
        generator: Option<&dyn Generator>,
    ) -> Result<Vec<Plan>, RoadmapError> {
        let (s, ds) = self.nearest_node(zs).ok_or(RoadmapError::Empty)?;
        let (g, dg) = self.nearest_node(zg).ok_or(RoadmapError::Empty)?;
        let mut plans = Vec::new();
        for nodes in self.shortest_paths(s, g, max_paths)? {
            let actions = nodes.windows(2).map(|w| self.edges[&(w[0], w[1])].action).collect();
            let latents: Vec<Vec<f32>> = nodes.iter().map(|&n| self.nodes[n].representative.clone()).collect();
            let observations = match generator {
                Some(gen) => Some(latents.iter().map(|z| gen.generate(z)).collect::<Result<Vec<_>, _>>()?),
                None => None,
            };
            plans.push(Plan { nodes, actions, latents, observations, start_snap: ds, goal_snap: dg });
        }
        Ok(plans)
    }

    /// Nodes with labels and edges with actions, for visualization.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "eps": self.eps,
            "version": self.version,
            "nodes": self.nodes.iter().map(|n| json!({
                "id": n.id,
                "label": n.label,
                "size": n.members.len(),
                "representative": n.representative,
            })).collect::<Vec<_>>(),
            "edges": self.edges.values().collect::<Vec<_>>(),
        })
    }
}

impl Persist for Roadmap {
    const KIND: &'static str = "roadmap";

    fn to_pack(&self) -> Pack {
        let dim = self.nodes.first().map_or(0, |n| n.representative.len());
        let nodes: Vec<_> = self.nodes.iter().map(|n| json!({ "members": n.members, "label": n.label })).collect();
        let mut pack = Pack::new(
            Self::KIND,
            json!({
                "eps": self.eps,
                "version": self.version,
                "dim": dim,
                "nodes": nodes,
                "edges": self.edges.values().collect::<Vec<_>>(),
                "occurrence_obs": self.occurrence_obs,
            }),
        );
        let reps = self.nodes.iter().flat_map(|n| n.representative.iter().copied()).collect();
        pack.add_tensor("representatives", vec![self.nodes.len(), dim], reps);
        pack
    }

    fn from_pack(pack: &Pack) -> Result<Self, FormatError> {
        #[derive(Deserialize)]
        struct NodeMeta {
            members: Vec<usize>,
            label: Option<u32>,
        }
        pack.expect_kind(Self::KIND)?;
        let dim: usize = meta_field(&pack.meta, "dim")?;
        let metas: Vec<NodeMeta> = meta_field(&pack.meta, "nodes")?;
        let edges: Vec<Edge> = meta_field(&pack.meta, "edges")?;
        let (shape, reps) = pack.tensor("representatives")?;
        if shape != [metas.len(), dim] {
            return Err(FormatError::header("representative tensor does not match node count"));
        }
        let nodes = metas
            .into_iter()
            .enumerate()
            .map(|(id, m)| Node { id, representative: reps[id * dim..(id + 1) * dim].to_vec(), members: m.members, label: m.label })
            .collect::<Vec<_>>();
        let mut map = BTreeMap::new();
        for e in edges {
            if e.from >= nodes.len() || e.to >= nodes.len() || e.from == e.to {
                return Err(FormatError::header("edge endpoint invalid"));
            }
            map.insert((e.from, e.to), e);
        }
        Ok(Roadmap {
            nodes,
            edges: map,
            eps: meta_field(&pack.meta, "eps")?,
            occurrence_obs: meta_field(&pack.meta, "occurrence_obs")?,
            version: meta_field(&pack.meta, "version")?,
        })
    }
}
