//! Hierarchical density clustering: mutual-reachability minimum spanning
//! tree, condensed cluster tree and excess-of-mass selection.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub min_cluster_size: usize,
    /// Neighbour count for core distances; `None` uses `min_cluster_size`.
    pub min_samples: Option<usize>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { min_cluster_size: 2, min_samples: None }
    }
}

/// Zero distances are replaced by this so densities stay finite.
const MIN_DIST: f64 = 1e-10;

fn l1(a: ndarray::ArrayView1<f32>, b: ndarray::ArrayView1<f32>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() as f64).sum()
}

/// Cluster label per point; `None` marks noise. Identical points left as
/// noise share a cluster of their own. Labels are numbered by the lowest point
/// index they contain.
pub fn hdbscan(points: &ArrayView2<f32>, cfg: &ClusterConfig) -> Vec<Option<usize>> {
    let n = points.nrows();
    let mcs = cfg.min_cluster_size.max(2);
    if n < mcs {
        return vec![None; n];
    }
    let k = cfg.min_samples.unwrap_or(mcs).clamp(1, n);

    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = l1(points.row(i), points.row(j));
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    // core distance: k-th smallest distance counting the point itself
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut row = dist[i * n..(i + 1) * n].to_vec();
            row.select_nth_unstable_by(k - 1, f64::total_cmp);
            row[k - 1]
        })
        .collect();
    let mreach = |i: usize, j: usize| dist[i * n + j].max(core[i]).max(core[j]);

    // Prim's algorithm on the complete mutual-reachability graph
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n - 1);
    let mut cur = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_d = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = mreach(cur, j);
            if d < best[j] {
                best[j] = d;
                parent[j] = cur;
            }
            if best[j] < next_d {
                next_d = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((next_d, parent[next], next));
        cur = next;
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    // single-linkage dendrogram: internal node n + m for merge m
    let total = 2 * n - 1;
    let mut children = vec![(usize::MAX, usize::MAX); total];
    let mut height = vec![0.0f64; total];
    let mut size = vec![1usize; total];
    let mut uf: Vec<usize> = (0..total).collect();
    fn find(uf: &mut [usize], mut x: usize) -> usize {
        while uf[x] != x {
            uf[x] = uf[uf[x]];
            x = uf[x];
        }
        x
    }
    for (m, &(d, a, b)) in edges.iter().enumerate() {
        let node = n + m;
        let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
        children[node] = (ra, rb);
        height[node] = d;
        size[node] = size[ra] + size[rb];
        uf[ra] = node;
        uf[rb] = node;
    }
    let root = total - 1;

    // condensed tree
    struct Cluster {
        parent: Option<usize>,
        birth: f64,
        stability: f64,
        children: Vec<usize>,
    }
    let lambda = |d: f64| 1.0 / d.max(MIN_DIST);
    let mut clusters = vec![Cluster { parent: None, birth: 0.0, stability: 0.0, children: Vec::new() }];
    let mut point_cluster = vec![0usize; n];
    let mut stack = vec![(root, 0usize)];
    let leaves = |node: usize| -> Vec<usize> {
        let mut out = Vec::new();
        let mut st = vec![node];
        while let Some(x) = st.pop() {
            if x < n {
                out.push(x);
            } else {
                st.push(children[x].0);
                st.push(children[x].1);
            }
        }
        out
    };
    while let Some((node, c)) = stack.pop() {
        if node < n {
            // a lone point reached as the large child cannot happen (mcs >= 2)
            point_cluster[node] = c;
            continue;
        }
        let (l, r) = children[node];
        let lam = lambda(height[node]);
        let birth = clusters[c].birth;
        let (big_l, big_r) = (size[l] >= mcs, size[r] >= mcs);
        if big_l && big_r {
            for child in [l, r] {
                clusters[c].stability += (lam - birth) * size[child] as f64;
                let id = clusters.len();
                clusters.push(Cluster { parent: Some(c), birth: lam, stability: 0.0, children: Vec::new() });
                clusters[c].children.push(id);
                stack.push((child, id));
            }
        } else {
            for (child, big) in [(l, big_l), (r, big_r)] {
                if big {
                    stack.push((child, c));
                } else {
                    for p in leaves(child) {
                        clusters[c].stability += lam - birth;
                        point_cluster[p] = c;
                    }
                }
            }
        }
    }

    // excess of mass; children always carry larger ids than their parent
    let m = clusters.len();
    let mut selected = vec![false; m];
    let mut subtree = vec![0.0f64; m];
    for c in (1..m).rev() {
        let child_sum: f64 = clusters[c].children.iter().map(|&k| subtree[k]).sum();
        if clusters[c].children.is_empty() || clusters[c].stability >= child_sum {
            selected[c] = true;
            subtree[c] = clusters[c].stability;
            let mut st = clusters[c].children.clone();
            while let Some(k) = st.pop() {
                selected[k] = false;
                st.extend(clusters[k].children.iter().copied());
            }
        } else {
            subtree[c] = child_sum;
        }
    }

    let mut raw = vec![None; n];
    for p in 0..n {
        let mut c = Some(point_cluster[p]);
        while let Some(k) = c {
            if selected[k] {
                raw[p] = Some(k);
                break;
            }
            c = clusters[k].parent;
        }
    }
    // identical noise points: label by the first copy
    let mut first_copy: std::collections::HashMap<Vec<u32>, usize> = std::collections::HashMap::new();
    let mut extra = m;
    let mut dup_label: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for p in 0..n {
        if raw[p].is_some() {
            continue;
        }
        let key: Vec<u32> = points.row(p).iter().map(|v| v.to_bits()).collect();
        let first = *first_copy.entry(key).or_insert(p);
        if first != p {
            let l = *dup_label.entry(first).or_insert_with(|| {
                extra += 1;
                extra
            });
            raw[first] = Some(l);
            raw[p] = Some(l);
        }
    }
    let mut renumber = std::collections::BTreeMap::new();
    raw.iter()
        .map(|r| {
            r.map(|k| {
                let next = renumber.len();
                *renumber.entry(k).or_insert(next)
            })
        })
        .collect()
}
