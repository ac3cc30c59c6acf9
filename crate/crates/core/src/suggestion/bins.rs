//! Grid binning of continuous pick-and-place actions into a finite set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Pick and place positions in normalized image coordinates `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousAction {
    pub pick: [f64; 2],
    pub place: [f64; 2],
}

/// Bin coordinates: pick cell then place cell (place omitted in pick-only mode).
pub type BinKey = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBin {
    pub key: BinKey,
    pub count: usize,
    pub mean: ContinuousAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBinTable {
    pub bin_fraction: f64,
    pub pick_only: bool,
    /// Bin id of every input action.
    pub assignment: Vec<usize>,
    pub bins: Vec<ActionBin>,
}

impl ActionBinTable {
    pub fn cells_per_axis(&self) -> usize {
        cells_per_axis(self.bin_fraction)
    }

    pub fn key_of(&self, a: &ContinuousAction) -> BinKey {
        key_of(a, self.bin_fraction, self.pick_only)
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

fn cells_per_axis(f: f64) -> usize {
    // tolerate 1/f landing a hair above an integer
    ((1.0 / f) - 1e-9).ceil().max(1.0) as usize
}

fn cell(x: f64, f: f64) -> usize {
    ((x.clamp(0.0, 1.0) / f).floor() as usize).min(cells_per_axis(f) - 1)
}

fn key_of(a: &ContinuousAction, f: f64, pick_only: bool) -> BinKey {
    let mut k = vec![cell(a.pick[0], f), cell(a.pick[1], f)];
    if !pick_only {
        k.extend([cell(a.place[0], f), cell(a.place[1], f)]);
    }
    k
}

/// Partitions each coordinate axis into cells of width `bin_fraction` and
/// merges the actions sharing a cell tuple. Bins are ordered by key.
///
/// # Panics
/// If `bin_fraction` is outside `(0, 1]`.
pub fn bin_actions(actions: &[ContinuousAction], bin_fraction: f64, pick_only: bool) -> ActionBinTable {
    assert!(bin_fraction > 0.0 && bin_fraction <= 1.0, "bin_fraction must lie in (0, 1]");
    let mut groups: BTreeMap<BinKey, Vec<usize>> = BTreeMap::new();
    for (i, a) in actions.iter().enumerate() {
        groups.entry(key_of(a, bin_fraction, pick_only)).or_default().push(i);
    }
    let mut assignment = vec![0; actions.len()];
    let bins = groups
        .into_iter()
        .enumerate()
        .map(|(id, (key, members))| {
            let mut sum = [0.0; 4];
            for &m in &members {
                assignment[m] = id;
                let a = &actions[m];
                for (s, v) in sum.iter_mut().zip([a.pick[0], a.pick[1], a.place[0], a.place[1]]) {
                    *s += v;
                }
            }
            let k = members.len() as f64;
            let mean = ContinuousAction { pick: [sum[0] / k, sum[1] / k], place: [sum[2] / k, sum[3] / k] };
            ActionBin { key, count: members.len(), mean }
        })
        .collect();
    ActionBinTable { bin_fraction, pick_only, assignment, bins }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn act(p: [f64; 2], q: [f64; 2]) -> ContinuousAction {
        ContinuousAction { pick: p, place: q }
    }

    #[test]
    fn whole_space_is_one_bin() {
        let acts = [act([0.1, 0.2], [0.9, 0.4]), act([0.3, 0.0], [0.5, 1.0])];
        let t = bin_actions(&acts, 1.0, false);
        assert_eq!(t.len(), 1);
        let m = t.bins[0].mean;
        assert!((m.pick[0] - 0.2).abs() < 1e-12 && (m.place[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn coarse_grid_stays_put() {
        let acts = [act([0.1, 0.1], [0.7, 0.1]), act([0.4, 0.1], [0.1, 0.7]), act([0.7, 0.7], [0.4, 0.4])];
        let t = bin_actions(&acts, 0.25, false);
        assert_eq!(t.len(), 3);
        for (i, a) in acts.iter().enumerate() {
            assert_eq!(t.bins[t.assignment[i]].mean, *a);
        }
    }

    #[test]
    fn pick_only_merges_by_pick() {
        let acts = [act([0.1, 0.1], [0.7, 0.1]), act([0.1, 0.1], [0.1, 0.7])];
        assert_eq!(bin_actions(&acts, 0.25, true).len(), 1);
        assert_eq!(bin_actions(&acts, 0.25, false).len(), 2);
    }

    #[test]
    fn uniform_actions_occupancy() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let acts: Vec<_> = (0..10_000)
            .map(|_| act([rng.random(), rng.random()], [rng.random(), rng.random()]))
            .collect();
        let t = bin_actions(&acts, 0.15, false);
        assert_eq!(t.cells_per_axis(), 7);
        assert!(t.len() <= 7usize.pow(4) && t.len() >= 100, "{} bins", t.len());
        // every mean lies inside its own bin
        for b in &t.bins {
            assert_eq!(t.key_of(&b.mean), b.key);
        }
    }
}
