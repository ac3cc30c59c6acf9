//! Latent prediction model: next latent state from the current one and an
//! action, plus the covered-subspace reliability gate.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::data::pack::{meta_field, pack_mlp, unpack_mlp, FormatError, Pack, Persist};
use crate::data::Dataset;
use crate::embed::Embedder;
use crate::learn::{mse, train, Activation, LearnError, Mlp, TrainConfig};
use crate::roadmap::CoveredSpace;
use crate::sim::{ActionTable, BoxWorld, GridAction};

#[derive(Debug, Error)]
pub enum LpmError {
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("dataset has no action pairs")]
    NoActionPairs,
    #[error("action {0} is not in the action table")]
    UnknownAction(GridAction),
}

/// Latent dynamics `f(z, u)`.
pub trait LatentDynamics {
    fn predict(&self, z: &[f32], u: &GridAction) -> Result<Vec<f32>, LpmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpmConfig {
    pub hidden: Vec<usize>,
    /// Predict the latent displacement instead of the absolute next state.
    pub residual: bool,
    pub train: TrainConfig,
}

impl Default for LpmConfig {
    fn default() -> Self {
        LpmConfig {
            hidden: vec![100, 100],
            residual: true,
            train: TrainConfig { epochs: 150, batch_size: 32, learning_rate: 1e-3, ..Default::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpmParams {
    pub net: Mlp<f32>,
    pub latent_dim: usize,
    pub actions: ActionTable,
    pub residual: bool,
}

#[derive(Debug, Clone)]
pub struct TrainedLpm {
    pub params: LpmParams,
    pub trace: Vec<f64>,
}

impl LpmParams {
    pub fn new(latent_dim: usize, actions: ActionTable, cfg: &LpmConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![latent_dim + actions.len()];
        sizes.extend(&cfg.hidden);
        sizes.push(latent_dim);
        LpmParams {
            net: Mlp::new(&sizes, Activation::LeakyRelu, Activation::Identity, &mut rng),
            latent_dim,
            actions,
            residual: cfg.residual,
        }
    }

    fn input_row(&self, z: &[f32], u: &GridAction, out: &mut [f32]) -> Result<(), LpmError> {
        let k = self.actions.index_of(u).ok_or(LpmError::UnknownAction(*u))?;
        if z.len() != self.latent_dim {
            return Err(LearnError::Shape(format!("latent has {} values, expected {}", z.len(), self.latent_dim)).into());
        }
        out.fill(0.0);
        out[..z.len()].copy_from_slice(z);
        out[self.latent_dim + k] = 1.0;
        Ok(())
    }

    /// LPM-R: the prediction when it lands within `ε·ρ_gate` (L1) of a
    /// covered state, `None` otherwise. The prediction itself is not altered.
    pub fn predict_reliable(
        &self,
        z: &[f32],
        u: &GridAction,
        covered: &CoveredSpace,
        rho_gate: f32,
    ) -> Result<Option<Vec<f32>>, LpmError> {
        predict_reliable(self, z, u, covered, rho_gate)
    }
}

impl LatentDynamics for LpmParams {
    fn predict(&self, z: &[f32], u: &GridAction) -> Result<Vec<f32>, LpmError> {
        let mut x = vec![0.0; self.latent_dim + self.actions.len()];
        self.input_row(z, u, &mut x)?;
        let mut y = self.net.forward(&x)?;
        if self.residual {
            for (o, v) in y.iter_mut().zip(z) {
                *o += v;
            }
        }
        Ok(y)
    }
}

/// LPM-R for any dynamics model.
pub fn predict_reliable(
    f: &dyn LatentDynamics,
    z: &[f32],
    u: &GridAction,
    covered: &CoveredSpace,
    rho_gate: f32,
) -> Result<Option<Vec<f32>>, LpmError> {
    let p = f.predict(z, u)?;
    let within = covered.nearest(&p).is_some_and(|(_, d)| d <= covered.eps * rho_gate);
    Ok(within.then_some(p))
}

/// Fits `f` on the action pairs of `ds`, inputs and targets being posterior
/// means under `mm`.
pub fn train_lpm(ds: &Dataset, mm: &dyn Embedder, actions: &ActionTable, cfg: &LpmConfig) -> Result<TrainedLpm, LpmError> {
    let pairs: Vec<_> = ds.action_pairs().collect();
    if pairs.is_empty() {
        return Err(LpmError::NoActionPairs);
    }
    let latents = mm.embed_all(&ds.observations)?;
    let init = LpmParams::new(mm.dim(), actions.clone(), cfg, cfg.train.seed);
    let width = init.net.input_width();
    let dim = init.latent_dim;
    let mut x = Array2::zeros((pairs.len(), width));
    let mut t = Array2::zeros((pairs.len(), dim));
    for (i, p) in pairs.iter().enumerate() {
        let za = latents.row(p.obs_a).to_vec();
        init.input_row(&za, p.action.as_ref().unwrap(), x.row_mut(i).as_slice_mut().unwrap())?;
        for j in 0..dim {
            t[[i, j]] = latents[[p.obs_b, j]] - if cfg.residual { za[j] } else { 0.0 };
        }
    }
    let mut objective = |models: &[Mlp<f32>], batch: &[usize], _: &mut ChaCha8Rng| {
        let xb = x.select(ndarray::Axis(0), batch);
        let tb = t.select(ndarray::Axis(0), batch);
        let cache = models[0].forward_batch(xb.view())?;
        let (l, g) = mse(cache.output.view(), tb.view())?;
        let (grads, _) = models[0].backward(&cache, g.view())?;
        Ok((l as f64, vec![grads]))
    };
    let out = train(&[init.net.clone()], pairs.len(), &cfg.train, &mut objective)?;
    let params = LpmParams { net: out.models.into_iter().next().unwrap(), ..init };
    Ok(TrainedLpm { params, trace: out.trace })
}

/// Ground-truth dynamics over indicator latents: applies the action to the
/// encoded state; invalid actions map to the origin, which lies `scale` away
/// from every indicator.
#[derive(Debug, Clone)]
pub struct OracleDynamics<'a> {
    pub world: &'a BoxWorld,
    pub scale: f32,
}

impl LatentDynamics for OracleDynamics<'_> {
    fn predict(&self, z: &[f32], u: &GridAction) -> Result<Vec<f32>, LpmError> {
        if self.world.action_table().index_of(u).is_none() {
            return Err(LpmError::UnknownAction(*u));
        }
        let mut out = vec![0.0; z.len()];
        let (i, v) = z
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .ok_or_else(|| LpmError::Learn(LearnError::Shape("empty latent".into())))?;
        if *v > 0.5 * self.scale {
            if let Some(next) = self.world.transition(i, u) {
                out[next] = self.scale;
            }
        }
        Ok(out)
    }
}

impl Persist for LpmParams {
    const KIND: &'static str = "lpm";

    fn to_pack(&self) -> Pack {
        let mut pack = Pack::new(Self::KIND, json!({}));
        let arch = pack_mlp(&mut pack, "net", &self.net);
        pack.meta = json!({
            "net": arch,
            "latent_dim": self.latent_dim,
            "actions": self.actions.actions(),
            "residual": self.residual,
        });
        pack
    }

    fn from_pack(pack: &Pack) -> Result<Self, FormatError> {
        pack.expect_kind(Self::KIND)?;
        let net = unpack_mlp(pack, "net", &meta_field(&pack.meta, "net")?)?;
        let latent_dim: usize = meta_field(&pack.meta, "latent_dim")?;
        let actions = ActionTable::new(meta_field(&pack.meta, "actions")?);
        if net.input_width() != latent_dim + actions.len() || net.output_width() != latent_dim {
            return Err(FormatError::header("network widths disagree with latent_dim and action table"));
        }
        Ok(LpmParams { net, latent_dim, actions, residual: meta_field(&pack.meta, "residual")? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TrainingTuple;
    use crate::embed::OracleEmbedder;
    use crate::sim::{Observation, SimConfig};

    fn world() -> BoxWorld {
        BoxWorld::new(SimConfig::default()).unwrap()
    }

    #[test]
    fn unknown_action_is_rejected() {
        let w = world();
        let lpm = LpmParams::new(4, w.action_table().clone(), &LpmConfig::default(), 0);
        let bogus = GridAction::new((0, 0), (0, 1));
        assert!(matches!(lpm.predict(&[0.0; 4], &bogus), Err(LpmError::UnknownAction(_))));
        let good = w.action_table().actions()[0];
        let a = lpm.predict(&[0.1, 0.2, 0.3, 0.4], &good).unwrap();
        assert_eq!(a, lpm.predict(&[0.1, 0.2, 0.3, 0.4], &good).unwrap());
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn memorizes_a_single_pair() {
        let w = world();
        let mut ds = Dataset::default();
        let s = 5;
        let u = *w.valid_actions(w.state(s)).iter().next().unwrap();
        let a = ds.push_observation(w.render_id(s, 1));
        let b = ds.push_observation(w.render_id(w.transition(s, &u).unwrap(), 2));
        ds.tuples.push(TrainingTuple::action(a, b, u));
        let emb = OracleEmbedder::new(w.n_states(), 1.0);
        let cfg = LpmConfig { train: TrainConfig { epochs: 300, batch_size: 1, learning_rate: 1e-3, ..Default::default() }, ..Default::default() };
        let lpm = train_lpm(&ds, &emb, w.action_table(), &cfg).unwrap();
        let za = emb.embed(&ds.observations[a]).unwrap();
        let zb = emb.embed(&ds.observations[b]).unwrap();
        let p = lpm.params.predict(&za, &u).unwrap();
        let err: f32 = p.iter().zip(&zb).map(|(x, y)| (x - y).abs()).sum();
        assert!(err < 1e-2, "error {err}");
        assert!(lpm.trace.last().unwrap() * 10.0 < lpm.trace[0]);
    }

    #[test]
    fn no_action_pairs() {
        let w = world();
        let mut ds = Dataset::default();
        let a = ds.push_observation(w.render_id(0, 1));
        ds.tuples.push(TrainingTuple::similar(a, a));
        let emb = OracleEmbedder::new(w.n_states(), 1.0);
        assert!(matches!(train_lpm(&ds, &emb, w.action_table(), &LpmConfig::default()), Err(LpmError::NoActionPairs)));
    }

    #[test]
    fn gate_admits_covered_predictions_only() {
        let w = world();
        let scale = 10.0;
        let f = OracleDynamics { world: &w, scale };
        let emb = OracleEmbedder::new(w.n_states(), scale);
        let s = 3;
        let u = *w.valid_actions(w.state(s)).iter().next().unwrap();
        let next = w.transition(s, &u).unwrap();
        let obs: Vec<Observation> = vec![w.render_id(next, 0)];
        let covered = CoveredSpace::new(emb.embed_all(&obs).unwrap(), vec![0], 1.0);
        let z = emb.embed(&w.render_id(s, 0)).unwrap();
        let got = predict_reliable(&f, &z, &u, &covered, 1.0).unwrap();
        assert_eq!(got, Some(f.predict(&z, &u).unwrap()));
        let other = *w.valid_actions(w.state(s)).iter().nth(1).unwrap();
        assert_eq!(predict_reliable(&f, &z, &other, &covered, 1.0).unwrap(), None);
    }

    #[test]
    fn persist_round_trip() {
        let w = world();
        let lpm = LpmParams::new(16, w.action_table().clone(), &LpmConfig::default(), 2);
        let back = LpmParams::from_pack(&Pack::from_bytes(&lpm.to_pack().to_bytes()).unwrap()).unwrap();
        assert_eq!(lpm, back);
    }
}
