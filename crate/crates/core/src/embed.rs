//! Shared model roles. The pipeline talks to the mapping, prediction and
//! suggestion models through these traits so the ground-truth oracles from
//! the simulator can stand in for any of them.

use std::collections::BTreeSet;

use ndarray::Array2;

use crate::learn::LearnError;
use crate::sim::{BoxWorld, GridAction, Observation};

/// Observation → vector map (ξ for the mapping module, the Siamese branch for
/// the suggestion module).
pub trait Embedder {
    fn dim(&self) -> usize;

    /// One row per observation.
    fn embed_batch(&self, obs: &[&Observation]) -> Result<Array2<f32>, LearnError>;

    fn embed(&self, obs: &Observation) -> Result<Vec<f32>, LearnError> {
        Ok(self.embed_batch(&[obs])?.row(0).to_vec())
    }

    /// Embeds in chunks to bound peak memory.
    fn embed_all(&self, obs: &[Observation]) -> Result<Array2<f32>, LearnError> {
        let mut out = Array2::zeros((obs.len(), self.dim()));
        for (c, chunk) in obs.chunks(256).enumerate() {
            let refs: Vec<&Observation> = chunk.iter().collect();
            let rows = self.embed_batch(&refs)?;
            out.slice_mut(ndarray::s![c * 256..c * 256 + chunk.len(), ..]).assign(&rows);
        }
        Ok(out)
    }
}

/// Latent → observation map (ω).
pub trait Generator {
    fn generate(&self, z: &[f32]) -> Result<Observation, LearnError>;
}

/// Flatten observations into a `[n, pixels]` matrix.
pub fn pixel_matrix(obs: &[&Observation], width: usize) -> Result<Array2<f32>, LearnError> {
    let mut x = Array2::zeros((obs.len(), width));
    for (i, o) in obs.iter().enumerate() {
        if o.pixels.len() != width {
            return Err(LearnError::Shape(format!(
                "observation has {} values, model expects {width}",
                o.pixels.len()
            )));
        }
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&o.pixels));
    }
    Ok(x)
}

/// Ground-truth embedding: the state indicator vector scaled by `scale`.
/// Reads `meta_label`, so it is only usable for evaluation and tests.
#[derive(Debug, Clone)]
pub struct OracleEmbedder {
    pub n_states: usize,
    pub scale: f32,
}

impl OracleEmbedder {
    pub fn new(n_states: usize, scale: f32) -> Self {
        OracleEmbedder { n_states, scale }
    }

    /// State id encoded by an indicator vector, if any entry is hot.
    pub fn decode_label(&self, z: &[f32]) -> Option<usize> {
        let (i, v) = z.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
        (*v > 0.5 * self.scale).then_some(i)
    }
}

impl Embedder for OracleEmbedder {
    fn dim(&self) -> usize {
        self.n_states
    }

    fn embed_batch(&self, obs: &[&Observation]) -> Result<Array2<f32>, LearnError> {
        let mut x = Array2::zeros((obs.len(), self.n_states));
        for (i, o) in obs.iter().enumerate() {
            let label = o
                .meta_label
                .ok_or_else(|| LearnError::Shape("oracle embedding needs a meta label".into()))?
                as usize;
            if label >= self.n_states {
                return Err(LearnError::Shape(format!("label {label} out of range")));
            }
            x[[i, label]] = self.scale;
        }
        Ok(x)
    }
}

/// Renders a noiseless observation of the state an indicator vector encodes.
#[derive(Debug, Clone)]
pub struct OracleGenerator<'a> {
    pub world: &'a BoxWorld,
    pub embedder: OracleEmbedder,
}

impl Generator for OracleGenerator<'_> {
    fn generate(&self, z: &[f32]) -> Result<Observation, LearnError> {
        let label = self
            .embedder
            .decode_label(z)
            .ok_or_else(|| LearnError::Shape("latent encodes no state".into()))?;
        let cfg = crate::sim::SimConfig { position_noise: 0.0, brightness_range: [1.0, 1.0], ..self.world.config().clone() };
        let mut obs = crate::sim::render(self.world.state(label), &cfg, 0);
        obs.meta_label = Some(label as u32);
        Ok(obs)
    }
}

/// Ground-truth suggestion: the valid actions of the labelled state.
pub fn oracle_suggestions(world: &BoxWorld, obs: &Observation) -> Option<BTreeSet<GridAction>> {
    let label = obs.meta_label? as usize;
    (label < world.n_states()).then(|| world.valid_actions(world.state(label)))
}
