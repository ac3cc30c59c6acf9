//! Mapping module: a variational encoder/decoder pair whose latent geometry is
//! shaped by the pair structure of the dataset. Similar pairs are pulled
//! together, action pairs pushed at least `d_m` apart (L1).

use ndarray::{s, Array2, ArrayView2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::data::pack::{meta_field, pack_mlp, unpack_mlp, FormatError, Pack, Persist};
use crate::data::Dataset;
use crate::embed::{pixel_matrix, Embedder, Generator};
use crate::learn::{
    attract, hinge_repel, kl_standard_normal, train, Activation, Gradients, LearnError, Mlp, Real,
    TrainConfig,
};
use crate::sim::Observation;

/// Lower bound on ε so a degenerate latent space still yields a usable radius.
pub const EPSILON_FLOOR: f32 = 1e-6;

const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Error)]
pub enum MappingError {
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("dataset has no tuples")]
    EmptyDataset,
    #[error("dataset has no similar pairs")]
    NoSimilarPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta_kl: f64,
    pub gamma_action: f64,
    pub d_m: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { beta_kl: 1e-3, gamma_action: 1.0, d_m: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub weights: LossWeights,
    pub train: TrainConfig,
}

impl Default for MmConfig {
    fn default() -> Self {
        MmConfig {
            latent_dim: 16,
            hidden: vec![256, 256],
            weights: LossWeights::default(),
            train: TrainConfig { epochs: 40, batch_size: 32, learning_rate: 1e-3, ..Default::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmParams {
    /// Outputs `[mean | logvar]`.
    pub encoder: Mlp<f32>,
    pub decoder: Mlp<f32>,
    pub latent_dim: usize,
    pub image_side: usize,
    pub weights: LossWeights,
}

#[derive(Debug, Clone)]
pub struct TrainedMm {
    pub params: MmParams,
    pub trace: Vec<f64>,
}

impl MmParams {
    pub fn new(image_side: usize, cfg: &MmConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = image_side * image_side * 3;
        let mut enc = vec![px];
        enc.extend(&cfg.hidden);
        enc.push(2 * cfg.latent_dim);
        let mut dec = vec![cfg.latent_dim];
        dec.extend(cfg.hidden.iter().rev());
        dec.push(px);
        MmParams {
            encoder: Mlp::new(&enc, Activation::LeakyRelu, Activation::Identity, &mut rng),
            decoder: Mlp::new(&dec, Activation::LeakyRelu, Activation::Identity, &mut rng),
            latent_dim: cfg.latent_dim,
            image_side,
            weights: cfg.weights,
        }
    }

    fn pixels(&self) -> usize {
        self.image_side * self.image_side * 3
    }

    /// Posterior means for a batch.
    pub fn encode_batch(&self, obs: &[&Observation]) -> Result<Array2<f32>, LearnError> {
        let x = pixel_matrix(obs, self.pixels())?;
        let out = self.encoder.predict(x.view())?;
        Ok(out.slice(s![.., ..self.latent_dim]).to_owned())
    }

    /// ξ: the posterior mean.
    pub fn encode(&self, obs: &Observation) -> Result<Vec<f32>, LearnError> {
        Ok(self.encode_batch(&[obs])?.row(0).to_vec())
    }

    /// ω: decoder output clamped to the pixel range.
    pub fn decode(&self, z: &[f32]) -> Result<Observation, LearnError> {
        if z.len() != self.latent_dim {
            return Err(LearnError::Shape(format!("latent has {} values, expected {}", z.len(), self.latent_dim)));
        }
        let mut pixels = self.decoder.forward(z)?;
        for p in &mut pixels {
            *p = if p.is_finite() { p.clamp(0.0, 1.0) } else { 0.0 };
        }
        Ok(Observation::new(self.image_side, pixels, None))
    }
}

impl Embedder for MmParams {
    fn dim(&self) -> usize {
        self.latent_dim
    }

    fn embed_batch(&self, obs: &[&Observation]) -> Result<Array2<f32>, LearnError> {
        self.encode_batch(obs)
    }
}

impl Generator for MmParams {
    fn generate(&self, z: &[f32]) -> Result<Observation, LearnError> {
        self.decode(z)
    }
}

/// Loss pieces of one batch, for traces and tests.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub recon: f64,
    pub kl: f64,
    pub action: f64,
}

impl LossTerms {
    pub fn total(&self, w: &LossWeights) -> f64 {
        self.recon + w.beta_kl * self.kl + w.gamma_action * self.action
    }
}

/// Batch loss with analytic gradients for both networks.
///
/// `x` stacks the first images of the `b` tuples followed by the second
/// images; `is_action[k]` flags tuple `k`; `noise` is the `2b × latent`
/// reparameterization draw. Every term is averaged over tuples.
pub fn batch_loss<F: Real>(
    encoder: &Mlp<F>,
    decoder: &Mlp<F>,
    x: ArrayView2<F>,
    is_action: &[bool],
    noise: ArrayView2<F>,
    w: &LossWeights,
) -> Result<(LossTerms, Gradients<F>, Gradients<F>), LearnError> {
    let b = is_action.len();
    let latent = encoder.output_width() / 2;
    if x.nrows() != 2 * b || noise.dim() != (2 * b, latent) {
        return Err(LearnError::Shape("batch layout does not match tuple count".into()));
    }
    let nb = F::from_usize(b.max(1)).unwrap();
    let half = F::from_f(0.5);
    let clamp = F::from_f(LOGVAR_CLAMP);

    let enc = encoder.forward_batch(x)?;
    let mean = enc.output.slice(s![.., ..latent]);
    let raw_lv = enc.output.slice(s![.., latent..]);
    let logvar = raw_lv.mapv(|v| v.max(-clamp).min(clamp));
    let std = logvar.mapv(|v| (half * v).exp());
    let z = &mean + &(&std * &noise);

    let dec = decoder.forward_batch(z.view())?;
    let diff = &dec.output - &x;
    let recon = diff.iter().fold(F::zero(), |a, &d| a + d * d) / nb;
    let two = F::from_f(2.0);
    let d_out = diff.mapv(|d| two * d / nb);
    let (g_dec, dz) = decoder.backward(&dec, d_out.view())?;

    // KL helper averages over its 2b rows; rescale to per-tuple
    let (kl_rows, dkl_m, dkl_lv) = kl_standard_normal(mean, logvar.view())?;
    let kl = kl_rows * two;
    let beta = F::from_f(w.beta_kl);
    let gamma = F::from_f(w.gamma_action);
    let d_m = F::from_f(w.d_m);

    let mut dmean = &dz + &(&dkl_m * (beta * two));
    let mut dlv = &dz * &noise * &std * half + &(&dkl_lv * (beta * two));
    Zip::from(&mut dlv).and(raw_lv).for_each(|g, &r| {
        if r < -clamp || r > clamp {
            *g = F::zero();
        }
    });

    let mut action = F::zero();
    for (k, &act) in is_action.iter().enumerate() {
        let (ra, rb) = (mean.row(k), mean.row(b + k));
        let d = ra.iter().zip(rb.iter()).fold(F::zero(), |a, (&p, &q)| a + (p - q).abs());
        let (val, dval) = if act { hinge_repel(d, d_m) } else { attract(d) };
        action = action + val / nb;
        let g = gamma * dval / nb;
        if g != F::zero() {
            for j in 0..latent {
                let diff = mean[[k, j]] - mean[[b + k, j]];
                let sgn = if diff > F::zero() {
                    F::one()
                } else if diff < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                };
                dmean[[k, j]] = dmean[[k, j]] + g * sgn;
                dmean[[b + k, j]] = dmean[[b + k, j]] - g * sgn;
            }
        }
    }

    let mut up = Array2::zeros(enc.output.raw_dim());
    up.slice_mut(s![.., ..latent]).assign(&dmean);
    up.slice_mut(s![.., latent..]).assign(&dlv);
    let (g_enc, _) = encoder.backward(&enc, up.view())?;
    let terms = LossTerms {
        recon: recon.to_f64().unwrap(),
        kl: kl.to_f64().unwrap(),
        action: action.to_f64().unwrap(),
    };
    Ok((terms, g_enc, g_dec))
}

/// Trains ξ and ω from scratch on every tuple of `ds`. The model seed and the
/// batch-order seed both come from `cfg.train.seed`.
pub fn train_mm(ds: &Dataset, cfg: &MmConfig) -> Result<TrainedMm, MappingError> {
    let side = ds.observations.first().map(|o| o.side).ok_or(MappingError::EmptyDataset)?;
    let init = MmParams::new(side, cfg, cfg.train.seed);
    train_mm_from(ds, init, &cfg.train)
}

/// Continues training from `init` (used for fine-tuning).
pub fn train_mm_from(ds: &Dataset, init: MmParams, tc: &TrainConfig) -> Result<TrainedMm, MappingError> {
    if ds.tuples.is_empty() {
        return Err(MappingError::EmptyDataset);
    }
    let px = init.pixels();
    let refs: Vec<&Observation> = ds.observations.iter().collect();
    let all = pixel_matrix(&refs, px)?;
    let latent = init.latent_dim;
    let weights = init.weights;
    let mut objective = |models: &[Mlp<f32>], batch: &[usize], rng: &mut ChaCha8Rng| {
        let b = batch.len();
        let mut x = Array2::zeros((2 * b, px));
        let mut flags = Vec::with_capacity(b);
        for (k, &t) in batch.iter().enumerate() {
            let tup = &ds.tuples[t];
            x.row_mut(k).assign(&all.row(tup.obs_a));
            x.row_mut(b + k).assign(&all.row(tup.obs_b));
            flags.push(tup.action.is_some());
        }
        let noise = Array2::from_shape_simple_fn((2 * b, latent), || StandardNormal.sample(rng));
        let (terms, ge, gd) = batch_loss(&models[0], &models[1], x.view(), &flags, noise.view(), &weights)?;
        Ok((terms.total(&weights), vec![ge, gd]))
    };
    let out = train(&[init.encoder.clone(), init.decoder.clone()], ds.tuples.len(), tc, &mut objective)?;
    let mut models = out.models.into_iter();
    let params = MmParams {
        encoder: models.next().unwrap(),
        decoder: models.next().unwrap(),
        ..init
    };
    Ok(TrainedMm { params, trace: out.trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mu0: f32,
    pub sigma0: f32,
}

/// Mean and population standard deviation of similar-pair L1 distances.
pub fn latent_stats(embedder: &dyn Embedder, ds: &Dataset) -> Result<LatentStats, MappingError> {
    let latents = embedder.embed_all(&ds.observations)?;
    latent_stats_from(&latents.view(), ds)
}

/// As [`latent_stats`] with precomputed per-observation latents.
pub fn latent_stats_from(latents: &ArrayView2<f32>, ds: &Dataset) -> Result<LatentStats, MappingError> {
    let d: Vec<f64> = ds
        .similar_pairs()
        .map(|t| {
            latents
                .row(t.obs_a)
                .iter()
                .zip(latents.row(t.obs_b).iter())
                .map(|(a, b)| (a - b).abs() as f64)
                .sum()
        })
        .collect();
    if d.is_empty() {
        return Err(MappingError::NoSimilarPairs);
    }
    let n = d.len() as f64;
    let mu = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    Ok(LatentStats { mu0: mu as f32, sigma0: var.sqrt() as f32 })
}

/// ε = μ₀ + w·σ₀, floored at [`EPSILON_FLOOR`].
pub fn epsilon(stats: &LatentStats, w_eps: f32) -> f32 {
    (stats.mu0 + w_eps * stats.sigma0).max(EPSILON_FLOOR)
}

/// The w grid searched for box stacking.
pub fn w_grid() -> Vec<f32> {
    (0..7).map(|i| -0.65 + 0.1 * i as f32).collect()
}

impl Persist for MmParams {
    const KIND: &'static str = "mapping";

    fn to_pack(&self) -> Pack {
        let mut pack = Pack::new(Self::KIND, json!({}));
        let enc = pack_mlp(&mut pack, "encoder", &self.encoder);
        let dec = pack_mlp(&mut pack, "decoder", &self.decoder);
        pack.meta = json!({
            "encoder": enc,
            "decoder": dec,
            "latent_dim": self.latent_dim,
            "image_side": self.image_side,
            "weights": self.weights,
        });
        pack
    }

    fn from_pack(pack: &Pack) -> Result<Self, FormatError> {
        pack.expect_kind(Self::KIND)?;
        let encoder = unpack_mlp(pack, "encoder", &meta_field(&pack.meta, "encoder")?)?;
        let decoder = unpack_mlp(pack, "decoder", &meta_field(&pack.meta, "decoder")?)?;
        let latent_dim: usize = meta_field(&pack.meta, "latent_dim")?;
        if encoder.output_width() != 2 * latent_dim || decoder.input_width() != latent_dim {
            return Err(FormatError::header("network widths disagree with latent_dim"));
        }
        Ok(MmParams {
            encoder,
            decoder,
            latent_dim,
            image_side: meta_field(&pack.meta, "image_side")?,
            weights: meta_field(&pack.meta, "weights")?,
        })
    }
}
