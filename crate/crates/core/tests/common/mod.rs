//! Randomized finite-difference cases shared by the gradient tests and the
//! acceptance run. Each returns the worst relative error over its instances.

use acelsr::learn::{finite_difference_check, kl_standard_normal, mse, Activation, Mlp};
use acelsr::mapping::{batch_loss, LossWeights};
use acelsr::suggestion::contrastive_loss;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: u64 = 100;
pub const TOL: f64 = 1e-4;
const H: f64 = 1e-6;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

fn random_net(rng: &mut ChaCha8Rng, sizes: &[usize], hidden: Activation, output: Activation) -> Mlp<f64> {
    let mut net = Mlp::<f64>::new(sizes, hidden, output, rng);
    // non-zero biases so no unit sits exactly at a kink
    let flat: Vec<f64> = net.flatten().iter().map(|w| w + rng.random_range(-0.1..0.1)).collect();
    net.set_flat(&flat).unwrap();
    net
}

pub fn mlp_with_mse_gradients() -> f64 {
    let acts = [Activation::LeakyRelu, Activation::Tanh, Activation::Identity];
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let hidden = acts[i as usize % 3];
        let output = acts[(i as usize / 3) % 3];
        let sizes = [rng.random_range(1..6), rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..5)];
        let net = random_net(&mut rng, &sizes, hidden, output);
        let rows = rng.random_range(1..6);
        let x = random_matrix(&mut rng, rows, sizes[0], 1.5);
        let t = random_matrix(&mut rng, rows, sizes[3], 1.0);
        let cache = net.forward_batch(x.view()).unwrap();
        let (_, d) = mse(cache.output.view(), t.view()).unwrap();
        let (g, _) = net.backward(&cache, d.view()).unwrap();
        let mut probe = net.clone();
        let check = finite_difference_check(&net.flatten(), &g.flatten(), H, |p| {
            probe.set_flat(p).unwrap();
            mse(probe.predict(x.view()).unwrap().view(), t.view()).unwrap().0
        });
        worst = worst.max(check.max_rel_error);
    }
    worst
}

pub fn input_gradients_of_mlp() -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
        let sizes = [rng.random_range(1..6), rng.random_range(2..8), rng.random_range(1..4)];
        let net = random_net(&mut rng, &sizes, Activation::Tanh, Activation::Identity);
        let x = random_matrix(&mut rng, 2, sizes[0], 1.0);
        let t = random_matrix(&mut rng, 2, sizes[2], 1.0);
        let cache = net.forward_batch(x.view()).unwrap();
        let (_, d) = mse(cache.output.view(), t.view()).unwrap();
        let (_, dx) = net.backward(&cache, d.view()).unwrap();
        let flat_x: Vec<f64> = x.iter().copied().collect();
        let check = finite_difference_check(&flat_x, &dx.iter().copied().collect::<Vec<_>>(), H, |p| {
            let xp = Array2::from_shape_vec(x.raw_dim(), p.to_vec()).unwrap();
            mse(net.predict(xp.view()).unwrap().view(), t.view()).unwrap().0
        });
        worst = worst.max(check.max_rel_error);
    }
    worst
}

pub fn kl_gradients() -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + i);
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..6));
        let m = random_matrix(&mut rng, r, c, 2.0);
        let lv = random_matrix(&mut rng, r, c, 3.0);
        let (_, dm, dlv) = kl_standard_normal(m.view(), lv.view()).unwrap();
        let n = r * c;
        let params: Vec<f64> = m.iter().chain(lv.iter()).copied().collect();
        let analytic: Vec<f64> = dm.iter().chain(dlv.iter()).copied().collect();
        let check = finite_difference_check(&params, &analytic, H, |p| {
            let mm = Array2::from_shape_vec((r, c), p[..n].to_vec()).unwrap();
            let ll = Array2::from_shape_vec((r, c), p[n..].to_vec()).unwrap();
            kl_standard_normal(mm.view(), ll.view()).unwrap().0
        });
        worst = worst.max(check.max_rel_error);
    }
    worst
}

pub fn mapping_loss_gradients() -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + i);
        let (input, hidden, latent) = (rng.random_range(2..7), rng.random_range(2..6), rng.random_range(1..4));
        let enc = random_net(&mut rng, &[input, hidden, 2 * latent], Activation::LeakyRelu, Activation::Identity);
        let dec = random_net(&mut rng, &[latent, hidden, input], Activation::LeakyRelu, Activation::Identity);
        let b = rng.random_range(1..4);
        let x = random_matrix(&mut rng, 2 * b, input, 1.0).mapv(|v| v.abs());
        let noise = random_matrix(&mut rng, 2 * b, latent, 1.0);
        let is_action: Vec<bool> = (0..b).map(|_| rng.random_bool(0.5)).collect();
        let w = LossWeights { beta_kl: rng.random_range(0.0..1.0), gamma_action: rng.random_range(0.1..2.0), d_m: rng.random_range(0.5..6.0) };
        let (_, ge, gd) = batch_loss(&enc, &dec, x.view(), &is_action, noise.view(), &w).unwrap();
        let ne = enc.n_params();
        let params: Vec<f64> = enc.flatten().into_iter().chain(dec.flatten()).collect();
        let analytic: Vec<f64> = ge.flatten().into_iter().chain(gd.flatten()).collect();
        let (mut pe, mut pd) = (enc.clone(), dec.clone());
        let check = finite_difference_check(&params, &analytic, H, |p| {
            pe.set_flat(&p[..ne]).unwrap();
            pd.set_flat(&p[ne..]).unwrap();
            let (t, _, _) = batch_loss(&pe, &pd, x.view(), &is_action, noise.view(), &w).unwrap();
            t.total(&w)
        });
        worst = worst.max(check.max_rel_error);
    }
    worst
}

pub fn contrastive_loss_gradients() -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + i);
        let (input, hidden, out) = (rng.random_range(2..7), rng.random_range(2..6), rng.random_range(1..5));
        let net = random_net(&mut rng, &[input, hidden, out], Activation::LeakyRelu, Activation::Identity);
        let b = rng.random_range(1..5);
        let x = random_matrix(&mut rng, 2 * b, input, 1.0);
        let similar: Vec<bool> = (0..b).map(|_| rng.random_bool(0.5)).collect();
        let margin = rng.random_range(0.5..3.0);
        let (_, g) = contrastive_loss(&net, x.view(), &similar, margin).unwrap();
        let mut probe = net.clone();
        let check = finite_difference_check(&net.flatten(), &g.flatten(), H, |p| {
            probe.set_flat(p).unwrap();
            contrastive_loss(&probe, x.view(), &similar, margin).unwrap().0
        });
        worst = worst.max(check.max_rel_error);
    }
    worst
}
