//! Losses with their analytic derivatives.

use ndarray::{Array2, ArrayView2, Zip};

use super::{LearnError, Real};

/// Mean squared error over every element; returns the loss and dLoss/dPred.
pub fn mse<F: Real>(pred: ArrayView2<F>, target: ArrayView2<F>) -> Result<(F, Array2<F>), LearnError> {
    if pred.dim() != target.dim() {
        return Err(LearnError::Shape(format!("mse of {:?} against {:?}", pred.dim(), target.dim())));
    }
    let n = F::from_usize(pred.len().max(1)).unwrap();
    let diff = &pred - &target;
    let loss = diff.iter().fold(F::zero(), |acc, &d| acc + d * d) / n;
    let two = F::from_f(2.0);
    Ok((loss, diff.mapv(|d| two * d / n)))
}

/// KL divergence of diagonal Gaussians from the standard normal, summed over
/// latent dimensions and averaged over rows. Returns the loss and gradients
/// with respect to the mean and the log-variance.
pub fn kl_standard_normal<F: Real>(
    mean: ArrayView2<F>,
    logvar: ArrayView2<F>,
) -> Result<(F, Array2<F>, Array2<F>), LearnError> {
    if mean.dim() != logvar.dim() {
        return Err(LearnError::Shape("mean and logvar differ in shape".into()));
    }
    let rows = F::from_usize(mean.nrows().max(1)).unwrap();
    let half = F::from_f(0.5);
    let mut loss = F::zero();
    let mut dmean = Array2::zeros(mean.raw_dim());
    let mut dlogvar = Array2::zeros(mean.raw_dim());
    Zip::from(&mut dmean)
        .and(&mut dlogvar)
        .and(&mean)
        .and(&logvar)
        .for_each(|dm, dl, &m, &lv| {
            let e = lv.exp();
            loss = loss + half * (m * m + e - F::one() - lv);
            *dm = m / rows;
            *dl = half * (e - F::one()) / rows;
        });
    Ok((loss / rows, dmean, dlogvar))
}

/// `max(0, d_m - d)^2` and its derivative in `d`.
pub fn hinge_repel<F: Real>(d: F, d_m: F) -> (F, F) {
    let gap = d_m - d;
    if gap > F::zero() {
        (gap * gap, -F::from_f(2.0) * gap)
    } else {
        (F::zero(), F::zero())
    }
}

/// `d^2` and its derivative.
pub fn attract<F: Real>(d: F) -> (F, F) {
    (d * d, F::from_f(2.0) * d)
}

pub fn l1_distance<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + (x - y).abs())
}
