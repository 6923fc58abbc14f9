use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffcore::ParamStore;
use crate::error::{Error, Result};
use crate::prior::{DecodedMotion, PriorModel};

/// `n` latents drawn from the standard normal prior, in draw order.
pub fn sample_latents(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

/// Decodes `n` prior samples.
pub fn sample(model: &PriorModel, store: &ParamStore, n: usize, seed: u64) -> Result<Vec<DecodedMotion>> {
    let latents = sample_latents(model.config().latent_dim, n, seed);
    model.decode_latents(store, &latents)
}

/// `(1 − t)·a + t·b`.
pub fn lerp_latent(a: &[f64], b: &[f64], t: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape("lerp_latent", &[a.len()], &[b.len()]));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect())
}

/// Decodes the latent a fraction `t` of the way from `a` to `b`.
pub fn interpolate(model: &PriorModel, store: &ParamStore, a: &[f64], b: &[f64], t: f64) -> Result<DecodedMotion> {
    let z = lerp_latent(a, b, t)?;
    let mut out = model.decode_latents(store, &[z])?;
    Ok(out.remove(0))
}
