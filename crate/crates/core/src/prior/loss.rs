use crate::diffcore::{Graph, Var};
use crate::error::{Error, Result};
use crate::prior::model::{DecoderVars, EncoderVars};

/// Loss terms and the weights they were combined with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub rec: f64,
    pub kl: f64,
    pub pose_reg: f64,
    pub lambda_rec: f64,
    pub lambda_kl: f64,
    pub lambda_vposer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub rec: f64,
    pub kl: f64,
    pub vposer: f64,
}

/// Builds the training objective on the graph.
///
/// * `rec`: squared joint distance averaged over frames and joints;
/// * `kl`: closed-form `KL(N(μ, σ²) ‖ N(0, I))` summed over latent
///   dimensions and averaged over the batch;
/// * `pose_reg`: squared norm of the pose code averaged over frames.
///
/// `target` holds pose-space joints `[B·K, J, 3]`.
pub fn loss_graph(
    g: &mut Graph,
    enc: &EncoderVars,
    dec: &DecoderVars,
    target: Var,
    weights: LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let js = g.shape(dec.joints).to_vec();
    if g.shape(target) != js.as_slice() {
        return Err(Error::shape("reconstruction target", &js, g.shape(target)));
    }
    let frames = js[0];
    let batch = g.shape(enc.mu)[0];

    let diff = g.sub(dec.joints, target)?;
    let sq = g.square(diff);
    let sq = g.sum(sq);
    let rec = g.scale(sq, 1.0 / (frames * js[1]) as f64);

    let mu2 = g.square(enc.mu);
    let var = g.exp(enc.logvar);
    let t = g.add(mu2, var)?;
    let t = g.sub(t, enc.logvar)?;
    let t = g.add_scalar(t, -1.0);
    let t = g.sum(t);
    let kl = g.scale(t, 0.5 / batch as f64);

    let code = g.square(dec.phi_l);
    let code = g.sum(code);
    let pose_reg = g.scale(code, 1.0 / frames as f64);

    let a = g.scale(rec, weights.rec);
    let b = g.scale(kl, weights.kl);
    let c = g.scale(pose_reg, weights.vposer);
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;

    let out = LossBreakdown {
        total: g.value(total).item(),
        rec: g.value(rec).item(),
        kl: g.value(kl).item(),
        pose_reg: g.value(pose_reg).item(),
        lambda_rec: weights.rec,
        lambda_kl: weights.kl,
        lambda_vposer: weights.vposer,
    };
    if !(out.total.is_finite() && out.rec.is_finite() && out.kl.is_finite() && out.pose_reg.is_finite()) {
        let mu_max = g.value(enc.mu).data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let lv_max = g.value(enc.logvar).data().iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        return Err(Error::Numeric(format!(
            "non-finite loss: rec={} kl={} pose_reg={} (max |mu|={mu_max:.3e}, max logvar={lv_max:.3e})",
            out.rec, out.kl, out.pose_reg
        )));
    }
    Ok((total, out))
}

/// Closed-form KL divergence of a diagonal Gaussian from the standard normal.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum()
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffcore::Tensor;

    /// `∫ q log(q/p)` for `q = N(μ, σ²)`, `p = N(0, 1)` by composite Simpson
    /// over `μ ± 14σ`.
    fn kl_quadrature(mu: f64, logvar: f64) -> f64 {
        let sigma = (0.5 * logvar).exp();
        let (a, b, n) = (mu - 14.0 * sigma, mu + 14.0 * sigma, 20_000);
        let h = (b - a) / n as f64;
        let f = |x: f64| {
            let zq = (x - mu) / sigma;
            let log_q = -0.5 * zq * zq - sigma.ln() - 0.5 * std::f64::consts::TAU.ln();
            let log_p = -0.5 * x * x - 0.5 * std::f64::consts::TAU.ln();
            log_q.exp() * (log_q - log_p)
        };
        let mut acc = f(a) + f(b);
        for i in 1..n {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.0; 4], &[0.0; 4]), 0.0);
        assert_eq!(kl_divergence(&[1.0; 256], &[0.0; 256]), 128.0);
        assert!(kl_divergence(&[0.3, -2.0], &[1.5, -0.7]) > 0.0);
    }

    #[test]
    fn kl_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let d = rng.random_range(1..6);
            let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lv: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..1.5)).collect();
            let numeric: f64 = mu.iter().zip(&lv).map(|(m, l)| kl_quadrature(*m, *l)).sum();
            assert!((kl_divergence(&mu, &lv) - numeric).abs() < 1e-6);
        }
    }

    struct Case {
        g: Graph,
        enc: EncoderVars,
        dec: DecoderVars,
        target: Var,
    }

    fn case(seed: u64, perfect: bool) -> Case {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |shape: &[usize], scale: f64| Tensor::from_fn(shape, |_| scale * rng.random_range(-1.0..1.0));
        let (b, k, j, d, p) = (2, 4, 3, 5, 6);
        let joints = r(&[b * k, j, 3], 1.0);
        let target = if perfect { joints.clone() } else { r(&[b * k, j, 3], 1.0) };
        let (mu, lv, code) = if perfect {
            (Tensor::zeros(&[b, d]), Tensor::zeros(&[b, d]), Tensor::zeros(&[b * k, p]))
        } else {
            (r(&[b, d], 1.0), r(&[b, d], 1.0), r(&[b * k, p], 1.0))
        };
        let mut g = Graph::new();
        let enc = EncoderVars { mu: g.input(mu), logvar: g.input(lv), alpha: None };
        let placeholder = g.input(Tensor::zeros(&[1]));
        let dec = DecoderVars {
            phi_g: placeholder,
            phi_l: g.input(code),
            global: placeholder,
            local_aa: placeholder,
            joints: g.input(joints),
        };
        let target = g.input(target);
        Case { g, enc, dec, target }
    }

    const WEIGHTS: LossWeights = LossWeights { rec: 1.0, kl: 0.01, vposer: 0.001 };

    #[test]
    fn perfect_reconstruction_at_prior_scores_zero() {
        let mut c = case(1, true);
        let (_, lb) = loss_graph(&mut c.g, &c.enc, &c.dec, c.target, WEIGHTS).unwrap();
        assert_eq!((lb.total, lb.rec, lb.kl, lb.pose_reg), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn total_is_the_weighted_sum() {
        for seed in 0..20 {
            let mut c = case(seed, false);
            let (var, lb) = loss_graph(&mut c.g, &c.enc, &c.dec, c.target, WEIGHTS).unwrap();
            let expect = lb.lambda_rec * lb.rec + lb.lambda_kl * lb.kl + lb.lambda_vposer * lb.pose_reg;
            assert!((lb.total - expect).abs() < 1e-10);
            assert_eq!(c.g.value(var).item(), lb.total);
            assert!(lb.rec >= 0.0 && lb.kl >= 0.0 && lb.pose_reg >= 0.0);
        }
    }

    #[test]
    fn terms_follow_their_definitions() {
        let mut c = case(3, false);
        let (_, lb) = loss_graph(&mut c.g, &c.enc, &c.dec, c.target, WEIGHTS).unwrap();
        let (pj, tj) = (c.g.value(c.dec.joints).data(), c.g.value(c.target).data());
        let sq: f64 = pj.iter().zip(tj).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((lb.rec - sq / 24.0).abs() < 1e-12);
        let (mu, lv) = (c.g.value(c.enc.mu).data(), c.g.value(c.enc.logvar).data());
        let kl = (kl_divergence(&mu[..5], &lv[..5]) + kl_divergence(&mu[5..], &lv[5..])) / 2.0;
        assert!((lb.kl - kl).abs() < 1e-12);
        let code: f64 = c.g.value(c.dec.phi_l).data().iter().map(|v| v * v).sum();
        assert!((lb.pose_reg - code / 8.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_terms_abort() {
        let mut c = case(4, false);
        let big = c.g.input(Tensor::full(&[2, 5], 1e300));
        c.enc.logvar = big;
        assert!(matches!(loss_graph(&mut c.g, &c.enc, &c.dec, c.target, WEIGHTS), Err(Error::Numeric(_))));
    }
}
