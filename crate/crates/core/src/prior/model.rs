//! Encoder, reparameterization and decoder of the motion prior.
//!
//! Encoder, for a batch of `B` windows of `K = S·n` frames:
//!
//! 1. the input block is cut into `S` segments and the first residual block
//!    runs on each segment independently;
//! 2. segment features are re-weighted by `α = softmax_S(MLP(F_seg))`
//!    (or by the constant `1/S` without segment guidance);
//! 3. blocks 2 and 3 halve the temporal resolution each;
//! 4. every block's output is averaged over time and the three vectors are
//!    concatenated, followed by an embedding of `F_seq` when sequence
//!    guidance is on;
//! 5. two linear heads give the posterior mean and log-variance.
//!
//! The decoder maps `z` through a hidden layer and two linear residual
//! blocks to `K` frames of a 6D root orientation plus a pose code, which a
//! linear map turns into axis-angle local rotations.

use std::sync::Arc;

use ndarray::Array3;

use crate::diffcore::nn::{self, ConvResBlock, LinearResBlock};
use crate::diffcore::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::kinematics::{rot6d_to_matrix, AxisAngle, Motion, Pose, Rot6D, Skeleton, Vec3};
use crate::prior::config::TrainConfig;
use crate::prior::input::{EncoderSample, InputLayout};

/// Channels per decoded frame before the pose code: the 6D root orientation.
const ROT6D: usize = 6;

#[derive(Debug, Clone)]
pub struct PriorModel {
    cfg: TrainConfig,
    skeleton: Arc<Skeleton>,
    layout: InputLayout,
    blocks: [ConvResBlock; 3],
    dec_blocks: [LinearResBlock; 2],
}

/// Posterior parameters on the graph, each `[B, D]`.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub mu: Var,
    pub logvar: Var,
    /// Segment weights `[B, S]` when segment guidance is on.
    pub alpha: Option<Var>,
}

/// Decoder outputs on the graph, with `M = B·K` frames.
#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    /// `[M, 6]`
    pub phi_g: Var,
    /// `[M, P]` pose codes.
    pub phi_l: Var,
    /// `[M, 3, 3]`
    pub global: Var,
    /// `[M, 3(J-1)]` axis-angle local rotations.
    pub local_aa: Var,
    /// `[M, J, 3]` pose-space joints.
    pub joints: Var,
}

/// One decoded window.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedMotion {
    pub phi_g: Vec<Rot6D>,
    pub phi_l: Vec<Vec<f64>>,
    /// Poses with zero root translation.
    pub motion: Motion,
    /// `K × J × 3` pose-space joints.
    pub joints: Array3<f64>,
}

impl PriorModel {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let skeleton = Arc::new(cfg.skeleton.build()?);
        let layout = InputLayout::new(skeleton.joint_count());
        let [w1, w2, w3] = cfg.enc_widths;
        let blocks = [
            ConvResBlock::new("enc.block1", layout.channels(), w1, 1),
            ConvResBlock::new("enc.block2", w1, w2, 2),
            ConvResBlock::new("enc.block3", w2, w3, 2),
        ];
        let dec_blocks = [
            LinearResBlock::new("dec.res1", cfg.dec_hidden),
            LinearResBlock::new("dec.res2", cfg.dec_hidden),
        ];
        Ok(PriorModel { cfg: cfg.clone(), skeleton, layout, blocks, dec_blocks })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn layout(&self) -> InputLayout {
        self.layout
    }

    fn joints(&self) -> usize {
        self.skeleton.joint_count()
    }

    fn fseq_len(&self) -> usize {
        self.cfg.c_m * self.joints() * 3
    }

    fn fseg_len(&self) -> usize {
        self.cfg.c_s * self.joints() * 3
    }

    fn frame_width(&self) -> usize {
        ROT6D + self.cfg.pose_code_dim
    }

    /// Fresh parameters drawn from `cfg.seed`.
    pub fn init_params(&self) -> Result<ParamStore> {
        let c = &self.cfg;
        let seed = c.seed;
        let mut s = ParamStore::new();
        for b in &self.blocks {
            b.init(&mut s, seed)?;
        }
        let mut fused = c.enc_widths.iter().sum::<usize>();
        if c.seg_guidance {
            nn::add_linear(&mut s, "enc.attn.fc1", self.fseg_len(), c.attn_hidden, seed)?;
            // Zero output layer: every segment starts with weight 1/S.
            nn::add_linear_zeroed(&mut s, "enc.attn.fc2", c.attn_hidden, 1)?;
        }
        if c.seq_guidance {
            nn::add_linear(&mut s, "enc.seq.fc1", self.fseq_len(), c.fseq_embed, seed)?;
            nn::add_linear(&mut s, "enc.seq.fc2", c.fseq_embed, c.fseq_embed, seed)?;
            fused += c.fseq_embed;
        }
        nn::add_linear(&mut s, "enc.mu", fused, c.latent_dim, seed)?;
        // Zero log-variance head: unit posterior variance at initialization.
        nn::add_linear_zeroed(&mut s, "enc.logvar", fused, c.latent_dim)?;

        nn::add_linear(&mut s, "dec.fc_in", c.latent_dim, c.dec_hidden, seed)?;
        for b in &self.dec_blocks {
            b.init(&mut s, seed)?;
        }
        nn::add_linear(&mut s, "dec.out", c.dec_hidden, c.k * self.frame_width(), seed)?;
        // Bias the root orientation towards identity.
        let bias = s.get_mut("dec.out.b").expect("just inserted").data_mut();
        for frame in bias.chunks_mut(self.frame_width()) {
            frame[0] = 1.0;
            frame[4] = 1.0;
        }
        let pose_out = 3 * (self.joints() - 1);
        let w = nn::kaiming_uniform(
            &[c.pose_code_dim, pose_out],
            c.pose_code_dim,
            &mut nn::param_rng(seed, "dec.pose.w"),
        );
        s.insert("dec.pose.w", w)?;
        Ok(s)
    }

    /// Posterior of a batch of windows.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, batch: &[&EncoderSample]) -> Result<EncoderVars> {
        let c = &self.cfg;
        let b = batch.len();
        if b == 0 {
            return Err(Error::Data("cannot encode an empty batch".into()));
        }
        let (k, s, n) = (c.k, c.segments, c.segment_len);
        let cin = self.layout.channels();
        let mut input = Vec::with_capacity(b * k * cin);
        for sample in batch {
            if sample.input.len() != k * cin {
                return Err(Error::shape("encode input", &[sample.input.len()], &[k, cin]));
            }
            input.extend_from_slice(&sample.input);
        }
        let x = g.input(Tensor::new(vec![b * s, n, cin], input)?);
        let h1 = self.blocks[0].forward(g, store, x)?;
        let w1 = c.enc_widths[0];

        let (h1, alpha) = if c.seg_guidance {
            let mut fseg = Vec::with_capacity(b * s * self.fseg_len());
            for sample in batch {
                if sample.fseg.len() != s * self.fseg_len() {
                    return Err(Error::shape("encode F_seg", &[sample.fseg.len()], &[s, self.fseg_len()]));
                }
                fseg.extend_from_slice(&sample.fseg);
            }
            let f = g.input(Tensor::new(vec![b * s, self.fseg_len()], fseg)?);
            let a = nn::linear(g, store, "enc.attn.fc1", f)?;
            let a = g.relu(a);
            let a = nn::linear(g, store, "enc.attn.fc2", a)?;
            let a = g.reshape(a, &[b, s])?;
            let alpha = g.softmax(a, 1)?;
            let flat = g.reshape(alpha, &[b * s])?;
            (g.scale_rows(h1, flat)?, Some(alpha))
        } else {
            (g.scale(h1, 1.0 / s as f64), None)
        };

        let h1 = g.reshape(h1, &[b, k, w1])?;
        let h2 = self.blocks[1].forward(g, store, h1)?;
        let h3 = self.blocks[2].forward(g, store, h2)?;
        let mut pooled = Vec::with_capacity(4);
        for h in [h1, h2, h3] {
            pooled.push(g.mean_axis(h, 1)?);
        }
        if c.seq_guidance {
            let mut fseq = Vec::with_capacity(b * self.fseq_len());
            for sample in batch {
                if sample.fseq.len() != self.fseq_len() {
                    return Err(Error::shape("encode F_seq", &[sample.fseq.len()], &[self.fseq_len()]));
                }
                fseq.extend_from_slice(&sample.fseq);
            }
            let f = g.input(Tensor::new(vec![b, self.fseq_len()], fseq)?);
            let e = nn::linear(g, store, "enc.seq.fc1", f)?;
            let e = g.relu(e);
            pooled.push(nn::linear(g, store, "enc.seq.fc2", e)?);
        }
        let fused = g.concat(&pooled, 1)?;
        let mu = nn::linear(g, store, "enc.mu", fused)?;
        let logvar = nn::linear(g, store, "enc.logvar", fused)?;
        Ok(EncoderVars { mu, logvar, alpha })
    }

    /// `z = μ + exp(½·logvar) ⊙ ε`.
    pub fn reparameterize(g: &mut Graph, enc: &EncoderVars, eps: Tensor) -> Result<Var> {
        let half = g.scale(enc.logvar, 0.5);
        let sigma = g.exp(half);
        let e = g.input(eps);
        let noise = g.mul(sigma, e)?;
        g.add(enc.mu, noise)
    }

    /// Linear, bias-free map from pose codes `[M, P]` to axis-angle local
    /// rotations `[M, 3(J-1)]`.
    pub fn pose_decode(&self, g: &mut Graph, store: &ParamStore, phi_l: Var) -> Result<Var> {
        let w = g.param(store, "dec.pose.w")?;
        let out = 3 * (self.joints() - 1);
        let zero = g.input(Tensor::zeros(&[out]));
        g.linear(phi_l, w, zero)
    }

    /// Decodes latents `[B, D]` into `B·K` frames.
    pub fn decode(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<DecoderVars> {
        let c = &self.cfg;
        let shape = g.shape(z).to_vec();
        if shape.len() != 2 || shape[1] != c.latent_dim {
            return Err(Error::shape("decode", &shape, &[0, c.latent_dim]));
        }
        let frames = shape[0] * c.k;
        let j = self.joints();
        let h = nn::linear(g, store, "dec.fc_in", z)?;
        let mut h = g.relu(h);
        for block in &self.dec_blocks {
            h = block.forward(g, store, h)?;
        }
        let out = nn::linear(g, store, "dec.out", h)?;
        let out = g.reshape(out, &[frames, self.frame_width()])?;
        let phi_g = g.slice(out, 1, 0, ROT6D)?;
        let phi_l = g.slice(out, 1, ROT6D, c.pose_code_dim)?;
        let global = g.rot6d_to_matrix(phi_g).map_err(|e| frame_error(e, c.k))?;
        let local_aa = self.pose_decode(g, store, phi_l)?;
        let flat = g.reshape(local_aa, &[frames * (j - 1), 3])?;
        let local = g.aa_to_matrix(flat)?;
        let local = g.reshape(local, &[frames, j - 1, 3, 3])?;
        let joints = g.forward_kinematics(global, local, self.skeleton.clone())?;
        Ok(DecoderVars { phi_g, phi_l, global, local_aa, joints })
    }

    /// Posterior means, without consuming randomness.
    pub fn encode_mean(&self, store: &ParamStore, samples: &[EncoderSample]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(EVAL_CHUNK) {
            let mut g = Graph::new();
            let refs: Vec<&EncoderSample> = chunk.iter().collect();
            let enc = self.encode(&mut g, store, &refs)?;
            out.extend(g.value(enc.mu).data().chunks(self.cfg.latent_dim).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn decode_latents(&self, store: &ParamStore, latents: &[Vec<f64>]) -> Result<Vec<DecodedMotion>> {
        let d = self.cfg.latent_dim;
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(EVAL_CHUNK) {
            let mut flat = Vec::with_capacity(chunk.len() * d);
            for z in chunk {
                if z.len() != d || z.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("latent must hold {d} finite values")));
                }
                flat.extend_from_slice(z);
            }
            let mut g = Graph::new();
            let z = g.input(Tensor::new(vec![chunk.len(), d], flat)?);
            let dec = self.decode(&mut g, store, z)?;
            out.extend(self.materialize(&g, &dec)?);
        }
        Ok(out)
    }

    /// Reads decoded windows off the graph.
    pub fn materialize(&self, g: &Graph, dec: &DecoderVars) -> Result<Vec<DecodedMotion>> {
        let (k, j, p) = (self.cfg.k, self.joints(), self.cfg.pose_code_dim);
        let frames = g.shape(dec.phi_g)[0];
        let batch = frames / k;
        let (phi_g, phi_l) = (g.value(dec.phi_g).data(), g.value(dec.phi_l).data());
        let (local, joints) = (g.value(dec.local_aa).data(), g.value(dec.joints).data());
        let mut out = Vec::with_capacity(batch);
        for b in 0..batch {
            let mut poses = Vec::with_capacity(k);
            let mut rot6 = Vec::with_capacity(k);
            let mut codes = Vec::with_capacity(k);
            for f in 0..k {
                let m = b * k + f;
                let mut r = [0.0; 6];
                r.copy_from_slice(&phi_g[m * 6..m * 6 + 6]);
                let rot = rot6d_to_matrix(&Rot6D(r)).map_err(|e| Error::Numeric(format!("frame {f}: {e}")))?;
                let aa = &local[m * 3 * (j - 1)..(m + 1) * 3 * (j - 1)];
                poses.push(Pose {
                    global_orient: rot.to_aa(),
                    local: aa.chunks(3).map(|v| AxisAngle::new(v[0], v[1], v[2])).collect(),
                    root: Vec3::zeros(),
                });
                rot6.push(Rot6D(r));
                codes.push(phi_l[m * p..(m + 1) * p].to_vec());
            }
            let jt = Array3::from_shape_vec((k, j, 3), joints[b * k * j * 3..(b + 1) * k * j * 3].to_vec())
                .expect("joint block size");
            out.push(DecodedMotion { phi_g: rot6, phi_l: codes, motion: Motion::new(poses, 30.0), joints: jt });
        }
        Ok(out)
    }
}

/// Windows per graph in evaluation passes.
const EVAL_CHUNK: usize = 32;

fn frame_error(e: Error, k: usize) -> Error {
    match e {
        Error::Numeric(msg) => match msg.strip_prefix("row ").and_then(|r| r.split_once(':')) {
            Some((row, rest)) => match row.parse::<usize>() {
                Ok(row) => Error::Numeric(format!(
                    "degenerate 6D orientation in window {} frame {}:{rest}",
                    row / k,
                    row % k
                )),
                Err(_) => Error::Numeric(msg),
            },
            None => Error::Numeric(msg),
        },
        other => other,
    }
}
