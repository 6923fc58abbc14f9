//! Layer initialization and the two residual blocks the prior is built from.
//!
//! Layers are plain name prefixes into a [`ParamStore`]; `"<name>.w"` and
//! `"<name>.b"` hold the weight and bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::diffcore::graph::{Graph, Var};
use crate::diffcore::params::ParamStore;
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

/// Generator for one named parameter, so the value of a parameter depends
/// only on the seed and its name, not on what else the model contains.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(name.as_bytes()).finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Uniform in `±sqrt(6 / fan_in)`.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

pub fn add_linear(store: &mut ParamStore, name: &str, input: usize, output: usize, seed: u64) -> Result<()> {
    let w_name = format!("{name}.w");
    let w = kaiming_uniform(&[input, output], input, &mut param_rng(seed, &w_name));
    store.insert(w_name, w)?;
    store.insert(format!("{name}.b"), Tensor::zeros(&[output]))
}

/// Linear layer whose weight and bias start at zero.
pub fn add_linear_zeroed(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<()> {
    store.insert(format!("{name}.w"), Tensor::zeros(&[input, output]))?;
    store.insert(format!("{name}.b"), Tensor::zeros(&[output]))
}

pub fn linear(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{name}.w"))?;
    let b = g.param(store, &format!("{name}.b"))?;
    g.linear(x, w, b)
}

pub fn add_conv(store: &mut ParamStore, name: &str, taps: usize, c_in: usize, c_out: usize, seed: u64) -> Result<()> {
    let w_name = format!("{name}.w");
    let w = kaiming_uniform(&[taps, c_in, c_out], taps * c_in, &mut param_rng(seed, &w_name));
    store.insert(w_name, w)?;
    store.insert(format!("{name}.b"), Tensor::zeros(&[c_out]))
}

pub fn conv(g: &mut Graph, store: &ParamStore, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let w = g.param(store, &format!("{name}.w"))?;
    let b = g.param(store, &format!("{name}.b"))?;
    g.conv1d_temporal(x, w, b, stride, pad)
}

/// `relu(conv_b(relu(conv_a(x))) + skip(x))` over `[B, T, C]` input, kernel 3.
///
/// The skip path is a strided 1×1 convolution whenever the stride or the
/// channel count changes, and the identity otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvResBlock {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
}

impl ConvResBlock {
    pub const TAPS: usize = 3;

    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, stride: usize) -> Self {
        ConvResBlock { name: name.into(), c_in, c_out, stride }
    }

    fn has_projection(&self) -> bool {
        self.stride != 1 || self.c_in != self.c_out
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        add_conv(store, &format!("{}.conv_a", self.name), Self::TAPS, self.c_in, self.c_out, seed)?;
        add_conv(store, &format!("{}.conv_b", self.name), Self::TAPS, self.c_out, self.c_out, seed)?;
        if self.has_projection() {
            add_conv(store, &format!("{}.skip", self.name), 1, self.c_in, self.c_out, seed)?;
        }
        Ok(())
    }

    /// Output length for `frames` input frames.
    pub fn output_len(&self, frames: usize) -> usize {
        (frames - 1) / self.stride + 1
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = conv(g, store, &format!("{}.conv_a", self.name), x, self.stride, 1)?;
        let h = g.relu(h);
        let h = conv(g, store, &format!("{}.conv_b", self.name), h, 1, 1)?;
        let skip = if self.has_projection() {
            conv(g, store, &format!("{}.skip", self.name), x, self.stride, 0)?
        } else {
            x
        };
        let sum = g.add(h, skip)?;
        Ok(g.relu(sum))
    }
}

/// `x + relu(W·x + b)` on `[N, width]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearResBlock {
    pub name: String,
    pub width: usize,
}

impl LinearResBlock {
    pub fn new(name: impl Into<String>, width: usize) -> Self {
        LinearResBlock { name: name.into(), width }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        add_linear(store, &format!("{}.fc", self.name), self.width, self.width, seed)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        if g.shape(x).last() != Some(&self.width) {
            return Err(Error::shape("linear residual block", g.shape(x), &[self.width]));
        }
        let h = linear(g, store, &format!("{}.fc", self.name), x)?;
        let h = g.relu(h);
        g.add(x, h)
    }
}
