//! Central finite-difference checks of the analytic gradients.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::graph::{Graph, Var};
use crate::diffcore::nn::{ConvResBlock, LinearResBlock};
use crate::diffcore::params::ParamStore;
use crate::diffcore::tensor::Tensor;
use crate::error::Result;
use crate::kinematics::Skeleton;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, falling back to the absolute difference when
/// both gradients are essentially zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn scalar_loss<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    Ok(g.value(loss).item())
}

/// Relative error of the gradient with respect to each input tensor.
pub fn check_inputs<F>(inputs: &[Tensor], h: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let mut errors = Vec::with_capacity(inputs.len());
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let mut numeric = vec![0.0; inputs[i].len()];
        let mut probe = inputs.to_vec();
        for (e, slot) in numeric.iter_mut().enumerate() {
            let x0 = inputs[i].data()[e];
            probe[i].data_mut()[e] = x0 + h;
            let up = scalar_loss(&probe, &f)?;
            probe[i].data_mut()[e] = x0 - h;
            let down = scalar_loss(&probe, &f)?;
            probe[i].data_mut()[e] = x0;
            *slot = (up - down) / (2.0 * h);
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(errors)
}

/// Relative error of the gradient with respect to every parameter tensor.
pub fn check_params<F>(store: &ParamStore, h: f64, f: F) -> Result<Vec<(String, f64)>>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = f(&mut g, s)?;
        Ok(g.value(loss).item())
    };
    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    {
        let mut g = Graph::new();
        let loss = f(&mut g, store)?;
        g.backward_into(loss, &mut analytic_store)?;
    }
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    let mut probe = store.clone();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let analytic = analytic_store.get(&name).and_then(Tensor::grad).map(<[f64]>::to_vec).unwrap_or_default();
        let len = store.get(&name).map_or(0, Tensor::len);
        let mut numeric = vec![0.0; len];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let x0 = store.get(&name).expect("known name").data()[e];
            probe.get_mut(&name).expect("known name").data_mut()[e] = x0 + h;
            let up = eval(&probe)?;
            probe.get_mut(&name).expect("known name").data_mut()[e] = x0 - h;
            let down = eval(&probe)?;
            probe.get_mut(&name).expect("known name").data_mut()[e] = x0;
            *slot = (up - down) / (2.0 * h);
        }
        out.push((name, relative_error(&analytic, &numeric)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub rel_error: f64,
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero so ReLU kinks stay out of the stencil.
fn kink_free_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduces `out` to a scalar through fixed random weights so every output
/// element contributes a distinct sensitivity.
fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let shape = g.shape(out).to_vec();
    let w = g.input(random_tensor(&mut rng, &shape));
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>);

/// Checks every graph primitive on random inputs.
pub fn primitive_suite(seed: u64) -> Result<Vec<GradCheckEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = |rng: &mut ChaCha8Rng, s: &[usize]| random_tensor(rng, s);
    let skel = Arc::new(Skeleton::chain(4, 0.3)?);

    let mut cases: Vec<Case> = vec![
        ("linear", vec![r(&mut rng, &[3, 4]), r(&mut rng, &[4, 2]), r(&mut rng, &[2])], Box::new(|g, v| g.linear(v[0], v[1], v[2]))),
        (
            "conv1d_temporal",
            vec![r(&mut rng, &[2, 6, 3]), r(&mut rng, &[3, 3, 4]), r(&mut rng, &[4])],
            Box::new(|g, v| g.conv1d_temporal(v[0], v[1], v[2], 1, 1)),
        ),
        (
            "conv1d_temporal_strided",
            vec![r(&mut rng, &[2, 7, 3]), r(&mut rng, &[3, 3, 2]), r(&mut rng, &[2])],
            Box::new(|g, v| g.conv1d_temporal(v[0], v[1], v[2], 2, 1)),
        ),
        ("relu", vec![kink_free_tensor(&mut rng, &[3, 5])], Box::new(|g, v| Ok(g.relu(v[0])))),
        ("add", vec![r(&mut rng, &[4]), r(&mut rng, &[4])], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![r(&mut rng, &[4]), r(&mut rng, &[4])], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", vec![r(&mut rng, &[2, 3]), r(&mut rng, &[2, 3])], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("scale", vec![r(&mut rng, &[5])], Box::new(|g, v| Ok(g.scale(v[0], -1.7)))),
        ("add_scalar", vec![r(&mut rng, &[5])], Box::new(|g, v| Ok(g.add_scalar(v[0], 0.3)))),
        ("exp", vec![r(&mut rng, &[5])], Box::new(|g, v| Ok(g.exp(v[0])))),
        ("square", vec![r(&mut rng, &[5])], Box::new(|g, v| Ok(g.square(v[0])))),
        ("sum", vec![r(&mut rng, &[2, 3])], Box::new(|g, v| Ok(g.sum(v[0])))),
        ("mean_axis", vec![r(&mut rng, &[2, 3, 4])], Box::new(|g, v| g.mean_axis(v[0], 1))),
        ("softmax", vec![r(&mut rng, &[3, 4, 2])], Box::new(|g, v| g.softmax(v[0], 1))),
        (
            "concat",
            vec![r(&mut rng, &[2, 3, 2]), r(&mut rng, &[2, 1, 2])],
            Box::new(|g, v| g.concat(&[v[0], v[1], v[0]], 1)),
        ),
        ("reshape", vec![r(&mut rng, &[2, 6])], Box::new(|g, v| g.reshape(v[0], &[3, 4]))),
        ("slice", vec![r(&mut rng, &[3, 5, 2])], Box::new(|g, v| g.slice(v[0], 1, 1, 3))),
        ("scale_rows", vec![r(&mut rng, &[3, 2, 2]), r(&mut rng, &[3])], Box::new(|g, v| g.scale_rows(v[0], v[1]))),
        ("rot6d_to_matrix", vec![r(&mut rng, &[4, 6])], Box::new(|g, v| g.rot6d_to_matrix(v[0]))),
        ("aa_to_matrix", vec![r(&mut rng, &[4, 3])], Box::new(|g, v| g.aa_to_matrix(v[0]))),
        (
            "aa_to_matrix_small_angle",
            vec![Tensor::new(vec![2, 3], vec![3e-3, -2e-3, 1e-3, 1e-6, 0.0, -2e-6])?],
            Box::new(|g, v| g.aa_to_matrix(v[0])),
        ),
        (
            "forward_kinematics",
            vec![r(&mut rng, &[2, 3, 3]), r(&mut rng, &[2, 3, 3, 3])],
            Box::new(move |g, v| g.forward_kinematics(v[0], v[1], skel.clone())),
        ),
    ];

    let mut store = ParamStore::new();
    let conv_block = ConvResBlock::new("conv_block", 3, 4, 2);
    conv_block.init(&mut store, seed)?;
    let lin_block = LinearResBlock::new("lin_block", 4);
    lin_block.init(&mut store, seed)?;
    let conv_x = kink_free_tensor(&mut rng, &[2, 5, 3]);
    let lin_x = kink_free_tensor(&mut rng, &[3, 4]);

    let mut out = Vec::new();
    for (i, (name, inputs, f)) in cases.drain(..).enumerate() {
        let case_seed = seed.wrapping_add(i as u64);
        let errors = check_inputs(&inputs, DEFAULT_STEP, |g, v| {
            let y = f(g, v)?;
            project(g, y, case_seed)
        })?;
        let worst = errors.into_iter().fold(0.0, f64::max);
        out.push(GradCheckEntry { name: name.to_string(), rel_error: worst });
    }

    for (name, x, is_conv) in [("conv_residual_block", conv_x, true), ("linear_residual_block", lin_x, false)] {
        let f = |g: &mut Graph, s: &ParamStore| {
            let xv = g.input(x.clone());
            let y = if is_conv { conv_block.forward(g, s, xv)? } else { lin_block.forward(g, s, xv)? };
            project(g, y, seed)
        };
        let params = check_params(&store, DEFAULT_STEP, f)?;
        let inputs = check_inputs(std::slice::from_ref(&x), DEFAULT_STEP, |g, v| {
            let y = if is_conv { conv_block.forward(g, &store, v[0])? } else { lin_block.forward(g, &store, v[0])? };
            project(g, y, seed)
        })?;
        let relevant = params
            .iter()
            .filter(|(n, _)| n.starts_with(if is_conv { "conv_block" } else { "lin_block" }))
            .map(|(_, e)| *e);
        let worst = relevant.chain(inputs).fold(0.0, f64::max);
        out.push(GradCheckEntry { name: name.to_string(), rel_error: worst });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        for entry in primitive_suite(11).unwrap() {
            assert!(entry.rel_error < 1e-5, "{}: {:e}", entry.name, entry.rel_error);
        }
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((relative_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-15);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }
}
