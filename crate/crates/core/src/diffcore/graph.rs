//! Tape of recorded tensor operations and its reverse sweep.
//!
//! Every op validates shapes eagerly, computes its value, and appends a node.
//! Nodes only reference earlier nodes, so the tape order is a topological
//! order and [`Graph::backward`] can walk it in reverse.

use std::sync::Arc;

use nalgebra::Matrix3;

use crate::diffcore::kernels::{dot, matmul_acc, matmul_at_acc, matmul_bt_acc};
use crate::diffcore::params::ParamStore;
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};
use crate::kinematics::{gram_schmidt, hat, rodrigues_coeffs, Skeleton, Vec3};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    Linear { x: Var, w: Var, b: Var },
    Conv1d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Square(Var),
    Sum(Var),
    MeanAxis { x: Var, axis: usize },
    Softmax { x: Var, axis: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape(Var),
    Slice { x: Var, axis: usize, start: usize },
    ScaleRows { x: Var, w: Var },
    Rot6dToMatrix(Var),
    AaToMatrix(Var),
    ForwardKinematics { global: Var, local: Var, skeleton: Arc<Skeleton> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// `(outer, dim, inner)` sizes around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// A leaf that gradients are computed for but that is not a parameter.
    pub fn input(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.clear_grad();
        self.push(t, Op::Leaf)
    }

    /// Records the current value of a named parameter as a leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let (index, tensor) = store
            .get_full(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        let mut t = tensor.clone();
        t.clear_grad();
        Ok(self.push(t, Op::Param(index)))
    }

    /// `y = x·W + b` with `x: [N, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::shape("linear", xs, ws));
        }
        if bs != [ws[1]] {
            return Err(Error::shape("linear bias", bs, &ws[1..]));
        }
        let (n, k, m) = (xs[0], xs[1], ws[1]);
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(self.data(b));
        }
        matmul_acc(self.data(x), self.data(w), &mut out, n, k, m);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Linear { x, w, b }))
    }

    /// Temporal convolution over time-major input.
    ///
    /// `x: [B, T, C_in]`, `kernel: [k, C_in, C_out]`, `bias: [C_out]`; zero
    /// padding of `pad` frames on both ends of each sequence.
    pub fn conv1d_temporal(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (xs, ks, bs) = (self.shape(x), self.shape(kernel), self.shape(bias));
        if xs.len() != 3 || ks.len() != 3 || xs[2] != ks[1] {
            return Err(Error::shape("conv1d_temporal", xs, ks));
        }
        if bs != [ks[2]] {
            return Err(Error::shape("conv1d_temporal bias", bs, &ks[2..]));
        }
        if stride == 0 || xs[1] + 2 * pad < ks[0] {
            return Err(Error::shape("conv1d_temporal window", xs, ks));
        }
        let geo = ConvGeometry::new(xs, ks, stride, pad);
        let col = geo.im2col(self.data(x));
        let rows = geo.batch * geo.t_out;
        let mut out = Vec::with_capacity(rows * geo.c_out);
        for _ in 0..rows {
            out.extend_from_slice(self.data(bias));
        }
        matmul_acc(&col, self.data(kernel), &mut out, rows, geo.patch(), geo.c_out);
        let t = Tensor::new(vec![geo.batch, geo.t_out, geo.c_out], out)?;
        Ok(self.push(t, Op::Conv1d { x, w: kernel, b: bias, stride, pad }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.max(0.0)).collect();
        let t = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Relu(x))
    }

    fn zip(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        let data = t.data().iter().map(|v| f(*v)).collect();
        Tensor::new(t.shape().to_vec(), data).expect("same shape")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.map(x, |v| v * c);
        self.push(t, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.map(x, |v| v + c);
        self.push(t, Op::AddScalar(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::exp);
        self.push(t, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| v * v);
        self.push(t, Op::Square(x))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::shape("mean_axis", &shape, &[axis]));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for d in 0..dim {
                let row = &src[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                dst.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            dst.iter_mut().for_each(|a| *a /= dim as f64);
        }
        let mut new_shape = shape.clone();
        new_shape.remove(axis);
        Ok(self.push(Tensor::new(new_shape, out)?, Op::MeanAxis { x, axis }))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::shape("softmax", &shape, &[axis]));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |d: usize| (o * dim + d) * inner + i;
                let max = (0..dim).map(|d| src[idx(d)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for d in 0..dim {
                    let e = (src[idx(d)] - max).exp();
                    out[idx(d)] = e;
                    total += e;
                }
                for d in 0..dim {
                    out[idx(d)] /= total;
                }
            }
        }
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .map(|v| self.shape(*v).to_vec())
            .ok_or_else(|| Error::shape("concat", &[], &[]))?;
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let block = self.shape(*v)[axis] * inner;
                out.extend_from_slice(&self.data(*v)[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape("slice", &shape, &[axis, start, len]));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        Ok(self.push(Tensor::new(new_shape, out)?, Op::Slice { x, axis, start }))
    }

    /// Multiplies row `r` of `x` (everything after the leading axis) by
    /// `w[r]`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w));
        if xs.is_empty() || ws != [xs[0]] {
            return Err(Error::shape("scale_rows", &xs, ws));
        }
        let rows = xs[0];
        let width = self.value(x).len() / rows.max(1);
        let (src, weights) = (self.data(x), self.data(w));
        let out = src
            .chunks(width.max(1))
            .zip(weights)
            .flat_map(|(row, s)| row.iter().map(move |v| v * s))
            .collect();
        Ok(self.push(Tensor::new(xs, out)?, Op::ScaleRows { x, w }))
    }

    /// `[M, 6]` continuous rotation features to `[M, 3, 3]` matrices.
    pub fn rot6d_to_matrix(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != 6 {
            return Err(Error::shape("rot6d_to_matrix", &shape, &[0, 6]));
        }
        let mut out = Vec::with_capacity(shape[0] * 9);
        for (row, v) in self.data(x).chunks(6).enumerate() {
            let a1 = Vec3::new(v[0], v[1], v[2]);
            let a2 = Vec3::new(v[3], v[4], v[5]);
            let (b1, b2, b3) = gram_schmidt(&a1, &a2)
                .map_err(|e| Error::Numeric(format!("row {row}: {e}")))?;
            for r in 0..3 {
                out.extend_from_slice(&[b1[r], b2[r], b3[r]]);
            }
        }
        let t = Tensor::new(vec![shape[0], 3, 3], out)?;
        Ok(self.push(t, Op::Rot6dToMatrix(x)))
    }

    /// `[M, 3]` axis-angle vectors to `[M, 3, 3]` matrices (Rodrigues).
    pub fn aa_to_matrix(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != 3 {
            return Err(Error::shape("aa_to_matrix", &shape, &[0, 3]));
        }
        let mut out = Vec::with_capacity(shape[0] * 9);
        for v in self.data(x).chunks(3) {
            let r = Vec3::new(v[0], v[1], v[2]);
            let (a, b) = rodrigues_coeffs(r.norm());
            let k = hat(&r);
            let m = Matrix3::identity() + k * a + k * k * b;
            push_matrix(&mut out, &m);
        }
        let t = Tensor::new(vec![shape[0], 3, 3], out)?;
        Ok(self.push(t, Op::AaToMatrix(x)))
    }

    /// Pose-space joint positions (root at the origin).
    ///
    /// `global: [N, 3, 3]` root orientations and `local: [N, J-1, 3, 3]`
    /// parent-relative rotations give `[N, J, 3]`.
    pub fn forward_kinematics(&mut self, global: Var, local: Var, skeleton: Arc<Skeleton>) -> Result<Var> {
        let (gs, ls) = (self.shape(global), self.shape(local));
        let joints = skeleton.joint_count();
        if gs.len() != 3 || gs[1..] != [3, 3] || ls != [gs[0], joints - 1, 3, 3] {
            return Err(Error::shape("forward_kinematics", gs, ls));
        }
        let frames = gs[0];
        let mut out = Vec::with_capacity(frames * joints * 3);
        let (gd, ld) = (self.data(global), self.data(local));
        let mut world = vec![Matrix3::zeros(); joints];
        let mut pos = vec![Vec3::zeros(); joints];
        for f in 0..frames {
            fk_frame(&skeleton, &gd[f * 9..(f + 1) * 9], &ld[f * (joints - 1) * 9..], &mut world, &mut pos);
            for p in &pos {
                out.extend_from_slice(&[p.x, p.y, p.z]);
            }
        }
        let t = Tensor::new(vec![frames, joints, 3], out)?;
        Ok(self.push(t, Op::ForwardKinematics { global, local, skeleton }))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward (loss must be scalar)", self.shape(loss), &[]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            self.backward_node(id, &gy, &mut grads);
            grads[id] = Some(gy);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    /// Backward pass that accumulates every parameter gradient into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        store.accumulate(self, &grads);
        Ok(grads)
    }

    pub(crate) fn param_leaves(&self) -> impl Iterator<Item = (Var, usize)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(p) => Some((Var(i), p)),
            _ => None,
        })
    }

    fn backward_node(&self, id: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (n, k, m) = (xs[0], xs[1], ws[1]);
                matmul_bt_acc(gy, self.data(*w), acc(grads, self, *x), n, k, m);
                matmul_at_acc(self.data(*x), gy, acc(grads, self, *w), n, k, m);
                let gb = acc(grads, self, *b);
                for row in gy.chunks(m) {
                    gb.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                }
            }
            Op::Conv1d { x, w, b, stride, pad } => {
                let geo = ConvGeometry::new(self.shape(*x), self.shape(*w), *stride, *pad);
                let rows = geo.batch * geo.t_out;
                let col = geo.im2col(self.data(*x));
                matmul_at_acc(&col, gy, acc(grads, self, *w), rows, geo.patch(), geo.c_out);
                drop(col);
                let mut dcol = vec![0.0; rows * geo.patch()];
                matmul_bt_acc(gy, self.data(*w), &mut dcol, rows, geo.patch(), geo.c_out);
                geo.col2im_acc(&dcol, acc(grads, self, *x));
                let gb = acc(grads, self, *b);
                for row in gy.chunks(geo.c_out) {
                    gb.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                }
            }
            Op::Relu(x) => {
                let gx = acc(grads, self, *x);
                for ((g, out), up) in gx.iter_mut().zip(y).zip(gy) {
                    if *out > 0.0 {
                        *g += up;
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(acc(grads, self, *a), gy, 1.0);
                add_into(acc(grads, self, *b), gy, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(acc(grads, self, *a), gy, 1.0);
                add_into(acc(grads, self, *b), gy, -1.0);
            }
            Op::Mul(a, b) => {
                let bv = self.data(*b).to_vec();
                let ga = acc(grads, self, *a);
                for ((g, up), o) in ga.iter_mut().zip(gy).zip(&bv) {
                    *g += up * o;
                }
                let av = self.data(*a);
                let gb = acc(grads, self, *b);
                for ((g, up), o) in gb.iter_mut().zip(gy).zip(av) {
                    *g += up * o;
                }
            }
            Op::Scale(x, c) => add_into(acc(grads, self, *x), gy, *c),
            Op::AddScalar(x) => add_into(acc(grads, self, *x), gy, 1.0),
            Op::Exp(x) => {
                let gx = acc(grads, self, *x);
                for ((g, up), out) in gx.iter_mut().zip(gy).zip(y) {
                    *g += up * out;
                }
            }
            Op::Square(x) => {
                let xv = self.data(*x);
                let gx = acc(grads, self, *x);
                for ((g, up), v) in gx.iter_mut().zip(gy).zip(xv) {
                    *g += 2.0 * up * v;
                }
            }
            Op::Sum(x) => {
                let up = gy[0];
                acc(grads, self, *x).iter_mut().for_each(|g| *g += up);
            }
            Op::MeanAxis { x, axis } => {
                let (outer, dim, inner) = split_axis(self.shape(*x), *axis);
                let gx = acc(grads, self, *x);
                let inv = 1.0 / dim as f64;
                for o in 0..outer {
                    let up = &gy[o * inner..(o + 1) * inner];
                    for d in 0..dim {
                        let dst = &mut gx[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                        dst.iter_mut().zip(up).for_each(|(g, u)| *g += u * inv);
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, dim, inner) = split_axis(self.shape(*x), *axis);
                let gx = acc(grads, self, *x);
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |d: usize| (o * dim + d) * inner + i;
                        let inner_dot: f64 = (0..dim).map(|d| gy[idx(d)] * y[idx(d)]).sum();
                        for d in 0..dim {
                            gx[idx(d)] += y[idx(d)] * (gy[idx(d)] - inner_dot);
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for v in inputs {
                    let width = self.shape(*v)[*axis] * inner;
                    let gx = acc(grads, self, *v);
                    for o in 0..outer {
                        let src = &gy[o * total * inner + offset..o * total * inner + offset + width];
                        add_into(&mut gx[o * width..(o + 1) * width], src, 1.0);
                    }
                    offset += width;
                }
            }
            Op::Reshape(x) => add_into(acc(grads, self, *x), gy, 1.0),
            Op::Slice { x, axis, start } => {
                let (outer, dim, inner) = split_axis(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                let gx = acc(grads, self, *x);
                for o in 0..outer {
                    let base = (o * dim + start) * inner;
                    add_into(&mut gx[base..base + len * inner], &gy[o * len * inner..(o + 1) * len * inner], 1.0);
                }
            }
            Op::ScaleRows { x, w } => {
                let rows = self.shape(*x)[0];
                let width = self.value(*x).len() / rows.max(1);
                let wv = self.data(*w).to_vec();
                let gx = acc(grads, self, *x);
                for (r, s) in wv.iter().enumerate() {
                    let span = r * width..(r + 1) * width;
                    add_into(&mut gx[span.clone()], &gy[span], *s);
                }
                let xv = self.data(*x);
                let gw = acc(grads, self, *w);
                for (r, g) in gw.iter_mut().enumerate() {
                    let span = r * width..(r + 1) * width;
                    *g += dot(&gy[span.clone()], &xv[span]);
                }
            }
            Op::Rot6dToMatrix(x) => {
                let xv = self.data(*x);
                let gx = acc(grads, self, *x);
                for (row, (v, g)) in xv.chunks(6).zip(gy.chunks(9)).enumerate() {
                    let grad = rot6d_backward(v, g);
                    add_into(&mut gx[row * 6..(row + 1) * 6], &grad, 1.0);
                }
            }
            Op::AaToMatrix(x) => {
                let xv = self.data(*x);
                let gx = acc(grads, self, *x);
                for (row, (v, g)) in xv.chunks(3).zip(gy.chunks(9)).enumerate() {
                    let grad = aa_backward(v, g);
                    add_into(&mut gx[row * 3..(row + 1) * 3], &grad, 1.0);
                }
            }
            Op::ForwardKinematics { global, local, skeleton } => {
                let joints = skeleton.joint_count();
                let frames = self.shape(*global)[0];
                let (gd, ld) = (self.data(*global), self.data(*local));
                let mut dglobal = vec![0.0; frames * 9];
                let mut dlocal = vec![0.0; frames * (joints - 1) * 9];
                for f in 0..frames {
                    let lo = f * (joints - 1) * 9..(f + 1) * (joints - 1) * 9;
                    fk_frame_backward(
                        skeleton,
                        &gd[f * 9..(f + 1) * 9],
                        &ld[lo.clone()],
                        &gy[f * joints * 3..(f + 1) * joints * 3],
                        &mut dglobal[f * 9..(f + 1) * 9],
                        &mut dlocal[lo],
                    );
                }
                add_into(acc(grads, self, *global), &dglobal, 1.0);
                add_into(acc(grads, self, *local), &dlocal, 1.0);
            }
        }
    }
}

/// Per-node gradients from one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` reaches the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], g: &Graph, v: Var) -> &'a mut Vec<f64> {
    let n = g.value(v).len();
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

fn push_matrix(out: &mut Vec<f64>, m: &Matrix3<f64>) {
    for r in 0..3 {
        for c in 0..3 {
            out.push(m[(r, c)]);
        }
    }
}

fn matrix_from(d: &[f64]) -> Matrix3<f64> {
    Matrix3::new(d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7], d[8])
}

struct ConvGeometry {
    batch: usize,
    t_in: usize,
    c_in: usize,
    taps: usize,
    c_out: usize,
    t_out: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(xs: &[usize], ks: &[usize], stride: usize, pad: usize) -> Self {
        let t_out = (xs[1] + 2 * pad - ks[0]) / stride + 1;
        ConvGeometry {
            batch: xs[0],
            t_in: xs[1],
            c_in: xs[2],
            taps: ks[0],
            c_out: ks[2],
            t_out,
            stride,
            pad,
        }
    }

    fn patch(&self) -> usize {
        self.taps * self.c_in
    }

    fn source_frame(&self, t: usize, tap: usize) -> Option<usize> {
        (t * self.stride + tap).checked_sub(self.pad).filter(|s| *s < self.t_in)
    }

    /// Rows of stacked input windows, `[B·T_out, k·C_in]`.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let patch = self.patch();
        let mut col = vec![0.0; self.batch * self.t_out * patch];
        for b in 0..self.batch {
            for t in 0..self.t_out {
                let row = &mut col[(b * self.t_out + t) * patch..(b * self.t_out + t + 1) * patch];
                for tap in 0..self.taps {
                    if let Some(s) = self.source_frame(t, tap) {
                        let src = &x[(b * self.t_in + s) * self.c_in..(b * self.t_in + s + 1) * self.c_in];
                        row[tap * self.c_in..(tap + 1) * self.c_in].copy_from_slice(src);
                    }
                }
            }
        }
        col
    }

    fn col2im_acc(&self, col: &[f64], gx: &mut [f64]) {
        let patch = self.patch();
        for b in 0..self.batch {
            for t in 0..self.t_out {
                let row = &col[(b * self.t_out + t) * patch..(b * self.t_out + t + 1) * patch];
                for tap in 0..self.taps {
                    if let Some(s) = self.source_frame(t, tap) {
                        let dst = &mut gx[(b * self.t_in + s) * self.c_in..(b * self.t_in + s + 1) * self.c_in];
                        add_into(dst, &row[tap * self.c_in..(tap + 1) * self.c_in], 1.0);
                    }
                }
            }
        }
    }
}

fn fk_frame(skel: &Skeleton, global: &[f64], local: &[f64], world: &mut [Matrix3<f64>], pos: &mut [Vec3]) {
    world[0] = matrix_from(global);
    pos[0] = Vec3::zeros();
    for j in 1..skel.joint_count() {
        let p = skel.parent(j).expect("non-root joint");
        pos[j] = pos[p] + world[p] * skel.offset(j);
        world[j] = world[p] * matrix_from(&local[(j - 1) * 9..j * 9]);
    }
}

fn fk_frame_backward(
    skel: &Skeleton,
    global: &[f64],
    local: &[f64],
    gpos: &[f64],
    dglobal: &mut [f64],
    dlocal: &mut [f64],
) {
    let joints = skel.joint_count();
    let mut world = vec![Matrix3::zeros(); joints];
    let mut pos = vec![Vec3::zeros(); joints];
    fk_frame(skel, global, local, &mut world, &mut pos);
    let mut dworld = vec![Matrix3::<f64>::zeros(); joints];
    let mut dpos: Vec<Vec3> = gpos.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
    for j in (1..joints).rev() {
        let p = skel.parent(j).expect("non-root joint");
        let l = matrix_from(&local[(j - 1) * 9..j * 9]);
        // pos_j = pos_p + W_p·o_j ; W_j = W_p·L_j
        let dp = dpos[j];
        dpos[p] += dp;
        let dw_j = dworld[j];
        dworld[p] += dp * skel.offset(j).transpose() + dw_j * l.transpose();
        let dl = world[p].transpose() * dw_j;
        let dst = &mut dlocal[(j - 1) * 9..j * 9];
        for r in 0..3 {
            for c in 0..3 {
                dst[r * 3 + c] += dl[(r, c)];
            }
        }
    }
    for r in 0..3 {
        for c in 0..3 {
            dglobal[r * 3 + c] += dworld[0][(r, c)];
        }
    }
}

/// Gradient of Gram-Schmidt 6D→matrix w.r.t. the 6 inputs, given the
/// row-major output gradient.
fn rot6d_backward(v: &[f64], g: &[f64]) -> [f64; 6] {
    let a1 = Vec3::new(v[0], v[1], v[2]);
    let a2 = Vec3::new(v[3], v[4], v[5]);
    let n1 = a1.norm();
    let b1 = a1 / n1;
    let proj = b1.dot(&a2);
    let u = a2 - b1 * proj;
    let n2 = u.norm();
    let b2 = u / n2;
    let col = |c: usize| Vec3::new(g[c], g[3 + c], g[6 + c]);
    let (g1, g2, g3) = (col(0), col(1), col(2));

    // b3 = b1 × b2
    let mut gb1 = g1 + b2.cross(&g3);
    let gb2 = g2 + g3.cross(&b1);
    // b2 = u / |u|
    let gu = (gb2 - b2 * b2.dot(&gb2)) / n2;
    // u = a2 - (b1·a2) b1
    let ga2 = gu - b1 * b1.dot(&gu);
    gb1 -= a2 * b1.dot(&gu) + gu * proj;
    // b1 = a1 / |a1|
    let ga1 = (gb1 - b1 * b1.dot(&gb1)) / n1;
    [ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z]
}

/// Gradient of Rodrigues' formula `R = I + A(θ)K + B(θ)K²` with `K = [r]×`.
fn aa_backward(v: &[f64], g: &[f64]) -> [f64; 3] {
    let r = Vec3::new(v[0], v[1], v[2]);
    let theta = r.norm();
    let (a, b) = rodrigues_coeffs(theta);
    // dA/dθ / θ and dB/dθ / θ.
    let (da, db) = if theta < 1e-2 {
        let t2 = theta * theta;
        (
            -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t3 = theta * theta * theta;
        ((theta * c - s) / t3, (theta * s - 2.0 * (1.0 - c)) / (t3 * theta))
    };
    let k = hat(&r);
    let k2 = k * k;
    let gm = matrix_from(g);
    let frob = |m: &Matrix3<f64>| gm.component_mul(m).sum();
    let (gk, gk2) = (frob(&k), frob(&k2));
    let mut out = [0.0; 3];
    for (i, slot) in out.iter_mut().enumerate() {
        let ei = hat(&Vec3::ith(i, 1.0));
        let dk2 = ei * k + k * ei;
        *slot = a * frob(&ei) + b * frob(&dk2) + r[i] * (da * gk + db * gk2);
    }
    out
}
