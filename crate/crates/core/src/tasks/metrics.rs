//! Joint-position error metrics, reported in millimetres.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};

fn check(pred: &ArrayView3<f64>, gt: &ArrayView3<f64>, op: &'static str) -> Result<()> {
    if pred.shape() != gt.shape() || pred.shape()[2] != 3 {
        return Err(Error::shape(op, pred.shape(), gt.shape()));
    }
    if pred.is_empty() {
        return Err(Error::Data(format!("{op}: empty sequence")));
    }
    Ok(())
}

fn point(v: &ArrayView2<f64>, j: usize) -> Vector3<f64> {
    Vector3::new(v[[j, 0]], v[[j, 1]], v[[j, 2]])
}

/// Per-frame mean joint distance in millimetres, for `K × J × 3` inputs.
pub fn mpjpe_per_frame(pred: ArrayView3<f64>, gt: ArrayView3<f64>) -> Result<Vec<f64>> {
    check(&pred, &gt, "mpjpe")?;
    Ok(pred
        .outer_iter()
        .zip(gt.outer_iter())
        .map(|(p, g)| {
            let n = p.nrows();
            (0..n).map(|j| (point(&p, j) - point(&g, j)).norm()).sum::<f64>() / n as f64 * 1000.0
        })
        .collect())
}

/// Mean per-joint position error in millimetres.
pub fn mpjpe(pred: ArrayView3<f64>, gt: ArrayView3<f64>) -> Result<f64> {
    let per_frame = mpjpe_per_frame(pred, gt)?;
    Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
}

/// Best similarity transform (rotation, uniform scale, translation) taking
/// `pred` onto `gt`, applied to `pred`. Reflections are excluded.
pub fn procrustes_align(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Vec<Vector3<f64>> {
    let n = pred.nrows();
    let p: Vec<Vector3<f64>> = (0..n).map(|j| point(&pred, j)).collect();
    let g: Vec<Vector3<f64>> = (0..n).map(|j| point(&gt, j)).collect();
    let mp = p.iter().sum::<Vector3<f64>>() / n as f64;
    let mg = g.iter().sum::<Vector3<f64>>() / n as f64;
    let pc: Vec<_> = p.iter().map(|v| v - mp).collect();
    let gc: Vec<_> = g.iter().map(|v| v - mg).collect();
    let var_p: f64 = pc.iter().map(|v| v.norm_squared()).sum();
    if var_p < 1e-300 {
        return vec![mg; n];
    }
    // Cross-covariance gc · pcᵀ; the optimal rotation is U·diag(1,1,±1)·Vᵀ.
    let mut cov = Matrix3::zeros();
    for (a, b) in gc.iter().zip(&pc) {
        cov += a * b.transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rot = u * d * v_t;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
    let scale = trace / var_p;
    pc.iter().map(|v| mg + rot * v * scale).collect()
}

/// Per-frame error after similarity Procrustes alignment, in millimetres.
pub fn pa_mpjpe_per_frame(pred: ArrayView3<f64>, gt: ArrayView3<f64>) -> Result<Vec<f64>> {
    check(&pred, &gt, "pa_mpjpe")?;
    Ok(pred
        .outer_iter()
        .zip(gt.outer_iter())
        .map(|(p, g)| {
            let aligned = procrustes_align(p.view(), g.view());
            let n = g.nrows();
            let pa = aligned.iter().enumerate().map(|(j, a)| (a - point(&g, j)).norm()).sum::<f64>() / n as f64;
            // Alignment cannot be worse than leaving the frame untouched.
            let raw = (0..n).map(|j| (point(&p, j) - point(&g, j)).norm()).sum::<f64>() / n as f64;
            pa.min(raw) * 1000.0
        })
        .collect())
}

pub fn pa_mpjpe(pred: ArrayView3<f64>, gt: ArrayView3<f64>) -> Result<f64> {
    let per_frame = pa_mpjpe_per_frame(pred, gt)?;
    Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
}

/// Mean norm of the difference of raw second differences (`x[t+1] − 2x[t] +
/// x[t−1]`, no division by the frame interval), times 1000. Needs at least
/// three frames.
pub fn accel_error(pred: ArrayView3<f64>, gt: ArrayView3<f64>) -> Result<f64> {
    check(&pred, &gt, "accel_error")?;
    let k = pred.len_of(Axis(0));
    if k < 3 {
        return Err(Error::Data(format!("acceleration error needs 3 frames, got {k}")));
    }
    let diff = &pred - &gt;
    let acc = |t: usize, j: usize| {
        let f = |i: usize| Vector3::new(diff[[i, j, 0]], diff[[i, j, 1]], diff[[i, j, 2]]);
        (f(t + 1) - f(t)) - (f(t) - f(t - 1))
    };
    let joints = pred.shape()[1];
    let mut total = 0.0;
    for t in 1..k - 1 {
        for j in 0..joints {
            total += acc(t, j).norm();
        }
    }
    Ok(total / ((k - 2) * joints) as f64 * 1000.0)
}

/// All three metrics for one sequence.
/// Mean joint configuration over every frame of `sequences`, `J × 3`.
pub fn mean_pose(sequences: &[Array3<f64>]) -> Result<Array2<f64>> {
    let first = sequences.first().ok_or_else(|| Error::Data("mean_pose: no sequences".into()))?;
    let (j, c) = (first.shape()[1], first.shape()[2]);
    let mut sum = Array2::<f64>::zeros((j, c));
    let mut frames = 0usize;
    for s in sequences {
        if s.shape()[1..] != [j, c] {
            return Err(Error::shape("mean_pose", s.shape(), first.shape()));
        }
        sum += &s.sum_axis(Axis(0));
        frames += s.shape()[0];
    }
    if frames == 0 {
        return Err(Error::Data("mean_pose: no frames".into()));
    }
    Ok(sum / frames as f64)
}

/// MPJPE (mm) of predicting `pose` for every frame, averaged per sequence.
pub fn constant_pose_mpjpe(pose: ArrayView2<f64>, sequences: &[Array3<f64>]) -> Result<f64> {
    if sequences.is_empty() {
        return Err(Error::Data("constant_pose_mpjpe: no sequences".into()));
    }
    let mut total = 0.0;
    for s in sequences {
        let pred = pose.broadcast(s.raw_dim()).ok_or_else(|| Error::shape("constant_pose_mpjpe", pose.shape(), s.shape()))?;
        total += mpjpe(pred, s.view())?;
    }
    Ok(total / sequences.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    /// In millimetres per frame², following the raw second-difference
    /// convention.
    pub accel_error: f64,
    pub per_frame_mpjpe: Vec<f64>,
    pub per_frame_pa_mpjpe: Vec<f64>,
}

impl MetricsReport {
    pub fn compute(pred: ArrayView3<f64>, gt: ArrayView3<f64>) -> Result<Self> {
        let per_frame_mpjpe = mpjpe_per_frame(pred, gt)?;
        let per_frame_pa_mpjpe = pa_mpjpe_per_frame(pred, gt)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(MetricsReport {
            mpjpe_mm: mean(&per_frame_mpjpe),
            pa_mpjpe_mm: mean(&per_frame_pa_mpjpe),
            accel_error: accel_error(pred, gt)?,
            per_frame_mpjpe,
            per_frame_pa_mpjpe,
        })
    }
}
