//! Orthonormal DCT-II along time and the two guidance spectra: one over the
//! whole window and one per fixed-length segment.

use std::f64::consts::PI;

use ndarray::{s, Array3, Array4, ArrayView3, Axis};

use crate::error::{Error, Result};

/// Orthonormal DCT-II basis of length `L`, stored row-major as `L × L`
/// (row `k` is basis vector `k`). Direct `O(L²)` evaluation.
#[derive(Debug, Clone)]
pub struct DctBasis {
    len: usize,
    rows: Vec<f64>,
}

impl DctBasis {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1, "DCT length must be positive");
        let n = len as f64;
        let mut rows = vec![0.0; len * len];
        for k in 0..len {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for t in 0..len {
                rows[k * len + t] = scale * (PI * (2 * t + 1) as f64 * k as f64 / (2.0 * n)).cos();
            }
        }
        DctBasis { len, rows }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.len..(k + 1) * self.len]
    }

    /// First `keep` coefficients of the transform of `x`.
    pub fn forward_truncated(&self, x: &[f64], keep: usize) -> Vec<f64> {
        assert_eq!(x.len(), self.len);
        (0..keep.min(self.len))
            .map(|k| self.row(k).iter().zip(x).map(|(b, v)| b * v).sum())
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_truncated(x, self.len)
    }

    /// Inverse transform; missing trailing coefficients are treated as zero.
    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        assert!(coeffs.len() <= self.len);
        let mut out = vec![0.0; self.len];
        for (k, c) in coeffs.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.row(k)) {
                *o += c * b;
            }
        }
        out
    }
}

pub fn dct(x: &[f64]) -> Vec<f64> {
    DctBasis::new(x.len()).forward(x)
}

/// Inverse of [`dct`] for a series of length `len`; `coeffs` may be a
/// truncated prefix.
pub fn idct(coeffs: &[f64], len: usize) -> Vec<f64> {
    DctBasis::new(len).inverse(coeffs)
}

/// `S` contiguous, non-overlapping segments of `n` frames each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentationScheme {
    segments: usize,
    length: usize,
}

impl SegmentationScheme {
    pub fn new(segments: usize, length: usize, frames: usize) -> Result<Self> {
        if segments == 0 || length == 0 || segments * length != frames {
            return Err(Error::Config(format!(
                "{segments} segments of {length} frames do not tile {frames} frames"
            )));
        }
        Ok(Self { segments, length })
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn length(&self) -> usize {
        self.length
    }
}

/// Sequence-level spectrum, `C_m × J × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSeq(pub Array3<f64>);

/// Segment-level spectrum, `S × C_s × J × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSeg(pub Array4<f64>);

fn truncated_spectrum(joints: ArrayView3<f64>, basis: &DctBasis, keep: usize) -> Array3<f64> {
    let (_, nj, nc) = joints.dim();
    let mut out = Array3::zeros((keep, nj, nc));
    let mut series = vec![0.0; basis.len()];
    for j in 0..nj {
        for c in 0..nc {
            for (slot, v) in series.iter_mut().zip(joints.slice(s![.., j, c])) {
                *slot = *v;
            }
            for (k, coeff) in basis.forward_truncated(&series, keep).into_iter().enumerate() {
                out[[k, j, c]] = coeff;
            }
        }
    }
    out
}

/// Lowest `keep` DCT coefficients of every joint coordinate over the whole
/// window.
pub fn extract_freq_seq(joints: ArrayView3<f64>, keep: usize) -> Result<SpectrumSeq> {
    let frames = joints.len_of(Axis(0));
    if keep > frames || frames == 0 {
        return Err(Error::Config(format!(
            "cannot keep {keep} coefficients of a {frames}-frame sequence"
        )));
    }
    let basis = DctBasis::new(frames);
    Ok(SpectrumSeq(truncated_spectrum(joints, &basis, keep)))
}

/// Per-segment truncated spectra.
pub fn extract_freq_seg(
    joints: ArrayView3<f64>,
    scheme: SegmentationScheme,
    keep: usize,
) -> Result<SpectrumSeg> {
    let frames = joints.len_of(Axis(0));
    let n = scheme.length();
    if scheme.segments() * n != frames {
        return Err(Error::Config(format!(
            "{} segments of {n} frames do not tile {frames} frames",
            scheme.segments()
        )));
    }
    if keep > n {
        return Err(Error::Config(format!(
            "cannot keep {keep} coefficients of a {n}-frame segment"
        )));
    }
    let (_, nj, nc) = joints.dim();
    let basis = DctBasis::new(n);
    let mut out = Array4::zeros((scheme.segments(), keep, nj, nc));
    for seg in 0..scheme.segments() {
        let part = joints.slice(s![seg * n..(seg + 1) * n, .., ..]);
        out.index_axis_mut(Axis(0), seg)
            .assign(&truncated_spectrum(part, &basis, keep));
    }
    Ok(SpectrumSeg(out))
}

/// Per-segment sum of squared non-DC coefficients.
pub fn highfreq_energy(spec: &SpectrumSeg) -> Vec<f64> {
    spec.0
        .outer_iter()
        .map(|seg| seg.slice(s![1.., .., ..]).iter().map(|v| v * v).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Textbook DCT-II by direct summation, independent of `DctBasis`.
    fn dct_oracle(x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        (0..x.len())
            .map(|k| {
                let sum: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(t, v)| v * (PI / n * (t as f64 + 0.5) * k as f64).cos())
                    .sum();
                let alpha = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                alpha * sum
            })
            .collect()
    }

    fn random_vec(rng: &mut impl Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn constant_is_dc_only() {
        let c = 0.3;
        let coeffs = dct(&[c; 8]);
        assert!((coeffs[0] - c * 8f64.sqrt()).abs() < 1e-12);
        assert!(coeffs[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn single_tone_localizes() {
        for len in [16usize, 128] {
            for k in [1, 3, len / 2, len - 1] {
                let x: Vec<f64> = (0..len)
                    .map(|t| (PI * (2 * t + 1) as f64 * k as f64 / (2.0 * len as f64)).cos())
                    .collect();
                let coeffs = dct(&x);
                let oracle = dct_oracle(&x);
                for (i, (a, b)) in coeffs.iter().zip(&oracle).enumerate() {
                    assert!((a - b).abs() < 1e-9);
                    if i != k {
                        assert!(a.abs() < 1e-9, "len={len} k={k} leak at {i}: {a}");
                    }
                }
                assert!(coeffs[k].abs() > 1.0);
            }
        }
    }

    #[test]
    fn idct_examples() {
        assert!(idct(&[0.0; 8], 8).iter().all(|v| *v == 0.0));
        let dc = idct(&[2.0], 4);
        assert!(dc.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn basis_is_orthonormal() {
        let basis = DctBasis::new(32);
        for a in 0..32 {
            for b in 0..32 {
                let dot: f64 = basis.row(a).iter().zip(basis.row(b)).map(|(x, y)| x * y).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn truncation_error_equals_dropped_energy_and_is_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_vec(&mut rng, 64);
        let basis = DctBasis::new(64);
        let full = basis.forward(&x);
        let keep = 20;
        let recon = basis.inverse(&full[..keep]);
        let err: f64 = x.iter().zip(&recon).map(|(a, b)| (a - b).powi(2)).sum();
        let dropped: f64 = full[keep..].iter().map(|v| v * v).sum();
        assert!((err - dropped).abs() < 1e-9);

        for _ in 0..50 {
            let perturbed: Vec<f64> =
                full[..keep].iter().map(|c| c + rng.random_range(-0.1..0.1)).collect();
            let recon = basis.inverse(&perturbed);
            let e: f64 = x.iter().zip(&recon).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(e >= err);
        }
    }

    fn stationary_walk(frames: usize, joints: usize) -> Array3<f64> {
        Array3::from_shape_fn((frames, joints, 3), |(t, j, c)| {
            let t = t as f64 / 30.0;
            0.1 * (j as f64 + 1.0) * (c as f64 + 1.0)
                + 0.05 * (2.0 * PI * 1.8 * t + j as f64).sin()
                + 0.01 * (2.0 * PI * 6.0 * t).cos()
        })
    }

    #[test]
    fn sequence_spectrum_examples() {
        let still = Array3::from_shape_fn((32, 4, 3), |(_, j, c)| j as f64 - c as f64);
        let spec = extract_freq_seq(still.view(), 8).unwrap().0;
        assert!(spec.slice(s![1.., .., ..]).iter().all(|v| v.abs() < 1e-12));

        let walk = stationary_walk(128, 5);
        let full = extract_freq_seq(walk.view(), 128).unwrap().0;
        for j in 0..5 {
            for c in 0..3 {
                let coeffs: Vec<f64> = full.slice(s![.., j, c]).to_vec();
                let back = idct(&coeffs, 128);
                for (t, v) in back.iter().enumerate() {
                    assert!((v - walk[[t, j, c]]).abs() < 1e-9);
                }
            }
        }

        let trunc = extract_freq_seq(walk.view(), 32).unwrap().0;
        let mut err = 0.0;
        for j in 0..5 {
            for c in 0..3 {
                let back = idct(&trunc.slice(s![.., j, c]).to_vec(), 128);
                err += back.iter().enumerate().map(|(t, v)| (v - walk[[t, j, c]]).powi(2)).sum::<f64>();
            }
        }
        let dropped: f64 = full.slice(s![32.., .., ..]).iter().map(|v| v * v).sum();
        assert!((err - dropped).abs() < 1e-9);

        assert!(extract_freq_seq(walk.view(), 129).is_err());
    }

    #[test]
    fn segment_spectrum_examples() {
        let walk = stationary_walk(128, 5);
        let seq = extract_freq_seq(walk.view(), 16).unwrap().0;
        let one = SegmentationScheme::new(1, 128, 128).unwrap();
        let seg = extract_freq_seg(walk.view(), one, 16).unwrap().0;
        assert!((&seg.index_axis(Axis(0), 0) - &seq).iter().all(|v| v.abs() < 1e-12));

        let scheme = SegmentationScheme::new(8, 16, 128).unwrap();
        let seg = extract_freq_seg(walk.view(), scheme, 8).unwrap();
        assert_eq!(seg.0.dim(), (8, 8, 5, 3));

        assert!(SegmentationScheme::new(8, 15, 128).is_err());
        let bad = SegmentationScheme::new(4, 8, 32).unwrap();
        assert!(extract_freq_seg(walk.view(), bad, 4).is_err());
        assert!(extract_freq_seg(walk.view(), scheme, 17).is_err());
    }

    #[test]
    fn oscillating_segment_has_more_energy() {
        let motion = Array3::from_shape_fn((32, 3, 3), |(t, j, _)| {
            if t < 16 {
                0.2 * j as f64
            } else {
                0.2 * j as f64 + 0.1 * (t as f64 * 1.3).sin()
            }
        });
        let scheme = SegmentationScheme::new(2, 16, 32).unwrap();
        let spec = extract_freq_seg(motion.view(), scheme, 8).unwrap();
        let energy = highfreq_energy(&spec);
        assert!(energy[0] < 1e-20);
        assert!(energy[1] > energy[0]);

        let still = Array3::from_elem((32, 3, 3), 0.4);
        assert!(highfreq_energy(&extract_freq_seg(still.view(), scheme, 8).unwrap())
            .iter()
            .all(|e| e.abs() < 1e-20));
    }

    #[test]
    fn energy_is_yaw_invariant_for_root_relative_joints() {
        use crate::kinematics::{root_relative, RotMat};
        let motion = stationary_walk(32, 4);
        let rel = root_relative(motion.view());
        let rot = RotMat::yaw(1.1);
        let rotated = Array3::from_shape_fn(rel.dim(), |(t, j, c)| {
            let v = crate::kinematics::Vec3::new(rel[[t, j, 0]], rel[[t, j, 1]], rel[[t, j, 2]]);
            rot.rotate(&v)[c]
        });
        let scheme = SegmentationScheme::new(2, 16, 32).unwrap();
        let a = highfreq_energy(&extract_freq_seg(rel.view(), scheme, 8).unwrap());
        let b = highfreq_energy(&extract_freq_seg(rotated.view(), scheme, 8).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9 * x.max(1.0));
        }
    }

    proptest! {
        #[test]
        fn round_trip_parseval_linearity(seed in 0u64..1000, len in prop::sample::select(vec![1usize, 2, 7, 16, 128])) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_vec(&mut rng, len);
            let y = random_vec(&mut rng, len);
            let cx = dct(&x);
            let oracle = dct_oracle(&x);
            for (a, b) in cx.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let back = idct(&cx, len);
            for (a, b) in back.iter().zip(&x) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let ex: f64 = x.iter().map(|v| v * v).sum();
            let ec: f64 = cx.iter().map(|v| v * v).sum();
            prop_assert!((ex - ec).abs() < 1e-9);

            let (a, b) = (0.7, -2.1);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let cy = dct(&y);
            for ((m, p), q) in dct(&mix).iter().zip(&cx).zip(&cy) {
                prop_assert!((m - (a * p + b * q)).abs() < 1e-9);
            }
        }
    }
}
