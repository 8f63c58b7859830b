//! Frozen motion feature extractor: a small 3D-convolutional network mapping
//! each preprocessed video chunk to a fixed-length motion feature `F_m`.
//!
//! The extractor is randomly initialized from a fixed seed and never updated
//! by any training step; its parameters are checksummed so the freeze can be
//! asserted across phases. It runs outside the autograd graph.

use ndarray::{Array1, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{QaError, Result};
use crate::params::{ParamInit, ParamSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotionConfig {
    /// Output feature length `D_m`.
    pub d_m: usize,
    pub channels: Vec<usize>,
    pub seed: u64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            d_m: 256,
            channels: vec![8, 16],
            seed: 7,
        }
    }
}

/// Motion feature of one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFeature {
    pub values: Array1<f64>,
    pub chunk_index: usize,
}

/// The frozen extractor. Parameters live in their own `ParamSet`, disjoint
/// from the trainable model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionExtractor {
    pub config: MotionConfig,
    params: ParamSet,
}

const KERNEL: usize = 3;
const PAD: usize = 1;

impl MotionExtractor {
    pub fn new(config: MotionConfig) -> Self {
        let mut params = ParamSet::new();
        let mut init = ParamInit::new(config.seed);
        let mut cin = 3;
        for (i, &cout) in config.channels.iter().enumerate() {
            let fan_in = cin * KERNEL * KERNEL * KERNEL;
            params.insert(
                &format!("motion.stage{i}.w"),
                init.uniform(&[cout, cin, KERNEL, KERNEL, KERNEL], fan_in),
            );
            params.insert(&format!("motion.stage{i}.b"), init.zeros(&[cout]));
            cin = cout;
        }
        params.insert(
            "motion.proj.w",
            init.uniform(&[config.d_m, cin], cin),
        );
        params.insert("motion.proj.b", init.zeros(&[config.d_m]));
        Self { config, params }
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    /// Extract the motion feature of one preprocessed chunk (≥2 frames of
    /// identical square size).
    pub fn extract(&self, frames: &[Array3<f64>], chunk_index: usize) -> Result<MotionFeature> {
        if frames.len() < 2 {
            return Err(QaError::InvalidInput(
                "motion extraction needs at least 2 frames".into(),
            ));
        }
        let (c, h, w) = (
            frames[0].shape()[0],
            frames[0].shape()[1],
            frames[0].shape()[2],
        );
        if frames.iter().any(|f| f.shape() != frames[0].shape()) {
            return Err(QaError::ShapeMismatch("unequal frame shapes in chunk".into()));
        }
        let mut x = Array4::from_shape_fn((c, frames.len(), h, w), |(ci, t, y, xx)| {
            frames[t][[ci, y, xx]]
        });
        for i in 0..self.config.channels.len() {
            let wt = self.params.get(&format!("motion.stage{i}.w"));
            let b = self.params.get(&format!("motion.stage{i}.b"));
            x = conv3d_tanh(&x, &wt, &b);
        }
        // Global average over (T, H, W).
        let c_out = x.shape()[0];
        let denom = (x.shape()[1] * x.shape()[2] * x.shape()[3]) as f64;
        let pooled = Array1::from_shape_fn(c_out, |ci| {
            x.index_axis(ndarray::Axis(0), ci).sum() / denom
        });
        let pw = self.params.get("motion.proj.w");
        let pb = self.params.get("motion.proj.b");
        let values = Array1::from_shape_fn(self.config.d_m, |o| {
            let mut acc = pb[[o]];
            for i in 0..c_out {
                acc += pw[[o, i]] * pooled[i];
            }
            acc
        });
        Ok(MotionFeature {
            values,
            chunk_index,
        })
    }
}

/// 3-D convolution (temporal stride 1, spatial stride 2, padding 1 on every
/// axis) followed by tanh. Input and weight layouts are `(C, T, H, W)` and
/// `(Cout, Cin, kT, kH, kW)`.
fn conv3d_tanh(
    x: &Array4<f64>,
    w: &ndarray::ArrayD<f64>,
    b: &ndarray::ArrayD<f64>,
) -> Array4<f64> {
    let (cin, t, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let cout = w.shape()[0];
    let stride = 2usize;
    let ot = t; // temporal stride 1, pad 1, kernel 3
    let oh = (h + 2 * PAD - KERNEL) / stride + 1;
    let ow = (wd + 2 * PAD - KERNEL) / stride + 1;
    Array4::from_shape_fn((cout, ot, oh, ow), |(co, tt, oy, ox)| {
        let mut acc = b[[co]];
        for ci in 0..cin {
            for kt in 0..KERNEL {
                let it = (tt + kt) as isize - PAD as isize;
                if it < 0 || it >= t as isize {
                    continue;
                }
                for ky in 0..KERNEL {
                    let iy = (oy * stride + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let ix = (ox * stride + kx) as isize - PAD as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        acc += x[[ci, it as usize, iy as usize, ix as usize]]
                            * w[[co, ci, kt, ky, kx]];
                    }
                }
            }
        }
        acc.tanh()
    })
}

/// Arithmetic mean of per-chunk features; permutation-invariant.
pub fn aggregate_chunks(features: &[MotionFeature]) -> Result<MotionFeature> {
    if features.is_empty() {
        return Err(QaError::InvalidInput("no chunk features to aggregate".into()));
    }
    let d = features[0].values.len();
    if features.iter().any(|f| f.values.len() != d) {
        return Err(QaError::ShapeMismatch("unequal chunk feature lengths".into()));
    }
    let mut acc = Array1::<f64>::zeros(d);
    for f in features {
        acc += &f.values;
    }
    acc /= features.len() as f64;
    Ok(MotionFeature {
        values: acc,
        chunk_index: 0,
    })
}

/// Split a video into non-overlapping chunks of `chunk_seconds`; a trailing
/// partial chunk is kept if it still has ≥2 frames.
pub fn chunk_video(frames: &[Array3<f64>], frame_rate: f64, chunk_seconds: f64) -> Vec<Vec<Array3<f64>>> {
    let per = ((frame_rate * chunk_seconds).round() as usize).max(2);
    let mut chunks = Vec::new();
    let mut i = 0;
    while i < frames.len() {
        let end = (i + per).min(frames.len());
        if end - i >= 2 {
            chunks.push(frames[i..end].to_vec());
        } else if let Some(last) = chunks.last_mut() {
            last.extend_from_slice(&frames[i..end]);
        }
        i = end;
    }
    chunks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(seed: f64, size: usize) -> Array3<f64> {
        Array3::from_shape_fn((3, size, size), |(c, y, x)| {
            ((c + y * x) as f64 * 0.01 + seed).sin() * 0.5 + 0.5
        })
    }

    #[test]
    fn deterministic_and_configured_width() {
        let ex = MotionExtractor::new(MotionConfig::default());
        let chunk: Vec<_> = (0..32).map(|t| frame(t as f64, 8)).collect();
        let a = ex.extract(&chunk, 0).unwrap();
        let b = ex.extract(&chunk, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values.len(), 256);
    }

    #[test]
    fn static_chunk_is_shuffle_invariant() {
        let ex = MotionExtractor::new(MotionConfig::default());
        let f = frame(1.0, 8);
        let chunk = vec![f.clone(), f.clone(), f.clone(), f.clone()];
        let shuffled = vec![chunk[2].clone(), chunk[0].clone(), chunk[3].clone(), chunk[1].clone()];
        assert_eq!(ex.extract(&chunk, 0).unwrap(), ex.extract(&shuffled, 0).unwrap());
    }

    #[test]
    fn single_frame_chunk_rejected() {
        let ex = MotionExtractor::new(MotionConfig::default());
        assert!(ex.extract(&[frame(0.0, 8)], 0).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let mf = |v: &[f64]| MotionFeature {
            values: Array1::from_vec(v.to_vec()),
            chunk_index: 0,
        };
        let one = mf(&[1.0, 2.0]);
        assert_eq!(aggregate_chunks(&[one.clone()]).unwrap().values, one.values);

        let agg = aggregate_chunks(&[mf(&[1.0, 1.0]), mf(&[-1.0, -1.0])]).unwrap();
        assert!(agg.values.iter().all(|&v| v.abs() < 1e-12));

        let agg = aggregate_chunks(&[
            mf(&[1.0, 1.0, 1.0]),
            mf(&[2.0, 2.0, 2.0]),
            mf(&[3.0, 3.0, 3.0]),
        ])
        .unwrap();
        assert!(agg.values.iter().all(|&v| (v - 2.0).abs() < 1e-12));

        assert!(aggregate_chunks(&[]).is_err());

        // Permutation invariance.
        let a = aggregate_chunks(&[mf(&[1.0]), mf(&[5.0]), mf(&[9.0])]).unwrap();
        let b = aggregate_chunks(&[mf(&[9.0]), mf(&[1.0]), mf(&[5.0])]).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn checksum_is_stable_for_a_seed() {
        let a = MotionExtractor::new(MotionConfig::default());
        let b = MotionExtractor::new(MotionConfig::default());
        assert_eq!(a.checksum(), b.checksum());
        let c = MotionExtractor::new(MotionConfig {
            seed: 8,
            ..MotionConfig::default()
        });
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn chunking_respects_frame_rate() {
        let frames: Vec<_> = (0..20).map(|t| frame(t as f64, 4)).collect();
        let chunks = chunk_video(&frames, 8.0, 1.0);
        assert_eq!(chunks.len(), 3); // 8 + 8 + 4
        assert_eq!(chunks[0].len(), 8);
        assert_eq!(chunks[2].len(), 4);
    }
}
