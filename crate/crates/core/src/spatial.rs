//! Spatial feature extraction: multi-stage convolutional backbone, pooling
//! of stage maps to a common resolution, MHSA fusion with a convolutional
//! residual, and mean/std statistics pooling into the spatial feature `F_s`.

use ndarray::{Array3, IxDyn};
use serde::{Deserialize, Serialize};

use crate::autograd::{Arr, Graph, Val};
use crate::error::{QaError, Result};
use crate::params::{Bound, ParamInit, ParamSet};

/// Backbone and fusion configuration. The default is the desk-scale toy
/// backbone; any stage/stride layout with `n_stages ≥ 2` is accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub stage_channels: Vec<usize>,
    pub stage_strides: Vec<usize>,
    /// Stage indices (0-based) fed into the fusion block. `None` taps all
    /// stages; the 3-of-4 variant of the figure is `Some(vec![1,2,3])`.
    pub tapped_stages: Option<Vec<usize>>,
    pub mhsa_heads: usize,
    /// Embedding width of the MHSA bottleneck; heads must divide it.
    pub mhsa_embed: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            stage_channels: vec![8, 16, 32, 64],
            stage_strides: vec![4, 2, 2, 2],
            tapped_stages: None,
            mhsa_heads: 4,
            mhsa_embed: 32,
        }
    }
}

impl BackboneConfig {
    pub fn n_stages(&self) -> usize {
        self.stage_channels.len()
    }

    pub fn tapped(&self) -> Vec<usize> {
        self.tapped_stages
            .clone()
            .unwrap_or_else(|| (0..self.n_stages()).collect())
    }

    /// Sum of tapped channel counts: the fused channel width.
    pub fn fused_channels(&self) -> usize {
        self.tapped().iter().map(|&i| self.stage_channels[i]).sum()
    }

    /// `|F_s| = 2·ΣC_i` over tapped stages.
    pub fn feature_len(&self) -> usize {
        2 * self.fused_channels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_stages() < 2 {
            return Err(QaError::InvalidInput("backbone needs at least 2 stages".into()));
        }
        if self.stage_strides.len() != self.n_stages() {
            return Err(QaError::InvalidInput("one stride per stage required".into()));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(QaError::InvalidInput("zero-channel stage".into()));
        }
        if self.mhsa_embed % self.mhsa_heads != 0 {
            return Err(QaError::InvalidInput(format!(
                "head count {} must divide embedding width {}",
                self.mhsa_heads, self.mhsa_embed
            )));
        }
        for t in self.tapped() {
            if t >= self.n_stages() {
                return Err(QaError::InvalidInput(format!("tapped stage {t} out of range")));
            }
        }
        Ok(())
    }

    /// Spatial size after each stage for a square input.
    pub fn stage_sizes(&self, input: usize) -> Result<Vec<usize>> {
        let mut sizes = Vec::new();
        let mut s = input;
        for &stride in &self.stage_strides {
            if s < 2 {
                return Err(QaError::InvalidInput(format!(
                    "spatial size {s} too small for another stage"
                )));
            }
            s = (s + 2 * PAD - KERNEL) / stride + 1;
            if s == 0 {
                return Err(QaError::InvalidInput(
                    "input too small for the configured downsamplings".into(),
                ));
            }
            sizes.push(s);
        }
        Ok(sizes)
    }
}

const KERNEL: usize = 3;
const PAD: usize = 1;
const STD_EPS: f64 = 1e-8;

/// Register backbone + fusion parameters under the `spatial.` prefix.
pub fn init_spatial_params(params: &mut ParamSet, cfg: &BackboneConfig, init: &mut ParamInit) {
    let mut cin = cfg.in_channels;
    for (i, (&cout, _)) in cfg
        .stage_channels
        .iter()
        .zip(&cfg.stage_strides)
        .enumerate()
    {
        let fan_in = cin * KERNEL * KERNEL;
        params.insert(
            &format!("spatial.stage{i}.w"),
            init.uniform(&[cout, cin, KERNEL, KERNEL], fan_in),
        );
        params.insert(&format!("spatial.stage{i}.b"), init.zeros(&[cout]));
        cin = cout;
    }
    let c = cfg.fused_channels();
    let e = cfg.mhsa_embed;
    let dh = e / cfg.mhsa_heads;
    params.insert("spatial.fuse.conv_in.w", init.uniform(&[e, c], c));
    params.insert("spatial.fuse.conv_in.b", init.zeros(&[e]));
    for h in 0..cfg.mhsa_heads {
        params.insert(&format!("spatial.fuse.head{h}.wq"), init.uniform(&[e, dh], e));
        params.insert(&format!("spatial.fuse.head{h}.wk"), init.uniform(&[e, dh], e));
        params.insert(&format!("spatial.fuse.head{h}.wv"), init.uniform(&[e, dh], e));
    }
    params.insert("spatial.fuse.wo.w", init.uniform(&[e, e], e));
    params.insert("spatial.fuse.wo.b", init.zeros(&[e]));
    // Residual branch closes with a zero map, so fusion starts as identity.
    params.insert("spatial.fuse.conv_out.w", init.zeros(&[c, e]));
    params.insert("spatial.fuse.conv_out.b", init.zeros(&[c]));
}

/// `x·wᵀ + b` for row-major `x: (n, in)`, `w: (out, in)`, `b: (out)`.
fn linear(g: &Graph, x: Val, w: Val, b: Val) -> Val {
    let wt = g.transpose(w);
    let y = g.matmul(x, wt);
    let n = g.shape(y)[0];
    let out = g.shape(y)[1];
    let bb = g.reshape(b, &[1, out]);
    let bb = g.broadcast(bb, &[n, out]);
    g.add(y, bb)
}

/// Run the backbone over a `(B·T, C, H, W)` batch and return all tapped
/// stage maps, shallow to deep.
pub fn extract_stage_maps(bound: &Bound, cfg: &BackboneConfig, batch: Val) -> Result<Vec<Val>> {
    cfg.validate()?;
    let g = bound.graph();
    let shape = g.shape(batch);
    if shape.len() != 4 || shape[1] != cfg.in_channels {
        return Err(QaError::ShapeMismatch(format!(
            "backbone expects (BT, {}, H, W), got {shape:?}",
            cfg.in_channels
        )));
    }
    // Fails early if the input cannot survive all downsamplings.
    cfg.stage_sizes(shape[2].min(shape[3]))?;
    let mut maps = Vec::new();
    let mut x = batch;
    for (i, &stride) in cfg.stage_strides.iter().enumerate() {
        let w = bound.val(&format!("spatial.stage{i}.w"));
        let b = bound.val(&format!("spatial.stage{i}.b"));
        let c = g.conv2d(x, w, b, stride, PAD);
        x = g.tanh(c);
        maps.push(x);
    }
    Ok(cfg.tapped().iter().map(|&i| maps[i]).collect())
}

/// Adaptive average pooling of one stage map to the final resolution.
pub fn pool_to_final_resolution(g: &Graph, map: Val, target_hw: (usize, usize)) -> Result<Val> {
    let shape = g.shape(map);
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h < target_hw.0 || w < target_hw.1 {
        return Err(QaError::ShapeMismatch(format!(
            "pool target {target_hw:?} larger than map {h}×{w}"
        )));
    }
    if (h, w) == target_hw {
        return Ok(map);
    }
    Ok(g.adaptive_avg_pool2d(map, target_hw.0, target_hw.1))
}

/// MHSA fusion over one concatenated map `(C, H, W)`:
/// concat → 1×1 conv to the embedding width → multi-head self-attention over
/// the H·W token grid → 1×1 conv back → residual add. No positional
/// encoding; a single attention block.
pub fn fuse_with_mhsa(bound: &Bound, cfg: &BackboneConfig, map: Val) -> Result<Val> {
    let g = bound.graph();
    let shape = g.shape(map);
    if shape.len() != 3 {
        return Err(QaError::ShapeMismatch(format!(
            "fusion expects (C, H, W), got {shape:?}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if c != cfg.fused_channels() {
        return Err(QaError::ShapeMismatch(format!(
            "fused channel width {c} does not match config {}",
            cfg.fused_channels()
        )));
    }
    let tokens = g.transpose(g.reshape(map, &[c, h * w])); // (HW, C)
    let x1 = linear(
        g,
        tokens,
        bound.val("spatial.fuse.conv_in.w"),
        bound.val("spatial.fuse.conv_in.b"),
    ); // (HW, E)
    let attended = mhsa(bound, g, "spatial.fuse", cfg.mhsa_heads, x1);
    let back = linear(
        g,
        attended,
        bound.val("spatial.fuse.conv_out.w"),
        bound.val("spatial.fuse.conv_out.b"),
    ); // (HW, C)
    let fused_tokens = g.add(tokens, back);
    Ok(g.reshape(g.transpose(fused_tokens), &[c, h, w]))
}

/// Shared multi-head self-attention over a `(n_tokens, E)` matrix, using
/// parameters under `prefix` (`{prefix}.head{h}.wq/wk/wv`, `{prefix}.wo`).
pub(crate) fn mhsa(bound: &Bound, g: &Graph, prefix: &str, heads: usize, x: Val) -> Val {
    let e = g.shape(x)[1];
    let dh = e / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = g.matmul(x, bound.val(&format!("{prefix}.head{h}.wq")));
        let k = g.matmul(x, bound.val(&format!("{prefix}.head{h}.wk")));
        let v = g.matmul(x, bound.val(&format!("{prefix}.head{h}.wv")));
        let kt = g.transpose(k);
        let logits = g.mul_scalar(g.matmul(q, kt), scale);
        let attn = g.softmax_rows(logits);
        outs.push(g.matmul(attn, v));
    }
    let concat = g.concat(1, &outs);
    linear(
        g,
        concat,
        bound.val(&format!("{prefix}.wo.w")),
        bound.val(&format!("{prefix}.wo.b")),
    )
}

/// Per-channel spatial mean and standard deviation of a `(C, H, W)` map.
/// σ uses population variance with an epsilon guard inside the square root.
pub fn global_mean_std_pool(g: &Graph, map: Val) -> (Val, Val) {
    let shape = g.shape(map);
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let flat = g.reshape(map, &[c, h * w]);
    let mu = g.mean_axis_keep(flat, 1); // (C, 1)
    let mu_b = g.broadcast(mu, &[c, h * w]);
    let diff = g.sub(flat, mu_b);
    let sq = g.mul(diff, diff);
    let var = g.mean_axis_keep(sq, 1);
    let var_eps = g.add_scalar(var, STD_EPS);
    let sigma = g.sqrt(var_eps);
    (g.reshape(mu, &[c]), g.reshape(sigma, &[c]))
}

/// Full spatial branch for one media item: every frame through the backbone,
/// stage maps pooled to the final resolution, fused, statistics-pooled, and
/// the per-frame features averaged over time.
pub fn spatial_feature(bound: &Bound, cfg: &BackboneConfig, frames: &[Array3<f64>]) -> Result<Val> {
    if frames.is_empty() {
        return Err(QaError::InvalidInput("spatial branch needs ≥1 frame".into()));
    }
    let g = bound.graph();
    let mut per_frame = Vec::with_capacity(frames.len());
    for frame in frames {
        let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
        let arr = Arr::from_shape_vec(
            IxDyn(&[1, c, h, w]),
            frame.iter().cloned().collect(),
        )
        .unwrap();
        let input = g.leaf(arr);
        let f = spatial_feature_from_input(bound, cfg, input)?;
        per_frame.push(g.reshape(f, &[1, cfg.feature_len()]));
    }
    let stacked = g.concat(0, &per_frame);
    let mean = g.mean_axis_keep(stacked, 0);
    Ok(g.reshape(mean, &[cfg.feature_len()]))
}

/// Spatial feature of a single `(1, C, H, W)` input node. Exposed so
/// gradient checks can differentiate with respect to the input pixels.
pub fn spatial_feature_from_input(
    bound: &Bound,
    cfg: &BackboneConfig,
    input: Val,
) -> Result<Val> {
    let g = bound.graph();
    let maps = extract_stage_maps(bound, cfg, input)?;
    let last_shape = g.shape(*maps.last().unwrap());
    let target = (last_shape[2], last_shape[3]);
    let pooled: Vec<Val> = maps
        .iter()
        .map(|&m| pool_to_final_resolution(g, m, target))
        .collect::<Result<_>>()?;
    let cat = g.concat(1, &pooled); // (1, ΣC, H_N, W_N)
    let c = cfg.fused_channels();
    let single = g.reshape(cat, &[c, target.0, target.1]);
    let fused = fuse_with_mhsa(bound, cfg, single)?;
    let (mu, sigma) = global_mean_std_pool(g, fused);
    Ok(g.concat(0, &[mu, sigma]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::IxDyn;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_cfg() -> BackboneConfig {
        BackboneConfig::default()
    }

    fn make_params(cfg: &BackboneConfig, seed: u64) -> ParamSet {
        let mut p = ParamSet::new();
        init_spatial_params(&mut p, cfg, &mut ParamInit::new(seed));
        p
    }

    fn rand_input(shape: &[usize], seed: u64) -> Arr {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Arr::from_shape_fn(IxDyn(shape), |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn stage_map_shapes_follow_strides() {
        let cfg = toy_cfg();
        assert_eq!(cfg.stage_sizes(384).unwrap(), vec![96, 48, 24, 12]);
        // Tiny input to keep the conv affordable in tests.
        let small = BackboneConfig {
            stage_strides: vec![2, 2, 2, 2],
            ..toy_cfg()
        };
        assert_eq!(small.stage_sizes(32).unwrap(), vec![16, 8, 4, 2]);
        let params = make_params(&small, 1);
        let g = Graph::new();
        let bound = Bound::bind(&g, &params);
        let input = g.leaf(rand_input(&[1, 3, 32, 32], 2));
        let maps = extract_stage_maps(&bound, &small, input).unwrap();
        let shapes: Vec<Vec<usize>> = maps.iter().map(|&m| g.shape(m)).collect();
        assert_eq!(shapes[0], vec![1, 8, 16, 16]);
        assert_eq!(shapes[3], vec![1, 64, 2, 2]);
    }

    #[test]
    fn batch_time_flattening_keeps_leading_dim() {
        let cfg = BackboneConfig {
            stage_strides: vec![2, 2, 2, 2],
            ..toy_cfg()
        };
        let params = make_params(&cfg, 1);
        let g = Graph::new();
        let bound = Bound::bind(&g, &params);
        // B=2, T=3 flattened to 6.
        let input = g.leaf(rand_input(&[6, 3, 16, 16], 3));
        let maps = extract_stage_maps(&bound, &cfg, input).unwrap();
        for &m in &maps {
            assert_eq!(g.shape(m)[0], 6);
        }
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_maps() {
        let cfg = BackboneConfig {
            stage_strides: vec![2, 2, 2, 2],
            ..toy_cfg()
        };
        let params = make_params(&cfg, 1); // biases are zero-initialized
        let g = Graph::new();
        let bound = Bound::bind(&g, &params);
        let input = g.leaf(Arr::zeros(IxDyn(&[1, 3, 16, 16])));
        let maps = extract_stage_maps(&bound, &cfg, input).unwrap();
        for &m in &maps {
            assert!(g.value(m).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pooling_identity_and_block_mean() {
        let g = Graph::new();
        let m = g.leaf(rand_input(&[1, 16, 12, 12], 4));
        let out = pool_to_final_resolution(&g, m, (12, 12)).unwrap();
        assert_eq!(out, m);

        // Counting pattern: each 2×2 block mean computed by hand.
        let counting = Arr::from_shape_fn(IxDyn(&[1, 1, 4, 4]), |d| (d[2] * 4 + d[3]) as f64);
        let m = g.leaf(counting.clone());
        let out = pool_to_final_resolution(&g, m, (2, 2)).unwrap();
        let v = g.value(out);
        assert_abs_diff_eq!(v[[0, 0, 0, 0]], 2.5, epsilon = 1e-12); // mean(0,1,4,5)
        assert_abs_diff_eq!(v[[0, 0, 1, 1]], 12.5, epsilon = 1e-12); // mean(10,11,14,15)

        let c = g.leaf(Arr::from_elem(IxDyn(&[1, 3, 8, 8]), 7.0));
        let out = pool_to_final_resolution(&g, c, (4, 4)).unwrap();
        assert!(g.value(out).iter().all(|&v| (v - 7.0).abs() < 1e-12));

        let small = g.leaf(rand_input(&[1, 1, 2, 2], 5));
        assert!(pool_to_final_resolution(&g, small, (4, 4)).is_err());
    }

    #[test]
    fn pooling_is_linear() {
        let g = Graph::new();
        let a = rand_input(&[1, 2, 6, 6], 6);
        let b = rand_input(&[1, 2, 6, 6], 7);
        let pa = g.value(pool_to_final_resolution(&g, g.leaf(a.clone()), (3, 3)).unwrap());
        let pb = g.value(pool_to_final_resolution(&g, g.leaf(b.clone()), (3, 3)).unwrap());
        let pab = g.value(
            pool_to_final_resolution(&g, g.leaf(&a * 2.0 + &b), (3, 3)).unwrap(),
        );
        let expected = &pa * 2.0 + &pb;
        for (x, y) in pab.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn fusion_with_zero_out_conv_is_identity() {
        let cfg = toy_cfg();
        let params = make_params(&cfg, 1); // conv_out zero by default
        let g = Graph::new();
        let bound = Bound::bind(&g, &params);
        let c = cfg.fused_channels();
        let map = rand_input(&[c, 4, 4], 8);
        let fused = fuse_with_mhsa(&bound, &cfg, g.leaf(map.clone())).unwrap();
        let out = g.value(fused);
        for (a, b) in out.iter().zip(map.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        // Attention operates over H·W tokens; shape is preserved.
        assert_eq!(out.shape(), &[c, 4, 4]);
    }

    #[test]
    fn fusion_is_token_permutation_equivariant() {
        let cfg = toy_cfg();
        let mut params = make_params(&cfg, 2);
        // Non-zero out conv so the attention branch matters.
        let c = cfg.fused_channels();
        let e = cfg.mhsa_embed;
        params.set(
            "spatial.fuse.conv_out.w",
            ParamInit::new(9).uniform(&[c, e], e),
        );
        let g = Graph::new();
        let bound = Bound::bind(&g, &params);
        let map = rand_input(&[c, 2, 2], 10);
        let out = g.value(fuse_with_mhsa(&bound, &cfg, g.leaf(map.clone())).unwrap());

        // Permute the 4 tokens, fuse, inverse-permute the result.
        let perm = [2usize, 0, 3, 1];
        let mut permuted = map.clone();
        for (dst, &src) in perm.iter().enumerate() {
            for ci in 0..c {
                permuted[[ci, dst / 2, dst % 2]] = map[[ci, src / 2, src % 2]];
            }
        }
        let pout = g.value(fuse_with_mhsa(&bound, &cfg, g.leaf(permuted)).unwrap());
        for (dst, &src) in perm.iter().enumerate() {
            for ci in 0..c {
                assert_abs_diff_eq!(
                    pout[[ci, dst / 2, dst % 2]],
                    out[[ci, src / 2, src % 2]],
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn mean_std_pool_examples() {
        let g = Graph::new();
        let m = g.leaf(Arr::from_elem(IxDyn(&[5, 3, 3]), 3.0));
        let (mu, sigma) = global_mean_std_pool(&g, m);
        assert!(g.value(mu).iter().all(|&v| (v - 3.0).abs() < 1e-12));
        assert!(g.value(sigma).iter().all(|&v| v < 1e-3)); // ~sqrt(eps)

        // One channel holding {1, 3} equally: μ=2, population σ=1.
        let mut vals = Arr::zeros(IxDyn(&[1, 1, 2]));
        vals[[0, 0, 0]] = 1.0;
        vals[[0, 0, 1]] = 3.0;
        let (mu, sigma) = global_mean_std_pool(&g, g.leaf(vals));
        assert_abs_diff_eq!(g.value(mu)[[0]], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.value(sigma)[[0]], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn feature_length_law() {
        let cfg = BackboneConfig {
            stage_strides: vec![2, 2, 2, 2],
            ..toy_cfg()
        };
        assert_eq!(cfg.feature_len(), 240);
        let params = make_params(&cfg, 1);
        let g = Graph::new();
        let bound = Bound::bind(&g, &params);
        let frame = Array3::from_shape_fn((3, 16, 16), |(c, y, x)| {
            (c + y + x) as f64 * 0.01
        });
        let f = spatial_feature(&bound, &cfg, &[frame]).unwrap();
        assert_eq!(g.shape(f), vec![240]);

        // Randomized configs obey |F_s| = 2·ΣC.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let ch: Vec<usize> = (0..3).map(|_| rng.gen_range(1..9)).collect();
            let cfg = BackboneConfig {
                in_channels: 3,
                stage_channels: ch.clone(),
                stage_strides: vec![2, 2, 2],
                tapped_stages: None,
                mhsa_heads: 1,
                mhsa_embed: 8,
            };
            assert_eq!(cfg.feature_len(), 2 * ch.iter().sum::<usize>());
        }
    }

    #[test]
    fn paper_scale_config_reports_2240() {
        // The full-scale backbone taps channels summing to 1120.
        let cfg = BackboneConfig {
            in_channels: 3,
            stage_channels: vec![96, 192, 384, 448],
            stage_strides: vec![4, 2, 2, 2],
            tapped_stages: None,
            mhsa_heads: 4,
            mhsa_embed: 64,
        };
        assert_eq!(cfg.fused_channels(), 1120);
        assert_eq!(cfg.feature_len(), 2240);
    }

    #[test]
    fn video_frames_average_over_time() {
        let cfg = BackboneConfig {
            stage_strides: vec![2, 2, 2, 2],
            ..toy_cfg()
        };
        let params = make_params(&cfg, 1);
        let g = Graph::new();
        let bound = Bound::bind(&g, &params);
        let f1 = Array3::from_shape_fn((3, 16, 16), |(c, y, x)| (c + y * x) as f64 * 0.01);
        let f2 = f1.mapv(|v| 1.0 - v);
        let a = g.value(spatial_feature(&bound, &cfg, &[f1.clone()]).unwrap());
        let b = g.value(spatial_feature(&bound, &cfg, &[f2.clone()]).unwrap());
        let both = g.value(spatial_feature(&bound, &cfg, &[f1, f2]).unwrap());
        for i in 0..both.len() {
            assert_abs_diff_eq!(
                both[[i]],
                (a[[i]] + b[[i]]) / 2.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn too_small_input_rejected() {
        let cfg = toy_cfg(); // stride 4,2,2,2 needs ≥ ~32 px
        let params = make_params(&cfg, 1);
        let g = Graph::new();
        let bound = Bound::bind(&g, &params);
        let input = g.leaf(Arr::zeros(IxDyn(&[1, 3, 4, 4])));
        assert!(extract_stage_maps(&bound, &cfg, input).is_err());
    }
}
