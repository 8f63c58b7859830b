//! Audio feature extraction: a framewise CNN over mel-spectrogram segments,
//! a self-attention time-dependency block with a learned positional
//! encoding, and attention pooling producing the audio feature `F_a`.

use ndarray::{Array1, Array2, IxDyn};
use serde::{Deserialize, Serialize};

use crate::autograd::{Arr, Val};
use crate::data::{compute_mel_spectrogram, MelConfig};
use crate::error::{QaError, Result};
use crate::params::{Bound, ParamInit, ParamSet};
use crate::spatial::mhsa;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioConfig {
    /// Embedding and output width `D_a`.
    pub d_a: usize,
    pub conv_channels: Vec<usize>,
    pub attn_heads: usize,
    /// Maximum number of segments the positional encoding covers.
    pub max_segments: usize,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            d_a: 64,
            conv_channels: vec![4, 8],
            attn_heads: 2,
            max_segments: 512,
        }
    }
}

const KERNEL: usize = 3;
const PAD: usize = 1;
const STRIDE: usize = 2;

impl AudioConfig {
    /// Flattened width after the conv stages for a `rows × cols` segment.
    fn conv_out_len(&self, rows: usize, cols: usize) -> usize {
        let (mut r, mut c) = (rows, cols);
        for _ in &self.conv_channels {
            r = (r + 2 * PAD - KERNEL) / STRIDE + 1;
            c = (c + 2 * PAD - KERNEL) / STRIDE + 1;
        }
        self.conv_channels.last().unwrap() * r * c
    }
}

/// Register audio-branch parameters under the `audio.` prefix.
pub fn init_audio_params(
    params: &mut ParamSet,
    cfg: &AudioConfig,
    mel: &MelConfig,
    init: &mut ParamInit,
) {
    let mut cin = 1;
    for (i, &cout) in cfg.conv_channels.iter().enumerate() {
        let fan_in = cin * KERNEL * KERNEL;
        params.insert(
            &format!("audio.conv{i}.w"),
            init.uniform(&[cout, cin, KERNEL, KERNEL], fan_in),
        );
        params.insert(&format!("audio.conv{i}.b"), init.zeros(&[cout]));
        cin = cout;
    }
    let flat = cfg.conv_out_len(mel.segment_width, mel.n_bands);
    params.insert("audio.proj.w", init.uniform(&[cfg.d_a, flat], flat));
    params.insert("audio.proj.b", init.zeros(&[cfg.d_a]));

    let e = cfg.d_a;
    let dh = e / cfg.attn_heads;
    params.insert(
        "audio.posenc",
        init.uniform(&[cfg.max_segments, e], cfg.max_segments),
    );
    for h in 0..cfg.attn_heads {
        params.insert(&format!("audio.attn.head{h}.wq"), init.uniform(&[e, dh], e));
        params.insert(&format!("audio.attn.head{h}.wk"), init.uniform(&[e, dh], e));
        params.insert(&format!("audio.attn.head{h}.wv"), init.uniform(&[e, dh], e));
    }
    // Zero output projection: the time-dependency block starts as identity.
    params.insert("audio.attn.wo.w", init.zeros(&[e, e]));
    params.insert("audio.attn.wo.b", init.zeros(&[e]));

    params.insert("audio.pool.w", init.uniform(&[e, 1], e));
    params.insert("audio.pool.b", init.zeros(&[1]));
}

/// One `D_a` embedding per mel segment, stacked as an `S × D_a` matrix node.
pub fn framewise_embed(bound: &Bound, cfg: &AudioConfig, segments: &[Array2<f64>]) -> Result<Val> {
    if segments.is_empty() {
        return Err(QaError::InvalidInput("no mel segments".into()));
    }
    let shape = segments[0].shape().to_vec();
    if segments.iter().any(|s| s.shape() != &shape[..]) {
        return Err(QaError::ShapeMismatch("unequal mel segment shapes".into()));
    }
    let g = bound.graph();
    let mut rows = Vec::with_capacity(segments.len());
    for seg in segments {
        let input = g.leaf(
            Arr::from_shape_vec(
                IxDyn(&[1, 1, shape[0], shape[1]]),
                seg.iter().cloned().collect(),
            )
            .unwrap(),
        );
        let mut x = input;
        for i in 0..cfg.conv_channels.len() {
            let w = bound.val(&format!("audio.conv{i}.w"));
            let b = bound.val(&format!("audio.conv{i}.b"));
            x = g.tanh(g.conv2d(x, w, b, STRIDE, PAD));
        }
        let flat_len = g.shape(x).iter().product::<usize>();
        let flat = g.reshape(x, &[1, flat_len]);
        let w = g.transpose(bound.val("audio.proj.w"));
        let y = g.matmul(flat, w);
        let b = g.reshape(bound.val("audio.proj.b"), &[1, cfg.d_a]);
        rows.push(g.add(y, b));
    }
    Ok(g.concat(0, &rows))
}

/// Self-attention over segment order with a residual connection and a
/// learned per-index positional encoding.
pub fn time_dependency(bound: &Bound, cfg: &AudioConfig, embeddings: Val) -> Result<Val> {
    let g = bound.graph();
    let shape = g.shape(embeddings);
    let (s, e) = (shape[0], shape[1]);
    if e != cfg.d_a {
        return Err(QaError::ShapeMismatch(format!(
            "embedding width {e} does not match D_a {}",
            cfg.d_a
        )));
    }
    if s > cfg.max_segments {
        return Err(QaError::InvalidInput(format!(
            "{s} segments exceed the positional encoding capacity {}",
            cfg.max_segments
        )));
    }
    let pos = g.take_rows(bound.val("audio.posenc"), s);
    let x = g.add(embeddings, pos);
    let y = mhsa(bound, g, "audio.attn", cfg.attn_heads, x);
    Ok(g.add(embeddings, y))
}

/// Attention pooling: `F_a = Σ_t w_t · e_t`, `w = softmax` of a learned
/// scoring of each row.
pub fn attention_pool(bound: &Bound, cfg: &AudioConfig, embeddings: Val) -> Result<Val> {
    let g = bound.graph();
    let shape = g.shape(embeddings);
    let s = shape[0];
    let logits = g.matmul(embeddings, bound.val("audio.pool.w")); // (S, 1)
    let b = g.broadcast(bound.val("audio.pool.b"), &[s, 1]);
    let logits = g.add(logits, b);
    let weights = g.softmax_rows(g.transpose(logits)); // (1, S)
    let pooled = g.matmul(weights, embeddings); // (1, D_a)
    Ok(g.reshape(pooled, &[cfg.d_a]))
}

/// Pooling weights for inspection (probability vector over segments).
pub fn attention_pool_weights(bound: &Bound, embeddings: Val) -> Array1<f64> {
    let g = bound.graph();
    let s = g.shape(embeddings)[0];
    let logits = g.matmul(embeddings, bound.val("audio.pool.w"));
    let b = g.broadcast(bound.val("audio.pool.b"), &[s, 1]);
    let logits = g.add(logits, b);
    let weights = g.value(g.softmax_rows(g.transpose(logits)));
    Array1::from_iter(weights.iter().cloned())
}

/// Full audio branch: mel spectrogram → framewise CNN → time dependency →
/// attention pooling.
pub fn audio_feature(
    bound: &Bound,
    cfg: &AudioConfig,
    mel_cfg: &MelConfig,
    waveform: &Array1<f64>,
    sample_rate: f64,
) -> Result<Val> {
    let mel = compute_mel_spectrogram(waveform, sample_rate, mel_cfg)?;
    if mel.segments.is_empty() {
        return Err(QaError::InvalidInput(
            "waveform too short for one mel segment".into(),
        ));
    }
    let emb = framewise_embed(bound, cfg, &mel.segments)?;
    let dep = time_dependency(bound, cfg, emb)?;
    attention_pool(bound, cfg, dep)
}
