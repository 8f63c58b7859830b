//! Feature composition, regression heads, and the full model forward pass.
//!
//! The head bank holds one database-specific head per training database in
//! step 1 and exactly four modality-specific heads from step 2 onward.

use std::cell::Cell;
use std::collections::BTreeMap;

use ndarray::{Array1, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{audio_feature, init_audio_params, AudioConfig};
use crate::autograd::{Graph, Val};
use crate::data::{
    preprocess_image, preprocess_motion_clip, DatabaseSpec, GeomConfig, MediaSample, MelConfig,
    Modality, Payload,
};
use crate::error::{QaError, Result};
use crate::motion::{aggregate_chunks, chunk_video, MotionConfig, MotionExtractor};
use crate::params::{Bound, ParamInit, ParamSet};
use crate::spatial::{init_spatial_params, spatial_feature, BackboneConfig};

/// Architecture-level configuration shared by every phase of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub motion: MotionConfig,
    pub audio: AudioConfig,
    pub mel: MelConfig,
    pub geom: GeomConfig,
    /// Frames per second fed to the spatial branch of a video.
    pub keyframes_per_second: f64,
    /// Motion chunk length in seconds (non-overlapping).
    pub chunk_seconds: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            motion: MotionConfig::default(),
            audio: AudioConfig::default(),
            mel: MelConfig::default(),
            geom: GeomConfig::default(),
            keyframes_per_second: 1.0,
            chunk_seconds: 1.0,
        }
    }
}

impl ModelConfig {
    /// SHA-256 of the canonical JSON serialization; checkpoints carry it.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Composed feature width per modality: audio `D_a`, image `2ΣC`,
    /// video `2ΣC + D_m`, A/V `2ΣC + D_m + D_a`.
    pub fn composed_width(&self, m: Modality) -> usize {
        let fs = self.backbone.feature_len();
        let fm = self.motion.d_m;
        let fa = self.audio.d_a;
        match m {
            Modality::Audio => fa,
            Modality::Image => fs,
            Modality::Video => fs + fm,
            Modality::Av => fs + fm + fa,
        }
    }
}

/// Training phase tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Step1,
    Step2,
    Step3,
}

/// Which heads the bank currently holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadBank {
    /// One head per training database (step 1).
    DatabaseSpecific(Vec<(String, Modality)>),
    /// Four modality-specific heads (steps 2–3).
    ModalitySpecific,
}

impl HeadBank {
    pub fn len(&self) -> usize {
        match self {
            HeadBank::DatabaseSpecific(dbs) => dbs.len(),
            HeadBank::ModalitySpecific => 4,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Full model state: trainable parameters, the frozen motion extractor, the
/// head bank, and the phase tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub motion: MotionExtractor,
    pub heads: HeadBank,
    pub phase: Phase,
}

fn head_prefix_db(name: &str) -> String {
    format!("head.db.{name}")
}

fn head_prefix_modality(m: Modality) -> String {
    format!("head.mod.{}", m.as_str())
}

fn init_head(params: &mut ParamSet, prefix: &str, in_width: usize, init: &mut ParamInit) {
    let hidden = (in_width / 2).max(1);
    params.insert(&format!("{prefix}.l1.w"), init.uniform(&[hidden, in_width], in_width));
    params.insert(&format!("{prefix}.l1.b"), init.zeros(&[hidden]));
    params.insert(&format!("{prefix}.l2.w"), init.uniform(&[1, hidden], hidden));
    params.insert(&format!("{prefix}.l2.b"), init.zeros(&[1]));
}

impl ModelState {
    /// Fresh step-1 state with one database-specific head per spec.
    pub fn init_step1(config: ModelConfig, databases: &[DatabaseSpec], seed: u64) -> Result<Self> {
        config.backbone.validate()?;
        let mut params = ParamSet::new();
        let mut init = ParamInit::new(seed);
        init_spatial_params(&mut params, &config.backbone, &mut init);
        init_audio_params(&mut params, &config.audio, &config.mel, &mut init);
        let mut banks = Vec::new();
        for db in databases {
            init_head(
                &mut params,
                &head_prefix_db(&db.name),
                config.composed_width(db.modality),
                &mut init,
            );
            banks.push((db.name.clone(), db.modality));
        }
        let motion = MotionExtractor::new(config.motion.clone());
        Ok(Self {
            config,
            params,
            motion,
            heads: HeadBank::DatabaseSpecific(banks),
            phase: Phase::Step1,
        })
    }

    /// Head parameter prefix for a sample under the current phase.
    pub fn head_prefix_for(&self, sample_db: &str, modality: Modality) -> Result<String> {
        match &self.heads {
            HeadBank::DatabaseSpecific(dbs) => {
                if !dbs.iter().any(|(n, _)| n == sample_db) {
                    return Err(QaError::UnknownDatabase(sample_db.to_string()));
                }
                Ok(head_prefix_db(sample_db))
            }
            HeadBank::ModalitySpecific => Ok(head_prefix_modality(modality)),
        }
    }

    /// Merge the database-specific bank into four modality-specific heads.
    /// Per modality the new head is the componentwise mean of that
    /// modality's step-1 heads; a modality with no contributing database
    /// gets a fresh random head.
    pub fn merge_heads(&self, seed: u64) -> Result<Self> {
        let dbs = match &self.heads {
            HeadBank::DatabaseSpecific(dbs) => dbs.clone(),
            HeadBank::ModalitySpecific => {
                return Err(QaError::InvalidInput(
                    "head bank already modality-specific".into(),
                ))
            }
        };
        let mut next = self.clone();
        let mut init = ParamInit::new(crate::params::derive_seed(seed, "merge_heads"));
        for m in Modality::ALL {
            let contributors: Vec<&String> = dbs
                .iter()
                .filter(|(_, dm)| *dm == m)
                .map(|(n, _)| n)
                .collect();
            let prefix = head_prefix_modality(m);
            if contributors.is_empty() {
                log::warn!(
                    "no step-1 database for modality {m:?}; initializing a fresh head"
                );
                init_head(&mut next.params, &prefix, self.config.composed_width(m), &mut init);
                continue;
            }
            for part in ["l1.w", "l1.b", "l2.w", "l2.b"] {
                let mut acc = self
                    .params
                    .get(&format!("{}.{part}", head_prefix_db(contributors[0])));
                for name in &contributors[1..] {
                    acc += &self.params.get(&format!("{}.{part}", head_prefix_db(name)));
                }
                acc /= contributors.len() as f64;
                next.params.insert(&format!("{prefix}.{part}"), acc);
            }
        }
        for (name, _) in &dbs {
            next.params.remove_prefix(&format!("{}.", head_prefix_db(name)));
        }
        next.heads = HeadBank::ModalitySpecific;
        next.phase = Phase::Step2;
        Ok(next)
    }
}

/// Constituent features available for composition.
#[derive(Debug, Default, Clone, Copy)]
pub struct FeatureParts {
    pub spatial: Option<Val>,
    pub motion: Option<Val>,
    pub audio: Option<Val>,
}

/// Concatenate constituents in fixed order (spatial, motion, audio).
/// Exactly the constituents the modality requires must be present.
pub fn compose_features(
    g: &Graph,
    modality: Modality,
    parts: FeatureParts,
) -> Result<Val> {
    let need = |name: &str, v: Option<Val>| {
        v.ok_or_else(|| {
            QaError::InvalidInput(format!("{name} feature required for {modality:?}"))
        })
    };
    let reject = |name: &str, v: Option<Val>| {
        if v.is_some() {
            Err(QaError::InvalidInput(format!(
                "{name} feature not accepted for {modality:?}"
            )))
        } else {
            Ok(())
        }
    };
    match modality {
        Modality::Image => {
            reject("motion", parts.motion)?;
            reject("audio", parts.audio)?;
            need("spatial", parts.spatial)
        }
        Modality::Audio => {
            reject("spatial", parts.spatial)?;
            reject("motion", parts.motion)?;
            need("audio", parts.audio)
        }
        Modality::Video => {
            reject("audio", parts.audio)?;
            let fs = need("spatial", parts.spatial)?;
            let fm = need("motion", parts.motion)?;
            Ok(g.concat(0, &[fs, fm]))
        }
        Modality::Av => {
            let fs = need("spatial", parts.spatial)?;
            let fm = need("motion", parts.motion)?;
            let fa = need("audio", parts.audio)?;
            Ok(g.concat(0, &[fs, fm, fa]))
        }
    }
}

/// Two affine layers with tanh between, producing a scalar score node.
pub fn regress(bound: &Bound, head_prefix: &str, feature: Val) -> Result<Val> {
    let g = bound.graph();
    let w1 = bound.val(&format!("{head_prefix}.l1.w"));
    let in_width = g.shape(feature)[0];
    if g.shape(w1)[1] != in_width {
        return Err(QaError::ShapeMismatch(format!(
            "head `{head_prefix}` expects width {}, feature has {in_width}",
            g.shape(w1)[1]
        )));
    }
    let x = g.reshape(feature, &[1, in_width]);
    let h = g.matmul(x, g.transpose(w1));
    let b1 = g.reshape(bound.val(&format!("{head_prefix}.l1.b")), &[1, g.shape(h)[1]]);
    let h = g.tanh(g.add(h, b1));
    let out = g.matmul(h, g.transpose(bound.val(&format!("{head_prefix}.l2.w"))));
    let b2 = g.reshape(bound.val(&format!("{head_prefix}.l2.b")), &[1, 1]);
    let out = g.add(out, b2);
    Ok(g.reshape(out, &[]))
}

/// Per-branch evaluation counters for the routing-purity checks.
#[derive(Debug, Default, Clone)]
pub struct BranchCounts {
    pub spatial: Cell<usize>,
    pub motion: Cell<usize>,
    pub audio: Cell<usize>,
}

/// Precomputed motion features, keyed by `(database, sample_id)`. Motion is
/// frozen, so features are computed once per sample and reused all run.
pub type MotionCache = BTreeMap<(String, String), Array1<f64>>;

/// Spatial-branch frames of a sample: the image itself, or keyframes at the
/// configured rate for video/A-V content.
pub fn spatial_frames(config: &ModelConfig, payload: &Payload) -> Result<Vec<Array3<f64>>> {
    let pick = |frames: &[Array3<f64>], rate: f64| -> Result<Vec<Array3<f64>>> {
        let step = ((rate / config.keyframes_per_second).round() as usize).max(1);
        let mut out = Vec::new();
        let mut i = 0;
        while i < frames.len() {
            out.push(preprocess_image(&frames[i], &config.geom)?);
            i += step;
        }
        Ok(out)
    };
    match payload {
        Payload::Image { pixels } => Ok(vec![preprocess_image(pixels, &config.geom)?]),
        Payload::Video { frames, frame_rate } => pick(frames, *frame_rate),
        Payload::Av {
            frames, frame_rate, ..
        } => pick(frames, *frame_rate),
        Payload::Audio { .. } => Err(QaError::InvalidInput(
            "audio payload has no frames".into(),
        )),
    }
}

/// Motion feature of a video/A-V payload: preprocess, chunk, extract per
/// chunk, mean over chunks.
pub fn motion_feature_of(
    config: &ModelConfig,
    motion: &MotionExtractor,
    payload: &Payload,
) -> Result<Array1<f64>> {
    let (frames, rate) = match payload {
        Payload::Video { frames, frame_rate } => (frames, *frame_rate),
        Payload::Av {
            frames, frame_rate, ..
        } => (frames, *frame_rate),
        _ => {
            return Err(QaError::InvalidInput(
                "motion branch needs a video payload".into(),
            ))
        }
    };
    let processed = preprocess_motion_clip(frames, &config.geom)?;
    let chunks = chunk_video(&processed, rate, config.chunk_seconds);
    if chunks.is_empty() {
        return Err(QaError::InvalidInput("video too short for one chunk".into()));
    }
    let features = chunks
        .iter()
        .enumerate()
        .map(|(i, c)| motion.extract(c, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate_chunks(&features)?.values)
}

/// Forward pass of one sample as a graph node. Routes through exactly the
/// branches the sample's modality requires; `counts`, when given, records
/// which branches ran.
pub fn forward_graph(
    bound: &Bound,
    state: &ModelState,
    sample: &MediaSample,
    cache: Option<&MotionCache>,
    counts: Option<&BranchCounts>,
) -> Result<Val> {
    let g = bound.graph();
    let m = sample.modality;
    let mut parts = FeatureParts::default();

    if m.has_frames() {
        let frames = spatial_frames(&state.config, &sample.payload)?;
        parts.spatial = Some(spatial_feature(bound, &state.config.backbone, &frames)?);
        if let Some(c) = counts {
            c.spatial.set(c.spatial.get() + 1);
        }
    }
    if m.has_motion() {
        let key = (sample.database.clone(), sample.sample_id.clone());
        let fm = match cache.and_then(|c| c.get(&key)) {
            Some(v) => v.clone(),
            None => motion_feature_of(&state.config, &state.motion, &sample.payload)?,
        };
        let arr = crate::autograd::Arr::from_shape_vec(
            ndarray::IxDyn(&[fm.len()]),
            fm.to_vec(),
        )
        .unwrap();
        parts.motion = Some(g.leaf(arr));
        if let Some(c) = counts {
            c.motion.set(c.motion.get() + 1);
        }
    }
    if m.has_audio() {
        let (wave, rate) = match &sample.payload {
            Payload::Audio {
                waveform,
                sample_rate,
            } => (waveform, *sample_rate),
            Payload::Av {
                waveform,
                sample_rate,
                ..
            } => (waveform, *sample_rate),
            _ => unreachable!(),
        };
        parts.audio = Some(audio_feature(
            bound,
            &state.config.audio,
            &state.config.mel,
            wave,
            rate,
        )?);
        if let Some(c) = counts {
            c.audio.set(c.audio.get() + 1);
        }
    }

    let composed = compose_features(g, m, parts)?;
    let prefix = state.head_prefix_for(&sample.database, m)?;
    regress(bound, &prefix, composed)
}

/// Convenience scalar forward pass (builds a private graph).
pub fn forward(
    state: &ModelState,
    sample: &MediaSample,
    cache: Option<&MotionCache>,
    counts: Option<&BranchCounts>,
) -> Result<f64> {
    let g = Graph::new();
    let bound = Bound::bind(&g, &state.params);
    let v = forward_graph(&bound, state, sample, cache, counts)?;
    Ok(g.scalar_value(v))
}

// ---- checkpoints ----

/// On-disk checkpoint: named parameter blocks, the frozen motion extractor,
/// the phase tag, and the config hash.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub phase: Phase,
    pub config_hash: String,
    pub state: ModelState,
}

pub fn save_checkpoint(state: &ModelState, path: &std::path::Path) -> Result<()> {
    let ckpt = Checkpoint {
        phase: state.phase,
        config_hash: state.config.hash(),
        state: state.clone(),
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(f, &ckpt)?;
    Ok(())
}

/// Load a checkpoint and verify its config hash against `expected`.
pub fn load_checkpoint(path: &std::path::Path, expected: &ModelConfig) -> Result<ModelState> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let ckpt: Checkpoint = serde_json::from_reader(f)?;
    let want = expected.hash();
    if ckpt.config_hash != want {
        return Err(QaError::ConfigHashMismatch {
            expected: want,
            found: ckpt.config_hash,
        });
    }
    Ok(ckpt.state)
}
