use std::collections::BTreeMap;

use ndarray::{Array1, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{QaError, Result};

/// Input modality of a sample or database.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Image,
    Video,
    Av,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::Audio,
        Modality::Image,
        Modality::Video,
        Modality::Av,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Image => "image",
            Modality::Video => "video",
            Modality::Av => "av",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "audio" => Ok(Modality::Audio),
            "image" => Ok(Modality::Image),
            "video" => Ok(Modality::Video),
            "av" => Ok(Modality::Av),
            other => Err(QaError::InvalidInput(format!("unknown modality `{other}`"))),
        }
    }

    pub fn has_frames(&self) -> bool {
        !matches!(self, Modality::Audio)
    }

    pub fn has_audio(&self) -> bool {
        matches!(self, Modality::Audio | Modality::Av)
    }

    pub fn has_motion(&self) -> bool {
        matches!(self, Modality::Video | Modality::Av)
    }
}

/// Closed MOS interval of a database.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MosRange {
    pub lo: f64,
    pub hi: f64,
}

impl MosRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(QaError::InvalidInput(format!(
                "MOS range lower bound {lo} must be strictly below upper bound {hi}"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// A registered quality-assessment database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseSpec {
    pub name: String,
    pub modality: Modality,
    pub mos_range: MosRange,
    pub n_samples: usize,
    /// Base sampling weight: training steps this database contributes per
    /// epoch before the audio repeat factor is applied.
    pub steps_per_epoch: usize,
}

/// Raw media carried by one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Image {
        /// Channels × height × width, values in `[0, 1]`.
        pixels: Array3<f64>,
    },
    Video {
        frames: Vec<Array3<f64>>,
        frame_rate: f64,
    },
    Audio {
        waveform: Array1<f64>,
        sample_rate: f64,
    },
    Av {
        frames: Vec<Array3<f64>>,
        frame_rate: f64,
        waveform: Array1<f64>,
        sample_rate: f64,
    },
}

impl Payload {
    pub fn modality(&self) -> Modality {
        match self {
            Payload::Image { .. } => Modality::Image,
            Payload::Video { .. } => Modality::Video,
            Payload::Audio { .. } => Modality::Audio,
            Payload::Av { .. } => Modality::Av,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Payload::Image { pixels } => {
                if pixels.shape()[1] == 0 || pixels.shape()[2] == 0 {
                    return Err(QaError::InvalidInput("empty image".into()));
                }
            }
            Payload::Video { frames, frame_rate } => {
                if frames.is_empty() {
                    return Err(QaError::InvalidInput("video with no frames".into()));
                }
                if *frame_rate <= 0.0 {
                    return Err(QaError::InvalidInput("nonpositive frame rate".into()));
                }
            }
            Payload::Audio {
                waveform,
                sample_rate,
            } => {
                if waveform.is_empty() {
                    return Err(QaError::InvalidInput("empty waveform".into()));
                }
                if *sample_rate <= 0.0 {
                    return Err(QaError::InvalidInput("nonpositive sample rate".into()));
                }
            }
            Payload::Av {
                frames,
                frame_rate,
                waveform,
                sample_rate,
            } => {
                if frames.is_empty() || waveform.is_empty() {
                    return Err(QaError::InvalidInput(
                        "A/V payload needs both frames and waveform".into(),
                    ));
                }
                if *frame_rate <= 0.0 || *sample_rate <= 0.0 {
                    return Err(QaError::InvalidInput("nonpositive media rate".into()));
                }
            }
        }
        Ok(())
    }
}

/// One audio/image/video/A-V item with its ground-truth MOS.
#[derive(Debug, Clone, PartialEq)]
pub struct MediaSample {
    pub database: String,
    pub sample_id: String,
    pub modality: Modality,
    pub payload: Payload,
    pub mos: f64,
    /// Latent quality in `[0, 1]`; synthetic databases only.
    pub latent_quality: Option<f64>,
}

/// A spec together with its loaded samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    pub spec: DatabaseSpec,
    pub samples: Vec<MediaSample>,
}

impl Database {
    /// Validate the per-database invariants.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.samples {
            if !seen.insert(s.sample_id.clone()) {
                return Err(QaError::DuplicateSample {
                    database: self.spec.name.clone(),
                    id: s.sample_id.clone(),
                });
            }
            if s.modality != self.spec.modality {
                return Err(QaError::InvalidInput(format!(
                    "sample `{}` modality {:?} differs from database modality {:?}",
                    s.sample_id, s.modality, self.spec.modality
                )));
            }
            if !self.spec.mos_range.contains(s.mos) {
                return Err(QaError::MosOutOfRange {
                    id: s.sample_id.clone(),
                    mos: s.mos,
                    lo: self.spec.mos_range.lo,
                    hi: self.spec.mos_range.hi,
                });
            }
            s.payload.validate()?;
        }
        if self.samples.len() != self.spec.n_samples {
            return Err(QaError::InvalidInput(format!(
                "database `{}` declares {} samples but holds {}",
                self.spec.name,
                self.spec.n_samples,
                self.samples.len()
            )));
        }
        Ok(())
    }

    pub fn sample(&self, id: &str) -> Option<&MediaSample> {
        self.samples.iter().find(|s| s.sample_id == id)
    }

    /// Apply `mos -> a*mos + b` to every sample and widen the declared range
    /// accordingly. Used by the scale-robustness experiments.
    pub fn rescale_mos(&mut self, a: f64, b: f64) {
        assert!(a > 0.0, "rescale slope must be positive");
        for s in &mut self.samples {
            s.mos = a * s.mos + b;
        }
        self.spec.mos_range = MosRange {
            lo: a * self.spec.mos_range.lo + b,
            hi: a * self.spec.mos_range.hi + b,
        };
    }
}

/// The run-level database registry. Registration is serialized through
/// `&mut self`; reads after registration are immutable.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    dbs: BTreeMap<String, Database>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, db: Database) -> Result<()> {
        db.validate()?;
        if self.dbs.contains_key(&db.spec.name) {
            return Err(QaError::DuplicateDatabase(db.spec.name.clone()));
        }
        self.dbs.insert(db.spec.name.clone(), db);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Database> {
        self.dbs
            .get(name)
            .ok_or_else(|| QaError::UnknownDatabase(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Database> {
        self.dbs
            .get_mut(name)
            .ok_or_else(|| QaError::UnknownDatabase(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.dbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dbs.is_empty()
    }

    /// Databases in name order (deterministic iteration everywhere).
    pub fn databases(&self) -> impl Iterator<Item = &Database> {
        self.dbs.values()
    }

    pub fn names(&self) -> Vec<String> {
        self.dbs.keys().cloned().collect()
    }
}
