//! Declarative run configuration: data sources, phase settings, seeds, and
//! the architecture config, loadable from a JSON file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Modality, SynthConfig};
use crate::error::Result;
use crate::model::{ModelConfig, Phase};

/// Settings of one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub audio_repeat_factor: usize,
}

impl PhaseConfig {
    /// Paper defaults: 20/10/10 epochs, LR 1e−5, batch 8, audio factor 4.
    pub fn default_for(phase: Phase) -> Self {
        Self {
            epochs: match phase {
                Phase::Step1 => 20,
                Phase::Step2 | Phase::Step3 => 10,
            },
            learning_rate: 1e-5,
            batch_size: 8,
            audio_repeat_factor: 4,
        }
    }
}

/// Where a database comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        modality: Modality,
        n_samples: usize,
        seed: u64,
        config: SynthConfig,
    },
    Manifest {
        path: PathBuf,
    },
}

/// Training-strategy variant; the non-default arms are the §V-C ablation
/// baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Full three-step strategy with adaptive weighted task sampling.
    #[default]
    Full,
    /// Linear rescale baseline: MOS mapped to a common range, MSE loss,
    /// single extended phase with database-specific heads.
    Lrs,
    /// Weighted task sampling without the adaptive audio repeat (factor
    /// forced to 1 in every phase).
    FixedSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub databases: Vec<DataSource>,
    pub step1: PhaseConfig,
    pub step2: PhaseConfig,
    pub step3: PhaseConfig,
    /// Evaluation repeats (§V-A protocol).
    pub repeats: usize,
    /// Fit the 4-parameter logistic before PLCC.
    pub fit_logistic: bool,
    pub strategy: Strategy,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            databases: Vec::new(),
            step1: PhaseConfig::default_for(Phase::Step1),
            step2: PhaseConfig::default_for(Phase::Step2),
            step3: PhaseConfig::default_for(Phase::Step3),
            repeats: 10,
            fit_logistic: false,
            strategy: Strategy::Full,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn phase(&self, phase: Phase) -> &PhaseConfig {
        match phase {
            Phase::Step1 => &self.step1,
            Phase::Step2 => &self.step2,
            Phase::Step3 => &self.step3,
        }
    }

    /// Effective audio repeat factor under the configured strategy.
    pub fn effective_factor(&self, phase: Phase) -> usize {
        match self.strategy {
            Strategy::FixedSampling => 1,
            _ => self.phase(phase).audio_repeat_factor,
        }
    }
}
