//! Adaptive weighted task sampling: per-epoch schedules of single-database
//! minibatch draws, with audio databases repeated by a configurable factor.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DatabaseSpec, Modality};
use crate::error::{QaError, Result};
use crate::params::derive_seed;

/// One training draw: a minibatch of sample ids from a single database.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Draw {
    pub database: String,
    pub sample_ids: Vec<String>,
}

/// The realized draw sequence of one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingSchedule {
    pub epoch: usize,
    pub seed: u64,
    pub draws: Vec<Draw>,
}

impl SamplingSchedule {
    /// Realized draw count per database.
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut c = BTreeMap::new();
        for d in &self.draws {
            *c.entry(d.database.clone()).or_insert(0) += 1;
        }
        c
    }
}

/// `steps_per_epoch × audio_repeat_factor` for audio databases, raw steps
/// otherwise.
pub fn adjusted_steps(spec: &DatabaseSpec, audio_repeat_factor: usize) -> usize {
    if spec.modality == Modality::Audio {
        spec.steps_per_epoch * audio_repeat_factor
    } else {
        spec.steps_per_epoch
    }
}

/// Build one epoch's schedule. `train_ids` maps each database to its train
/// split; draws are sampled without replacement until a database is
/// exhausted, then its pool is reshuffled. The slot order is a seeded
/// uniform shuffle of the database-slot multiset.
pub fn build_schedule(
    databases: &[DatabaseSpec],
    train_ids: &BTreeMap<String, Vec<String>>,
    batch_size: usize,
    audio_repeat_factor: usize,
    seed: u64,
    epoch: usize,
) -> Result<SamplingSchedule> {
    if databases.is_empty() {
        return Err(QaError::InvalidInput("no databases to schedule".into()));
    }
    if batch_size == 0 {
        return Err(QaError::InvalidInput("batch size must be positive".into()));
    }
    if audio_repeat_factor == 0 {
        return Err(QaError::InvalidInput(
            "audio repeat factor must be ≥ 1".into(),
        ));
    }
    for spec in databases {
        if spec.steps_per_epoch == 0 {
            return Err(QaError::InvalidInput(format!(
                "database `{}` has zero steps_per_epoch",
                spec.name
            )));
        }
        let ids = train_ids
            .get(&spec.name)
            .ok_or_else(|| QaError::UnknownDatabase(spec.name.clone()))?;
        if batch_size > ids.len() {
            return Err(QaError::InvalidInput(format!(
                "batch size {batch_size} exceeds the train split of `{}` ({})",
                spec.name,
                ids.len()
            )));
        }
    }

    // Slot multiset in database name order, then a seeded shuffle.
    let mut by_name: Vec<&DatabaseSpec> = databases.iter().collect();
    by_name.sort_by(|a, b| a.name.cmp(&b.name));
    let mut slots = Vec::new();
    for spec in &by_name {
        for _ in 0..adjusted_steps(spec, audio_repeat_factor) {
            slots.push(spec.name.clone());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        &format!("schedule/epoch{epoch}"),
    ));
    slots.shuffle(&mut rng);

    // Per-database without-replacement pools.
    let mut pools: BTreeMap<String, Pool> = BTreeMap::new();
    for spec in &by_name {
        pools.insert(
            spec.name.clone(),
            Pool::new(
                train_ids[&spec.name].clone(),
                derive_seed(seed, &format!("draws/{}/epoch{epoch}", spec.name)),
            ),
        );
    }

    let draws = slots
        .into_iter()
        .map(|db| {
            let sample_ids = pools.get_mut(&db).unwrap().draw(batch_size);
            Draw {
                database: db,
                sample_ids,
            }
        })
        .collect();
    Ok(SamplingSchedule { epoch, seed, draws })
}

/// A shuffled id queue. When fewer than a full batch remains, the leftover
/// ids open the batch and a reshuffle tops it up without duplicating them.
struct Pool {
    ids: Vec<String>,
    queue: Vec<String>,
    rng: ChaCha8Rng,
}

impl Pool {
    fn new(mut ids: Vec<String>, seed: u64) -> Self {
        ids.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut queue = ids.clone();
        queue.shuffle(&mut rng);
        Self { ids, queue, rng }
    }

    fn draw(&mut self, batch_size: usize) -> Vec<String> {
        let mut batch: Vec<String> = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if self.queue.is_empty() {
                let mut fresh = self.ids.clone();
                fresh.shuffle(&mut self.rng);
                fresh.retain(|id| !batch.contains(id));
                self.queue = fresh;
            }
            batch.push(self.queue.remove(0));
        }
        batch
    }
}
