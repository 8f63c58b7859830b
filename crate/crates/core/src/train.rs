//! The three-step training strategy: database-specific pretraining with the
//! combined loss, head merge plus soft-SRCC training, and head-only
//! finetuning with frozen extractors. Includes the §V-C ablation baselines.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::config::{DataSource, PhaseConfig, RunConfig, Strategy};
use crate::data::{
    generate_synthetic_database, load_manifest, split_database, Database, DatabaseSpec,
    MediaSample, Registry, SplitAssignment,
};
use crate::error::{QaError, Result};
use crate::model::{
    forward, forward_graph, load_checkpoint, motion_feature_of, save_checkpoint, ModelState,
    MotionCache, Phase,
};
use crate::objectives::{
    combined_loss_graph, srcc_exact, srcc_soft_loss_graph, DEFAULT_SRCC_TAU,
};
use crate::params::{derive_seed, Adam, Bound};
use crate::schedule::build_schedule;

/// One line of the append-only metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub phase: Phase,
    pub epoch: usize,
    /// Database name, or "*" for run-level aggregates.
    pub database: String,
    pub metric: String,
    pub value: f64,
}

/// In-memory metrics log, optionally mirrored to a JSON-lines file.
#[derive(Debug, Default)]
pub struct MetricsLog {
    path: Option<PathBuf>,
    pub records: Vec<LogRecord>,
}

impl MetricsLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Append to `path` (created if missing).
    pub fn at_file(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            records: Vec::new(),
        })
    }

    pub fn push(&mut self, rec: LogRecord) -> Result<()> {
        if let Some(path) = &self.path {
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)?;
            writeln!(f, "{}", serde_json::to_string(&rec)?)?;
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vec<LogRecord>> {
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Ok(serde_json::from_str(l)?))
            .collect()
    }
}

/// Everything a phase needs besides the model: loaded databases, their
/// splits, and the precomputed (frozen) motion features.
pub struct TrainContext {
    pub registry: Registry,
    pub splits: BTreeMap<String, SplitAssignment>,
    pub motion_cache: MotionCache,
}

impl TrainContext {
    /// Split every database with the given seed and precompute motion
    /// features for all video/A-V samples.
    pub fn new(registry: Registry, state: &ModelState, split_seed: u64) -> Result<Self> {
        let mut splits = BTreeMap::new();
        for db in registry.databases() {
            splits.insert(db.spec.name.clone(), split_database(db, split_seed)?);
        }
        let mut motion_cache = MotionCache::new();
        for db in registry.databases() {
            if !db.spec.modality.has_motion() {
                continue;
            }
            for s in &db.samples {
                let f = motion_feature_of(&state.config, &state.motion, &s.payload)?;
                motion_cache.insert((s.database.clone(), s.sample_id.clone()), f);
            }
        }
        Ok(Self {
            registry,
            splits,
            motion_cache,
        })
    }

    pub fn specs(&self) -> Vec<DatabaseSpec> {
        self.registry
            .databases()
            .map(|db| db.spec.clone())
            .collect()
    }

    pub fn train_ids(&self) -> BTreeMap<String, Vec<String>> {
        self.splits
            .iter()
            .map(|(k, v)| (k.clone(), v.train.clone()))
            .collect()
    }

    fn samples_of<'a>(&'a self, db: &str, ids: &[String]) -> Result<Vec<&'a MediaSample>> {
        let database = self.registry.get(db)?;
        ids.iter()
            .map(|id| {
                database
                    .sample(id)
                    .ok_or_else(|| QaError::InvalidInput(format!("unknown sample id `{id}`")))
            })
            .collect()
    }
}

/// Materialize every configured data source into a registry.
pub fn load_databases(config: &RunConfig) -> Result<Registry> {
    let mut registry = Registry::new();
    for source in &config.databases {
        let db: Database = match source {
            DataSource::Synthetic {
                modality,
                n_samples,
                seed,
                config: synth,
            } => generate_synthetic_database(*modality, *n_samples, synth, *seed)?,
            DataSource::Manifest { path } => load_manifest(path)?,
        };
        registry.register(db)?;
    }
    if registry.is_empty() {
        return Err(QaError::InvalidInput("run config lists no databases".into()));
    }
    Ok(registry)
}

/// Loss used by a phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PhaseLoss {
    Combined,
    SrccSoft,
    /// LRS baseline: MSE on linearly rescaled MOS.
    MseRescaled,
}

fn rescale_to_common(mos: f64, spec: &DatabaseSpec) -> f64 {
    1.0 + 4.0 * (mos - spec.mos_range.lo) / spec.mos_range.width()
}

/// Run `epochs` scheduled epochs of one phase; returns the state with the
/// best mean validation SRCC.
fn run_phase(
    mut state: ModelState,
    ctx: &TrainContext,
    pcfg: &PhaseConfig,
    factor: usize,
    loss_kind: PhaseLoss,
    run_seed: u64,
    log: &mut MetricsLog,
) -> Result<ModelState> {
    let phase = state.phase;
    let specs = ctx.specs();
    let train_ids = ctx.train_ids();
    let trainable_prefix: Option<&str> = match phase {
        Phase::Step3 => Some("head."),
        _ => None,
    };
    let mut opt = Adam::new(pcfg.learning_rate);
    let phase_seed = derive_seed(run_seed, &format!("train/{phase:?}"));

    let mut best: Option<(f64, ModelState)> = None;
    for epoch in 0..pcfg.epochs {
        let schedule = build_schedule(
            &specs,
            &train_ids,
            pcfg.batch_size,
            factor,
            phase_seed,
            epoch,
        )?;
        let mut loss_sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for draw in &schedule.draws {
            let spec = specs
                .iter()
                .find(|s| s.name == draw.database)
                .expect("scheduled database is registered");
            let samples = ctx.samples_of(&draw.database, &draw.sample_ids)?;
            let targets: Vec<f64> = match loss_kind {
                PhaseLoss::MseRescaled => samples
                    .iter()
                    .map(|s| rescale_to_common(s.mos, spec))
                    .collect(),
                _ => samples.iter().map(|s| s.mos).collect(),
            };
            if loss_kind == PhaseLoss::SrccSoft
                && targets.iter().all(|&t| t == targets[0])
            {
                log::warn!(
                    "skipping constant-MOS batch from `{}` (SRCC undefined)",
                    draw.database
                );
                continue;
            }

            let g = Graph::new();
            let bound = Bound::bind(&g, &state.params);
            let mut rows = Vec::with_capacity(samples.len());
            for s in &samples {
                let score = forward_graph(&bound, &state, s, Some(&ctx.motion_cache), None)?;
                rows.push(g.reshape(score, &[1]));
            }
            let scores = g.concat(0, &rows);
            let loss = match loss_kind {
                PhaseLoss::Combined => combined_loss_graph(&g, scores, &targets),
                PhaseLoss::SrccSoft => {
                    srcc_soft_loss_graph(&g, scores, &targets, DEFAULT_SRCC_TAU)?
                }
                PhaseLoss::MseRescaled => {
                    let sv = g.leaf(crate::autograd::Arr::from_shape_vec(
                        ndarray::IxDyn(&[targets.len()]),
                        targets.clone(),
                    )
                    .unwrap());
                    let d = g.sub(scores, sv);
                    g.mean_all(g.mul(d, d))
                }
            };
            let grads = g.backward(loss);
            let mut named = bound.gradients(&grads);
            if let Some(prefix) = trainable_prefix {
                named.retain(|k, _| k.starts_with(prefix));
            }
            opt.step(&mut state.params, &named);

            let e = loss_sums.entry(draw.database.clone()).or_insert((0.0, 0));
            e.0 += g.scalar_value(loss);
            e.1 += 1;
        }
        for (db, (sum, n)) in &loss_sums {
            log.push(LogRecord {
                phase,
                epoch,
                database: db.clone(),
                metric: "train_loss".into(),
                value: sum / (*n).max(1) as f64,
            })?;
        }

        // Validation: SRCC of predictions per database; selection by mean.
        let mut mean_srcc = 0.0;
        let mut n_dbs = 0;
        for spec in &specs {
            let split = &ctx.splits[&spec.name];
            let samples = ctx.samples_of(&spec.name, &split.val)?;
            let mut preds = Vec::with_capacity(samples.len());
            let mut mos = Vec::with_capacity(samples.len());
            for s in samples {
                preds.push(forward(&state, s, Some(&ctx.motion_cache), None)?);
                mos.push(s.mos);
            }
            let v = if preds.len() >= 2 {
                srcc_exact(&preds, &mos)?
            } else {
                0.0
            };
            log.push(LogRecord {
                phase,
                epoch,
                database: spec.name.clone(),
                metric: "val_srcc".into(),
                value: v,
            })?;
            mean_srcc += v;
            n_dbs += 1;
        }
        mean_srcc /= n_dbs as f64;
        log.push(LogRecord {
            phase,
            epoch,
            database: "*".into(),
            metric: "mean_val_srcc".into(),
            value: mean_srcc,
        })?;
        if best.as_ref().map_or(true, |(b, _)| mean_srcc > *b) {
            best = Some((mean_srcc, state.clone()));
        }
    }
    Ok(best.map(|(_, s)| s).unwrap_or(state))
}

/// Step 1: database-specific heads, combined loss, absolute MOS targets.
pub fn run_step1(
    state: ModelState,
    ctx: &TrainContext,
    config: &RunConfig,
    log: &mut MetricsLog,
) -> Result<ModelState> {
    if state.phase != Phase::Step1 {
        return Err(QaError::InvalidInput("state is not in step 1".into()));
    }
    run_phase(
        state,
        ctx,
        &config.step1,
        config.effective_factor(Phase::Step1),
        PhaseLoss::Combined,
        config.seed,
        log,
    )
}

/// Step 2: merge to modality heads, then soft-SRCC training of everything
/// except the frozen motion extractor.
pub fn run_step2(
    state: ModelState,
    ctx: &TrainContext,
    config: &RunConfig,
    log: &mut MetricsLog,
) -> Result<ModelState> {
    let merged = state.merge_heads(config.seed)?;
    run_phase(
        merged,
        ctx,
        &config.step2,
        config.effective_factor(Phase::Step2),
        PhaseLoss::SrccSoft,
        config.seed,
        log,
    )
}

/// Step 3: extractors frozen, heads only, soft-SRCC objective.
pub fn run_step3(
    mut state: ModelState,
    ctx: &TrainContext,
    config: &RunConfig,
    log: &mut MetricsLog,
) -> Result<ModelState> {
    if state.phase != Phase::Step2 {
        return Err(QaError::InvalidInput(
            "step 3 expects the step-2 checkpoint".into(),
        ));
    }
    state.phase = Phase::Step3;
    run_phase(
        state,
        ctx,
        &config.step3,
        config.effective_factor(Phase::Step3),
        PhaseLoss::SrccSoft,
        config.seed,
        log,
    )
}

/// LRS baseline: one extended phase (sum of the three epoch budgets) with
/// database-specific heads and MSE on linearly rescaled MOS.
pub fn run_lrs_baseline(
    state: ModelState,
    ctx: &TrainContext,
    config: &RunConfig,
    log: &mut MetricsLog,
) -> Result<ModelState> {
    let pcfg = PhaseConfig {
        epochs: config.step1.epochs + config.step2.epochs + config.step3.epochs,
        ..config.step1.clone()
    };
    run_phase(
        state,
        ctx,
        &pcfg,
        config.effective_factor(Phase::Step1),
        PhaseLoss::MseRescaled,
        config.seed,
        log,
    )
}

fn ckpt_path(run_dir: &Path, name: &str) -> PathBuf {
    run_dir.join(format!("{name}.ckpt.json"))
}

/// The full pipeline with per-step checkpointing. A step whose checkpoint
/// already exists (with a matching config hash) is skipped, so interrupted
/// runs resume at step boundaries.
pub fn run_full_pipeline(config: &RunConfig, run_dir: &Path) -> Result<ModelState> {
    std::fs::create_dir_all(run_dir)?;
    config.save(&run_dir.join("run_config.json"))?;
    let mut log = MetricsLog::at_file(&run_dir.join("metrics.jsonl"))?;

    let registry = load_databases(config)?;
    let specs: Vec<DatabaseSpec> = registry.databases().map(|d| d.spec.clone()).collect();
    let init = ModelState::init_step1(
        config.model.clone(),
        &specs,
        derive_seed(config.seed, "init"),
    )?;
    let ctx = TrainContext::new(registry, &init, config.seed)?;

    if config.strategy == Strategy::Lrs {
        let final_path = ckpt_path(run_dir, "final");
        if final_path.exists() {
            return load_checkpoint(&final_path, &config.model);
        }
        let state = run_lrs_baseline(init, &ctx, config, &mut log)?;
        save_checkpoint(&state, &final_path)?;
        return Ok(state);
    }

    let s1_path = ckpt_path(run_dir, "step1");
    let s1 = if s1_path.exists() {
        load_checkpoint(&s1_path, &config.model)?
    } else {
        let s = run_step1(init, &ctx, config, &mut log)?;
        save_checkpoint(&s, &s1_path)?;
        s
    };

    let s2_path = ckpt_path(run_dir, "step2");
    let s2 = if s2_path.exists() {
        load_checkpoint(&s2_path, &config.model)?
    } else {
        let s = run_step2(s1, &ctx, config, &mut log)?;
        save_checkpoint(&s, &s2_path)?;
        s
    };

    let final_path = ckpt_path(run_dir, "final");
    let s3 = if final_path.exists() {
        load_checkpoint(&final_path, &config.model)?
    } else {
        let s = run_step3(s2, &ctx, config, &mut log)?;
        save_checkpoint(&s, &final_path)?;
        s
    };
    Ok(s3)
}
