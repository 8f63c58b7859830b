//! Evaluation harness: SRCC/PLCC, the 7:1:2 × 10-repeat protocol, and
//! cross-database (zero-shot) evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{split_database, Registry};
use crate::error::{QaError, Result};
use crate::model::{forward, ModelState};
use crate::objectives::srcc_exact;
use crate::params::derive_seed;
use crate::train::{run_full_pipeline, TrainContext};

/// SRCC/PLCC of one scored sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub srcc: f64,
    pub plcc: f64,
    pub n: usize,
}

/// One evaluation row: a database scored under one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub database: String,
    pub repeat: usize,
    pub seed: u64,
    pub metrics: MetricPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Arithmetic means over repeats, per database.
    pub means: BTreeMap<String, MetricPair>,
    pub config_hash: String,
    pub checkpoint: String,
}

impl EvalReport {
    fn with_means(
        rows: Vec<EvalRow>,
        config_hash: String,
        checkpoint: String,
    ) -> Self {
        let mut acc: BTreeMap<String, (f64, f64, usize, usize)> = BTreeMap::new();
        for r in &rows {
            let e = acc.entry(r.database.clone()).or_insert((0.0, 0.0, 0, 0));
            e.0 += r.metrics.srcc;
            e.1 += r.metrics.plcc;
            e.2 += r.metrics.n;
            e.3 += 1;
        }
        let means = acc
            .into_iter()
            .map(|(db, (s, p, n, k))| {
                (
                    db,
                    MetricPair {
                        srcc: s / k as f64,
                        plcc: p / k as f64,
                        n: n / k,
                    },
                )
            })
            .collect();
        Self {
            rows,
            means,
            config_hash,
            checkpoint,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va.sqrt() * vb.sqrt())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// 4-parameter monotone logistic `f(x) = (β1−β2)/(1+exp(−(x−β3)/|β4|)) + β2`
/// least-squares fitted by Nelder–Mead; returns the mapped predictions.
fn fit_logistic_map(o: &[f64], s: &[f64]) -> Vec<f64> {
    let f = |beta: &[f64], x: f64| {
        let denom = 1.0 + (-(x - beta[2]) / beta[3].abs().max(1e-12)).exp();
        (beta[0] - beta[1]) / denom + beta[1]
    };
    let sse = |beta: &[f64]| -> f64 {
        o.iter()
            .zip(s)
            .map(|(&x, &y)| (f(beta, x) - y).powi(2))
            .sum()
    };

    let s_max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s_min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let o_mean = o.iter().sum::<f64>() / o.len() as f64;
    let o_std = (o.iter().map(|x| (x - o_mean).powi(2)).sum::<f64>() / o.len() as f64)
        .sqrt()
        .max(1e-6);
    let mut simplex: Vec<Vec<f64>> = Vec::new();
    let x0 = vec![s_max, s_min, o_mean, o_std];
    simplex.push(x0.clone());
    for i in 0..4 {
        let mut v = x0.clone();
        v[i] += if v[i].abs() > 1e-8 { 0.1 * v[i] } else { 0.1 };
        simplex.push(v);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|b| sse(b)).collect();
    for _ in 0..400 {
        // Order simplex by objective.
        let mut idx: Vec<usize> = (0..simplex.len()).collect();
        idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        let ordered: Vec<Vec<f64>> = idx.iter().map(|&i| simplex[i].clone()).collect();
        let ovals: Vec<f64> = idx.iter().map(|&i| vals[i]).collect();
        simplex = ordered;
        vals = ovals;
        if (vals[4] - vals[0]).abs() < 1e-12 {
            break;
        }
        let centroid: Vec<f64> = (0..4)
            .map(|d| simplex[..4].iter().map(|v| v[d]).sum::<f64>() / 4.0)
            .collect();
        let reflect: Vec<f64> = (0..4)
            .map(|d| centroid[d] + (centroid[d] - simplex[4][d]))
            .collect();
        let fr = sse(&reflect);
        if fr < vals[0] {
            let expand: Vec<f64> = (0..4)
                .map(|d| centroid[d] + 2.0 * (centroid[d] - simplex[4][d]))
                .collect();
            let fe = sse(&expand);
            if fe < fr {
                simplex[4] = expand;
                vals[4] = fe;
            } else {
                simplex[4] = reflect;
                vals[4] = fr;
            }
        } else if fr < vals[3] {
            simplex[4] = reflect;
            vals[4] = fr;
        } else {
            let contract: Vec<f64> = (0..4)
                .map(|d| centroid[d] + 0.5 * (simplex[4][d] - centroid[d]))
                .collect();
            let fc = sse(&contract);
            if fc < vals[4] {
                simplex[4] = contract;
                vals[4] = fc;
            } else {
                for i in 1..5 {
                    for d in 0..4 {
                        simplex[i][d] = simplex[0][d] + 0.5 * (simplex[i][d] - simplex[0][d]);
                    }
                    vals[i] = sse(&simplex[i]);
                }
            }
        }
    }
    let best = &simplex[0];
    o.iter().map(|&x| f(best, x)).collect()
}

/// Pearson linear correlation, optionally after the 4-parameter logistic
/// mapping of predictions onto the MOS scale.
pub fn plcc(o: &[f64], s: &[f64], fit_logistic: bool) -> Result<f64> {
    if o.len() != s.len() {
        return Err(QaError::ShapeMismatch(format!(
            "prediction/ground-truth length mismatch: {} vs {}",
            o.len(),
            s.len()
        )));
    }
    if o.len() < 2 {
        return Err(QaError::DegenerateBatch("PLCC needs at least 2 samples".into()));
    }
    if is_constant(o) || is_constant(s) {
        log::warn!("PLCC on a constant vector is undefined; reporting 0");
        return Ok(0.0);
    }
    let mapped;
    let preds = if fit_logistic {
        mapped = fit_logistic_map(o, s);
        if is_constant(&mapped) {
            log::warn!("logistic fit collapsed to a constant; reporting 0");
            return Ok(0.0);
        }
        &mapped
    } else {
        o
    };
    Ok(pearson(preds, s))
}

fn metrics_of(preds: &[f64], mos: &[f64], fit_logistic: bool) -> Result<MetricPair> {
    Ok(MetricPair {
        srcc: srcc_exact(preds, mos)?,
        plcc: plcc(preds, mos, fit_logistic)?,
        n: preds.len(),
    })
}

/// Default repeat seeds derived from the run seed.
pub fn repeat_seeds(config: &RunConfig) -> Vec<u64> {
    (0..config.repeats)
        .map(|i| derive_seed(config.seed, &format!("repeat/{i}")))
        .collect()
}

/// Eval-only protocol: per repeat, resplit every database and score the
/// test split with the one fixed checkpoint.
pub fn evaluate(
    state: &ModelState,
    config: &RunConfig,
    registry: &Registry,
    seeds: &[u64],
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(QaError::InvalidInput("no repeat seeds".into()));
    }
    let ctx = TrainContext::new(registry.clone(), state, config.seed)?;
    let mut rows = Vec::new();
    for (repeat, &seed) in seeds.iter().enumerate() {
        for db in ctx.registry.databases() {
            let split = split_database(db, seed)?;
            let mut preds = Vec::with_capacity(split.test.len());
            let mut mos = Vec::with_capacity(split.test.len());
            for id in &split.test {
                let sample = db.sample(id).expect("split id exists");
                preds.push(forward(state, sample, Some(&ctx.motion_cache), None)?);
                mos.push(sample.mos);
            }
            rows.push(EvalRow {
                database: db.spec.name.clone(),
                repeat,
                seed,
                metrics: metrics_of(&preds, &mos, config.fit_logistic)?,
            });
        }
    }
    Ok(EvalReport::with_means(
        rows,
        state.config.hash(),
        state.params.checksum(),
    ))
}

/// Full retraining protocol: per repeat, retrain the pipeline with the
/// repeat's seed (splits included) and score its test split.
pub fn evaluate_retrain(
    config: &RunConfig,
    registry: &Registry,
    run_dir: &Path,
    seeds: &[u64],
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(QaError::InvalidInput("no repeat seeds".into()));
    }
    let mut rows = Vec::new();
    let mut last_checksum = String::new();
    for (repeat, &seed) in seeds.iter().enumerate() {
        let mut repeat_config = config.clone();
        repeat_config.seed = seed;
        let dir = run_dir.join(format!("repeat{repeat}"));
        let state = run_full_pipeline(&repeat_config, &dir)?;
        last_checksum = state.params.checksum();
        let ctx = TrainContext::new(registry.clone(), &state, seed)?;
        for db in ctx.registry.databases() {
            let split = &ctx.splits[&db.spec.name];
            let mut preds = Vec::with_capacity(split.test.len());
            let mut mos = Vec::with_capacity(split.test.len());
            for id in &split.test {
                let sample = db.sample(id).expect("split id exists");
                preds.push(forward(&state, sample, Some(&ctx.motion_cache), None)?);
                mos.push(sample.mos);
            }
            rows.push(EvalRow {
                database: db.spec.name.clone(),
                repeat,
                seed,
                metrics: metrics_of(&preds, &mos, config.fit_logistic)?,
            });
        }
    }
    Ok(EvalReport::with_means(
        rows,
        config.model.hash(),
        last_checksum,
    ))
}

/// Zero-shot scoring of held-out databases. Disjointness from the training
/// set is asserted by database name and by sample-id sets.
pub fn cross_evaluate(
    state: &ModelState,
    config: &RunConfig,
    training: &Registry,
    held_out: &Registry,
) -> Result<EvalReport> {
    let train_names: BTreeSet<String> = training.names().into_iter().collect();
    let train_ids: BTreeSet<(String, String)> = training
        .databases()
        .flat_map(|db| {
            db.samples
                .iter()
                .map(|s| (db.spec.name.clone(), s.sample_id.clone()))
        })
        .collect();
    let train_id_only: BTreeSet<&String> = train_ids.iter().map(|(_, id)| id).collect();
    for db in held_out.databases() {
        if train_names.contains(&db.spec.name) {
            return Err(QaError::CrossEvalOverlap(db.spec.name.clone()));
        }
        if db
            .samples
            .iter()
            .any(|s| train_id_only.contains(&s.sample_id))
        {
            return Err(QaError::CrossEvalOverlap(db.spec.name.clone()));
        }
    }

    let ctx = TrainContext::new(held_out.clone(), state, config.seed)?;
    let mut rows = Vec::new();
    for db in ctx.registry.databases() {
        let mut preds = Vec::with_capacity(db.samples.len());
        let mut mos = Vec::with_capacity(db.samples.len());
        for sample in &db.samples {
            preds.push(forward(state, sample, Some(&ctx.motion_cache), None)?);
            mos.push(sample.mos);
        }
        rows.push(EvalRow {
            database: db.spec.name.clone(),
            repeat: 0,
            seed: config.seed,
            metrics: metrics_of(&preds, &mos, config.fit_logistic)?,
        });
    }
    Ok(EvalReport::with_means(
        rows,
        state.config.hash(),
        state.params.checksum(),
    ))
}
