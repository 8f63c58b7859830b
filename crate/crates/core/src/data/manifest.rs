//! Manifest ingestion and serialization.
//!
//! A database on disk is a UTF-8 CSV manifest with header
//! `sample_id,modality,media_path,audio_path,mos`, one sidecar JSON next to
//! it declaring `name, modality, mos_range, steps_per_epoch`, and the media
//! files the rows point at. Paths are relative to the manifest directory.
//! MOS values are ingested as-is; no rescaling happens here.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{QaError, Result};

use super::tensor_io::{load_payload, save_payload};
use super::types::{Database, DatabaseSpec, MediaSample, Modality, MosRange};

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    name: String,
    modality: Modality,
    mos_range: MosRange,
    steps_per_epoch: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    sample_id: String,
    modality: String,
    media_path: String,
    audio_path: String,
    mos: f64,
}

fn sidecar_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("json")
}

/// Load one database from a manifest CSV plus its sidecar JSON.
pub fn load_manifest(manifest: &Path) -> Result<Database> {
    let sidecar: Sidecar = serde_json::from_reader(std::fs::File::open(
        sidecar_path(manifest),
    )?)?;
    let dir = manifest.parent().unwrap_or_else(|| Path::new("."));

    let mut reader = csv::Reader::from_path(manifest)?;
    let mut samples = Vec::new();
    let mut seen = BTreeSet::new();
    for row in reader.deserialize() {
        let row: ManifestRow = row?;
        if !seen.insert(row.sample_id.clone()) {
            return Err(QaError::DuplicateSample {
                database: sidecar.name.clone(),
                id: row.sample_id,
            });
        }
        let modality = Modality::parse(&row.modality)?;
        if !sidecar.mos_range.contains(row.mos) {
            return Err(QaError::MosOutOfRange {
                id: row.sample_id,
                mos: row.mos,
                lo: sidecar.mos_range.lo,
                hi: sidecar.mos_range.hi,
            });
        }
        let media_path = dir.join(&row.media_path);
        if !media_path.exists() {
            return Err(QaError::MissingMedia {
                id: row.sample_id,
                path: media_path.display().to_string(),
            });
        }
        let audio_path = if row.audio_path.is_empty() {
            None
        } else {
            let p = dir.join(&row.audio_path);
            if !p.exists() {
                return Err(QaError::MissingMedia {
                    id: row.sample_id,
                    path: p.display().to_string(),
                });
            }
            Some(p)
        };
        let payload = load_payload(modality, &media_path, audio_path.as_deref())?;
        samples.push(MediaSample {
            database: sidecar.name.clone(),
            sample_id: row.sample_id,
            modality,
            payload,
            mos: row.mos,
            latent_quality: None,
        });
    }

    let db = Database {
        spec: DatabaseSpec {
            name: sidecar.name,
            modality: sidecar.modality,
            mos_range: sidecar.mos_range,
            n_samples: samples.len(),
            steps_per_epoch: sidecar.steps_per_epoch,
        },
        samples,
    };
    db.validate()?;
    Ok(db)
}

/// Serialize a database to `dir`: media files, `<name>.csv`, `<name>.json`.
/// Returns the manifest path.
pub fn write_database(db: &Database, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let media_dir = dir.join(format!("{}_media", db.spec.name));
    std::fs::create_dir_all(&media_dir)?;

    let manifest = dir.join(format!("{}.csv", db.spec.name));
    let mut writer = csv::Writer::from_path(&manifest)?;
    for s in &db.samples {
        let media_rel = format!("{}_media/{}.tns", db.spec.name, s.sample_id);
        let audio_rel = if s.modality == Modality::Av {
            format!("{}_media/{}_audio.tns", db.spec.name, s.sample_id)
        } else {
            String::new()
        };
        let audio_abs = if audio_rel.is_empty() {
            None
        } else {
            Some(dir.join(&audio_rel))
        };
        save_payload(&s.payload, &dir.join(&media_rel), audio_abs.as_deref())?;
        writer.serialize(ManifestRow {
            sample_id: s.sample_id.clone(),
            modality: s.modality.as_str().to_string(),
            media_path: media_rel,
            audio_path: audio_rel,
            mos: s.mos,
        })?;
    }
    writer.flush()?;

    let sidecar = Sidecar {
        name: db.spec.name.clone(),
        modality: db.spec.modality,
        mos_range: db.spec.mos_range,
        steps_per_epoch: db.spec.steps_per_epoch,
    };
    serde_json::to_writer_pretty(
        std::fs::File::create(sidecar_path(&manifest))?,
        &sidecar,
    )?;
    Ok(manifest)
}
