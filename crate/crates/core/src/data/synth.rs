//! Synthetic database generator: monotone distortions driven by a latent
//! quality, with a hidden affine map from latent quality to MOS.

use ndarray::{Array1, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{QaError, Result};
use crate::params::derive_seed;

use super::types::{Database, DatabaseSpec, MediaSample, Modality, MosRange, Payload};

/// Distortion families applied with severity `1 − latent_quality`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distortion {
    /// Additive Gaussian noise (images, frames, audio).
    Noise,
    /// Box blur (images, frames).
    Blur,
    /// Global brightness shift (images, frames).
    Brightness,
    /// Amplitude clipping (audio).
    Clipping,
    /// Frame repeats breaking temporal smoothness (video, A/V).
    TemporalJitter,
}

impl Distortion {
    fn applies_to(&self, m: Modality) -> bool {
        match self {
            Distortion::Noise => true,
            Distortion::Blur | Distortion::Brightness => m.has_frames(),
            Distortion::Clipping => m.has_audio(),
            Distortion::TemporalJitter => m.has_motion(),
        }
    }
}

/// Generator configuration. Defaults are desk-scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub distortions: Vec<Distortion>,
    pub mos_range: MosRange,
    /// MOS noise standard deviation as a fraction of the MOS range width.
    /// Zero makes MOS a strictly increasing affine image of latent quality.
    pub mos_noise_frac: f64,
    pub image_size: usize,
    pub video_frames: usize,
    pub frame_rate: f64,
    pub audio_seconds: f64,
    pub sample_rate: f64,
    /// Overrides the default `ceil(0.7·n / 8)` sampling weight.
    pub steps_per_epoch: Option<usize>,
}

impl SynthConfig {
    pub fn named(name: &str, distortions: Vec<Distortion>) -> Self {
        Self {
            name: name.to_string(),
            distortions,
            mos_range: MosRange { lo: 1.0, hi: 5.0 },
            mos_noise_frac: 0.02,
            image_size: 32,
            video_frames: 8,
            frame_rate: 8.0,
            audio_seconds: 0.5,
            sample_rate: 16000.0,
            steps_per_epoch: None,
        }
    }
}

/// Generate one synthetic database. Deterministic in `(modality, n_samples,
/// config, seed)`; distortion severity decreases strictly with the latent
/// quality drawn per sample.
pub fn generate_synthetic_database(
    modality: Modality,
    n_samples: usize,
    config: &SynthConfig,
    seed: u64,
) -> Result<Database> {
    if n_samples < 10 {
        return Err(QaError::DatabaseTooSmall {
            name: config.name.clone(),
            n: n_samples,
            min: 10,
        });
    }
    let applicable: Vec<Distortion> = config
        .distortions
        .iter()
        .cloned()
        .filter(|d| d.applies_to(modality))
        .collect();
    if applicable.is_empty() {
        return Err(QaError::InvalidInput(format!(
            "no distortion family in config applies to modality {modality:?}"
        )));
    }

    let w = config.mos_range.width();
    // Hidden affine map: clean MOS spans the middle 90% of the range, so the
    // configured MOS noise rarely needs clamping.
    let (a, b) = (0.9 * w, config.mos_range.lo + 0.05 * w);
    let noise = Normal::new(0.0, 1.0).unwrap();

    let mut samples = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            &format!("synth/{}/{}", config.name, i),
        ));
        let q: f64 = rng.gen_range(0.0..1.0);
        let severity = 1.0 - q;
        let payload = make_payload(modality, config, severity, &applicable, &mut rng);
        let mut mos = a * q + b;
        if config.mos_noise_frac > 0.0 {
            mos += noise.sample(&mut rng) * config.mos_noise_frac * w;
        }
        mos = mos.clamp(config.mos_range.lo, config.mos_range.hi);
        samples.push(MediaSample {
            database: config.name.clone(),
            sample_id: format!("{}_{i:05}", config.name),
            modality,
            payload,
            mos,
            latent_quality: Some(q),
        });
    }

    let steps = config
        .steps_per_epoch
        .unwrap_or_else(|| ((n_samples * 7).div_ceil(10 * 8)).max(1));
    let db = Database {
        spec: DatabaseSpec {
            name: config.name.clone(),
            modality,
            mos_range: config.mos_range,
            n_samples,
            steps_per_epoch: steps,
        },
        samples,
    };
    db.validate()?;
    Ok(db)
}

fn make_payload(
    modality: Modality,
    cfg: &SynthConfig,
    severity: f64,
    distortions: &[Distortion],
    rng: &mut ChaCha8Rng,
) -> Payload {
    match modality {
        Modality::Image => Payload::Image {
            pixels: make_image(cfg.image_size, severity, distortions, rng),
        },
        Modality::Video => {
            let frames = make_clip(cfg, severity, distortions, rng);
            Payload::Video {
                frames,
                frame_rate: cfg.frame_rate,
            }
        }
        Modality::Audio => Payload::Audio {
            waveform: make_audio(cfg, severity, distortions, rng),
            sample_rate: cfg.sample_rate,
        },
        Modality::Av => {
            let frames = make_clip(cfg, severity, distortions, rng);
            Payload::Av {
                frames,
                frame_rate: cfg.frame_rate,
                waveform: make_audio(cfg, severity, distortions, rng),
                sample_rate: cfg.sample_rate,
            }
        }
    }
}

/// Smooth base content: a coarse random grid bilinearly upsampled.
fn base_image(size: usize, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let coarse = 4usize;
    let grid: Vec<Vec<[f64; 3]>> = (0..coarse + 1)
        .map(|_| {
            (0..coarse + 1)
                .map(|_| {
                    [
                        rng.gen_range(0.2..0.8),
                        rng.gen_range(0.2..0.8),
                        rng.gen_range(0.2..0.8),
                    ]
                })
                .collect()
        })
        .collect();
    Array3::from_shape_fn((3, size, size), |(c, y, x)| {
        let fy = y as f64 / size as f64 * coarse as f64;
        let fx = x as f64 / size as f64 * coarse as f64;
        let (y0, x0) = (fy as usize, fx as usize);
        let (dy, dx) = (fy - y0 as f64, fx - x0 as f64);
        let g = &grid;
        g[y0][x0][c] * (1.0 - dy) * (1.0 - dx)
            + g[y0 + 1][x0][c] * dy * (1.0 - dx)
            + g[y0][x0 + 1][c] * (1.0 - dy) * dx
            + g[y0 + 1][x0 + 1][c] * dy * dx
    })
}

fn distort_frame(
    img: &mut Array3<f64>,
    severity: f64,
    distortions: &[Distortion],
    rng: &mut ChaCha8Rng,
) {
    let normal = Normal::new(0.0, 1.0).unwrap();
    for d in distortions {
        match d {
            Distortion::Noise => {
                let sigma = 0.35 * severity;
                for v in img.iter_mut() {
                    *v += normal.sample(rng) * sigma;
                }
            }
            Distortion::Blur => {
                let passes = (severity * 3.0).round() as usize;
                for _ in 0..passes {
                    box_blur(img);
                }
            }
            Distortion::Brightness => {
                let shift = 0.3 * severity * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                img.mapv_inplace(|v| v + shift);
            }
            _ => {}
        }
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
}

fn box_blur(img: &mut Array3<f64>) {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let src = img.clone();
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                let mut n = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                        if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                            acc += src[[ci, yy as usize, xx as usize]];
                            n += 1.0;
                        }
                    }
                }
                img[[ci, y, x]] = acc / n;
            }
        }
    }
}

fn make_image(
    size: usize,
    severity: f64,
    distortions: &[Distortion],
    rng: &mut ChaCha8Rng,
) -> Array3<f64> {
    let mut img = base_image(size, rng);
    distort_frame(&mut img, severity, distortions, rng);
    img
}

fn make_clip(
    cfg: &SynthConfig,
    severity: f64,
    distortions: &[Distortion],
    rng: &mut ChaCha8Rng,
) -> Vec<Array3<f64>> {
    let base = base_image(cfg.image_size, rng);
    let size = cfg.image_size;
    let mut frames: Vec<Array3<f64>> = (0..cfg.video_frames)
        .map(|t| {
            // Horizontal pan of the base pattern.
            let shift = t * 2 % size;
            let mut f = Array3::zeros((3, size, size));
            for c in 0..3 {
                for y in 0..size {
                    for x in 0..size {
                        f[[c, y, x]] = base[[c, y, (x + shift) % size]];
                    }
                }
            }
            distort_frame(&mut f, severity, distortions, rng);
            f
        })
        .collect();
    if distortions.contains(&Distortion::TemporalJitter) {
        for t in 1..frames.len() {
            if rng.gen_bool((0.8 * severity).clamp(0.0, 1.0)) {
                frames[t] = frames[t - 1].clone();
            }
        }
    }
    frames
}

fn make_audio(
    cfg: &SynthConfig,
    severity: f64,
    distortions: &[Distortion],
    rng: &mut ChaCha8Rng,
) -> Array1<f64> {
    let n = (cfg.audio_seconds * cfg.sample_rate) as usize;
    let f1 = rng.gen_range(200.0..1200.0);
    let f2 = rng.gen_range(1200.0..3500.0);
    let (p1, p2) = (rng.gen_range(0.0..6.28), rng.gen_range(0.0..6.28));
    let mut wave = Array1::from_shape_fn(n, |i| {
        let t = i as f64 / cfg.sample_rate;
        0.4 * (2.0 * std::f64::consts::PI * f1 * t + p1).sin()
            + 0.25 * (2.0 * std::f64::consts::PI * f2 * t + p2).sin()
    });
    let normal = Normal::new(0.0, 1.0).unwrap();
    for d in distortions {
        match d {
            Distortion::Noise => {
                let sigma = 0.5 * severity;
                for v in wave.iter_mut() {
                    *v += normal.sample(rng) * sigma;
                }
            }
            Distortion::Clipping => {
                let limit = (1.0 - 0.9 * severity) * 0.65;
                wave.mapv_inplace(|v| v.clamp(-limit, limit));
            }
            _ => {}
        }
    }
    wave
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::srcc_exact;

    #[test]
    fn latent_quality_drives_mos_rank() {
        let cfg = SynthConfig::named("img_a", vec![Distortion::Noise, Distortion::Blur]);
        let db = generate_synthetic_database(Modality::Image, 100, &cfg, 1).unwrap();
        assert_eq!(db.samples.len(), 100);
        for s in &db.samples {
            assert!(db.spec.mos_range.contains(s.mos));
        }
        let q: Vec<f64> = db.samples.iter().map(|s| s.latent_quality.unwrap()).collect();
        let mos: Vec<f64> = db.samples.iter().map(|s| s.mos).collect();
        // Independent rank-correlation oracle lives in objectives; the
        // generator itself never computes a correlation.
        assert!(srcc_exact(&q, &mos).unwrap() >= 0.95);
    }

    #[test]
    fn zero_noise_gives_exact_rank_recovery() {
        let mut cfg = SynthConfig::named("aud_a", vec![Distortion::Noise]);
        cfg.mos_noise_frac = 0.0;
        let db = generate_synthetic_database(Modality::Audio, 10, &cfg, 7).unwrap();
        let q: Vec<f64> = db.samples.iter().map(|s| s.latent_quality.unwrap()).collect();
        let mos: Vec<f64> = db.samples.iter().map(|s| s.mos).collect();
        assert_eq!(srcc_exact(&q, &mos).unwrap(), 1.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::named("vid_a", vec![Distortion::Noise, Distortion::TemporalJitter]);
        let a = generate_synthetic_database(Modality::Video, 12, &cfg, 3).unwrap();
        let b = generate_synthetic_database(Modality::Video, 12, &cfg, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_empty_or_inapplicable_config() {
        let cfg = SynthConfig::named("bad", vec![]);
        assert!(generate_synthetic_database(Modality::Image, 10, &cfg, 1).is_err());
        // Clipping is audio-only; an image database cannot use only it.
        let cfg = SynthConfig::named("bad2", vec![Distortion::Clipping]);
        assert!(generate_synthetic_database(Modality::Image, 10, &cfg, 1).is_err());
    }

    #[test]
    fn rejects_tiny_database() {
        let cfg = SynthConfig::named("small", vec![Distortion::Noise]);
        assert!(generate_synthetic_database(Modality::Image, 9, &cfg, 1).is_err());
    }

    #[test]
    fn av_payload_has_both_tracks() {
        let cfg = SynthConfig::named("av_a", vec![Distortion::Noise]);
        let db = generate_synthetic_database(Modality::Av, 10, &cfg, 5).unwrap();
        match &db.samples[0].payload {
            Payload::Av { frames, waveform, .. } => {
                assert!(!frames.is_empty());
                assert!(!waveform.is_empty());
            }
            other => panic!("expected A/V payload, got {other:?}"),
        }
    }
}
