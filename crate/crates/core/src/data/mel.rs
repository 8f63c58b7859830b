//! Log-power mel spectrograms and their overlapping segmentation for the
//! audio branch.
//!
//! Defaults: 16 kHz mono, 20 ms Hann window, 10 ms hop, 48 mel bands, log
//! floor 1e−10, segments 15 frames wide with 50% overlap. Waveforms at other
//! rates are linearly resampled at ingestion.

use ndarray::{Array1, Array2};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{QaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: f64,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_bands: usize,
    pub log_floor: f64,
    pub segment_width: usize,
    pub segment_overlap: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000.0,
            window_ms: 20.0,
            hop_ms: 10.0,
            n_bands: 48,
            log_floor: 1e-10,
            segment_width: 15,
            segment_overlap: 0.5,
        }
    }
}

impl MelConfig {
    pub fn window_len(&self) -> usize {
        (self.window_ms * self.sample_rate / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms * self.sample_rate / 1000.0).round() as usize
    }

    pub fn segment_hop(&self) -> usize {
        let overlap = (self.segment_width as f64 * self.segment_overlap).floor() as usize;
        (self.segment_width - overlap).max(1)
    }

    /// Center frequency (Hz) of mel band `k`; used by tests and tooling.
    pub fn band_center_hz(&self, k: usize) -> f64 {
        let lo = hz_to_mel(0.0);
        let hi = hz_to_mel(self.sample_rate / 2.0);
        let step = (hi - lo) / (self.n_bands + 1) as f64;
        mel_to_hz(lo + step * (k + 1) as f64)
    }
}

/// Frames × mel-bands log-power grid plus its overlapping segment windows.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
    pub frame_hop: f64,
    pub segments: Vec<Array2<f64>>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Linear resample to `target_rate`.
pub fn resample(wave: &Array1<f64>, rate: f64, target_rate: f64) -> Array1<f64> {
    if (rate - target_rate).abs() < f64::EPSILON {
        return wave.clone();
    }
    let n_out = ((wave.len() as f64) * target_rate / rate).round() as usize;
    let n_in = wave.len();
    Array1::from_shape_fn(n_out, |i| {
        let src = i as f64 * rate / target_rate;
        let i0 = (src.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        let frac = src - i0 as f64;
        wave[i0] * (1.0 - frac) + wave[i1] * frac
    })
}

fn mel_filterbank(cfg: &MelConfig, n_bins: usize) -> Array2<f64> {
    let lo = hz_to_mel(0.0);
    let hi = hz_to_mel(cfg.sample_rate / 2.0);
    let step = (hi - lo) / (cfg.n_bands + 1) as f64;
    let edges: Vec<f64> = (0..cfg.n_bands + 2)
        .map(|i| mel_to_hz(lo + step * i as f64))
        .collect();
    let bin_hz = cfg.sample_rate / cfg.window_len() as f64;
    Array2::from_shape_fn((cfg.n_bands, n_bins), |(k, b)| {
        let f = b as f64 * bin_hz;
        let (l, c, r) = (edges[k], edges[k + 1], edges[k + 2]);
        if f <= l || f >= r {
            0.0
        } else if f <= c {
            (f - l) / (c - l)
        } else {
            (r - f) / (r - c)
        }
    })
}

/// Compute the log-power mel grid with overlapping segment windows attached.
/// Frame count is `floor((L − window)/hop) + 1`; no padding or centering.
pub fn compute_mel_spectrogram(
    waveform: &Array1<f64>,
    sample_rate: f64,
    cfg: &MelConfig,
) -> Result<MelSpectrogram> {
    if sample_rate <= 0.0 {
        return Err(QaError::InvalidInput("nonpositive sample rate".into()));
    }
    let wave = resample(waveform, sample_rate, cfg.sample_rate);
    let win = cfg.window_len();
    let hop = cfg.hop_len();
    if wave.len() < win {
        return Err(QaError::InvalidInput(format!(
            "waveform of {} samples shorter than one {win}-sample analysis window",
            wave.len()
        )));
    }
    let n_frames = (wave.len() - win) / hop + 1;
    let n_bins = win / 2 + 1;

    let hann: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(win);

    let filters = mel_filterbank(cfg, n_bins);
    let mut values = Array2::zeros((n_frames, cfg.n_bands));
    let mut buf: Vec<Complex<f64>> = vec![Complex::default(); win];
    for t in 0..n_frames {
        for i in 0..win {
            buf[i] = Complex::new(wave[t * hop + i] * hann[i], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..cfg.n_bands {
            let mut power = 0.0;
            for b in 0..n_bins {
                power += buf[b].norm_sqr() * filters[[k, b]];
            }
            values[[t, k]] = power.max(cfg.log_floor).ln();
        }
    }

    let seg_hop = cfg.segment_hop();
    let mut segments = Vec::new();
    if n_frames >= cfg.segment_width {
        let n_segs = (n_frames - cfg.segment_width) / seg_hop + 1;
        for s in 0..n_segs {
            let start = s * seg_hop;
            segments.push(
                values
                    .slice(ndarray::s![start..start + cfg.segment_width, ..])
                    .to_owned(),
            );
        }
    }

    Ok(MelSpectrogram {
        values,
        frame_hop: cfg.hop_ms / 1000.0,
        segments,
    })
}
