//! Geometric preprocessing for the spatial and motion branches.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{QaError, Result};

/// Preprocessing geometry. Defaults follow the evaluation protocol
/// (short side 520, 384×384 crop, 224×224 motion frames); toy runs shrink
/// them through the run config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeomConfig {
    pub resize_short: usize,
    pub crop: usize,
    pub motion_size: usize,
}

impl Default for GeomConfig {
    fn default() -> Self {
        Self {
            resize_short: 520,
            crop: 384,
            motion_size: 224,
        }
    }
}

/// Bilinear resize of a `(C, H, W)` frame.
pub fn bilinear_resize(frame: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    Array3::from_shape_fn((c, out_h, out_w), |(ci, oy, ox)| {
        let sy = ((oy as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).clamp(0.0, h as f64 - 1.0);
        let sx = ((ox as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).clamp(0.0, w as f64 - 1.0);
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (dy, dx) = (sy - y0 as f64, sx - x0 as f64);
        frame[[ci, y0, x0]] * (1.0 - dy) * (1.0 - dx)
            + frame[[ci, y1, x0]] * dy * (1.0 - dx)
            + frame[[ci, y0, x1]] * (1.0 - dy) * dx
            + frame[[ci, y1, x1]] * dy * dx
    })
}

/// Rescale so the shortest side equals `resize_short` (long side rounded to
/// nearest), then center-crop `crop × crop`. Channels pass through.
pub fn preprocess_image(frame: &Array3<f64>, cfg: &GeomConfig) -> Result<Array3<f64>> {
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    if h == 0 || w == 0 {
        return Err(QaError::InvalidInput("empty frame".into()));
    }
    let short = h.min(w);
    let resized = if short == cfg.resize_short {
        frame.clone()
    } else {
        let scale = cfg.resize_short as f64 / short as f64;
        let (oh, ow) = if h <= w {
            (cfg.resize_short, (w as f64 * scale).round() as usize)
        } else {
            ((h as f64 * scale).round() as usize, cfg.resize_short)
        };
        bilinear_resize(frame, oh, ow)
    };
    let (rh, rw) = (resized.shape()[1], resized.shape()[2]);
    if rh < cfg.crop || rw < cfg.crop {
        return Err(QaError::InvalidInput(format!(
            "frame {rh}×{rw} smaller than crop {0}×{0}",
            cfg.crop
        )));
    }
    let (y0, x0) = ((rh - cfg.crop) / 2, (rw - cfg.crop) / 2);
    Ok(resized
        .slice(ndarray::s![.., y0..y0 + cfg.crop, x0..x0 + cfg.crop])
        .to_owned())
}

/// Resize every frame of a clip to `motion_size × motion_size` (no crop,
/// aspect not preserved). Temporal length unchanged.
pub fn preprocess_motion_clip(frames: &[Array3<f64>], cfg: &GeomConfig) -> Result<Vec<Array3<f64>>> {
    if frames.is_empty() {
        return Err(QaError::InvalidInput("empty clip".into()));
    }
    Ok(frames
        .iter()
        .map(|f| {
            if f.shape()[1] == cfg.motion_size && f.shape()[2] == cfg.motion_size {
                f.clone()
            } else {
                bilinear_resize(f, cfg.motion_size, cfg.motion_size)
            }
        })
        .collect())
}
