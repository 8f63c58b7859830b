//! On-disk payload format.
//!
//! Real codecs are out of scope, so media is stored in a compact binary
//! tensor container (`.tns`): magic, payload kind, media rate, dims, then
//! little-endian `f64` data. Synthetic and manifest-loaded databases share
//! the format, so downstream code cannot tell them apart.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array3};

use crate::error::{QaError, Result};

use super::types::Payload;

const MAGIC: &[u8; 8] = b"UNQATNS1";

const KIND_IMAGE: u8 = 0;
const KIND_VIDEO: u8 = 1;
const KIND_AUDIO: u8 = 2;

fn write_tensor(w: &mut impl Write, dims: &[usize], data: &[f64]) -> Result<()> {
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in dims {
        w.write_all(&(*d as u64).to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let ndim = u32::from_le_bytes(b4) as usize;
    let mut dims = Vec::with_capacity(ndim);
    let mut b8 = [0u8; 8];
    for _ in 0..ndim {
        r.read_exact(&mut b8)?;
        dims.push(u64::from_le_bytes(b8) as usize);
    }
    let n: usize = dims.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    Ok((dims, data))
}

/// Write the visual track (image/video) or audio track of a payload.
/// A/V payloads are written as two files: frames to `path`, waveform to
/// `audio_path`.
pub fn save_payload(payload: &Payload, path: &Path, audio_path: Option<&Path>) -> Result<()> {
    match payload {
        Payload::Image { pixels } => {
            let mut w = BufWriter::new(File::create(path)?);
            w.write_all(MAGIC)?;
            w.write_all(&[KIND_IMAGE])?;
            w.write_all(&0f64.to_le_bytes())?;
            write_tensor(
                &mut w,
                pixels.shape(),
                pixels.as_slice().expect("contiguous"),
            )?;
        }
        Payload::Video { frames, frame_rate } => {
            write_frames(path, frames, *frame_rate)?;
        }
        Payload::Audio {
            waveform,
            sample_rate,
        } => {
            write_wave(path, waveform, *sample_rate)?;
        }
        Payload::Av {
            frames,
            frame_rate,
            waveform,
            sample_rate,
        } => {
            write_frames(path, frames, *frame_rate)?;
            let ap = audio_path.ok_or_else(|| {
                QaError::InvalidInput("A/V payload needs an audio path".into())
            })?;
            write_wave(ap, waveform, *sample_rate)?;
        }
    }
    Ok(())
}

fn write_frames(path: &Path, frames: &[Array3<f64>], rate: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[KIND_VIDEO])?;
    w.write_all(&rate.to_le_bytes())?;
    let f0 = &frames[0];
    let dims = [frames.len(), f0.shape()[0], f0.shape()[1], f0.shape()[2]];
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for f in frames {
        for v in f.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn write_wave(path: &Path, wave: &Array1<f64>, rate: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[KIND_AUDIO])?;
    w.write_all(&rate.to_le_bytes())?;
    write_tensor(&mut w, wave.shape(), wave.as_slice().expect("contiguous"))?;
    Ok(())
}

enum RawMedia {
    Image(Array3<f64>),
    Video(Vec<Array3<f64>>, f64),
    Audio(Array1<f64>, f64),
}

fn load_raw(path: &Path) -> Result<RawMedia> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(QaError::Manifest(format!(
            "`{}` is not a recognized media container",
            path.display()
        )));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let rate = f64::from_le_bytes(b8);
    let (dims, data) = read_tensor(&mut r)?;
    match kind[0] {
        KIND_IMAGE => {
            let a = Array3::from_shape_vec((dims[0], dims[1], dims[2]), data)
                .map_err(|e| QaError::Manifest(e.to_string()))?;
            Ok(RawMedia::Image(a))
        }
        KIND_VIDEO => {
            let (t, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
            let per = c * h * w;
            let frames = (0..t)
                .map(|i| {
                    Array3::from_shape_vec((c, h, w), data[i * per..(i + 1) * per].to_vec())
                        .map_err(|e| QaError::Manifest(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RawMedia::Video(frames, rate))
        }
        KIND_AUDIO => Ok(RawMedia::Audio(Array1::from_vec(data), rate)),
        other => Err(QaError::Manifest(format!("unknown payload kind {other}"))),
    }
}

/// Load a payload for the given modality from its media (and optional audio)
/// file.
pub fn load_payload(
    modality: super::types::Modality,
    media_path: &Path,
    audio_path: Option<&Path>,
) -> Result<Payload> {
    use super::types::Modality;
    match modality {
        Modality::Image => match load_raw(media_path)? {
            RawMedia::Image(pixels) => Ok(Payload::Image { pixels }),
            _ => Err(QaError::Manifest(format!(
                "`{}` does not hold an image",
                media_path.display()
            ))),
        },
        Modality::Video => match load_raw(media_path)? {
            RawMedia::Video(frames, frame_rate) => Ok(Payload::Video { frames, frame_rate }),
            _ => Err(QaError::Manifest(format!(
                "`{}` does not hold a video",
                media_path.display()
            ))),
        },
        Modality::Audio => match load_raw(media_path)? {
            RawMedia::Audio(waveform, sample_rate) => Ok(Payload::Audio {
                waveform,
                sample_rate,
            }),
            _ => Err(QaError::Manifest(format!(
                "`{}` does not hold audio",
                media_path.display()
            ))),
        },
        Modality::Av => {
            let ap = audio_path.ok_or_else(|| {
                QaError::Manifest("A/V sample without an audio path".into())
            })?;
            let frames = match load_raw(media_path)? {
                RawMedia::Video(frames, rate) => (frames, rate),
                _ => {
                    return Err(QaError::Manifest(format!(
                        "`{}` does not hold a video",
                        media_path.display()
                    )))
                }
            };
            let wave = match load_raw(ap)? {
                RawMedia::Audio(w, rate) => (w, rate),
                _ => {
                    return Err(QaError::Manifest(format!(
                        "`{}` does not hold audio",
                        ap.display()
                    )))
                }
            };
            Ok(Payload::Av {
                frames: frames.0,
                frame_rate: frames.1,
                waveform: wave.0,
                sample_rate: wave.1,
            })
        }
    }
}
