//! `MCWV` dataset files and their JSON sidecars.
//!
//! Layout: `MCWV`, u32 version, u32 count, then per sample `2·2000·81` f32
//! readings (component, time, sensor), 1296 mask bytes, u16 crack count and
//! per crack f32 width (µm) plus f32 `x0 y0 x1 y1`. All little-endian.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_sample, CrackSpec, GenConfig, WaveSample, MASK_LEN, SENSORS, STEPS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MCWV";
const VERSION: u32 = 1;
const CHUNK: usize = 16;

/// Per-component standardisation applied to the stored readings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 2],
            std: [1.0; 2],
        }
    }

    pub fn apply(&self, input: &mut [f32]) {
        let half = input.len() / 2;
        for (c, part) in input.chunks_mut(half).enumerate() {
            for v in part {
                *v = ((*v as f64 - self.mean[c]) / self.std[c]) as f32;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrackMeta {
    pub width_um: f64,
    pub start: [f64; 2],
    pub end: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub index: u64,
    pub min_width_um: f64,
    pub crack_fraction: f64,
    pub cracks: Vec<CrackMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub count: usize,
    pub steps: usize,
    pub plate: [usize; 2],
    pub speed: f64,
    pub y_speed_ratio: f64,
    pub damping: f64,
    pub source_amplitude: f64,
    pub source_frequency: f64,
    pub normalization: Normalization,
    pub mean_crack_fraction: f64,
    pub samples: Vec<SampleMeta>,
}

impl Sidecar {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// `<dataset>.json`.
pub fn sidecar_path(dataset: &Path) -> PathBuf {
    let mut s = dataset.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn meta(s: &WaveSample) -> SampleMeta {
    SampleMeta {
        index: s.index,
        min_width_um: s.min_width_um(),
        crack_fraction: s.crack_fraction(),
        cracks: s
            .cracks
            .iter()
            .map(|c| CrackMeta {
                width_um: c.width_um,
                start: [c.start.0, c.start.1],
                end: [c.end.0, c.end.1],
            })
            .collect(),
    }
}

fn write_header(w: &mut impl Write, count: usize) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(count as u32).to_le_bytes())
}

fn write_sample(w: &mut impl Write, s: &WaveSample) -> std::io::Result<()> {
    for v in &s.input {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&s.mask)?;
    w.write_all(&(s.cracks.len() as u16).to_le_bytes())?;
    for c in &s.cracks {
        for v in [c.width_um, c.start.0, c.start.1, c.end.0, c.end.1] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn check_sample(s: &WaveSample) -> Result<()> {
    if s.input.len() != 2 * STEPS * SENSORS || s.mask.len() != MASK_LEN {
        return Err(Error::invalid(format!(
            "sample {} has {} readings and {} mask cells, expected {} and {MASK_LEN}",
            s.index,
            s.input.len(),
            s.mask.len(),
            2 * STEPS * SENSORS
        )));
    }
    Ok(())
}

/// Writes samples as they are, without a sidecar.
pub fn write_dataset(path: &Path, samples: &[WaveSample]) -> Result<()> {
    samples.iter().try_for_each(check_sample)?;
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write_header(&mut w, samples.len()).map_err(io)?;
    for s in samples {
        write_sample(&mut w, s).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Simulates `n` samples, writes them standardised to `out` and the sidecar
/// next to it. Samples are generated in parallel and written in index order.
pub fn generate_dataset(cfg: &GenConfig, n: usize, seed: u64, out: &Path) -> Result<Sidecar> {
    if n == 0 {
        return Err(Error::invalid("dataset needs at least one sample"));
    }
    if cfg.plate.steps != STEPS {
        return Err(Error::invalid(format!("dataset files hold {STEPS} steps, plate has {}", cfg.plate.steps)));
    }
    let io = |e| Error::io(out, e);
    let mut w = BufWriter::new(File::create(out).map_err(io)?);
    write_header(&mut w, n).map_err(io)?;

    let mut offsets = Vec::with_capacity(n);
    let mut pos = 12u64;
    let mut sums = [0.0f64; 2];
    let mut squares = [0.0f64; 2];
    let mut metas = Vec::with_capacity(n);
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let chunk: Vec<WaveSample> = (start..end)
            .into_par_iter()
            .map(|i| generate_sample(cfg, seed, i as u64))
            .collect::<Result<_>>()?;
        for s in &chunk {
            let half = s.input.len() / 2;
            for (c, part) in s.input.chunks(half).enumerate() {
                for &v in part {
                    sums[c] += v as f64;
                    squares[c] += (v as f64) * (v as f64);
                }
            }
            offsets.push(pos);
            write_sample(&mut w, s).map_err(io)?;
            pos += (4 * s.input.len() + MASK_LEN + 2 + 20 * s.cracks.len()) as u64;
            metas.push(meta(s));
        }
    }
    w.flush().map_err(io)?;
    drop(w);

    let count = (n * STEPS * SENSORS) as f64;
    let mut norm = Normalization::identity();
    for c in 0..2 {
        let mean = sums[c] / count;
        let var = (squares[c] / count - mean * mean).max(0.0);
        norm.mean[c] = mean;
        norm.std[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }

    let mut f = OpenOptions::new().read(true).write(true).open(out).map_err(io)?;
    let mut buf = vec![0u8; 4 * 2 * STEPS * SENSORS];
    let mut vals = vec![0f32; 2 * STEPS * SENSORS];
    for &off in &offsets {
        f.seek(SeekFrom::Start(off)).map_err(io)?;
        f.read_exact(&mut buf).map_err(io)?;
        for (v, b) in vals.iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
        }
        norm.apply(&mut vals);
        for (v, b) in vals.iter().zip(buf.chunks_exact_mut(4)) {
            b.copy_from_slice(&v.to_le_bytes());
        }
        f.seek(SeekFrom::Start(off)).map_err(io)?;
        f.write_all(&buf).map_err(io)?;
    }
    f.flush().map_err(io)?;

    let mean_fraction = metas.iter().map(|m| m.crack_fraction).sum::<f64>() / n as f64;
    let sidecar = Sidecar {
        format: "MCWV".into(),
        version: VERSION,
        seed,
        count: n,
        steps: STEPS,
        plate: [cfg.plate.nx, cfg.plate.ny],
        speed: cfg.plate.speed,
        y_speed_ratio: cfg.y_speed_ratio,
        damping: cfg.plate.damping,
        source_amplitude: cfg.source.amplitude,
        source_frequency: cfg.source.frequency,
        normalization: norm,
        mean_crack_fraction: mean_fraction,
        samples: metas,
    };
    let side = sidecar_path(out);
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serialises");
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(sidecar)
}

/// Samples held in memory, optionally decimated in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub steps: usize,
    pub samples: Vec<WaveSample>,
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a dataset, keeping every `stride`-th time step.
pub fn read_dataset(path: &Path, stride: usize) -> Result<Dataset> {
    if stride == 0 || !STEPS.is_multiple_of(stride) {
        return Err(Error::invalid(format!("stride {stride} must divide {STEPS}")));
    }
    let fmt = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let io = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            fmt("truncated".into())
        } else {
            Error::io(path, e)
        }
    };
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(fmt("bad magic".into()));
    }
    let version = read_u32(&mut r).map_err(io)?;
    if version != VERSION {
        return Err(fmt(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r).map_err(io)? as usize;
    let mut samples = Vec::with_capacity(count);
    let mut buf = vec![0u8; 4 * 2 * STEPS * SENSORS];
    for index in 0..count {
        r.read_exact(&mut buf).map_err(io)?;
        let input: Vec<f32> = buf.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        let mut mask = vec![0u8; MASK_LEN];
        r.read_exact(&mut mask).map_err(io)?;
        if mask.iter().any(|&m| m > 1) {
            return Err(fmt(format!("sample {index}: mask values must be 0 or 1")));
        }
        let mut nb = [0u8; 2];
        r.read_exact(&mut nb).map_err(io)?;
        let mut cracks = Vec::new();
        for _ in 0..u16::from_le_bytes(nb) {
            let mut v = [0f64; 5];
            for x in &mut v {
                *x = f32::from_le_bytes(read_u32(&mut r).map_err(io)?.to_le_bytes()) as f64;
            }
            cracks.push(CrackSpec {
                width_um: v[0],
                start: (v[1], v[2]),
                end: (v[3], v[4]),
            });
        }
        let s = WaveSample {
            index: index as u64,
            input,
            mask,
            cracks,
        };
        samples.push(if stride == 1 { s } else { s.decimate(stride) });
    }
    if r.read(&mut [0u8; 1]).map_err(io)? != 0 {
        return Err(fmt("trailing bytes".into()));
    }
    Ok(Dataset {
        steps: STEPS / stride,
        samples,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Model input `[B, 2, steps, 81]` for the listed samples.
    pub fn batch_input(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * 2 * self.steps * SENSORS);
        for &i in indices {
            data.extend(self.samples[i].input.iter().map(|&v| v as f64));
        }
        Tensor::new(vec![indices.len(), 2, self.steps, SENSORS], data)
    }

    /// Flattened masks of the listed samples as 0/1 floats.
    pub fn batch_target(&self, indices: &[usize]) -> Vec<f64> {
        indices
            .iter()
            .flat_map(|&i| self.samples[i].mask.iter().map(|&m| f64::from(m)))
            .collect()
    }
}
