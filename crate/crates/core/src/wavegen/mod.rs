//! Synthetic cracked-plate wave data: a scalar-wave simulator, a 9×9 sensor
//! grid, 36×36 crack masks and the `MCWV` dataset format.

mod io;
mod raster;
mod sim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use io::{
    generate_dataset, read_dataset, sidecar_path, write_dataset, CrackMeta, Dataset, Normalization, SampleMeta,
    Sidecar,
};
pub use raster::{clip_segment, traverse};
pub use sim::{crack_transmission, PlateSpec, Simulation, Source};

use crate::error::{Error, Result};

pub const SENSOR_GRID: usize = 9;
pub const SENSORS: usize = SENSOR_GRID * SENSOR_GRID;
pub const MASK_SIDE: usize = 36;
pub const MASK_LEN: usize = MASK_SIDE * MASK_SIDE;
pub const STEPS: usize = 2000;
/// Width scale of the transmission model `τ(w) = exp(−w / w₀)`.
pub const TAU_WIDTH_UM: f64 = 2.0;

/// A straight crack in plate coordinates (`[0, nx] × [0, ny]`, node `(i, j)`
/// owning the unit cell with corner `(i, j)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrackSpec {
    pub start: (f64, f64),
    pub end: (f64, f64),
    pub width_um: f64,
}

impl CrackSpec {
    pub fn transmission(&self) -> f64 {
        transmission(self.width_um)
    }
}

pub fn transmission(width_um: f64) -> f64 {
    (-width_um / TAU_WIDTH_UM).exp()
}

/// Sensor lattice: sensor `(r, k)` at node coordinates
/// `((k + ½)·nx/9, (r + ½)·ny/9)`, index `9r + k`, sampled bilinearly.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorGrid {
    nx: usize,
    ny: usize,
    positions: Vec<(f64, f64)>,
}

impl SensorGrid {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        let mut positions = Vec::with_capacity(SENSORS);
        for r in 0..SENSOR_GRID {
            for k in 0..SENSOR_GRID {
                let p = (
                    (k as f64 + 0.5) * nx as f64 / SENSOR_GRID as f64,
                    (r as f64 + 0.5) * ny as f64 / SENSOR_GRID as f64,
                );
                if p.0 > (nx - 1) as f64 || p.1 > (ny - 1) as f64 {
                    return Err(Error::invalid(format!("{nx}×{ny} plate cannot hold a 9×9 sensor grid")));
                }
                positions.push(p);
            }
        }
        Ok(Self { nx, ny, positions })
    }

    pub fn index(row: usize, col: usize) -> usize {
        SENSOR_GRID * row + col
    }

    pub fn positions(&self) -> &[(f64, f64)] {
        &self.positions
    }

    /// Writes the 81 sensor readings of `field` into `out`.
    pub fn sample_into(&self, field: &[f64], out: &mut [f64]) {
        let nx = self.nx;
        for (o, &(px, py)) in out.iter_mut().zip(&self.positions) {
            let (x0, y0) = (px.floor() as usize, py.floor() as usize);
            let (fx, fy) = (px - x0 as f64, py - y0 as f64);
            let (x1, y1) = ((x0 + 1).min(nx - 1), (y0 + 1).min(self.ny - 1));
            let at = |x: usize, y: usize| field[y * nx + x];
            *o = (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x1, y0)) + fy * ((1.0 - fx) * at(x0, y1) + fx * at(x1, y1));
        }
    }

    pub fn sample(&self, field: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; SENSORS];
        self.sample_into(field, &mut out);
        out
    }

    /// `[2, T, 81]` readings, component-major, from per-step fields.
    pub fn sample_sensors(&self, ux: &[Vec<f64>], uy: &[Vec<f64>]) -> Result<Vec<f64>> {
        if ux.len() != uy.len() {
            return Err(Error::invalid(format!("{} x-frames but {} y-frames", ux.len(), uy.len())));
        }
        let mut out = Vec::with_capacity(2 * ux.len() * SENSORS);
        for frames in [ux, uy] {
            for f in frames {
                if f.len() != self.nx * self.ny {
                    return Err(Error::invalid(format!("frame of {} values for a {}×{} plate", f.len(), self.nx, self.ny)));
                }
                out.extend(self.sample(f));
            }
        }
        Ok(out)
    }
}

/// 36×36 mask over a `width × height` plate: a cell is 1 when a crack
/// segment passes through it.
pub fn rasterize_mask(cracks: &[CrackSpec], width: f64, height: f64) -> Vec<u8> {
    let mut mask = vec![0u8; MASK_LEN];
    let (sx, sy) = (MASK_SIDE as f64 / width, MASK_SIDE as f64 / height);
    for c in cracks {
        let a = (c.start.0 * sx, c.start.1 * sy);
        let b = (c.end.0 * sx, c.end.1 * sy);
        traverse(a, b, MASK_SIDE, MASK_SIDE, 1.0, |x, y| mask[y * MASK_SIDE + x] = 1);
    }
    mask
}

/// Random crack placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrackSampler {
    /// Inclusive range of cracks per sample.
    pub count: (usize, usize),
    /// Segment length range in plate units, before clipping.
    pub length: (f64, f64),
    /// Width range; widths are log-uniform.
    pub width_um: (f64, f64),
    /// Crack centres keep this distance from the plate border.
    pub margin: f64,
}

impl Default for CrackSampler {
    fn default() -> Self {
        Self {
            count: (1, 3),
            length: (60.0, 200.0),
            width_um: (0.4, 12.8),
            margin: 12.0,
        }
    }
}

impl CrackSampler {
    /// Endpoints and widths are rounded to `f32` so samples survive the file
    /// format unchanged.
    pub fn sample<R: Rng>(&self, rng: &mut R, nx: usize, ny: usize) -> Vec<CrackSpec> {
        let (w, h) = (nx as f64, ny as f64);
        let n = rng.gen_range(self.count.0..=self.count.1);
        let r32 = |v: f64| v as f32 as f64;
        let inside = |p: (f64, f64)| (r32(p.0.clamp(0.0, w)), r32(p.1.clamp(0.0, h)));
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let cx = rng.gen_range(self.margin..w - self.margin);
            let cy = rng.gen_range(self.margin..h - self.margin);
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let len = rng.gen_range(self.length.0..=self.length.1);
            let (lw, hw) = (self.width_um.0.ln(), self.width_um.1.ln());
            let width = rng.gen_range(lw..=hw).exp();
            let (dx, dy) = (0.5 * len * theta.cos(), 0.5 * len * theta.sin());
            if let Some((a, b)) = clip_segment((cx - dx, cy - dy), (cx + dx, cy + dy), w, h) {
                out.push(CrackSpec {
                    start: inside(a),
                    end: inside(b),
                    width_um: r32(width),
                });
            }
        }
        out
    }
}

/// Everything that determines a generated sample besides its seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub plate: PlateSpec,
    pub source: Source,
    /// Speed of the y-displacement field relative to the x field.
    pub y_speed_ratio: f64,
    pub cracks: CrackSampler,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            plate: PlateSpec::default(),
            source: Source::default(),
            y_speed_ratio: 0.55,
            cracks: CrackSampler::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveSample {
    pub index: u64,
    /// `[2, steps, 81]`, component-major, then time, then sensor.
    pub input: Vec<f32>,
    pub mask: Vec<u8>,
    pub cracks: Vec<CrackSpec>,
}

impl WaveSample {
    pub fn steps(&self) -> usize {
        self.input.len() / (2 * SENSORS)
    }

    /// Width of the narrowest crack; infinite without cracks.
    pub fn min_width_um(&self) -> f64 {
        self.cracks.iter().map(|c| c.width_um).fold(f64::INFINITY, f64::min)
    }

    pub fn crack_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m != 0).count() as f64 / self.mask.len() as f64
    }

    /// Keeps every `stride`-th step starting at 0.
    pub fn decimate(&self, stride: usize) -> WaveSample {
        let t = self.steps();
        let mut input = Vec::with_capacity(2 * t.div_ceil(stride) * SENSORS);
        for comp in 0..2 {
            for step in (0..t).step_by(stride) {
                let off = (comp * t + step) * SENSORS;
                input.extend_from_slice(&self.input[off..off + SENSORS]);
            }
        }
        WaveSample {
            index: self.index,
            input,
            mask: self.mask.clone(),
            cracks: self.cracks.clone(),
        }
    }
}

/// Per-sample generator: `ChaCha8` seeded with the dataset seed, stream = index.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs both displacement fields and records the sensors after every step.
pub fn simulate_sensors(cfg: &GenConfig, cracks: &[CrackSpec]) -> Result<Vec<f64>> {
    let p = &cfg.plate;
    let grid = SensorGrid::new(p.nx, p.ny)?;
    let mut out = vec![0.0; 2 * p.steps * SENSORS];
    for (comp, speed) in [p.speed, p.speed * cfg.y_speed_ratio].into_iter().enumerate() {
        let mut sim = Simulation::new(p, speed, cracks, cfg.source)?;
        for t in 0..p.steps {
            sim.step();
            let off = (comp * p.steps + t) * SENSORS;
            grid.sample_into(sim.field(), &mut out[off..off + SENSORS]);
        }
    }
    Ok(out)
}

/// Raw (unstandardised) sample `index` of the dataset with seed `seed`.
pub fn generate_sample(cfg: &GenConfig, seed: u64, index: u64) -> Result<WaveSample> {
    let mut rng = sample_rng(seed, index);
    let (nx, ny) = (cfg.plate.nx, cfg.plate.ny);
    let cracks = cfg.cracks.sample(&mut rng, nx, ny);
    let mask = rasterize_mask(&cracks, nx as f64, ny as f64);
    let input = simulate_sensors(cfg, &cracks)?.into_iter().map(|v| v as f32).collect();
    Ok(WaveSample {
        index,
        input,
        mask,
        cracks,
    })
}
