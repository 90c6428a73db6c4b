//! Leapfrog finite differences for the 2D scalar wave equation on a node grid
//! with per-edge conductances and reflecting (Neumann) borders.

use std::f64::consts::PI;

use super::raster::traverse;
use super::CrackSpec;
use crate::error::{Error, Result};

/// Plate discretisation. Nodes sit at integer coordinates `0..nx × 0..ny`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateSpec {
    pub nx: usize,
    pub ny: usize,
    /// Cells per step for the x-displacement field.
    pub speed: f64,
    pub damping: f64,
    pub steps: usize,
}

impl Default for PlateSpec {
    fn default() -> Self {
        Self {
            nx: 144,
            ny: 144,
            speed: 0.4,
            damping: 0.0,
            steps: 2000,
        }
    }
}

impl PlateSpec {
    pub fn validate(&self) -> Result<()> {
        check_speed(self.speed)?;
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::invalid(format!("plate {}×{} too small", self.nx, self.ny)));
        }
        if !(self.damping >= 0.0) {
            return Err(Error::invalid(format!("damping {} must be non-negative", self.damping)));
        }
        Ok(())
    }
}

fn check_speed(c: f64) -> Result<()> {
    if !(c > 0.0 && c <= std::f64::consts::FRAC_1_SQRT_2) {
        return Err(Error::invalid(format!("wave speed {c} violates the CFL bound 1/√2")));
    }
    Ok(())
}

/// Ricker pulse injected at the middle of the left edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Source {
    pub amplitude: f64,
    /// Peak frequency, cycles per step.
    pub frequency: f64,
}

impl Default for Source {
    fn default() -> Self {
        Self {
            amplitude: 1000.0,
            frequency: 0.03,
        }
    }
}

impl Source {
    pub fn delay(&self) -> f64 {
        1.5 / self.frequency
    }

    /// The pulse is cut after twice its delay, where it is below 1e-9 of its peak.
    pub fn switch_off(&self) -> usize {
        (2.0 * self.delay()).ceil() as usize
    }

    pub fn value(&self, step: usize) -> f64 {
        if step >= self.switch_off() {
            return 0.0;
        }
        let a = (PI * self.frequency * (step as f64 - self.delay())).powi(2);
        self.amplitude * (1.0 - 2.0 * a) * (-a).exp()
    }
}

pub struct Simulation {
    nx: usize,
    ny: usize,
    c2: f64,
    damping: f64,
    /// Conductance of edge `(x, y)–(x+1, y)` at `y·(nx−1) + x`.
    kx: Vec<f64>,
    /// Conductance of edge `(x, y)–(x, y+1)` at `y·nx + x`.
    ky: Vec<f64>,
    prev: Vec<f64>,
    cur: Vec<f64>,
    next: Vec<f64>,
    source: Source,
    source_nodes: Vec<usize>,
    step: usize,
}

/// Per-node transmission: the smallest `τ` of any crack through the node.
pub fn crack_transmission(nx: usize, ny: usize, cracks: &[CrackSpec]) -> Vec<f64> {
    let mut tau = vec![1.0f64; nx * ny];
    for c in cracks {
        let t = c.transmission();
        traverse(c.start, c.end, nx, ny, 1.0, |x, y| {
            let i = y * nx + x;
            tau[i] = tau[i].min(t);
        });
    }
    tau
}

impl Simulation {
    pub fn new(plate: &PlateSpec, speed: f64, cracks: &[CrackSpec], source: Source) -> Result<Self> {
        plate.validate()?;
        check_speed(speed)?;
        let (nx, ny) = (plate.nx, plate.ny);
        let tau = crack_transmission(nx, ny, cracks);
        let mut kx = vec![1.0; (nx - 1) * ny];
        let mut ky = vec![1.0; nx * (ny - 1)];
        for y in 0..ny {
            for x in 0..nx {
                let i = y * nx + x;
                if x + 1 < nx {
                    kx[y * (nx - 1) + x] = tau[i].min(tau[i + 1]);
                }
                if y + 1 < ny {
                    ky[i] = tau[i].min(tau[i + nx]);
                }
            }
        }
        let source_nodes = if ny % 2 == 0 {
            vec![(ny / 2 - 1) * nx, (ny / 2) * nx]
        } else {
            vec![(ny / 2) * nx]
        };
        Ok(Self {
            nx,
            ny,
            c2: speed * speed,
            damping: plate.damping,
            kx,
            ky,
            prev: vec![0.0; nx * ny],
            cur: vec![0.0; nx * ny],
            next: vec![0.0; nx * ny],
            source,
            source_nodes,
            step: 0,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn field(&self) -> &[f64] {
        &self.cur
    }

    /// Steps taken so far.
    pub fn time(&self) -> usize {
        self.step
    }

    fn laplacian(&self, u: &[f64], i: usize, x: usize, y: usize) -> f64 {
        let nx = self.nx;
        let mut l = 0.0;
        if x > 0 {
            l += self.kx[y * (nx - 1) + x - 1] * (u[i - 1] - u[i]);
        }
        if x + 1 < nx {
            l += self.kx[y * (nx - 1) + x] * (u[i + 1] - u[i]);
        }
        if y > 0 {
            l += self.ky[i - nx] * (u[i - nx] - u[i]);
        }
        if y + 1 < self.ny {
            l += self.ky[i] * (u[i + nx] - u[i]);
        }
        l
    }

    /// `(1+γ)u⁺ = 2u − (1−γ)u⁻ + c²Lu + s`.
    pub fn step(&mut self) {
        let g = self.damping;
        let s = self.source.value(self.step) / self.source_nodes.len() as f64;
        let nx = self.nx;
        let mut next = std::mem::take(&mut self.next);
        for y in 0..self.ny {
            for x in 0..nx {
                let i = y * nx + x;
                let rhs = 2.0 * self.cur[i] - (1.0 - g) * self.prev[i] + self.c2 * self.laplacian(&self.cur, i, x, y);
                next[i] = rhs / (1.0 + g);
            }
        }
        if s != 0.0 {
            for &i in &self.source_nodes {
                next[i] += s / (1.0 + g);
            }
        }
        let old = std::mem::replace(&mut self.prev, std::mem::replace(&mut self.cur, next));
        self.next = old;
        self.step += 1;
    }

    /// Discrete energy between the last two levels,
    /// `½Σ(u − u⁻)² + ½c²Σκ(δu)(δu⁻)`, conserved exactly without damping.
    pub fn energy(&self) -> f64 {
        let (u, v) = (&self.cur, &self.prev);
        let nx = self.nx;
        let kinetic: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        let mut strain = 0.0;
        for y in 0..self.ny {
            for x in 0..nx {
                let i = y * nx + x;
                if x + 1 < nx {
                    strain += self.kx[y * (nx - 1) + x] * (u[i + 1] - u[i]) * (v[i + 1] - v[i]);
                }
                if y + 1 < self.ny {
                    strain += self.ky[i] * (u[i + nx] - u[i]) * (v[i + nx] - v[i]);
                }
            }
        }
        0.5 * kinetic + 0.5 * self.c2 * strain
    }
}
