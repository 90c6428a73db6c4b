use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::nn::Activation;

/// Architecture hyperparameters.
///
/// The defaults reproduce the published network: 2×2000×81 input,
/// channels 16/32/64/128, temporal trace 500→250→125→62→31, a (31, 1)
/// bottleneck and a 9×9 → 36×36 decoder. [`ModelConfig::micro`] shrinks
/// only the temporal axis so tests stay fast while the spatial path is
/// untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub activation: Activation,
    pub se_reduction: usize,
    pub norm_groups: usize,
    pub input_channels: usize,
    pub temporal_len: usize,
    pub sensors: usize,
    pub output_len: usize,
    pub channel_schedule: [usize; 4],
    pub temporal_schedule: [usize; 5],
    pub bottleneck_kernel: (usize, usize),
    /// `temporal_len / 2000`.
    pub scale_factor: f64,
    pub init_seed: u64,
}

pub const FULL_TEMPORAL_LEN: usize = 2000;

/// Temporal lengths after the (4,1) input pool and each block's (2,1) pool.
pub fn pooling_trace(temporal_len: usize) -> [usize; 5] {
    let t1 = temporal_len / 4;
    [t1, t1 / 2, t1 / 4, t1 / 8, t1 / 16]
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_temporal_len(FULL_TEMPORAL_LEN)
    }
}

impl ModelConfig {
    pub fn with_temporal_len(temporal_len: usize) -> Self {
        let trace = pooling_trace(temporal_len);
        Self {
            activation: Activation::Gelu,
            se_reduction: 4,
            norm_groups: 4,
            input_channels: 2,
            temporal_len,
            sensors: 81,
            output_len: 1296,
            channel_schedule: [16, 32, 64, 128],
            temporal_schedule: trace,
            bottleneck_kernel: (trace[4], 1),
            scale_factor: temporal_len as f64 / FULL_TEMPORAL_LEN as f64,
            init_seed: 0,
        }
    }

    /// Temporal axis 80 (pool trace 20→10→5→2→1, bottleneck (1, 1)).
    pub fn micro() -> Self {
        Self::with_temporal_len(80)
    }

    pub fn with_activation(mut self, a: Activation) -> Self {
        self.activation = a;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    /// Side of the square sensor grid.
    pub fn grid_side(&self) -> usize {
        (self.sensors as f64).sqrt().round() as usize
    }

    /// Side of the square output mask.
    pub fn output_side(&self) -> usize {
        (self.output_len as f64).sqrt().round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.input_channels == 0 {
            return bad("input_channels must be positive".into());
        }
        if self.temporal_schedule != pooling_trace(self.temporal_len) {
            return bad(format!(
                "temporal schedule {:?} is not the pooling trace of {}",
                self.temporal_schedule, self.temporal_len
            ));
        }
        if self.temporal_schedule.contains(&0) {
            return bad(format!("temporal length {} too short for four pooling stages", self.temporal_len));
        }
        if self.bottleneck_kernel != (self.temporal_schedule[4], 1) {
            return bad(format!(
                "bottleneck kernel {:?} must span the final temporal length {}",
                self.bottleneck_kernel, self.temporal_schedule[4]
            ));
        }
        let g = self.grid_side();
        if g * g != self.sensors {
            return bad(format!("{} sensors do not form a square grid", self.sensors));
        }
        let o = self.output_side();
        if o * o != self.output_len || o != 4 * g {
            return bad(format!("output {} must be a (4·{g})² grid", self.output_len));
        }
        for &c in &self.channel_schedule {
            if self.se_reduction == 0 || c % self.se_reduction != 0 {
                return bad(format!("SE reduction {} must divide {c}", self.se_reduction));
            }
            if self.norm_groups == 0 || c % self.norm_groups != 0 {
                return bad(format!("{} groups must divide {c}", self.norm_groups));
            }
        }
        if let Activation::Elu { alpha } = self.activation {
            if alpha <= 0.0 {
                return bad(format!("ELU alpha must be positive, got {alpha}"));
            }
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 6] = [
        "activation",
        "elu_alpha",
        "se_reduction",
        "norm_groups",
        "temporal_len",
        "init_seed",
    ];

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("activation", self.activation);
        if let Activation::Elu { alpha } = self.activation {
            m.set("elu_alpha", alpha);
        }
        m.set("se_reduction", self.se_reduction);
        m.set("norm_groups", self.norm_groups);
        m.set("temporal_len", self.temporal_len);
        m.set("init_seed", self.init_seed);
        m
    }

    /// Reads the model keys of `m`, ignoring any others.
    pub fn from_kv(m: &KvMap) -> Result<Self> {
        let mut cfg = Self::with_temporal_len(m.parsed("temporal_len")?.unwrap_or(FULL_TEMPORAL_LEN));
        if let Some(a) = m.parsed::<Activation>("activation")? {
            cfg.activation = a;
        }
        if let Some(alpha) = m.parsed::<f64>("elu_alpha")? {
            match cfg.activation {
                Activation::Elu { .. } => cfg.activation = Activation::Elu { alpha },
                _ => return Err(Error::invalid("elu_alpha given for a non-ELU activation")),
            }
        }
        if let Some(r) = m.parsed("se_reduction")? {
            cfg.se_reduction = r;
        }
        if let Some(g) = m.parsed("norm_groups")? {
            cfg.norm_groups = g;
        }
        if let Some(s) = m.parsed("init_seed")? {
            cfg.init_seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
