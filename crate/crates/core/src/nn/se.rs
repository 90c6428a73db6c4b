use rand::Rng;

use super::{Activation, Bound, Linear, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeConfig {
    pub channels: usize,
    pub reduction: usize,
}

impl SeConfig {
    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }
}

/// Squeeze-and-excitation: global average pool, bottleneck MLP, sigmoid
/// gate applied per channel.
#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub cfg: SeConfig,
    pub fc1: Linear,
    pub fc2: Linear,
    pub activation: Activation,
}

impl SqueezeExcite {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cfg: SeConfig,
        activation: Activation,
    ) -> Result<Self> {
        if cfg.reduction == 0 || !cfg.channels.is_multiple_of(cfg.reduction) || cfg.hidden() == 0 {
            return Err(Error::invalid(format!(
                "SE reduction {} must divide {} channels",
                cfg.reduction, cfg.channels
            )));
        }
        let fc1 = Linear::new(store, rng, &format!("{name}.fc1"), cfg.channels, cfg.hidden());
        let fc2 = Linear::new(store, rng, &format!("{name}.fc2"), cfg.hidden(), cfg.channels);
        Ok(Self {
            cfg,
            fc1,
            fc2,
            activation,
        })
    }

    /// Per-sample channel gates in (0, 1), shape `[B, C]`.
    pub fn gates<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.cfg.channels {
            return Err(Error::shape(
                "se_module",
                format!("input {shape:?} for {} channels", self.cfg.channels),
            ));
        }
        let pooled = x.global_avg_pool()?;
        let h = self.activation.apply(self.fc1.forward(p, pooled)?);
        Ok(self.fc2.forward(p, h)?.sigmoid())
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let g = self.gates(p, x)?;
        x.channel_gate(g)
    }
}
