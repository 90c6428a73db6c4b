use rand::Rng;

use super::{Bound, Linear, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    /// Embedding width: the channel count of the feature map.
    pub channels: usize,
}

impl AttentionConfig {
    pub fn scale(&self) -> f64 {
        1.0 / (self.channels as f64).sqrt()
    }
}

/// Single-head scaled dot-product self-attention along the temporal axis,
/// run independently for every (sample, sensor) column, with the residual
/// connection folded in: `y = x + softmax(QKᵀ/√C)·V`.
#[derive(Debug, Clone)]
pub struct TemporalAttention {
    pub cfg: AttentionConfig,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

impl TemporalAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, cfg: AttentionConfig) -> Self {
        let c = cfg.channels;
        Self {
            cfg,
            query: Linear::new(store, rng, &format!("{name}.query"), c, c),
            key: Linear::new(store, rng, &format!("{name}.key"), c, c),
            value: Linear::new(store, rng, &format!("{name}.value"), c, c),
        }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        let [b, c, t, s] = shape[..] else {
            return Err(Error::shape("temporal_attention", format!("expected [B, C, T, S], got {shape:?}")));
        };
        if c != self.cfg.channels {
            return Err(Error::shape(
                "temporal_attention",
                format!("input {shape:?} for {} channels", self.cfg.channels),
            ));
        }
        // [B, C, T, S] → [B·S, T, C]
        let tokens = x.permute(&[0, 3, 2, 1])?.reshape(&[b * s, t, c])?;
        let q = self.query.forward(p, tokens)?;
        let k = self.key.forward(p, tokens)?;
        let v = self.value.forward(p, tokens)?;
        let scores = q.bmm(k.permute(&[0, 2, 1])?)?.scale(self.cfg.scale());
        let attended = scores.softmax().bmm(v)?;
        let back = attended.reshape(&[b, s, t, c])?.permute(&[0, 3, 2, 1])?;
        x.add(back)
    }
}
