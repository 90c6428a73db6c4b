use super::{Bound, Mode, ParamId, ParamStore};
use crate::autodiff::{NormLayout, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Group { groups: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormConfig {
    pub kind: NormKind,
    pub momentum: f64,
    pub epsilon: f64,
}

impl NormConfig {
    pub fn batch() -> Self {
        Self {
            kind: NormKind::Batch,
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }

    pub fn group(groups: usize) -> Self {
        Self {
            kind: NormKind::Group { groups },
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }
}

/// Batch statistics observed by a training-mode [`BatchNorm2d`] forward,
/// to be folded into its running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate {
    pub mean: Vec<f64>,
    /// Unbiased batch variance.
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, cfg: NormConfig) -> Self {
        let gamma = store.add(format!("{name}.weight"), Tensor::full(vec![channels], 1.0));
        let beta = store.add(format!("{name}.bias"), Tensor::zeros(vec![channels]));
        Self {
            gamma,
            beta,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: cfg.momentum,
            epsilon: cfg.epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, mode: Mode) -> Result<(Var<'g>, Option<BnUpdate>)> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.channels() {
            return Err(Error::shape(
                "batch_norm",
                format!("input {shape:?} for {} channels", self.channels()),
            ));
        }
        let g = x.graph();
        match mode {
            Mode::Train => {
                let (xhat, mean, var) = x.normalize(NormLayout::PerChannel, self.epsilon)?;
                let y = xhat.channel_affine(p.var(self.gamma), p.var(self.beta))?;
                let m = (shape[0] * shape[2] * shape[3]) as f64;
                let unbiased = if m > 1.0 {
                    var.iter().map(|v| v * m / (m - 1.0)).collect()
                } else {
                    var
                };
                Ok((y, Some(BnUpdate { mean, var: unbiased })))
            }
            Mode::Eval => {
                let c = self.channels();
                let inv: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
                let shift: Vec<f64> = self.running_mean.iter().zip(&inv).map(|(m, k)| -m * k).collect();
                let scale = g.constant(vec![c], inv)?;
                let shift = g.constant(vec![c], shift)?;
                let xhat = x.channel_affine(scale, shift)?;
                Ok((xhat.channel_affine(p.var(self.gamma), p.var(self.beta))?, None))
            }
        }
    }

    pub fn apply_update(&mut self, u: &BnUpdate) {
        let k = self.momentum;
        for (r, m) in self.running_mean.iter_mut().zip(&u.mean) {
            *r = (1.0 - k) * *r + k * m;
        }
        for (r, v) in self.running_var.iter_mut().zip(&u.var) {
            *r = (1.0 - k) * *r + k * v;
        }
    }
}

/// Group normalization: statistics per (sample, channel group), identical in
/// training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
    pub channels: usize,
    pub epsilon: f64,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, cfg: NormConfig) -> Result<Self> {
        let NormKind::Group { groups } = cfg.kind else {
            return Err(Error::invalid("group norm needs a group configuration"));
        };
        if groups == 0 || !channels.is_multiple_of(groups) {
            return Err(Error::invalid(format!("{channels} channels not divisible into {groups} groups")));
        }
        let gamma = store.add(format!("{name}.weight"), Tensor::full(vec![channels], 1.0));
        let beta = store.add(format!("{name}.bias"), Tensor::zeros(vec![channels]));
        Ok(Self {
            gamma,
            beta,
            groups,
            channels,
            epsilon: cfg.epsilon,
        })
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::shape(
                "group_norm",
                format!("input {shape:?} for {} channels", self.channels),
            ));
        }
        let (xhat, _, _) = x.normalize(NormLayout::PerGroup(self.groups), self.epsilon)?;
        xhat.channel_affine(p.var(self.gamma), p.var(self.beta))
    }
}
