//! The segmentation network: four encoder blocks along the temporal axis, a
//! bottleneck that collapses time, and a transposed-convolution decoder that
//! lifts the 9×9 sensor grid to a 36×36 crack mask.

mod checkpoint;
mod config;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{pooling_trace, ModelConfig, FULL_TEMPORAL_LEN};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{
    Activation, AttentionConfig, BatchNorm2d, Bound, BnUpdate, Conv2d, ConvTranspose2d, GroupNorm, Mode,
    NormConfig, ParamStore, SeConfig, SqueezeExcite, TemporalAttention,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub enum LayerKind {
    MaxPool((usize, usize)),
    Conv(Conv2d),
    BatchNorm(BatchNorm2d),
    Activation(Activation),
    SqueezeExcite(SqueezeExcite),
    GroupNorm(GroupNorm),
    Attention(TemporalAttention),
    /// `[B, C, 1, S]` to `[B, C, √S, √S]`, sensor index `row·√S + col`.
    ToGrid(usize),
    ConvTranspose(ConvTranspose2d),
    Sigmoid,
    Flatten,
}

#[derive(Debug, Clone)]
pub struct Layer {
    /// Position in execution order; stable for a given architecture.
    pub id: usize,
    pub name: String,
    pub kind: LayerKind,
    /// Index into the shape trace this layer's output completes, if any.
    pub stage: Option<usize>,
}

/// Result of one forward pass.
pub struct Forward<'g> {
    pub output: Var<'g>,
    pub params: Bound<'g>,
    /// Input shape followed by the output shape of each stage.
    pub trace: Vec<Vec<usize>>,
    pub taps: BTreeMap<usize, Var<'g>>,
    /// `(layer id, update)` for every batch norm run in training mode.
    pub bn_updates: Vec<(usize, BnUpdate)>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layers: Vec<Layer>,
    head_id: usize,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
    layers: Vec<Layer>,
}

impl Builder<'_> {
    fn push(&mut self, name: String, kind: LayerKind, stage: Option<usize>) -> usize {
        let id = self.layers.len();
        self.layers.push(Layer { id, name, kind, stage });
        id
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: (usize, usize), pad: (usize, usize)) {
        let c = Conv2d::new(self.store, &mut self.rng, name, cin, cout, kernel, (1, 1), pad);
        self.push(name.to_string(), LayerKind::Conv(c), None);
    }

    fn bn(&mut self, name: &str, channels: usize, stage: Option<usize>) {
        let b = BatchNorm2d::new(self.store, name, channels, NormConfig::batch());
        self.push(name.to_string(), LayerKind::BatchNorm(b), stage);
    }
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(config.init_seed),
            layers: Vec::new(),
        };
        let act = config.activation;

        b.push("pool0".into(), LayerKind::MaxPool((4, 1)), Some(1));
        let mut cin = config.input_channels;
        for (k, &c) in config.channel_schedule.iter().enumerate() {
            let n = format!("block{}", k + 1);
            b.conv(&format!("{n}.conv1"), cin, c, (3, 1), (1, 0));
            b.bn(&format!("{n}.bn1"), c, None);
            b.push(format!("{n}.act1"), LayerKind::Activation(act), None);
            b.conv(&format!("{n}.conv2"), c, c, (3, 1), (1, 0));
            b.bn(&format!("{n}.bn2"), c, None);
            b.push(format!("{n}.act2"), LayerKind::Activation(act), None);
            let se_cfg = SeConfig {
                channels: c,
                reduction: config.se_reduction,
            };
            let se = SqueezeExcite::new(b.store, &mut b.rng, &format!("{n}.se"), se_cfg, act)?;
            b.push(format!("{n}.se"), LayerKind::SqueezeExcite(se), None);
            b.push(format!("{n}.pool"), LayerKind::MaxPool((2, 1)), None);
            let gn = GroupNorm::new(b.store, &format!("{n}.gn"), c, NormConfig::group(config.norm_groups))?;
            b.push(format!("{n}.gn"), LayerKind::GroupNorm(gn), None);
            let attn = TemporalAttention::new(b.store, &mut b.rng, &format!("{n}.attn"), AttentionConfig { channels: c });
            b.push(format!("{n}.attn"), LayerKind::Attention(attn), Some(k + 2));
            cin = c;
        }

        b.conv("bottleneck.conv", cin, cin, config.bottleneck_kernel, (0, 0));
        b.bn("bottleneck.bn", cin, None);
        b.push("bottleneck.act".into(), LayerKind::Activation(act), Some(6));
        b.push("to_grid".into(), LayerKind::ToGrid(config.grid_side()), Some(7));

        b.conv("decoder.reduce", cin, 16, (1, 1), (0, 0));
        b.layers.last_mut().expect("just pushed").stage = Some(8);
        for (i, (ci, co)) in [(16, 8), (8, 8)].into_iter().enumerate() {
            let name = format!("decoder.up{}", i + 1);
            let t = ConvTranspose2d::new(b.store, &mut b.rng, &name, ci, co, (2, 2), (2, 2), (0, 0));
            b.push(name, LayerKind::ConvTranspose(t), None);
            b.bn(&format!("decoder.bn{}", i + 1), co, Some(9 + i));
        }
        b.conv("head", 8, 1, (1, 1), (0, 0));
        let head_id = b.layers.len() - 1;
        b.push("sigmoid".into(), LayerKind::Sigmoid, Some(11));
        b.push("flatten".into(), LayerKind::Flatten, Some(12));

        let layers = b.layers;
        Ok(Self {
            config,
            params,
            layers,
            head_id,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_by_name(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Id of the last 1×1 convolution, whose output is the pre-sigmoid logit map.
    pub fn logits_layer(&self) -> usize {
        self.head_id
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Trainable scalars grouped by the first component of the parameter name.
    pub fn param_breakdown(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            let group = name.split('.').next().unwrap_or(name).to_string();
            match out.last_mut() {
                Some((g, n)) if *g == group => *n += t.numel(),
                _ => out.push((group, t.numel())),
            }
        }
        out
    }

    /// The shapes a correct forward pass produces for a batch of `batch`.
    pub fn expected_trace(&self, batch: usize) -> Vec<Vec<usize>> {
        let c = &self.config;
        let s = c.sensors;
        let g = c.grid_side();
        let mut t = vec![vec![batch, c.input_channels, c.temporal_len, s]];
        t.push(vec![batch, c.input_channels, c.temporal_schedule[0], s]);
        for k in 0..4 {
            t.push(vec![batch, c.channel_schedule[k], c.temporal_schedule[k + 1], s]);
        }
        let top = c.channel_schedule[3];
        t.push(vec![batch, top, 1, s]);
        t.push(vec![batch, top, g, g]);
        t.push(vec![batch, 16, g, g]);
        t.push(vec![batch, 8, 2 * g, 2 * g]);
        t.push(vec![batch, 8, 4 * g, 4 * g]);
        t.push(vec![batch, 1, 4 * g, 4 * g]);
        t.push(vec![batch, c.output_len]);
        t
    }

    fn run<'g>(&self, x: Var<'g>, params: Bound<'g>, mode: Mode, taps: &[usize]) -> Result<Forward<'g>> {
        if let Some(&bad) = taps.iter().find(|&&id| id >= self.layers.len()) {
            return Err(Error::UnknownLayer(bad));
        }
        let shape = x.shape();
        let c = &self.config;
        if shape.len() != 4 || shape[1] != c.input_channels || shape[2] != c.temporal_len || shape[3] != c.sensors {
            return Err(Error::shape(
                "model",
                format!(
                    "input {shape:?}, expected [B, {}, {}, {}]",
                    c.input_channels, c.temporal_len, c.sensors
                ),
            ));
        }
        let expected = self.expected_trace(shape[0]);
        let mut trace = vec![shape];
        let mut tapped = BTreeMap::new();
        let mut bn_updates = Vec::new();
        let mut h = x;
        for layer in &self.layers {
            h = match &layer.kind {
                LayerKind::MaxPool(k) => h.max_pool2d(*k)?,
                LayerKind::Conv(conv) => conv.forward(&params, h)?,
                LayerKind::BatchNorm(bn) => {
                    let (y, upd) = bn.forward(&params, h, mode)?;
                    if let Some(u) = upd {
                        bn_updates.push((layer.id, u));
                    }
                    y
                }
                LayerKind::Activation(a) => a.apply(h),
                LayerKind::SqueezeExcite(se) => se.forward(&params, h)?,
                LayerKind::GroupNorm(gn) => gn.forward(&params, h)?,
                LayerKind::Attention(at) => at.forward(&params, h)?,
                LayerKind::ToGrid(side) => {
                    let s = h.shape();
                    h.reshape(&[s[0], s[1], *side, *side])?
                }
                LayerKind::ConvTranspose(t) => t.forward(&params, h)?,
                LayerKind::Sigmoid => h.sigmoid(),
                LayerKind::Flatten => h.flatten()?,
            };
            if let Some(stage) = layer.stage {
                let actual = h.shape();
                if actual != expected[stage] {
                    return Err(Error::Trace {
                        stage,
                        layer: layer.name.clone(),
                        expected: expected[stage].clone(),
                        actual,
                    });
                }
                trace.push(actual);
            }
            if taps.contains(&layer.id) {
                tapped.insert(layer.id, h);
            }
        }
        Ok(Forward {
            output: h,
            params,
            trace,
            taps: tapped,
            bn_updates,
        })
    }

    /// Forward pass with parameters tracked for backpropagation.
    pub fn forward<'g>(&self, g: &'g Graph, x: Var<'g>, mode: Mode) -> Result<Forward<'g>> {
        self.run(x, self.params.bind(g, true), mode, &[])
    }

    /// Forward pass that also records the outputs of the listed layers.
    pub fn forward_with_taps<'g>(&self, g: &'g Graph, x: Var<'g>, mode: Mode, taps: &[usize]) -> Result<Forward<'g>> {
        self.run(x, self.params.bind(g, true), mode, taps)
    }

    /// Forward pass with caller-supplied parameter leaves, in store order.
    pub fn forward_with_params<'g>(&self, x: Var<'g>, params: Bound<'g>, mode: Mode) -> Result<Forward<'g>> {
        let store = self.params.tensors();
        if params.vars().len() != store.len() {
            return Err(Error::invalid(format!(
                "{} parameter leaves for {} parameters",
                params.vars().len(),
                store.len()
            )));
        }
        for ((v, t), name) in params.vars().iter().zip(store).zip(self.params.names()) {
            if v.shape() != t.shape() {
                return Err(Error::shape("model", format!("{name}: {:?} vs {:?}", v.shape(), t.shape())));
            }
        }
        self.run(x, params, mode, &[])
    }

    /// Evaluation-mode probabilities `[B, output_len]` without gradient tracking.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let xv = g.constant(x.shape().to_vec(), x.data().to_vec())?;
        Ok(self.run(xv, self.params.bind(&g, false), Mode::Eval, &[])?.output.to_tensor())
    }

    /// Evaluation-mode output plus the listed layers' activations, each
    /// flattened per sample to `[B, features]`.
    pub fn predict_with_taps(&self, x: &Tensor, ids: &[usize]) -> Result<(Tensor, BTreeMap<usize, Tensor>)> {
        let g = Graph::new();
        let xv = g.constant(x.shape().to_vec(), x.data().to_vec())?;
        let f = self.run(xv, self.params.bind(&g, false), Mode::Eval, ids)?;
        let mut taps = BTreeMap::new();
        for (id, v) in f.taps {
            let shape = v.shape();
            let b = shape[0];
            taps.insert(id, Tensor::new(vec![b, v.numel() / b], v.to_vec())?);
        }
        Ok((f.output.to_tensor(), taps))
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_bn_updates(&mut self, updates: &[(usize, BnUpdate)]) -> Result<()> {
        for (id, u) in updates {
            match self.layers.get_mut(*id).map(|l| &mut l.kind) {
                Some(LayerKind::BatchNorm(bn)) => bn.apply_update(u),
                Some(_) => return Err(Error::invalid(format!("layer {id} is not a batch norm"))),
                None => return Err(Error::UnknownLayer(*id)),
            }
        }
        Ok(())
    }

    fn batch_norms(&self) -> impl Iterator<Item = (&str, &BatchNorm2d)> {
        self.layers.iter().filter_map(|l| match &l.kind {
            LayerKind::BatchNorm(bn) => Some((l.name.as_str(), bn)),
            _ => None,
        })
    }

    fn batch_norm_mut(&mut self, name: &str) -> Option<&mut BatchNorm2d> {
        self.layers.iter_mut().find_map(|l| match &mut l.kind {
            LayerKind::BatchNorm(bn) if l.name == name => Some(bn),
            _ => None,
        })
    }
}
