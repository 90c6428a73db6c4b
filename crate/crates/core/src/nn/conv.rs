use rand::Rng;

use super::{kaiming_uniform, Bound, ParamId, ParamStore};
use crate::autodiff::Var;
use crate::error::Result;
use crate::tensor::Tensor;

/// Fully connected layer, `weight: [out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, fin: usize, fout: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), kaiming_uniform(rng, &[fout, fin], fin));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![fout]));
        Self { weight, bias }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        x.linear(p.var(self.weight), Some(p.var(self.bias)))
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Self {
        let fan_in = cin * kernel.0 * kernel.1;
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(rng, &[cout, cin, kernel.0, kernel.1], fan_in),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![cout]));
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        x.conv2d(p.var(self.weight), Some(p.var(self.bias)), self.stride, self.padding)
    }
}

/// Transposed convolution, `weight: [in, out, kh, kw]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Self {
        // each output pixel receives cin·kh·kw/(sh·sw) taps
        let fan_in = (cin * kernel.0 * kernel.1 / (stride.0 * stride.1)).max(1);
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(rng, &[cin, cout, kernel.0, kernel.1], fan_in),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![cout]));
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        x.conv_transpose2d(p.var(self.weight), Some(p.var(self.bias)), self.stride, self.padding)
    }
}
