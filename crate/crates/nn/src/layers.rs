use candle_core::Tensor;

use crate::conv::{conv2d, ConvSpec};
use crate::error::Result;
use crate::params::{Init, InitKind};

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub spec: ConvSpec,
}

impl Conv2d {
    /// Fan-in scaled uniform initialization for weight and bias.
    pub fn new(init: &mut Init, c_in: usize, c_out: usize, k: usize, spec: ConvSpec, bias: bool) -> Result<Self> {
        let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
        let weight = init.param("weight", &[c_out, c_in, k, k], InitKind::Uniform(bound))?;
        let bias = if bias {
            Some(init.param("bias", &[c_out], InitKind::Uniform(bound))?)
        } else {
            None
        };
        Ok(Self { weight, bias, spec })
    }

    /// k×k, stride 1, "same" padding, with bias.
    pub fn same(init: &mut Init, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        Self::new(init, c_in, c_out, k, ConvSpec::same(k), true)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(conv2d(x, &self.weight, self.bias.as_ref(), self.spec)?)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }
}
