//! Small explicit-gradient numerical core.
//!
//! Values are `f32`; gradient accumulators are `f64` so that batch reductions
//! and finite-difference checks stay meaningful.

mod adam;
mod encoding;
mod mlp;
mod schedule;

pub use adam::{Adam, AdamConfig, AdamState};
pub use encoding::{positional_encode, positional_width, sh_encode, SH_COEFFS};
pub use mlp::{Activation, Mlp, MlpCache, MlpSpec};
pub use schedule::LrSchedule;

/// A named block of trainable values with matching gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
    pub grads: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grads: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Uniform access to everything the optimizer updates: MLP blocks and
/// binarized grid latents alike.
pub struct ParamView<'a> {
    pub name: &'a str,
    pub values: &'a mut [f32],
    pub grads: &'a mut [f64],
}
