use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ParamTensor, ParamView};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Sigmoid,
}

/// Fully connected ReLU network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_width: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub output_width: usize,
    pub output_activation: Activation,
}

impl MlpSpec {
    /// `(fan_in, fan_out)` of every linear layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_width;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_width));
            fan_in = self.hidden_width;
        }
        dims.push((fan_in, self.output_width));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.output_width == 0 {
            return Err(Error::Config("MLP input and output widths must be positive".into()));
        }
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(Error::Config("MLP hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// An MLP with its parameters: per layer a `[out, in]` row-major weight block
/// followed by an `[out]` bias block.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<ParamTensor>,
    generation: u64,
}

/// Activations recorded by a batched forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    rows: usize,
    generation: u64,
    /// `acts[0]` is the input, `acts[i + 1]` the post-activation output of layer `i`.
    acts: Vec<Vec<f32>>,
}

impl MlpCache {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn output(&self) -> &[f32] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn input(&self) -> &[f32] {
        &self.acts[0]
    }
}

impl Mlp {
    pub fn zeros(name: &str, spec: MlpSpec) -> Self {
        let params = spec
            .layer_dims()
            .into_iter()
            .enumerate()
            .flat_map(|(i, (fan_in, fan_out))| {
                [
                    ParamTensor::zeros(format!("{name}.{i}.weight"), &[fan_out, fan_in]),
                    ParamTensor::zeros(format!("{name}.{i}.bias"), &[fan_out]),
                ]
            })
            .collect();
        Self {
            spec,
            params,
            generation: 0,
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn random<R: Rng + ?Sized>(name: &str, spec: MlpSpec, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(name, spec);
        for (layer, (fan_in, _)) in spec.layer_dims().into_iter().enumerate() {
            let s = 1.0 / (fan_in as f32).sqrt();
            for w in &mut mlp.params[2 * layer].values {
                *w = rng.random_range(-s..s);
            }
        }
        mlp
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Invalidate outstanding forward caches after a parameter update.
    pub fn mark_updated(&mut self) {
        self.generation += 1;
    }

    pub fn param_views(&mut self) -> impl Iterator<Item = ParamView<'_>> {
        self.params.iter_mut().map(|p| ParamView {
            name: &p.name,
            values: &mut p.values,
            grads: &mut p.grads,
        })
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(ParamTensor::zero_grad);
    }

    fn layer_count(&self) -> usize {
        self.params.len() / 2
    }

    /// Forward pass over `rows` inputs stored row-major in `input`.
    pub fn forward(&self, input: &[f32], rows: usize) -> Result<MlpCache> {
        let width = self.spec.input_width;
        if input.len() != rows * width {
            return Err(Error::Dimension {
                what: "mlp input",
                expected: rows * width,
                found: input.len(),
            });
        }
        let mut acts = Vec::with_capacity(self.layer_count() + 1);
        acts.push(input.to_vec());
        let dims = self.spec.layer_dims();
        for (layer, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let weight = &self.params[2 * layer].values;
            let bias = &self.params[2 * layer + 1].values;
            let mut out = Vec::with_capacity(rows * fan_out);
            for _ in 0..rows {
                out.extend_from_slice(bias);
            }
            let x = acts.last().unwrap();
            // out[rows × fan_out] += x[rows × fan_in] · Wᵀ
            gemm(
                rows, fan_in, fan_out, x, fan_in as isize, 1, weight, 1, fan_in as isize,
                1.0, &mut out, fan_out as isize, 1,
            );
            if layer + 1 < dims.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            } else if self.spec.output_activation == Activation::Sigmoid {
                out.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            acts.push(out);
        }
        Ok(MlpCache {
            rows,
            generation: self.generation,
            acts,
        })
    }

    pub fn forward_one(&self, input: &[f32]) -> Result<Vec<f32>> {
        Ok(self.forward(input, 1)?.acts.pop().unwrap())
    }

    /// Backward pass. Parameter gradients are accumulated; the returned vector
    /// is the gradient with respect to the cached input.
    pub fn backward(&mut self, cache: &MlpCache, d_output: &[f32]) -> Result<Vec<f32>> {
        if cache.generation != self.generation || cache.acts.len() != self.layer_count() + 1 {
            return Err(Error::StaleCache {
                cached: cache.generation,
                current: self.generation,
            });
        }
        let rows = cache.rows;
        let dims = self.spec.layer_dims();
        let expected = rows * self.spec.output_width;
        if d_output.len() != expected {
            return Err(Error::Dimension {
                what: "mlp upstream gradient",
                expected,
                found: d_output.len(),
            });
        }

        let mut delta = d_output.to_vec();
        if self.spec.output_activation == Activation::Sigmoid {
            for (d, &y) in delta.iter_mut().zip(cache.output()) {
                *d *= y * (1.0 - y);
            }
        }

        let mut scratch = Vec::new();
        for layer in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[layer];
            let x = &cache.acts[layer];

            // dW[fan_out × fan_in] = δᵀ · x
            scratch.clear();
            scratch.resize(fan_out * fan_in, 0.0);
            gemm(
                fan_out, rows, fan_in, &delta, 1, fan_out as isize, x, fan_in as isize, 1,
                0.0, &mut scratch, fan_in as isize, 1,
            );
            for (g, &s) in self.params[2 * layer].grads.iter_mut().zip(&scratch) {
                *g += s as f64;
            }
            let bias_grads = &mut self.params[2 * layer + 1].grads;
            for row in delta.chunks_exact(fan_out) {
                for (g, &d) in bias_grads.iter_mut().zip(row) {
                    *g += d as f64;
                }
            }

            // dx[rows × fan_in] = δ · W
            let mut dx = vec![0.0; rows * fan_in];
            gemm(
                rows, fan_out, fan_in, &delta, fan_out as isize, 1, &self.params[2 * layer].values,
                fan_in as isize, 1, 0.0, &mut dx, fan_in as isize, 1,
            );
            if layer > 0 {
                // ReLU: the post-activation is positive exactly where the pre-activation was.
                for (d, &a) in dx.iter_mut().zip(x) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = dx;
        }
        Ok(delta)
    }
}

#[inline(always)]
pub(crate) fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// `c = a·b + beta·c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserted lengths cover every index reachable through the
    // given dense strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}
