//! The fixed layer zoo: linear maps, tanh residual blocks and per-row
//! standardization with a learned affine.
//!
//! Every kind has a forward pass and a hand-derived backward pass. Both are
//! written once over [`num_traits::Float`] so the gradient checker can run
//! the identical arithmetic in `f64`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;
use rand::Rng;

use crate::param::{Origin, ParamBlock};
use crate::tensor::Tensor;

/// Variance floor inside [`LayerKind::Norm`].
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerKind {
    /// `y = W x + b`, `W` stored `[out, in]`.
    Linear,
    /// `y = x + W2 tanh(W1 x + b1) + b2`, square weights.
    Residual,
    /// `y = gain * (x - mean) / sqrt(var + eps) + bias` over each row.
    Norm,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Linear => "linear",
            LayerKind::Residual => "residual",
            LayerKind::Norm => "norm",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "linear" => Some(LayerKind::Linear),
            "residual" => Some(LayerKind::Residual),
            "norm" => Some(LayerKind::Norm),
            _ => None,
        }
    }

    /// Names of the parameter slots, in storage order.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            LayerKind::Linear => &["w", "b"],
            LayerKind::Residual => &["w1", "b1", "w2", "b2"],
            LayerKind::Norm => &["gain", "bias"],
        }
    }

    /// Expected parameter shapes for the given widths, or `None` when the
    /// widths are invalid for this kind.
    pub fn param_shapes(self, input: usize, output: usize) -> Option<Vec<Vec<usize>>> {
        if input == 0 || output == 0 {
            return None;
        }
        match self {
            LayerKind::Linear => Some(vec![vec![output, input], vec![output]]),
            LayerKind::Residual if input == output => Some(vec![
                vec![input, input],
                vec![input],
                vec![input, input],
                vec![input],
            ]),
            LayerKind::Norm if input == output => Some(vec![vec![input], vec![input]]),
            _ => None,
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LayerError {
    #[error("{kind} layer {input}->{output}: input last extent is {actual}")]
    Input {
        kind: LayerKind,
        input: usize,
        output: usize,
        actual: usize,
    },
    #[error("{kind} layer {input}->{output}: upstream gradient shape {actual:?}, forward output {expected:?}")]
    Upstream {
        kind: LayerKind,
        input: usize,
        output: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("{kind} layer cannot map {input}->{output}")]
    Dims {
        kind: LayerKind,
        input: usize,
        output: usize,
    },
    #[error("{kind} layer {input}->{output}: parameter {slot} has shape {actual:?}, expected {expected:?}")]
    Param {
        kind: LayerKind,
        input: usize,
        output: usize,
        slot: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    kind: LayerKind,
    input: usize,
    output: usize,
    params: Vec<ParamBlock>,
}

/// Output of [`Layer::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub input: Tensor,
    /// `(slot, gradient)` for trainable slots only.
    pub params: Vec<(usize, Tensor)>,
}

impl Layer {
    pub fn from_params(
        kind: LayerKind,
        input: usize,
        output: usize,
        params: Vec<ParamBlock>,
    ) -> Result<Self, LayerError> {
        let shapes = kind
            .param_shapes(input, output)
            .ok_or(LayerError::Dims { kind, input, output })?;
        if shapes.len() != params.len() {
            return Err(LayerError::Dims { kind, input, output });
        }
        for (slot, (shape, p)) in shapes.iter().zip(&params).enumerate() {
            if p.tensor().shape() != shape.as_slice() {
                return Err(LayerError::Param {
                    kind,
                    input,
                    output,
                    slot,
                    expected: shape.clone(),
                    actual: p.tensor().shape().to_vec(),
                });
            }
        }
        Ok(Layer {
            kind,
            input,
            output,
            params,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn linear(input: usize, output: usize, origin: &Origin, rng: &mut impl Rng) -> Result<Self, LayerError> {
        let kind = LayerKind::Linear;
        kind.param_shapes(input, output)
            .ok_or(LayerError::Dims { kind, input, output })?;
        let params = vec![
            block(glorot(&[output, input], rng), origin, "w"),
            block(Tensor::zeros(&[output]), origin, "b"),
        ];
        Layer::from_params(kind, input, output, params)
    }

    /// With `zero_branch` the second linear starts at zero, so the block is
    /// the identity until trained.
    pub fn residual(width: usize, origin: &Origin, zero_branch: bool, rng: &mut impl Rng) -> Result<Self, LayerError> {
        let kind = LayerKind::Residual;
        kind.param_shapes(width, width).ok_or(LayerError::Dims {
            kind,
            input: width,
            output: width,
        })?;
        let w1 = glorot(&[width, width], rng);
        let w2 = if zero_branch {
            Tensor::zeros(&[width, width])
        } else {
            glorot(&[width, width], rng)
        };
        let params = vec![
            block(w1, origin, "w1"),
            block(Tensor::zeros(&[width]), origin, "b1"),
            block(w2, origin, "w2"),
            block(Tensor::zeros(&[width]), origin, "b2"),
        ];
        Layer::from_params(kind, width, width, params)
    }

    pub fn norm(width: usize, origin: &Origin) -> Result<Self, LayerError> {
        let kind = LayerKind::Norm;
        kind.param_shapes(width, width).ok_or(LayerError::Dims {
            kind,
            input: width,
            output: width,
        })?;
        let params = vec![
            block(Tensor::from_fn(&[width], |_| 1.0), origin, "gain"),
            block(Tensor::zeros(&[width]), origin, "bias"),
        ];
        Layer::from_params(kind, width, width, params)
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn output_width(&self) -> usize {
        self.output
    }

    pub fn params(&self) -> &[ParamBlock] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [ParamBlock] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(ParamBlock::size).sum()
    }

    /// Same blocks, all marked read-only.
    pub fn frozen(&self) -> Layer {
        Layer {
            params: self.params.iter().map(ParamBlock::frozen).collect(),
            ..self.clone()
        }
    }

    /// Trainable replica whose blocks are re-labelled under `origin`.
    pub fn tuned_copy(&self, origin: &Origin) -> Layer {
        let names = self.kind.param_names();
        Layer {
            params: self
                .params
                .iter()
                .zip(names)
                .map(|(p, name)| p.tuned_copy(child_origin(origin, name)))
                .collect(),
            ..self.clone()
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor, LayerError> {
        self.check_input(input)?;
        let params: Vec<&[f32]> = self.params.iter().map(|p| p.tensor().data()).collect();
        let out = kernel::forward(self.kind, self.input, self.output, &params, input.data());
        Ok(Tensor::new(self.output_shape(input), out).expect("kernel output length"))
    }

    pub fn backward(&self, input: &Tensor, upstream: &Tensor) -> Result<LayerGrads, LayerError> {
        self.check_input(input)?;
        let expected = self.output_shape(input);
        if upstream.shape() != expected.as_slice() {
            return Err(LayerError::Upstream {
                kind: self.kind,
                input: self.input,
                output: self.output,
                expected,
                actual: upstream.shape().to_vec(),
            });
        }
        let params: Vec<&[f32]> = self.params.iter().map(|p| p.tensor().data()).collect();
        let (dx, dparams) = kernel::backward(
            self.kind,
            self.input,
            self.output,
            &params,
            input.data(),
            upstream.data(),
        );
        let grads = dparams
            .into_iter()
            .zip(&self.params)
            .enumerate()
            .filter(|(_, (_, p))| p.is_trainable())
            .map(|(slot, (g, p))| {
                (slot, Tensor::new(p.tensor().shape().to_vec(), g).expect("grad length"))
            })
            .collect();
        Ok(LayerGrads {
            input: Tensor::new(input.shape().to_vec(), dx).expect("grad length"),
            params: grads,
        })
    }

    fn check_input(&self, input: &Tensor) -> Result<(), LayerError> {
        if input.shape().is_empty() || input.last_dim() != self.input {
            return Err(LayerError::Input {
                kind: self.kind,
                input: self.input,
                output: self.output,
                actual: input.last_dim(),
            });
        }
        Ok(())
    }

    fn output_shape(&self, input: &Tensor) -> Vec<usize> {
        let mut shape = input.shape().to_vec();
        *shape.last_mut().expect("checked rank") = self.output;
        shape
    }
}

pub(crate) fn child_origin(template: &Origin, name: &str) -> Origin {
    Origin {
        label: format!("{}.{}", template.label, name),
        ..template.clone()
    }
}

fn block(t: Tensor, origin: &Origin, name: &str) -> ParamBlock {
    ParamBlock::new(t, child_origin(origin, name), true)
}

fn glorot(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let (out, inp) = (shape[0], shape[1]);
    let limit = libm::sqrt(6.0 / (out + inp) as f64) as f32;
    Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
}

/// Precision-generic forward/backward arithmetic. Parameter slices follow
/// [`LayerKind::param_names`] order; activations are row-major `[rows, width]`.
pub(crate) mod kernel {
    use super::*;

    /// Transcendentals pinned to `libm`, so results do not depend on whether
    /// `num-traits` was built with `std`.
    pub(crate) trait Real: Float {
        fn tanh_(self) -> Self;
        fn sqrt_(self) -> Self;
    }

    impl Real for f32 {
        fn tanh_(self) -> f32 {
            libm::tanhf(self)
        }
        fn sqrt_(self) -> f32 {
            libm::sqrtf(self)
        }
    }

    impl Real for f64 {
        fn tanh_(self) -> f64 {
            libm::tanh(self)
        }
        fn sqrt_(self) -> f64 {
            libm::sqrt(self)
        }
    }

    fn c<T: Real>(v: f64) -> T {
        T::from(v).expect("representable constant")
    }

    fn affine<T: Real>(w: &[T], b: &[T], x: &[T], input: usize, output: usize) -> Vec<T> {
        let rows = x.len() / input;
        let mut y = Vec::with_capacity(rows * output);
        for r in 0..rows {
            let xr = &x[r * input..(r + 1) * input];
            for o in 0..output {
                let wo = &w[o * input..(o + 1) * input];
                let mut acc = b[o];
                for i in 0..input {
                    acc = acc + wo[i] * xr[i];
                }
                y.push(acc);
            }
        }
        y
    }

    /// Gradients of `y = W x + b`: returns `(dx, dW, db)`.
    fn affine_back<T: Real>(
        w: &[T],
        x: &[T],
        dy: &[T],
        input: usize,
        output: usize,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let rows = x.len() / input;
        let mut dx = vec![T::zero(); rows * input];
        let mut dw = vec![T::zero(); output * input];
        let mut db = vec![T::zero(); output];
        for r in 0..rows {
            let xr = &x[r * input..(r + 1) * input];
            let dxr = &mut dx[r * input..(r + 1) * input];
            for o in 0..output {
                let g = dy[r * output + o];
                db[o] = db[o] + g;
                let wo = &w[o * input..(o + 1) * input];
                let dwo = &mut dw[o * input..(o + 1) * input];
                for i in 0..input {
                    dwo[i] = dwo[i] + g * xr[i];
                    dxr[i] = dxr[i] + g * wo[i];
                }
            }
        }
        (dx, dw, db)
    }

    /// Per-row mean and `1 / sqrt(var + eps)`.
    fn row_stats<T: Real>(xr: &[T]) -> (T, T) {
        let n = c::<T>(xr.len() as f64);
        let mean = xr.iter().fold(T::zero(), |a, &v| a + v) / n;
        let var = xr.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
        (mean, T::one() / (var + c(NORM_EPS)).sqrt_())
    }

    pub(crate) fn forward<T: Real>(
        kind: LayerKind,
        input: usize,
        output: usize,
        p: &[&[T]],
        x: &[T],
    ) -> Vec<T> {
        match kind {
            LayerKind::Linear => affine(p[0], p[1], x, input, output),
            LayerKind::Residual => {
                let h = affine(p[0], p[1], x, input, input);
                let a: Vec<T> = h.iter().map(|v| v.tanh_()).collect();
                let mut y = affine(p[2], p[3], &a, input, input);
                for (yi, &xi) in y.iter_mut().zip(x) {
                    *yi = *yi + xi;
                }
                y
            }
            LayerKind::Norm => {
                let (gain, bias) = (p[0], p[1]);
                let mut y = Vec::with_capacity(x.len());
                for xr in x.chunks_exact(input) {
                    let (mean, inv) = row_stats(xr);
                    for i in 0..input {
                        y.push(gain[i] * (xr[i] - mean) * inv + bias[i]);
                    }
                }
                y
            }
        }
    }

    /// Returns `(dx, [d param])` with one gradient per parameter slot.
    pub(crate) fn backward<T: Real>(
        kind: LayerKind,
        input: usize,
        output: usize,
        p: &[&[T]],
        x: &[T],
        dy: &[T],
    ) -> (Vec<T>, Vec<Vec<T>>) {
        match kind {
            LayerKind::Linear => {
                let (dx, dw, db) = affine_back(p[0], x, dy, input, output);
                (dx, vec![dw, db])
            }
            LayerKind::Residual => {
                let h = affine(p[0], p[1], x, input, input);
                let a: Vec<T> = h.iter().map(|v| v.tanh_()).collect();
                let (da, dw2, db2) = affine_back(p[2], &a, dy, input, input);
                let dh: Vec<T> = da
                    .iter()
                    .zip(&a)
                    .map(|(&g, &ai)| g * (T::one() - ai * ai))
                    .collect();
                let (mut dx, dw1, db1) = affine_back(p[0], x, &dh, input, input);
                for (d, &g) in dx.iter_mut().zip(dy) {
                    *d = *d + g;
                }
                (dx, vec![dw1, db1, dw2, db2])
            }
            LayerKind::Norm => {
                let gain = p[0];
                let n = c::<T>(input as f64);
                let mut dx = Vec::with_capacity(x.len());
                let mut dgain = vec![T::zero(); input];
                let mut dbias = vec![T::zero(); input];
                for (xr, dyr) in x.chunks_exact(input).zip(dy.chunks_exact(input)) {
                    let (mean, inv) = row_stats(xr);
                    let xhat: Vec<T> = xr.iter().map(|&v| (v - mean) * inv).collect();
                    let mut sum_g = T::zero();
                    let mut sum_gx = T::zero();
                    for i in 0..input {
                        dgain[i] = dgain[i] + dyr[i] * xhat[i];
                        dbias[i] = dbias[i] + dyr[i];
                        let g = dyr[i] * gain[i];
                        sum_g = sum_g + g;
                        sum_gx = sum_gx + g * xhat[i];
                    }
                    for i in 0..input {
                        let g = dyr[i] * gain[i];
                        dx.push(inv * (g - sum_g / n - xhat[i] * sum_gx / n));
                    }
                }
                (dx, vec![dgain, dbias])
            }
        }
    }
}
