use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AutodiffError, NodeId, ParamId, ParamSet, Tape};
use crate::linalg::{Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }
}

/// Shape and activation of one dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            activation,
        }
    }
}

/// Builds the layer list for `widths[0] → widths[1] → … → widths[n]`, using
/// `hidden` on every layer but the last and `last` on the final one.
pub fn chain_specs(widths: &[usize], hidden: Activation, last: Activation) -> Vec<LayerSpec> {
    let n = widths.len().saturating_sub(1);
    (0..n)
        .map(|i| {
            let act = if i + 1 == n { last } else { hidden };
            LayerSpec::new(widths[i], widths[i + 1], act)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
struct DenseLayer {
    spec: LayerSpec,
    weight: ParamId,
    bias: ParamId,
}

/// A stack of dense layers whose weights live in a [`ParamSet`] under
/// `{prefix}.{i}.weight` (`out × in`) and `{prefix}.{i}.bias` (`1 × out`).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Output of [`forward_mlp`] with every post-activation value retained.
#[derive(Clone, Debug)]
pub struct MlpForward {
    pub output: Vector,
    /// `activations[i]` is the output of layer `i`; the last equals `output`.
    pub activations: Vec<Vector>,
}

impl Mlp {
    /// Registers zero-valued weights for `specs` in `params`.
    pub fn register(params: &mut ParamSet, prefix: &str, specs: &[LayerSpec]) -> Result<Self, AutodiffError> {
        check_chain(specs)?;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let weight = params.insert(format!("{prefix}.{i}.weight"), Matrix::zeros(spec.outputs, spec.inputs))?;
            let bias = params.insert(format!("{prefix}.{i}.bias"), Matrix::zeros(1, spec.outputs))?;
            layers.push(DenseLayer {
                spec: *spec,
                weight,
                bias,
            });
        }
        Ok(Self { layers })
    }

    /// Looks up existing weights for `specs`, checking their shapes.
    pub fn bind(params: &ParamSet, prefix: &str, specs: &[LayerSpec]) -> Result<Self, AutodiffError> {
        check_chain(specs)?;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let lookup = |suffix: &str, shape: (usize, usize)| {
                let name = format!("{prefix}.{i}.{suffix}");
                let id = params.id(&name).ok_or_else(|| AutodiffError::UnknownParam(name.clone()))?;
                let got = params.value(id).shape();
                if got != shape {
                    return Err(AutodiffError::ShapeMismatch {
                        name,
                        expected: shape,
                        got,
                    });
                }
                Ok(id)
            };
            layers.push(DenseLayer {
                spec: *spec,
                weight: lookup("weight", (spec.outputs, spec.inputs))?,
                bias: lookup("bias", (1, spec.outputs))?,
            });
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.spec.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.outputs)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }

    /// Uniform(−a, a) weights with `a = √(6 / (fan_in + fan_out))`, zero biases.
    pub fn init_glorot<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) {
        for layer in &self.layers {
            let a = (6.0 / (layer.spec.inputs + layer.spec.outputs) as f64).sqrt();
            params
                .value_mut(layer.weight)
                .as_mut_slice()
                .iter_mut()
                .for_each(|w| *w = rng.random_range(-a..a));
            params.value_mut(layer.bias).as_mut_slice().fill(0.0);
        }
    }

    /// Batched evaluation, one row per input.
    pub fn forward_batch(&self, params: &ParamSet, x: &Matrix) -> Result<Matrix, AutodiffError> {
        if x.cols() != self.input_dim() {
            return Err(AutodiffError::InputShape {
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        let mut h = x.clone();
        for layer in &self.layers {
            let w = params.value(layer.weight);
            let b = params.value(layer.bias).as_slice();
            let mut next = h.matmul_transposed(w).expect("checked chain");
            let act = layer.spec.activation;
            for i in 0..next.rows() {
                next.row_mut(i)
                    .iter_mut()
                    .zip(b)
                    .for_each(|(v, bias)| *v = act.apply(*v + bias));
            }
            h = next;
        }
        Ok(h)
    }

    /// Records the forward pass on `tape` and returns the output node.
    pub fn forward_tape(&self, tape: &mut Tape<'_>, x: NodeId) -> Result<NodeId, AutodiffError> {
        if tape.value(x).cols() != self.input_dim() {
            return Err(AutodiffError::InputShape {
                expected: self.input_dim(),
                got: tape.value(x).cols(),
            });
        }
        let mut h = x;
        for layer in &self.layers {
            let w = tape.param(layer.weight);
            let b = tape.param(layer.bias);
            let pre = tape.affine(h, w, b)?;
            h = match layer.spec.activation {
                Activation::Identity => pre,
                Activation::Tanh => tape.tanh(pre),
                Activation::Relu => tape.relu(pre),
            };
        }
        Ok(h)
    }
}

fn check_chain(specs: &[LayerSpec]) -> Result<(), AutodiffError> {
    if specs.is_empty() {
        return Err(AutodiffError::EmptyNetwork);
    }
    for pair in specs.windows(2) {
        if pair[0].outputs != pair[1].inputs {
            return Err(AutodiffError::InputShape {
                expected: pair[0].outputs,
                got: pair[1].inputs,
            });
        }
    }
    Ok(())
}

/// Evaluates `mlp` on a single input vector, keeping every layer's output.
pub fn forward_mlp(params: &ParamSet, mlp: &Mlp, input: &[f64]) -> Result<MlpForward, AutodiffError> {
    if input.len() != mlp.input_dim() {
        return Err(AutodiffError::InputShape {
            expected: mlp.input_dim(),
            got: input.len(),
        });
    }
    let mut activations = Vec::with_capacity(mlp.layers.len());
    let mut h: Vec<f64> = input.to_vec();
    for layer in &mlp.layers {
        let w = params.value(layer.weight);
        let b = params.value(layer.bias).as_slice();
        let pre = w.mat_vec(&h).expect("checked chain");
        h = pre
            .iter()
            .zip(b)
            .map(|(v, bias)| layer.spec.activation.apply(v + bias))
            .collect();
        activations.push(Vector::from(h.clone()));
    }
    if let Some(pos) = h.iter().position(|v| !v.is_finite()) {
        return Err(AutodiffError::NonFiniteOutput { index: pos });
    }
    Ok(MlpForward {
        output: Vector::from(h),
        activations,
    })
}
