use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{shape_err, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    LeakyRelu,
    Relu,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Norm {
    None,
    /// Per-channel standardisation over the columns of the call, followed
    /// by a learned scale and shift.
    Batch,
}

/// Forward-pass context: the tape, the parameter leaves bound on it, the
/// train/eval flag and the dropout stream.
pub struct Ctx<'a> {
    pub g: &'a mut Graph,
    params: &'a [Var],
    pub training: bool,
    pub rng: ChaCha8Rng,
}

impl<'a> Ctx<'a> {
    pub fn new(g: &'a mut Graph, params: &'a [Var], training: bool, rng: ChaCha8Rng) -> Self {
        Self { g, params, training, rng }
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.params[id.0]
    }
}

/// Records every parameter of `store` as a tracked leaf.
pub fn bind_params(g: &mut Graph, store: &ParamStore) -> Vec<Var> {
    store.values().iter().map(|t| g.leaf(t.clone())).collect()
}

/// Collects the gradients of bound parameters after a backward pass;
/// parameters that the loss does not reach get zeros.
pub fn collect_grads(g: &Graph, store: &ParamStore, bound: &[Var]) -> Vec<Tensor> {
    bound.iter().zip(store.values()).map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))).collect()
}

/// Kaiming-style uniform initialisation bound for a fan-in.
fn init_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt() * 3f64.sqrt()
}

/// One `out×in` linear map with optional bias, applied column-wise.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let b = init_bound(in_dim);
        let weight = store.add(format!("{name}.weight"), Tensor::uniform([out_dim, in_dim], -b, b, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros([out_dim, 1])));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn num_scalars(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let rows = cx.g.shape(x).first().copied().unwrap_or(0);
        if cx.g.shape(x).len() != 2 || rows != self.in_dim {
            return shape_err("linear", format!("expected {}×M input, got {:?}", self.in_dim, cx.g.shape(x)));
        }
        let y = cx.g.matmul(cx.p(self.weight), x)?;
        match self.bias {
            Some(b) => cx.g.add(y, cx.p(b)),
            None => Ok(y),
        }
    }
}

/// One layer of a shared MLP: linear map, optional normalisation, activation.
#[derive(Clone, Debug)]
pub struct Layer {
    pub linear: Linear,
    pub norm: Option<(ParamId, ParamId)>,
    pub activation: Activation,
}

/// Shared MLP: the same weights applied to every column of a `C_in×M`
/// input (every point, neighbour or curve step).
#[derive(Clone, Debug)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Layer-by-layer recipe for [`MlpParams::new`].
#[derive(Clone, Copy, Debug)]
pub struct MlpSpec<'d> {
    pub dims: &'d [usize],
    /// Activation after every hidden layer.
    pub hidden: Activation,
    /// Activation after the last layer.
    pub last: Activation,
    pub norm: Norm,
    pub bias: bool,
}

impl MlpParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: MlpSpec, rng: &mut R) -> Self {
        assert!(spec.dims.len() >= 2, "an MLP needs at least input and output dims");
        let n = spec.dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let lname = format!("{name}.{i}");
                let linear = Linear::new(store, &lname, spec.dims[i], spec.dims[i + 1], spec.bias, rng);
                let norm = (spec.norm == Norm::Batch).then(|| {
                    let d = spec.dims[i + 1];
                    (
                        store.add(format!("{lname}.norm.scale"), Tensor::full([d, 1], 1.0)),
                        store.add(format!("{lname}.norm.shift"), Tensor::zeros([d, 1])),
                    )
                });
                let activation = if i + 1 == n { spec.last } else { spec.hidden };
                Layer { linear, norm, activation }
            })
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].linear.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").linear.out_dim
    }

    pub fn num_scalars(&self) -> usize {
        self.layers.iter().map(|l| l.linear.num_scalars() + if l.norm.is_some() { 2 * l.linear.out_dim } else { 0 }).sum()
    }

    /// Applies every layer to `x: C_in×M`, giving `C_out×M`.
    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        self.layers.iter().try_fold(x, |h, layer| {
            let pre = layer.linear.forward(cx, h)?;
            finish_layer(cx, layer, pre)
        })
    }
}

/// Normalisation and activation on top of a layer's linear output.
fn finish_layer(cx: &mut Ctx, layer: &Layer, pre: Var) -> Result<Var> {
    let h = match layer.norm {
        Some((scale, shift)) => normalize(cx, pre, scale, shift)?,
        None => pre,
    };
    Ok(activate(cx, layer.activation, h))
}

fn normalize(cx: &mut Ctx, x: Var, scale: ParamId, shift: ParamId) -> Result<Var> {
    let h = cx.g.column_norm(x, 1e-5)?;
    let h = cx.g.mul(h, cx.p(scale))?;
    cx.g.add(h, cx.p(shift))
}

/// A linear map over the concatenation `[a; b]` stored as two blocks,
/// `W_a a + W_b b + bias`. Equal to a single linear layer on the stacked
/// input, but lets callers project each half once and broadcast instead of
/// materialising every concatenated column.
#[derive(Clone, Debug)]
pub struct ConcatLinear {
    pub w_a: ParamId,
    pub w_b: ParamId,
    pub bias: Option<ParamId>,
    pub a_dim: usize,
    pub b_dim: usize,
    pub out_dim: usize,
}

impl ConcatLinear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        a_dim: usize,
        b_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = init_bound(a_dim + b_dim);
        let w_a = store.add(format!("{name}.weight_a"), Tensor::uniform([out_dim, a_dim], -bound, bound, rng));
        let w_b = store.add(format!("{name}.weight_b"), Tensor::uniform([out_dim, b_dim], -bound, bound, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros([out_dim, 1])));
        Self { w_a, w_b, bias, a_dim, b_dim, out_dim }
    }

    pub fn num_scalars(&self) -> usize {
        self.out_dim * (self.a_dim + self.b_dim) + if self.bias.is_some() { self.out_dim } else { 0 }
    }

    /// `W_a a` for a `a_dim×M` input.
    pub fn project_a(&self, cx: &mut Ctx, a: Var) -> Result<Var> {
        cx.g.matmul(cx.p(self.w_a), a)
    }

    /// `W_b b (+ bias)` for a `b_dim×M` input.
    pub fn project_b(&self, cx: &mut Ctx, b: Var) -> Result<Var> {
        let y = cx.g.matmul(cx.p(self.w_b), b)?;
        match self.bias {
            Some(bias) => cx.g.add(y, cx.p(bias)),
            None => Ok(y),
        }
    }

    /// Full map on explicitly concatenated columns, for checking and for
    /// small inputs.
    pub fn forward_concat(&self, cx: &mut Ctx, a: Var, b: Var) -> Result<Var> {
        let pa = self.project_a(cx, a)?;
        let pb = self.project_b(cx, b)?;
        cx.g.add(pa, pb)
    }
}

/// Shared MLP whose input is the concatenation of two feature blocks: a
/// [`ConcatLinear`] first layer with its activation, then an optional tail.
#[derive(Clone, Debug)]
pub struct ConcatMlp {
    pub first: ConcatLinear,
    /// Optional normalisation `(scale, shift)` on the first layer.
    pub first_norm: Option<(ParamId, ParamId)>,
    pub first_activation: Activation,
    pub tail: Option<MlpParams>,
}

impl ConcatMlp {
    pub fn num_scalars(&self) -> usize {
        self.first.num_scalars()
            + if self.first_norm.is_some() { 2 * self.first.out_dim } else { 0 }
            + self.tail.as_ref().map_or(0, MlpParams::num_scalars)
    }

    /// Scale and shift parameters for [`Self::first_norm`].
    pub fn norm_params(store: &mut ParamStore, name: &str, dim: usize) -> (ParamId, ParamId) {
        (
            store.add(format!("{name}.norm.scale"), Tensor::full([dim, 1], 1.0)),
            store.add(format!("{name}.norm.shift"), Tensor::zeros([dim, 1])),
        )
    }

    pub fn out_dim(&self) -> usize {
        self.tail.as_ref().map_or(self.first.out_dim, MlpParams::out_dim)
    }

    /// Runs the network from an already summed first-layer pre-activation.
    pub fn finish(&self, cx: &mut Ctx, pre: Var) -> Result<Var> {
        let mut h = pre;
        if let Some((scale, shift)) = self.first_norm {
            h = normalize(cx, h, scale, shift)?;
        }
        let h = activate(cx, self.first_activation, h);
        match &self.tail {
            Some(t) => t.forward(cx, h),
            None => Ok(h),
        }
    }

    /// Reference path on explicit `[a; b]` columns.
    pub fn forward_concat(&self, cx: &mut Ctx, a: Var, b: Var) -> Result<Var> {
        let pre = self.first.forward_concat(cx, a, b)?;
        self.finish(cx, pre)
    }
}

pub(crate) fn activate(cx: &mut Ctx, act: Activation, x: Var) -> Var {
    match act {
        Activation::LeakyRelu => cx.g.leaky_relu(x),
        Activation::Relu => cx.g.relu(x),
        Activation::None => x,
    }
}
