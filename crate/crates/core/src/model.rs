//! The forecasting model: a trajectory encoder, a context ("map") encoder
//! and an interaction decoder, each an ordered stack of layers, followed by a
//! multi-modal linear head.
//!
//! Observed tracks are translated so the last observed point of each agent
//! is the origin; predictions are translated back.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::grad::{count_params, ParamFilter};
use crate::hash::{Hash256, Hasher};
use crate::hyper::HyperState;
use crate::layer::{Layer, LayerError, LayerKind};
use crate::param::{Origin, Scope};
use crate::rng;
use crate::scene::SceneDataset;
use crate::tensor::{ShapeError, Tensor};

/// Content address of a model: architecture, block ids and lineage.
pub type ModelId = Hash256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ComponentKind {
    TrajectoryEncoder,
    MapEncoder,
    InteractionDecoder,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 3] = [
        ComponentKind::TrajectoryEncoder,
        ComponentKind::MapEncoder,
        ComponentKind::InteractionDecoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ComponentKind::TrajectoryEncoder => "trajectory-encoder",
            ComponentKind::MapEncoder => "map-encoder",
            ComponentKind::InteractionDecoder => "interaction-decoder",
        }
    }

    /// Short prefix used in block labels.
    pub fn tag(self) -> &'static str {
        match self {
            ComponentKind::TrajectoryEncoder => "traj",
            ComponentKind::MapEncoder => "map",
            ComponentKind::InteractionDecoder => "dec",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ComponentKind::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Fewest layers a component may be mutated down to.
    pub fn min_layers(self, min_layers: usize) -> usize {
        match self {
            ComponentKind::MapEncoder => 0,
            _ => min_layers.max(1),
        }
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerMode {
    /// Trainable blocks belonging to this model.
    Owned,
    /// Read-only reference to layer `index` of the same component in model
    /// `model`.
    Shared { model: ModelId, index: usize },
}

impl LayerMode {
    pub fn is_shared(&self) -> bool {
        matches!(self, LayerMode::Shared { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSlot {
    pub layer: Layer,
    pub mode: LayerMode,
}

impl LayerSlot {
    pub fn owned(layer: Layer) -> Self {
        LayerSlot {
            layer,
            mode: LayerMode::Owned,
        }
    }

    pub fn shared(layer: &Layer, model: ModelId, index: usize) -> Self {
        LayerSlot {
            layer: layer.frozen(),
            mode: LayerMode::Shared { model, index },
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid widths: {0}")]
    Width(&'static str),
    #[error("{what}: model expects {expected}, got {actual}")]
    Horizon {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{component}: layer {index} does not chain ({expected} in, {actual} given)")]
    Chain {
        component: &'static str,
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// An ordered layer stack with a fixed input width.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStack {
    kind: ComponentKind,
    input: usize,
    slots: Vec<LayerSlot>,
}

impl ComponentStack {
    pub fn new(kind: ComponentKind, input: usize, slots: Vec<LayerSlot>) -> Result<Self, ModelError> {
        if kind != ComponentKind::MapEncoder && slots.is_empty() {
            return Err(ModelError::Width("encoder and decoder need at least one layer"));
        }
        let mut width = input;
        for (index, slot) in slots.iter().enumerate() {
            if slot.layer.input_width() != width {
                return Err(ModelError::Chain {
                    component: kind.name(),
                    index,
                    expected: slot.layer.input_width(),
                    actual: width,
                });
            }
            width = slot.layer.output_width();
        }
        Ok(ComponentStack { kind, input, slots })
    }

    pub fn kind(&self) -> ComponentKind {
        self.kind
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn output_width(&self) -> usize {
        self.slots.last().map_or(self.input, |s| s.layer.output_width())
    }

    pub fn slots(&self) -> &[LayerSlot] {
        &self.slots
    }

    pub(crate) fn slots_mut(&mut self) -> &mut Vec<LayerSlot> {
        &mut self.slots
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.slots.iter().map(|s| &s.layer)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Observed and predicted lengths, in timesteps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Horizon {
    pub obs: usize,
    pub pred: usize,
}

impl Default for Horizon {
    fn default() -> Self {
        Horizon { obs: 8, pred: 12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lineage {
    pub id: ModelId,
    pub parent: Option<ModelId>,
    pub scope: Scope,
    pub generation: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub(crate) components: [ComponentStack; 3],
    pub(crate) head: Layer,
    pub(crate) modes_k: usize,
    pub(crate) horizon: Horizon,
    pub(crate) lineage: Lineage,
    pub(crate) hyper: HyperState,
}

impl ForecastModel {
    /// Assembles and validates a model, then computes its id.
    pub fn new(
        components: [ComponentStack; 3],
        head: Layer,
        modes_k: usize,
        horizon: Horizon,
        parent: Option<ModelId>,
        scope: Scope,
        generation: u32,
        hyper: HyperState,
    ) -> Result<Self, ModelError> {
        let mut m = ForecastModel {
            components,
            head,
            modes_k,
            horizon,
            lineage: Lineage {
                id: Hash256([0; 32]),
                parent,
                scope,
                generation,
            },
            hyper,
        };
        m.validate()?;
        m.seal();
        Ok(m)
    }

    pub(crate) fn validate(&self) -> Result<(), ModelError> {
        let [traj, map, dec] = &self.components;
        for (c, kind) in self.components.iter().zip(ComponentKind::ALL) {
            if c.kind != kind {
                return Err(ModelError::Width("components out of order"));
            }
            ComponentStack::new(c.kind, c.input, c.slots.clone())?;
        }
        let expect = |what, expected, actual| {
            if expected == actual {
                Ok(())
            } else {
                Err(ModelError::Horizon { what, expected, actual })
            }
        };
        expect("trajectory-encoder input", self.horizon.obs * 2, traj.input)?;
        expect("decoder input", traj.output_width() + map.output_width(), dec.input)?;
        expect("head input", dec.output_width(), self.head.input_width())?;
        expect("head output", self.modes_k * self.horizon.pred * 2, self.head.output_width())?;
        if self.modes_k == 0 || self.head.kind() != LayerKind::Linear {
            return Err(ModelError::Width("head must be a linear layer with K >= 1"));
        }
        Ok(())
    }

    pub fn id(&self) -> ModelId {
        self.lineage.id
    }

    pub fn lineage(&self) -> &Lineage {
        &self.lineage
    }

    pub fn components(&self) -> &[ComponentStack; 3] {
        &self.components
    }

    pub fn component(&self, kind: ComponentKind) -> &ComponentStack {
        &self.components[kind as usize]
    }

    pub fn head(&self) -> &Layer {
        &self.head
    }

    pub fn modes_k(&self) -> usize {
        self.modes_k
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    /// Width of the context vector consumed by the map encoder.
    pub fn context_dim(&self) -> usize {
        self.components[1].input
    }

    pub fn hyper(&self) -> &HyperState {
        &self.hyper
    }

    pub fn set_hyper(&mut self, hyper: HyperState) {
        self.hyper = hyper;
    }

    /// All layers in forward order: components, then the head.
    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.components
            .iter()
            .flat_map(|c| c.layers())
            .chain(core::iter::once(&self.head))
    }

    pub(crate) fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.components
            .iter_mut()
            .flat_map(|c| c.slots.iter_mut().map(|s| &mut s.layer))
            .chain(core::iter::once(&mut self.head))
    }

    /// Recomputes the model id from its current contents.
    pub fn seal(&mut self) {
        self.lineage.id = self.compute_id();
    }

    pub fn compute_id(&self) -> ModelId {
        let mut h = Hasher::new("evopath.model.v1");
        h.u64(self.modes_k as u64)
            .u64(self.horizon.obs as u64)
            .u64(self.horizon.pred as u64);
        for c in &self.components {
            h.str(c.kind.name()).u64(c.input as u64).u64(c.slots.len() as u64);
            for s in &c.slots {
                hash_layer(&mut h, &s.layer);
                match s.mode {
                    LayerMode::Owned => {
                        h.u64(0);
                    }
                    LayerMode::Shared { model, index } => {
                        h.u64(1).hash(&model).u64(index as u64);
                    }
                }
            }
        }
        hash_layer(&mut h, &self.head);
        match &self.lineage.parent {
            Some(p) => h.u64(1).hash(p),
            None => h.u64(0),
        };
        h.str(self.lineage.scope.name())
            .u64(matches!(self.lineage.scope, Scope::Meta) as u64)
            .u64(u64::from(self.lineage.generation));
        h.finish()
    }
}

fn hash_layer(h: &mut Hasher, layer: &Layer) {
    h.str(layer.kind().name())
        .u64(layer.input_width() as u64)
        .u64(layer.output_width() as u64)
        .u64(layer.params().len() as u64);
    for p in layer.params() {
        h.hash(&p.id());
    }
}

/// Builds the initial model. `widths[0]` is the trajectory-encoder width
/// and the last entry the decoder width.
///
/// Layout: trajectory encoder `linear(2*T_obs -> d0), residual(d0)`; empty
/// map encoder of width `context_dim`; decoder `linear(d0 + C -> d1),
/// residual(d1)`; head `linear(d1 -> K * T_pred * 2)`.
pub fn build_meta_model(
    widths: &[usize],
    modes_k: usize,
    horizon: Horizon,
    context_dim: usize,
    seed: u64,
) -> Result<ForecastModel, ModelError> {
    let (&d0, &d1) = match (widths.first(), widths.last()) {
        (Some(a), Some(b)) if widths.len() <= 2 => (a, b),
        _ => return Err(ModelError::Width("expected one or two widths")),
    };
    if d0 == 0 || d1 == 0 {
        return Err(ModelError::Width("widths must be positive"));
    }
    if modes_k == 0 || horizon.obs == 0 || horizon.pred == 0 {
        return Err(ModelError::Width("K and both horizons must be at least 1"));
    }
    let mut rng = rng::derive(seed, "meta-model", &[]);
    let origin = |label: &str| Origin::meta(label);
    let traj = ComponentStack::new(
        ComponentKind::TrajectoryEncoder,
        horizon.obs * 2,
        vec![
            LayerSlot::owned(Layer::linear(horizon.obs * 2, d0, &origin("traj.0"), &mut rng)?),
            LayerSlot::owned(Layer::residual(d0, &origin("traj.1"), false, &mut rng)?),
        ],
    )?;
    let map = ComponentStack::new(ComponentKind::MapEncoder, context_dim, Vec::new())?;
    let dec = ComponentStack::new(
        ComponentKind::InteractionDecoder,
        d0 + context_dim,
        vec![
            LayerSlot::owned(Layer::linear(d0 + context_dim, d1, &origin("dec.0"), &mut rng)?),
            LayerSlot::owned(Layer::residual(d1, &origin("dec.1"), false, &mut rng)?),
        ],
    )?;
    let head = Layer::linear(d1, modes_k * horizon.pred * 2, &origin("head"), &mut rng)?;
    ForecastModel::new(
        [traj, map, dec],
        head,
        modes_k,
        horizon,
        None,
        Scope::Meta,
        0,
        HyperState::default(),
    )
}

/// Total size of the distinct blocks one forward pass reads.
pub fn effective_param_count(model: &ForecastModel) -> usize {
    count_params(model.layers(), ParamFilter::All)
}

/// A batch in scene coordinates: `observed [B, N, T_obs, 2]`,
/// `future [B, N, T_pred, 2]`, optional `context [B, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub observed: Tensor,
    pub future: Tensor,
    pub context: Option<Tensor>,
}

impl TrajectoryBatch {
    /// Stacks the given samples of `data`.
    pub fn from_samples(data: &SceneDataset, indices: &[usize]) -> Self {
        let (n, to, tp, c) = (data.agents(), data.t_obs(), data.t_pred(), data.context_dim());
        let b = indices.len();
        let mut observed = Vec::with_capacity(b * n * to * 2);
        let mut future = Vec::with_capacity(b * n * tp * 2);
        let mut context = Vec::with_capacity(b * c);
        for &i in indices {
            let s = &data.samples()[i];
            observed.extend_from_slice(&s.observed);
            future.extend_from_slice(&s.future);
            if let Some(ctx) = &s.context {
                context.extend_from_slice(ctx);
            }
        }
        TrajectoryBatch {
            observed: Tensor::new(vec![b, n, to, 2], observed).expect("sample shapes validated"),
            future: Tensor::new(vec![b, n, tp, 2], future).expect("sample shapes validated"),
            context: (c > 0).then(|| Tensor::new(vec![b, c], context).expect("sample shapes validated")),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.observed.shape().first().copied().unwrap_or(0)
    }

    pub fn agents(&self) -> usize {
        self.observed.shape().get(1).copied().unwrap_or(0)
    }
}

/// Activations kept by [`forward_trace`] for the backward pass.
pub(crate) struct Trace {
    /// Input to each layer, in [`ForecastModel::layers`] order.
    inputs: Vec<Tensor>,
    /// Head output `[B*N, K*T_pred*2]` in the translated frame.
    pub(crate) output: Tensor,
    /// Last observed point per agent row, `[B*N, 2]`.
    pub(crate) anchor: Vec<f32>,
    batch: usize,
    agents: usize,
}

fn expect(what: &'static str, expected: usize, actual: usize) -> Result<(), ModelError> {
    if expected == actual {
        Ok(())
    } else {
        Err(ModelError::Horizon { what, expected, actual })
    }
}

pub(crate) fn forward_trace(model: &ForecastModel, batch: &TrajectoryBatch) -> Result<Trace, ModelError> {
    let to = model.horizon.obs;
    let shape = batch.observed.shape();
    if shape.len() != 4 || shape[3] != 2 {
        return Err(ShapeError::Mismatch {
            what: "observed [B, N, T_obs, 2]",
            expected: vec![0, 0, to, 2],
            actual: shape.to_vec(),
        }
        .into());
    }
    expect("observed steps", to, shape[2])?;
    let (b, n) = (shape[0], shape[1]);
    let rows = b * n;
    let c = model.context_dim();
    let ctx_width = batch.context.as_ref().map_or(0, |t| t.last_dim());
    if let Some(ctx) = &batch.context {
        expect("context width", c, ctx_width)?;
        ctx.expect_shape("context [B, C]", &[b, c])?;
    }

    let obs = batch.observed.data();
    let mut anchor = Vec::with_capacity(rows * 2);
    let mut x = Vec::with_capacity(rows * to * 2);
    for r in 0..rows {
        let track = &obs[r * to * 2..(r + 1) * to * 2];
        let (ax, ay) = (track[(to - 1) * 2], track[(to - 1) * 2 + 1]);
        anchor.extend([ax, ay]);
        for p in track.chunks_exact(2) {
            x.extend([p[0] - ax, p[1] - ay]);
        }
    }

    let mut inputs = Vec::new();
    let run = |layers: &mut dyn Iterator<Item = &Layer>, mut h: Tensor, inputs: &mut Vec<Tensor>| {
        for layer in layers {
            let y = layer.forward(&h)?;
            inputs.push(h);
            h = y;
        }
        Ok::<Tensor, ModelError>(h)
    };
    let [traj, map, dec] = &model.components;
    let h_traj = run(&mut traj.layers(), Tensor::new(vec![rows, to * 2], x)?, &mut inputs)?;
    let h_map = if c > 0 {
        let mut m = Vec::with_capacity(rows * c);
        for r in 0..rows {
            match &batch.context {
                Some(ctx) => m.extend_from_slice(&ctx.data()[(r / n) * c..(r / n + 1) * c]),
                None => m.extend(core::iter::repeat_n(0.0, c)),
            }
        }
        run(&mut map.layers(), Tensor::new(vec![rows, c], m)?, &mut inputs)?
    } else {
        Tensor::zeros(&[rows, 0])
    };
    let (wt, wm) = (h_traj.last_dim(), h_map.last_dim());
    let mut joined = Vec::with_capacity(rows * (wt + wm));
    for r in 0..rows {
        joined.extend_from_slice(&h_traj.data()[r * wt..(r + 1) * wt]);
        joined.extend_from_slice(&h_map.data()[r * wm..(r + 1) * wm]);
    }
    let h_dec = run(&mut dec.layers(), Tensor::new(vec![rows, wt + wm], joined)?, &mut inputs)?;
    let output = model.head.forward(&h_dec)?;
    inputs.push(h_dec);
    Ok(Trace {
        inputs,
        output,
        anchor,
        batch: b,
        agents: n,
    })
}

/// Parameter gradients per layer, in [`ForecastModel::layers`] order, as
/// `(slot, gradient)` for trainable slots.
pub(crate) type ModelGrads = Vec<Vec<(usize, Tensor)>>;

/// Backpropagates `d_output` (gradient w.r.t. the head output) through the
/// layers recorded in `trace`.
pub(crate) fn backward(model: &ForecastModel, trace: &Trace, d_output: Tensor) -> Result<ModelGrads, ModelError> {
    let [traj, map, dec] = &model.components;
    let (nt, nm, nd) = (traj.len(), map.len(), dec.len());
    let mut grads: ModelGrads = vec![Vec::new(); nt + nm + nd + 1];
    let layers: Vec<&Layer> = model.layers().collect();

    let back = |range: core::ops::Range<usize>, mut g: Tensor, grads: &mut ModelGrads| {
        for i in range.rev() {
            let lg = layers[i].backward(&trace.inputs[i], &g)?;
            grads[i] = lg.params;
            g = lg.input;
        }
        Ok::<Tensor, ModelError>(g)
    };
    let head = nt + nm + nd;
    let g_dec_out = back(head..head + 1, d_output, &mut grads)?;
    let g_joined = back(nt + nm..head, g_dec_out, &mut grads)?;

    let rows = trace.batch * trace.agents;
    let (wt, wm) = (traj.output_width(), map.output_width());
    let mut g_traj = Vec::with_capacity(rows * wt);
    let mut g_map = Vec::with_capacity(rows * wm);
    for r in 0..rows {
        let row = &g_joined.data()[r * (wt + wm)..(r + 1) * (wt + wm)];
        g_traj.extend_from_slice(&row[..wt]);
        g_map.extend_from_slice(&row[wt..]);
    }
    back(0..nt, Tensor::new(vec![rows, wt], g_traj)?, &mut grads)?;
    if nm > 0 {
        back(nt..nt + nm, Tensor::new(vec![rows, wm], g_map)?, &mut grads)?;
    }
    Ok(grads)
}

/// Forecasts `[B, N, K, T_pred, 2]` in scene coordinates.
pub fn predict(model: &ForecastModel, batch: &TrajectoryBatch) -> Result<Tensor, ModelError> {
    let trace = forward_trace(model, batch)?;
    Ok(detranslate(model, &trace))
}

fn detranslate(model: &ForecastModel, trace: &Trace) -> Tensor {
    let per_row = model.modes_k * model.horizon.pred * 2;
    let mut out = trace.output.data().to_vec();
    for (r, row) in out.chunks_exact_mut(per_row).enumerate() {
        let (ax, ay) = (trace.anchor[2 * r], trace.anchor[2 * r + 1]);
        for p in row.chunks_exact_mut(2) {
            p[0] += ax;
            p[1] += ay;
        }
    }
    Tensor::new(
        vec![trace.batch, trace.agents, model.modes_k, model.horizon.pred, 2],
        out,
    )
    .expect("head width validated")
}

fn wta_shapes(pred: &Tensor, future: &Tensor) -> Result<(usize, usize, usize), ShapeError> {
    let (rows, t) = match future.shape() {
        [b, n, t, 2] => (b * n, *t),
        s => {
            return Err(ShapeError::Mismatch {
                what: "future [B, N, T, 2]",
                expected: vec![0, 0, 0, 2],
                actual: s.to_vec(),
            })
        }
    };
    let k = pred.shape().get(2).copied().unwrap_or(0).max(1);
    let mut want = future.shape().to_vec();
    want.insert(2, k);
    pred.expect_shape("predictions [B, N, K, T, 2]", &want)?;
    if t == 0 || rows == 0 {
        return Err(ShapeError::Mismatch {
            what: "future must be non-empty",
            expected: vec![1, 1, 1, 2],
            actual: future.shape().to_vec(),
        });
    }
    Ok((rows, k, t))
}

/// Winner-take-all displacement loss: mean over batch and agents of the
/// smallest time-averaged Euclidean error among the K modes.
pub fn wta_loss(pred: &Tensor, future: &Tensor) -> Result<f64, ShapeError> {
    Ok(wta_loss_grad(pred, future)?.0)
}

/// Loss and its gradient with respect to `pred`. Only the winning mode of
/// each agent receives gradient; zero displacements contribute none.
pub(crate) fn wta_loss_grad(pred: &Tensor, future: &Tensor) -> Result<(f64, Tensor), ShapeError> {
    let (rows, k, t) = wta_shapes(pred, future)?;
    let (p, y) = (pred.data(), future.data());
    let mut grad = vec![0.0f32; p.len()];
    let mut total = 0.0;
    let scale = 1.0 / (rows * t) as f64;
    for r in 0..rows {
        let truth = &y[r * t * 2..(r + 1) * t * 2];
        let mut best = (0, f64::INFINITY);
        for m in 0..k {
            let off = (r * k + m) * t * 2;
            let mut sum = 0.0;
            for s in 0..t {
                let dx = f64::from(p[off + 2 * s]) - f64::from(truth[2 * s]);
                let dy = f64::from(p[off + 2 * s + 1]) - f64::from(truth[2 * s + 1]);
                sum += libm::sqrt(dx * dx + dy * dy);
            }
            let mean = sum / t as f64;
            if mean < best.1 || (m == 0 && mean.is_nan()) {
                best = (m, mean);
            }
        }
        total += best.1;
        let off = (r * k + best.0) * t * 2;
        for s in 0..t {
            let dx = f64::from(p[off + 2 * s]) - f64::from(truth[2 * s]);
            let dy = f64::from(p[off + 2 * s + 1]) - f64::from(truth[2 * s + 1]);
            let d = libm::sqrt(dx * dx + dy * dy);
            if d > 0.0 {
                grad[off + 2 * s] = (dx / d * scale) as f32;
                grad[off + 2 * s + 1] = (dy / d * scale) as f32;
            }
        }
    }
    Ok((total / rows as f64, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Loss and head-output gradient for one batch.
pub(crate) fn loss_and_grads(model: &ForecastModel, batch: &TrajectoryBatch) -> Result<(f64, ModelGrads), ModelError> {
    let trace = forward_trace(model, batch)?;
    let pred = detranslate(model, &trace);
    let (loss, g) = wta_loss_grad(&pred, &batch.future)?;
    let d_out = g.reshape(trace.output.shape())?;
    Ok((loss, backward(model, &trace, d_out)?))
}

/// Convenience for labels like `traj.2` under a scenario origin.
pub(crate) fn layer_origin(scope: &Scope, generation: u32, component: ComponentKind, index: usize) -> Origin {
    Origin::new(scope.clone(), generation, alloc::format!("{}.{}", component.tag(), index))
}

pub(crate) fn head_origin(scope: &Scope, generation: u32) -> Origin {
    Origin::new(scope.clone(), generation, String::from("head"))
}

/// A zero-branch residual block appended to `component`, or `None` when the
/// component has width zero.
pub(crate) fn fresh_residual(
    stack: &ComponentStack,
    scope: &Scope,
    generation: u32,
    rng: &mut impl Rng,
) -> Option<Layer> {
    let width = stack.output_width();
    let origin = layer_origin(scope, generation, stack.kind, stack.len());
    Layer::residual(width, &origin, true, rng).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::ParamBlock;
    use crate::rng::seeded;
    use crate::scene::{gen_scene, SceneKind, SceneSpec};
    use alloc::vec::Vec;
    use proptest::prelude::*;
    use rand::Rng;

    fn meta(k: usize) -> ForecastModel {
        build_meta_model(&[8, 6], k, Horizon::default(), 0, 7).unwrap()
    }

    fn random_batch(b: usize, n: usize, h: Horizon, rng: &mut impl Rng) -> TrajectoryBatch {
        TrajectoryBatch {
            observed: Tensor::from_fn(&[b, n, h.obs, 2], |_| rng.random_range(-4.0..4.0)),
            future: Tensor::from_fn(&[b, n, h.pred, 2], |_| rng.random_range(-4.0..4.0)),
            context: None,
        }
    }

    fn zeroed(layer: &Layer) -> Layer {
        let params = layer
            .params()
            .iter()
            .map(|p| ParamBlock::new(Tensor::zeros(p.tensor().shape()), p.origin().clone(), true))
            .collect();
        Layer::from_params(layer.kind(), layer.input_width(), layer.output_width(), params).unwrap()
    }

    #[test]
    fn seed_determines_id() {
        assert_eq!(meta(3).id(), meta(3).id());
        let other = build_meta_model(&[8, 6], 3, Horizon::default(), 0, 8).unwrap();
        assert_ne!(meta(3).id(), other.id());
    }

    #[test]
    fn head_width_is_k_t_2() {
        let m = meta(1);
        assert_eq!(m.head().output_width(), 24);
    }

    #[test]
    fn default_build_param_count_closed_form() {
        let (d0, d1, k, to, tp) = (32, 32, 3, 8, 12);
        let m = build_meta_model(&[d0, d1], k, Horizon { obs: to, pred: tp }, 0, 1).unwrap();
        let linear = |i: usize, o: usize| i * o + o;
        let residual = |d: usize| 2 * (d * d + d);
        let want = linear(2 * to, d0) + residual(d0) + linear(d0, d1) + residual(d1) + linear(d1, k * tp * 2);
        assert_eq!(want, 8200);
        assert_eq!(count_params(m.layers(), ParamFilter::All), want);
        assert_eq!(effective_param_count(&m), want);
        assert_eq!(m.component(ComponentKind::TrajectoryEncoder).len(), 2);
        assert_eq!(m.component(ComponentKind::MapEncoder).len(), 0);
        assert_eq!(m.component(ComponentKind::InteractionDecoder).len(), 2);
    }

    #[test]
    fn invalid_widths_rejected() {
        let h = Horizon::default();
        assert!(build_meta_model(&[], 1, h, 0, 0).is_err());
        assert!(build_meta_model(&[0], 1, h, 0, 0).is_err());
        assert!(build_meta_model(&[4, 4, 4], 1, h, 0, 0).is_err());
        assert!(build_meta_model(&[4], 0, h, 0, 0).is_err());
    }

    #[test]
    fn zero_network_predicts_last_observed_point() {
        let mut m = meta(2);
        for c in m.components.iter_mut() {
            for s in c.slots.iter_mut() {
                if s.layer.kind() == LayerKind::Residual {
                    s.layer = zeroed(&s.layer);
                }
            }
        }
        m.head = zeroed(&m.head);
        let mut rng = seeded(3);
        let batch = random_batch(2, 3, m.horizon(), &mut rng);
        let pred = predict(&m, &batch).unwrap();
        assert_eq!(pred.shape(), &[2, 3, 2, 12, 2]);
        for r in 0..6 {
            let last = &batch.observed.data()[(r * 8 + 7) * 2..(r * 8 + 8) * 2];
            for p in pred.data()[r * 48..(r + 1) * 48].chunks(2) {
                assert_eq!(p, last);
            }
        }
    }

    #[test]
    fn prediction_is_deterministic() {
        let m = meta(3);
        let mut rng = seeded(4);
        let batch = random_batch(3, 2, m.horizon(), &mut rng);
        assert_eq!(predict(&m, &batch).unwrap(), predict(&m, &batch).unwrap());
    }

    /// Straight-line reimplementation of the forward pass in f64.
    fn oracle(m: &ForecastModel, track: &[f32]) -> Vec<f64> {
        fn linear(l: &Layer, x: &[f64]) -> Vec<f64> {
            let (w, b) = (l.params()[0].tensor().data(), l.params()[1].tensor().data());
            (0..l.output_width())
                .map(|o| {
                    (0..l.input_width()).map(|i| w[o * l.input_width() + i] as f64 * x[i]).sum::<f64>() + b[o] as f64
                })
                .collect()
        }
        fn apply(l: &Layer, x: &[f64]) -> Vec<f64> {
            match l.kind() {
                LayerKind::Linear => linear(l, x),
                LayerKind::Residual => {
                    let d = l.input_width();
                    let p = l.params();
                    let mv = |w: &[f32], b: &[f32], v: &[f64]| -> Vec<f64> {
                        (0..d).map(|o| (0..d).map(|i| w[o * d + i] as f64 * v[i]).sum::<f64>() + b[o] as f64).collect()
                    };
                    let h: Vec<f64> = mv(p[0].tensor().data(), p[1].tensor().data(), x).iter().map(|v| v.tanh()).collect();
                    let r = mv(p[2].tensor().data(), p[3].tensor().data(), &h);
                    x.iter().zip(r).map(|(a, b)| a + b).collect()
                }
                LayerKind::Norm => unreachable!(),
            }
        }
        let (ax, ay) = (track[track.len() - 2] as f64, track[track.len() - 1] as f64);
        let mut x: Vec<f64> = track
            .chunks(2)
            .flat_map(|p| [p[0] as f64 - ax, p[1] as f64 - ay])
            .collect();
        for l in m.component(ComponentKind::TrajectoryEncoder).layers() {
            x = apply(l, &x);
        }
        for l in m.component(ComponentKind::InteractionDecoder).layers() {
            x = apply(l, &x);
        }
        linear(m.head(), &x)
            .chunks(2)
            .flat_map(|p| [p[0] + ax, p[1] + ay])
            .collect()
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let m = meta(2);
        let mut rng = seeded(5);
        let batch = random_batch(2, 2, m.horizon(), &mut rng);
        let pred = predict(&m, &batch).unwrap();
        for r in 0..4 {
            let want = oracle(&m, &batch.observed.data()[r * 16..(r + 1) * 16]);
            for (a, b) in pred.data()[r * 48..(r + 1) * 48].iter().zip(&want) {
                assert!((*a as f64 - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn horizon_mismatch_is_an_error() {
        let m = meta(1);
        let mut rng = seeded(6);
        let batch = random_batch(1, 1, Horizon { obs: 5, pred: 12 }, &mut rng);
        assert!(matches!(predict(&m, &batch), Err(ModelError::Horizon { .. })));
    }

    #[test]
    fn translation_moves_predictions() {
        let m = meta(2);
        let mut rng = seeded(7);
        let batch = random_batch(2, 2, m.horizon(), &mut rng);
        let shift = |t: &Tensor, dx: f32, dy: f32| {
            Tensor::new(
                t.shape().to_vec(),
                t.data().chunks(2).flat_map(|p| [p[0] + dx, p[1] + dy]).collect(),
            )
            .unwrap()
        };
        let moved = TrajectoryBatch {
            observed: shift(&batch.observed, 0.25, -2.0),
            future: shift(&batch.future, 0.25, -2.0),
            context: None,
        };
        let a = forward_trace(&m, &batch).unwrap();
        let b = forward_trace(&m, &moved).unwrap();
        // dyadic shift: translated frame is bit-identical
        assert_eq!(a.output, b.output);
        let pa = shift(&predict(&m, &batch).unwrap(), 0.25, -2.0);
        let pb = predict(&m, &moved).unwrap();
        for (x, y) in pa.data().iter().zip(pb.data()) {
            assert!((x - y).abs() <= 1e-5);
        }
        assert!((wta_loss(&pa, &moved.future).unwrap() - wta_loss(&pb, &moved.future).unwrap()).abs() <= 1e-5);
    }

    #[test]
    fn context_feeds_the_decoder() {
        let m = build_meta_model(&[6], 1, Horizon { obs: 3, pred: 2 }, 4, 9).unwrap();
        assert_eq!(m.context_dim(), 4);
        assert_eq!(m.component(ComponentKind::InteractionDecoder).input_width(), 10);
        let mut rng = seeded(8);
        let mut batch = random_batch(2, 1, m.horizon(), &mut rng);
        let zeros = predict(&m, &batch).unwrap();
        batch.context = Some(Tensor::zeros(&[2, 4]));
        assert_eq!(predict(&m, &batch).unwrap(), zeros);
        batch.context = Some(Tensor::from_fn(&[2, 4], |i| i as f32));
        assert_ne!(predict(&m, &batch).unwrap(), zeros);
        batch.context = Some(Tensor::zeros(&[2, 3]));
        assert!(predict(&m, &batch).is_err());
    }

    #[test]
    fn wta_exact_and_pythagorean() {
        let fut = Tensor::from_fn(&[1, 1, 3, 2], |i| i as f32);
        let mut p = fut.data().to_vec();
        p.extend(fut.data().iter().map(|v| v + 1.0));
        let pred = Tensor::new(vec![1, 1, 2, 3, 2], p).unwrap();
        assert_eq!(wta_loss(&pred, &fut).unwrap(), 0.0);
        let off = Tensor::new(
            vec![1, 1, 1, 3, 2],
            fut.data().chunks(2).flat_map(|q| [q[0] + 3.0, q[1] + 4.0]).collect(),
        )
        .unwrap();
        assert_eq!(wta_loss(&off, &fut).unwrap(), 5.0);
        assert!(wta_loss(&off, &Tensor::zeros(&[1, 1, 4, 2])).is_err());
    }

    fn brute_wta(p: &[f32], y: &[f32], b: usize, n: usize, k: usize, t: usize) -> f64 {
        let mut total = 0.0;
        for bi in 0..b {
            for a in 0..n {
                let mut best = f64::INFINITY;
                for m in 0..k {
                    let mut s = 0.0;
                    for st in 0..t {
                        let i = ((((bi * n) + a) * k + m) * t + st) * 2;
                        let j = (((bi * n) + a) * t + st) * 2;
                        s += ((p[i] as f64 - y[j] as f64).powi(2) + (p[i + 1] as f64 - y[j + 1] as f64).powi(2)).sqrt();
                    }
                    best = best.min(s / t as f64);
                }
                total += best;
            }
        }
        total / (b * n) as f64
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        let m = build_meta_model(&[5, 4], 2, Horizon { obs: 3, pred: 2 }, 0, 11).unwrap();
        let mut rng = seeded(12);
        let batch = random_batch(3, 2, m.horizon(), &mut rng);
        let (_, grads) = loss_and_grads(&m, &batch).unwrap();
        let loss_of = |m: &ForecastModel| {
            let pred = predict(m, &batch).unwrap();
            wta_loss(&pred, &batch.future).unwrap()
        };
        let eps = 1e-2f32;
        let n_layers = m.layers().count();
        for li in 0..n_layers {
            for (slot, g) in &grads[li] {
                for i in (0..g.len()).step_by(3) {
                    let bump = |d: f32| {
                        let mut c = m.clone();
                        let l = c.layers_mut().nth(li).unwrap();
                        l.params_mut()[*slot].values_mut().unwrap()[i] += d;
                        loss_of(&c)
                    };
                    let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps as f64);
                    let a = g.data()[i] as f64;
                    assert!((a - numeric).abs() <= 2e-3 + 2e-2 * a.abs(), "layer {li} slot {slot} [{i}]: {a} vs {numeric}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn wta_matches_brute_force(seed in any::<u64>(), b in 1usize..4, n in 1usize..4, k in 1usize..5, t in 1usize..8) {
            let mut rng = seeded(seed);
            let pred = Tensor::from_fn(&[b, n, k, t, 2], |_| rng.random_range(-3.0..3.0));
            let fut = Tensor::from_fn(&[b, n, t, 2], |_| rng.random_range(-3.0..3.0));
            let got = wta_loss(&pred, &fut).unwrap();
            prop_assert!((got - brute_wta(pred.data(), fut.data(), b, n, k, t)).abs() <= 1e-9);
            prop_assert!(got >= 0.0);
        }

        #[test]
        fn extra_mode_never_raises_wta(seed in any::<u64>(), n in 1usize..3, k in 1usize..4, t in 1usize..6) {
            let mut rng = seeded(seed);
            let fut = Tensor::from_fn(&[1, n, t, 2], |_| rng.random_range(-3.0..3.0));
            let base: Vec<f32> = (0..n * k * t * 2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut more = Vec::new();
            for a in 0..n {
                more.extend_from_slice(&base[a * k * t * 2..(a + 1) * k * t * 2]);
                more.extend((0..t * 2).map(|_| rng.random_range(-3.0f32..3.0)));
            }
            let p0 = Tensor::new(vec![1, n, k, t, 2], base).unwrap();
            let p1 = Tensor::new(vec![1, n, k + 1, t, 2], more).unwrap();
            prop_assert!(wta_loss(&p1, &fut).unwrap() <= wta_loss(&p0, &fut).unwrap());
        }
    }

    #[test]
    fn batch_from_dataset_stacks_samples() {
        let mut spec = SceneSpec::new(SceneKind::Straight, 3);
        spec.count = 5;
        let data = gen_scene(&spec).unwrap();
        let batch = TrajectoryBatch::from_samples(&data, &[4, 1]);
        assert_eq!(batch.observed.shape(), &[2, spec.agents, 8, 2]);
        assert_eq!(&batch.future.data()[..24 * spec.agents], data.samples()[4].future.as_slice());
        assert!(batch.context.is_none());
    }
}
