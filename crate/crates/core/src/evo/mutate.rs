//! Structural mutation and knowledge transfer.

use rand::Rng;

use crate::model::{
    fresh_residual, head_origin, layer_origin, ComponentKind, ForecastModel, LayerMode, LayerSlot,
};
use crate::param::Scope;

/// Scenario and generation a new sub-model is created for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Birth {
    pub scope: Scope,
    pub generation: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    Insert,
    Delete,
    Keep,
}

/// Branch taken for a uniform draw `u`.
pub fn mutation_branch(u: f64, rho1: f64) -> Mutation {
    if u < rho1 / 2.0 {
        Mutation::Insert
    } else if u < rho1 {
        Mutation::Delete
    } else {
        Mutation::Keep
    }
}

/// True when a uniform draw `u` selects a tuned copy.
pub fn transfer_coin(u: f64, rho2: f64) -> bool {
    u < rho2
}

/// Child of `parent` with one mutation per component (trajectory encoder,
/// map encoder, decoder). Inherited layers become frozen references to the
/// parent; inserted residual blocks start as the identity and are owned.
/// The head is carried over unchanged for [`knowledge_transfer`] to copy.
///
/// Deletion keeps at least `min_layers` layers in the encoder and decoder,
/// never removes a width-changing layer, and is a no-op on an empty map
/// encoder. Insertion into a zero-width map encoder is a no-op.
pub fn apply_mutations(
    parent: &ForecastModel,
    mutations: [Mutation; 3],
    min_layers: usize,
    birth: &Birth,
    rng: &mut impl Rng,
) -> ForecastModel {
    let mut child = parent.clone();
    let pid = parent.id();
    for (c, m) in child.components.iter_mut().zip(mutations) {
        for (i, s) in c.slots_mut().iter_mut().enumerate() {
            *s = LayerSlot::shared(&s.layer, pid, i);
        }
        match m {
            Mutation::Insert => {
                if let Some(layer) = fresh_residual(c, &birth.scope, birth.generation, rng) {
                    c.slots_mut().push(LayerSlot::owned(layer));
                }
            }
            Mutation::Delete => {
                let floor = c.kind().min_layers(min_layers);
                let keeps_width = c
                    .slots()
                    .last()
                    .is_some_and(|s| s.layer.input_width() == s.layer.output_width());
                if c.len() > floor && keeps_width {
                    c.slots_mut().pop();
                }
            }
            Mutation::Keep => {}
        }
    }
    child.head = parent.head.frozen();
    child.lineage.parent = Some(pid);
    child.lineage.scope = birth.scope.clone();
    child.lineage.generation = birth.generation;
    child.seal();
    child
}

/// Draws one uniform per component, then applies [`apply_mutations`].
pub fn model_evolution(
    parent: &ForecastModel,
    rho1: f64,
    min_layers: usize,
    birth: &Birth,
    rng: &mut impl Rng,
) -> ForecastModel {
    let mutations = ComponentKind::ALL.map(|_| mutation_branch(rng.random(), rho1));
    apply_mutations(parent, mutations, min_layers, birth, rng)
}

/// Turns each layer inherited from `parent` into a trainable copy with
/// probability `rho2`, leaving the rest as frozen shared references. Inserted
/// layers are left alone; the head is always copied.
pub fn knowledge_transfer(
    child: &ForecastModel,
    parent: &ForecastModel,
    rho2: f64,
    birth: &Birth,
    rng: &mut impl Rng,
) -> ForecastModel {
    let pid = parent.id();
    let mut out = child.clone();
    for c in out.components.iter_mut() {
        let kind = c.kind();
        for (i, s) in c.slots_mut().iter_mut().enumerate() {
            let inherited = matches!(s.mode, LayerMode::Shared { model, .. } if model == pid);
            if inherited && transfer_coin(rng.random(), rho2) {
                let origin = layer_origin(&birth.scope, birth.generation, kind, i);
                *s = LayerSlot::owned(s.layer.tuned_copy(&origin));
            }
        }
    }
    out.head = parent.head.tuned_copy(&head_origin(&birth.scope, birth.generation));
    out.seal();
    out
}
