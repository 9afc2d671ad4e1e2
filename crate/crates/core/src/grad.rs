//! Gradient verification and parameter accounting over layer stacks.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::layer::{kernel, Layer};
use crate::param::BlockId;
use crate::tensor::Tensor;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamFilter {
    All,
    TrainableOnly,
}

/// Sum of block sizes in `layers`, each distinct block id counted once.
pub fn count_params<'a>(layers: impl IntoIterator<Item = &'a Layer>, filter: ParamFilter) -> usize {
    let mut seen = BTreeSet::new();
    let mut total = 0;
    for layer in layers {
        for p in layer.params() {
            if filter == ParamFilter::TrainableOnly && !p.is_trainable() {
                continue;
            }
            if seen.insert(p.id()) {
                total += p.size();
            }
        }
    }
    total
}

/// Blocks of a layer stack lifted to `f64`, deduplicated by id.
struct Lifted {
    values: Vec<Vec<f64>>,
    trainable: Vec<bool>,
    /// Per layer, the index into `values` of each parameter slot.
    refs: Vec<Vec<usize>>,
}

impl Lifted {
    fn new(layers: &[Layer]) -> Self {
        let mut index: BTreeMap<BlockId, usize> = BTreeMap::new();
        let mut values = Vec::new();
        let mut trainable: Vec<bool> = Vec::new();
        let refs = layers
            .iter()
            .map(|layer| {
                layer
                    .params()
                    .iter()
                    .map(|p| {
                        let i = *index.entry(p.id()).or_insert_with(|| {
                            values.push(p.tensor().data().iter().map(|&v| f64::from(v)).collect());
                            trainable.push(false);
                            values.len() - 1
                        });
                        trainable[i] |= p.is_trainable();
                        i
                    })
                    .collect()
            })
            .collect();
        Lifted {
            values,
            trainable,
            refs,
        }
    }

    fn slots(&self, layer: usize) -> Vec<&[f64]> {
        self.refs[layer].iter().map(|&i| self.values[i].as_slice()).collect()
    }

    /// Activations entering each layer, plus the final output.
    fn forward(&self, layers: &[Layer], input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![input.to_vec()];
        for (li, layer) in layers.iter().enumerate() {
            let x = acts.last().expect("seeded with input");
            let y = kernel::forward(
                layer.kind(),
                layer.input_width(),
                layer.output_width(),
                &self.slots(li),
                x,
            );
            acts.push(y);
        }
        acts
    }

    fn loss(&self, layers: &[Layer], input: &[f64]) -> f64 {
        self.forward(layers, input).last().expect("output").iter().sum()
    }
}

/// Compares analytic gradients of `sum(outputs)` with central differences
/// for every trainable parameter, all in `f64`. The numeric derivative uses
/// the fourth-order stencil on `±eps/2, ±eps`. Returns the largest relative
/// error, `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
///
/// Returns 0 when nothing is trainable or when the stack does not chain.
pub fn grad_check(layers: &[Layer], input: &Tensor, eps: f64) -> f64 {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let chains = layers.windows(2).all(|w| w[0].output_width() == w[1].input_width());
    if layers.is_empty() || !chains || input.last_dim() != layers[0].input_width() {
        return 0.0;
    }
    let mut lifted = Lifted::new(layers);
    if !lifted.trainable.iter().any(|&t| t) {
        return 0.0;
    }
    let x: Vec<f64> = input.data().iter().map(|&v| f64::from(v)).collect();

    let acts = lifted.forward(layers, &x);
    let mut analytic: Vec<Vec<f64>> = lifted.values.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut upstream = vec![1.0; acts.last().expect("output").len()];
    for (li, layer) in layers.iter().enumerate().rev() {
        let (dx, dparams) = kernel::backward(
            layer.kind(),
            layer.input_width(),
            layer.output_width(),
            &lifted.slots(li),
            &acts[li],
            &upstream,
        );
        for (slot, g) in dparams.into_iter().enumerate() {
            let acc = &mut analytic[lifted.refs[li][slot]];
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        upstream = dx;
    }

    let mut worst: f64 = 0.0;
    for b in 0..lifted.values.len() {
        if !lifted.trainable[b] {
            continue;
        }
        for i in 0..lifted.values[b].len() {
            let orig = lifted.values[b][i];
            let mut at = |d: f64| {
                lifted.values[b][i] = orig + d;
                lifted.loss(layers, &x)
            };
            let (p1, m1, p2, m2) = (at(eps / 2.0), at(-eps / 2.0), at(eps), at(-eps));
            lifted.values[b][i] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (6.0 * eps);
            let a = analytic[b][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::LayerKind;
    use crate::param::{Origin, ParamBlock};
    use crate::rng::seeded;
    use rand::Rng;

    fn input(rows: usize, width: usize, rng: &mut impl Rng) -> Tensor {
        Tensor::from_fn(&[rows, width], |_| rng.random_range(-1.5..1.5))
    }

    #[test]
    fn linear_4x4_counts_20() {
        let mut rng = seeded(0);
        let l = Layer::linear(4, 4, &Origin::meta("l"), &mut rng).unwrap();
        assert_eq!(count_params([&l], ParamFilter::All), 20);
        assert_eq!(count_params([&l.frozen()], ParamFilter::TrainableOnly), 0);
        assert_eq!(count_params([&l], ParamFilter::TrainableOnly), 20);
    }

    #[test]
    fn shared_block_counted_once() {
        let mut rng = seeded(1);
        let a = Layer::linear(3, 3, &Origin::meta("a"), &mut rng).unwrap();
        let b = Layer::linear(3, 3, &Origin::meta("b"), &mut rng).unwrap();
        // b reuses a's weight block.
        let shared = Layer::from_params(
            LayerKind::Linear,
            3,
            3,
            vec![a.params()[0].clone(), b.params()[1].clone()],
        )
        .unwrap();
        // brute force: distinct ids
        let mut ids: Vec<(BlockId, usize)> = [&a, &shared]
            .iter()
            .flat_map(|l| l.params().iter().map(|p| (p.id(), p.size())))
            .collect();
        ids.sort();
        ids.dedup();
        let want: usize = ids.iter().map(|(_, s)| s).sum();
        assert_eq!(count_params([&a, &shared], ParamFilter::All), want);
        assert_eq!(want, 9 + 3 + 3);
    }

    #[test]
    fn single_linear_passes() {
        let mut rng = seeded(2);
        let l = Layer::linear(5, 3, &Origin::meta("l"), &mut rng).unwrap();
        let x = input(4, 5, &mut rng);
        assert!(grad_check(&[l], &x, 1e-3) <= 1e-4);
    }

    #[test]
    fn frozen_stack_is_vacuous() {
        let mut rng = seeded(3);
        let l = Layer::residual(4, &Origin::meta("r"), false, &mut rng).unwrap();
        let x = input(2, 4, &mut rng);
        assert_eq!(grad_check(&[l.frozen()], &x, 1e-3), 0.0);
    }

    #[test]
    fn residual_stack_passes() {
        let mut rng = seeded(4);
        let layers: Vec<Layer> = (0..3)
            .map(|i| Layer::residual(6, &Origin::meta(alloc::format!("r{i}")), false, &mut rng).unwrap())
            .collect();
        let x = input(3, 6, &mut rng);
        assert!(grad_check(&layers, &x, 1e-3) <= 1e-4);
    }

    #[test]
    fn norm_layer_with_trained_affine_passes() {
        let mut rng = seeded(5);
        let origin = Origin::meta("n");
        let gain = ParamBlock::new(input(1, 5, &mut rng).reshape(&[5]).unwrap(), origin.clone(), true);
        let bias = ParamBlock::new(input(1, 5, &mut rng).reshape(&[5]).unwrap(), Origin::meta("nb"), true);
        let n = Layer::from_params(LayerKind::Norm, 5, 5, vec![gain, bias]).unwrap();
        let l = Layer::linear(5, 2, &origin, &mut rng).unwrap();
        let x = input(3, 5, &mut rng);
        assert!(grad_check(&[n, l], &x, 1e-3) <= 1e-4);
    }

    #[test]
    fn unchained_stack_returns_zero() {
        let mut rng = seeded(6);
        let a = Layer::linear(3, 4, &Origin::meta("a"), &mut rng).unwrap();
        let b = Layer::linear(5, 2, &Origin::meta("b"), &mut rng).unwrap();
        assert_eq!(grad_check(&[a, b], &input(1, 3, &mut rng), 1e-3), 0.0);
    }
}
