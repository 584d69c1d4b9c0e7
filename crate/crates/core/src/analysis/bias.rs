use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::fusion::LayerKind;
use crate::math;

/// Layer with the highest confidence at the true class; earlier layer on ties.
pub fn winning_layer(confidences: &[f64; 5]) -> LayerKind {
    LayerKind::from_index(math::argmax(confidences).unwrap_or(0)).unwrap_or(LayerKind::Continuous)
}

/// Which layer dominates each category and how many categories each layer owns.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BiasReport {
    /// Winning layer per sample, in input order.
    pub sample_winners: Vec<LayerKind>,
    pub category_layers: BTreeMap<usize, LayerKind>,
    /// Categories assigned to each layer, indexed by [`LayerKind::index`].
    pub counts: [usize; 5],
    /// Declared categories that had no samples.
    pub empty_categories: Vec<usize>,
}

/// Majority vote of per-sample winners within each category in `0..categories`.
/// Count ties go to the earlier layer. Categories without samples are listed
/// in `empty_categories` and otherwise ignored.
pub fn dataset_bias(results: &[(usize, LayerKind)], categories: usize) -> BiasReport {
    let mut tallies: BTreeMap<usize, [usize; 5]> = BTreeMap::new();
    for &(cat, layer) in results {
        tallies.entry(cat).or_default()[layer.index()] += 1;
    }
    let mut report = BiasReport {
        sample_winners: results.iter().map(|&(_, l)| l).collect(),
        ..BiasReport::default()
    };
    let declared = (0..categories).chain(tallies.keys().copied().filter(|&c| c >= categories));
    for cat in declared {
        match tallies.get(&cat) {
            Some(t) => {
                let mut best = 0;
                for i in 1..5 {
                    if t[i] > t[best] {
                        best = i;
                    }
                }
                let layer = LayerKind::ALL[best];
                report.category_layers.insert(cat, layer);
                report.counts[best] += 1;
            }
            None => report.empty_categories.push(cat),
        }
    }
    report
}

/// Samples that exactly one audio-visual layer gets right, and samples that the
/// instant or onset layer gets right while the continuous layer fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LayerUniqueness {
    pub continuous_only: usize,
    pub instant_only: usize,
    pub onset_only: usize,
    pub instant_or_onset_not_continuous: usize,
}

/// `correct` holds `(continuous, instant, onset)` correctness per sample.
pub fn layer_uniqueness(correct: &[[bool; 3]]) -> LayerUniqueness {
    let mut u = LayerUniqueness::default();
    for &[cont, inst, ons] in correct {
        match (cont, inst, ons) {
            (true, false, false) => u.continuous_only += 1,
            (false, true, false) => u.instant_only += 1,
            (false, false, true) => u.onset_only += 1,
            _ => {}
        }
        if (inst || ons) && !cont {
            u.instant_or_onset_not_continuous += 1;
        }
    }
    u
}
