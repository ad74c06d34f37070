//! Seeded n-shot training episodes and held-out validation splits.

use rand::seq::SliceRandom;

use super::dataset::LabelVector;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// Shot counts of the low-shot protocol.
pub const DEFAULT_SHOTS: [usize; 5] = [1, 2, 4, 8, 16];

/// Validation items per class used when sweeping the blending weight for an
/// `shots`-shot episode: one for 1-shot, two for 2-shot, four otherwise.
pub fn validation_size(shots: usize) -> usize {
    match shots {
        0 => 0,
        1 => 1,
        2 => 2,
        _ => 4,
    }
}

/// A class that could not supply the requested number of items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shortfall {
    pub class: usize,
    pub requested: usize,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub shots: usize,
    /// Selected item indices per class, ascending.
    pub selected: Vec<Vec<usize>>,
    pub seed: u64,
    pub shortfalls: Vec<Shortfall>,
}

impl Episode {
    /// All selected indices, class by class.
    pub fn indices(&self) -> Vec<usize> {
        self.selected.iter().flatten().copied().collect()
    }

    /// Labels aligned with [`Episode::indices`].
    pub fn labels(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .flat_map(|(c, items)| std::iter::repeat_n(c, items.len()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.selected.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn draw(pool: &mut [usize], take: usize, seed: u64, purpose: u64, class: usize) -> Vec<usize> {
    let mut rng = stream_rng(seed, purpose, class as u64);
    let (chosen, _) = pool.partial_shuffle(&mut rng, take);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    chosen
}

fn record_shortfall(shortfalls: &mut Vec<Shortfall>, class: usize, requested: usize, available: usize, what: &str) {
    if available < requested {
        log::warn!("class {class}: requested {requested} {what} items but only {available} available");
        shortfalls.push(Shortfall {
            class,
            requested,
            available,
        });
    }
}

/// Samples `shots` items per class without replacement. Classes with fewer
/// items contribute all of them and are listed in `shortfalls`.
pub fn sample_episode(labels: &LabelVector, shots: usize, seed: u64) -> Result<Episode> {
    if shots == 0 {
        return Err(Error::Config("shots must be at least 1".into()));
    }
    let mut selected = Vec::with_capacity(labels.num_classes());
    let mut shortfalls = Vec::new();
    for (class, mut pool) in labels.by_class().into_iter().enumerate() {
        if pool.is_empty() {
            return Err(Error::MissingClass(class));
        }
        record_shortfall(&mut shortfalls, class, shots, pool.len(), "training");
        let take = shots.min(pool.len());
        selected.push(draw(&mut pool, take, seed, stream::EPISODE, class));
    }
    Ok(Episode {
        shots,
        selected,
        seed,
        shortfalls,
    })
}

/// Draws [`validation_size`] extra labeled items per class from those not
/// used by `train`.
pub fn split_validation(labels: &LabelVector, train: &Episode, seed: u64) -> Result<Episode> {
    if train.selected.len() != labels.num_classes() {
        return Err(Error::shape(
            "split_validation",
            format!("{} classes", labels.num_classes()),
            train.selected.len(),
        ));
    }
    let want = validation_size(train.shots);
    let mut selected = Vec::with_capacity(labels.num_classes());
    let mut shortfalls = Vec::new();
    for (class, pool) in labels.by_class().into_iter().enumerate() {
        let used = &train.selected[class];
        let mut remaining: Vec<usize> = pool.into_iter().filter(|i| used.binary_search(i).is_err()).collect();
        record_shortfall(&mut shortfalls, class, want, remaining.len(), "validation");
        let take = want.min(remaining.len());
        selected.push(draw(&mut remaining, take, seed, stream::VALIDATION, class));
    }
    Ok(Episode {
        shots: want,
        selected,
        seed,
        shortfalls,
    })
}
