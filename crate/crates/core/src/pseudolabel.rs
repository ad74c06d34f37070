//! Zero-shot adaptation from the most confident zero-shot predictions.

use crate::adapters::{predict_svl_adapter, train_svl_adapter, AdapterParams, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::fusion::{fuse_with, FusionResult};
use crate::store::{check_aligned, EmbeddingTable, LabelVector};
use crate::zeroshot::{estimate_lambda, ProbabilityMatrix};

/// Per-class cap on selected items.
pub const DEFAULT_K: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub item: usize,
    pub label: usize,
    pub confidence: f64,
}

/// Selected items grouped by class in ascending class order; within a
/// class, by descending confidence then ascending item index.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub entries: Vec<PseudoLabel>,
    pub k: usize,
    pub num_classes: usize,
    /// Classes that no item was predicted as.
    pub empty_classes: Vec<usize>,
}

impl PseudoLabelSet {
    pub fn items(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.item).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `item_id,pseudo_label,confidence`. Item ids come from `ids` when given,
    /// otherwise the row index is written.
    pub fn to_csv(&self, ids: Option<&[String]>) -> String {
        let mut out = String::from("item_id,pseudo_label,confidence\n");
        for e in &self.entries {
            match ids {
                Some(ids) => out.push_str(&ids[e.item]),
                None => out.push_str(&e.item.to_string()),
            }
            out.push_str(&format!(",{},{}\n", e.label, e.confidence));
        }
        out
    }
}

/// Keeps up to `k` items per predicted class, ranked by max probability.
pub fn select_pseudolabels(probs: &ProbabilityMatrix, k: usize) -> Result<PseudoLabelSet> {
    if k == 0 {
        return Err(Error::Config("pseudolabel k must be at least 1".into()));
    }
    let num_classes = probs.num_classes();
    let mut per_class: Vec<Vec<PseudoLabel>> = vec![Vec::new(); num_classes];
    for (item, (label, confidence)) in probs.argmax().into_iter().zip(probs.max_confidences()).enumerate() {
        per_class[label].push(PseudoLabel {
            item,
            label,
            confidence,
        });
    }
    let mut entries = Vec::new();
    let mut empty_classes = Vec::new();
    for (c, mut group) in per_class.into_iter().enumerate() {
        if group.is_empty() {
            empty_classes.push(c);
            continue;
        }
        // items were pushed in ascending order and the sort is stable
        group.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        group.truncate(k);
        entries.extend(group);
    }
    if !empty_classes.is_empty() {
        log::warn!("no items predicted as classes {empty_classes:?}; they get no pseudolabels");
    }
    Ok(PseudoLabelSet {
        entries,
        k,
        num_classes,
        empty_classes,
    })
}

#[derive(Debug, Clone)]
pub struct ZeroShotAdaptation {
    pub fusion: FusionResult,
    pub pseudolabels: PseudoLabelSet,
    pub adapter: AdapterParams,
    pub train_report: TrainReport,
}

/// Trains the adapter on pseudolabels drawn from `clip_probs` and fuses its
/// predictions on every item with the auto-selected weight. Takes no labels.
pub fn zero_shot_adapt(
    ssl_items: &EmbeddingTable,
    clip_probs: &ProbabilityMatrix,
    k: usize,
    hidden_dim: usize,
    cfg: &TrainConfig,
) -> Result<ZeroShotAdaptation> {
    check_aligned("zero-shot", ssl_items.len(), clip_probs.num_items())?;
    let pseudolabels = select_pseudolabels(clip_probs, k)?;
    if pseudolabels.is_empty() {
        return Err(Error::CannotAdapt);
    }
    let num_classes = clip_probs.num_classes();
    let train = ssl_items.select(&pseudolabels.items());
    let labels = LabelVector::new(pseudolabels.labels(), num_classes)?;
    let (adapter, train_report) = train_svl_adapter(&train, &labels, num_classes, hidden_dim, cfg)?;
    let ps = predict_svl_adapter(&adapter, ssl_items)?;
    let fusion = fuse_with(clip_probs, &ps, estimate_lambda(clip_probs)?)?;
    Ok(ZeroShotAdaptation {
        fusion,
        pseudolabels,
        adapter,
        train_report,
    })
}
