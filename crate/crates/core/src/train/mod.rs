//! Containment losses, negative sampling, optimizers and the trainers for
//! the two-box toy problem and hierarchy edge classification.

mod loss;
mod optim;
mod sampling;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use loss::{bce_from_logp, bce_loss, toy_containment_loss, BCE_CAP};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use sampling::{sample_negatives, sample_negatives_avoiding, LabeledPair};

use crate::boxes::{BoxTensor, ParamKind};
use crate::diff::{Tape, Tensor};
use crate::embedding::{EmbeddingTable, InitSpec};
use crate::error::{Error, Result};
use crate::graph::{f1_score, F1Report, HierarchyDataset};
use crate::ops::{log_containment_prob, regularize, IntersectionKind, OpsConfig, RegularizerConfig, VolumeKind};
use crate::rng::{SeededRng, Stream};

/// Every hyperparameter of a hierarchy training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Box dimension n.
    pub dim: usize,
    pub param_kind: ParamKind,
    pub ops: OpsConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Negatives per positive when a split is built.
    pub neg_ratio: usize,
    pub regularizer: RegularizerConfig,
    pub seed: u64,
    pub init: InitSpec,
    /// Probability threshold for validation/test predictions.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            param_kind: ParamKind::MinDelta,
            ops: OpsConfig::default(),
            optimizer: OptimizerConfig::default(),
            epochs: 100,
            batch_size: 512,
            neg_ratio: 10,
            regularizer: RegularizerConfig::default(),
            seed: 0,
            init: InitSpec::default(),
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        self.ops.validate().map_err(config)?;
        self.optimizer.validate().map_err(config)?;
        self.regularizer.validate().map_err(config)?;
        self.init.validate().map_err(config)
    }
}

/// Metrics recorded after each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
    pub val_precision: f64,
    pub val_recall: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub table: EmbeddingTable,
    pub history: Vec<EpochMetrics>,
}

const SCORE_CHUNK: usize = 4096;

/// `ln P(head -> tail)` for each pair.
pub fn score_pairs(table: &EmbeddingTable, pairs: &[LabeledPair], ops: &OpsConfig) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(SCORE_CHUNK) {
        let mut tape = Tape::new();
        let heads: Vec<usize> = chunk.iter().map(|p| p.head).collect();
        let tails: Vec<usize> = chunk.iter().map(|p| p.tail).collect();
        let h = table.lookup(&mut tape, &heads)?;
        let t = table.lookup(&mut tape, &tails)?;
        let lp = log_containment_prob(&mut tape, &h.boxes, &t.boxes, ops)?;
        out.extend_from_slice(tape.value(lp).data());
    }
    Ok(out)
}

/// F1 of the table's predictions on `pairs` at `threshold`.
pub fn evaluate(table: &EmbeddingTable, pairs: &[LabeledPair], ops: &OpsConfig, threshold: f64) -> Result<F1Report> {
    let logp = score_pairs(table, pairs, ops)?;
    let scored: Vec<(f64, bool)> = logp.into_iter().zip(pairs.iter().map(|p| p.label)).collect();
    f1_score(&scored, threshold)
}

/// One optimizer step on a mini-batch; returns the batch objective.
fn batch_step(
    table: &mut EmbeddingTable,
    opt: &mut Optimizer,
    batch: &[LabeledPair],
    cfg: &TrainConfig,
) -> Result<f64> {
    let entities: Vec<usize> = batch
        .iter()
        .flat_map(|p| [p.head, p.tail])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pos = |e: usize| entities.binary_search(&e).expect("entity gathered above");
    let mut tape = Tape::new();
    let lookup = table.lookup(&mut tape, &entities)?;
    let pick = |tape: &mut Tape, idx: Vec<usize>| -> Result<BoxTensor> {
        let min = tape.index_select(lookup.boxes.min, 0, idx.clone())?;
        let max = tape.index_select(lookup.boxes.max, 0, idx)?;
        Ok(BoxTensor { min, max })
    };
    let heads = pick(&mut tape, batch.iter().map(|p| pos(p.head)).collect())?;
    let tails = pick(&mut tape, batch.iter().map(|p| pos(p.tail)).collect())?;
    let logp = log_containment_prob(&mut tape, &heads, &tails, &cfg.ops)?;
    let labels: Vec<bool> = batch.iter().map(|p| p.label).collect();
    let mut loss = bce_loss(&mut tape, logp, &labels)?;
    if cfg.regularizer.is_active() {
        let penalty = regularize(&mut tape, &cfg.regularizer, &lookup.boxes, &cfg.ops)?;
        loss = tape.add(loss, penalty)?;
    }
    let value = tape.value(loss).item().expect("scalar loss");
    if !value.is_finite() {
        let lp = tape.value(logp).data();
        let worst = (0..batch.len())
            .find(|&i| !lp[i].is_finite())
            .map(|i| format!("; pair {:?} has logp {}", batch[i], lp[i]))
            .unwrap_or_default();
        return Err(Error::NonFinite(format!(
            "batch loss is {value} over {} pairs{worst}",
            batch.len()
        )));
    }
    tape.backward(loss)?;
    let grad = lookup.sparse_grad(&tape)?;
    let width = table.row_width();
    opt.step(table.params_mut(), width, &grad)?;
    Ok(value)
}

/// Trains from uniform initialization on `dataset.train`, shuffling the
/// pair order each epoch, and records loss and validation F1 per epoch.
pub fn train(cfg: &TrainConfig, dataset: &HierarchyDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let init = cfg.init.with_seed(cfg.seed);
    let table = EmbeddingTable::init_uniform(dataset.num_entities, cfg.dim, cfg.param_kind, &init)?;
    train_from(cfg, dataset, table)
}

/// As [`train`], starting from an existing table.
pub fn train_from(cfg: &TrainConfig, dataset: &HierarchyDataset, mut table: EmbeddingTable) -> Result<TrainOutcome> {
    cfg.validate()?;
    if table.num_entities() != dataset.num_entities {
        return Err(Error::invalid(format!(
            "table has {} entities, dataset {}",
            table.num_entities(),
            dataset.num_entities
        )));
    }
    let mut opt = Optimizer::new(cfg.optimizer, table.params().len())?;
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        SeededRng::stream(cfg.seed, Stream::Shuffle, epoch as u64).shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<LabeledPair> = chunk.iter().map(|&i| dataset.train[i]).collect();
            total += batch_step(&mut table, &mut opt, &batch, cfg).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, batch {b}: {msg}")),
                other => other,
            })?;
            batches += 1;
        }
        let val = evaluate(&table, &dataset.validation, &cfg.ops, cfg.threshold)?;
        history.push(EpochMetrics {
            epoch,
            train_loss: if batches == 0 { 0.0 } else { total / batches as f64 },
            val_f1: val.f1,
            val_precision: val.precision,
            val_recall: val.recall,
        });
    }
    Ok(TrainOutcome { table, history })
}

/// The two-box toy problem: learn box `y` inside box `x` with plain SGD on
/// the raw corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub ops: OpsConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            dim: 15,
            lr: 0.1,
            epochs: 50,
            ops: OpsConfig::new(IntersectionKind::Gumbel, 1e-4, VolumeKind::Soft, 0.1),
        }
    }
}

/// Corners `(z, Z)` of a single box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corners {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyOutcome {
    pub initial: [Corners; 2],
    pub trained: [Corners; 2],
    /// `losses[e]` is the loss after `e` updates, so `epochs + 1` entries.
    pub losses: Vec<f64>,
    /// `P(x | y)` after training.
    pub final_probability: f64,
}

/// Starting boxes: `x = [-2, 0]^n`, and `y` with `z_k = 1/k`,
/// `Z_k = 1 + 1/(n + 1 - k)`, disjoint from `x`.
pub fn toy_boxes(dim: usize) -> [Corners; 2] {
    let x = Corners {
        min: vec![-2.0; dim],
        max: vec![0.0; dim],
    };
    let y = Corners {
        min: (1..=dim).map(|k| 1.0 / k as f64).collect(),
        max: (1..=dim).map(|k| 1.0 + 1.0 / (dim + 1 - k) as f64).collect(),
    };
    [x, y]
}

fn toy_eval(boxes: &[Corners; 2], ops: &OpsConfig, backprop: bool) -> Result<(f64, Option<[Corners; 2]>)> {
    let mut tape = Tape::new();
    let mut leaves = Vec::with_capacity(4);
    for c in boxes {
        leaves.push(tape.param(Tensor::vector(c.min.clone())));
        leaves.push(tape.param(Tensor::vector(c.max.clone())));
    }
    let x = BoxTensor::new(&tape, leaves[0], leaves[1])?;
    let y = BoxTensor::new(&tape, leaves[2], leaves[3])?;
    let loss = toy_containment_loss(&mut tape, &x, &y, ops)?;
    // `+ 0.0` turns the -0.0 of a perfect containment into 0.0.
    let value = tape.value(loss).item().expect("scalar loss") + 0.0;
    if !backprop {
        return Ok((value, None));
    }
    tape.backward(loss)?;
    let g = |v| tape.grad(v).map(|t: &Tensor| t.data().to_vec()).unwrap_or_default();
    let grads = [
        Corners {
            min: g(leaves[0]),
            max: g(leaves[1]),
        },
        Corners {
            min: g(leaves[2]),
            max: g(leaves[3]),
        },
    ];
    Ok((value, Some(grads)))
}

pub fn run_toy(cfg: &ToyConfig) -> Result<ToyOutcome> {
    if cfg.dim == 0 || cfg.epochs == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config(format!(
            "toy needs dim, epochs >= 1 and lr > 0, got {cfg:?}"
        )));
    }
    cfg.ops.validate()?;
    let initial = toy_boxes(cfg.dim);
    let mut boxes = initial.clone();
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (value, grads) = toy_eval(&boxes, &cfg.ops, true)?;
        let grads = grads.expect("requested gradients");
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("toy loss is {value} at epoch {epoch}")));
        }
        losses.push(value);
        for (b, g) in boxes.iter_mut().zip(&grads) {
            b.min.iter_mut().zip(&g.min).for_each(|(p, g)| *p -= cfg.lr * g);
            b.max.iter_mut().zip(&g.max).for_each(|(p, g)| *p -= cfg.lr * g);
        }
    }
    let (final_loss, _) = toy_eval(&boxes, &cfg.ops, false)?;
    losses.push(final_loss);
    Ok(ToyOutcome {
        initial,
        trained: boxes,
        losses,
        final_probability: (-final_loss).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn toy_boxes_match_listing() {
        let [x, y] = toy_boxes(15);
        assert_eq!(x.min[0], -2.0);
        assert_eq!(y.min[1], 0.5);
        assert_eq!(y.max[0], 1.0 + 1.0 / 15.0);
        assert_eq!(y.max[14], 2.0);
    }

    #[test]
    fn toy_converges() {
        let out = run_toy(&ToyConfig::default()).unwrap();
        assert_eq!(out.losses.len(), 51);
        assert!(out.losses[50] < out.losses[0]);
        assert!(out.final_probability >= 0.95, "{}", out.final_probability);
    }

    #[test]
    fn two_node_dataset_learns_containment() {
        let ds = HierarchyDataset {
            num_entities: 2,
            train: vec![LabeledPair::positive(0, 1)],
            ..Default::default()
        };
        let cfg = TrainConfig {
            epochs: 200,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &ds).unwrap();
        let lp = score_pairs(&out.table, &ds.train, &cfg.ops).unwrap();
        assert!(lp[0].exp() >= 0.95, "{}", lp[0].exp());
    }

    #[test]
    fn empty_edge_set_one_epoch() {
        let ds = HierarchyDataset {
            num_entities: 3,
            ..Default::default()
        };
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &ds).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.history[0].train_loss, 0.0);
    }

    #[test]
    fn sparse_updates_leave_other_rows() {
        let ds = HierarchyDataset {
            num_entities: 6,
            train: vec![LabeledPair::positive(1, 4), LabeledPair::negative(4, 1)],
            ..Default::default()
        };
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let start = EmbeddingTable::init_uniform(6, cfg.dim, cfg.param_kind, &cfg.init.with_seed(cfg.seed)).unwrap();
        let out = train_from(&cfg, &ds, start.clone()).unwrap();
        for e in [0, 2, 3, 5] {
            assert_eq!(out.table.row(e), start.row(e));
        }
        assert_ne!(out.table.row(1), start.row(1));
        assert_ne!(out.table.row(4), start.row(4));
    }
}
