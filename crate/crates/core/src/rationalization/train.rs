use std::collections::BTreeMap;

use serde::Serialize;

use super::model::{Batch, Game};
use crate::data::Example;
use crate::error::Result;
use crate::evaluation::{evaluate, MetricsRecord};
use crate::tensor::Rng;

/// RNG stream family used for shuffling and Gumbel noise during training.
const TRAIN_STREAM: u64 = 0x2_0000_0000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepMetrics {
    pub pred_loss: f64,
    pub ext_loss: f64,
    /// Examples whose representation norm was clamped at the floor.
    pub clamped: usize,
    /// Fraction of positions selected by the sampled extractor-phase masks.
    pub selected: f64,
}

/// One row of the training log: mean training losses plus dev metrics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub pred_loss: f64,
    pub ext_loss: f64,
    pub clamped: usize,
    /// Mean fraction of positions selected by the sampled training masks.
    pub train_s: f64,
    /// Absent when the dev split is empty.
    pub dev: Option<MetricsRecord>,
}

/// Groups example indices into batches of equal length, largest-first within
/// each length. With `rng`, order inside each length bucket and the order of
/// the batches are shuffled.
pub fn batches(examples: &[Example], batch_size: usize, mut rng: Option<&mut Rng>) -> Vec<Vec<usize>> {
    let mut buckets: BTreeMap<(bool, usize), Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        buckets
            .entry((ex.tokens().is_some(), ex.len()))
            .or_default()
            .push(i);
    }
    let mut out = vec![];
    for (_, mut idx) in buckets {
        if let Some(r) = rng.as_deref_mut() {
            r.shuffle(&mut idx);
        }
        out.extend(idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec));
    }
    if let Some(r) = rng {
        r.shuffle(&mut out);
    }
    out
}

impl Game {
    /// One alternating update: predictor on detached masks, then extractor on
    /// freshly sampled masks through the frozen predictor.
    pub fn train_step(&mut self, batch: &Batch, rng: &mut Rng) -> Result<StepMetrics> {
        let pred_loss = self.predictor_phase(batch, &mut rng.split(0))?;
        let (ext_loss, clamped, selected) = self.extractor_phase(batch, &mut rng.split(1))?;
        Ok(StepMetrics {
            pred_loss,
            ext_loss,
            clamped,
            selected,
        })
    }
}

/// One pass over `train` for the 1-based `epoch`. The returned record has no
/// dev metrics.
pub fn train_epoch(game: &mut Game, train: &[Example], epoch: usize) -> Result<EpochRecord> {
    if train.is_empty() {
        return Err(crate::error::Error::invalid("train", "training split is empty"));
    }
    let base = Rng::with_stream(game.config.seed, TRAIN_STREAM + epoch as u64);
    let order = batches(train, game.config.batch_size, Some(&mut base.split(0)));
    let (mut pred, mut ext, mut sel, mut clamped, mut seen) = (0.0, 0.0, 0.0, 0, 0usize);
    for (step, idx) in order.iter().enumerate() {
        let refs: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
        let batch = Batch::new(&refs)?;
        let m = game.train_step(&batch, &mut base.split(step as u64 + 1))?;
        pred += m.pred_loss * batch.size as f64;
        ext += m.ext_loss * batch.size as f64;
        sel += m.selected * batch.size as f64;
        clamped += m.clamped;
        seen += batch.size;
    }
    Ok(EpochRecord {
        epoch,
        pred_loss: pred / seen as f64,
        ext_loss: ext / seen as f64,
        clamped,
        train_s: sel / seen as f64,
        dev: None,
    })
}

/// Runs `game.config.epochs` epochs over `train`, evaluating on `dev` after
/// each. `on_epoch` sees every record as soon as it is produced.
pub fn train(
    game: &mut Game,
    train: &[Example],
    dev: &[Example],
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    let mut records = vec![];
    for epoch in 1..=game.config.epochs {
        let mut record = train_epoch(game, train, epoch)?;
        if !dev.is_empty() {
            record.dev = Some(evaluate(game, dev)?);
        }
        on_epoch(&record)?;
        records.push(record);
    }
    Ok(records)
}
