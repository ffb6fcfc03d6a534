//! Mini-batch training loop.

use std::io::Write;
use std::path::PathBuf;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{adam_step, AdamConfig, AdamState, PlateauConfig, PlateauScheduler};
use super::{save_weights, Model, NetError};
use crate::pipeline::LabeledEpoch;

/// Fixed-length sequences of consecutive epochs, flattened.
#[derive(Debug, Clone, Default)]
pub struct SequenceSet {
    /// `[len, seq_len, input_len]`
    pub inputs: Vec<f32>,
    /// `[len, seq_len]`
    pub labels: Vec<u8>,
    pub seq_len: usize,
    pub input_len: usize,
}

impl SequenceSet {
    /// Cuts each night's run of consecutive epoch indices into
    /// non-overlapping windows of `seq_len`; leftovers are dropped.
    pub fn from_epochs(epochs: &[LabeledEpoch], seq_len: usize) -> Self {
        let input_len = epochs.first().map_or(0, |e| e.samples.len());
        let mut set = Self {
            seq_len,
            input_len,
            ..Self::default()
        };
        let mut run: Vec<&LabeledEpoch> = Vec::new();
        let flush = |run: &mut Vec<&LabeledEpoch>, set: &mut Self| {
            for w in run.chunks_exact(seq_len) {
                for e in w {
                    set.inputs.extend(e.samples.iter().map(|&v| v as f32));
                    set.labels.push(e.label.code());
                }
            }
            run.clear();
        };
        for e in epochs {
            assert_eq!(e.samples.len(), input_len, "epochs of unequal length");
            if let Some(prev) = run.last() {
                if prev.source_night != e.source_night || prev.epoch_index + 1 != e.epoch_index {
                    flush(&mut run, &mut set);
                }
            }
            run.push(e);
        }
        flush(&mut run, &mut set);
        set
    }

    pub fn len(&self) -> usize {
        self.labels.len().checked_div(self.seq_len).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, idx: &[usize]) -> (Vec<f32>, Vec<u8>) {
        let (l, n) = (self.seq_len, self.input_len);
        let mut x = Vec::with_capacity(idx.len() * l * n);
        let mut y = Vec::with_capacity(idx.len() * l);
        for &i in idx {
            x.extend_from_slice(&self.inputs[i * l * n..(i + 1) * l * n]);
            y.extend_from_slice(&self.labels[i * l..(i + 1) * l]);
        }
        (x, y)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau: PlateauConfig,
    pub seed: u64,
    /// Stop once training accuracy reaches this value.
    pub stop_at_train_accuracy: Option<f64>,
    /// Where the last finite weights go when the loss diverges.
    pub divergence_dump: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 100,
            plateau: PlateauConfig::default(),
            seed: 0,
            stop_at_train_accuracy: None,
            divergence_dump: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLog>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,loss,train_acc,val_acc,lr";

    pub fn csv_row(e: &EpochLog) -> String {
        let val = e.val_acc.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!("{},{:.6},{:.6},{},{:e}", e.epoch, e.loss, e.train_acc, val, e.lr)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for e in &self.epochs {
            s.push_str(&Self::csv_row(e));
            s.push('\n');
        }
        s
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed ^ ((epoch as u64) << 32 | batch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Inference-mode probabilities `[len, seq_len, classes]`.
pub fn predict_set(model: &Model<f32>, set: &SequenceSet, batch_size: usize) -> Result<Vec<f32>, NetError> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.labels.len() * model.config().classes);
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = set.gather(chunk);
        out.extend(model.predict(&x, chunk.len(), set.seq_len)?);
    }
    Ok(out)
}

/// Fraction of epochs whose most probable class is the reference label.
pub fn evaluate(model: &Model<f32>, set: &SequenceSet, batch_size: usize) -> Result<f64, NetError> {
    if set.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let p = predict_set(model, set, batch_size)?;
    let c = model.config().classes;
    let correct = p
        .chunks(c)
        .zip(&set.labels)
        .filter(|(row, &l)| argmax(row) == l as usize)
        .count();
    Ok(correct as f64 / set.labels.len() as f64)
}

/// Trains `model` in place.
///
/// Shuffling and dropout draw from streams derived from `cfg.seed`, so two
/// runs with the same inputs produce identical logs and weights. The plateau
/// scheduler monitors validation accuracy, or training accuracy when no
/// validation set is given. One CSV row per epoch goes to `log`.
pub fn fit(
    model: &mut Model<f32>,
    train: &SequenceSet,
    validation: Option<&SequenceSet>,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainHistory, NetError> {
    if train.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let mc = model.config();
    for s in std::iter::once(train).chain(validation) {
        if s.input_len != mc.input_len || s.seq_len != mc.seq_len {
            return Err(NetError::ShapeMismatch(format!(
                "dataset is [_, {}, {}], model expects [_, {}, {}]",
                s.seq_len, s.input_len, mc.seq_len, mc.input_len
            )));
        }
    }
    let classes = mc.classes;
    let mut adam = AdamState::new(model.params(), cfg.adam);
    let mut sched = PlateauScheduler::new(cfg.plateau, cfg.learning_rate);
    let mut history = TrainHistory::default();
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{}", TrainHistory::CSV_HEADER)?;
    }

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let lr = sched.lr();
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for (bi, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let (x, y) = train.gather(chunk);
            let (loss, grads, probs) =
                model.loss_and_gradients(&x, &y, chunk.len(), train.seq_len, batch_seed(cfg.seed, epoch, bi))?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                if let Some(path) = &cfg.divergence_dump {
                    save_weights(&model.weights(), path)?;
                }
                return Err(NetError::DivergenceDetected {
                    epoch,
                    batch: bi,
                    dump: cfg.divergence_dump.clone(),
                });
            }
            adam_step(model.params_mut(), &grads, &mut adam, lr);
            loss_sum += loss as f64 * y.len() as f64;
            seen += y.len();
            correct += probs
                .chunks(classes)
                .zip(&y)
                .filter(|(row, &l)| argmax(row) == l as usize)
                .count();
        }
        let train_acc = correct as f64 / seen as f64;
        let val_acc = validation.map(|v| evaluate(model, v, cfg.batch_size)).transpose()?;
        let row = EpochLog {
            epoch,
            loss: loss_sum / seen as f64,
            train_acc,
            val_acc,
            lr,
        };
        info!("{}", TrainHistory::csv_row(&row));
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", TrainHistory::csv_row(&row))?;
        }
        history.epochs.push(row);
        sched.step(val_acc.unwrap_or(train_acc));
        if cfg.stop_at_train_accuracy.is_some_and(|t| train_acc >= t) {
            break;
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelConfig;
    use crate::pipeline::{NightId, StageLabel};

    fn epochs(night: u32, n: usize, len: usize) -> Vec<LabeledEpoch> {
        (0..n)
            .map(|i| LabeledEpoch {
                samples: (0..len).map(|j| ((i * 7 + j) % 13) as f64 / 13.0).collect(),
                label: StageLabel::ALL[i % 5],
                source_night: NightId(night),
                epoch_index: i as u32,
            })
            .collect()
    }

    #[test]
    fn sequences_respect_night_and_index_gaps() {
        let mut e = epochs(1, 5, 4);
        e.extend(epochs(2, 3, 4));
        e[3].epoch_index = 10;
        let s = SequenceSet::from_epochs(&e, 2);
        // runs: night 1 [0 1 2] [10] [4], night 2 [0 1 2]
        assert_eq!(s.len(), 2);
        assert_eq!(s.labels, vec![0, 1, 0, 1]);
        assert_eq!(SequenceSet::from_epochs(&e, 1).len(), 8);
    }

    #[test]
    fn csv_row_format() {
        let e = EpochLog {
            epoch: 3,
            loss: 1.5,
            train_acc: 0.25,
            val_acc: None,
            lr: 5e-4,
        };
        assert_eq!(TrainHistory::csv_row(&e), "3,1.500000,0.250000,,5e-4");
    }

    #[test]
    fn fit_is_deterministic() {
        let mut cfg = ModelConfig::tiny();
        cfg.dropout_rate = 0.2;
        let set = SequenceSet::from_epochs(&epochs(1, 10, cfg.input_len), 1);
        let tc = TrainConfig {
            max_epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = Model::<f32>::new(cfg.clone(), 1).unwrap();
            let h = fit(&mut m, &set, Some(&set), &tc, None).unwrap();
            (h, m.weights())
        };
        let (h1, w1) = run();
        let (h2, w2) = run();
        assert_eq!(h1, h2);
        assert_eq!(w1, w2);
        assert_eq!(h1.epochs.len(), 2);
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = ModelConfig::tiny();
        let set = SequenceSet::from_epochs(&epochs(1, 4, cfg.input_len), 1);
        let mut m = Model::<f32>::new(cfg, 2).unwrap();
        m.params_mut()[0].data_mut()[0] = f32::INFINITY;
        let dir = tempfile::tempdir().unwrap();
        let tc = TrainConfig {
            max_epochs: 1,
            divergence_dump: Some(dir.path().join("dump.ssw")),
            ..TrainConfig::default()
        };
        assert!(matches!(
            fit(&mut m, &set, None, &tc, None),
            Err(NetError::DivergenceDetected { epoch: 1, batch: 0, .. })
        ));
        assert!(dir.path().join("dump.ssw").exists());
    }

    #[test]
    fn empty_and_mismatched_sets() {
        let cfg = ModelConfig::tiny();
        let mut m = Model::<f32>::new(cfg, 3).unwrap();
        assert!(matches!(
            fit(&mut m, &SequenceSet::default(), None, &TrainConfig::default(), None),
            Err(NetError::EmptyDataset)
        ));
        let wrong = SequenceSet::from_epochs(&epochs(1, 4, 100), 1);
        assert!(matches!(
            fit(&mut m, &wrong, None, &TrainConfig::default(), None),
            Err(NetError::ShapeMismatch(_))
        ));
    }
}
