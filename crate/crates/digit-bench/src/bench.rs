use itsa_core::Metric;

use crate::dataset::{AccessLog, LabeledImageSet, Mnist};
use crate::error::{DigitError, Result};
use crate::mnistm::synth_mnistm_set;
use crate::train::{train_digit, DigitRunConfig, TrainedDigit};

pub const TARGET_SEED: u64 = 777;
pub const VAL_SIZE: usize = 1000;

/// Source splits plus the synthetic target copy of the source test digits.
#[derive(Clone, Debug)]
pub struct DigitSplits {
    pub source_train: LabeledImageSet,
    pub source_val: LabeledImageSet,
    pub source_test: LabeledImageSet,
    pub target_test: LabeledImageSet,
}

impl DigitSplits {
    /// The last `val_size` training images become the validation split.
    pub fn new(mnist: &Mnist, val_size: usize, target_seed: u64) -> Result<Self> {
        let n = mnist.train.len();
        if val_size >= n {
            return Err(DigitError::InvalidConfig(format!("val_size {val_size} >= {n} training images")));
        }
        let train_idx: Vec<usize> = (0..n - val_size).collect();
        let val_idx: Vec<usize> = (n - val_size..n).collect();
        Ok(Self {
            source_train: mnist.train.select(&train_idx, "source_train"),
            source_val: mnist.train.select(&val_idx, "source_val"),
            source_test: mnist.test.clone(),
            target_test: synth_mnistm_set(&mnist.test, target_seed, "target_test")?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct DigitOutcome {
    pub model: TrainedDigit,
    pub source_top1: f64,
    pub target_top1: f64,
    pub log: AccessLog,
}

impl DigitOutcome {
    /// Training metrics followed by the final test accuracies.
    pub fn metrics(&self) -> Vec<Metric> {
        let last = self.model.metrics.last().map_or(0, |m| m.epoch);
        let mut out = self.model.metrics.clone();
        out.push(Metric::new(last, "source_test", "top1", self.source_top1));
        out.push(Metric::new(last, "target_test", "top1", self.target_top1));
        out
    }
}

/// Trains on the source splits, then evaluates on source and target test sets.
pub fn run_digit(cfg: &DigitRunConfig, splits: &DigitSplits) -> Result<DigitOutcome> {
    let mut log = AccessLog::default();
    let model = train_digit(cfg, &splits.source_train, Some(&splits.source_val), &mut log)?;
    log.record("eval", &splits.source_test);
    log.record("eval", &splits.target_test);
    let source_top1 = model.eval_top1(&splits.source_test)?;
    let target_top1 = model.eval_top1(&splits.target_test)?;
    Ok(DigitOutcome { model, source_top1, target_top1, log })
}
