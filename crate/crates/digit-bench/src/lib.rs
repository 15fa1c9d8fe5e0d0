//! Single-source digit benchmark.
//!
//! Networks are trained on MNIST digits replicated to three channels and
//! evaluated on the same digits composited onto procedural colour
//! backgrounds. Methods: plain cross-entropy (`erm`), variational bottleneck
//! (`ib`), Fisher-penalised stochastic encoder (`rib`) and the shortcut
//! perturbation objective (`itsa`).

mod bench;
mod dataset;
mod error;
pub mod idx;
pub mod mnistm;
mod net;
mod train;

pub use bench::{run_digit, DigitOutcome, DigitSplits, TARGET_SEED, VAL_SIZE};
pub use dataset::{default_mnist_dir, load_mnist, AccessLog, ChannelStats, LabeledImageSet, Mnist, NUM_CLASSES};
pub use error::{DigitError, Result};
pub use idx::{load_idx, IdxFile, IdxImages};
pub use mnistm::{synth_mnistm, synth_mnistm_set, texture_patch, BACKGROUND_MAX};
pub use net::{Bottleneck, DigitNet, Method, INPUT_SHAPE, LATENT};
pub use train::{eval_top1, train_digit, DigitRunConfig, TrainedDigit};
