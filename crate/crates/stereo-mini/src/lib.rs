//! Miniature stereo matching: procedural layered scenes with exact integer
//! disparities, a shared-weight feature extractor, a concatenation cost
//! volume, a 3-D convolutional aggregator and soft-argmin regression.
//!
//! Training methods are plain supervised (`baseline`), supervised with
//! gradient-perturbed inputs mixed in (`scp_only`), and the feature-distance
//! objective of `itsa-core` on both views (`itsa`).

mod error;
mod metrics;
mod net;
pub mod pfm;
mod sample;
mod scene;
mod shift;
mod train;
mod volume;

pub use error::{Result, StereoError};
pub use metrics::{d1_rate, epe, D1_THRESHOLD};
pub use net::{HeadTrace, StereoNet, StereoNetConfig, FEATURE_STRIDE};
pub use pfm::{load_pfm, read_pfm, save_pfm, write_pfm};
pub use sample::{stack, StereoSample};
pub use scene::{derive_seed, gen_scene, random_scene, RectLayer, Scene, SceneConfig, SceneSet, Texture, TextureKind};
pub use shift::{grayscale, shift_domain, AcjParams, ShiftKind};
pub use train::{evaluate, run_stereo, train_stereo, EvalResult, StereoMethod, StereoOutcome, StereoRunConfig, TrainedStereo, TEST_SEED};
pub use volume::{build_cost_volume, cost_volume_backward, soft_argmin, soft_argmin_backward, upsample, upsample_backward};
