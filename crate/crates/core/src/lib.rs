//! Memory enhanced embedding learning for cross-modal retrieval.
//!
//! Two MLP branches embed precomputed video and text features into a shared
//! unit sphere. Training combines a batch-hard triplet ranking loss with
//! masked InfoNCE terms against two cross-modal FIFO memory queues (filled
//! by EMA momentum encoders for stability) and a center loss that pulls the
//! multiple captions of a video together. Evaluation reports R@{1,5,10},
//! median and mean rank in both retrieval directions.
//!
//! Modules:
//! - [`numerics`]: matrices, normalization/softmax gradients, seeded PRNG
//! - [`encoder`]: MLP forward/backward, momentum (EMA) encoder pairs
//! - [`memory`]: cross-modal queues, masked logits, text center bank
//! - [`objective`]: the four loss terms and their combination
//! - [`trainer`]: the training loop, Adam, evaluation, best-model tracking
//! - [`checkpoint`]: bit-exact binary state serialization
//! - [`retrieval`]: ranking and the retrieval metric suite
//! - [`datakit`]: dataset container, synthetic generator, feature file I/O

pub mod checkpoint;
pub mod datakit;
pub mod encoder;
pub mod error;
pub mod memory;
pub mod numerics;
pub mod objective;
pub mod retrieval;
pub mod trainer;

pub use error::{MeelError, Result};

pub use datakit::{generate_synthetic, load_dataset, Dataset, Splits, SynthConfig};
pub use retrieval::RetrievalReport;
pub use trainer::{evaluate, fit, EvalEncoder, SplitKind, TrainConfig, Trainer};
