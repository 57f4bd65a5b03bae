//! Adversarial training of the encoder, generator and discriminator, and
//! supervised training of the segmentation network.

pub mod data;
pub mod optim;
pub mod rng;
pub mod run;
pub mod seg;
pub mod trainer;

pub use data::{Batch, GuideBatch, TrainSet};
pub use optim::{Adam, AdamConfig};
pub use run::{train, train_segmentation, RunOptions};
pub use seg::SegTrainer;
pub use trainer::{StepLog, Trainer};
