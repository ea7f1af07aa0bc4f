//! Desk-scale training, gradient checking, data ingestion and checkpoints.

pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod optim;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use data::{augment, decode_cifar, load_cifar_binary, synth_dataset, Augment, Dataset, Split, SynthSpec};
pub use gradcheck::{gradcheck, gradcheck_network, GradcheckConfig, GradcheckReport};
pub use optim::{lr_schedule, sgd_step, SgdState, TrainConfig};
pub use train::{train, EpochRecord, History};
