//! Server-side segmentation backends, the client-side unmixing network and
//! their training loops.

pub mod backend;
pub mod checkpoint;
pub mod train;
pub mod unmix;

pub use backend::{fingerprint, noisy_oracle_segment, oracle_segment, OracleAccess, OracleLedger, SegmentationBackend, TinyCnn};
pub use checkpoint::Checkpoint;
pub use train::{joint_objective, train_end_to_end, train_segmenter, train_unmixer, Sample, TrainConfig, TrainLog, TrainingSet};
pub use unmix::{unmix_net_apply, UnmixNet};
