//! Pipeline-parallel training: the model is cut into K contiguous stages
//! that exchange activations forward and activation gradients backward.
//! One stage may carry a passive tap that copies what it receives.

mod partition;
mod runner;
mod similarity;
mod stage;
mod tap;

pub use partition::{partition_model, StageSpec};
pub use runner::{
    build_schedule, log_to_json_lines, record_chunk, run_training, train_monolithic, ChunkSource, LogEntry, Pipeline,
    PipelineConfig, ScheduledStep, TrainingData, TrainingOutcome,
};
pub use similarity::activation_similarity_study;
pub(crate) use similarity::cosine;
pub use stage::{StageInput, StageModel, StageOutput, StageWorker};
pub use tap::{
    read_activation_dump, tap_activations, write_activation_dump, ActivationRecord, ActivationTap, Message,
    MessageKind,
};
