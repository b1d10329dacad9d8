//! Two-stage training, ablations, evaluation and run directories.

mod config;
mod data;
mod gradcheck;
mod optim;
mod parallel;
mod report;
mod run;
mod stage1;
mod stage2;
mod trainer;

pub use config::{FusionMode, ParaphraseTarget, TrainConfig, TRAIN_KEYS};
pub use data::{Example, Prepared, SPLITS};
pub use gradcheck::{gradcheck_suite, GradCheckCase, GradCheckScale, GRADCHECK_TOLERANCE};
pub use optim::{AdamW, LinearSchedule};
pub use parallel::{num_threads, par_map};
pub use report::EvalReport;
pub use run::{train_run, RunConfig, RunDir, RunOutcome, Stage1Artifacts};
pub use stage1::{cache_representations, predict_stage1, stage1_loss, train_stage1};
pub use stage2::{
    compute_neighbours, predict_stage2, stage2_forward, stage2_loss, train_stage2, Neighbours, Stage2Env,
    Stage2Heads, Stage2Model, Stage2Output,
};
