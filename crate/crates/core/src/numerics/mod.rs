//! Dense tensors, reverse-mode gradients, AdamW and learning-rate schedules.

pub mod adamw;
pub mod schedule;
pub mod tape;
pub mod tensor;

pub use adamw::{adamw_step, AdamWConfig, OptimizerState, Parameter, ParameterSet};
pub use schedule::{lr_at, LrSchedule, ScheduleKind};
pub use tape::{GradientMap, Tape, Var};
pub use tensor::{cosine, dot, Tensor};
