pub mod agent;
pub mod calls;
pub mod digest;
pub mod eval;
pub mod exec;
pub mod gateway;
pub mod model;
pub mod pipeline;
pub mod store;
pub mod tools;

pub use model::{DataPoint, FileArtifact, FileKind, Step, Task, Termination, Trajectory, Verdict};
