//! Grid expansion, content-addressed task graphs, resumable execution and
//! the experiment sweeps.
//!
//! A run directory holds `tasks/<id>/` for every completed task,
//! `<name>.manifest.json` for every finished run, `<name>.dataset.json` when
//! IQ is persisted, and `sweeps/` for sweep results.

pub mod config;
pub mod dag;
pub mod grid;
pub mod runner;
pub mod scenes;
pub mod sweeps;
pub mod tasks;

pub use config::PipelineConfig;
pub use dag::{TaskDag, TaskKind, TaskNode};
pub use grid::{ParameterGrid, Params};
pub use runner::{run, run_dag, RunManifest, RunOptions, RunSummary, RUN_DIR_ENV};
pub use scenes::SceneKind;
pub use sweeps::{run_sweep, SweepKind, SweepOutcome};
pub use tasks::{simulate, Simulation};
