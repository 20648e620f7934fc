//! Hierarchical human-robot collaboration planning and simulation.
//!
//! The crate is organized bottom-up:
//!
//! - [`taskgraph`]: And-Or task graph, temporal plan graphs, progress traces
//! - [`planner`]: action fusion, DTW route matching, plan refinement
//! - [`envsim`]: seeded simulated workcell producing keypoints and speech
//! - [`detection`]: operator selection and keypoint filters
//! - [`predictor`]: trend/seasonal trajectory model with an action head
//! - [`controller`]: motion primitives and the objective account
//! - [`infotheory`]: entropy and mutual information
//! - [`harness`]: datasets, factorial study, reports

pub mod controller;
pub mod detection;
pub mod envsim;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod infotheory;
pub mod planner;
pub mod predictor;
pub mod scenario;
pub mod taskgraph;

pub use error::{Error, Result};
pub use geometry::{Aabb, Point3};
pub use scenario::Scenario;
pub use taskgraph::{
    advance_progress, tpg_ready_vertices, Agent, Completion, JoinKind, NodeId, ProgressTrace,
    RouteSequence, SubtaskTpg, TaskGraph, TaskNode, VertexId, VertexKey,
};
