//! Elastic message-passing runtime: a world whose membership can grow while
//! the job runs, by restart-and-grow, spawn-and-merge, or collective fork.

pub mod checkpoint;
pub mod demo;
pub mod launcher;
pub mod orchestrator;
pub mod runtime;
pub mod wire;
pub mod world;

pub use runtime::{InterComm, Runtime, RuntimeError, Status};
pub use world::{CommRef, Family, Rank, VersionTag, WorldHistory, WorldView};
