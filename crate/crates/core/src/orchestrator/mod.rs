//! Daemons that run a job: one controller, a head per node, a fault daemon
//! per rank.

pub mod barrier;
pub mod controller;
pub mod fault;
pub mod head;
pub mod hub;
pub mod plan;
