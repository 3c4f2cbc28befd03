//! Block-aware street navigation: the graph environment, a synthetic world
//! and instruction generator, the locate-then-plan agent, and the training
//! and evaluation harness.

pub mod agent;
pub mod envgraph;
pub mod harness;
pub mod worldgen;
