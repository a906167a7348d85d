//! Simulation and analysis workbench for two-stage Markov decision tasks:
//! environments with goal and transition-uncertainty manipulations, tabular
//! and deep RL agents with prefrontal-style arbitration, goal-matching and
//! policy-matching training, behavioral datasets, and the recovery /
//! generalizability / information analyses that run on top of them.

pub mod agents;
pub mod analysis;
pub mod data;
pub mod env;
pub mod error;
pub mod rng;
pub mod training;
