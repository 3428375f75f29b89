//! Position prediction for teleoperated robot arms over lossy networks.
//!
//! The pipeline: a kinematic stream (JIGSAWS-style files or synthetic
//! trajectories) is corrupted by a 4-state hidden-Markov packet-loss channel
//! with delay and jitter, and sequence models (an Informer-style predictor
//! plus RNN/LSTM/TCN baselines) reconstruct the true 3D tool-tip position
//! from the corrupted history. Everything is seeded and deterministic: a run
//! can be reproduced bit-for-bit from its manifest.

pub mod baselines;
pub mod channel_sim;
pub mod cli;
pub mod data_io;
pub mod evaluation;
pub mod informer;
pub mod nn_core;
pub mod training;
pub mod util;
