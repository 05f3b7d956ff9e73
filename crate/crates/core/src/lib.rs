//! Discover reusable options from demonstration trajectories.
//!
//! The pipeline has four stages:
//!
//! 1. [`demo`] generates expert trajectories in a tabular [`gridworld`].
//! 2. [`segmenter`] splits them into skills with a beta-process HMM whose
//!    emissions are Boltzmann policies over action-values recovered by
//!    maximum-entropy IRL ([`irl`]).
//! 3. [`options`] turns each skill into an option, learning initiation and
//!    termination sets with a one-class SVM ([`ocsvm`]).
//! 4. [`smdp`] measures how much the options speed up Q-learning.
//!
//! [`cli`] wires the stages together and handles artifacts.

pub mod cli;
pub mod demo;
pub mod error;
pub mod gridworld;
pub mod irl;
pub mod ocsvm;
pub mod options;
pub mod rng;
pub mod segmenter;
pub mod smdp;

pub use error::{Error, Result};
pub use gridworld::{Action, GridWorld, QTable, RewardFunction};
