//! Modelling and performance analysis of probabilistic split-join systems.
//!
//! A probabilistic split-join system (pSJS) describes processes that split
//! into parallel subprocesses and later join on synchronisation states. This
//! crate provides:
//!
//! - a textual model format with exact rational probabilities ([`parse`]),
//! - the Markov-chain semantics over configuration trees and a seeded Monte
//!   Carlo simulator ([`tree`], [`sim`]),
//! - termination-probability solvers (Kleene and Newton iteration, plus an
//!   exact zero-set computation) ([`solver`]),
//! - model transforms: normalisation, translation to and from probabilistic
//!   pushdown systems, the finite-space transform, and the conditioned
//!   branching process ([`transform`]),
//! - distribution and expectation analyses for time, work, and space
//!   ([`perf`]),
//! - generators for the divide-and-conquer and game-tree evaluation case
//!   studies ([`casestudy`]).

pub mod casestudy;
pub mod model;
pub mod parse;
pub mod perf;
pub mod sim;
pub mod solver;
pub mod transform;
pub mod tree;
