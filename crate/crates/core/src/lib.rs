//! Anti-jamming spectrum auctions for cognitive radio networks.
//!
//! A secondary-user coordinator allocates idle primary-user channels through
//! a truthful auction while a jammer attacks one idle channel per slot. The
//! crate provides the stochastic channel environment, an exact zero-sum game
//! solver with row elimination, the assignment auction and its payments, the
//! centralized coordinator-vs-jammer stage game, the decentralized learning
//! variant, and a seeded experiment harness.

pub mod auction;
pub mod envsim;
pub mod error;
pub mod harness;
pub mod matgame;
pub mod oracle;
pub mod pcgame;
pub mod pdgame;

pub use error::{Error, Result};
