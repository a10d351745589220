//! Decentralized surrogate median regression.
//!
//! Robust sparse linear regression over a simulated peer-to-peer network:
//! every node holds part of the data, and nodes exchange coefficient vectors
//! only with graph neighbors. The median loss is replaced, outer iteration by
//! outer iteration, by a least-squares fit to pseudo-responses built from a
//! kernel density estimate; each least-squares problem is solved by a
//! linearized consensus ADMM that converges linearly.

pub mod admm;
pub mod baselines;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod lad;
pub mod lasso;
pub mod netsim;
pub mod surrogate;

pub use error::{Error, Result};
