//! Long-term client selection for federated learning.
//!
//! The crate is organised the way a round flows through the server:
//!
//! * [`scenario`] generates client populations and per-round channels.
//! * [`quality`] keeps the cumulative category ledger and scores data.
//! * [`energy`] prices local training and model upload.
//! * [`swm`] picks clients, iteration counts and bandwidth.
//! * [`auction`] settles rewards and deposits and audits incentives.
//! * [`flsim`] runs the whole loop on a softmax-regression surrogate.

pub mod auction;
pub mod energy;
pub mod error;
pub mod flsim;
pub mod quality;
pub mod rng;
pub mod scenario;
pub mod swm;

pub use error::{Error, Result};
