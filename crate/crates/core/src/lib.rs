//! Natural policy gradient and demo-augmented policy gradient for
//! continuous-control manipulation tasks.

pub mod baseline;
pub mod dapg;
pub mod demos;
pub mod envs;
pub mod harness;
pub mod error;
pub mod mdp;
pub mod npg;
pub mod par;
pub mod policy;
pub mod seed;

pub use error::{Error, Result};
