//! Constructive calculus for ReLU networks and its application to transport PDE flows.

pub mod approx;
pub mod error;
pub mod flow;
pub mod io;
pub mod net;
pub mod ode;
pub mod ops;
pub mod problems;
pub mod stats;

pub use error::{Error, Result};
pub use net::{affine_net, identity_net, norm, Activation, Ann, Architecture, Layer};
