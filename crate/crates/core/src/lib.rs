//! Adaptive low-rank variational integration of Lindblad master equations.

pub mod checkpoint;
pub mod error;
pub mod hilbert;
pub mod lindblad;
pub mod models;
pub mod numerics;
pub mod observables;
pub mod ode;
pub mod oracle;
pub mod random;
pub mod rank;
pub mod record;
pub mod state;
pub mod tdvp;
pub mod truncation;

pub use error::{Error, Result};
