pub mod basis;
pub mod check;
pub mod eigen;
pub mod error;
pub mod estimates;
pub mod galerkin;
pub mod grid;
pub mod io;
pub mod noise;
pub mod operators;
pub mod state;
pub mod vertical;

pub use error::{HsgsError, Result};
