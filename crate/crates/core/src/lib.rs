pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod features;
pub mod losses;
pub mod lp;
pub mod model;
pub mod signal;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
