pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod network;
pub mod penalty;
pub mod qut;
pub mod seeding;
pub mod simlab;
pub mod trainer;

pub use error::{Error, Result};
