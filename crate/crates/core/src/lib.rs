pub mod attention;
pub mod autodiff;
pub mod config;
pub mod error;
pub mod eval;
pub mod export;
mod init;
pub mod loss;
pub mod network;
pub mod score;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
