pub mod analysis;
pub mod cli;
pub mod config;
pub mod domain;
pub mod driver;
pub mod neighbor;
pub mod trajectory;
