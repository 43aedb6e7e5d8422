pub mod data;
pub mod learn;
pub mod monitor;
pub mod sim;
