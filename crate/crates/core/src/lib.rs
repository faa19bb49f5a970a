pub mod market_model;
pub mod quantizer;
pub mod grid;
pub mod solver;
pub mod simulator;
pub mod stats;
