pub mod distribution;
pub mod error;
pub mod local_risk;
pub mod model;
pub mod normal;
pub mod regression;
pub mod rng;
pub mod curve;
pub mod pac;
pub mod certify;
pub mod synthetic;
pub mod bench;
pub mod decomposition;
pub mod mine;
pub mod config;
pub mod manifest;
pub mod cli;
