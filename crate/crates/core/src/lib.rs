pub mod bayes;
pub mod chain;
pub mod config;
pub mod credit;
pub mod crypto;
pub mod experiment;
pub mod field;
pub mod kinetics;
pub mod metrics;
pub mod rng;
pub mod svg;
