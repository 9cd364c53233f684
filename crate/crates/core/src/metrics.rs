//! Detection scores and the per-farm argmax baseline.

use std::io::Write;

use thiserror::Error;

use crate::bayes::{argmax_column, PosteriorMatrix};
use crate::field::FrequencyTable;
use crate::kinetics::ResponseClass;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("length mismatch: {actual} actual vs {predicted} predicted")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("empty class vector")]
    Empty,
}

fn check(actual: &[ResponseClass], predicted: &[ResponseClass]) -> Result<(), MetricsError> {
    if actual.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Mean squared difference of class codes (A..E = 1..5).
pub fn mse(actual: &[ResponseClass], predicted: &[ResponseClass]) -> Result<f64, MetricsError> {
    check(actual, predicted)?;
    let sum: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (f64::from(a.code()) - f64::from(p.code())).powi(2))
        .sum();
    Ok(sum / actual.len() as f64)
}

/// Percentage of exact matches.
pub fn accuracy(actual: &[ResponseClass], predicted: &[ResponseClass]) -> Result<f64, MetricsError> {
    check(actual, predicted)?;
    let hits = actual.iter().zip(predicted).filter(|(a, p)| a == p).count();
    Ok(100.0 * hits as f64 / actual.len() as f64)
}

fn argmax_counts(column: &[u32; 5]) -> ResponseClass {
    let mut best = 0;
    for k in 1..5 {
        if column[k] > column[best] {
            best = k;
        }
    }
    ResponseClass::ALL[best]
}

/// Per-farm argmax of the window's counts, ties toward the lower class.
pub fn centralized_classify(table: &FrequencyTable) -> Vec<ResponseClass> {
    table.columns.iter().map(argmax_counts).collect()
}

/// Posterior argmax per farm. All-zero columns fall to class A, the same
/// answer the lower-class tie rule gives for a column of equal entries.
pub fn posterior_classify(posterior: &PosteriorMatrix) -> Vec<ResponseClass> {
    posterior
        .columns
        .iter()
        .map(|c| argmax_column(c).unwrap_or(ResponseClass::A))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Distributed,
    Centralized,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Distributed => "bc-iont",
            Method::Centralized => "centralized",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundScore {
    pub round: u64,
    pub method: Method,
    pub mse: f64,
    pub accuracy: f64,
}

impl RoundScore {
    pub fn new(round: u64, method: Method, actual: &[ResponseClass], predicted: &[ResponseClass]) -> Result<Self, MetricsError> {
        Ok(Self {
            round,
            method,
            mse: mse(actual, predicted)?,
            accuracy: accuracy(actual, predicted)?,
        })
    }
}

/// `round,method,mse,accuracy`.
pub fn write_scores_csv<W: Write>(mut out: W, scores: &[RoundScore]) -> std::io::Result<()> {
    writeln!(out, "round,method,mse,accuracy")?;
    for s in scores {
        writeln!(out, "{},{},{},{}", s.round, s.method.name(), s.mse, s.accuracy)?;
    }
    Ok(())
}
