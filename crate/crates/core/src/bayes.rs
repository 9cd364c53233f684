//! Sequential Bayesian updating of per-farm class probabilities.
//!
//! For each farm the likelihood column `f` (that farm's share of every class
//! row) is multiplied element-wise with the prior column `p`. The posterior
//! column is the normalized product, or all zeros when the product vanishes.
//! The next prior is the product itself, except that classes with zero
//! likelihood keep their previous prior value.
//!
//! The next prior is stored rescaled to unit column sum. That update rule is
//! homogeneous in each prior column, so posteriors are unaffected by the
//! rescaling, and long streams no longer underflow.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{write_class_rows, ConditionalMatrix, N_CLASSES};
use crate::kinetics::ResponseClass;

pub type Column = [f64; N_CLASSES];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BayesError {
    #[error("prior has {prior} farms but likelihood has {likelihood}")]
    ShapeMismatch { prior: usize, likelihood: usize },
    #[error("likelihood stream is empty")]
    EmptyStream,
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
}

/// Prior `P(class)` per farm, carried between updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorMatrix {
    pub columns: Vec<Column>,
    pub step: u64,
}

impl PriorMatrix {
    /// `0.2` for every class of every farm.
    pub fn uniform(n_farms: usize) -> Self {
        Self {
            columns: vec![[1.0 / N_CLASSES as f64; N_CLASSES]; n_farms],
            step: 0,
        }
    }

    pub fn n_farms(&self) -> usize {
        self.columns.len()
    }

    pub fn write_csv<W: Write>(&self, out: W, farm_ids: &[u32]) -> std::io::Result<()> {
        write_class_rows(out, farm_ids, |c, f| self.columns[f][c.index()].to_string())
    }
}

/// Posterior `P(class | farm)`; every column sums to one or is all zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMatrix {
    pub columns: Vec<Column>,
    pub step: u64,
}

impl PosteriorMatrix {
    pub fn n_farms(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, class: ResponseClass, farm: usize) -> f64 {
        self.columns[farm][class.index()]
    }

    /// Most probable class per farm; ties go to the lower class and all-zero
    /// columns have none.
    pub fn argmax(&self) -> Vec<Option<ResponseClass>> {
        self.columns.iter().map(argmax_column).collect()
    }

    /// Farms whose column is all zero (prior and likelihood share no support).
    pub fn zero_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.iter().all(|&p| p == 0.0))
            .map(|(i, _)| i)
            .collect()
    }

    /// Column-normalized copy of a prior, used as the reference point for the
    /// first update's change.
    pub fn from_prior(prior: &PriorMatrix) -> Self {
        Self {
            columns: prior.columns.iter().map(normalized).collect(),
            step: prior.step,
        }
    }

    pub fn l1_distance(&self, other: &PosteriorMatrix) -> f64 {
        self.columns
            .iter()
            .zip(&other.columns)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .sum()
    }

    pub fn write_csv<W: Write>(&self, out: W, farm_ids: &[u32]) -> std::io::Result<()> {
        write_class_rows(out, farm_ids, |c, f| self.columns[f][c.index()].to_string())
    }
}

pub fn argmax_column(column: &Column) -> Option<ResponseClass> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in column.iter().enumerate() {
        if p > 0.0 && best.is_none_or(|(_, b)| p > b) {
            best = Some((i, p));
        }
    }
    best.and_then(|(i, _)| ResponseClass::from_index(i))
}

fn normalized(column: &Column) -> Column {
    let sum: f64 = column.iter().sum();
    if sum > 0.0 {
        column.map(|p| p / sum)
    } else {
        [0.0; N_CLASSES]
    }
}

/// One update over all farms. Returns the posterior and the next prior.
pub fn sbu_step(
    prior: &PriorMatrix,
    likelihood: &ConditionalMatrix,
) -> Result<(PosteriorMatrix, PriorMatrix), BayesError> {
    if prior.n_farms() != likelihood.n_farms() {
        return Err(BayesError::ShapeMismatch {
            prior: prior.n_farms(),
            likelihood: likelihood.n_farms(),
        });
    }
    let step = prior.step + 1;
    let (post, next): (Vec<Column>, Vec<Column>) = prior
        .columns
        .iter()
        .zip(&likelihood.columns)
        .map(|(p, f)| {
            let mut product = [0.0; N_CLASSES];
            for k in 0..N_CLASSES {
                product[k] = f[k] * p[k];
            }
            let posterior = normalized(&product);
            let mut carried = product;
            for k in 0..N_CLASSES {
                if f[k] == 0.0 {
                    carried[k] = p[k];
                }
            }
            (posterior, normalized(&carried))
        })
        .unzip();
    Ok((
        PosteriorMatrix {
            columns: post,
            step,
        },
        PriorMatrix {
            columns: next,
            step,
        },
    ))
}

/// Incremental SBU state: the prior to use next and the latest posterior.
#[derive(Debug, Clone)]
pub struct SbuState {
    prior: PriorMatrix,
    posterior: PosteriorMatrix,
}

impl SbuState {
    pub fn new(prior: PriorMatrix) -> Self {
        let posterior = PosteriorMatrix::from_prior(&prior);
        Self { prior, posterior }
    }

    /// Applies one likelihood and returns the L1 change of the posterior.
    pub fn update(&mut self, likelihood: &ConditionalMatrix) -> Result<f64, BayesError> {
        let (posterior, prior) = sbu_step(&self.prior, likelihood)?;
        let change = posterior.l1_distance(&self.posterior);
        self.posterior = posterior;
        self.prior = prior;
        Ok(change)
    }

    pub fn prior(&self) -> &PriorMatrix {
        &self.prior
    }

    pub fn posterior(&self) -> &PosteriorMatrix {
        &self.posterior
    }

    pub fn into_parts(self) -> (PosteriorMatrix, PriorMatrix) {
        (self.posterior, self.prior)
    }
}

/// Result of folding a likelihood stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SbuRun {
    pub posterior: PosteriorMatrix,
    pub next_prior: PriorMatrix,
    pub steps_used: usize,
    /// L1 change of the posterior after each step.
    pub changes: Vec<f64>,
    /// Set when the run stopped because the change fell to `epsilon`.
    pub converged: bool,
}

impl SbuRun {
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,d")?;
        for (i, d) in self.changes.iter().enumerate() {
            writeln!(out, "{},{d}", i + 1)?;
        }
        Ok(())
    }
}

/// Applies [`sbu_step`] along `stream` until the posterior changes by at most
/// `epsilon` (L1 over all entries) or the stream runs out.
pub fn run_sbu(
    prior0: &PriorMatrix,
    stream: &[ConditionalMatrix],
    epsilon: f64,
) -> Result<SbuRun, BayesError> {
    if stream.is_empty() {
        return Err(BayesError::EmptyStream);
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(BayesError::InvalidEpsilon(epsilon));
    }
    let mut state = SbuState::new(prior0.clone());
    let mut changes = Vec::new();
    let mut converged = false;
    for likelihood in stream {
        let d = state.update(likelihood)?;
        changes.push(d);
        if d <= epsilon {
            converged = true;
            break;
        }
    }
    let steps_used = changes.len();
    let (posterior, next_prior) = state.into_parts();
    Ok(SbuRun {
        posterior,
        next_prior,
        steps_used,
        changes,
        converged,
    })
}

/// Probability of not being in `target`, per farm. An all-zero posterior
/// column counts as full deviation.
pub fn deviation_from_class(posterior: &PosteriorMatrix, target: ResponseClass) -> Vec<f64> {
    posterior
        .columns
        .iter()
        .map(|c| {
            if c.iter().all(|&p| p == 0.0) {
                1.0
            } else {
                1.0 - c[target.index()]
            }
        })
        .collect()
}
