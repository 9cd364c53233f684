//! Farm credit accounting and token traceability.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::{argmax_column, Column};
use crate::kinetics::ResponseClass;

/// Default starting balance.
pub const DEFAULT_INITIAL_CREDITS: f64 = 500.0;
/// Default exponent scale for penalties, rewards and class tokens.
pub const DEFAULT_ALPHA: f64 = 0.05;
/// Width of one response class in RF percent; divides class tokens so that
/// declared and detected amounts share a scale.
pub const CLASS_WIDTH_PERCENT: f64 = 20.0;
/// Default traceability threshold on normalized token units.
pub const DEFAULT_TRACE_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CreditError {
    #[error("probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("bag fraction must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
}

/// How a round's posterior column is turned into an E / not-E event.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "threshold")]
pub enum CompliancePredicate {
    /// The round counts as E when E is the posterior argmax.
    #[default]
    Argmax,
    /// The round counts as compliant when `P(not E) >= threshold`.
    NotEThreshold(f64),
}

impl CompliancePredicate {
    /// True when the column counts as a class-E round. An all-zero column
    /// carries no evidence and is never E.
    pub fn is_e(&self, column: &Column) -> bool {
        let p_e = column[ResponseClass::E.index()];
        match *self {
            CompliancePredicate::Argmax => argmax_column(column) == Some(ResponseClass::E),
            CompliancePredicate::NotEThreshold(t) => {
                column.iter().any(|&p| p > 0.0) && (1.0 - p_e) < t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarmAccount {
    pub farm_id: u32,
    pub credits: f64,
    pub cum_freq_e: u32,
    pub cum_freq_not_e: u32,
    /// Value of `cum_freq_e` when credits were last settled.
    pub settled_freq_e: u32,
    pub history: Vec<(u64, f64)>,
}

impl FarmAccount {
    pub fn new(farm_id: u32, initial_credits: f64) -> Self {
        Self {
            farm_id,
            credits: initial_credits,
            cum_freq_e: 0,
            cum_freq_not_e: 0,
            settled_freq_e: 0,
            history: Vec::new(),
        }
    }

    pub fn completed_rounds(&self) -> u32 {
        self.cum_freq_e + self.cum_freq_not_e
    }

    /// Books one round's E / not-E outcome.
    pub fn record_round(&mut self, is_e: bool) {
        if is_e {
            self.cum_freq_e += 1;
        } else {
            self.cum_freq_not_e += 1;
        }
    }
}

/// Settles credits for the round just recorded and appends `(round, credits)`
/// to the history. Credits move only when the E count changed since the last
/// settlement: `Cr - p_E e^(a f_E) + (1 - p_E) e^(a f_notE)`.
pub fn update_credit(
    account: &FarmAccount,
    p_e: f64,
    alpha: f64,
    round: u64,
) -> Result<FarmAccount, CreditError> {
    if !(0.0..=1.0).contains(&p_e) {
        return Err(CreditError::InvalidProbability(p_e));
    }
    let mut next = account.clone();
    if next.cum_freq_e != next.settled_freq_e {
        let penalty = p_e * (alpha * next.cum_freq_e as f64).exp();
        let reward = (1.0 - p_e) * (alpha * next.cum_freq_not_e as f64).exp();
        next.credits = next.credits - penalty + reward;
        next.settled_freq_e = next.cum_freq_e;
    }
    next.history.push((round, next.credits));
    Ok(next)
}

/// `e^(alpha i)` for class index `i` = 1..5 (A..E).
pub fn class_token_amount(class: ResponseClass, alpha: f64) -> f64 {
    (alpha * class.code() as f64).exp()
}

/// Class tokens divided by the class width.
pub fn normalized_class_tokens(class: ResponseClass, alpha: f64) -> f64 {
    class_token_amount(class, alpha) / CLASS_WIDTH_PERCENT
}

/// Farmer-side tokens for using `bag_fraction` of a bag worth
/// `tokens_per_bag`.
pub fn declared_tokens_for_usage(bag_fraction: f64, tokens_per_bag: u64) -> Result<f64, CreditError> {
    if !(0.0..=1.0).contains(&bag_fraction) {
        return Err(CreditError::InvalidFraction(bag_fraction));
    }
    Ok(bag_fraction * tokens_per_bag as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTransfer {
    pub farm_id: u32,
    pub round: u64,
    pub declared_tokens: f64,
    pub detected_tokens: f64,
}

impl TokenTransfer {
    /// Declared tokens come from the class the farmer reports using; detected
    /// tokens from the posterior argmax. A column with no mass detects nothing.
    pub fn from_classes(
        farm_id: u32,
        round: u64,
        declared: ResponseClass,
        detected: &Column,
        alpha: f64,
    ) -> Self {
        Self {
            farm_id,
            round,
            declared_tokens: normalized_class_tokens(declared, alpha),
            detected_tokens: argmax_column(detected)
                .map(|c| normalized_class_tokens(c, alpha))
                .unwrap_or(0.0),
        }
    }
}

/// Strict comparison: `|declared - detected| < threshold`.
pub fn traceability_check(transfer: &TokenTransfer, threshold: f64) -> Result<bool, CreditError> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(CreditError::InvalidThreshold(threshold));
    }
    Ok((transfer.declared_tokens - transfer.detected_tokens).abs() < threshold)
}

/// Per-round credit snapshots across farms, exported as
/// `round,farm_id,credits,f_E`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CreditLog {
    pub rows: Vec<(u64, u32, f64, u32)>,
}

impl CreditLog {
    pub fn record(&mut self, round: u64, accounts: &[FarmAccount]) {
        for a in accounts {
            self.rows.push((round, a.farm_id, a.credits, a.cum_freq_e));
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "round,farm_id,credits,f_E")?;
        for (round, farm, credits, f_e) in &self.rows {
            writeln!(out, "{round},{farm},{credits},{f_e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn after_e_round(not_e: u32) -> FarmAccount {
        let mut a = FarmAccount::new(1, 500.0);
        a.cum_freq_not_e = not_e;
        a.record_round(true);
        a
    }

    #[test]
    fn unchanged_e_count_keeps_credits() {
        let mut a = FarmAccount::new(1, 500.0);
        a.record_round(false);
        let b = update_credit(&a, 0.3, 0.05, 0).unwrap();
        assert_eq!(b.credits, 500.0);
        assert_eq!(b.history, vec![(0, 500.0)]);
    }

    #[test]
    fn first_e_round_with_certain_e() {
        let b = update_credit(&after_e_round(0), 1.0, 0.05, 0).unwrap();
        assert!((b.credits - 498.9487).abs() < 1e-4, "{}", b.credits);
    }

    #[test]
    fn first_e_round_with_mixed_posterior() {
        let b = update_credit(&after_e_round(3), 0.6, 0.05, 3).unwrap();
        assert!((b.credits - 499.8340).abs() < 1e-4, "{}", b.credits);
    }

    #[test]
    fn settles_once_per_change() {
        let a = update_credit(&after_e_round(0), 1.0, 0.05, 0).unwrap();
        let mut a2 = a.clone();
        a2.record_round(false);
        let b = update_credit(&a2, 1.0, 0.05, 1).unwrap();
        assert_eq!(b.credits, a.credits);
    }

    #[test]
    fn rejects_bad_probability() {
        let a = FarmAccount::new(0, 500.0);
        assert!(update_credit(&a, 1.5, 0.05, 0).is_err());
        assert!(update_credit(&a, f64::NAN, 0.05, 0).is_err());
    }

    #[test]
    fn class_tokens() {
        assert!((class_token_amount(ResponseClass::A, 0.05) - 1.0513).abs() < 1e-4);
        assert!((class_token_amount(ResponseClass::E, 0.05) - 1.2840).abs() < 1e-4);
        for c in ResponseClass::ALL {
            assert_eq!(class_token_amount(c, 0.0), 1.0);
        }
    }

    #[test]
    fn declared_tokens() {
        assert!((declared_tokens_for_usage(0.1, 1000).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(declared_tokens_for_usage(0.0, 1000).unwrap(), 0.0);
        assert_eq!(declared_tokens_for_usage(1.0, 1000).unwrap(), 1000.0);
        assert!(declared_tokens_for_usage(1.2, 1000).is_err());
    }

    #[test]
    fn traceability_is_strict() {
        let t = TokenTransfer {
            farm_id: 0,
            round: 0,
            declared_tokens: 0.5,
            detected_tokens: 0.5,
        };
        assert!(traceability_check(&t, 1e-3).unwrap());
        let t = TokenTransfer {
            detected_tokens: 0.75,
            ..t
        };
        assert!(!traceability_check(&t, 0.25).unwrap());
        assert!(traceability_check(&t, 0.0).is_err());
    }

    #[test]
    fn adjacent_classes_fail_default_threshold() {
        for w in ResponseClass::ALL.windows(2) {
            let d = normalized_class_tokens(w[1], DEFAULT_ALPHA) - normalized_class_tokens(w[0], DEFAULT_ALPHA);
            assert!(d > DEFAULT_TRACE_THRESHOLD);
        }
    }

    #[test]
    fn transfer_from_exact_detection_is_compliant() {
        let mut col = [0.0; 5];
        col[ResponseClass::C.index()] = 1.0;
        let t = TokenTransfer::from_classes(3, 0, ResponseClass::C, &col, DEFAULT_ALPHA);
        assert!(traceability_check(&t, DEFAULT_TRACE_THRESHOLD).unwrap());
        let t = TokenTransfer::from_classes(3, 0, ResponseClass::C, &[0.0; 5], DEFAULT_ALPHA);
        assert_eq!(t.detected_tokens, 0.0);
    }

    #[test]
    fn predicates() {
        let e = [0.0, 0.0, 0.1, 0.2, 0.7];
        assert!(CompliancePredicate::Argmax.is_e(&e));
        assert!(CompliancePredicate::NotEThreshold(0.8).is_e(&e));
        let mostly_d = [0.0, 0.0, 0.0, 0.85, 0.15];
        assert!(!CompliancePredicate::NotEThreshold(0.8).is_e(&mostly_d));
        let split = [0.0, 0.0, 0.0, 0.75, 0.25];
        assert!(!CompliancePredicate::Argmax.is_e(&split));
        assert!(CompliancePredicate::NotEThreshold(0.8).is_e(&split));
        assert!(!CompliancePredicate::NotEThreshold(0.8).is_e(&[0.0; 5]));
    }

    #[test]
    fn log_csv_header() {
        let mut log = CreditLog::default();
        log.record(0, &[FarmAccount::new(7, 500.0)]);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "round,farm_id,credits,f_E\n0,7,500,0\n");
    }

    proptest! {
        #[test]
        fn never_e_never_drops(rounds in 1usize..40, p in 0.0f64..=1.0, alpha in 0.0f64..0.5) {
            let mut a = FarmAccount::new(0, 500.0);
            for r in 0..rounds {
                a.record_round(false);
                a = update_credit(&a, p, alpha, r as u64).unwrap();
                prop_assert!(a.credits >= 500.0);
            }
        }

        #[test]
        fn always_e_penalty_grows_geometrically(rounds in 2usize..30, alpha in 0.01f64..0.3) {
            let mut a = FarmAccount::new(0, 500.0);
            let mut prev_penalty = None;
            for r in 0..rounds {
                let before = a.credits;
                a.record_round(true);
                a = update_credit(&a, 1.0, alpha, r as u64).unwrap();
                let penalty = before - a.credits;
                prop_assert!(penalty > 0.0);
                if let Some(p) = prev_penalty {
                    let ratio: f64 = penalty / p;
                    prop_assert!((ratio - alpha.exp()).abs() < 1e-9);
                }
                prev_penalty = Some(penalty);
            }
        }

        #[test]
        fn tokens_increase_with_class(alpha in 1e-3f64..1.0) {
            for w in ResponseClass::ALL.windows(2) {
                prop_assert!(class_token_amount(w[1], alpha) > class_token_amount(w[0], alpha));
            }
        }
    }
}
