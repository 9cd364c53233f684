//! Proof-of-work ledgers for the miner and gateway networks, and the round
//! pipeline that fills them.

pub mod block;
pub mod codec;
pub mod payload;
pub mod round;

use thiserror::Error;

pub use block::{mine_block, mine_genesis, validate_block, validate_chain, Block, Hash, Ledger, Network};
pub use round::{latest_prior, recover_tn_entry, RoundOutcome, Simulation};

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("block {0} does not extend the chain")]
    InvalidBlock(u64),
    #[error("{network} chain invalid at height {height}")]
    InvalidChain { network: &'static str, height: u64 },
    #[error("ledger is empty")]
    EmptyLedger,
    #[error("corrupt ledger: {0}")]
    CorruptLedger(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("no entry for farm {0}")]
    MissingFarm(u32),
    #[error(transparent)]
    Codec(#[from] codec::CodecError),
    #[error(transparent)]
    Crypto(#[from] crate::crypto::CryptoError),
    #[error(transparent)]
    Field(#[from] crate::field::FieldError),
    #[error(transparent)]
    Bayes(#[from] crate::bayes::BayesError),
    #[error(transparent)]
    Credit(#[from] crate::credit::CreditError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
}
