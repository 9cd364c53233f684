//! Hash-linked blocks, proof-of-work and append-only ledgers.

use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use super::codec::{CodecError, Decoder, Encoder};
use super::payload::GenesisPayload;
use super::ChainError;

pub type Hash = [u8; 32];

/// Leading byte of every exported ledger record.
pub const EXPORT_FORMAT: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Network {
    Functional,
    Transaction,
}

impl Network {
    pub fn code(self) -> u8 {
        match self {
            Network::Functional => 0,
            Network::Transaction => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Network::Functional),
            1 => Some(Network::Transaction),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Network::Functional => "FN",
            Network::Transaction => "TN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub index: u64,
    pub prev_hash: Hash,
    pub payload: Vec<u8>,
    pub miner_id: u32,
    pub nonce: u64,
    /// Round number.
    pub timestamp: u64,
    pub hash: Hash,
}

fn prefix_hasher(index: u64, prev_hash: &Hash, payload: &[u8], miner_id: u32) -> Sha256 {
    let mut h = Sha256::new();
    h.update(index.to_be_bytes());
    h.update(prev_hash);
    h.update((payload.len() as u32).to_be_bytes());
    h.update(payload);
    h.update(miner_id.to_be_bytes());
    h
}

fn finish_hash(mut h: Sha256, nonce: u64, timestamp: u64) -> Hash {
    h.update(nonce.to_be_bytes());
    h.update(timestamp.to_be_bytes());
    h.finalize().into()
}

pub fn leading_zero_bits(hash: &Hash) -> u32 {
    let mut bits = 0;
    for &b in hash {
        if b == 0 {
            bits += 8;
        } else {
            bits += b.leading_zeros();
            break;
        }
    }
    bits
}

impl Block {
    pub fn compute_hash(&self) -> Hash {
        finish_hash(
            prefix_hasher(self.index, &self.prev_hash, &self.payload, self.miner_id),
            self.nonce,
            self.timestamp,
        )
    }

    pub fn meets_difficulty(&self, difficulty: u32) -> bool {
        leading_zero_bits(&self.hash) >= difficulty
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u64(self.index)
            .fixed(&self.prev_hash)
            .bytes(&self.payload)
            .u32(self.miner_id)
            .u64(self.nonce)
            .u64(self.timestamp)
            .fixed(&self.hash);
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let block = Block {
            index: d.u64()?,
            prev_hash: d.array()?,
            payload: d.bytes()?.to_vec(),
            miner_id: d.u32()?,
            nonce: d.u64()?,
            timestamp: d.u64()?,
            hash: d.array()?,
        };
        d.finish()?;
        Ok(block)
    }
}

/// Exhaustive nonce search from 0.
fn mine(index: u64, prev_hash: Hash, payload: Vec<u8>, miner_id: u32, difficulty: u32, timestamp: u64) -> Block {
    let prefix = prefix_hasher(index, &prev_hash, &payload, miner_id);
    let mut nonce = 0u64;
    let hash = loop {
        let hash = finish_hash(prefix.clone(), nonce, timestamp);
        if leading_zero_bits(&hash) >= difficulty {
            break hash;
        }
        nonce += 1;
    };
    Block {
        index,
        prev_hash,
        payload,
        miner_id,
        nonce,
        timestamp,
        hash,
    }
}

pub fn mine_genesis(payload: Vec<u8>, difficulty: u32) -> Block {
    mine(0, [0u8; 32], payload, 0, difficulty, 0)
}

pub fn mine_block(prev: &Block, payload: Vec<u8>, miner_id: u32, difficulty: u32, timestamp: u64) -> Block {
    mine(prev.index + 1, prev.hash, payload, miner_id, difficulty, timestamp)
}

pub fn validate_block(block: &Block, prev: &Block, difficulty: u32) -> bool {
    block.index == prev.index + 1
        && block.prev_hash == prev.hash
        && block.hash == block.compute_hash()
        && block.meets_difficulty(difficulty)
}

fn validate_genesis(block: &Block, network: Network, difficulty: u32) -> bool {
    block.index == 0
        && block.prev_hash == [0u8; 32]
        && block.hash == block.compute_hash()
        && block.meets_difficulty(difficulty)
        && GenesisPayload::decode(&block.payload)
            .map(|g| g.network == network && g.difficulty == difficulty)
            .unwrap_or(false)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ledger {
    pub network: Network,
    pub blocks: Vec<Block>,
}

impl Ledger {
    pub fn new(genesis: Block, network: Network) -> Self {
        Self {
            network,
            blocks: vec![genesis],
        }
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("ledger always holds genesis")
    }

    pub fn genesis(&self) -> &Block {
        &self.blocks[0]
    }

    /// Refuses blocks that do not extend the tip.
    pub fn append(&mut self, block: Block, difficulty: u32) -> Result<(), ChainError> {
        if !validate_block(&block, self.tip(), difficulty) {
            return Err(ChainError::InvalidBlock(block.index));
        }
        self.blocks.push(block);
        Ok(())
    }

    /// Height of the first block that fails validation.
    pub fn first_invalid(&self, difficulty: u32) -> Option<u64> {
        match self.blocks.first() {
            None => return Some(0),
            Some(g) if !validate_genesis(g, self.network, difficulty) => return Some(0),
            _ => {}
        }
        self.blocks
            .windows(2)
            .position(|w| !validate_block(&w[1], &w[0], difficulty))
            .map(|i| i as u64 + 1)
    }

    /// Difficulty declared by the genesis block.
    pub fn declared_difficulty(&self) -> Result<u32, ChainError> {
        let g = self.blocks.first().ok_or(ChainError::EmptyLedger)?;
        Ok(GenesisPayload::decode(&g.payload)?.difficulty)
    }

    /// One hex record per block: `format ‖ network ‖ block bytes`.
    pub fn export<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for b in &self.blocks {
            let mut rec = vec![EXPORT_FORMAT, self.network.code()];
            rec.extend_from_slice(&b.to_bytes());
            writeln!(out, "{}", hex::encode(rec))?;
        }
        Ok(())
    }

    pub fn import<R: BufRead>(input: R) -> Result<Self, ChainError> {
        let mut network = None;
        let mut blocks = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| ChainError::Parse(format!("line {}: {e}", i + 1)))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let rec = hex::decode(line).map_err(|e| ChainError::Parse(format!("line {}: {e}", i + 1)))?;
            if rec.len() < 2 || rec[0] != EXPORT_FORMAT {
                return Err(ChainError::Parse(format!("line {}: unknown record format", i + 1)));
            }
            let net = Network::from_code(rec[1])
                .ok_or_else(|| ChainError::Parse(format!("line {}: unknown network", i + 1)))?;
            if *network.get_or_insert(net) != net {
                return Err(ChainError::Parse(format!("line {}: mixed networks", i + 1)));
            }
            let block = Block::from_bytes(&rec[2..])
                .map_err(|e| ChainError::Parse(format!("line {}: {e}", i + 1)))?;
            blocks.push(block);
        }
        let network = network.ok_or(ChainError::EmptyLedger)?;
        Ok(Ledger { network, blocks })
    }
}

pub fn validate_chain(ledger: &Ledger, difficulty: u32) -> bool {
    ledger.first_invalid(difficulty).is_none()
}
