//! Block payload layouts. Fields are written in declaration order.

use super::block::Network;
use super::codec::{CodecError, Decoder, Encoder};
use crate::bayes::Column;
use crate::field::N_CLASSES;

fn put_column(e: &mut Encoder, c: &Column) {
    for &p in c {
        e.f64(p);
    }
}

fn get_column(d: &mut Decoder) -> Result<Column, CodecError> {
    let mut c = [0.0; N_CLASSES];
    for p in &mut c {
        *p = d.f64()?;
    }
    Ok(c)
}

fn put_columns(e: &mut Encoder, cs: &[Column]) {
    e.u32(cs.len() as u32);
    for c in cs {
        put_column(e, c);
    }
}

fn get_columns(d: &mut Decoder) -> Result<Vec<Column>, CodecError> {
    let n = d.count(8 * N_CLASSES)?;
    (0..n).map(|_| get_column(d)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenesisPayload {
    pub network: Network,
    pub difficulty: u32,
    pub farm_ids: Vec<u32>,
    pub initial_credits: f64,
    pub prior: Vec<Column>,
    pub cipher_suite: String,
}

impl GenesisPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u8(self.network.code()).u32(self.difficulty).u32(self.farm_ids.len() as u32);
        for &id in &self.farm_ids {
            e.u32(id);
        }
        e.f64(self.initial_credits);
        put_columns(&mut e, &self.prior);
        e.str(&self.cipher_suite);
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let network = Network::from_code(d.u8()?).ok_or(CodecError::Invalid("network"))?;
        let difficulty = d.u32()?;
        let n = d.count(4)?;
        let farm_ids = (0..n).map(|_| d.u32()).collect::<Result<_, _>>()?;
        let g = GenesisPayload {
            network,
            difficulty,
            farm_ids,
            initial_credits: d.f64()?,
            prior: get_columns(&mut d)?,
            cipher_suite: d.str()?,
        };
        d.finish()?;
        Ok(g)
    }
}

/// One farm's plaintext outcome in a miner block.
#[derive(Debug, Clone, PartialEq)]
pub struct FarmRecord {
    pub farm_id: u32,
    /// False when the farm's submission failed authentication this round.
    pub included: bool,
    pub color_token: Column,
    pub credits: f64,
    pub f_e: u32,
    pub f_not_e: u32,
}

/// Plaintext round data mined into the miner network.
#[derive(Debug, Clone, PartialEq)]
pub struct FnPayload {
    pub round: u64,
    pub miner_id: u32,
    pub miner_public_key: [u8; 32],
    pub prior_in: Vec<Column>,
    pub prior_out: Vec<Column>,
    pub steps_used: u32,
    pub farms: Vec<FarmRecord>,
}

impl FnPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u64(self.round).u32(self.miner_id).fixed(&self.miner_public_key);
        put_columns(&mut e, &self.prior_in);
        put_columns(&mut e, &self.prior_out);
        e.u32(self.steps_used).u32(self.farms.len() as u32);
        for f in &self.farms {
            e.u32(f.farm_id).bool(f.included);
            put_column(&mut e, &f.color_token);
            e.f64(f.credits).u32(f.f_e).u32(f.f_not_e);
        }
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let round = d.u64()?;
        let miner_id = d.u32()?;
        let miner_public_key = d.array()?;
        let prior_in = get_columns(&mut d)?;
        let prior_out = get_columns(&mut d)?;
        let steps_used = d.u32()?;
        let n = d.count(4 + 1 + 8 * N_CLASSES + 8 + 8)?;
        let mut farms = Vec::with_capacity(n);
        for _ in 0..n {
            farms.push(FarmRecord {
                farm_id: d.u32()?,
                included: d.bool()?,
                color_token: get_column(&mut d)?,
                credits: d.f64()?,
                f_e: d.u32()?,
                f_not_e: d.u32()?,
            });
        }
        d.finish()?;
        Ok(FnPayload {
            round,
            miner_id,
            miner_public_key,
            prior_in,
            prior_out,
            steps_used,
            farms,
        })
    }

    pub fn skipped(&self) -> Vec<u32> {
        self.farms.iter().filter(|f| !f.included).map(|f| f.farm_id).collect()
    }
}

/// A gateway's sealed `[color token, credits]` in a gateway-network block.
#[derive(Debug, Clone, PartialEq)]
pub struct SealedEntry {
    pub farm_id: u32,
    pub sealed: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TnPayload {
    pub round: u64,
    pub miner_public_key: [u8; 32],
    pub entries: Vec<SealedEntry>,
}

impl TnPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u64(self.round).fixed(&self.miner_public_key).u32(self.entries.len() as u32);
        for entry in &self.entries {
            e.u32(entry.farm_id).bytes(&entry.sealed);
        }
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let round = d.u64()?;
        let miner_public_key = d.array()?;
        let n = d.count(8)?;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            entries.push(SealedEntry {
                farm_id: d.u32()?,
                sealed: d.bytes()?.to_vec(),
            });
        }
        d.finish()?;
        Ok(TnPayload {
            round,
            miner_public_key,
            entries,
        })
    }
}

/// Plaintext sealed into each gateway-network entry.
pub fn encode_token_credits(token: &Column, credits: f64) -> Vec<u8> {
    let mut e = Encoder::new();
    put_column(&mut e, token);
    e.f64(credits);
    e.finish()
}

pub fn decode_token_credits(bytes: &[u8]) -> Result<(Column, f64), CodecError> {
    let mut d = Decoder::new(bytes);
    let token = get_column(&mut d)?;
    let credits = d.f64()?;
    d.finish()?;
    Ok((token, credits))
}

/// Plaintext a gateway seals for the miner: its class counts for each window
/// element.
pub fn encode_sample_stream(columns: &[[u32; N_CLASSES]]) -> Vec<u8> {
    let mut e = Encoder::new();
    e.u32(columns.len() as u32);
    for c in columns {
        for &n in c {
            e.u32(n);
        }
    }
    e.finish()
}

pub fn decode_sample_stream(bytes: &[u8]) -> Result<Vec<[u32; N_CLASSES]>, CodecError> {
    let mut d = Decoder::new(bytes);
    let n = d.count(4 * N_CLASSES)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut c = [0u32; N_CLASSES];
        for v in &mut c {
            *v = d.u32()?;
        }
        out.push(c);
    }
    d.finish()?;
    Ok(out)
}
