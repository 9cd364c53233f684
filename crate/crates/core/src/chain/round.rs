//! Mining-round orchestration over the two ledgers.

use std::collections::BTreeSet;

use rand::Rng;

use super::block::{mine_block, mine_genesis, validate_chain, Block, Ledger, Network};
use super::payload::{
    decode_sample_stream, decode_token_credits, encode_sample_stream, encode_token_credits, FarmRecord,
    FnPayload, GenesisPayload, SealedEntry, TnPayload,
};
use super::ChainError;
use crate::bayes::{run_sbu, Column, PosteriorMatrix, PriorMatrix};
use crate::config::ExperimentConfig;
use crate::credit::{update_credit, FarmAccount};
use crate::crypto::{self, generate_keypair, Channel, KeyPair, NonceCounter, SealedPayload, CIPHER_SUITE};
use crate::field::{applied_farms, relative_frequency, sample_frequency_table, FarmConfig, FrequencyTable, N_CLASSES};
use crate::kinetics::{ResponseClass, SensorParams};
use crate::rng::{stream_rng, stream_seed, stream_u64};

fn uplink_aad(round: u64, farm_id: u32) -> Vec<u8> {
    let mut aad = b"uplink".to_vec();
    aad.extend_from_slice(&round.to_be_bytes());
    aad.extend_from_slice(&farm_id.to_be_bytes());
    aad
}

fn downlink_aad(round: u64, farm_id: u32) -> Vec<u8> {
    let mut aad = b"downlink".to_vec();
    aad.extend_from_slice(&round.to_be_bytes());
    aad.extend_from_slice(&farm_id.to_be_bytes());
    aad
}

/// A gateway's submission to the miner.
#[derive(Debug, Clone)]
pub struct Submission {
    pub farm_id: u32,
    pub public_key: [u8; 32],
    pub sealed: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub round: u64,
    pub miner_id: u32,
    pub fn_block: Block,
    pub tn_block: Block,
    /// Posterior for every farm; skipped farms carry their previous column.
    pub posterior: PosteriorMatrix,
    /// All sampled counts of the round summed over the window.
    pub window: FrequencyTable,
    /// Farm means in effect this round.
    pub applied: Vec<FarmConfig>,
    pub steps_used: usize,
    pub skipped: Vec<u32>,
}

pub struct Simulation {
    config: ExperimentConfig,
    params: SensorParams,
    farms: Vec<FarmConfig>,
    fn_ledger: Ledger,
    tn_ledger: Ledger,
    accounts: Vec<FarmAccount>,
    next_round: u64,
    tampered: BTreeSet<(u64, u32)>,
}

fn genesis_ledger(network: Network, config: &ExperimentConfig, farm_ids: &[u32]) -> Ledger {
    let payload = GenesisPayload {
        network,
        difficulty: config.difficulty,
        farm_ids: farm_ids.to_vec(),
        initial_credits: config.initial_credits,
        prior: PriorMatrix::uniform(farm_ids.len()).columns,
        cipher_suite: CIPHER_SUITE.to_string(),
    };
    Ledger::new(mine_genesis(payload.encode(), config.difficulty), network)
}

/// Prior stored in the top block: the genesis prior, or the next prior the
/// last round emitted.
pub fn latest_prior(ledger: &Ledger) -> Result<PriorMatrix, ChainError> {
    let tip = ledger.tip();
    if tip.hash != tip.compute_hash() {
        return Err(ChainError::CorruptLedger(format!("block {} hash mismatch", tip.index)));
    }
    let columns = if tip.index == 0 {
        GenesisPayload::decode(&tip.payload)?.prior
    } else {
        FnPayload::decode(&tip.payload)?.prior_out
    };
    Ok(PriorMatrix {
        columns,
        step: tip.index,
    })
}

fn latest_posterior(ledger: &Ledger) -> Result<Vec<Column>, ChainError> {
    let tip = ledger.tip();
    if tip.index == 0 {
        return Ok(GenesisPayload::decode(&tip.payload)?.prior);
    }
    Ok(FnPayload::decode(&tip.payload)?
        .farms
        .iter()
        .map(|f| f.color_token)
        .collect())
}

/// Opens a gateway's entry in a gateway-network block with the gateway's
/// secret key and the miner public key stored in the block.
pub fn recover_tn_entry(tn_block: &Block, farm_id: u32, own: &KeyPair) -> Result<(Column, f64), ChainError> {
    let payload = TnPayload::decode(&tn_block.payload)?;
    let entry = payload
        .entries
        .iter()
        .find(|e| e.farm_id == farm_id)
        .ok_or(ChainError::MissingFarm(farm_id))?;
    let key = own.derive_shared_key(&payload.miner_public_key)?;
    let sealed = SealedPayload::from_bytes(&entry.sealed)?;
    let plain = crypto::open(&key, &sealed, &downlink_aad(payload.round, farm_id))?;
    Ok(decode_token_credits(&plain)?)
}

impl Simulation {
    pub fn new(config: ExperimentConfig) -> Result<Self, ChainError> {
        config.validate()?;
        let farms = config.farms()?;
        let ids: Vec<u32> = farms.iter().map(|f| f.farm_id).collect();
        Ok(Self {
            params: config.sensor_params(),
            fn_ledger: genesis_ledger(Network::Functional, &config, &ids),
            tn_ledger: genesis_ledger(Network::Transaction, &config, &ids),
            accounts: ids.iter().map(|&id| FarmAccount::new(id, config.initial_credits)).collect(),
            farms,
            config,
            next_round: 0,
            tampered: BTreeSet::new(),
        })
    }

    /// Replaces the generated farms, e.g. with hand-picked means.
    pub fn with_farms(config: ExperimentConfig, farms: Vec<FarmConfig>) -> Result<Self, ChainError> {
        let n_farms = farms.len();
        let mut sim = Self::new(ExperimentConfig { n_farms, ..config })?;
        for f in &farms {
            f.validate()?;
        }
        let ids: Vec<u32> = farms.iter().map(|f| f.farm_id).collect();
        sim.fn_ledger = genesis_ledger(Network::Functional, &sim.config, &ids);
        sim.tn_ledger = genesis_ledger(Network::Transaction, &sim.config, &ids);
        sim.accounts = ids.iter().map(|&id| FarmAccount::new(id, sim.config.initial_credits)).collect();
        sim.farms = farms;
        Ok(sim)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn farms(&self) -> &[FarmConfig] {
        &self.farms
    }

    pub fn accounts(&self) -> &[FarmAccount] {
        &self.accounts
    }

    pub fn fn_ledger(&self) -> &Ledger {
        &self.fn_ledger
    }

    pub fn tn_ledger(&self) -> &Ledger {
        &self.tn_ledger
    }

    /// Mutable access for integrity tests.
    pub fn ledgers_mut(&mut self) -> (&mut Ledger, &mut Ledger) {
        (&mut self.fn_ledger, &mut self.tn_ledger)
    }

    pub fn next_round(&self) -> u64 {
        self.next_round
    }

    /// Corrupts the given gateway's sealed submission in the given round
    /// before the miner opens it.
    pub fn tamper_submission(&mut self, round: u64, farm_id: u32) {
        self.tampered.insert((round, farm_id));
    }

    /// The key pair a gateway uses in `round`.
    pub fn tn_keypair(&self, round: u64, farm_id: u32) -> KeyPair {
        generate_keypair(&stream_seed(self.config.seed, "tn-key", &[round, u64::from(farm_id)]))
    }

    fn miner_keypair(&self, round: u64, miner_id: u32) -> KeyPair {
        generate_keypair(&stream_seed(self.config.seed, "fn-key", &[round, u64::from(miner_id)]))
    }

    fn sample_window(&self, applied: &[FarmConfig], round: u64) -> Result<Vec<FrequencyTable>, ChainError> {
        (0..u64::from(self.config.tw))
            .map(|s| {
                let seed = stream_u64(self.config.seed, "sweep", &[round, s]);
                Ok(sample_frequency_table(applied, &self.params, seed)?)
            })
            .collect()
    }

    fn submit(&self, round: u64, farm_id: u32, columns: &[[u32; N_CLASSES]], miner_pk: &[u8; 32]) -> Result<Submission, ChainError> {
        let own = self.tn_keypair(round, farm_id);
        let key = own.derive_shared_key(miner_pk)?;
        let mut counter = NonceCounter::new(Channel::Uplink);
        let sealed = crypto::seal(
            &key,
            &mut counter,
            &own.public_key(),
            &encode_sample_stream(columns),
            &uplink_aad(round, farm_id),
        )?;
        let mut bytes = sealed.to_bytes();
        if self.tampered.contains(&(round, farm_id)) {
            let mid = bytes.len() / 2;
            bytes[mid] ^= 0x01;
        }
        Ok(Submission {
            farm_id,
            public_key: own.public_key(),
            sealed: bytes,
        })
    }

    /// Miner side: opens a submission and checks its shape.
    fn receive(&self, miner: &KeyPair, round: u64, sub: &Submission, sensors: u32) -> Option<Vec<[u32; N_CLASSES]>> {
        let key = miner.derive_shared_key(&sub.public_key).ok()?;
        let sealed = SealedPayload::from_bytes(&sub.sealed).ok()?;
        if sealed.sender_public_key != sub.public_key {
            return None;
        }
        let plain = crypto::open(&key, &sealed, &uplink_aad(round, sub.farm_id)).ok()?;
        let columns = decode_sample_stream(&plain).ok()?;
        let well_formed = columns.len() == self.config.tw as usize
            && columns.iter().all(|c| c.iter().sum::<u32>() == sensors);
        well_formed.then_some(columns)
    }

    pub fn run_rounds(&mut self, n: u32) -> Result<Vec<RoundOutcome>, ChainError> {
        (0..n).map(|_| self.run_mining_round()).collect()
    }

    /// One full round: miner selection, sealed uplink, posterior update,
    /// credits, sealed downlink, and one block on each ledger.
    pub fn run_mining_round(&mut self) -> Result<RoundOutcome, ChainError> {
        let cfg = self.config.clone();
        for ledger in [&self.fn_ledger, &self.tn_ledger] {
            if let Some(height) = ledger.first_invalid(cfg.difficulty) {
                return Err(ChainError::InvalidChain {
                    network: ledger.network.name(),
                    height,
                });
            }
        }
        let round = self.next_round;
        let miner_id = stream_rng(cfg.seed, "miner", &[round]).random_range(0..cfg.fn_count);
        let miner = self.miner_keypair(round, miner_id);
        let miner_pk = miner.public_key();
        let prior_in = latest_prior(&self.fn_ledger)?;
        let previous_posterior = latest_posterior(&self.fn_ledger)?;

        let applied = applied_farms(&self.farms, cfg.seed, round);
        let sweeps = self.sample_window(&applied, round)?;
        let window = FrequencyTable::aggregate(&sweeps)?;

        let submissions = applied
            .iter()
            .enumerate()
            .map(|(i, farm)| {
                let columns: Vec<_> = sweeps.iter().map(|t| t.columns[i]).collect();
                self.submit(round, farm.farm_id, &columns, &miner_pk)
            })
            .collect::<Result<Vec<_>, _>>()?;

        let received: Vec<Option<Vec<[u32; N_CLASSES]>>> = submissions
            .iter()
            .zip(&applied)
            .map(|(sub, farm)| self.receive(&miner, round, sub, farm.sensors_per_gateway))
            .collect();
        let included: Vec<usize> = (0..applied.len()).filter(|&i| received[i].is_some()).collect();

        let mut posterior_cols = previous_posterior;
        let mut prior_out = prior_in.columns.clone();
        let mut steps_used = 0;
        if !included.is_empty() {
            let ids: Vec<u32> = included.iter().map(|&i| applied[i].farm_id).collect();
            let stream: Vec<_> = (0..cfg.tw as usize)
                .map(|s| {
                    let cols = included.iter().map(|&i| received[i].as_ref().unwrap()[s]).collect();
                    relative_frequency(&FrequencyTable::from_columns(ids.clone(), cols, 1))
                })
                .collect();
            let prior_sub = PriorMatrix {
                columns: included.iter().map(|&i| prior_in.columns[i]).collect(),
                step: prior_in.step,
            };
            let run = run_sbu(&prior_sub, &stream, cfg.sbu_epsilon)?;
            steps_used = run.steps_used;
            for (k, &i) in included.iter().enumerate() {
                posterior_cols[i] = run.posterior.columns[k];
                prior_out[i] = run.next_prior.columns[k];
            }
        }

        let mut records = Vec::with_capacity(applied.len());
        let mut entries = Vec::with_capacity(applied.len());
        for (i, farm) in applied.iter().enumerate() {
            let token = posterior_cols[i];
            let mut account = self.accounts[i].clone();
            account.record_round(cfg.compliance.is_e(&token));
            account = update_credit(&account, token[ResponseClass::E.index()], cfg.alpha, round)?;
            records.push(FarmRecord {
                farm_id: farm.farm_id,
                included: received[i].is_some(),
                color_token: token,
                credits: account.credits,
                f_e: account.cum_freq_e,
                f_not_e: account.cum_freq_not_e,
            });
            let key = miner.derive_shared_key(&submissions[i].public_key)?;
            let sealed = crypto::seal(
                &key,
                &mut NonceCounter::new(Channel::Downlink),
                &miner_pk,
                &encode_token_credits(&token, account.credits),
                &downlink_aad(round, farm.farm_id),
            )?;
            entries.push(SealedEntry {
                farm_id: farm.farm_id,
                sealed: sealed.to_bytes(),
            });
            self.accounts[i] = account;
        }

        let tn_payload = TnPayload {
            round,
            miner_public_key: miner_pk,
            entries,
        };
        let fn_payload = FnPayload {
            round,
            miner_id,
            miner_public_key: miner_pk,
            prior_in: prior_in.columns,
            prior_out,
            steps_used: steps_used as u32,
            farms: records,
        };
        let tn_block = mine_block(self.tn_ledger.tip(), tn_payload.encode(), miner_id, cfg.difficulty, round);
        let fn_block = mine_block(self.fn_ledger.tip(), fn_payload.encode(), miner_id, cfg.difficulty, round);
        self.tn_ledger.append(tn_block.clone(), cfg.difficulty)?;
        self.fn_ledger.append(fn_block.clone(), cfg.difficulty)?;
        debug_assert!(validate_chain(&self.fn_ledger, cfg.difficulty));
        self.next_round += 1;

        Ok(RoundOutcome {
            round,
            miner_id,
            fn_block,
            tn_block,
            posterior: PosteriorMatrix {
                columns: posterior_cols,
                step: round + 1,
            },
            window,
            applied,
            steps_used,
            skipped: fn_payload.farms.iter().filter(|f| !f.included).map(|f| f.farm_id).collect(),
        })
    }
}
