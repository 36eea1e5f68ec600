//! Hash-chained proof-of-work ledger of offloading records.
//!
//! A single simulated miner batches pending [`OffloadRecord`]s into blocks,
//! chosen FIFO or earliest-deadline-first. Mining time is simulated from
//! the number of nonce attempts and a configured hash rate, floored by the
//! scaled block-generation bound; records confirm one scaled validation
//! time after their block is mined.
//!
//! # Canonical byte layouts
//!
//! All integers and floats are little-endian; floats are IEEE-754 `f64`.
//!
//! Transaction (72 bytes): `id u64 | job u64 | action u32 | executor u32 |
//! outcome_digest [32] | submit_time f64 | record_deadline f64`.
//! `confirmed_time` is bookkeeping and is not hashed.
//!
//! Header (88 bytes): `index u64 | timestamp f64 | prev_hash [32] |
//! merkle_root [32] | nonce u64`.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::schedulability::{scale_bounds, SchedError, TimingBounds};

pub type Hash32 = [u8; 32];

pub const ZERO_HASH: Hash32 = [0u8; 32];
pub const TX_LEN: usize = 72;
pub const HEADER_LEN: usize = 88;

#[derive(Debug, Error, PartialEq)]
pub enum LedgerError {
    #[error("record {0} is not confirmed")]
    Unconfirmed(u64),
    #[error("invalid ledger config: {0}")]
    Config(String),
    #[error("malformed chain export at line {line}: {msg}")]
    Import { line: usize, msg: String },
}

impl From<SchedError> for LedgerError {
    fn from(e: SchedError) -> Self {
        LedgerError::Config(e.to_string())
    }
}

pub fn hash_bytes(data: &[u8]) -> Hash32 {
    Sha256::digest(data).into()
}

fn hash_pair(a: &Hash32, b: &Hash32) -> Hash32 {
    let mut h = Sha256::new();
    h.update(a);
    h.update(b);
    h.finalize().into()
}

/// Binary Merkle root; odd levels pair the last node with itself, a single
/// leaf is its own root and the empty tree hashes to `hash_bytes(b"")`.
pub fn merkle_root(leaves: &[Hash32]) -> Hash32 {
    if leaves.is_empty() {
        return hash_bytes(b"");
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|c| hash_pair(&c[0], c.get(1).unwrap_or(&c[0])))
            .collect();
    }
    level[0]
}

pub fn leading_zero_bits(h: &Hash32) -> u32 {
    let mut n = 0;
    for b in h {
        if *b == 0 {
            n += 8;
        } else {
            return n + b.leading_zeros();
        }
    }
    n
}

mod hex32 {
    use super::Hash32;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(h: &Hash32, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(h))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Hash32, D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(&s).map_err(D::Error::custom)?;
        v.try_into().map_err(|_| D::Error::custom("expected 32-byte hash"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadRecord {
    pub id: u64,
    pub job: u64,
    pub action: u32,
    /// Node index of the executing node.
    pub executor: u32,
    #[serde(with = "hex32")]
    pub outcome_digest: Hash32,
    pub submit_time: f64,
    pub record_deadline: f64,
    pub confirmed_time: Option<f64>,
}

impl OffloadRecord {
    pub fn canonical_bytes(&self) -> [u8; TX_LEN] {
        let mut b = [0u8; TX_LEN];
        b[0..8].copy_from_slice(&self.id.to_le_bytes());
        b[8..16].copy_from_slice(&self.job.to_le_bytes());
        b[16..20].copy_from_slice(&self.action.to_le_bytes());
        b[20..24].copy_from_slice(&self.executor.to_le_bytes());
        b[24..56].copy_from_slice(&self.outcome_digest);
        b[56..64].copy_from_slice(&self.submit_time.to_le_bytes());
        b[64..72].copy_from_slice(&self.record_deadline.to_le_bytes());
        b
    }

    pub fn from_canonical(b: &[u8; TX_LEN], confirmed_time: Option<f64>) -> Self {
        let u64_at = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().unwrap());
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        Self {
            id: u64_at(0),
            job: u64_at(8),
            action: u32_at(16),
            executor: u32_at(20),
            outcome_digest: b[24..56].try_into().unwrap(),
            submit_time: f64::from_bits(u64_at(56)),
            record_deadline: f64::from_bits(u64_at(64)),
            confirmed_time,
        }
    }

    pub fn digest(&self) -> Hash32 {
        hash_bytes(&self.canonical_bytes())
    }

    pub fn confirmation_latency(&self) -> Result<f64, LedgerError> {
        self.confirmed_time
            .map(|c| c - self.submit_time)
            .ok_or(LedgerError::Unconfirmed(self.id))
    }

    pub fn confirmed_on_time(&self) -> bool {
        self.confirmed_time.is_some_and(|c| c <= self.record_deadline)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub index: u64,
    pub timestamp: f64,
    #[serde(with = "hex32")]
    pub prev_hash: Hash32,
    #[serde(with = "hex32")]
    pub merkle_root: Hash32,
    pub nonce: u64,
}

impl BlockHeader {
    pub fn canonical_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..8].copy_from_slice(&self.index.to_le_bytes());
        b[8..16].copy_from_slice(&self.timestamp.to_le_bytes());
        b[16..48].copy_from_slice(&self.prev_hash);
        b[48..80].copy_from_slice(&self.merkle_root);
        b[80..88].copy_from_slice(&self.nonce.to_le_bytes());
        b
    }

    pub fn from_canonical(b: &[u8; HEADER_LEN]) -> Self {
        let u64_at = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().unwrap());
        Self {
            index: u64_at(0),
            timestamp: f64::from_bits(u64_at(8)),
            prev_hash: b[16..48].try_into().unwrap(),
            merkle_root: b[48..80].try_into().unwrap(),
            nonce: u64_at(80),
        }
    }

    pub fn hash(&self) -> Hash32 {
        hash_bytes(&self.canonical_bytes())
    }
}

/// A mined block. `hash` is the hash of `header` as sealed by the miner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    #[serde(with = "hex32")]
    pub hash: Hash32,
    pub transactions: Vec<OffloadRecord>,
}

impl Block {
    pub fn tx_merkle_root(&self) -> Hash32 {
        let leaves: Vec<Hash32> = self.transactions.iter().map(|t| t.digest()).collect();
        merkle_root(&leaves)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Fifo,
    #[default]
    Edf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LedgerConfig {
    pub enabled: bool,
    /// Required leading zero bits of a block hash.
    pub difficulty: u32,
    pub selection: Selection,
    pub max_tx_per_block: usize,
    /// Nonce attempts per simulated second.
    pub hash_rate: f64,
    pub gen_block: f64,
    pub val_block: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            difficulty: 8,
            selection: Selection::Edf,
            max_tx_per_block: 8,
            hash_rate: 1e6,
            gen_block: 1.0,
            val_block: 0.5,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl LedgerConfig {
    pub fn timing(&self) -> Result<TimingBounds, LedgerError> {
        Ok(scale_bounds(self.gen_block, self.val_block, self.alpha, self.beta)?)
    }

    /// Lists every violated field (empty when valid), as `(field, message)`.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.max_tx_per_block == 0 {
            out.push(("max_tx_per_block", "must be > 0".to_string()));
        }
        if !(self.hash_rate > 0.0 && self.hash_rate.is_finite()) {
            out.push(("hash_rate", "must be finite and > 0".to_string()));
        }
        if self.difficulty > 32 {
            out.push(("difficulty", "must be <= 32".to_string()));
        }
        for (name, v) in [
            ("gen_block", self.gen_block),
            ("val_block", self.val_block),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push((name, "must be finite and > 0".to_string()));
            }
        }
        out
    }
}

/// Indices into `pending` chosen for the next block, in selection order.
pub fn select_indices(pending: &[OffloadRecord], policy: Selection, max_tx: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pending.len()).collect();
    match policy {
        Selection::Fifo => idx.sort_by(|&a, &b| {
            let (ra, rb) = (&pending[a], &pending[b]);
            ra.submit_time.total_cmp(&rb.submit_time).then(ra.id.cmp(&rb.id))
        }),
        Selection::Edf => idx.sort_by(|&a, &b| {
            let (ra, rb) = (&pending[a], &pending[b]);
            ra.record_deadline
                .total_cmp(&rb.record_deadline)
                .then(ra.submit_time.total_cmp(&rb.submit_time))
                .then(ra.id.cmp(&rb.id))
        }),
    }
    idx.truncate(max_tx);
    idx
}

pub fn select_transactions(pending: &[OffloadRecord], policy: Selection, max_tx: usize) -> Vec<OffloadRecord> {
    select_indices(pending, policy, max_tx)
        .into_iter()
        .map(|i| pending[i].clone())
        .collect()
}

/// Result of one mining round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinedBlock {
    pub index: u64,
    pub attempts: u64,
    pub duration: f64,
    pub mined_at: f64,
    pub confirmed_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub blocks: Vec<Block>,
    pub difficulty: u32,
    pub selection: Selection,
    pub max_tx_per_block: usize,
    pub hash_rate: f64,
    pub timing: TimingBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BadReason {
    Index,
    Genesis,
    Link,
    HashMismatch,
    Merkle,
    Difficulty,
}

impl fmt::Display for BadReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BadReason::Index => "index mismatch",
            BadReason::Genesis => "genesis prev_hash not zero",
            BadReason::Link => "link mismatch",
            BadReason::HashMismatch => "header hash mismatch",
            BadReason::Merkle => "merkle mismatch",
            BadReason::Difficulty => "difficulty not met",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    Bad { index: usize, reason: BadReason },
}

impl Chain {
    pub fn new(config: &LedgerConfig) -> Result<Self, LedgerError> {
        if let Some((field, msg)) = config.violations().into_iter().next() {
            return Err(LedgerError::Config(format!("{field}: {msg}")));
        }
        Ok(Self {
            blocks: Vec::new(),
            difficulty: config.difficulty,
            selection: config.selection,
            max_tx_per_block: config.max_tx_per_block,
            hash_rate: config.hash_rate,
            timing: config.timing()?,
        })
    }

    pub fn tip_hash(&self) -> Hash32 {
        self.blocks.last().map_or(ZERO_HASH, |b| b.hash)
    }

    pub fn records(&self) -> impl Iterator<Item = &OffloadRecord> {
        self.blocks.iter().flat_map(|b| b.transactions.iter())
    }

    /// Seals the next block from `pending` (selected records are removed)
    /// at simulated time `now`.
    ///
    /// Panics if `pending` is empty.
    pub fn mine_block(&mut self, pending: &mut Vec<OffloadRecord>, now: f64) -> MinedBlock {
        assert!(!pending.is_empty(), "mine_block needs pending records");
        let mut picked = select_indices(pending, self.selection, self.max_tx_per_block);
        let order = picked.clone();
        picked.sort_unstable();
        let mut taken: Vec<Option<OffloadRecord>> = vec![None; pending.len()];
        for &i in picked.iter().rev() {
            taken[i] = Some(pending.remove(i));
        }
        let mut txs: Vec<OffloadRecord> = order.into_iter().map(|i| taken[i].take().unwrap()).collect();

        let leaves: Vec<Hash32> = txs.iter().map(|t| t.digest()).collect();
        let mut header = BlockHeader {
            index: self.blocks.len() as u64,
            timestamp: now,
            prev_hash: self.tip_hash(),
            merkle_root: merkle_root(&leaves),
            nonce: 0,
        };
        let hash = loop {
            let h = header.hash();
            if leading_zero_bits(&h) >= self.difficulty {
                break h;
            }
            header.nonce += 1;
        };
        let attempts = header.nonce + 1;
        let duration = self.timing.gen_fog.max(attempts as f64 / self.hash_rate);
        let mined_at = now + duration;
        let confirmed_at = mined_at + self.timing.val_fog;
        for t in &mut txs {
            t.confirmed_time = Some(confirmed_at);
        }
        self.blocks.push(Block {
            header,
            hash,
            transactions: txs,
        });
        MinedBlock {
            index: header.index,
            attempts,
            duration,
            mined_at,
            confirmed_at,
        }
    }

    /// Returns the first violation in block order.
    pub fn verify(&self) -> Verdict {
        let mut prev = ZERO_HASH;
        for (k, b) in self.blocks.iter().enumerate() {
            let bad = |reason| Verdict::Bad { index: k, reason };
            if b.header.index != k as u64 {
                return bad(BadReason::Index);
            }
            if b.header.prev_hash != prev {
                return bad(if k == 0 { BadReason::Genesis } else { BadReason::Link });
            }
            if b.header.hash() != b.hash {
                return bad(BadReason::HashMismatch);
            }
            if b.tx_merkle_root() != b.header.merkle_root {
                return bad(BadReason::Merkle);
            }
            if leading_zero_bits(&b.hash) < self.difficulty {
                return bad(BadReason::Difficulty);
            }
            prev = b.hash;
        }
        Verdict::Ok
    }

    /// Newline-delimited JSON, one block per line.
    pub fn export_ndjson(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            let line = ExportLine {
                difficulty: self.difficulty,
                block: b.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("block serialises"));
            out.push('\n');
        }
        out
    }

    /// Parses an export back into blocks plus the recorded difficulty.
    /// Mining parameters not present in the export take `config` values.
    pub fn import_ndjson(text: &str, config: &LedgerConfig) -> Result<Chain, LedgerError> {
        let mut chain = Chain::new(config)?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ExportLine = serde_json::from_str(line).map_err(|e| LedgerError::Import {
                line: i + 1,
                msg: e.to_string(),
            })?;
            chain.difficulty = parsed.difficulty;
            chain.blocks.push(parsed.block);
        }
        Ok(chain)
    }
}

pub fn verify_chain(chain: &Chain) -> Verdict {
    chain.verify()
}

#[derive(Serialize, Deserialize)]
struct ExportLine {
    difficulty: u32,
    #[serde(flatten)]
    block: Block,
}

/// Single miner co-located with the fog tier: mines whenever idle and
/// records are pending.
#[derive(Debug, Clone)]
pub struct Miner {
    pub chain: Chain,
    pub pending: Vec<OffloadRecord>,
    busy: bool,
    next_record: u64,
}

impl Miner {
    pub fn new(config: &LedgerConfig) -> Result<Self, LedgerError> {
        Ok(Self {
            chain: Chain::new(config)?,
            pending: Vec::new(),
            busy: false,
            next_record: 0,
        })
    }

    /// Queues a record, assigning the next record id.
    pub fn submit(&mut self, mut record: OffloadRecord) -> u64 {
        let id = self.next_record;
        record.id = id;
        self.next_record += 1;
        self.pending.push(record);
        id
    }

    pub fn is_busy(&self) -> bool {
        self.busy
    }

    /// Starts mining if idle and there is work.
    pub fn try_start(&mut self, now: f64) -> Option<MinedBlock> {
        if self.busy || self.pending.is_empty() {
            return None;
        }
        self.busy = true;
        Some(self.chain.mine_block(&mut self.pending, now))
    }

    pub fn finish(&mut self) {
        self.busy = false;
    }

    /// Mines everything still pending back to back, starting at `now`.
    pub fn drain(&mut self, mut now: f64) -> Vec<MinedBlock> {
        let mut out = Vec::new();
        while !self.pending.is_empty() {
            let m = self.chain.mine_block(&mut self.pending, now);
            now = m.mined_at;
            out.push(m);
        }
        self.busy = false;
        out
    }
}

/// Feeds `records` (by submit time) through a [`Miner`] and drains the
/// backlog at the end. Record ids are reassigned in submission order.
pub fn replay_submissions(config: &LedgerConfig, mut records: Vec<OffloadRecord>) -> Result<Chain, LedgerError> {
    records.sort_by(|a, b| a.submit_time.total_cmp(&b.submit_time).then(a.id.cmp(&b.id)));
    let mut miner = Miner::new(config)?;
    let mut free_at = f64::NEG_INFINITY;
    let mut last = 0.0;
    for r in records {
        let t = r.submit_time;
        while miner.is_busy() && free_at <= t {
            miner.finish();
            if let Some(m) = miner.try_start(free_at) {
                free_at = m.mined_at;
            }
        }
        miner.submit(r);
        if let Some(m) = miner.try_start(t) {
            free_at = m.mined_at;
        }
        last = t;
    }
    let start = if miner.is_busy() { free_at.max(last) } else { last };
    miner.drain(start);
    Ok(miner.chain)
}
