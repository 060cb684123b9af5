//! Deterministic simulation of a permissionless blockchain: a block tree
//! grown by scheduled mining, stochastic sibling forks, longest-chain tip
//! resolution with a digest tie-break, confirmation depth, and a toy
//! proof-of-work strong enough for header-chain evidence checking.
//!
//! One block is produced per `block_interval` ticks, so a block's height
//! determines the tick it was applied at. That mapping is what lets timelock
//! expiry fire during replay without storing wall-clock data in headers.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::codec::{Canonical, Encoder};
use crate::contracts::{ApplyCtx, DeployMessage, LedgerEvent, LedgerState, TxError};
use crate::crypto::{digest_bytes, digest_of, Digest, PublicKey};
use crate::swap_graph::ChainId;

/// Simulation clock: current tick plus the publication bound expressed in
/// ticks (one protocol phase fits in one `delta` window).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimClock {
    now: u64,
    delta: u64,
}

impl SimClock {
    pub fn new(delta: u64) -> Self {
        assert!(delta >= 1, "delta must be at least one tick");
        Self { now: 0, delta }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn delta(&self) -> u64 {
        self.delta
    }

    pub fn advance(&mut self) {
        self.now += 1;
    }

    /// Index of the delta window containing `now`.
    pub fn window(&self) -> u64 {
        self.now / self.delta
    }

    pub fn at_window_start(&self) -> bool {
        self.now % self.delta == 0
    }
}

/// Declared throughput, kept as an exact rational.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Tps(pub Ratio<u64>);

impl Tps {
    pub fn from_int(v: u64) -> Self {
        Tps(Ratio::from_integer(v))
    }
}

impl std::fmt::Display for Tps {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if *self.0.denom() == 1 {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl Serialize for Tps {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if *self.0.denom() == 1 {
            s.serialize_u64(*self.0.numer())
        } else {
            s.serialize_str(&self.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for Tps {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(Tps::from_int(v)),
            Raw::Str(s) => {
                let (p, q) = s
                    .split_once('/')
                    .ok_or_else(|| serde::de::Error::custom("expected \"p/q\""))?;
                let p: u64 = p.trim().parse().map_err(serde::de::Error::custom)?;
                let q: u64 = q.trim().parse().map_err(serde::de::Error::custom)?;
                if q == 0 {
                    return Err(serde::de::Error::custom("zero denominator"));
                }
                Ok(Tps(Ratio::new(p, q)))
            }
        }
    }
}

/// Static per-chain configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainParams {
    pub chain_id: ChainId,
    pub block_interval: u64,
    /// Probability that a freshly mined block spawns a competing sibling.
    pub fork_probability: f64,
    /// Leading zero bits required of a header digest.
    pub pow_difficulty: u32,
    pub default_confirm_depth: u64,
    #[serde(default = "Tps::default_zero")]
    pub tps: Tps,
}

impl Tps {
    fn default_zero() -> Tps {
        Tps::from_int(0)
    }
}

impl ChainParams {
    pub fn validate(&self) -> Result<(), ChainError> {
        if self.block_interval < 1 {
            return Err(ChainError::BadParams("block_interval must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.fork_probability) {
            return Err(ChainError::BadParams(
                "fork_probability must be in [0, 1)".into(),
            ));
        }
        if self.default_confirm_depth < 1 {
            return Err(ChainError::BadParams(
                "default_confirm_depth must be >= 1".into(),
            ));
        }
        if self.pow_difficulty > 32 {
            return Err(ChainError::BadParams(
                "pow_difficulty above 32 bits is not desk-scale".into(),
            ));
        }
        Ok(())
    }
}

/// Transaction identifier: digest of the payload.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct TxId(pub Digest);

impl std::fmt::Debug for TxId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "tx:{:?}", self.0)
    }
}

impl Canonical for TxId {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.0);
    }
}

/// Contract identifier: digest of the deploy transaction id.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct ContractId(pub Digest);

impl std::fmt::Debug for ContractId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "sc:{:?}", self.0)
    }
}

impl Canonical for ContractId {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.0);
    }
}

pub fn contract_id_for(deploy_tx: TxId) -> ContractId {
    ContractId(digest_bytes(&deploy_tx.0 .0))
}

/// Transaction body. Deploys carry the contract code and constructor
/// arguments; calls carry the target contract and function arguments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxPayload {
    AssetTransfer {
        from: PublicKey,
        to: PublicKey,
        amount: u64,
    },
    ContractDeploy {
        deploy: DeployMessage,
        code: crate::contracts::DeployCode,
    },
    ContractCall {
        contract: ContractId,
        call: crate::contracts::CallPayload,
    },
}

impl TxPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            TxPayload::AssetTransfer { .. } => "asset-transfer",
            TxPayload::ContractDeploy { .. } => "contract-deploy",
            TxPayload::ContractCall { .. } => "contract-call",
        }
    }
}

impl Canonical for TxPayload {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            TxPayload::AssetTransfer { from, to, amount } => {
                enc.tag(0x01).value(from).value(to).u64(*amount);
            }
            TxPayload::ContractDeploy { deploy, code } => {
                enc.tag(0x02).value(deploy).value(code);
            }
            TxPayload::ContractCall { contract, call } => {
                enc.tag(0x03).value(contract).value(call);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainTx {
    pub tx_id: TxId,
    pub payload: TxPayload,
}

impl ChainTx {
    pub fn new(payload: TxPayload) -> Self {
        let tx_id = TxId(digest_of(&payload));
        Self { tx_id, payload }
    }

    /// Recompute the id and compare; false for tampered transactions.
    pub fn id_consistent(&self) -> bool {
        self.tx_id == TxId(digest_of(&self.payload))
    }
}

impl Canonical for ChainTx {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.tx_id).value(&self.payload);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_digest: Digest,
    pub payload_digest: Digest,
    pub pow_nonce: u64,
    pub miner_id: String,
}

impl Canonical for BlockHeader {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.height)
            .value(&self.prev_digest)
            .value(&self.payload_digest)
            .u64(self.pow_nonce)
            .str(&self.miner_id);
    }
}

impl BlockHeader {
    pub fn digest(&self) -> Digest {
        digest_of(self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub txs: Vec<ChainTx>,
}

pub fn payload_digest(txs: &[ChainTx]) -> Digest {
    let mut enc = Encoder::new();
    enc.seq(txs);
    digest_bytes(&enc.finish())
}

/// True when the first `bits` bits of the digest are zero.
pub fn meets_difficulty(d: &Digest, bits: u32) -> bool {
    let full = (bits / 8) as usize;
    let rem = bits % 8;
    if !d.0[..full].iter().all(|&b| b == 0) {
        return false;
    }
    rem == 0 || (d.0[full] >> (8 - rem)) == 0
}

fn solve_pow(mut header: BlockHeader, bits: u32) -> BlockHeader {
    header.pow_nonce = 0;
    loop {
        if meets_difficulty(&header.digest(), bits) {
            return header;
        }
        header.pow_nonce += 1;
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("transaction already known: {0:?}")]
    DuplicateTx(TxId),
    #[error("unknown block")]
    UnknownBlock,
    #[error("invalid chain parameters: {0}")]
    BadParams(String),
}

/// Confirmation count of a block, or the marker for blocks that fell off the
/// canonical chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Confirmations {
    OnCanon(u64),
    NotCanonical,
}

#[derive(Clone, Debug, Serialize)]
pub struct DroppedTx {
    pub tx_id: TxId,
    pub reason: String,
    pub at_height: u64,
}

/// Report of one mining step.
#[derive(Clone, Debug)]
pub struct MineReport {
    pub block: Digest,
    pub sibling: Option<Digest>,
}

/// A simulated chain: parameters, the block tree, the mempool, and the
/// ledger state replayed from the canonical branch.
pub struct SimChain {
    params: ChainParams,
    genesis_alloc: BTreeMap<PublicKey, u64>,
    blocks: BTreeMap<Digest, Block>,
    children: BTreeMap<Digest, Vec<Digest>>,
    tips: BTreeSet<Digest>,
    genesis: Digest,
    mempool: Vec<ChainTx>,
    mempool_ids: BTreeSet<TxId>,
    canonical_tip: Digest,
    canonical_state: LedgerState,
    canonical_tx_ids: BTreeSet<TxId>,
    /// Canonical height when the simulation proper started; blocks above it
    /// map to ticks >= 0.
    sim_start_height: u64,
    dropped: Vec<DroppedTx>,
    forks_spawned: u64,
}

impl SimChain {
    pub fn new(params: ChainParams, genesis_alloc: BTreeMap<PublicKey, u64>) -> Self {
        let header = solve_pow(
            BlockHeader {
                height: 0,
                prev_digest: Digest::ZERO,
                payload_digest: payload_digest(&[]),
                pow_nonce: 0,
                miner_id: "genesis".to_string(),
            },
            params.pow_difficulty,
        );
        let genesis = header.digest();
        let block = Block {
            header,
            txs: Vec::new(),
        };
        let state = LedgerState::new(genesis_alloc.clone());
        Self {
            params,
            genesis_alloc,
            blocks: BTreeMap::from([(genesis, block)]),
            children: BTreeMap::new(),
            tips: BTreeSet::from([genesis]),
            genesis,
            mempool: Vec::new(),
            mempool_ids: BTreeSet::new(),
            canonical_tip: genesis,
            canonical_state: state,
            canonical_tx_ids: BTreeSet::new(),
            sim_start_height: 0,
            dropped: Vec::new(),
            forks_spawned: 0,
        }
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn chain_id(&self) -> &ChainId {
        &self.params.chain_id
    }

    pub fn genesis(&self) -> Digest {
        self.genesis
    }

    pub fn tip(&self) -> Digest {
        self.canonical_tip
    }

    pub fn tip_height(&self) -> u64 {
        self.blocks[&self.canonical_tip].header.height
    }

    pub fn state(&self) -> &LedgerState {
        &self.canonical_state
    }

    pub fn block(&self, id: &Digest) -> Option<&Block> {
        self.blocks.get(id)
    }

    pub fn forks_spawned(&self) -> u64 {
        self.forks_spawned
    }

    pub fn dropped(&self) -> &[DroppedTx] {
        &self.dropped
    }

    /// Mine `n` empty setup blocks, then treat the current height as tick 0.
    pub fn warm_up(&mut self, n: u64) {
        for _ in 0..n {
            let parent = self.canonical_tip;
            let block = self.build_block(parent, Vec::new(), "warmup");
            self.insert_block(block);
            self.resolve_tip();
        }
        self.sim_start_height = self.tip_height();
    }

    /// Tick at which the block at `height` is applied. Setup blocks land at
    /// negative ticks.
    pub fn tick_of_height(&self, height: u64) -> i64 {
        (height as i64 - self.sim_start_height as i64 - 1) * self.params.block_interval as i64
    }

    pub fn submit_tx(&mut self, tx: ChainTx) -> Result<(), ChainError> {
        if self.mempool_ids.contains(&tx.tx_id) || self.canonical_tx_ids.contains(&tx.tx_id) {
            return Err(ChainError::DuplicateTx(tx.tx_id));
        }
        self.mempool_ids.insert(tx.tx_id);
        self.mempool.push(tx);
        Ok(())
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    fn build_block(&self, parent: Digest, txs: Vec<ChainTx>, miner: &str) -> Block {
        let parent_header = &self.blocks[&parent].header;
        let header = solve_pow(
            BlockHeader {
                height: parent_header.height + 1,
                prev_digest: parent,
                payload_digest: payload_digest(&txs),
                pow_nonce: 0,
                miner_id: miner.to_string(),
            },
            self.params.pow_difficulty,
        );
        Block { header, txs }
    }

    fn insert_block(&mut self, block: Block) -> Digest {
        let digest = block.header.digest();
        let parent = block.header.prev_digest;
        self.children.entry(parent).or_default().push(digest);
        self.tips.remove(&parent);
        self.tips.insert(digest);
        self.blocks.insert(digest, block);
        digest
    }

    /// Mine the next block on the canonical tip: every valid mempool entry is
    /// included, invalid entries are dropped with a reason. With probability
    /// `fork_probability` a sibling block is also produced from the same
    /// parent, carrying the mempool entries that were valid against the
    /// parent state but conflicted inside the main block.
    pub fn mine_block(&mut self, rng: &mut ChaCha20Rng) -> Digest {
        self.mine_block_report(rng).block
    }

    pub fn mine_block_report(&mut self, rng: &mut ChaCha20Rng) -> MineReport {
        let parent = self.canonical_tip;
        let parent_state = self.canonical_state.clone();
        let height = self.blocks[&parent].header.height + 1;
        let tick = self.tick_of_height(height);
        let ctx = ApplyCtx {
            chain_id: self.params.chain_id.clone(),
            tick,
        };

        let mut working = parent_state.clone();
        working.begin_block(tick);
        let mempool = std::mem::take(&mut self.mempool);
        self.mempool_ids.clear();
        let mut included = Vec::new();
        let mut conflicted = Vec::new();
        for tx in mempool {
            match working.apply_tx(&tx, &ctx) {
                Ok(_) => included.push(tx),
                Err(err) => {
                    // Valid against the parent state but not in sequence
                    // here: a competing miner could have taken it instead.
                    let mut probe = parent_state.clone();
                    probe.begin_block(tick);
                    let parent_ok = probe.apply_tx(&tx, &ctx).is_ok();
                    self.dropped.push(DroppedTx {
                        tx_id: tx.tx_id,
                        reason: err.to_string(),
                        at_height: height,
                    });
                    if parent_ok {
                        conflicted.push(tx);
                    }
                }
            }
        }

        let miner = format!("miner-{}", self.params.chain_id);
        let block = self.build_block(parent, included, &miner);
        let block_digest = self.insert_block(block);

        let sibling = if rng.random_bool(self.params.fork_probability) {
            self.forks_spawned += 1;
            let mut sib_state = parent_state.clone();
            sib_state.begin_block(tick);
            let mut sib_txs = Vec::new();
            for tx in conflicted {
                if sib_state.apply_tx(&tx, &ctx).is_ok() {
                    sib_txs.push(tx);
                }
            }
            let sib = self.build_block(parent, sib_txs, &format!("{miner}-sibling"));
            Some(self.insert_block(sib))
        } else {
            None
        };

        self.resolve_tip();
        MineReport {
            block: block_digest,
            sibling,
        }
    }

    /// Longest chain wins; equal heights break toward the lexicographically
    /// smallest header digest. Refreshes the canonical ledger state.
    pub fn resolve_tip(&mut self) -> Digest {
        let best = *self
            .tips
            .iter()
            .max_by(|a, b| {
                let ha = self.blocks[*a].header.height;
                let hb = self.blocks[*b].header.height;
                ha.cmp(&hb).then_with(|| b.cmp(a))
            })
            .expect("at least genesis is a tip");
        if best == self.canonical_tip {
            return best;
        }
        if self.blocks[&best].header.prev_digest == self.canonical_tip {
            // Fast path: canonical chain extended by one block.
            let block = &self.blocks[&best];
            let tick = self.tick_of_height(block.header.height);
            let ctx = ApplyCtx {
                chain_id: self.params.chain_id.clone(),
                tick,
            };
            self.canonical_state.begin_block(tick);
            for tx in &block.txs {
                self.canonical_state
                    .apply_tx(tx, &ctx)
                    .expect("stored blocks replay cleanly");
                self.canonical_tx_ids.insert(tx.tx_id);
            }
        } else {
            self.canonical_state = self.replay_to(&best).expect("tip exists");
            self.canonical_tx_ids = self
                .path_to(&best)
                .iter()
                .flat_map(|d| self.blocks[d].txs.iter().map(|t| t.tx_id))
                .collect();
        }
        self.canonical_tip = best;
        best
    }

    /// Blocks from genesis to `tip`, inclusive.
    pub fn path_to(&self, tip: &Digest) -> Vec<Digest> {
        let mut path = Vec::new();
        let mut cur = *tip;
        loop {
            path.push(cur);
            let block = &self.blocks[&cur];
            if block.header.height == 0 {
                break;
            }
            cur = block.header.prev_digest;
        }
        path.reverse();
        path
    }

    pub fn canonical_path(&self) -> Vec<Digest> {
        self.path_to(&self.canonical_tip)
    }

    pub fn canonical_headers(&self) -> Vec<BlockHeader> {
        self.canonical_path()
            .iter()
            .map(|d| self.blocks[d].header.clone())
            .collect()
    }

    /// Pure replay of the branch ending at `tip`; the independent oracle for
    /// the cached canonical state.
    pub fn replay_to(&self, tip: &Digest) -> Result<LedgerState, ChainError> {
        if !self.blocks.contains_key(tip) {
            return Err(ChainError::UnknownBlock);
        }
        let mut state = LedgerState::new(self.genesis_alloc.clone());
        for d in self.path_to(tip) {
            let block = &self.blocks[&d];
            if block.header.height == 0 {
                continue;
            }
            let tick = self.tick_of_height(block.header.height);
            let ctx = ApplyCtx {
                chain_id: self.params.chain_id.clone(),
                tick,
            };
            state.begin_block(tick);
            for tx in &block.txs {
                state
                    .apply_tx(tx, &ctx)
                    .expect("stored blocks replay cleanly");
            }
        }
        Ok(state)
    }

    /// Replay the canonical chain collecting ledger events with the tick and
    /// height they landed at.
    pub fn canonical_events(&self) -> Vec<(u64, i64, LedgerEvent)> {
        let mut state = LedgerState::new(self.genesis_alloc.clone());
        let mut out = Vec::new();
        for d in self.canonical_path() {
            let block = &self.blocks[&d];
            if block.header.height == 0 {
                continue;
            }
            let height = block.header.height;
            let tick = self.tick_of_height(height);
            let ctx = ApplyCtx {
                chain_id: self.params.chain_id.clone(),
                tick,
            };
            for ev in state.begin_block(tick) {
                out.push((height, tick, ev));
            }
            for tx in &block.txs {
                let events = state
                    .apply_tx(tx, &ctx)
                    .expect("stored blocks replay cleanly");
                for ev in events {
                    out.push((height, tick, ev));
                }
            }
        }
        out
    }

    pub fn confirmations(&self, id: &Digest) -> Result<Confirmations, ChainError> {
        let block = self.blocks.get(id).ok_or(ChainError::UnknownBlock)?;
        let mut cur = self.canonical_tip;
        loop {
            if cur == *id {
                return Ok(Confirmations::OnCanon(
                    self.tip_height() - block.header.height,
                ));
            }
            let cur_block = &self.blocks[&cur];
            if cur_block.header.height <= block.header.height {
                return Ok(Confirmations::NotCanonical);
            }
            cur = cur_block.header.prev_digest;
        }
    }

    /// Locate the canonical block containing `tx`.
    pub fn find_tx_on_canon(&self, tx: &TxId) -> Option<(Digest, u64)> {
        if !self.canonical_tx_ids.contains(tx) {
            return None;
        }
        for d in self.canonical_path() {
            let block = &self.blocks[&d];
            if block.txs.iter().any(|t| t.tx_id == *tx) {
                return Some((d, block.header.height));
            }
        }
        None
    }

    /// Build a valid alternate branch of `branch_len` blocks rooted at
    /// `at_block`. Block `i` carries the `i`-th transaction list (missing
    /// entries mean empty blocks); entries invalid in branch context are
    /// dropped. The canonical tip moves only if the longest-chain rule says
    /// so afterwards.
    pub fn inject_fork(
        &mut self,
        at_block: &Digest,
        branch_len: u64,
        txs_per_block: &[Vec<ChainTx>],
    ) -> Result<Vec<Digest>, ChainError> {
        if !self.blocks.contains_key(at_block) {
            return Err(ChainError::UnknownBlock);
        }
        if branch_len == 0 {
            return Ok(Vec::new());
        }
        let mut state = self.replay_to(at_block)?;
        let mut parent = *at_block;
        let mut out = Vec::new();
        for i in 0..branch_len {
            let height = self.blocks[&parent].header.height + 1;
            let tick = self.tick_of_height(height);
            let ctx = ApplyCtx {
                chain_id: self.params.chain_id.clone(),
                tick,
            };
            state.begin_block(tick);
            let mut txs = Vec::new();
            for tx in txs_per_block.get(i as usize).into_iter().flatten() {
                match state.apply_tx(tx, &ctx) {
                    Ok(_) => txs.push(tx.clone()),
                    Err(err) => self.dropped.push(DroppedTx {
                        tx_id: tx.tx_id,
                        reason: format!("fork branch: {err}"),
                        at_height: height,
                    }),
                }
            }
            let block = self.build_block(parent, txs, "adversary");
            parent = self.insert_block(block);
            out.push(parent);
        }
        self.resolve_tip();
        Ok(out)
    }

    /// Count of blocks stored, all branches included.
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Every stored header satisfies the difficulty predicate.
    pub fn all_pow_valid(&self) -> bool {
        self.blocks
            .values()
            .all(|b| meets_difficulty(&b.header.digest(), self.params.pow_difficulty))
    }

    /// Debug export of the whole block tree, header fields hex-encoded.
    pub fn export_json(&self) -> serde_json::Value {
        let mut blocks: Vec<&Block> = self.blocks.values().collect();
        blocks.sort_by_key(|b| (b.header.height, b.header.digest()));
        json!({
            "chain_id": self.params.chain_id,
            "blocks": blocks
                .iter()
                .map(|b| {
                    json!({
                        "digest": b.header.digest().to_hex(),
                        "height": b.header.height,
                        "prev": b.header.prev_digest.to_hex(),
                        "payload": b.header.payload_digest.to_hex(),
                        "nonce": b.header.pow_nonce,
                        "miner": b.header.miner_id,
                        "txs": b.txs,
                    })
                })
                .collect::<Vec<_>>(),
        })
    }
}

/// Convenience transfer payload used by tests and scenario setup.
pub fn transfer_tx(from: PublicKey, to: PublicKey, amount: u64) -> ChainTx {
    ChainTx::new(TxPayload::AssetTransfer { from, to, amount })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use rand::SeedableRng;

    fn params(chain: &str, fork_probability: f64) -> ChainParams {
        ChainParams {
            chain_id: chain.into(),
            block_interval: 1,
            fork_probability,
            pow_difficulty: 4,
            default_confirm_depth: 6,
            tps: Tps::from_int(7),
        }
    }

    fn keys(n: u8) -> Vec<PublicKey> {
        (0..n)
            .map(|i| KeyPair::from_seed([i + 1; 32]).public())
            .collect()
    }

    fn chain_with_funds(fork_probability: f64) -> (SimChain, Vec<PublicKey>) {
        let ks = keys(2);
        let alloc = BTreeMap::from([(ks[0], 1000), (ks[1], 1000)]);
        (SimChain::new(params("btc", fork_probability), alloc), ks)
    }

    #[test]
    fn submit_to_empty_mempool() {
        let (mut chain, ks) = chain_with_funds(0.0);
        chain.submit_tx(transfer_tx(ks[0], ks[1], 5)).unwrap();
        assert_eq!(chain.mempool_len(), 1);
    }

    #[test]
    fn duplicate_submit_rejected() {
        let (mut chain, ks) = chain_with_funds(0.0);
        let tx = transfer_tx(ks[0], ks[1], 5);
        chain.submit_tx(tx.clone()).unwrap();
        assert_eq!(
            chain.submit_tx(tx.clone()),
            Err(ChainError::DuplicateTx(tx.tx_id))
        );
    }

    #[test]
    fn canonical_history_preserves_submission_order() {
        let (mut chain, ks) = chain_with_funds(0.0);
        let txs: Vec<ChainTx> = (1..=3u64).map(|i| transfer_tx(ks[0], ks[1], i)).collect();
        for tx in &txs {
            chain.submit_tx(tx.clone()).unwrap();
        }
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let block = chain.mine_block(&mut rng);
        let stored = &chain.block(&block).unwrap().txs;
        assert_eq!(stored, &txs);
        // Replay oracle agrees with the cached state.
        let replayed = chain.replay_to(&chain.tip()).unwrap();
        assert_eq!(&replayed, chain.state());
    }

    #[test]
    fn zero_fork_probability_yields_single_path() {
        let (mut chain, _) = chain_with_funds(0.0);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..5 {
            chain.mine_block(&mut rng);
        }
        assert_eq!(chain.tip_height(), 5);
        assert_eq!(chain.block_count(), 6); // genesis + 5
    }

    #[test]
    fn certain_fork_probability_spawns_sibling() {
        let ks = keys(1);
        let alloc = BTreeMap::from([(ks[0], 10)]);
        let mut chain = SimChain::new(params("btc", 1.0), alloc);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let report = chain.mine_block_report(&mut rng);
        assert!(report.sibling.is_some());
        let heights: Vec<u64> = [report.block, report.sibling.unwrap()]
            .iter()
            .map(|d| chain.block(d).unwrap().header.height)
            .collect();
        assert_eq!(heights, vec![1, 1]);
    }

    #[test]
    fn sibling_rate_tracks_probability() {
        let (mut chain, _) = chain_with_funds(0.5);
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        for _ in 0..100 {
            chain.mine_block(&mut rng);
        }
        let rate = chain.forks_spawned() as f64 / 100.0;
        assert!((rate - 0.5).abs() <= 0.15, "rate {rate} out of band");
    }

    #[test]
    fn longest_branch_wins() {
        let (mut chain, _) = chain_with_funds(0.0);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..4 {
            chain.mine_block(&mut rng);
        }
        let short_tip = chain.tip();
        // A longer injected branch from genesis takes over.
        let genesis = chain.genesis();
        chain.inject_fork(&genesis, 6, &[]).unwrap();
        assert_ne!(chain.tip(), short_tip);
        assert_eq!(chain.tip_height(), 6);
    }

    #[test]
    fn equal_height_tiebreak_is_smallest_digest_and_stable() {
        let (mut chain, _) = chain_with_funds(0.0);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..4 {
            chain.mine_block(&mut rng);
        }
        let original_tip = chain.tip();
        let genesis = chain.genesis();
        let branch = chain.inject_fork(&genesis, 4, &[]).unwrap();
        let other_tip = *branch.last().unwrap();
        let expected = original_tip.min(other_tip);
        assert_eq!(chain.resolve_tip(), expected);
        assert_eq!(chain.resolve_tip(), expected);
    }

    #[test]
    fn confirmations_of_tip_is_zero() {
        let (mut chain, _) = chain_with_funds(0.0);
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let block = chain.mine_block(&mut rng);
        assert_eq!(
            chain.confirmations(&block).unwrap(),
            Confirmations::OnCanon(0)
        );
    }

    #[test]
    fn six_deep_block_is_stable() {
        let (mut chain, _) = chain_with_funds(0.0);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let block = chain.mine_block(&mut rng);
        for _ in 0..6 {
            chain.mine_block(&mut rng);
        }
        let c = chain.confirmations(&block).unwrap();
        assert_eq!(c, Confirmations::OnCanon(6));
    }

    #[test]
    fn abandoned_branch_reports_not_canonical() {
        let (mut chain, _) = chain_with_funds(0.0);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        chain.mine_block(&mut rng);
        let fork_root = chain.tip();
        let branch = chain.inject_fork(&fork_root, 1, &[]).unwrap();
        // Extend the original branch past the fork.
        for _ in 0..3 {
            chain.mine_block(&mut rng);
        }
        let canon_tip = chain.tip();
        assert_ne!(canon_tip, branch[0]);
        assert_eq!(
            chain.confirmations(&branch[0]).unwrap(),
            Confirmations::NotCanonical
        );
    }

    #[test]
    fn unknown_block_is_an_error() {
        let (chain, _) = chain_with_funds(0.0);
        assert_eq!(
            chain.confirmations(&Digest([9u8; 32])),
            Err(ChainError::UnknownBlock)
        );
    }

    #[test]
    fn inject_fork_zero_len_is_noop() {
        let (mut chain, _) = chain_with_funds(0.0);
        let genesis = chain.genesis();
        let tip = chain.tip();
        let out = chain.inject_fork(&genesis, 0, &[]).unwrap();
        assert!(out.is_empty());
        assert_eq!(chain.tip(), tip);
    }

    #[test]
    fn tie_length_fork_resolves_by_digest_rule() {
        // Canonical height 10; fork at height 8 with branch_len 2 ties.
        let (mut chain, _) = chain_with_funds(0.0);
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let mut at_height_8 = None;
        for _ in 0..10 {
            let d = chain.mine_block(&mut rng);
            if chain.block(&d).unwrap().header.height == 8 {
                at_height_8 = Some(d);
            }
        }
        let old_tip = chain.tip();
        let branch = chain.inject_fork(&at_height_8.unwrap(), 2, &[]).unwrap();
        let new_leaf = *branch.last().unwrap();
        let expected = old_tip.min(new_leaf);
        assert_eq!(chain.tip(), expected);
        assert_eq!(chain.tip_height(), 10);
    }

    #[test]
    fn longer_fork_reorganizes_and_replays_contracts() {
        let (mut chain, ks) = chain_with_funds(0.0);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        chain.submit_tx(transfer_tx(ks[0], ks[1], 100)).unwrap();
        for _ in 0..10 {
            chain.mine_block(&mut rng);
        }
        let path = chain.canonical_path();
        let at_height_8 = path[8];
        let fork_tx = transfer_tx(ks[0], ks[1], 300);
        chain
            .inject_fork(&at_height_8, 5, &[vec![fork_tx]])
            .unwrap();
        assert_eq!(chain.tip_height(), 13);
        // Cached state equals a fresh replay of the new canonical branch.
        let replayed = chain.replay_to(&chain.tip()).unwrap();
        assert_eq!(&replayed, chain.state());
        assert_eq!(replayed.balance(&ks[1]), 1000 + 100 + 300);
    }

    #[test]
    fn tip_height_never_decreases_across_mining() {
        let (mut chain, _) = chain_with_funds(0.4);
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let mut last = chain.tip_height();
        for _ in 0..60 {
            chain.mine_block(&mut rng);
            let h = chain.tip_height();
            assert!(h >= last);
            last = h;
        }
    }

    #[test]
    fn stored_blocks_all_satisfy_pow() {
        let (mut chain, _) = chain_with_funds(0.5);
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        for _ in 0..30 {
            chain.mine_block(&mut rng);
        }
        assert!(chain.all_pow_valid());
    }

    #[test]
    fn deep_confirmation_blocks_never_reorganized_by_short_forks() {
        let (mut chain, _) = chain_with_funds(0.0);
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        for _ in 0..12 {
            chain.mine_block(&mut rng);
        }
        let path = chain.canonical_path();
        let stable = path[4]; // confirmations = 8
        let Confirmations::OnCanon(conf) = chain.confirmations(&stable).unwrap() else {
            panic!("stable block must be canonical");
        };
        // Inject from every strict ancestor with branch_len <= conf.
        for root_height in 0..4 {
            let root = chain.canonical_path()[root_height];
            chain.inject_fork(&root, conf, &[]).unwrap();
            assert_eq!(
                chain.confirmations(&stable).unwrap(),
                Confirmations::OnCanon(conf),
                "block with {conf} confirmations left canon"
            );
        }
    }

    #[test]
    fn determinism_bitwise_identical_trees() {
        let run = |seed: u64| {
            let (mut chain, ks) = chain_with_funds(0.5);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            for i in 1..=20u64 {
                chain.submit_tx(transfer_tx(ks[0], ks[1], i)).unwrap();
                chain.mine_block(&mut rng);
            }
            serde_json::to_string(&chain.export_json()).unwrap()
        };
        assert_eq!(run(99), run(99));
        assert_ne!(run(99), run(100));
    }

    #[test]
    fn warmup_blocks_map_to_negative_ticks() {
        let (mut chain, _) = chain_with_funds(0.0);
        chain.warm_up(8);
        assert_eq!(chain.tip_height(), 8);
        assert_eq!(chain.tick_of_height(8), -1);
        assert_eq!(chain.tick_of_height(9), 0);
    }
}
