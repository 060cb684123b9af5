//! Smart-contract object model: the three-state swap contract template and
//! its concrete lock variants (trusted-witness signature, witness-network
//! state reference, hashlock), the witness-network coordinator contract, the
//! hashlock/timelock baseline contract, and the ledger state that replays
//! them from chain history.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain_sim::{contract_id_for, ChainTx, ContractId, TxPayload};
use crate::codec::{Canonical, Encoder};
use crate::crypto::{digest_bytes, verify, Digest, PublicKey, Signature};
use crate::evidence::{
    validate_evidence, AnchorInfo, EffectClaim, Evidence, EvidenceBundle, SchemeDescriptor,
};
use crate::swap_graph::{ChainId, Multisignature, ParticipantId, SwapGraph};

/// Lifecycle of a swap contract. `Published` is the only state transitions
/// leave from; the other two are terminal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContractState {
    #[serde(rename = "P")]
    Published,
    #[serde(rename = "RD")]
    Redeemed,
    #[serde(rename = "RF")]
    Refunded,
}

impl ContractState {
    pub fn terminal(self) -> bool {
        self != ContractState::Published
    }
}

/// Lifecycle of the witness coordinator contract.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WitnessState {
    #[serde(rename = "P")]
    Published,
    #[serde(rename = "RD_auth")]
    RedeemAuthorized,
    #[serde(rename = "RF_auth")]
    RefundAuthorized,
}

impl Canonical for WitnessState {
    fn encode(&self, enc: &mut Encoder) {
        enc.tag(match self {
            WitnessState::Published => 0x00,
            WitnessState::RedeemAuthorized => 0x01,
            WitnessState::RefundAuthorized => 0x02,
        });
    }
}

/// Implicit parameters of a contract deployment: who sent it and how much of
/// the chain's asset is locked into the contract.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeployMessage {
    pub sender: PublicKey,
    pub value: u64,
}

impl Canonical for DeployMessage {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.sender).u64(self.value);
    }
}

/// Fixed-size secret used by hashlocks.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SecretBytes(pub [u8; 32]);

impl SecretBytes {
    pub fn lock(&self) -> Digest {
        digest_bytes(&self.0)
    }
}

impl std::fmt::Debug for SecretBytes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "secret:{}", &hex::encode(self.0)[..8])
    }
}

impl Serialize for SecretBytes {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for SecretBytes {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("bad secret length"))?;
        Ok(SecretBytes(arr))
    }
}

impl Canonical for SecretBytes {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }
}

/// A redemption or refund lock. Redemption and refund each carry one
/// instance; revealing the witness for one must never reveal the other.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitmentScheme {
    /// Unlocked by the named witness's signature over the registered graph
    /// signature tagged with the intended action.
    TrustedWitness {
        graph_sig: Multisignature,
        witness_pk: PublicKey,
    },
    /// Unlocked by header-chain evidence that the named coordinator contract
    /// reached the matching authorization state at depth >= `min_depth` on
    /// the witness chain. `anchor` is the stable witness-chain block recorded
    /// when this scheme was written into a contract.
    WitnessRef {
        witness_chain: ChainId,
        witness_contract: ContractId,
        min_depth: u64,
        anchor: AnchorInfo,
    },
    /// Unlocked by the preimage of `lock` (redemption only; baseline refunds
    /// are driven by the timelock, not by a witness).
    HashLock { lock: Digest },
}

impl CommitmentScheme {
    pub fn descriptor(&self) -> SchemeDescriptor {
        match self {
            CommitmentScheme::TrustedWitness {
                graph_sig,
                witness_pk,
            } => SchemeDescriptor::TrustedWitness {
                graph_digest: graph_sig.graph_digest,
                witness_pk: *witness_pk,
            },
            CommitmentScheme::WitnessRef {
                witness_chain,
                witness_contract,
                min_depth,
                ..
            } => SchemeDescriptor::WitnessRef {
                witness_chain: witness_chain.clone(),
                witness_contract: *witness_contract,
                min_depth: *min_depth,
            },
            CommitmentScheme::HashLock { lock } => SchemeDescriptor::HashLock { lock: *lock },
        }
    }
}

impl Canonical for CommitmentScheme {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            CommitmentScheme::TrustedWitness {
                graph_sig,
                witness_pk,
            } => {
                enc.tag(0x01).value(graph_sig).value(witness_pk);
            }
            CommitmentScheme::WitnessRef {
                witness_chain,
                witness_contract,
                min_depth,
                anchor,
            } => {
                enc.tag(0x02)
                    .value(witness_chain)
                    .value(witness_contract)
                    .u64(*min_depth)
                    .value(anchor);
            }
            CommitmentScheme::HashLock { lock } => {
                enc.tag(0x03).value(lock);
            }
        }
    }
}

/// The secret material presented to a redeem or refund call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeWitness {
    Signature(Signature),
    Preimage(SecretBytes),
    StateProof(Evidence),
}

impl Canonical for SchemeWitness {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            SchemeWitness::Signature(sig) => {
                enc.tag(0x01).value(sig);
            }
            SchemeWitness::Preimage(s) => {
                enc.tag(0x02).value(s);
            }
            SchemeWitness::StateProof(e) => {
                enc.tag(0x03).value(e);
            }
        }
    }
}

/// The two mutually exclusive decisions a witness can sign or record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Redeem,
    Refund,
}

/// Bytes a trusted witness signs for a decision: the canonical graph
/// signature followed by a decision tag (0x01 redeem, 0x02 refund).
pub fn decision_message(ms: &Multisignature, decision: Decision) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.value(ms).tag(match decision {
        Decision::Redeem => 0x01,
        Decision::Refund => 0x02,
    });
    enc.finish()
}

fn scheme_accepts(scheme: &CommitmentScheme, decision: Decision, witness: &SchemeWitness) -> bool {
    match (scheme, witness) {
        (
            CommitmentScheme::TrustedWitness {
                graph_sig,
                witness_pk,
            },
            SchemeWitness::Signature(sig),
        ) => verify(witness_pk, &decision_message(graph_sig, decision), sig),
        (
            CommitmentScheme::WitnessRef {
                witness_chain,
                witness_contract,
                min_depth,
                anchor,
            },
            SchemeWitness::StateProof(evidence),
        ) => {
            let expected_state = match decision {
                Decision::Redeem => WitnessState::RedeemAuthorized,
                Decision::Refund => WitnessState::RefundAuthorized,
            };
            evidence.chain_id == *witness_chain
                && validate_evidence(
                    &anchor.anchor,
                    anchor.pow_difficulty,
                    evidence,
                    *min_depth,
                    &EffectClaim::WitnessUpdate {
                        contract: *witness_contract,
                        state: expected_state,
                    },
                )
        }
        (CommitmentScheme::HashLock { lock }, SchemeWitness::Preimage(secret)) => {
            decision == Decision::Redeem && secret.lock() == *lock
        }
        _ => false,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TxError {
    #[error("insufficient funds")]
    InsufficientFunds,
    #[error("unknown contract")]
    UnknownContract,
    #[error("contract not in a state that permits this call")]
    WrongState,
    #[error("witness does not satisfy the commitment scheme")]
    InvalidSecret,
    #[error("evidence rejected")]
    BadEvidence,
    #[error("call does not apply to this contract kind")]
    BadCall,
    #[error("invalid deployment: {0}")]
    InvalidDeploy(String),
    #[error("transfer from and to the same key")]
    SelfTransfer,
}

/// The swap contract template: sender, recipient, locked asset, state, and
/// the redemption/refund schemes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicSwapContract {
    pub sender: PublicKey,
    pub recipient: PublicKey,
    pub amount: u64,
    pub state: ContractState,
    pub rd: CommitmentScheme,
    pub rf: CommitmentScheme,
}

impl AtomicSwapContract {
    pub fn is_redeemable(&self, witness: &SchemeWitness) -> bool {
        scheme_accepts(&self.rd, Decision::Redeem, witness)
    }

    pub fn is_refundable(&self, witness: &SchemeWitness) -> bool {
        scheme_accepts(&self.rf, Decision::Refund, witness)
    }

    /// State-machine step alone; callers check the scheme first.
    pub fn transition_redeem(&mut self) -> Result<(), TxError> {
        if self.state != ContractState::Published {
            return Err(TxError::WrongState);
        }
        self.state = ContractState::Redeemed;
        Ok(())
    }

    pub fn transition_refund(&mut self) -> Result<(), TxError> {
        if self.state != ContractState::Published {
            return Err(TxError::WrongState);
        }
        self.state = ContractState::Refunded;
        Ok(())
    }

    /// Full redeem: requires `Published` and a witness the redemption scheme
    /// accepts. Returns the key to credit.
    pub fn redeem(&mut self, witness: &SchemeWitness) -> Result<PublicKey, TxError> {
        if self.state != ContractState::Published {
            return Err(TxError::WrongState);
        }
        if !self.is_redeemable(witness) {
            return Err(TxError::InvalidSecret);
        }
        self.state = ContractState::Redeemed;
        Ok(self.recipient)
    }

    pub fn refund(&mut self, witness: &SchemeWitness) -> Result<PublicKey, TxError> {
        if self.state != ContractState::Published {
            return Err(TxError::WrongState);
        }
        if !self.is_refundable(witness) {
            return Err(TxError::InvalidSecret);
        }
        self.state = ContractState::Refunded;
        Ok(self.sender)
    }
}

/// Baseline contract: a hashlocked swap whose refund fires by itself once
/// the expiry tick is reached.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeLockContract {
    pub base: AtomicSwapContract,
    /// Absolute tick; at `tick >= expiry` only the refund is executable.
    pub expiry: u64,
}

impl TimeLockContract {
    /// Redeem with the hash secret, allowed strictly before expiry.
    pub fn redeem(&mut self, witness: &SchemeWitness, tick: i64) -> Result<PublicKey, TxError> {
        if tick >= 0 && tick as u64 >= self.expiry {
            return Err(TxError::WrongState);
        }
        self.base.redeem(witness)
    }

    /// Expiry-driven transition. No-op before expiry or after a terminal
    /// state was reached.
    pub fn timelock_tick(&mut self, now: i64) -> Option<PublicKey> {
        if now < 0 || (now as u64) < self.expiry {
            return None;
        }
        if self.base.state != ContractState::Published {
            return None;
        }
        self.base.state = ContractState::Refunded;
        Some(self.base.sender)
    }
}

/// The coordinator contract deployed on the witness chain. Records the
/// participant keys, the multisigned graph, and a stable anchor of every
/// asset chain so its miners can validate deployment evidence later.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessContract {
    pub chain_id: ChainId,
    pub participants: BTreeMap<ParticipantId, PublicKey>,
    pub graph_sig: Multisignature,
    pub graph: SwapGraph,
    pub state: WitnessState,
    pub anchors: BTreeMap<ChainId, AnchorInfo>,
    pub confirm_depth: u64,
}

impl WitnessContract {
    pub fn transition_authorize_redeem(&mut self) -> Result<(), TxError> {
        if self.state != WitnessState::Published {
            return Err(TxError::WrongState);
        }
        self.state = WitnessState::RedeemAuthorized;
        Ok(())
    }

    pub fn transition_authorize_refund(&mut self) -> Result<(), TxError> {
        if self.state != WitnessState::Published {
            return Err(TxError::WrongState);
        }
        self.state = WitnessState::RefundAuthorized;
        Ok(())
    }

    /// Authorize redemption: requires `Published` and a bundle that proves
    /// every edge's contract deployed and locked to this coordinator.
    pub fn authorize_redeem(
        &mut self,
        self_id: &ContractId,
        bundle: &EvidenceBundle,
    ) -> Result<(), TxError> {
        if self.state != WitnessState::Published {
            return Err(TxError::WrongState);
        }
        if !crate::evidence::verify_contracts(self_id, self, bundle) {
            return Err(TxError::BadEvidence);
        }
        self.state = WitnessState::RedeemAuthorized;
        Ok(())
    }

    /// Authorize refund: requires only `Published`.
    pub fn authorize_refund(&mut self) -> Result<(), TxError> {
        self.transition_authorize_refund()
    }
}

/// Constructor arguments carried by a deploy transaction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeployCode {
    Swap {
        recipient: PublicKey,
        rd: CommitmentScheme,
        rf: CommitmentScheme,
    },
    HashTimelock {
        recipient: PublicKey,
        lock: Digest,
        expiry: u64,
    },
    Witness {
        participants: BTreeMap<ParticipantId, PublicKey>,
        graph_sig: Multisignature,
        graph: SwapGraph,
        anchors: BTreeMap<ChainId, AnchorInfo>,
        confirm_depth: u64,
    },
}

impl Canonical for DeployCode {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            DeployCode::Swap { recipient, rd, rf } => {
                enc.tag(0x01).value(recipient).value(rd).value(rf);
            }
            DeployCode::HashTimelock {
                recipient,
                lock,
                expiry,
            } => {
                enc.tag(0x02).value(recipient).value(lock).u64(*expiry);
            }
            DeployCode::Witness {
                participants,
                graph_sig,
                graph,
                anchors,
                confirm_depth,
            } => {
                enc.tag(0x03);
                enc.u64(participants.len() as u64);
                for (id, pk) in participants {
                    enc.value(id).value(pk);
                }
                enc.value(graph_sig).value(graph);
                enc.u64(anchors.len() as u64);
                for (chain, anchor) in anchors {
                    enc.value(chain).value(anchor);
                }
                enc.u64(*confirm_depth);
            }
        }
    }
}

/// Function-call arguments carried by a call transaction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallPayload {
    Redeem { witness: SchemeWitness },
    Refund { witness: SchemeWitness },
    AuthorizeRedeem { bundle: EvidenceBundle },
    AuthorizeRefund,
}

impl Canonical for CallPayload {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            CallPayload::Redeem { witness } => {
                enc.tag(0x01).value(witness);
            }
            CallPayload::Refund { witness } => {
                enc.tag(0x02).value(witness);
            }
            CallPayload::AuthorizeRedeem { bundle } => {
                enc.tag(0x03).value(bundle);
            }
            CallPayload::AuthorizeRefund => {
                enc.tag(0x04);
            }
        }
    }
}

/// A contract object stored in a chain's ledger.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainContract {
    Swap(AtomicSwapContract),
    TimeLock(TimeLockContract),
    Witness(WitnessContract),
}

impl ChainContract {
    pub fn swap_state(&self) -> Option<ContractState> {
        match self {
            ChainContract::Swap(c) => Some(c.state),
            ChainContract::TimeLock(c) => Some(c.base.state),
            ChainContract::Witness(_) => None,
        }
    }

    pub fn locked_amount(&self) -> u64 {
        match self {
            ChainContract::Swap(c) if c.state == ContractState::Published => c.amount,
            ChainContract::TimeLock(c) if c.base.state == ContractState::Published => {
                c.base.amount
            }
            _ => 0,
        }
    }
}

/// What happened while applying a transaction; the raw material for run
/// traces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum LedgerEvent {
    Transferred {
        from: PublicKey,
        to: PublicKey,
        amount: u64,
    },
    Deployed {
        contract: ContractId,
        kind: String,
        sender: PublicKey,
        value: u64,
    },
    Redeemed {
        contract: ContractId,
        recipient: PublicKey,
        amount: u64,
    },
    Refunded {
        contract: ContractId,
        sender: PublicKey,
        amount: u64,
        by_expiry: bool,
    },
    RedeemAuthorized {
        contract: ContractId,
    },
    RefundAuthorized {
        contract: ContractId,
    },
    TimelockExpired {
        contract: ContractId,
        expiry: u64,
    },
}

/// Context a transaction is applied in.
#[derive(Clone, Debug)]
pub struct ApplyCtx {
    pub chain_id: ChainId,
    /// Tick the enclosing block lands at; negative during chain setup.
    pub tick: i64,
}

/// Balances plus contract objects for one chain, always the replay of a
/// specific branch. Cloneable so miners can validate candidate blocks
/// against a scratch copy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerState {
    balances: BTreeMap<PublicKey, u64>,
    contracts: BTreeMap<ContractId, ChainContract>,
    initial_supply: u64,
}

impl LedgerState {
    pub fn new(genesis_alloc: BTreeMap<PublicKey, u64>) -> Self {
        let initial_supply = genesis_alloc.values().sum();
        Self {
            balances: genesis_alloc,
            contracts: BTreeMap::new(),
            initial_supply,
        }
    }

    pub fn balance(&self, pk: &PublicKey) -> u64 {
        self.balances.get(pk).copied().unwrap_or(0)
    }

    pub fn balances(&self) -> &BTreeMap<PublicKey, u64> {
        &self.balances
    }

    pub fn contract(&self, id: &ContractId) -> Option<&ChainContract> {
        self.contracts.get(id)
    }

    pub fn contracts(&self) -> &BTreeMap<ContractId, ChainContract> {
        &self.contracts
    }

    /// Sum of balances plus assets locked in published contracts; constant
    /// across every transition.
    pub fn total_supply(&self) -> u64 {
        self.balances.values().sum::<u64>()
            + self
                .contracts
                .values()
                .map(ChainContract::locked_amount)
                .sum::<u64>()
    }

    pub fn initial_supply(&self) -> u64 {
        self.initial_supply
    }

    fn credit(&mut self, pk: PublicKey, amount: u64) {
        *self.balances.entry(pk).or_insert(0) += amount;
    }

    fn debit(&mut self, pk: &PublicKey, amount: u64) -> Result<(), TxError> {
        let bal = self.balances.entry(*pk).or_insert(0);
        if *bal < amount {
            return Err(TxError::InsufficientFunds);
        }
        *bal -= amount;
        Ok(())
    }

    /// Fire expired timelocks. Runs at the start of every block application
    /// so refunds-by-expiry precede the block's own transactions.
    pub fn begin_block(&mut self, tick: i64) -> Vec<LedgerEvent> {
        let mut events = Vec::new();
        let ids: Vec<ContractId> = self.contracts.keys().copied().collect();
        for id in ids {
            let Some(ChainContract::TimeLock(tl)) = self.contracts.get_mut(&id) else {
                continue;
            };
            let expiry = tl.expiry;
            if let Some(sender) = tl.timelock_tick(tick) {
                let amount = match &self.contracts[&id] {
                    ChainContract::TimeLock(tl) => tl.base.amount,
                    _ => unreachable!(),
                };
                self.credit(sender, amount);
                events.push(LedgerEvent::TimelockExpired {
                    contract: id,
                    expiry,
                });
                events.push(LedgerEvent::Refunded {
                    contract: id,
                    sender,
                    amount,
                    by_expiry: true,
                });
            }
        }
        events
    }

    pub fn apply_tx(&mut self, tx: &ChainTx, ctx: &ApplyCtx) -> Result<Vec<LedgerEvent>, TxError> {
        match &tx.payload {
            TxPayload::AssetTransfer { from, to, amount } => {
                if from == to {
                    return Err(TxError::SelfTransfer);
                }
                self.debit(from, *amount)?;
                self.credit(*to, *amount);
                Ok(vec![LedgerEvent::Transferred {
                    from: *from,
                    to: *to,
                    amount: *amount,
                }])
            }
            TxPayload::ContractDeploy { deploy, code } => {
                let id = contract_id_for(tx.tx_id);
                if self.contracts.contains_key(&id) {
                    return Err(TxError::InvalidDeploy("contract id collision".into()));
                }
                let (contract, kind) = self.instantiate(deploy, code, ctx)?;
                self.debit(&deploy.sender, deploy.value)?;
                self.contracts.insert(id, contract);
                Ok(vec![LedgerEvent::Deployed {
                    contract: id,
                    kind: kind.to_string(),
                    sender: deploy.sender,
                    value: deploy.value,
                }])
            }
            TxPayload::ContractCall { contract, call } => self.apply_call(contract, call, ctx),
        }
    }

    fn instantiate(
        &self,
        deploy: &DeployMessage,
        code: &DeployCode,
        ctx: &ApplyCtx,
    ) -> Result<(ChainContract, &'static str), TxError> {
        match code {
            DeployCode::Swap { recipient, rd, rf } => Ok((
                ChainContract::Swap(AtomicSwapContract {
                    sender: deploy.sender,
                    recipient: *recipient,
                    amount: deploy.value,
                    state: ContractState::Published,
                    rd: rd.clone(),
                    rf: rf.clone(),
                }),
                "swap",
            )),
            DeployCode::HashTimelock {
                recipient,
                lock,
                expiry,
            } => Ok((
                ChainContract::TimeLock(TimeLockContract {
                    base: AtomicSwapContract {
                        sender: deploy.sender,
                        recipient: *recipient,
                        amount: deploy.value,
                        state: ContractState::Published,
                        rd: CommitmentScheme::HashLock { lock: *lock },
                        rf: CommitmentScheme::HashLock { lock: *lock },
                    },
                    expiry: *expiry,
                }),
                "hash_timelock",
            )),
            DeployCode::Witness {
                participants,
                graph_sig,
                graph,
                anchors,
                confirm_depth,
            } => {
                if deploy.value != 0 {
                    return Err(TxError::InvalidDeploy(
                        "coordinator contracts lock no assets".into(),
                    ));
                }
                for v in graph.vertices() {
                    if !participants.contains_key(v) {
                        return Err(TxError::InvalidDeploy(format!(
                            "participant key missing for {v}"
                        )));
                    }
                }
                let pks = participants.values().copied().collect();
                if !crate::swap_graph::verify_multisig(graph_sig, graph, &pks) {
                    return Err(TxError::InvalidDeploy(
                        "graph multisignature does not verify".into(),
                    ));
                }
                Ok((
                    ChainContract::Witness(WitnessContract {
                        chain_id: ctx.chain_id.clone(),
                        participants: participants.clone(),
                        graph_sig: graph_sig.clone(),
                        graph: graph.clone(),
                        state: WitnessState::Published,
                        anchors: anchors.clone(),
                        confirm_depth: *confirm_depth,
                    }),
                    "witness",
                ))
            }
        }
    }

    fn apply_call(
        &mut self,
        id: &ContractId,
        call: &CallPayload,
        ctx: &ApplyCtx,
    ) -> Result<Vec<LedgerEvent>, TxError> {
        let contract = self.contracts.get_mut(id).ok_or(TxError::UnknownContract)?;
        match (contract, call) {
            (ChainContract::Swap(c), CallPayload::Redeem { witness }) => {
                let recipient = c.redeem(witness)?;
                let amount = c.amount;
                self.credit(recipient, amount);
                Ok(vec![LedgerEvent::Redeemed {
                    contract: *id,
                    recipient,
                    amount,
                }])
            }
            (ChainContract::Swap(c), CallPayload::Refund { witness }) => {
                let sender = c.refund(witness)?;
                let amount = c.amount;
                self.credit(sender, amount);
                Ok(vec![LedgerEvent::Refunded {
                    contract: *id,
                    sender,
                    amount,
                    by_expiry: false,
                }])
            }
            (ChainContract::TimeLock(c), CallPayload::Redeem { witness }) => {
                let recipient = c.redeem(witness, ctx.tick)?;
                let amount = c.base.amount;
                self.credit(recipient, amount);
                Ok(vec![LedgerEvent::Redeemed {
                    contract: *id,
                    recipient,
                    amount,
                }])
            }
            (ChainContract::TimeLock(c), CallPayload::Refund { witness }) => {
                // Manual refunds never apply; walked through the shared path
                // so the caller sees the scheme rejection.
                let sender = c.base.refund(witness)?;
                let amount = c.base.amount;
                self.credit(sender, amount);
                Ok(vec![LedgerEvent::Refunded {
                    contract: *id,
                    sender,
                    amount,
                    by_expiry: false,
                }])
            }
            (ChainContract::Witness(w), CallPayload::AuthorizeRedeem { bundle }) => {
                w.authorize_redeem(id, bundle)?;
                Ok(vec![LedgerEvent::RedeemAuthorized { contract: *id }])
            }
            (ChainContract::Witness(w), CallPayload::AuthorizeRefund) => {
                w.authorize_refund()?;
                Ok(vec![LedgerEvent::RefundAuthorized { contract: *id }])
            }
            _ => Err(TxError::BadCall),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use crate::swap_graph::{multisign, Participant, SwapEdge, SwapGraph};

    fn kp(seed: u8) -> KeyPair {
        KeyPair::from_seed([seed; 32])
    }

    fn graph_and_ms() -> (SwapGraph, Multisignature, Vec<Participant>) {
        let alice = Participant::new("alice", kp(1));
        let bob = Participant::new("bob", kp(2));
        let g = SwapGraph::new(
            ["alice".into(), "bob".into()],
            [
                SwapEdge {
                    source: "alice".into(),
                    recipient: "bob".into(),
                    amount: 5,
                    unit: "btc".into(),
                    chain_id: "btc".into(),
                },
                SwapEdge {
                    source: "bob".into(),
                    recipient: "alice".into(),
                    amount: 100,
                    unit: "eth".into(),
                    chain_id: "eth".into(),
                },
            ],
            1,
        )
        .unwrap();
        let ms = multisign(&g, &[&alice, &bob]).unwrap();
        (g, ms, vec![alice, bob])
    }

    fn trusted_contract() -> (AtomicSwapContract, KeyPair, Multisignature) {
        let (_, ms, ps) = graph_and_ms();
        let trent = kp(9);
        let scheme = CommitmentScheme::TrustedWitness {
            graph_sig: ms.clone(),
            witness_pk: trent.public(),
        };
        let c = AtomicSwapContract {
            sender: ps[0].public(),
            recipient: ps[1].public(),
            amount: 5,
            state: ContractState::Published,
            rd: scheme.clone(),
            rf: scheme,
        };
        (c, trent, ms)
    }

    #[test]
    fn trusted_witness_signature_redeems_but_does_not_refund() {
        let (c, trent, ms) = trusted_contract();
        let rd_sig = SchemeWitness::Signature(trent.sign(&decision_message(&ms, Decision::Redeem)));
        assert!(c.is_redeemable(&rd_sig));
        assert!(!c.is_refundable(&rd_sig));
        let rf_sig = SchemeWitness::Signature(trent.sign(&decision_message(&ms, Decision::Refund)));
        assert!(c.is_refundable(&rf_sig));
        assert!(!c.is_redeemable(&rf_sig));
    }

    #[test]
    fn redeem_in_terminal_state_is_wrong_state() {
        let (mut c, trent, ms) = trusted_contract();
        let rf_sig = SchemeWitness::Signature(trent.sign(&decision_message(&ms, Decision::Refund)));
        c.refund(&rf_sig).unwrap();
        let rd_sig = SchemeWitness::Signature(trent.sign(&decision_message(&ms, Decision::Redeem)));
        assert_eq!(c.redeem(&rd_sig), Err(TxError::WrongState));
        assert_eq!(c.refund(&rf_sig), Err(TxError::WrongState));
    }

    #[test]
    fn refund_witness_passed_to_redeem_is_invalid_secret() {
        let (mut c, trent, ms) = trusted_contract();
        let rf_sig = SchemeWitness::Signature(trent.sign(&decision_message(&ms, Decision::Refund)));
        assert_eq!(c.redeem(&rf_sig), Err(TxError::InvalidSecret));
        assert_eq!(c.state, ContractState::Published);
    }

    #[test]
    fn hashlock_accepts_only_the_preimage() {
        let secret = SecretBytes([3u8; 32]);
        let wrong = SecretBytes([4u8; 32]);
        let scheme = CommitmentScheme::HashLock {
            lock: secret.lock(),
        };
        let c = AtomicSwapContract {
            sender: kp(1).public(),
            recipient: kp(2).public(),
            amount: 5,
            state: ContractState::Published,
            rd: scheme.clone(),
            rf: scheme,
        };
        assert!(c.is_redeemable(&SchemeWitness::Preimage(secret)));
        assert!(!c.is_redeemable(&SchemeWitness::Preimage(wrong)));
        // Baseline refundability is the timelock's job, never a witness.
        assert!(!c.is_refundable(&SchemeWitness::Preimage(secret)));
    }

    #[test]
    fn witness_contract_transitions_are_mutually_exclusive() {
        let (g, ms, ps) = graph_and_ms();
        let mut w = WitnessContract {
            chain_id: "wtn".into(),
            participants: ps.iter().map(|p| (p.id.clone(), p.public())).collect(),
            graph_sig: ms,
            graph: g,
            state: WitnessState::Published,
            anchors: BTreeMap::new(),
            confirm_depth: 6,
        };
        w.transition_authorize_refund().unwrap();
        assert_eq!(w.state, WitnessState::RefundAuthorized);
        assert_eq!(w.transition_authorize_redeem(), Err(TxError::WrongState));
        assert_eq!(w.transition_authorize_refund(), Err(TxError::WrongState));
    }

    #[test]
    fn timelock_boundary_semantics() {
        let secret = SecretBytes([5u8; 32]);
        let mut tl = TimeLockContract {
            base: AtomicSwapContract {
                sender: kp(1).public(),
                recipient: kp(2).public(),
                amount: 7,
                state: ContractState::Published,
                rd: CommitmentScheme::HashLock {
                    lock: secret.lock(),
                },
                rf: CommitmentScheme::HashLock {
                    lock: secret.lock(),
                },
            },
            expiry: 10,
        };
        // One tick before expiry: nothing fires.
        assert_eq!(tl.timelock_tick(9), None);
        assert_eq!(tl.base.state, ContractState::Published);
        // At expiry: refund to the sender.
        assert_eq!(tl.timelock_tick(10), Some(kp(1).public()));
        assert_eq!(tl.base.state, ContractState::Refunded);
    }

    #[test]
    fn timelock_noop_after_redeem() {
        let secret = SecretBytes([5u8; 32]);
        let mut tl = TimeLockContract {
            base: AtomicSwapContract {
                sender: kp(1).public(),
                recipient: kp(2).public(),
                amount: 7,
                state: ContractState::Published,
                rd: CommitmentScheme::HashLock {
                    lock: secret.lock(),
                },
                rf: CommitmentScheme::HashLock {
                    lock: secret.lock(),
                },
            },
            expiry: 10,
        };
        tl.redeem(&SchemeWitness::Preimage(secret), 3).unwrap();
        assert_eq!(tl.timelock_tick(10), None);
        assert_eq!(tl.base.state, ContractState::Redeemed);
    }

    #[test]
    fn timelock_redeem_blocked_at_expiry() {
        let secret = SecretBytes([5u8; 32]);
        let mut tl = TimeLockContract {
            base: AtomicSwapContract {
                sender: kp(1).public(),
                recipient: kp(2).public(),
                amount: 7,
                state: ContractState::Published,
                rd: CommitmentScheme::HashLock {
                    lock: secret.lock(),
                },
                rf: CommitmentScheme::HashLock {
                    lock: secret.lock(),
                },
            },
            expiry: 10,
        };
        assert_eq!(
            tl.redeem(&SchemeWitness::Preimage(secret), 10),
            Err(TxError::WrongState)
        );
    }

    #[test]
    fn ledger_deploy_debits_sender_and_conserves_supply() {
        let alice = kp(1).public();
        let bob = kp(2).public();
        let mut ledger = LedgerState::new(BTreeMap::from([(alice, 100), (bob, 50)]));
        let ctx = ApplyCtx {
            chain_id: "btc".into(),
            tick: 0,
        };
        let secret = SecretBytes([6u8; 32]);
        let scheme = CommitmentScheme::HashLock {
            lock: secret.lock(),
        };
        let tx = ChainTx::new(TxPayload::ContractDeploy {
            deploy: DeployMessage {
                sender: alice,
                value: 40,
            },
            code: DeployCode::Swap {
                recipient: bob,
                rd: scheme.clone(),
                rf: scheme,
            },
        });
        ledger.apply_tx(&tx, &ctx).unwrap();
        assert_eq!(ledger.balance(&alice), 60);
        assert_eq!(ledger.total_supply(), 150);

        // Redeem pays the recipient and still conserves.
        let id = contract_id_for(tx.tx_id);
        let call = ChainTx::new(TxPayload::ContractCall {
            contract: id,
            call: CallPayload::Redeem {
                witness: SchemeWitness::Preimage(secret),
            },
        });
        ledger.apply_tx(&call, &ctx).unwrap();
        assert_eq!(ledger.balance(&bob), 90);
        assert_eq!(ledger.total_supply(), 150);
    }

    #[test]
    fn ledger_zero_value_deploy_is_legal() {
        let alice = kp(1).public();
        let mut ledger = LedgerState::new(BTreeMap::from([(alice, 10)]));
        let ctx = ApplyCtx {
            chain_id: "btc".into(),
            tick: 0,
        };
        let scheme = CommitmentScheme::HashLock {
            lock: SecretBytes([1u8; 32]).lock(),
        };
        let tx = ChainTx::new(TxPayload::ContractDeploy {
            deploy: DeployMessage {
                sender: alice,
                value: 0,
            },
            code: DeployCode::Swap {
                recipient: kp(2).public(),
                rd: scheme.clone(),
                rf: scheme,
            },
        });
        ledger.apply_tx(&tx, &ctx).unwrap();
        assert_eq!(ledger.balance(&alice), 10);
    }

    #[test]
    fn ledger_insufficient_funds_rejected_without_state_change() {
        let alice = kp(1).public();
        let mut ledger = LedgerState::new(BTreeMap::from([(alice, 39)]));
        let before = ledger.clone();
        let ctx = ApplyCtx {
            chain_id: "btc".into(),
            tick: 0,
        };
        let scheme = CommitmentScheme::HashLock {
            lock: SecretBytes([1u8; 32]).lock(),
        };
        let tx = ChainTx::new(TxPayload::ContractDeploy {
            deploy: DeployMessage {
                sender: alice,
                value: 40,
            },
            code: DeployCode::Swap {
                recipient: kp(2).public(),
                rd: scheme.clone(),
                rf: scheme,
            },
        });
        assert_eq!(ledger.apply_tx(&tx, &ctx), Err(TxError::InsufficientFunds));
        assert_eq!(ledger, before);
    }

    #[test]
    fn double_refund_credits_once() {
        let (mut c, trent, ms) = trusted_contract();
        let rf_sig = SchemeWitness::Signature(trent.sign(&decision_message(&ms, Decision::Refund)));
        assert!(c.refund(&rf_sig).is_ok());
        assert_eq!(c.refund(&rf_sig), Err(TxError::WrongState));
    }
}
